/**
 * @file covol_cli.cpp
 * @brief Batch front-end: simulate datasets, fit models, evaluate metrics,
 *        and benchmark objective gradients.
 *
 * Exit codes: 0 success, 2 config error, 3 numerical failure, 4 IO failure.
 */
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "covol/fit.hpp"
#include "covol/io.hpp"
#include "covol/metrics.hpp"

namespace fs = std::filesystem;
using covol::Json;
using covol::Matrix;
using covol::Vector;

namespace {

struct Cli {
    std::string config_path;
    std::string out_dir;
    std::uint64_t seed = 1;
    unsigned threads = 1;
    std::string raw_config;
    Json config;
    std::uint64_t config_hash = 0;

    Json provenance() const { return Json{{"config_hash", config_hash}, {"seed", seed}}; }
};

void load_config(Cli& cli) {
    std::ifstream is(cli.config_path);
    if (!is) throw covol::BadConfig("cannot read config: " + cli.config_path);
    std::stringstream buf;
    buf << is.rdbuf();
    cli.raw_config = buf.str();
    try {
        cli.config = Json::parse(cli.raw_config);
    } catch (const Json::parse_error& e) {
        throw covol::BadConfig(std::string("config parse error: ") + e.what());
    }
    cli.config_hash = covol::fnv1a(cli.raw_config);
}

void write_resolved_config(const Cli& cli, const std::string& command) {
    Json j = cli.config;
    j["_resolved"] = {{"command", command},
                      {"seed", cli.seed},
                      {"threads", cli.threads},
                      {"config_hash", cli.config_hash}};
    covol::write_json(fs::path(cli.out_dir) / "resolved_config.json", j);
}

std::pair<covol::PathConfig, covol::SamplingConfig> sim_configs_from(const Json& j) {
    covol::PathConfig pcfg;
    covol::SamplingConfig scfg;
    const std::string preset = j.value("preset", std::string{});
    if (preset == "cir41") {
        pcfg.model = covol::CIR1DParams{};
        scfg.lambda = {1.0};
        scfg.n = 5000.0;
        scfg.noise_var = {0.005};
    } else if (preset == "cir42") {
        pcfg.model = covol::CIR2DSeasonalParams{};
        scfg.lambda = {1.0, 1.0};
        scfg.n = 5000.0;
        scfg.noise_var = {0.005, 0.005};
    } else if (preset == "tiny") {
        pcfg.model = covol::CIR1DParams{};
        pcfg.grid_steps = 4000;
        scfg.lambda = {1.0};
        scfg.n = 200.0;
        scfg.noise_var = {0.005};
    } else if (!preset.empty()) {
        throw covol::BadConfig("unknown preset: " + preset);
    }
    if (j.contains("path")) pcfg = covol::path_config_from_json(j["path"]);
    if (j.contains("sampling")) scfg = covol::sampling_config_from_json(j["sampling"]);
    if (j.contains("n")) scfg.n = j["n"].get<double>();
    if (scfg.lambda.empty()) throw covol::BadConfig("simulate: no sampling configuration");
    return {pcfg, scfg};
}

int cmd_simulate(const Cli& cli) {
    auto [pcfg, scfg] = sim_configs_from(cli.config);
    const int reps = cli.config.value("replications", 1);
    if (reps < 1) throw covol::BadConfig("replications must be >= 1");
    write_resolved_config(cli, "simulate");
    for (int r = 0; r < reps; ++r) {
        covol::SimulatedDataset ds =
            covol::simulate_dataset(pcfg, scfg, covol::derive_seed(cli.seed, static_cast<std::uint64_t>(r)));
        const std::string stem = "dataset_" + std::to_string(r);
        covol::write_dataset_csv(fs::path(cli.out_dir) / (stem + ".csv"), ds.obs);
        Json side = covol::dataset_sidecar(ds);
        side["provenance"] = cli.provenance();
        covol::write_json(fs::path(cli.out_dir) / (stem + ".json"), side);
    }
    std::cout << "simulate: wrote " << reps << " dataset(s) to " << cli.out_dir << "\n";
    return 0;
}

int cmd_fit(const Cli& cli) {
    const Json& j = cli.config;
    std::vector<std::string> datasets;
    if (j.contains("datasets"))
        datasets = j["datasets"].get<std::vector<std::string>>();
    else
        datasets.push_back(j.at("dataset").get<std::string>());
    std::vector<covol::ObservationSet> paths;
    double T = j.value("T", 0.0);
    for (const auto& d : datasets) {
        paths.push_back(covol::read_dataset_csv(d));
        if (T <= 0.0) {
            fs::path side = fs::path(d).replace_extension(".json");
            if (fs::exists(side)) T = covol::read_json(side).value("T", 0.0);
        }
    }
    if (T <= 0.0) throw covol::BadConfig("fit: horizon T not given and not found in sidecar");

    covol::ModelSpec spec = covol::ModelSpec::from_json(j.at("model"));
    auto model = spec.make();
    const covol::ObjectiveKind kind = covol::objective_from_string(j.value("objective", "H"));
    write_resolved_config(cli, "fit");

    covol::FitReport rep;
    if (spec.family == "nn") {
        const auto* nn = dynamic_cast<const covol::NeuralNetModel*>(model.get());
        covol::TrainOptions opt;
        opt.objective = kind;
        opt.epochs = j.value("epochs", 300);
        opt.weight_decay = j.value("weight_decay", 0.0);
        opt.full_batch = j.value("full_batch", false);
        opt.seed = cli.seed;
        opt.n_threads = static_cast<int>(cli.threads);
        if (j.contains("checkpoint_epochs"))
            opt.checkpoint_epochs = j["checkpoint_epochs"].get<std::vector<int>>();
        rep = covol::train_nn(*nn, paths, T, opt);
    } else {
        covol::ParametricOptions opt;
        opt.objective = kind;
        opt.lo = j.value("lo", 0.1);
        opt.hi = j.value("hi", 5.0);
        opt.step = j.value("step", 0.2);
        opt.max_iter = j.value("max_iter", 400);
        opt.n_threads = static_cast<int>(cli.threads);
        if (j.contains("init")) {
            auto v = j["init"].get<std::vector<double>>();
            opt.init = Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
        } else if (model->n_params() > 1) {
            opt.init = Vector::Constant(model->n_params(), 0.5);
        }
        rep = covol::fit_parametric(*model, paths.front(), T, opt);
    }

    covol::write_json(fs::path(cli.out_dir) / "checkpoint.json",
                      covol::checkpoint_to_json(spec, rep.theta_hat, rep.vhat, cli.config_hash, cli.seed));
    for (const auto& [epoch, theta] : rep.checkpoints)
        covol::write_json(fs::path(cli.out_dir) / ("checkpoint_epoch" + std::to_string(epoch) + ".json"),
                          covol::checkpoint_to_json(spec, theta, rep.vhat, cli.config_hash, cli.seed));
    Json report;
    report["theta_hat"] = std::vector<double>(rep.theta_hat.data(), rep.theta_hat.data() + rep.theta_hat.size());
    report["vhat"] = std::vector<double>(rep.vhat.data(), rep.vhat.data() + rep.vhat.size());
    report["objective"] = rep.objective;
    report["objective_kind"] = covol::to_string(kind);
    report["trace"] = rep.trace;
    report["skipped_blocks"] = rep.skipped_blocks;
    report["seconds"] = {{"prepare", rep.seconds_prepare}, {"optimize", rep.seconds_optimize}};
    report["provenance"] = cli.provenance();
    covol::write_json(fs::path(cli.out_dir) / "fit_report.json", report);
    std::cout << "fit: objective " << rep.objective << ", report in " << cli.out_dir << "\n";
    return 0;
}

int cmd_evaluate(const Cli& cli) {
    const Json& j = cli.config;
    std::vector<std::string> ck_paths;
    if (j.contains("checkpoints"))
        ck_paths = j["checkpoints"].get<std::vector<std::string>>();
    else
        ck_paths.push_back(j.at("checkpoint").get<std::string>());
    const std::string grid_name = j.value("grid", "mse1");
    const covol::MseGrid grid = (grid_name == "mse2") ? covol::MseGrid::k2 : covol::MseGrid::k1;
    write_resolved_config(cli, "evaluate");

    covol::PathConfig truth_cfg;
    if (j.contains("truth")) truth_cfg = covol::path_config_from_json(Json{{"model", j["truth"]}});

    std::vector<double> mses;
    std::ofstream table(fs::path(cli.out_dir) / "mse_table.csv");
    if (!table) throw covol::IoError("cannot write mse_table.csv");
    table << std::setprecision(17) << "checkpoint,grid,mse\n";
    for (const auto& p : ck_paths) {
        covol::Checkpoint ck = covol::checkpoint_from_json(covol::read_json(p));
        auto model = ck.spec.make();
        double mse;
        if (ck.spec.gamma == 1) {
            const auto& tp = std::get<covol::CIR1DParams>(truth_cfg.model);
            auto truth = [&](double x) { return tp.sigma * tp.sigma * x; };
            mse = covol::mse_grid_1d(*model, ck.theta, truth, grid);
        } else {
            auto truth = [&](double t, double x1, double x2) {
                Vector y(2);
                y << x1, x2;
                return covol::sigma_truth(truth_cfg, t, y);
            };
            mse = covol::mse_grid_2d(*model, ck.theta, truth, grid);
        }
        mses.push_back(mse);
        table << p << ',' << grid_name << ',' << mse << '\n';
    }
    std::vector<double> sorted = mses;
    std::sort(sorted.begin(), sorted.end());
    auto quantile = [&](double q) {
        const double pos = q * static_cast<double>(sorted.size() - 1);
        const std::size_t lo = static_cast<std::size_t>(pos);
        const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
        return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
    };
    Json summary;
    summary["count"] = mses.size();
    summary["q1"] = quantile(0.25);
    summary["median"] = quantile(0.5);
    summary["q3"] = quantile(0.75);
    summary["provenance"] = cli.provenance();
    covol::write_json(fs::path(cli.out_dir) / "mse_summary.json", summary);
    std::cout << "evaluate: median MSE " << quantile(0.5) << "\n";
    return 0;
}

int cmd_bench(const Cli& cli) {
    const Json& j = cli.config;
    const double n = j.value("n", 5000.0);
    const int gamma = j.value("gamma", 1);
    const int repeats = j.value("repeats", 3);
    write_resolved_config(cli, "bench");

    covol::PathConfig pcfg;
    covol::SamplingConfig scfg;
    if (gamma == 1) {
        pcfg.model = covol::CIR1DParams{};
        scfg.lambda = {1.0};
        scfg.noise_var = {0.005};
    } else if (gamma == 2) {
        pcfg.model = covol::CIR2DSeasonalParams{};
        scfg.lambda = {1.0, 1.0};
        scfg.noise_var = {0.005, 0.005};
    } else {
        throw covol::BadConfig("bench: gamma must be 1 or 2");
    }
    scfg.n = n;
    covol::SimulatedDataset ds = covol::simulate_dataset(pcfg, scfg, cli.seed);
    covol::CIR1DModel m1;
    covol::CIR2DSeasonalModel m2;
    const covol::VolatilityModel& model =
        (gamma == 1) ? static_cast<const covol::VolatilityModel&>(m1) : m2;
    Vector theta = (gamma == 1) ? Vector::Constant(1, 1.0) : [] {
        Vector t(3);
        t << 1.0, std::sqrt(0.75), 0.5;
        return t;
    }();

    Json timings;
    for (const auto kind : {covol::ObjectiveKind::H, covol::ObjectiveKind::Check, covol::ObjectiveKind::Dot}) {
        covol::PreparedData prep = covol::prepare_data(ds.obs, pcfg.T, kind);
        double best = std::numeric_limits<double>::infinity();
        double value = 0.0;
        for (int r = 0; r < repeats; ++r) {
            Vector grad;
            const auto t0 = std::chrono::steady_clock::now();
            value = covol::objective_value(model, theta, ds.obs, prep, kind, &grad,
                                           static_cast<int>(cli.threads));
            const auto t1 = std::chrono::steady_clock::now();
            best = std::min(best, std::chrono::duration<double>(t1 - t0).count());
        }
        timings[covol::to_string(kind)] = {{"seconds_per_gradient", best}, {"value", value}};
    }
    const double ratio = timings["H"]["seconds_per_gradient"].get<double>() /
                         timings["dot"]["seconds_per_gradient"].get<double>();
    timings["speedup_dot_vs_H"] = ratio;
    timings["n"] = n;
    timings["gamma"] = gamma;
    timings["provenance"] = cli.provenance();
    covol::write_json(fs::path(cli.out_dir) / "bench.json", timings);
    std::cout << "bench: dot vs H speedup " << ratio << "x\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Co-volatility estimation toolkit"};
    app.require_subcommand(1);
    Cli cli;
    std::string command;
    for (const char* name : {"simulate", "fit", "evaluate", "bench"}) {
        auto* sub = app.add_subcommand(name);
        sub->add_option("--config", cli.config_path, "config file (JSON)")->required();
        sub->add_option("--out", cli.out_dir, "output directory")->required();
        sub->add_option("--seed", cli.seed, "master seed");
        sub->add_option("--threads", cli.threads, "worker threads");
        sub->callback([&command, name] { command = name; });
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        load_config(cli);
        std::error_code ec;
        std::filesystem::create_directories(cli.out_dir, ec);
        if (ec) throw covol::IoError("cannot create output directory: " + cli.out_dir);
        if (command == "simulate") return cmd_simulate(cli);
        if (command == "fit") return cmd_fit(cli);
        if (command == "evaluate") return cmd_evaluate(cli);
        return cmd_bench(cli);
    } catch (const covol::BadConfig& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const covol::ShapeMismatch& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const covol::IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return 4;
    } catch (const covol::Error& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
}
