/**
 * @file io.hpp
 * @brief Dataset CSV + JSON sidecar serialization, model specs, checkpoints.
 *
 * Dataset CSV schema: header `component,index,time,value`, one row per
 * observation. Component labels are `y0..y{gamma-1}` for observed series and
 * `x0..x{gamma_X-1}` for explanatory series (x0 is conventionally time).
 */
#pragma once

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <memory>
#include <sstream>
#include <string>

#include <json.hpp>

#include "covol/models.hpp"
#include "covol/observation.hpp"
#include "covol/sim.hpp"

namespace covol {

using Json = nlohmann::json;

/// Filesystem or parse failure while reading/writing artifacts.
struct IoError : Error {
    using Error::Error;
};

/// FNV-1a hash of a string; used as the provenance config hash.
inline std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

// -------------------------------------------------------------------------
// Model specs
// -------------------------------------------------------------------------

/// Serializable description of a model family plus hyperparameters.
struct ModelSpec {
    std::string family;           ///< cir1d | cir2d_seasonal | poly | nn
    int gamma = 1;
    int input_dim = 1;
    int p = 1;                    ///< poly degree
    double eps = 1e-4;            ///< PD floor (poly, nn)
    std::vector<int> widths;      ///< nn layer widths, widths[0] = input_dim + 1
    double a = 1.0, b = -4.0 / 3.0, c = 2.0 / 3.0;  ///< seasonal coefficients

    Json to_json() const {
        Json j;
        j["family"] = family;
        j["gamma"] = gamma;
        j["input_dim"] = input_dim;
        if (family == "poly") {
            j["p"] = p;
            j["eps"] = eps;
        } else if (family == "nn") {
            j["widths"] = widths;
            j["eps"] = eps;
        } else if (family == "cir2d_seasonal") {
            j["seasonal"] = {{"a", a}, {"b", b}, {"c", c}};
        }
        return j;
    }

    static ModelSpec from_json(const Json& j) {
        ModelSpec s;
        s.family = j.at("family").get<std::string>();
        if (s.family == "cir1d") {
            s.gamma = 1;
            s.input_dim = 1;
        } else if (s.family == "cir2d_seasonal") {
            s.gamma = 2;
            s.input_dim = 2;
            if (j.contains("seasonal")) {
                s.a = j["seasonal"].value("a", s.a);
                s.b = j["seasonal"].value("b", s.b);
                s.c = j["seasonal"].value("c", s.c);
            }
        } else if (s.family == "poly") {
            s.gamma = 1;
            s.input_dim = 1;
            s.p = j.at("p").get<int>();
            s.eps = j.value("eps", 1e-4);
        } else if (s.family == "nn") {
            s.gamma = j.at("gamma").get<int>();
            s.input_dim = j.at("input_dim").get<int>();
            s.widths = j.at("widths").get<std::vector<int>>();
            s.eps = j.value("eps", 1e-4);
        } else {
            throw BadConfig("ModelSpec: unknown family " + s.family);
        }
        return s;
    }

    std::unique_ptr<VolatilityModel> make() const {
        if (family == "cir1d") return std::make_unique<CIR1DModel>();
        if (family == "cir2d_seasonal") {
            auto m = std::make_unique<CIR2DSeasonalModel>();
            m->a = a;
            m->b = b;
            m->c = c;
            return m;
        }
        if (family == "poly") return std::make_unique<PolyModel>(p, eps);
        if (family == "nn") return std::make_unique<NeuralNetModel>(gamma, input_dim, widths, eps);
        throw BadConfig("ModelSpec: unknown family " + family);
    }
};

// -------------------------------------------------------------------------
// Simulation configs
// -------------------------------------------------------------------------

inline Json path_config_to_json(const PathConfig& cfg) {
    Json j;
    j["T"] = cfg.T;
    j["grid_steps"] = cfg.grid_steps;
    if (const auto* p = std::get_if<CIR1DParams>(&cfg.model)) {
        j["model"] = {{"family", "cir1d"},   {"alpha1", p->alpha1}, {"alpha2", p->alpha2},
                      {"sigma", p->sigma},   {"y0", p->y0}};
    } else {
        const auto& q = std::get<CIR2DSeasonalParams>(cfg.model);
        j["model"] = {{"family", "cir2d_seasonal"},
                      {"alpha1", q.alpha1},  {"alpha2", q.alpha2}, {"alpha3", q.alpha3},
                      {"alpha4", q.alpha4},  {"a", q.a},           {"b", q.b},
                      {"c", q.c},            {"s1", q.s1},         {"s2", q.s2},
                      {"s3", q.s3},          {"y0_1", q.y0_1},     {"y0_2", q.y0_2}};
    }
    return j;
}

inline PathConfig path_config_from_json(const Json& j) {
    PathConfig cfg;
    cfg.T = j.value("T", 1.0);
    cfg.grid_steps = j.value("grid_steps", 100000);
    const Json& m = j.at("model");
    const std::string family = m.at("family").get<std::string>();
    if (family == "cir1d") {
        CIR1DParams p;
        p.alpha1 = m.value("alpha1", 1.0);
        p.alpha2 = m.value("alpha2", 1.0);
        p.sigma = m.value("sigma", 1.0);
        p.y0 = m.value("y0", 1.0);
        cfg.model = p;
    } else if (family == "cir2d_seasonal") {
        CIR2DSeasonalParams q;
        q.alpha1 = m.value("alpha1", 1.0);
        q.alpha2 = m.value("alpha2", 1.0);
        q.alpha3 = m.value("alpha3", 1.0);
        q.alpha4 = m.value("alpha4", 1.0);
        q.a = m.value("a", 1.0);
        q.b = m.value("b", -4.0 / 3.0);
        q.c = m.value("c", 2.0 / 3.0);
        q.s1 = m.value("s1", 1.0);
        q.s2 = m.value("s2", std::sqrt(0.75));
        q.s3 = m.value("s3", 0.5);
        q.y0_1 = m.value("y0_1", 1.0);
        q.y0_2 = m.value("y0_2", 1.0);
        cfg.model = q;
    } else {
        throw BadConfig("path config: unknown model family " + family);
    }
    return cfg;
}

inline Json sampling_config_to_json(const SamplingConfig& cfg) {
    Json j;
    j["lambda"] = cfg.lambda;
    j["n"] = cfg.n;
    j["noise_var"] = cfg.noise_var;
    return j;
}

inline SamplingConfig sampling_config_from_json(const Json& j) {
    SamplingConfig cfg;
    cfg.lambda = j.at("lambda").get<std::vector<double>>();
    cfg.n = j.at("n").get<double>();
    cfg.noise_var = j.at("noise_var").get<std::vector<double>>();
    return cfg;
}

// -------------------------------------------------------------------------
// Dataset CSV + sidecar
// -------------------------------------------------------------------------

namespace detail {

inline void write_component_rows(std::ostream& os, const std::string& label,
                                 const ComponentSeries& c) {
    for (std::size_t i = 0; i < c.times.size(); ++i)
        os << label << ',' << i << ',' << c.times[i] << ',' << c.values[i] << '\n';
}

}  // namespace detail

inline void write_dataset_csv(const std::filesystem::path& path, const ObservationSet& obs) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open for writing: " + path.string());
    os << std::setprecision(17);
    os << "component,index,time,value\n";
    for (int j = 0; j < obs.gamma(); ++j)
        detail::write_component_rows(os, "y" + std::to_string(j), obs.y[static_cast<std::size_t>(j)]);
    for (int j = 0; j < obs.gamma_x(); ++j)
        detail::write_component_rows(os, "x" + std::to_string(j), obs.x[static_cast<std::size_t>(j)]);
    if (!os) throw IoError("write failed: " + path.string());
}

inline ObservationSet read_dataset_csv(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open for reading: " + path.string());
    std::string line;
    if (!std::getline(is, line) || line.rfind("component,index,time,value", 0) != 0)
        throw IoError("bad dataset header in " + path.string());
    ObservationSet obs;
    std::size_t lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string comp, idx, time, value;
        if (!std::getline(ss, comp, ',') || !std::getline(ss, idx, ',') ||
            !std::getline(ss, time, ',') || !std::getline(ss, value))
            throw IoError(path.string() + ": malformed row at line " + std::to_string(lineno));
        if (comp.size() < 2 || (comp[0] != 'y' && comp[0] != 'x'))
            throw IoError(path.string() + ": bad component label at line " + std::to_string(lineno));
        std::size_t ci;
        double t, v;
        try {
            ci = std::stoul(comp.substr(1));
            t = std::stod(time);
            v = std::stod(value);
        } catch (const std::exception&) {
            throw IoError(path.string() + ": unparsable row at line " + std::to_string(lineno));
        }
        auto& store = (comp[0] == 'y') ? obs.y : obs.x;
        if (store.size() <= ci) store.resize(ci + 1);
        store[ci].times.push_back(t);
        store[ci].values.push_back(v);
    }
    return obs;
}

inline void write_json(const std::filesystem::path& path, const Json& j) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open for writing: " + path.string());
    os << j.dump(2) << '\n';
    if (!os) throw IoError("write failed: " + path.string());
}

inline Json read_json(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open for reading: " + path.string());
    try {
        return Json::parse(is);
    } catch (const Json::parse_error& e) {
        throw IoError(path.string() + ": " + e.what());
    }
}

/// Sidecar for a simulated dataset: configs, seed, per-component counts.
inline Json dataset_sidecar(const SimulatedDataset& ds) {
    Json j;
    j["T"] = ds.path_cfg.T;
    j["seed"] = ds.seed;
    j["path_config"] = path_config_to_json(ds.path_cfg);
    j["sampling_config"] = sampling_config_to_json(ds.sampling_cfg);
    std::vector<std::size_t> counts;
    for (const auto& c : ds.obs.y) counts.push_back(c.count());
    j["J"] = counts;
    j["truncated_steps"] = ds.path.truncated_steps;
    return j;
}

// -------------------------------------------------------------------------
// Checkpoints
// -------------------------------------------------------------------------

inline Json checkpoint_to_json(const ModelSpec& spec, const Vector& theta, const Vector& vhat,
                               std::uint64_t config_hash, std::uint64_t seed) {
    Json j;
    j["model"] = spec.to_json();
    j["theta"] = std::vector<double>(theta.data(), theta.data() + theta.size());
    j["vhat"] = std::vector<double>(vhat.data(), vhat.data() + vhat.size());
    j["provenance"] = {{"config_hash", config_hash}, {"seed", seed}};
    return j;
}

struct Checkpoint {
    ModelSpec spec;
    Vector theta;
    Vector vhat;
    std::uint64_t config_hash = 0;
    std::uint64_t seed = 0;
};

inline Checkpoint checkpoint_from_json(const Json& j) {
    Checkpoint ck;
    ck.spec = ModelSpec::from_json(j.at("model"));
    auto th = j.at("theta").get<std::vector<double>>();
    auto vh = j.at("vhat").get<std::vector<double>>();
    ck.theta = Eigen::Map<const Vector>(th.data(), static_cast<Eigen::Index>(th.size()));
    ck.vhat = Eigen::Map<const Vector>(vh.data(), static_cast<Eigen::Index>(vh.size()));
    if (j.contains("provenance")) {
        ck.config_hash = j["provenance"].value("config_hash", 0ULL);
        ck.seed = j["provenance"].value("seed", 0ULL);
    }
    auto model = ck.spec.make();
    if (ck.theta.size() != model->n_params()) throw BadConfig("checkpoint: theta size mismatch");
    return ck;
}

}  // namespace covol
