/**
 * @file fit.hpp
 * @brief Objective dispatch, parametric fitting, and neural-net training.
 */
#pragma once

#include <algorithm>
#include <chrono>
#include <map>
#include <numeric>
#include <random>
#include <string>

#include "covol/bias_fast.hpp"
#include "covol/quasilik.hpp"

namespace covol {

enum class ObjectiveKind { H, Check, Dot };

inline ObjectiveKind objective_from_string(const std::string& s) {
    if (s == "H" || s == "h") return ObjectiveKind::H;
    if (s == "check") return ObjectiveKind::Check;
    if (s == "dot") return ObjectiveKind::Dot;
    throw BadConfig("unknown objective: " + s);
}

inline std::string to_string(ObjectiveKind k) {
    switch (k) {
        case ObjectiveKind::H: return "H";
        case ObjectiveKind::Check: return "check";
        default: return "dot";
    }
}

/// Theta-independent data preprocessing shared across objective evaluations.
struct PreparedData {
    BlockLayout lay;
    Vector vhat;
    PreAveraged pa;    ///< populated when needed by the objective
    bool has_pa = false;
};

inline PreparedData prepare_data(const ObservationSet& obs, double T, ObjectiveKind kind,
                                 int ell_n = 0) {
    PreparedData p;
    p.lay = build_layout(obs, T, ell_n);
    p.vhat = estimate_noise_variance(obs, p.lay);
    if (kind != ObjectiveKind::H) {
        p.pa = compute_preaveraged(obs, p.lay, p.vhat, WeightFn::triangle());
        p.has_pa = true;
    }
    return p;
}

/// Value (and optionally theta-gradient) of the selected objective.
inline double objective_value(const VolatilityModel& model, const Vector& theta,
                              const ObservationSet& obs, const PreparedData& prep,
                              ObjectiveKind kind, Vector* grad = nullptr, int n_threads = 1) {
    const bool want = grad != nullptr;
    switch (kind) {
        case ObjectiveKind::H: {
            ObjectiveEval e = quasi_loglik(model, theta, prep.vhat, obs, prep.lay, want, n_threads);
            if (want) *grad = e.grad_theta;
            return e.value;
        }
        case ObjectiveKind::Check: {
            CheckEval e = check_objective(model, theta, prep.vhat, obs, prep.lay,
                                          WeightFn::triangle(), want, n_threads);
            if (want) *grad = e.grad_theta;
            return e.value;
        }
        default: {
            DotEval e = dot_objective(model, theta, prep.pa, want, n_threads);
            if (want) *grad = e.grad_theta;
            return e.value;
        }
    }
}

/// Result of a fit; values are reproducible for fixed config and seed.
struct FitReport {
    Vector theta_hat;
    Vector vhat;
    double objective = 0.0;
    std::vector<double> trace;           ///< per-iteration or per-epoch objective
    std::size_t skipped_blocks = 0;
    double seconds_prepare = 0.0;
    double seconds_optimize = 0.0;
    std::map<int, Vector> checkpoints;   ///< epoch -> theta (neural-net fits)
};

/// Scalar or low-dimensional parametric fit by derivative-free maximization.
struct ParametricOptions {
    ObjectiveKind objective = ObjectiveKind::H;
    double lo = 0.1;        ///< golden-section bracket (1 parameter)
    double hi = 5.0;
    Vector init;            ///< starting point (>= 2 parameters)
    double step = 0.2;      ///< Nelder-Mead initial simplex scale
    int max_iter = 400;
    int n_threads = 1;
};

inline FitReport fit_parametric(const VolatilityModel& model, const ObservationSet& obs, double T,
                                const ParametricOptions& opt) {
    using clock = std::chrono::steady_clock;
    FitReport rep;
    const auto t0 = clock::now();
    PreparedData prep = prepare_data(obs, T, opt.objective);
    rep.vhat = prep.vhat;
    rep.skipped_blocks = prep.lay.skipped.size();
    const auto t1 = clock::now();
    if (model.n_params() == 1) {
        auto f = [&](double s) {
            Vector th(1);
            th << s;
            return objective_value(model, th, obs, prep, opt.objective, nullptr, opt.n_threads);
        };
        const double shat = golden_section_max(f, opt.lo, opt.hi, 1e-8, &rep.trace);
        rep.theta_hat = Vector::Constant(1, shat);
    } else {
        if (opt.init.size() != model.n_params())
            throw BadConfig("fit_parametric: init size mismatch");
        auto f = [&](const Vector& th) {
            return objective_value(model, th, obs, prep, opt.objective, nullptr, opt.n_threads);
        };
        rep.theta_hat = nelder_mead_max(f, opt.init, opt.step, opt.max_iter, 1e-12, &rep.trace);
    }
    rep.objective = objective_value(model, rep.theta_hat, obs, prep, opt.objective, nullptr,
                                    opt.n_threads);
    const auto t2 = clock::now();
    rep.seconds_prepare = std::chrono::duration<double>(t1 - t0).count();
    rep.seconds_optimize = std::chrono::duration<double>(t2 - t1).count();
    return rep;
}

/// ADADELTA training options for neural-net models.
struct TrainOptions {
    ObjectiveKind objective = ObjectiveKind::Dot;
    int epochs = 300;
    double weight_decay = 0.0;
    double rho = 0.95;
    double eps = 1e-6;
    std::uint64_t seed = 1;
    int n_threads = 1;
    bool full_batch = false;  ///< one step per epoch on the path-averaged gradient
    std::vector<int> checkpoint_epochs;  ///< epochs at which theta is recorded
};

/**
 * @brief Train a neural-net volatility model on one or more observed paths.
 *
 * Each epoch visits every path once in a seed-derived random order and takes
 * one ADADELTA step per path on the gradient of loss = -objective.
 */
inline FitReport train_nn(const NeuralNetModel& model, const std::vector<ObservationSet>& paths,
                          double T, const TrainOptions& opt) {
    using clock = std::chrono::steady_clock;
    if (paths.empty()) throw BadConfig("train_nn: no paths");
    if (opt.epochs < 1) throw BadConfig("train_nn: epochs must be >= 1");
    FitReport rep;
    const auto t0 = clock::now();
    std::vector<PreparedData> preps;
    preps.reserve(paths.size());
    for (const auto& obs : paths) preps.push_back(prepare_data(obs, T, opt.objective));
    rep.vhat = preps.front().vhat;
    for (const auto& p : preps) rep.skipped_blocks += p.lay.skipped.size();
    const auto t1 = clock::now();

    Vector theta = model.init_theta(derive_seed(opt.seed, 0));
    AdadeltaState st(static_cast<int>(theta.size()), opt.rho, opt.eps);

    std::vector<std::size_t> order(paths.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (int epoch = 1; epoch <= opt.epochs; ++epoch) {
        std::mt19937_64 rng(derive_seed(opt.seed, static_cast<std::uint64_t>(epoch)));
        std::shuffle(order.begin(), order.end(), rng);
        double mean_obj = 0.0;
        Vector batch_grad = Vector::Zero(theta.size());
        for (std::size_t idx : order) {
            Vector grad;
            const double val = objective_value(model, theta, paths[idx], preps[idx], opt.objective,
                                               &grad, opt.n_threads);
            mean_obj += val / static_cast<double>(paths.size());
            if (opt.full_batch) {
                batch_grad += grad / static_cast<double>(paths.size());
            } else {
                Vector grad_loss = -grad;
                adadelta_step(theta, grad_loss, st, opt.weight_decay);
            }
        }
        if (opt.full_batch) {
            Vector grad_loss = -batch_grad;
            adadelta_step(theta, grad_loss, st, opt.weight_decay);
        }
        rep.trace.push_back(mean_obj);
        if (std::find(opt.checkpoint_epochs.begin(), opt.checkpoint_epochs.end(), epoch) !=
            opt.checkpoint_epochs.end())
            rep.checkpoints[epoch] = theta;
    }
    rep.theta_hat = theta;
    rep.objective = rep.trace.back();
    const auto t2 = clock::now();
    rep.seconds_prepare = std::chrono::duration<double>(t1 - t0).count();
    rep.seconds_optimize = std::chrono::duration<double>(t2 - t1).count();
    return rep;
}

}  // namespace covol
