/**
 * @file sim.hpp
 * @brief Ground-truth diffusion paths (CIR and seasonal 2-d CIR), Poisson
 *        sampling times, and noisy observations.
 *
 * Paths are Euler-Maruyama with the full-truncation positivity fix
 * (sqrt(max(Y,0)) inside the diffusion term) on a dense grid; observations
 * interpolate linearly between grid points.
 */
#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <variant>
#include <vector>

#include "covol/observation.hpp"

namespace covol {

/// dY = (a1 - a2 Y) dt + sigma sqrt(Y) dW, requires 2 a1 > sigma^2.
struct CIR1DParams {
    double alpha1 = 1.0;
    double alpha2 = 1.0;
    double sigma = 1.0;
    double y0 = 1.0;
};

/// Two CIR-type components sharing W^1, with seasonal factor a t^2 + b t + c:
///   dY1 = (a1 - a3 Y1) dt + f(t) s1 sqrt(Y1) dW1
///   dY2 = (a2 - a4 Y2) dt + f(t) sqrt(Y2) (s3 dW1 + s2 dW2).
struct CIR2DSeasonalParams {
    double alpha1 = 1.0, alpha2 = 1.0, alpha3 = 1.0, alpha4 = 1.0;
    double a = 1.0, b = -4.0 / 3.0, c = 2.0 / 3.0;
    double s1 = 1.0, s2 = std::sqrt(0.75), s3 = 0.5;
    double y0_1 = 1.0, y0_2 = 1.0;

    double seasonal(double t) const { return a * t * t + b * t + c; }
};

struct PathConfig {
    double T = 1.0;
    int grid_steps = 100000;
    std::uint64_t seed = 1;
    std::variant<CIR1DParams, CIR2DSeasonalParams> model = CIR1DParams{};

    int dim() const { return std::holds_alternative<CIR1DParams>(model) ? 1 : 2; }

    void validate() const {
        if (T <= 0.0) throw BadConfig("PathConfig: T must be positive");
        if (grid_steps < 10) throw BadConfig("PathConfig: grid too coarse");
        if (const auto* p = std::get_if<CIR1DParams>(&model)) {
            if (!(2.0 * p->alpha1 > p->sigma * p->sigma) && p->sigma != 0.0)
                throw BadConfig("PathConfig: CIR needs 2 alpha1 > sigma^2");
        }
    }
};

struct SamplingConfig {
    std::vector<double> lambda;        ///< per-component event rates
    double n = 1.0;                    ///< frequency scale; intensity lambda_k * n
    std::vector<double> noise_var;     ///< v*_k per component

    void validate(int gamma) const {
        if (static_cast<int>(lambda.size()) != gamma || static_cast<int>(noise_var.size()) != gamma)
            throw BadConfig("SamplingConfig: per-component sizes mismatch");
        if (n < 1.0) throw BadConfig("SamplingConfig: n must be >= 1");
        for (double l : lambda)
            if (!(l > 0.0)) throw BadConfig("SamplingConfig: lambda must be positive");
        for (double v : noise_var)
            if (v < 0.0) throw BadConfig("SamplingConfig: negative noise variance");
    }
};

/// Latent path on the dense Euler grid.
struct DensePath {
    double T = 1.0;
    int dim = 1;
    std::vector<double> t;             ///< grid times, size steps + 1
    std::vector<std::vector<double>> y;  ///< y[d][i]
    int truncated_steps = 0;           ///< Euler steps that clipped sqrt(Y<0)

    double value_at(int d, double time) const {
        const double dt = T / static_cast<double>(t.size() - 1);
        if (time <= 0.0) return y[static_cast<std::size_t>(d)].front();
        if (time >= T) return y[static_cast<std::size_t>(d)].back();
        const double u = time / dt;
        const std::size_t i = static_cast<std::size_t>(u);
        const double w = u - static_cast<double>(i);
        const auto& col = y[static_cast<std::size_t>(d)];
        return (1.0 - w) * col[i] + w * col[i + 1];
    }
};

/// Euler-Maruyama with full truncation.
inline DensePath simulate_path(const PathConfig& cfg) {
    cfg.validate();
    std::mt19937_64 rng(cfg.seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const int n = cfg.grid_steps;
    const double dt = cfg.T / n;
    const double sdt = std::sqrt(dt);

    DensePath path;
    path.T = cfg.T;
    path.dim = cfg.dim();
    path.t.resize(static_cast<std::size_t>(n) + 1);
    for (int i = 0; i <= n; ++i) path.t[static_cast<std::size_t>(i)] = cfg.T * i / n;
    path.y.assign(static_cast<std::size_t>(path.dim), std::vector<double>(static_cast<std::size_t>(n) + 1));

    if (const auto* p = std::get_if<CIR1DParams>(&cfg.model)) {
        double y = p->y0;
        path.y[0][0] = y;
        for (int i = 0; i < n; ++i) {
            const double pos = std::max(y, 0.0);
            if (y < 0.0) ++path.truncated_steps;
            y += (p->alpha1 - p->alpha2 * y) * dt + p->sigma * std::sqrt(pos) * sdt * gauss(rng);
            path.y[0][static_cast<std::size_t>(i) + 1] = y;
        }
    } else {
        const auto& q = std::get<CIR2DSeasonalParams>(cfg.model);
        double y1 = q.y0_1, y2 = q.y0_2;
        path.y[0][0] = y1;
        path.y[1][0] = y2;
        for (int i = 0; i < n; ++i) {
            const double f = q.seasonal(path.t[static_cast<std::size_t>(i)]);
            const double p1 = std::max(y1, 0.0);
            const double p2 = std::max(y2, 0.0);
            if (y1 < 0.0 || y2 < 0.0) ++path.truncated_steps;
            const double dw1 = sdt * gauss(rng);
            const double dw2 = sdt * gauss(rng);
            y1 += (q.alpha1 - q.alpha3 * y1) * dt + f * q.s1 * std::sqrt(p1) * dw1;
            y2 += (q.alpha2 - q.alpha4 * y2) * dt + f * std::sqrt(p2) * (q.s3 * dw1 + q.s2 * dw2);
            path.y[0][static_cast<std::size_t>(i) + 1] = y1;
            path.y[1][static_cast<std::size_t>(i) + 1] = y2;
        }
    }
    return path;
}

/// True co-volatility Sigma_dagger(t, y) for a path model.
inline Matrix sigma_truth(const PathConfig& cfg, double t, const Vector& y) {
    if (const auto* p = std::get_if<CIR1DParams>(&cfg.model)) {
        Matrix s(1, 1);
        s(0, 0) = p->sigma * p->sigma * std::max(y(0), 0.0);
        return s;
    }
    const auto& q = std::get<CIR2DSeasonalParams>(cfg.model);
    const double f2 = q.seasonal(t) * q.seasonal(t);
    const double y1 = std::max(y(0), 0.0);
    const double y2 = std::max(y(1), 0.0);
    Matrix s(2, 2);
    s(0, 0) = f2 * q.s1 * q.s1 * y1;
    s(0, 1) = s(1, 0) = f2 * q.s1 * q.s3 * std::sqrt(y1 * y2);
    s(1, 1) = f2 * (q.s2 * q.s2 + q.s3 * q.s3) * y2;
    return s;
}

/**
 * @brief Poisson arrival times per component: 0 = S_0 < S_1 < ... <= T with
 *        Exponential(lambda_k * n) inter-arrivals.
 */
inline std::vector<std::vector<double>> sample_arrival_times(const SamplingConfig& cfg, double T,
                                                             std::uint64_t seed, int gamma) {
    cfg.validate(gamma);
    std::vector<std::vector<double>> out(static_cast<std::size_t>(gamma));
    for (int kcomp = 0; kcomp < gamma; ++kcomp) {
        std::mt19937_64 rng(derive_seed(seed, static_cast<std::uint64_t>(kcomp)));
        std::exponential_distribution<double> expo(cfg.lambda[static_cast<std::size_t>(kcomp)] * cfg.n);
        double t = 0.0;
        auto& times = out[static_cast<std::size_t>(kcomp)];
        times.push_back(0.0);
        while (true) {
            t += expo(rng);
            if (t > T) break;
            times.push_back(t);
        }
    }
    return out;
}

/**
 * @brief Observe a latent path at the given times, adding i.i.d. Gaussian
 *        noise with variance v*_k, and attach the explanatory series
 *        X = (t, Y~): x[0] carries observation times as values, x[1+k] the
 *        noisy observations themselves.
 */
inline ObservationSet observe(const DensePath& path, const std::vector<std::vector<double>>& times,
                              const std::vector<double>& noise_var, std::uint64_t seed) {
    if (static_cast<int>(times.size()) != path.dim || times.size() != noise_var.size())
        throw ShapeMismatch("observe: component count mismatch");
    ObservationSet obs;
    obs.y.resize(times.size());
    for (std::size_t kcomp = 0; kcomp < times.size(); ++kcomp) {
        std::mt19937_64 rng(derive_seed(seed, 1000 + kcomp));
        std::normal_distribution<double> gauss(0.0, std::sqrt(noise_var[kcomp]));
        auto& c = obs.y[kcomp];
        c.times = times[kcomp];
        c.values.reserve(c.times.size());
        for (double t : c.times) {
            double v = path.value_at(static_cast<int>(kcomp), t);
            if (noise_var[kcomp] > 0.0) v += gauss(rng);
            c.values.push_back(v);
        }
    }
    // Explanatory series X = (t, Y~): time coordinate on the merged grid.
    ComponentSeries tc;
    std::vector<double> merged;
    for (const auto& ts : times) merged.insert(merged.end(), ts.begin(), ts.end());
    std::sort(merged.begin(), merged.end());
    merged.erase(std::unique(merged.begin(), merged.end()), merged.end());
    tc.times = merged;
    tc.values = merged;
    obs.x.push_back(tc);
    for (const auto& c : obs.y) obs.x.push_back(c);
    return obs;
}

/// One simulated dataset with provenance.
struct SimulatedDataset {
    PathConfig path_cfg;
    SamplingConfig sampling_cfg;
    std::uint64_t seed = 1;
    DensePath path;
    ObservationSet obs;

    Matrix truth(double t, const Vector& y) const { return sigma_truth(path_cfg, t, y); }

    /// Truth along the latent path at time t.
    Matrix truth_at(double t) const {
        Vector y(path.dim);
        for (int d = 0; d < path.dim; ++d) y(d) = path.value_at(d, t);
        return sigma_truth(path_cfg, t, y);
    }
};

/// Simulate path, arrivals, and observations from one master seed.
inline SimulatedDataset simulate_dataset(PathConfig pcfg, const SamplingConfig& scfg, std::uint64_t seed) {
    SimulatedDataset ds;
    pcfg.seed = derive_seed(seed, 0);
    ds.path_cfg = pcfg;
    ds.sampling_cfg = scfg;
    ds.seed = seed;
    ds.path = simulate_path(pcfg);
    auto times = sample_arrival_times(scfg, pcfg.T, derive_seed(seed, 1), pcfg.dim());
    ds.obs = observe(ds.path, times, scfg.noise_var, derive_seed(seed, 2));
    return ds;
}

}  // namespace covol
