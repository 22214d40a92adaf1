/**
 * @file observation.hpp
 * @brief Observation containers, block partitioning, index bookkeeping,
 *        increments, interval-overlap matrices, explanatory-variable local
 *        averages, and the noise-variance estimator.
 *
 * Index conventions (0-based arrays): K_m^j is the index of the last
 * observation of component j strictly before the boundary s_m, with
 * K_0^j = -1. The number of within-block increments is
 * k_m^j = K_m^j - K_{m-1}^j - 1; increments straddling a boundary are
 * dropped by construction. Observations exactly at a boundary belong to the
 * right block (half-open intervals).
 */
#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "covol/common.hpp"

namespace covol {

/// One observed component: strictly increasing times and matching values.
struct ComponentSeries {
    std::vector<double> times;
    std::vector<double> values;

    std::size_t count() const { return times.size(); }
};

/// Noisy nonsynchronous observations of gamma components, plus optional
/// explanatory series (first explanatory component is conventionally time).
struct ObservationSet {
    std::vector<ComponentSeries> y;  ///< observed prices/states, size gamma
    std::vector<ComponentSeries> x;  ///< explanatory observations, size gamma_X

    int gamma() const { return static_cast<int>(y.size()); }
    int gamma_x() const { return static_cast<int>(x.size()); }

    void validate() const {
        if (y.empty()) throw BadConfig("ObservationSet: no components");
        for (const auto& c : y) {
            if (c.times.size() != c.values.size()) throw ShapeMismatch("ObservationSet: times/values length");
            if (c.times.size() < 2) throw BadConfig("ObservationSet: need J_k >= 2");
            for (std::size_t i = 1; i < c.times.size(); ++i)
                if (!(c.times[i] > c.times[i - 1])) throw BadConfig("ObservationSet: times not strictly increasing");
        }
    }
};

/// Partition of [0, T] into ell_n equal blocks with per-component bookkeeping.
struct BlockLayout {
    double T = 1.0;
    int ell_n = 0;    ///< number of blocks
    double b_n = 0.0; ///< frequency scale (defaults to mean observation count)
    std::vector<double> s;            ///< boundaries s_0..s_{ell_n}
    std::vector<std::vector<int>> K;  ///< K[m][j], m = 0..ell_n, K[0][j] = -1
    std::vector<std::vector<int>> k;  ///< k[m-1][j] = k_m^j, m = 1..ell_n
    std::vector<std::vector<double>> times;  ///< per-component observation times
    std::vector<int> skipped;                ///< blocks m with some k_m^j == 0

    double k_n() const { return b_n / ell_n; }

    /// Block m in 1..ell_n is usable when every component has an increment.
    bool usable(int m) const {
        for (int kj : k[static_cast<std::size_t>(m - 1)])
            if (kj < 1) return false;
        return true;
    }

    /// Left endpoint of interval I^j_{i,m}, i in 1..k_m^j.
    double interval_left(int m, int j, int i) const {
        return times[static_cast<std::size_t>(j)]
                    [static_cast<std::size_t>(K[static_cast<std::size_t>(m - 1)][static_cast<std::size_t>(j)] + i)];
    }
    double interval_right(int m, int j, int i) const {
        return times[static_cast<std::size_t>(j)]
                    [static_cast<std::size_t>(K[static_cast<std::size_t>(m - 1)][static_cast<std::size_t>(j)] + i + 1)];
    }
};

/**
 * @brief Build the block partition and all index bookkeeping.
 *
 * Defaults: b_n = mean observation count over components, ell_n =
 * floor(b_n^{0.45}). Blocks with some k_m^j = 0 are recorded in `skipped`
 * and excluded from objective sums downstream.
 */
inline BlockLayout build_layout(const ObservationSet& obs, double T, int ell_n = 0, double b_n = 0.0) {
    obs.validate();
    if (T <= 0.0) throw BadConfig("build_layout: T must be positive");
    const int gamma = obs.gamma();
    if (b_n <= 0.0) {
        double mean = 0.0;
        for (const auto& c : obs.y) mean += static_cast<double>(c.count());
        b_n = mean / gamma;
    }
    if (ell_n <= 0) ell_n = static_cast<int>(std::floor(std::pow(b_n, 0.45)));
    if (ell_n < 1) ell_n = 1;
    if (static_cast<double>(ell_n) > b_n) throw BadConfig("build_layout: need b_n >= ell_n");

    BlockLayout lay;
    lay.T = T;
    lay.ell_n = ell_n;
    lay.b_n = b_n;
    lay.s.resize(static_cast<std::size_t>(ell_n) + 1);
    for (int m = 0; m <= ell_n; ++m) lay.s[static_cast<std::size_t>(m)] = T * m / ell_n;

    lay.times.resize(static_cast<std::size_t>(gamma));
    for (int j = 0; j < gamma; ++j) lay.times[static_cast<std::size_t>(j)] = obs.y[static_cast<std::size_t>(j)].times;

    lay.K.assign(static_cast<std::size_t>(ell_n) + 1, std::vector<int>(static_cast<std::size_t>(gamma), -1));
    lay.k.assign(static_cast<std::size_t>(ell_n), std::vector<int>(static_cast<std::size_t>(gamma), 0));
    for (int j = 0; j < gamma; ++j) {
        const auto& t = lay.times[static_cast<std::size_t>(j)];
        for (int m = 1; m <= ell_n; ++m) {
            // K_m^j = #{i : S_i < s_m} - 1; ties at s_m go to the right block.
            auto it = std::lower_bound(t.begin(), t.end(), lay.s[static_cast<std::size_t>(m)]);
            lay.K[static_cast<std::size_t>(m)][static_cast<std::size_t>(j)] =
                static_cast<int>(it - t.begin()) - 1;
        }
    }
    for (int m = 1; m <= ell_n; ++m) {
        bool empty = false;
        for (int j = 0; j < gamma; ++j) {
            int kmj = lay.K[static_cast<std::size_t>(m)][static_cast<std::size_t>(j)] -
                      lay.K[static_cast<std::size_t>(m - 1)][static_cast<std::size_t>(j)] - 1;
            lay.k[static_cast<std::size_t>(m - 1)][static_cast<std::size_t>(j)] = kmj;
            if (kmj < 1) empty = true;
        }
        if (empty) lay.skipped.push_back(m);
    }
    return lay;
}

/**
 * @brief Stacked within-block increment vector
 *        ((Z^1_{m,.}), ..., (Z^gamma_{m,.})), component-major.
 */
inline Vector block_increments(const ObservationSet& obs, const BlockLayout& lay, int m) {
    const int gamma = obs.gamma();
    int total = 0;
    for (int j = 0; j < gamma; ++j) total += lay.k[static_cast<std::size_t>(m - 1)][static_cast<std::size_t>(j)];
    Vector z(total);
    int pos = 0;
    for (int j = 0; j < gamma; ++j) {
        const auto& v = obs.y[static_cast<std::size_t>(j)].values;
        const int Kprev = lay.K[static_cast<std::size_t>(m - 1)][static_cast<std::size_t>(j)];
        const int kmj = lay.k[static_cast<std::size_t>(m - 1)][static_cast<std::size_t>(j)];
        for (int l = 1; l <= kmj; ++l)
            z(pos++) = v[static_cast<std::size_t>(Kprev + l + 1)] - v[static_cast<std::size_t>(Kprev + l)];
    }
    return z;
}

/**
 * @brief Interval-overlap matrix [G_{k,l}]_{ij} = |I^k_{i,m} intersect I^l_{j,m}|.
 *
 * Same-component intervals are disjoint, so the diagonal case is
 * diag(|I^k_{i,m}|).
 */
inline Matrix overlap_matrix(const BlockLayout& lay, int m, int ck, int cl) {
    const int kk = lay.k[static_cast<std::size_t>(m - 1)][static_cast<std::size_t>(ck)];
    const int kl = lay.k[static_cast<std::size_t>(m - 1)][static_cast<std::size_t>(cl)];
    Matrix G = Matrix::Zero(kk, kl);
    for (int i = 1; i <= kk; ++i) {
        const double a0 = lay.interval_left(m, ck, i);
        const double a1 = lay.interval_right(m, ck, i);
        for (int j = 1; j <= kl; ++j) {
            const double b0 = lay.interval_left(m, cl, j);
            const double b1 = lay.interval_right(m, cl, j);
            G(i - 1, j - 1) = std::max(0.0, std::min(a1, b1) - std::max(a0, b0));
        }
    }
    return G;
}

/// Tridiagonal M(l): 2 on the diagonal, -1 on the first off-diagonals.
inline Matrix tridiag_M(int l) {
    Matrix M = Matrix::Zero(l, l);
    for (int i = 0; i < l; ++i) {
        M(i, i) = 2.0;
        if (i + 1 < l) M(i, i + 1) = M(i + 1, i) = -1.0;
    }
    return M;
}

/// Closed-form eigenvalues of M(l): 2(1 - cos(k pi/(l+1))), k = 1..l.
inline Vector tridiag_M_eigenvalues(int l) {
    const double pi = std::acos(-1.0);
    Vector lam(l);
    for (int k = 1; k <= l; ++k) lam(k - 1) = 2.0 * (1.0 - std::cos(k * pi / (l + 1)));
    return lam;
}

/**
 * @brief Component-wise arithmetic mean of the explanatory observations with
 *        times in [s_{m-1}, s_m).
 */
inline Vector local_average_X(const ObservationSet& obs, const BlockLayout& lay, int m) {
    const int gx = obs.gamma_x();
    if (gx == 0) throw EmptyExplanatoryBlock("local_average_X: no explanatory series");
    Vector xhat(gx);
    const double lo = lay.s[static_cast<std::size_t>(m - 1)];
    const double hi = lay.s[static_cast<std::size_t>(m)];
    for (int l = 0; l < gx; ++l) {
        const auto& c = obs.x[static_cast<std::size_t>(l)];
        auto it0 = std::lower_bound(c.times.begin(), c.times.end(), lo);
        auto it1 = std::lower_bound(c.times.begin(), c.times.end(), hi);
        if (it0 == it1) throw EmptyExplanatoryBlock("local_average_X: empty block " + std::to_string(m));
        double sum = 0.0;
        for (auto it = it0; it != it1; ++it)
            sum += c.values[static_cast<std::size_t>(it - c.times.begin())];
        xhat(l) = sum / static_cast<double>(it1 - it0);
    }
    return xhat;
}

/**
 * @brief Noise-variance estimator v_hat_k = (2 J_k)^{-1} sum_{i,m} (Z^k_{i,m})^2,
 *        using all within-block increments.
 */
inline Vector estimate_noise_variance(const ObservationSet& obs, const BlockLayout& lay) {
    const int gamma = obs.gamma();
    Vector v = Vector::Zero(gamma);
    for (int j = 0; j < gamma; ++j) {
        const auto& vals = obs.y[static_cast<std::size_t>(j)].values;
        double acc = 0.0;
        for (int m = 1; m <= lay.ell_n; ++m) {
            const int Kprev = lay.K[static_cast<std::size_t>(m - 1)][static_cast<std::size_t>(j)];
            const int kmj = lay.k[static_cast<std::size_t>(m - 1)][static_cast<std::size_t>(j)];
            for (int l = 1; l <= kmj; ++l) {
                const double z = vals[static_cast<std::size_t>(Kprev + l + 1)] - vals[static_cast<std::size_t>(Kprev + l)];
                acc += z * z;
            }
        }
        v(j) = acc / (2.0 * static_cast<double>(vals.size()));
    }
    return v;
}

}  // namespace covol
