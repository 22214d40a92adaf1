/**
 * @file metrics.hpp
 * @brief Divergence D between co-volatility paths, its L2 sandwich, the MSE
 *        evaluation grids, and the asymptotic-variance matrices Gamma_1 and
 *        Gamma_2.
 *
 * Scaling convention: [D(t, A)]_{ij} = [A]_{ij} (a^i a^j)^{1/2} (v_i v_j)^{-1/2}
 * for intensities a and noise variances v.
 */
#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "covol/matan.hpp"
#include "covol/models.hpp"

namespace covol {

/// A co-volatility path on a time grid, with intensities and noise variances.
struct ScaledVolPath {
    std::vector<double> t;      ///< strictly increasing grid covering [0, T]
    std::vector<Matrix> Sigma;  ///< Sigma(t) per grid point
    std::vector<Vector> a;      ///< intensities a_t^j > 0 per grid point
    Vector v;                   ///< noise variances v_j > 0
    std::vector<Vector> x;      ///< explanatory input per grid point (for models)

    int gamma() const { return v.size() > 0 ? static_cast<int>(v.size()) : 0; }

    void validate() const {
        if (t.size() < 2) throw BadConfig("ScaledVolPath: need at least two grid points");
        if (Sigma.size() != t.size() || a.size() != t.size())
            throw ShapeMismatch("ScaledVolPath: per-point sizes mismatch");
        for (std::size_t i = 1; i < t.size(); ++i)
            if (!(t[i] > t[i - 1])) throw BadConfig("ScaledVolPath: grid not increasing");
        for (const auto& ai : a)
            for (int j = 0; j < ai.size(); ++j)
                if (!(ai(j) > 0.0)) throw BadConfig("ScaledVolPath: intensities must be positive");
        for (int j = 0; j < v.size(); ++j)
            if (!(v(j) > 0.0)) throw BadConfig("ScaledVolPath: noise variances must be positive");
    }

    /// Scaled matrix D(t_idx, Sigma_idx).
    Matrix scaled(std::size_t idx) const {
        const int g = static_cast<int>(v.size());
        Matrix d(g, g);
        for (int i = 0; i < g; ++i)
            for (int j = 0; j < g; ++j)
                d(i, j) = Sigma[idx](i, j) * std::sqrt(a[idx](i) * a[idx](j) / (v(i) * v(j)));
        return d;
    }
};

namespace detail {

inline void require_shared_grid(const ScaledVolPath& p1, const ScaledVolPath& p2) {
    p1.validate();
    p2.validate();
    if (p1.t.size() != p2.t.size()) throw ShapeMismatch("paths: grid size mismatch");
    for (std::size_t i = 0; i < p1.t.size(); ++i)
        if (p1.t[i] != p2.t[i]) throw BadConfig("paths: grids differ");
}

inline double trapezoid(const std::vector<double>& t, const std::vector<double>& f) {
    double acc = 0.0;
    for (std::size_t i = 1; i < t.size(); ++i) acc += 0.5 * (f[i] + f[i - 1]) * (t[i] - t[i - 1]);
    return acc;
}

}  // namespace detail

/**
 * @brief Divergence D(Sigma_1, Sigma_2): trapezoidal quadrature of
 *        (1/4) tr((D_2^{1/2} - D_1^{1/2})^2 D_1^{-1/2}).
 *
 * The three-term form (1/4) tr((D_2 - D_1) D_1^{-1/2}) - (1/2) tr(D_2^{1/2})
 * + (1/2) tr(D_1^{1/2}) is evaluated alongside and must agree pointwise to
 * 1e-9 relative.
 */
inline double divergence_D(const ScaledVolPath& p1, const ScaledVolPath& p2) {
    detail::require_shared_grid(p1, p2);
    std::vector<double> f(p1.t.size());
    for (std::size_t i = 0; i < p1.t.size(); ++i) {
        Matrix d1 = p1.scaled(i);
        Matrix d2 = p2.scaled(i);
        EigenFactorization e1 = sym_eigen(d1);
        if (e1.lambda(e1.lambda.size() - 1) <= 0.0) throw NotPD("divergence_D: Sigma_1 not PD");
        Vector sq1 = e1.lambda.cwiseSqrt();
        Matrix r1 = e1.U * sq1.cwiseInverse().asDiagonal() * e1.U.transpose();
        Matrix s1 = e1.U * sq1.asDiagonal() * e1.U.transpose();
        Matrix s2 = sym_sqrt(d2);
        Matrix diff = s2 - s1;
        const double form2 = 0.25 * (diff * diff * r1).trace();
        const double form1 =
            0.25 * ((d2 - d1) * r1).trace() - 0.5 * s2.trace() + 0.5 * s1.trace();
        if (std::abs(form1 - form2) > 1e-9 * (1.0 + std::abs(form2)))
            throw Error("divergence_D: displayed forms disagree");
        f[i] = form2;
    }
    return detail::trapezoid(p1.t, f);
}

/// L2 sandwich verification result.
struct SandwichResult {
    double L2 = 0.0;
    double D = 0.0;
    double C1 = 0.0;
    double C2 = 0.0;
    bool holds = false;
};

/**
 * @brief Verify C1 * L2 <= D <= C2 * L2 with L2 = integral of the squared
 *        Frobenius norm of Sigma_1 - Sigma_2.
 *
 * The constants, with rho = inf a_j / v_j,
 * mu = sup a_j / v_j, S = sup ||Sigma_1^{-1}||, M1 = sup ||D_1^{1/2}||,
 * M2 = sup ||D_2^{1/2}||:
 *   C2 = (1/4) rho^{-3/2} S^{3/2} mu^2,
 *   C1 = (1/4) rho^2 / (M1 (M1 + M2)^2).
 */
inline SandwichResult l2_sandwich_check(const ScaledVolPath& p1, const ScaledVolPath& p2) {
    detail::require_shared_grid(p1, p2);
    SandwichResult out;
    out.D = divergence_D(p1, p2);
    std::vector<double> f(p1.t.size());
    double rho = std::numeric_limits<double>::infinity();
    double mu = 0.0, S = 0.0, M1 = 0.0, M2 = 0.0;
    for (std::size_t i = 0; i < p1.t.size(); ++i) {
        Matrix diff = p1.Sigma[i] - p2.Sigma[i];
        f[i] = diff.squaredNorm();
        for (int j = 0; j < p1.v.size(); ++j) {
            const double r = p1.a[i](j) / p1.v(j);
            rho = std::min(rho, r);
            mu = std::max(mu, r);
        }
        EigenFactorization e1 = sym_eigen(p1.Sigma[i]);
        if (e1.lambda(e1.lambda.size() - 1) <= 0.0) throw NotPD("l2_sandwich_check: Sigma_1 not PD");
        S = std::max(S, 1.0 / e1.lambda(e1.lambda.size() - 1));
        EigenFactorization d1 = sym_eigen(p1.scaled(i));
        EigenFactorization d2 = sym_eigen(p2.scaled(i));
        M1 = std::max(M1, std::sqrt(std::max(0.0, d1.lambda(0))));
        M2 = std::max(M2, std::sqrt(std::max(0.0, d2.lambda(0))));
    }
    out.L2 = detail::trapezoid(p1.t, f);
    out.C2 = 0.25 * std::pow(rho, -1.5) * std::pow(S, 1.5) * mu * mu;
    out.C1 = (M1 > 0.0) ? 0.25 * rho * rho / (M1 * (M1 + M2) * (M1 + M2)) : 0.0;
    const double tol = 1e-12 * (1.0 + std::abs(out.D));
    out.holds = (out.C1 * out.L2 <= out.D + tol) && (out.D <= out.C2 * out.L2 + tol);
    return out;
}

/// Grid choice for the section-4 MSE summaries.
enum class MseGrid { k1, k2 };

/**
 * @brief 1-d MSE_k = sqrt((1/20) sum_i |Sigma(0, x_i, theta) - Sigma_dag(x_i)|^2)
 *        with x_i = 0.1 i (k1) or 0.1 + 0.1 i (k2).
 */
inline double mse_grid_1d(const VolatilityModel& model, const Vector& theta,
                          const std::function<double(double)>& truth, MseGrid grid) {
    double acc = 0.0;
    for (int i = 1; i <= 20; ++i) {
        const double xi = (grid == MseGrid::k1) ? 0.1 * i : 0.1 + 0.1 * i;
        Vector x(1);
        x << xi;
        const double diff = model.eval(0.0, x, theta)(0, 0) - truth(xi);
        acc += diff * diff;
    }
    return std::sqrt(acc / 20.0);
}

/**
 * @brief 2-d MSE_k over the (t_j, x_i, x_l) grid, t_j = 0.05 j:
 *        sqrt((1/8000) sum_{i,j,l} sum_{m,m'} [Sigma - Sigma_dag]^2_{m,m'}).
 */
inline double mse_grid_2d(const VolatilityModel& model, const Vector& theta,
                          const std::function<Matrix(double, double, double)>& truth, MseGrid grid) {
    double acc = 0.0;
    for (int j = 1; j <= 20; ++j)
        for (int i = 1; i <= 20; ++i)
            for (int l = 1; l <= 20; ++l) {
                const double tj = 0.05 * j;
                const double xi = (grid == MseGrid::k1) ? 0.1 * i : 0.1 + 0.1 * i;
                const double xl = (grid == MseGrid::k1) ? 0.1 * l : 0.1 + 0.1 * l;
                Vector x(2);
                x << xi, xl;
                Matrix diff = model.eval(tj, x, theta) - truth(tj, xi, xl);
                acc += diff.squaredNorm();
            }
    return std::sqrt(acc / 8000.0);
}

namespace detail {

/// Full Jacobian dSigma/dtheta_i as matrices, recovered from vjp with basis
/// cotangents.
inline std::vector<Matrix> sigma_jacobian(const VolatilityModel& model, double t, const Vector& x,
                                          const Vector& theta) {
    const int g = model.gamma();
    const int d = model.n_params();
    std::vector<Matrix> J(static_cast<std::size_t>(d), Matrix::Zero(g, g));
    for (int k = 0; k < g; ++k)
        for (int l = k; l < g; ++l) {
            Matrix e = Matrix::Zero(g, g);
            if (k == l)
                e(k, k) = 1.0;
            else
                e(k, l) = e(l, k) = 0.5;
            Vector col = model.vjp(t, x, theta, e);
            for (int i = 0; i < d; ++i) {
                J[static_cast<std::size_t>(i)](k, l) = col(i);
                J[static_cast<std::size_t>(i)](l, k) = col(i);
            }
        }
    return J;
}

/// Scale a symmetric matrix into D-space: entry (i,j) times sqrt(a_i a_j / (v_i v_j)).
inline Matrix to_scaled(const Matrix& A, const Vector& a, const Vector& v) {
    Matrix d(A.rows(), A.cols());
    for (int i = 0; i < A.rows(); ++i)
        for (int j = 0; j < A.cols(); ++j) d(i, j) = A(i, j) * std::sqrt(a(i) * a(j) / (v(i) * v(j)));
    return d;
}

/// Analytic dD^{1/2}/dtheta_i at one grid point for all i.
inline std::vector<Matrix> sqrt_derivatives(const VolatilityModel& model, const Vector& theta,
                                            const ScaledVolPath& truth, std::size_t idx) {
    Matrix D = to_scaled(model.eval(truth.t[idx], truth.x[idx], theta), truth.a[idx], truth.v);
    auto J = sigma_jacobian(model, truth.t[idx], truth.x[idx], theta);
    std::vector<Matrix> dP;
    dP.reserve(J.size());
    for (const auto& dS : J) dP.push_back(sym_sqrt_derivative(D, to_scaled(dS, truth.a[idx], truth.v)));
    return dP;
}

}  // namespace detail

/// Model path sharing the truth path's grid, intensities, and noise.
inline ScaledVolPath model_vol_path(const VolatilityModel& model, const Vector& theta,
                                    const ScaledVolPath& truth) {
    if (truth.x.size() != truth.t.size()) throw ShapeMismatch("model_vol_path: missing x inputs");
    ScaledVolPath p = truth;
    for (std::size_t i = 0; i < p.t.size(); ++i)
        p.Sigma[i] = model.eval(truth.t[i], truth.x[i], theta);
    return p;
}

/**
 * @brief Gamma_1 = (1/2) int { tr(D^{-1/2} d_i D^{1/2} d_j D^{1/2})
 *        + K1(D, d_i D, d_j D, D_dag - D) + K2(D, d_i D, d_j D, D_dag - D) } dt.
 */
inline Matrix gamma1(const VolatilityModel& model, const Vector& theta, const ScaledVolPath& truth) {
    truth.validate();
    const int d = model.n_params();
    const std::size_t npts = truth.t.size();
    std::vector<std::vector<double>> f(static_cast<std::size_t>(d * d),
                                       std::vector<double>(npts, 0.0));
    for (std::size_t idx = 0; idx < npts; ++idx) {
        Matrix D = detail::to_scaled(model.eval(truth.t[idx], truth.x[idx], theta), truth.a[idx], truth.v);
        Matrix Ddag = truth.scaled(idx);
        Matrix C = Ddag - D;
        EigenFactorization e = sym_eigen(D);
        if (e.lambda(e.lambda.size() - 1) <= 0.0) throw NotPD("gamma1: model D not PD");
        Matrix Dmh = e.U * e.lambda.cwiseSqrt().cwiseInverse().asDiagonal() * e.U.transpose();
        auto J = detail::sigma_jacobian(model, truth.t[idx], truth.x[idx], theta);
        std::vector<Matrix> dD;
        for (const auto& dS : J) dD.push_back(detail::to_scaled(dS, truth.a[idx], truth.v));
        std::vector<Matrix> dP;
        for (const auto& dd : dD) dP.push_back(sym_sqrt_derivative(D, dd));
        for (int i = 0; i < d; ++i)
            for (int j = i; j < d; ++j) {
                const double fisher =
                    0.5 * ((Dmh * dP[static_cast<std::size_t>(i)] * dP[static_cast<std::size_t>(j)]).trace() +
                           (Dmh * dP[static_cast<std::size_t>(j)] * dP[static_cast<std::size_t>(i)]).trace());
                f[static_cast<std::size_t>(i * d + j)][idx] =
                    0.5 * (fisher +
                           frak_k1(D, dD[static_cast<std::size_t>(i)], dD[static_cast<std::size_t>(j)], C) +
                           frak_k2(D, dD[static_cast<std::size_t>(i)], dD[static_cast<std::size_t>(j)], C));
            }
    }
    Matrix out(d, d);
    for (int i = 0; i < d; ++i)
        for (int j = i; j < d; ++j) {
            out(i, j) = detail::trapezoid(truth.t, f[static_cast<std::size_t>(i * d + j)]);
            out(j, i) = out(i, j);
        }
    return out;
}

/**
 * @brief Gamma_2: the Hessian of sigma -> D(Sigma(sigma), Sigma_dag),
 *        entry (i, j) = (1/4) int { tr(d2_{ij} P (I - P^{-1} D_dag P^{-1}))
 *        + tr(D_dag P^{-1} d_i P P^{-1} d_j P P^{-1})
 *        + tr(d_i P P^{-1} D_dag P^{-1} d_j P P^{-1}) } dt with P = D^{1/2}.
 *
 * Second derivatives of P use central finite differences of the analytic
 * first derivative, step 1e-4 (1 + |theta_j|).
 */
inline Matrix gamma2(const VolatilityModel& model, const Vector& theta, const ScaledVolPath& truth) {
    truth.validate();
    const int d = model.n_params();
    const std::size_t npts = truth.t.size();
    std::vector<std::vector<double>> f(static_cast<std::size_t>(d * d),
                                       std::vector<double>(npts, 0.0));
    for (std::size_t idx = 0; idx < npts; ++idx) {
        Matrix D = detail::to_scaled(model.eval(truth.t[idx], truth.x[idx], theta), truth.a[idx], truth.v);
        Matrix Ddag = truth.scaled(idx);
        EigenFactorization e = sym_eigen(D);
        if (e.lambda(e.lambda.size() - 1) <= 0.0) throw NotPD("gamma2: model D not PD");
        Vector sq = e.lambda.cwiseSqrt();
        Matrix Pinv = e.U * sq.cwiseInverse().asDiagonal() * e.U.transpose();
        Matrix M = Matrix::Identity(D.rows(), D.cols()) - Pinv * Ddag * Pinv;
        auto dP = detail::sqrt_derivatives(model, theta, truth, idx);
        for (int j = 0; j < d; ++j) {
            const double h = 1e-4 * (1.0 + std::abs(theta(j)));
            Vector tp = theta, tm = theta;
            tp(j) += h;
            tm(j) -= h;
            auto dPp = detail::sqrt_derivatives(model, tp, truth, idx);
            auto dPm = detail::sqrt_derivatives(model, tm, truth, idx);
            for (int i = 0; i <= j; ++i) {
                Matrix d2P = (dPp[static_cast<std::size_t>(i)] - dPm[static_cast<std::size_t>(i)]) / (2.0 * h);
                const Matrix& Pi = dP[static_cast<std::size_t>(i)];
                const Matrix& Pj = dP[static_cast<std::size_t>(j)];
                const double val = 0.25 * ((d2P * M).trace() +
                                           (Ddag * Pinv * Pi * Pinv * Pj * Pinv).trace() +
                                           (Pi * Pinv * Ddag * Pinv * Pj * Pinv).trace());
                f[static_cast<std::size_t>(i * d + j)][idx] += val;
            }
        }
    }
    Matrix out(d, d);
    for (int j = 0; j < d; ++j)
        for (int i = 0; i <= j; ++i) {
            out(i, j) = detail::trapezoid(truth.t, f[static_cast<std::size_t>(i * d + j)]);
            out(j, i) = out(i, j);
        }
    // Symmetrize: mixed partials commute up to finite-difference error.
    out = 0.5 * (out + out.transpose()).eval();
    return out;
}

/// Standard errors Gamma_2^{-1} Gamma_1 Gamma_2^{-1} / sqrt(b_n) (diagonal sqrt).
inline Vector standard_errors(const Matrix& g1, const Matrix& g2, double b_n) {
    Eigen::LLT<Matrix> llt(g2);
    if (llt.info() != Eigen::Success) throw NotPD("standard_errors: Gamma_2 not PD");
    Matrix cov = llt.solve(g1) * llt.solve(Matrix::Identity(g2.rows(), g2.cols()));
    Vector se(g1.rows());
    for (int i = 0; i < g1.rows(); ++i) se(i) = std::sqrt(std::max(0.0, cov(i, i)) / std::sqrt(b_n));
    return se;
}

}  // namespace covol
