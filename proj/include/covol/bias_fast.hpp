/**
 * @file bias_fast.hpp
 * @brief Pre-averaged local covariance estimates B_{m,n}, intensity
 *        estimates a_hat_m, the bias terms E_m/F_m/G_m, the bias-corrected
 *        objective (definitional and simplified forms), and the fast
 *        objective with its square-root-derivative gradient.
 *
 * The fast objective touches only gamma-sized matrices: no factorization of
 * size larger than gamma happens anywhere in dot_objective.
 */
#pragma once

#include <cmath>
#include <functional>
#include <mutex>
#include <vector>

#include "covol/matan.hpp"
#include "covol/quasilik.hpp"

namespace covol {

/// Pre-averaging weight function on [0,1] with g(0) = g(1) = 0.
struct WeightFn {
    std::function<double(double)> g;
    double psi1 = 0.0;  ///< integral of g^2
    double psi2 = 0.0;  ///< integral of (g')^2

    /// Default triangle g(x) = min(x, 1-x): psi1 = 1/12, psi2 = 1.
    static WeightFn triangle() {
        WeightFn w;
        w.g = [](double x) { return std::min(x, 1.0 - x); };
        w.psi1 = 1.0 / 12.0;
        w.psi2 = 1.0;
        return w;
    }
};

/// Intensity estimate a_hat_m^i = k_m^i / (T k_n v_hat_i), zero when v_hat_i = 0.
inline Vector intensity_hat(const BlockLayout& lay, const Vector& vhat, int m) {
    const int gamma = static_cast<int>(vhat.size());
    Vector a(gamma);
    for (int i = 0; i < gamma; ++i) {
        const double k = static_cast<double>(lay.k[static_cast<std::size_t>(m - 1)][static_cast<std::size_t>(i)]);
        a(i) = vhat(i) > 0.0 ? k / (lay.T * lay.k_n() * vhat(i)) : 0.0;
    }
    return a;
}

/**
 * @brief Pre-averaged local covariance
 *        [B_{m,n}]_{ij} = (ell_n / (T psi1)) [ (sum_l g_l^i Z^i_l)(sum_l g_l^j Z^j_l)
 *                         - (v_hat_i / k_m^i) psi2 1{i=j} ],
 *        g_l^j = g(l / (k_m^j + 1)).
 */
inline Matrix preaveraged_B(const ObservationSet& obs, const BlockLayout& lay, const Vector& vhat,
                            const WeightFn& w, int m) {
    const int gamma = obs.gamma();
    for (int i = 0; i < gamma; ++i)
        if (lay.k[static_cast<std::size_t>(m - 1)][static_cast<std::size_t>(i)] < 2)
            throw BlockTooSmall("preaveraged_B: block " + std::to_string(m) + " needs k >= 2");
    Vector Z = block_increments(obs, lay, m);
    Vector wsum(gamma);
    int pos = 0;
    for (int i = 0; i < gamma; ++i) {
        const int k = lay.k[static_cast<std::size_t>(m - 1)][static_cast<std::size_t>(i)];
        double acc = 0.0;
        for (int l = 1; l <= k; ++l) acc += w.g(static_cast<double>(l) / (k + 1)) * Z(pos + l - 1);
        wsum(i) = acc;
        pos += k;
    }
    const double scale = lay.ell_n / (lay.T * w.psi1);
    Matrix B(gamma, gamma);
    for (int i = 0; i < gamma; ++i)
        for (int j = 0; j < gamma; ++j) {
            double val = wsum(i) * wsum(j);
            if (i == j)
                val -= vhat(i) / lay.k[static_cast<std::size_t>(m - 1)][static_cast<std::size_t>(i)] * w.psi2;
            B(i, j) = scale * val;
        }
    return B;
}

/// Per-block pre-averaged estimates plus the model inputs for Sigma_m.
struct PreAveraged {
    double T = 1.0;
    int ell_n = 0;
    double b_n = 0.0;
    std::vector<int> ms;       ///< usable block indices m in 2..ell_n
    std::vector<Matrix> B;     ///< B_{m,n} per usable block
    std::vector<Vector> a;     ///< a_hat_m per usable block
    std::vector<double> t;     ///< time input (from X_hat_{m-1})
    std::vector<Vector> x;     ///< explanatory input (X_hat_{m-1} without time)
    std::vector<int> skipped;
    Vector vhat;
};

/// Compute B_{m,n}, a_hat_m, and model inputs for every usable block m >= 2.
inline PreAveraged compute_preaveraged(const ObservationSet& obs, const BlockLayout& lay,
                                       const Vector& vhat, const WeightFn& w) {
    PreAveraged pa;
    pa.T = lay.T;
    pa.ell_n = lay.ell_n;
    pa.b_n = lay.b_n;
    pa.vhat = vhat;
    for (int m = 2; m <= lay.ell_n; ++m) {
        bool ok = lay.usable(m) && lay.usable(m - 1);
        for (int i = 0; ok && i < obs.gamma(); ++i)
            if (lay.k[static_cast<std::size_t>(m - 1)][static_cast<std::size_t>(i)] < 2) ok = false;
        Vector xhat;
        if (ok) {
            try {
                xhat = local_average_X(obs, lay, m - 1);
            } catch (const EmptyExplanatoryBlock&) {
                ok = false;
            }
        }
        if (!ok) {
            pa.skipped.push_back(m);
            continue;
        }
        pa.ms.push_back(m);
        pa.B.push_back(preaveraged_B(obs, lay, vhat, w, m));
        pa.a.push_back(intensity_hat(lay, vhat, m));
        pa.t.push_back(xhat(0));
        pa.x.push_back(xhat.tail(xhat.size() - 1));
    }
    return pa;
}

/// Bias terms for one block.
struct BiasTerms {
    double E = 0.0;
    double F = 0.0;
    double G = 0.0;
};

namespace detail {

/// tr(A(a) X A(a) (A(a) B A(a))^{-1/2}) restricted to the support of a, and
/// tr((A(a) B A(a))^{1/2}); entries with a_i = 0 contribute nothing.
inline void scaled_sqrt_traces(const Vector& a, const Matrix& B, const Matrix& X, double* tr_inv,
                               double* tr_sqrt) {
    std::vector<int> sup;
    for (int i = 0; i < a.size(); ++i)
        if (a(i) > 0.0) sup.push_back(i);
    const int ns = static_cast<int>(sup.size());
    if (ns == 0) {
        *tr_inv = 0.0;
        *tr_sqrt = 0.0;
        return;
    }
    Matrix D(ns, ns), Xs(ns, ns);
    for (int i = 0; i < ns; ++i)
        for (int j = 0; j < ns; ++j) {
            const double s = std::sqrt(a(sup[static_cast<std::size_t>(i)]) * a(sup[static_cast<std::size_t>(j)]));
            D(i, j) = s * B(sup[static_cast<std::size_t>(i)], sup[static_cast<std::size_t>(j)]);
            Xs(i, j) = s * X(sup[static_cast<std::size_t>(i)], sup[static_cast<std::size_t>(j)]);
        }
    EigenFactorization f = sym_eigen(D);
    if (f.lambda(f.lambda.size() - 1) <= 0.0) throw NotPD("bias_terms: A(a) B A(a) not PD");
    Vector inv_sqrt = f.lambda.cwiseSqrt().cwiseInverse();
    Matrix Dm = f.U * inv_sqrt.asDiagonal() * f.U.transpose();
    *tr_inv = (Dm.array() * Xs.array()).sum();
    *tr_sqrt = f.lambda.cwiseSqrt().sum();
}

}  // namespace detail

/**
 * @brief Bias terms per block:
 *        E_m = tr(S^{-1}(B,v) S(C,v)) - (1/2) T b_n^{1/2} ell_n^{-1} tr(A(C-B)A (ABA)^{-1/2}),
 *        F_m = log det S(B,v) - T b_n^{1/2} ell_n^{-1} tr((ABA)^{1/2}),
 *        G_m = E_m + F_m, with A = A(a) = diag(a_j^{1/2}).
 */
inline BiasTerms bias_terms(const Vector& a, const Matrix& B, const Matrix& C, const Vector& v,
                            const BlockLayout& lay, int m) {
    LocalCovariance lcB = assemble_S(B, v, lay, m);
    LocalCovariance lcC = assemble_S(C, v, lay, m, false);
    const double c = lay.T * std::sqrt(lay.b_n) / lay.ell_n;
    double tr_inv = 0.0, tr_sqrt = 0.0;
    detail::scaled_sqrt_traces(a, B, C - B, &tr_inv, &tr_sqrt);
    BiasTerms out;
    out.E = (lcB.llt.solve(lcC.S)).trace() - 0.5 * c * tr_inv;
    out.F = lcB.log_det() - c * tr_sqrt;
    out.G = out.E + out.F;
    return out;
}

/// Objective evaluation carrying both algebraic forms for cross-checking.
struct CheckEval {
    double value = 0.0;             ///< definitional form H_n + (1/2) sum G_m
    double value_simplified = 0.0;  ///< simplified trace form
    Vector grad_theta;
    std::vector<int> skipped;
};

/**
 * @brief Bias-corrected objective: definitional form
 *        H_n + (1/2) sum_{m=2} G_m(a_hat_m, Sigma_m(theta), B_{m,n}, v_hat)
 *        and the simplified form
 *        -sum_m { (1/2) tr(S_m^{-1}(Z Z^T - S_m(B_{m,n}, v_hat)))
 *                 + (1/4) T b_n^{1/2} ell_n^{-1} tr((D_dag + D) D^{-1/2}) },
 *        D = A(a_hat) Sigma_m A(a_hat), D_dag = A(a_hat) B_{m,n} A(a_hat).
 *
 * Both forms are evaluated and must agree to 1e-8 relative; a mismatch
 * raises SimplificationMismatch. The gradient uses the simplified form.
 */
inline CheckEval check_objective(const VolatilityModel& model, const Vector& theta, const Vector& vhat,
                                 const ObservationSet& obs, const BlockLayout& lay, const WeightFn& w,
                                 bool want_gradient = false, int n_threads = 1) {
    model.check_theta(theta);
    PreAveraged pa = compute_preaveraged(obs, lay, vhat, w);
    const int nb = static_cast<int>(pa.ms.size());
    const double c = lay.T * std::sqrt(lay.b_n) / lay.ell_n;
    std::vector<double> def_terms(static_cast<std::size_t>(nb), 0.0);
    std::vector<double> simp_terms(static_cast<std::size_t>(nb), 0.0);
    std::vector<Vector> gtheta(static_cast<std::size_t>(nb));
    std::exception_ptr err;
    std::mutex err_mu;

    parallel_for(static_cast<std::size_t>(nb), static_cast<unsigned>(n_threads), [&](std::size_t idx) {
        try {
            const int m = pa.ms[idx];
            const Matrix& C = pa.B[idx];
            const Vector& a = pa.a[idx];
            Matrix Sigma = model.eval(pa.t[idx], pa.x[idx], theta);
            LocalCovariance lc = assemble_S(Sigma, vhat, lay, m);
            Vector Z = block_increments(obs, lay, m);
            Vector alpha = lc.llt.solve(Z);

            // Definitional form: H-block plus (1/2) G_m.
            const double h_m = -0.5 * (Z.dot(alpha) + lc.log_det());
            BiasTerms bt = bias_terms(a, Sigma, C, vhat, lay, m);
            def_terms[idx] = h_m + 0.5 * bt.G;

            // Simplified form: W = Z Z^T - S_m(B_{m,n}, v_hat) enters a single trace.
            LocalCovariance lcC = assemble_S(C, vhat, lay, m, false);
            const double tr1 = Z.dot(alpha) - lc.llt.solve(lcC.S).trace();
            const int gamma = Sigma.rows();
            Matrix A = Matrix::Zero(gamma, gamma);
            for (int i = 0; i < gamma; ++i) A(i, i) = std::sqrt(std::max(a(i), 0.0));
            Matrix D = A * Sigma * A;
            Matrix Ddag = A * C * A;
            EigenFactorization f = sym_eigen(D);
            if (f.lambda(f.lambda.size() - 1) <= 0.0)
                throw NotPD("check_objective: D not PD in block " + std::to_string(m));
            Vector sq = f.lambda.cwiseSqrt();
            Matrix Dmh = f.U * sq.cwiseInverse().asDiagonal() * f.U.transpose();
            const double tr2 = (Ddag.array() * Dmh.array()).sum() + sq.sum();
            simp_terms[idx] = -(0.5 * tr1 + 0.25 * c * tr2);

            if (want_gradient) {
                // d(term1)/dSigma: (1/2) <(S^{-1} W S^{-1})_block(k,l), G_kl>,
                // W = Z Z^T - S(C, v_hat).
                Matrix SinvW = alpha * alpha.transpose() - lc.llt.solve(lc.llt.solve(lcC.S).transpose());
                Matrix gm(gamma, gamma);
                for (int k = 0; k < gamma; ++k)
                    for (int l = 0; l < gamma; ++l) {
                        Matrix pat = overlap_matrix(lay, m, k, l);
                        const auto sb = SinvW.block(lc.offset[static_cast<std::size_t>(k)],
                                                    lc.offset[static_cast<std::size_t>(l)], pat.rows(), pat.cols());
                        gm(k, l) = 0.5 * (sb.array() * pat.array()).sum();
                    }
                // d(term2)/dD = U [(U^T (I - R) U)_{ij} / (sqrt(l_i) + sqrt(l_j))] U^T
                // with R = D^{-1/2} D_dag D^{-1/2}; then chain through D = A Sigma A.
                Matrix R = Dmh * Ddag * Dmh;
                Matrix W2 = f.U.transpose() * (Matrix::Identity(gamma, gamma) - R) * f.U;
                for (int i = 0; i < gamma; ++i)
                    for (int j = 0; j < gamma; ++j) W2(i, j) /= sq(i) + sq(j);
                Matrix Gd = f.U * W2 * f.U.transpose();
                gm -= 0.25 * c * (A * Gd * A);
                gtheta[idx] = model.vjp(pa.t[idx], pa.x[idx], theta, gm);
            }
        } catch (...) {
            std::lock_guard<std::mutex> lock(err_mu);
            if (!err) err = std::current_exception();
        }
    });
    if (err) std::rethrow_exception(err);

    CheckEval out;
    out.skipped = pa.skipped;
    out.value = pairwise_sum(def_terms);
    out.value_simplified = pairwise_sum(simp_terms);
    if (std::abs(out.value - out.value_simplified) > 1e-8 * (1.0 + std::abs(out.value)))
        throw SimplificationMismatch("check_objective: forms disagree");
    if (want_gradient) {
        out.grad_theta = Vector::Zero(theta.size());
        for (const auto& g : gtheta)
            if (g.size() == theta.size()) out.grad_theta += g;
    }
    return out;
}

/// Fast objective evaluation result.
struct DotEval {
    double value = 0.0;
    Vector grad_theta;
};

/**
 * @brief Fast objective
 *        value = -(T / (4 ell_n)) sum_m tr((D_dag + D) D^{-1/2}),
 *        gradient via tr(dD^{1/2} (I - D^{-1/2} D_dag D^{-1/2})) chained
 *        through D = A(a_hat) Sigma(theta) A(a_hat).
 *
 * Works entirely on gamma-sized matrices; cost per block is independent of
 * the within-block increment counts.
 */
inline DotEval dot_objective(const VolatilityModel& model, const Vector& theta, const PreAveraged& pa,
                             bool want_gradient = false, int n_threads = 1) {
    model.check_theta(theta);
    const int nb = static_cast<int>(pa.ms.size());
    const double pref = -pa.T / (4.0 * pa.ell_n);
    std::vector<double> terms(static_cast<std::size_t>(nb), 0.0);
    std::vector<Vector> gtheta(static_cast<std::size_t>(nb));
    std::exception_ptr err;
    std::mutex err_mu;

    parallel_for(static_cast<std::size_t>(nb), static_cast<unsigned>(n_threads), [&](std::size_t idx) {
        try {
            const int gamma = model.gamma();
            Matrix Sigma = model.eval(pa.t[idx], pa.x[idx], theta);
            Matrix A = Matrix::Zero(gamma, gamma);
            for (int i = 0; i < gamma; ++i) A(i, i) = std::sqrt(std::max(pa.a[idx](i), 0.0));
            Matrix D = A * Sigma * A;
            Matrix Ddag = A * pa.B[idx] * A;
            EigenFactorization f = sym_eigen(D);
            if (f.lambda(f.lambda.size() - 1) <= 0.0)
                throw NotPD("dot_objective: D not PD in block " + std::to_string(pa.ms[idx]));
            Vector sq = f.lambda.cwiseSqrt();
            Matrix Dmh = f.U * sq.cwiseInverse().asDiagonal() * f.U.transpose();
            terms[idx] = (Ddag.array() * Dmh.array()).sum() + sq.sum();
            if (want_gradient) {
                Matrix R = Dmh * Ddag * Dmh;
                Matrix W2 = f.U.transpose() * (Matrix::Identity(gamma, gamma) - R) * f.U;
                for (int i = 0; i < gamma; ++i)
                    for (int j = 0; j < gamma; ++j) W2(i, j) /= sq(i) + sq(j);
                Matrix Gd = pref * (f.U * W2 * f.U.transpose());
                gtheta[idx] = model.vjp(pa.t[idx], pa.x[idx], theta, A * Gd * A);
            }
        } catch (...) {
            std::lock_guard<std::mutex> lock(err_mu);
            if (!err) err = std::current_exception();
        }
    });
    if (err) std::rethrow_exception(err);

    DotEval out;
    out.value = pref * pairwise_sum(terms);
    if (!std::isfinite(out.value)) throw NonFinite("dot_objective: value not finite");
    if (want_gradient) {
        out.grad_theta = Vector::Zero(theta.size());
        for (const auto& g : gtheta)
            if (g.size() == theta.size()) out.grad_theta += g;
    }
    return out;
}

}  // namespace covol
