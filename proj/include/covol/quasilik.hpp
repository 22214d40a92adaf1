/**
 * @file quasilik.hpp
 * @brief Local covariance assembly S_m(B, v), the quasi-log-likelihood
 *        H_n(theta, v_hat) with analytic gradients, argmax helpers, and the
 *        series-expansion test oracles for S_m^{-1} and log det S_m.
 *
 * Gradient convention: per-block matrices G_m satisfy
 * dH = sum_{k,l} [G_m]_{kl} d[Sigma_m]_{kl} (full Frobenius inner product),
 * matching VolatilityModel::vjp.
 */
#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <mutex>
#include <vector>

#include "covol/models.hpp"
#include "covol/observation.hpp"

namespace covol {

/// Assembled local covariance for one block, with its Cholesky factor.
struct LocalCovariance {
    int m = 0;
    bool pd = false;
    Matrix S;
    Eigen::LLT<Matrix> llt;
    std::vector<int> offset;  ///< component offsets in the stacked index, size gamma+1

    double log_det() const {
        const Matrix& L = llt.matrixLLT();
        double acc = 0.0;
        for (int i = 0; i < L.rows(); ++i) acc += std::log(L(i, i));
        return 2.0 * acc;
    }
    double min_pivot() const {
        const Matrix& L = llt.matrixLLT();
        double p = std::numeric_limits<double>::infinity();
        for (int i = 0; i < L.rows(); ++i) p = std::min(p, L(i, i) * L(i, i));
        return p;
    }
};

/**
 * @brief Assemble S_m(B, v): diagonal blocks [B]_{kk} diag(|I^k_i|) + v_k M(k_m^k),
 *        off-diagonal blocks [B]_{kl} G_{k,l}.
 *
 * Throws NotPD when the Cholesky factorization fails and throw_on_fail is
 * set; otherwise the pd flag is left false.
 */
inline LocalCovariance assemble_S(const Matrix& B, const Vector& v, const BlockLayout& lay, int m,
                                  bool throw_on_fail = true) {
    const int gamma = static_cast<int>(lay.k[static_cast<std::size_t>(m - 1)].size());
    if (B.rows() != gamma || B.cols() != gamma) throw ShapeMismatch("assemble_S: B size");
    if (v.size() != gamma) throw ShapeMismatch("assemble_S: v size");
    if ((B - B.transpose()).cwiseAbs().maxCoeff() > 1e-12 * (1.0 + B.cwiseAbs().maxCoeff()))
        throw BadConfig("assemble_S: B not symmetric");
    for (int j = 0; j < gamma; ++j)
        if (v(j) < 0.0) throw BadConfig("assemble_S: negative noise variance");

    LocalCovariance lc;
    lc.m = m;
    lc.offset.assign(static_cast<std::size_t>(gamma) + 1, 0);
    for (int j = 0; j < gamma; ++j)
        lc.offset[static_cast<std::size_t>(j) + 1] =
            lc.offset[static_cast<std::size_t>(j)] + lay.k[static_cast<std::size_t>(m - 1)][static_cast<std::size_t>(j)];
    const int n = lc.offset.back();
    lc.S = Matrix::Zero(n, n);
    for (int k = 0; k < gamma; ++k) {
        const int kk = lay.k[static_cast<std::size_t>(m - 1)][static_cast<std::size_t>(k)];
        Matrix diag = B(k, k) * overlap_matrix(lay, m, k, k) + v(k) * tridiag_M(kk);
        lc.S.block(lc.offset[static_cast<std::size_t>(k)], lc.offset[static_cast<std::size_t>(k)], kk, kk) = diag;
        for (int l = k + 1; l < gamma; ++l) {
            const int kl = lay.k[static_cast<std::size_t>(m - 1)][static_cast<std::size_t>(l)];
            Matrix off = B(k, l) * overlap_matrix(lay, m, k, l);
            lc.S.block(lc.offset[static_cast<std::size_t>(k)], lc.offset[static_cast<std::size_t>(l)], kk, kl) = off;
            lc.S.block(lc.offset[static_cast<std::size_t>(l)], lc.offset[static_cast<std::size_t>(k)], kl, kk) =
                off.transpose();
        }
    }
    lc.llt.compute(lc.S);
    lc.pd = (lc.llt.info() == Eigen::Success);
    if (!lc.pd && throw_on_fail) throw NotPD("assemble_S: block " + std::to_string(m) + " not PD");
    return lc;
}

/// H_n evaluation result with per-block Sigma-gradients and diagnostics.
struct ObjectiveEval {
    double value = 0.0;
    Vector grad_theta;        ///< empty unless gradients were requested
    std::vector<Matrix> G;    ///< G[m-2] = dH/dSigma_m for m = 2..ell_n (empty if skipped)
    std::vector<int> skipped; ///< blocks excluded (layout gaps or empty X blocks)
    double min_pivot = std::numeric_limits<double>::infinity();
};

/**
 * @brief Quasi-log-likelihood H_n = -(1/2) sum_{m=2}^{ell_n} (Z^T S^-1 Z + log det S)
 *        with Sigma_m = model.eval at the block-(m-1) local average of X.
 *
 * Per-block work parallelizes over m; the scalar sum uses a fixed pairwise
 * reduction so results do not depend on the thread count.
 */
inline ObjectiveEval quasi_loglik(const VolatilityModel& model, const Vector& theta, const Vector& vhat,
                                  const ObservationSet& obs, const BlockLayout& lay,
                                  bool want_gradient = false, int n_threads = 1) {
    model.check_theta(theta);
    const int ell = lay.ell_n;
    const int nblocks = std::max(0, ell - 1);
    std::vector<double> terms(static_cast<std::size_t>(nblocks), 0.0);
    std::vector<Matrix> G(static_cast<std::size_t>(nblocks));
    std::vector<Vector> gtheta(static_cast<std::size_t>(nblocks));
    std::vector<char> used(static_cast<std::size_t>(nblocks), 0);
    std::vector<double> pivots(static_cast<std::size_t>(nblocks),
                               std::numeric_limits<double>::infinity());
    std::exception_ptr err;
    std::mutex err_mu;

    parallel_for(nblocks, n_threads, [&](int idx) {
        const int m = idx + 2;
        try {
            if (!lay.usable(m) || !lay.usable(m - 1)) return;
            Vector xhat;
            try {
                xhat = local_average_X(obs, lay, m - 1);
            } catch (const EmptyExplanatoryBlock&) {
                return;
            }
            const double t = xhat(0);
            const Vector x = xhat.tail(xhat.size() - 1);
            Matrix Sigma = model.eval(t, x, theta);
            LocalCovariance lc = assemble_S(Sigma, vhat, lay, m);
            Vector Z = block_increments(obs, lay, m);
            Vector alpha = lc.llt.solve(Z);
            terms[static_cast<std::size_t>(idx)] = Z.dot(alpha) + lc.log_det();
            pivots[static_cast<std::size_t>(idx)] = lc.min_pivot();
            used[static_cast<std::size_t>(idx)] = 1;
            if (want_gradient) {
                const int gamma = Sigma.rows();
                Matrix Sinv = lc.llt.solve(Matrix::Identity(lc.S.rows(), lc.S.rows()));
                Matrix gm(gamma, gamma);
                for (int k = 0; k < gamma; ++k)
                    for (int l = 0; l < gamma; ++l) {
                        Matrix pat = overlap_matrix(lay, m, k, l);
                        const int kk = pat.rows(), kl = pat.cols();
                        const auto sb = Sinv.block(lc.offset[static_cast<std::size_t>(k)],
                                                   lc.offset[static_cast<std::size_t>(l)], kk, kl);
                        const auto ak = alpha.segment(lc.offset[static_cast<std::size_t>(k)], kk);
                        const auto al = alpha.segment(lc.offset[static_cast<std::size_t>(l)], kl);
                        const double tr = (sb.array() * pat.array()).sum();
                        const double quad = ak.transpose() * pat * al;
                        gm(k, l) = -0.5 * (tr - quad);
                    }
                G[static_cast<std::size_t>(idx)] = gm;
                gtheta[static_cast<std::size_t>(idx)] = model.vjp(t, x, theta, gm);
            }
        } catch (...) {
            std::lock_guard<std::mutex> lock(err_mu);
            if (!err) err = std::current_exception();
        }
    });
    if (err) std::rethrow_exception(err);

    ObjectiveEval out;
    std::vector<double> contrib(static_cast<std::size_t>(nblocks), 0.0);
    for (int i = 0; i < nblocks; ++i) {
        if (!used[static_cast<std::size_t>(i)]) {
            out.skipped.push_back(i + 2);
            continue;
        }
        contrib[static_cast<std::size_t>(i)] = -0.5 * terms[static_cast<std::size_t>(i)];
        out.min_pivot = std::min(out.min_pivot, pivots[static_cast<std::size_t>(i)]);
    }
    out.value = pairwise_sum(contrib);
    if (!std::isfinite(out.value)) throw NonFinite("quasi_loglik: value not finite");
    out.G = std::move(G);
    if (want_gradient) {
        out.grad_theta = Vector::Zero(theta.size());
        for (int i = 0; i < nblocks; ++i)
            if (used[static_cast<std::size_t>(i)]) out.grad_theta += gtheta[static_cast<std::size_t>(i)];
    }
    return out;
}

/// Golden-section maximization of a unimodal scalar function on [lo, hi].
inline double golden_section_max(const std::function<double(double)>& f, double lo, double hi,
                                 double tol = 1e-8, std::vector<double>* trace = nullptr) {
    const double gr = (std::sqrt(5.0) - 1.0) / 2.0;
    double a = lo, b = hi;
    double c = b - gr * (b - a);
    double d = a + gr * (b - a);
    double fc = f(c), fd = f(d);
    if (!std::isfinite(fc) || !std::isfinite(fd)) throw NonFinite("golden_section_max");
    while (b - a > tol) {
        if (fc > fd) {
            b = d;
            d = c;
            fd = fc;
            c = b - gr * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + gr * (b - a);
            fd = f(d);
        }
        if (!std::isfinite(fc) || !std::isfinite(fd)) throw NonFinite("golden_section_max");
        if (trace) trace->push_back(std::max(fc, fd));
    }
    return 0.5 * (a + b);
}

/// Derivative-free Nelder-Mead maximization for small parameter vectors.
inline Vector nelder_mead_max(const std::function<double(const Vector&)>& f, Vector x0,
                              double step = 0.1, int max_iter = 2000, double tol = 1e-12,
                              std::vector<double>* trace = nullptr) {
    const int n = static_cast<int>(x0.size());
    auto neg = [&](const Vector& x) {
        const double v = f(x);
        if (!std::isfinite(v)) throw NonFinite("nelder_mead_max: objective not finite");
        return -v;
    };
    std::vector<Vector> pts(static_cast<std::size_t>(n) + 1, x0);
    std::vector<double> vals(static_cast<std::size_t>(n) + 1);
    for (int i = 0; i < n; ++i) pts[static_cast<std::size_t>(i) + 1](i) += step;
    for (std::size_t i = 0; i < pts.size(); ++i) vals[i] = neg(pts[i]);

    for (int it = 0; it < max_iter; ++it) {
        std::vector<std::size_t> ord(pts.size());
        for (std::size_t i = 0; i < ord.size(); ++i) ord[i] = i;
        std::sort(ord.begin(), ord.end(), [&](std::size_t a, std::size_t b) { return vals[a] < vals[b]; });
        std::vector<Vector> p2;
        std::vector<double> v2;
        for (std::size_t i : ord) {
            p2.push_back(pts[i]);
            v2.push_back(vals[i]);
        }
        pts = std::move(p2);
        vals = std::move(v2);
        if (trace) trace->push_back(-vals[0]);
        if (std::abs(vals.back() - vals.front()) < tol * (1.0 + std::abs(vals.front()))) break;

        Vector centroid = Vector::Zero(n);
        for (int i = 0; i < n; ++i) centroid += pts[static_cast<std::size_t>(i)];
        centroid /= static_cast<double>(n);
        Vector xr = centroid + (centroid - pts.back());
        double vr = neg(xr);
        if (vr < vals.front()) {
            Vector xe = centroid + 2.0 * (centroid - pts.back());
            double ve = neg(xe);
            if (ve < vr) {
                pts.back() = xe;
                vals.back() = ve;
            } else {
                pts.back() = xr;
                vals.back() = vr;
            }
        } else if (vr < vals[vals.size() - 2]) {
            pts.back() = xr;
            vals.back() = vr;
        } else {
            Vector xc = centroid + 0.5 * (pts.back() - centroid);
            double vc = neg(xc);
            if (vc < vals.back()) {
                pts.back() = xc;
                vals.back() = vc;
            } else {
                for (std::size_t i = 1; i < pts.size(); ++i) {
                    pts[i] = pts[0] + 0.5 * (pts[i] - pts[0]);
                    vals[i] = neg(pts[i]);
                }
            }
        }
    }
    std::size_t best = 0;
    for (std::size_t i = 1; i < vals.size(); ++i)
        if (vals[i] < vals[best]) best = i;
    return pts[best];
}

namespace detail {

/// Per-component D_{k,m}(B, v) = [B]_{kk} diag(|I^k_i|) + v_k M(k_m^k).
inline std::vector<Matrix> component_D(const Matrix& B, const Vector& v, const BlockLayout& lay, int m) {
    const int gamma = B.rows();
    std::vector<Matrix> D;
    D.reserve(static_cast<std::size_t>(gamma));
    for (int k = 0; k < gamma; ++k) {
        const int kk = lay.k[static_cast<std::size_t>(m - 1)][static_cast<std::size_t>(k)];
        D.push_back(B(k, k) * overlap_matrix(lay, m, k, k) + v(k) * tridiag_M(kk));
    }
    return D;
}

/// Contraction condition for the series expansions:
/// ||B'^{-1/2} Abs(B - B') B'^{-1/2}|| < 1
/// with B' = diag(B).
inline void check_contraction(const Matrix& B) {
    const int gamma = B.rows();
    Matrix C(gamma, gamma);
    for (int i = 0; i < gamma; ++i)
        for (int j = 0; j < gamma; ++j) {
            if (B(i, i) <= 0.0) throw ContractionViolated("series oracle: nonpositive diagonal");
            C(i, j) = (i == j) ? 0.0 : std::abs(B(i, j)) / std::sqrt(B(i, i) * B(j, j));
        }
    Eigen::SelfAdjointEigenSolver<Matrix> es(C);
    const double norm = std::max(std::abs(es.eigenvalues()(0)), std::abs(es.eigenvalues()(gamma - 1)));
    if (!(norm < 1.0)) throw ContractionViolated("series oracle: off-diagonal contraction >= 1");
}

}  // namespace detail

/**
 * @brief Truncated path-sum expansion of S_m^{-1}: sum over p <= P and paths
 *        (i_0, ..., i_p) with consecutive indices distinct of
 *        (-1)^p prod [B]_{i_{l-1} i_l} E_{i_0} (prod D^{-1} G) D^{-1} E_{i_p}^T.
 */
inline Matrix inverse_series_oracle(const Matrix& B, const Vector& v, const BlockLayout& lay, int m,
                                    int P) {
    detail::check_contraction(B);
    const int gamma = B.rows();
    auto D = detail::component_D(B, v, lay, m);
    std::vector<Matrix> Dinv;
    for (const auto& d : D) Dinv.push_back(d.inverse());
    std::vector<std::vector<Matrix>> G(static_cast<std::size_t>(gamma),
                                       std::vector<Matrix>(static_cast<std::size_t>(gamma)));
    for (int i = 0; i < gamma; ++i)
        for (int j = 0; j < gamma; ++j)
            if (i != j) G[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = overlap_matrix(lay, m, i, j);

    std::vector<int> off(static_cast<std::size_t>(gamma) + 1, 0);
    for (int j = 0; j < gamma; ++j)
        off[static_cast<std::size_t>(j) + 1] =
            off[static_cast<std::size_t>(j)] + lay.k[static_cast<std::size_t>(m - 1)][static_cast<std::size_t>(j)];
    Matrix result = Matrix::Zero(off.back(), off.back());

    std::function<void(int, int, const Matrix&, double, int)> rec =
        [&](int i0, int ip, const Matrix& V, double coef, int p) {
            result.block(off[static_cast<std::size_t>(i0)], off[static_cast<std::size_t>(ip)], V.rows(), V.cols()) +=
                coef * V;
            if (p == P) return;
            for (int c = 0; c < gamma; ++c) {
                if (c == ip) continue;
                Matrix V2 = V * G[static_cast<std::size_t>(ip)][static_cast<std::size_t>(c)] *
                            Dinv[static_cast<std::size_t>(c)];
                rec(i0, c, V2, -coef * B(ip, c), p + 1);
            }
        };
    for (int i0 = 0; i0 < gamma; ++i0) rec(i0, i0, Dinv[static_cast<std::size_t>(i0)], 1.0, 0);
    return result;
}

/**
 * @brief Truncated expansion of log det S_m: sum_i log det D_i minus
 *        sum_{p >= 2} ((-1)^p / p) over closed cycles i_0 = i_p of
 *        prod [B] tr(prod D^{-1} G).
 */
inline double logdet_series_oracle(const Matrix& B, const Vector& v, const BlockLayout& lay, int m,
                                   int P) {
    detail::check_contraction(B);
    const int gamma = B.rows();
    auto D = detail::component_D(B, v, lay, m);
    std::vector<Matrix> Dinv;
    double base = 0.0;
    for (const auto& d : D) {
        Eigen::LLT<Matrix> llt(d);
        if (llt.info() != Eigen::Success) throw NotPD("logdet_series_oracle: D not PD");
        const Matrix& L = llt.matrixLLT();
        for (int i = 0; i < L.rows(); ++i) base += 2.0 * std::log(L(i, i));
        Dinv.push_back(d.inverse());
    }
    std::vector<std::vector<Matrix>> G(static_cast<std::size_t>(gamma),
                                       std::vector<Matrix>(static_cast<std::size_t>(gamma)));
    for (int i = 0; i < gamma; ++i)
        for (int j = 0; j < gamma; ++j)
            if (i != j) G[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = overlap_matrix(lay, m, i, j);

    double corr = 0.0;
    // Path product prod_{l=1}^p D_{i_{l-1}}^{-1} G_{i_{l-1} i_l}, closed at i_0.
    std::function<void(int, int, const Matrix&, double, int)> rec =
        [&](int i0, int ip, const Matrix& V, double prodB, int p) {
            if (p >= 2 && ip == i0) {
                const double sign = (p % 2 == 0) ? 1.0 : -1.0;
                corr -= sign / static_cast<double>(p) * prodB * V.trace();
            }
            if (p == P) return;
            for (int c = 0; c < gamma; ++c) {
                if (c == ip) continue;
                Matrix V2 = V * Dinv[static_cast<std::size_t>(ip)] *
                            G[static_cast<std::size_t>(ip)][static_cast<std::size_t>(c)];
                rec(i0, c, V2, prodB * B(ip, c), p + 1);
            }
        };
    for (int i0 = 0; i0 < gamma; ++i0) {
        const int k0 = lay.k[static_cast<std::size_t>(m - 1)][static_cast<std::size_t>(i0)];
        rec(i0, i0, Matrix::Identity(k0, k0), 1.0, 0);
    }
    return base + corr;
}

}  // namespace covol
