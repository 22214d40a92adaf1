/**
 * @file oracles.hpp
 * @brief Independent numeric oracles used by the test suite: adaptive
 *        quadrature of the defining integrals, random PD matrix generation,
 *        and central finite differences.
 *
 * Oracles live here, not in the library: library code ships closed forms
 * only, and every closed form is checked against the integral it claims to
 * equal.
 */
#pragma once

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <functional>
#include <limits>
#include <random>

#include "covol/common.hpp"

namespace oracles {

using covol::Matrix;
using covol::Vector;

/// Adaptive Gauss-Kronrod on [0, inf); integrands here decay at least as t^-2.
inline double integrate_halfline(const std::function<double(double)>& f) {
    using boost::math::quadrature::gauss_kronrod;
    return gauss_kronrod<double, 61>::integrate(f, 0.0, std::numeric_limits<double>::infinity(), 12, 1e-11);
}

/// Integral over the whole line of an even integrand.
inline double integrate_even_line(const std::function<double(double)>& f) {
    return 2.0 * integrate_halfline(f);
}

/// Random orthogonal matrix via QR of a Gaussian sample.
inline Matrix random_orthogonal(int n, std::mt19937_64& rng) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    Matrix G(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) G(i, j) = gauss(rng);
    Eigen::HouseholderQR<Matrix> qr(G);
    Matrix Q = qr.householderQ();
    return Q;
}

/// Random symmetric PD matrix with eigenvalues in [lo, hi].
inline Matrix random_pd(int n, std::mt19937_64& rng, double lo = 0.3, double hi = 3.0) {
    std::uniform_real_distribution<double> unif(lo, hi);
    Matrix Q = random_orthogonal(n, rng);
    Vector lam(n);
    for (int i = 0; i < n; ++i) lam(i) = unif(rng);
    return Q * lam.asDiagonal() * Q.transpose();
}

/// Random symmetric (indefinite) matrix with entries of order `scale`.
inline Matrix random_sym(int n, std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> gauss(0.0, scale);
    Matrix A(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = i; j < n; ++j) A(i, j) = A(j, i) = gauss(rng);
    return A;
}

/// Random symmetric PSD matrix (Gram form), possibly rank deficient.
inline Matrix random_psd(int n, std::mt19937_64& rng, int rank = -1) {
    if (rank < 0) rank = n;
    std::normal_distribution<double> gauss(0.0, 1.0);
    Matrix G(n, rank);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < rank; ++j) G(i, j) = gauss(rng);
    return G * G.transpose();
}

/// Central finite difference of a scalar function of a scalar parameter.
inline double central_diff(const std::function<double(double)>& f, double x, double h) {
    return (f(x + h) - f(x - h)) / (2.0 * h);
}

/// Central finite-difference gradient of f at theta.
inline Vector fd_gradient(const std::function<double(const Vector&)>& f, const Vector& theta, double h = 1e-5) {
    Vector g(theta.size());
    for (Eigen::Index i = 0; i < theta.size(); ++i) {
        Vector tp = theta, tm = theta;
        tp(i) += h;
        tm(i) -= h;
        g(i) = (f(tp) - f(tm)) / (2.0 * h);
    }
    return g;
}

}  // namespace oracles
