/**
 * @file matan.hpp
 * @brief Matrix-analysis kernels: symmetric square roots, their directional
 *        derivatives, the half-Sylvester operator phi_B, the K1/K2 trace
 *        forms, and closed-form residue integrals.
 *
 * All matrices are small (model-level gamma x gamma, or a few hundred for
 * block-level work). Everything here is a pure function of its inputs.
 */
#pragma once

#include <cassert>
#include <cmath>
#include <vector>

#include "covol/common.hpp"

namespace covol {

/// Orthogonal eigendecomposition A = U diag(lambda) U^T, eigenvalues descending.
struct EigenFactorization {
    Matrix U;
    Vector lambda;
};

namespace detail {

inline void require_square(const Matrix& A, const char* who) {
    if (A.rows() != A.cols()) throw ShapeMismatch(std::string(who) + ": matrix must be square");
}

/// Spectral norm of a symmetric matrix via its eigenvalues.
inline double sym_opnorm(const Vector& lambda) {
    return lambda.size() == 0 ? 0.0 : lambda.cwiseAbs().maxCoeff();
}

}  // namespace detail

/// Eigendecomposition with eigenvalues sorted in descending order.
inline EigenFactorization sym_eigen(const Matrix& A) {
    detail::require_square(A, "sym_eigen");
    Eigen::SelfAdjointEigenSolver<Matrix> es(A);
    if (es.info() != Eigen::Success) throw Error("sym_eigen: eigensolver failed");
    const Eigen::Index n = A.rows();
    EigenFactorization f;
    f.U.resize(n, n);
    f.lambda.resize(n);
    // Eigen sorts ascending; store descending per the documented contract.
    for (Eigen::Index j = 0; j < n; ++j) {
        f.lambda(j) = es.eigenvalues()(n - 1 - j);
        f.U.col(j) = es.eigenvectors().col(n - 1 - j);
    }
    return f;
}

/**
 * @brief Symmetric PSD square root via eigendecomposition.
 *
 * Eigenvalues in [-tol_psd, 0) with tol_psd = 1e-10*||A|| are clamped to 0;
 * anything below -tol_psd raises NotPSD.
 */
inline Matrix sym_sqrt(const Matrix& A) {
    EigenFactorization f = sym_eigen(A);
    const double norm = detail::sym_opnorm(f.lambda);
    const double tol_psd = 1e-10 * norm;
    Vector s(f.lambda.size());
    for (Eigen::Index j = 0; j < f.lambda.size(); ++j) {
        double lj = f.lambda(j);
        if (lj < -tol_psd) throw NotPSD("sym_sqrt: eigenvalue below -1e-10*||A||");
        s(j) = std::sqrt(std::max(lj, 0.0));
    }
    return f.U * s.asDiagonal() * f.U.transpose();
}

/**
 * @brief Directional derivative of the symmetric square root.
 *
 * Returns the unique symmetric C with C A^{1/2} + A^{1/2} C = dA, from
 * [U^T C U]_{ij} = [U^T dA U]_{ij} / (lambda_i^{1/2} + lambda_j^{1/2}).
 */
inline Matrix sym_sqrt_derivative(const Matrix& A, const Matrix& dA) {
    detail::require_square(A, "sym_sqrt_derivative");
    if (dA.rows() != A.rows() || dA.cols() != A.cols())
        throw ShapeMismatch("sym_sqrt_derivative: dA shape mismatch");
    EigenFactorization f = sym_eigen(A);
    const double norm = detail::sym_opnorm(f.lambda);
    if (f.lambda(f.lambda.size() - 1) <= 1e-12 * norm || norm == 0.0)
        throw Singular("sym_sqrt_derivative: A not strictly positive definite");
    Matrix W = f.U.transpose() * dA * f.U;
    for (Eigen::Index i = 0; i < W.rows(); ++i)
        for (Eigen::Index j = 0; j < W.cols(); ++j)
            W(i, j) /= std::sqrt(f.lambda(i)) + std::sqrt(f.lambda(j));
    return f.U * W * f.U.transpose();
}

/**
 * @brief Half-Sylvester operator phi_B: the unique C with B^{1/2}C + CB^{1/2} = A.
 *
 * A need not be symmetric (K2 applies phi_B to products of phi images).
 * In debug builds the operator-norm bound ||phi_B(A)|| <= (1/2) sqrt(n)
 * ||B^{-1}||^{1/2} ||A|| is asserted for symmetric A.
 */
inline Matrix phi(const Matrix& B, const Matrix& A) {
    detail::require_square(B, "phi");
    if (A.rows() != B.rows() || A.cols() != B.cols()) throw ShapeMismatch("phi: A shape mismatch");
    EigenFactorization f = sym_eigen(B);
    const double norm = detail::sym_opnorm(f.lambda);
    if (f.lambda(f.lambda.size() - 1) <= 1e-12 * norm || norm == 0.0)
        throw Singular("phi: B not strictly positive definite");
    Matrix W = f.U.transpose() * A * f.U;
    for (Eigen::Index i = 0; i < W.rows(); ++i)
        for (Eigen::Index j = 0; j < W.cols(); ++j)
            W(i, j) /= std::sqrt(f.lambda(i)) + std::sqrt(f.lambda(j));
    Matrix C = f.U * W * f.U.transpose();
#ifndef NDEBUG
    if ((A - A.transpose()).cwiseAbs().maxCoeff() == 0.0) {
        const double n = static_cast<double>(B.rows());
        const double bound = 0.5 * std::sqrt(n) / std::sqrt(f.lambda(f.lambda.size() - 1)) *
                             detail::sym_opnorm(sym_eigen(A).lambda);
        assert(C.operatorNorm() <= bound * (1.0 + 1e-9) + 1e-300);
    }
#endif
    return C;
}

namespace detail {

/// B^{-1/2} for strictly PD B.
inline Matrix sym_inv_sqrt(const Matrix& B) {
    EigenFactorization f = sym_eigen(B);
    const double norm = sym_opnorm(f.lambda);
    if (f.lambda(f.lambda.size() - 1) <= 1e-12 * norm || norm == 0.0)
        throw Singular("sym_inv_sqrt: matrix not strictly positive definite");
    Vector s = f.lambda.cwiseSqrt().cwiseInverse();
    return f.U * s.asDiagonal() * f.U.transpose();
}

}  // namespace detail

/**
 * @brief Polarized K1 form: the symmetric bilinear form in (A1, A2) whose
 *        diagonal K1(B, A, A, C) is
 *        tr(B^{-1/2} phi(A)^2 B^{-1/2} phi(C)) + tr((phi(A)B^{-1/2})^2 C B^{-1/2}).
 */
inline double frak_k1(const Matrix& B, const Matrix& A1, const Matrix& A2, const Matrix& C) {
    const Matrix Bi = detail::sym_inv_sqrt(B);
    const Matrix P1 = phi(B, A1);
    const Matrix P2 = phi(B, A2);
    const Matrix PC = phi(B, C);
    const double t1 = 0.5 * ((Bi * P1 * P2 * Bi * PC).trace() + (Bi * P2 * P1 * Bi * PC).trace());
    const double t2 = 0.5 * ((P1 * Bi * P2 * Bi * C * Bi).trace() + (P2 * Bi * P1 * Bi * C * Bi).trace());
    return t1 + t2;
}

/// K1(B, A, C) = (1/pi) Int tr((A(t^2+B)^{-1})^2 C (t^2+B)^{-1}) dt.
inline double frak_k1(const Matrix& B, const Matrix& A, const Matrix& C) {
    return frak_k1(B, A, A, C);
}

/**
 * @brief Polarized K2 form, from the partial-fraction expansion of
 *        (1/2pi) Int tr((A(t^2+B)^{-1} C(t^2+B)^{-1})^2) dt in the eigenbasis
 *        of B. With P = phi_B(A), Q = phi_B(C), Bi = B^{-1/2}:
 *        2 K2 = tr(Bi P Bi Q Bi P Q) + tr(P Bi Q Bi P Bi Q)
 *             + tr(P Q Bi P Bi Q Bi) + tr(Bi P Bi Q P Bi Q)
 *             + tr(phi_B(P Q) Bi P Q Bi) + tr(phi_B(Q P) Bi Q P Bi).
 */
inline double frak_k2(const Matrix& B, const Matrix& A1, const Matrix& A2, const Matrix& C) {
    const Matrix Bi = detail::sym_inv_sqrt(B);
    const Matrix Q = phi(B, C);
    auto half = [&Bi, &B, &Q](const Matrix& P1, const Matrix& P2) {
        double s = (Bi * P1 * Bi * Q * Bi * P2 * Q).trace() + (P1 * Bi * Q * Bi * P2 * Bi * Q).trace() +
                   (P1 * Q * Bi * P2 * Bi * Q * Bi).trace() + (Bi * P1 * Bi * Q * P2 * Bi * Q).trace();
        s += (phi(B, P1 * Q) * Bi * P2 * Q * Bi).trace() + (phi(B, Q * P1) * Bi * Q * P2 * Bi).trace();
        return s;
    };
    const Matrix P1 = phi(B, A1);
    const Matrix P2 = phi(B, A2);
    // The six-term sum equals (1/pi) of the defining integral, i.e. 2 K2.
    return 0.25 * (half(P1, P2) + half(P2, P1));
}

/// K2(B, A, C) = (1/2pi) Int tr((A(t^2+B)^{-1}C(t^2+B)^{-1})^2) dt.
inline double frak_k2(const Matrix& B, const Matrix& A, const Matrix& C) {
    return frak_k2(B, A, A, C);
}

/**
 * @brief Closed form of the resolvent integral:
 *        Int (C1 t^2 + C2)^{-1} dt = pi C1^{-1/2} (C1^{-1/2} C2 C1^{-1/2})^{-1/2} C1^{-1/2}.
 */
inline Matrix inv_residue(const Matrix& C1, const Matrix& C2) {
    if (C1.rows() != C2.rows() || C1.cols() != C2.cols())
        throw ShapeMismatch("inv_residue: size mismatch");
    const Matrix R1 = detail::sym_inv_sqrt(C1);
    const Matrix M = detail::sym_inv_sqrt(R1 * C2 * R1);
    const double pi = std::acos(-1.0);
    return pi * R1 * M * R1;
}

/**
 * @brief Closed form of the log-det resolvent integral:
 *        Int (1+t^2)^{-1} logdet(C1 t^2 + C2) dt
 *        = pi logdet C1 + 2 pi logdet(I + (C1^{-1/2} C2 C1^{-1/2})^{1/2}).
 */
inline double logdet_residue(const Matrix& C1, const Matrix& C2) {
    if (C1.rows() != C2.rows() || C1.cols() != C2.cols())
        throw ShapeMismatch("logdet_residue: size mismatch");
    const Matrix R1 = detail::sym_inv_sqrt(C1);
    const Matrix S = sym_sqrt(R1 * C2 * R1);
    const double pi = std::acos(-1.0);
    double logdet_c1 = 0.0;
    const Vector lam1 = sym_eigen(C1).lambda;
    for (Eigen::Index j = 0; j < lam1.size(); ++j) {
        if (lam1(j) <= 0.0) throw Singular("logdet_residue: C1 not positive definite");
        logdet_c1 += std::log(lam1(j));
    }
    double logdet_ips = 0.0;
    const Vector lam2 = sym_eigen(Matrix::Identity(S.rows(), S.cols()) + S).lambda;
    for (Eigen::Index j = 0; j < lam2.size(); ++j) logdet_ips += std::log(lam2(j));
    return pi * logdet_c1 + 2.0 * pi * logdet_ips;
}

/**
 * @brief Closed forms for (1/pi) Int prod_i (t^2 + x_i^2)^{-1} dt,
 *        2 to 4 factors, via elementary symmetric sums F^j of the x_i.
 */
inline double quartic_integral(const std::vector<double>& x) {
    for (double xi : x)
        if (!(xi > 0.0)) throw BadConfig("quartic_integral: arguments must be positive");
    auto esym = [&x](int j) {
        // Elementary symmetric polynomial F^j of the x_i.
        std::vector<double> e(x.size() + 1, 0.0);
        e[0] = 1.0;
        for (double xi : x)
            for (std::size_t k = e.size() - 1; k >= 1; --k) e[k] += xi * e[k - 1];
        return e[static_cast<std::size_t>(j)];
    };
    auto pair_prod = [&x]() {
        double p = 1.0;
        for (std::size_t i = 0; i < x.size(); ++i)
            for (std::size_t j = i + 1; j < x.size(); ++j) p *= x[i] + x[j];
        return p;
    };
    switch (x.size()) {
        case 2:
            return 1.0 / (esym(1) * esym(2));
        case 3:
            return esym(1) / (esym(3) * pair_prod());
        case 4:
            return (esym(1) * esym(2) - esym(3)) / (esym(4) * pair_prod());
        default:
            throw BadArity("quartic_integral: need 2 to 4 factors");
    }
}

/**
 * @brief Right-hand side of the square-root perturbation inequality
 *        ||A - B|| <= sqrt(l) ||(A+B)^{-1}|| ||A^2 - B^2||.
 */
inline double sqrt_perturbation_bound(const Matrix& A, const Matrix& B) {
    if (A.rows() != B.rows() || A.cols() != B.cols())
        throw ShapeMismatch("sqrt_perturbation_bound: size mismatch");
    EigenFactorization f = sym_eigen(A + B);
    double min_abs = f.lambda.cwiseAbs().minCoeff();
    if (min_abs <= 1e-14 * (1.0 + detail::sym_opnorm(f.lambda)))
        throw Singular("sqrt_perturbation_bound: A + B singular");
    const double l = static_cast<double>(A.rows());
    const Matrix D = A * A - B * B;
    return std::sqrt(l) * (1.0 / min_abs) * D.operatorNorm();
}

}  // namespace covol
