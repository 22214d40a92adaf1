/**
 * @file test_matan.cpp
 * @brief Matrix-analysis kernels against their defining identities and
 *        quadrature oracles.
 */
#include <catch_amalgamated.hpp>
#include <cmath>

#include "covol/matan.hpp"
#include "oracles.hpp"

using covol::Matrix;
using covol::Vector;

namespace {
const double kPi = std::acos(-1.0);

double rel_err(double got, double want) {
    return std::abs(got - want) / (1.0 + std::abs(want));
}
}  // namespace

TEST_CASE("sym_sqrt: diagonal and identity cases") {
    Matrix A = Matrix::Zero(2, 2);
    A(0, 0) = 4.0;
    A(1, 1) = 9.0;
    Matrix R = covol::sym_sqrt(A);
    CHECK(R(0, 0) == Catch::Approx(2.0));
    CHECK(R(1, 1) == Catch::Approx(3.0));
    CHECK(std::abs(R(0, 1)) < 1e-12);

    Matrix I = Matrix::Identity(3, 3);
    CHECK((covol::sym_sqrt(I) - I).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("sym_sqrt: random PSD round trip") {
    std::mt19937_64 rng(7);
    for (int rep = 0; rep < 50; ++rep) {
        int n = 2 + static_cast<int>(rng() % 3);
        Matrix A = oracles::random_psd(n, rng);
        Matrix R = covol::sym_sqrt(A);
        CHECK((R - R.transpose()).cwiseAbs().maxCoeff() < 1e-10);
        CHECK((R * R - A).cwiseAbs().maxCoeff() <= 1e-9 * (1.0 + A.cwiseAbs().maxCoeff()));
    }
    // Rank-deficient input is still PSD and must not throw.
    Matrix low = oracles::random_psd(3, rng, 1);
    Matrix R = covol::sym_sqrt(low);
    CHECK((R * R - low).cwiseAbs().maxCoeff() < 1e-9 * (1.0 + low.cwiseAbs().maxCoeff()));
}

TEST_CASE("sym_sqrt: rejects indefinite input") {
    Matrix A = Matrix::Identity(2, 2);
    A(1, 1) = -0.5;
    CHECK_THROWS_AS(covol::sym_sqrt(A), covol::NotPSD);
}

TEST_CASE("sym_sqrt_derivative: diagonal chain rule and identity cases") {
    Matrix A = Matrix::Zero(2, 2);
    A(0, 0) = 4.0;
    A(1, 1) = 9.0;
    Matrix dA = Matrix::Zero(2, 2);
    dA(0, 0) = 1.0;
    dA(1, 1) = 2.0;
    Matrix C = covol::sym_sqrt_derivative(A, dA);
    CHECK(C(0, 0) == Catch::Approx(1.0 / (2.0 * 2.0)));
    CHECK(C(1, 1) == Catch::Approx(2.0 / (2.0 * 3.0)));

    std::mt19937_64 rng(11);
    Matrix S = oracles::random_sym(3, rng);
    Matrix half = covol::sym_sqrt_derivative(Matrix::Identity(3, 3), S);
    CHECK((half - 0.5 * S).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("sym_sqrt_derivative: Sylvester residual and finite differences") {
    std::mt19937_64 rng(13);
    for (int rep = 0; rep < 20; ++rep) {
        int n = 2 + static_cast<int>(rng() % 2);
        Matrix A = oracles::random_pd(n, rng);
        Matrix dA = oracles::random_sym(n, rng);
        Matrix C = covol::sym_sqrt_derivative(A, dA);
        Matrix R = covol::sym_sqrt(A);
        CHECK((C * R + R * C - dA).cwiseAbs().maxCoeff() <= 1e-9 * (1.0 + dA.cwiseAbs().maxCoeff()));

        const double h = 1e-5;
        Matrix fd = (covol::sym_sqrt(A + h * dA) - covol::sym_sqrt(A - h * dA)) / (2.0 * h);
        CHECK((C - fd).cwiseAbs().maxCoeff() <= 1e-5 * (1.0 + fd.cwiseAbs().maxCoeff()));
    }
}

TEST_CASE("phi: trivial cases and defining identity") {
    std::mt19937_64 rng(17);
    Matrix A = oracles::random_sym(3, rng);
    CHECK((covol::phi(Matrix::Identity(3, 3), A) - 0.5 * A).cwiseAbs().maxCoeff() < 1e-12);

    Matrix B1(1, 1), A1(1, 1);
    B1(0, 0) = 4.0;
    A1(0, 0) = 6.0;
    CHECK(covol::phi(B1, A1)(0, 0) == Catch::Approx(1.5));

    for (int rep = 0; rep < 30; ++rep) {
        Matrix B = oracles::random_pd(3, rng);
        Matrix S = oracles::random_sym(3, rng);
        Matrix C = covol::phi(B, S);
        Matrix Bh = covol::sym_sqrt(B);
        CHECK((Bh * C + C * Bh - S).cwiseAbs().maxCoeff() <= 1e-10 * (1.0 + S.cwiseAbs().maxCoeff()));
        // Operator norm bound for phi_B.
        double bound = 0.5 * std::sqrt(3.0) * std::sqrt(B.inverse().operatorNorm()) * S.operatorNorm();
        CHECK(C.operatorNorm() <= bound * (1.0 + 1e-9));
    }
}

TEST_CASE("frak_k1: scalar formula and quadrature oracle") {
    // Scalar value fixed by the defining integral:
    // (1/pi) Int a^2 c (t^2+b)^{-3} dt = 3 a^2 c / (8 b^{5/2}).
    Matrix b(1, 1), a(1, 1), c(1, 1);
    b(0, 0) = 2.0;
    a(0, 0) = 1.5;
    c(0, 0) = -0.7;
    double want = 3.0 * 1.5 * 1.5 * (-0.7) / (8.0 * std::pow(2.0, 2.5));
    CHECK(covol::frak_k1(b, a, c) == Catch::Approx(want).epsilon(1e-10));

    // B = A = C = I (1x1): 3/8.
    Matrix one = Matrix::Identity(1, 1);
    CHECK(covol::frak_k1(one, one, one) == Catch::Approx(3.0 / 8.0));

    std::mt19937_64 rng(19);
    for (int rep = 0; rep < 8; ++rep) {
        int n = 2 + static_cast<int>(rng() % 2);
        Matrix B = oracles::random_pd(n, rng);
        Matrix A = oracles::random_sym(n, rng);
        Matrix C = oracles::random_sym(n, rng);
        double got = covol::frak_k1(B, A, C);
        double quad = (1.0 / kPi) * oracles::integrate_even_line([&](double t) {
            Matrix R = (t * t * Matrix::Identity(n, n) + B).inverse();
            return (A * R * A * R * C * R).trace();
        });
        CHECK(rel_err(got, quad) < 1e-6);
    }
}

TEST_CASE("frak_k2: scalar formula, linearity, quadrature oracle") {
    // b = a = c = 1: (1/2pi) Int dt/(t^2+1)^4 = (1/2pi)(5 pi/16)... the
    // full-line integral is 5 pi/16, so K2 = 5/32.
    Matrix one = Matrix::Identity(1, 1);
    CHECK(covol::frak_k2(one, one, one) == Catch::Approx(5.0 / 32.0));
    // Scalar closed form fixed by the integral: 5 a^2 c^2 / (32 b^{7/2}).
    Matrix b(1, 1), a(1, 1), c(1, 1);
    b(0, 0) = 1.3;
    a(0, 0) = 0.8;
    c(0, 0) = 1.1;
    double want = 5.0 * 0.8 * 0.8 * 1.1 * 1.1 / (32.0 * std::pow(1.3, 3.5));
    CHECK(covol::frak_k2(b, a, c) == Catch::Approx(want).epsilon(1e-10));

    std::mt19937_64 rng(23);
    Matrix B = oracles::random_pd(2, rng);
    Matrix A = oracles::random_sym(2, rng);
    CHECK(covol::frak_k2(B, A, Matrix::Zero(2, 2)) == Catch::Approx(0.0).margin(1e-14));

    for (int rep = 0; rep < 8; ++rep) {
        Matrix Bp = oracles::random_pd(2, rng);
        Matrix Ap = oracles::random_sym(2, rng);
        Matrix Cp = oracles::random_sym(2, rng);
        double got = covol::frak_k2(Bp, Ap, Cp);
        double quad = (1.0 / (2.0 * kPi)) * oracles::integrate_even_line([&](double t) {
            Matrix R = (t * t * Matrix::Identity(2, 2) + Bp).inverse();
            Matrix M = Ap * R * Cp * R;
            return (M * M).trace();
        });
        CHECK(rel_err(got, quad) < 1e-6);
    }
}

TEST_CASE("inv_residue: scalar values and quadrature oracle") {
    Matrix one = Matrix::Identity(1, 1);
    CHECK(covol::inv_residue(one, one)(0, 0) == Catch::Approx(kPi));
    Matrix four(1, 1);
    four(0, 0) = 4.0;
    CHECK(covol::inv_residue(one, four)(0, 0) == Catch::Approx(kPi / 2.0));

    std::mt19937_64 rng(29);
    for (int rep = 0; rep < 8; ++rep) {
        int n = 2 + static_cast<int>(rng() % 2);
        Matrix C1 = oracles::random_pd(n, rng);
        Matrix C2 = oracles::random_pd(n, rng);
        Matrix got = covol::inv_residue(C1, C2);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) {
                double quad = oracles::integrate_even_line([&](double t) {
                    Matrix R = (C1 * t * t + C2).inverse();
                    return R(i, j);
                });
                CHECK(rel_err(got(i, j), quad) < 1e-6);
            }
    }
}

TEST_CASE("logdet_residue: closed values and quadrature oracle") {
    Matrix one = Matrix::Identity(1, 1);
    CHECK(covol::logdet_residue(one, one) == Catch::Approx(2.0 * kPi * std::log(2.0)));
    Matrix I2 = Matrix::Identity(2, 2);
    CHECK(covol::logdet_residue(I2, I2) == Catch::Approx(4.0 * kPi * std::log(2.0)));

    std::mt19937_64 rng(31);
    for (int rep = 0; rep < 8; ++rep) {
        Matrix C1 = oracles::random_pd(2, rng);
        Matrix C2 = oracles::random_pd(2, rng);
        double got = covol::logdet_residue(C1, C2);
        double quad = oracles::integrate_even_line([&](double t) {
            return std::log((C1 * t * t + C2).determinant()) / (1.0 + t * t);
        });
        CHECK(rel_err(got, quad) < 1e-6);
    }
}

TEST_CASE("quartic_integral: reference values, symmetry, quadrature") {
    CHECK(covol::quartic_integral({1.0, 1.0}) == Catch::Approx(0.5));
    CHECK(covol::quartic_integral({1.0, 2.0}) == Catch::Approx(1.0 / 6.0));
    CHECK(covol::quartic_integral({1.0, 1.0, 1.0, 1.0}) == Catch::Approx(5.0 / 16.0));
    CHECK_THROWS_AS(covol::quartic_integral({1.0}), covol::BadArity);
    CHECK_THROWS_AS(covol::quartic_integral({1.0, 1.0, 1.0, 1.0, 1.0}), covol::BadArity);

    std::mt19937_64 rng(37);
    std::uniform_real_distribution<double> unif(0.4, 2.5);
    for (int arity = 2; arity <= 4; ++arity) {
        std::vector<double> x(static_cast<std::size_t>(arity));
        for (double& xi : x) xi = unif(rng);
        double got = covol::quartic_integral(x);
        // Permutation invariance.
        std::vector<double> xr(x.rbegin(), x.rend());
        CHECK(covol::quartic_integral(xr) == Catch::Approx(got).epsilon(1e-12));
        double quad = (1.0 / kPi) * oracles::integrate_even_line([&](double t) {
            double p = 1.0;
            for (double xi : x) p *= t * t + xi * xi;
            return 1.0 / p;
        });
        CHECK(rel_err(got, quad) < 1e-6);
    }
}

TEST_CASE("sqrt_perturbation_bound: inequality on random PSD pairs") {
    Matrix A = 2.0 * Matrix::Identity(1, 1);
    Matrix B = Matrix::Identity(1, 1);
    CHECK(covol::sqrt_perturbation_bound(A, B) == Catch::Approx(1.0));

    std::mt19937_64 rng(41);
    for (int rep = 0; rep < 200; ++rep) {
        int n = 1 + static_cast<int>(rng() % 3);
        Matrix P = oracles::random_psd(n, rng);
        Matrix Q = oracles::random_psd(n, rng);
        double lhs = (P - Q).operatorNorm();
        double rhs = covol::sqrt_perturbation_bound(P, Q);
        CHECK(lhs <= rhs * (1.0 + 1e-9));
    }
}
