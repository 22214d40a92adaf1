/**
 * @file test_quasilik.cpp
 * @brief S_m assembly against a brute-force local Gaussian covariance,
 *        H_n against dense evaluation, gradients against finite differences,
 *        argmax helpers, and the series-expansion oracles.
 */
#include <catch_amalgamated.hpp>
#include <cmath>
#include <random>

#include "covol/quasilik.hpp"
#include "covol/sim.hpp"
#include "oracles.hpp"

using covol::BlockLayout;
using covol::ComponentSeries;
using covol::Matrix;
using covol::ObservationSet;
using covol::Vector;

namespace {

/// Fixed-Sigma model with no parameters; ignores (t, x).
struct ConstModel final : covol::VolatilityModel {
    Matrix B;
    explicit ConstModel(Matrix b) : B(std::move(b)) {}
    int gamma() const override { return static_cast<int>(B.rows()); }
    int input_dim() const override { return 0; }
    int n_params() const override { return 0; }
    std::string name() const override { return "const"; }
    Matrix eval(double, const Vector&, const Vector&) const override { return B; }
    Vector vjp(double, const Vector&, const Vector&, const Matrix&) const override { return Vector(0); }
};

/// gamma = 2 model whose parameters are the Sigma entries (b11, b22, b12).
struct ParamSigmaModel final : covol::VolatilityModel {
    int gamma() const override { return 2; }
    int input_dim() const override { return 0; }
    int n_params() const override { return 3; }
    std::string name() const override { return "param_sigma"; }
    Matrix eval(double, const Vector&, const Vector& th) const override {
        Matrix b(2, 2);
        b << th(0), th(2), th(2), th(1);
        return b;
    }
    Vector vjp(double, const Vector&, const Vector&, const Matrix& g) const override {
        Vector out(3);
        out << g(0, 0), g(1, 1), g(0, 1) + g(1, 0);
        return out;
    }
};

/// Attach a trivial time-only explanatory series so every block has X data.
void attach_time(ObservationSet& obs) {
    ComponentSeries tc;
    tc.times = obs.y[0].times;
    tc.values = obs.y[0].times;
    obs.x = {tc};
}

ObservationSet equidistant_obs(int n, double T) {
    ObservationSet obs;
    ComponentSeries c;
    for (int i = 0; i <= n; ++i) {
        c.times.push_back(T * i / n);
        c.values.push_back(0.0);
    }
    obs.y.push_back(c);
    return obs;
}

/**
 * @brief Brute-force E[Z_i Z_j] of the local Gaussian model: enumerate merged
 *        sub-intervals for the diffusion part, add the tri-diagonal noise
 *        pattern. Independent of overlap_matrix.
 */
Matrix brute_S(const BlockLayout& lay, int m, const Matrix& B, const Vector& v) {
    const int gamma = static_cast<int>(B.rows());
    std::vector<int> off(static_cast<std::size_t>(gamma) + 1, 0);
    for (int j = 0; j < gamma; ++j)
        off[static_cast<std::size_t>(j) + 1] =
            off[static_cast<std::size_t>(j)] + lay.k[static_cast<std::size_t>(m - 1)][static_cast<std::size_t>(j)];
    std::vector<double> pts;
    for (int j = 0; j < gamma; ++j)
        for (int i = 1; i <= lay.k[static_cast<std::size_t>(m - 1)][static_cast<std::size_t>(j)]; ++i) {
            pts.push_back(lay.interval_left(m, j, i));
            pts.push_back(lay.interval_right(m, j, i));
        }
    std::sort(pts.begin(), pts.end());
    pts.erase(std::unique(pts.begin(), pts.end()), pts.end());

    Matrix S = Matrix::Zero(off.back(), off.back());
    for (int k = 0; k < gamma; ++k)
        for (int i = 1; i <= lay.k[static_cast<std::size_t>(m - 1)][static_cast<std::size_t>(k)]; ++i)
            for (int l = 0; l < gamma; ++l)
                for (int j = 1; j <= lay.k[static_cast<std::size_t>(m - 1)][static_cast<std::size_t>(l)]; ++j) {
                    double acc = 0.0;
                    for (std::size_t s = 0; s + 1 < pts.size(); ++s) {
                        const double mid = 0.5 * (pts[s] + pts[s + 1]);
                        const bool in_k = mid >= lay.interval_left(m, k, i) && mid < lay.interval_right(m, k, i);
                        const bool in_l = mid >= lay.interval_left(m, l, j) && mid < lay.interval_right(m, l, j);
                        if (in_k && in_l) acc += pts[s + 1] - pts[s];
                    }
                    double val = B(k, l) * acc;
                    if (k == l) {
                        if (i == j) val += 2.0 * v(k);
                        if (std::abs(i - j) == 1) val -= v(k);
                    }
                    S(off[static_cast<std::size_t>(k)] + i - 1, off[static_cast<std::size_t>(l)] + j - 1) = val;
                }
    return S;
}

}  // namespace

TEST_CASE("assemble_S: hand case gamma=1, k=2, Delta=0.5, v=0.1") {
    ObservationSet obs;
    ComponentSeries c;
    c.times = {0.0, 0.5, 1.0};
    c.values = {0.0, 0.0, 0.0};
    obs.y.push_back(c);
    BlockLayout lay = covol::build_layout(obs, 1.4, 1);
    REQUIRE(lay.k[0][0] == 2);
    Matrix B(1, 1);
    B << 1.0;
    Vector v(1);
    v << 0.1;
    covol::LocalCovariance lc = covol::assemble_S(B, v, lay, 1);
    CHECK(lc.pd);
    CHECK(lc.S(0, 0) == Catch::Approx(0.7));
    CHECK(lc.S(0, 1) == Catch::Approx(-0.1));
    CHECK(lc.S(1, 0) == Catch::Approx(-0.1));
    CHECK(lc.S(1, 1) == Catch::Approx(0.7));
}

TEST_CASE("assemble_S: equidistant structure Sigma Delta I + v M") {
    ObservationSet obs = equidistant_obs(8, 0.8);
    BlockLayout lay = covol::build_layout(obs, 0.9, 1);
    const int k = lay.k[0][0];
    Matrix B(1, 1);
    B << 2.5;
    Vector v(1);
    v << 0.3;
    covol::LocalCovariance lc = covol::assemble_S(B, v, lay, 1);
    Matrix expect = 2.5 * 0.1 * Matrix::Identity(k, k) + 0.3 * covol::tridiag_M(k);
    CHECK((lc.S - expect).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("assemble_S: gamma=2 matches brute-force local covariance") {
    ObservationSet obs;
    ComponentSeries c1, c2;
    c1.times = {0.0, 0.17, 0.31, 0.55, 0.8};
    c1.values = {0, 0, 0, 0, 0};
    c2.times = {0.05, 0.3, 0.62, 0.77};
    c2.values = {0, 0, 0, 0};
    obs.y = {c1, c2};
    BlockLayout lay = covol::build_layout(obs, 0.9, 1);
    Matrix B(2, 2);
    B << 1.3, 0.4, 0.4, 0.9;
    Vector v(2);
    v << 0.07, 0.02;
    covol::LocalCovariance lc = covol::assemble_S(B, v, lay, 1);
    Matrix ref = brute_S(lay, 1, B, v);
    CHECK((lc.S - ref).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("assemble_S: indefinite B fails Cholesky with NotPD") {
    ObservationSet obs = equidistant_obs(6, 1.0);
    BlockLayout lay = covol::build_layout(obs, 1.1, 1);
    Matrix B(1, 1);
    B << -2.0;
    Vector v(1);
    v << 0.0;
    CHECK_THROWS_AS(covol::assemble_S(B, v, lay, 1), covol::NotPD);
    covol::LocalCovariance lc = covol::assemble_S(B, v, lay, 1, false);
    CHECK_FALSE(lc.pd);
}

TEST_CASE("quasi_loglik: value matches dense brute force on a tiny instance") {
    ObservationSet obs = equidistant_obs(15, 1.0);
    std::mt19937_64 rng(3);
    std::normal_distribution<double> gauss(0.0, 0.2);
    for (auto& val : obs.y[0].values) val = gauss(rng);
    attach_time(obs);
    BlockLayout lay = covol::build_layout(obs, 1.0, 3);
    for (int m = 1; m <= 3; ++m) REQUIRE(lay.k[m - 1][0] == 4);

    Matrix B(1, 1);
    B << 1.7;
    Vector v(1);
    v << 0.05;
    ConstModel model(B);
    covol::ObjectiveEval ev = covol::quasi_loglik(model, Vector(0), v, obs, lay);

    double ref = 0.0;
    for (int m = 2; m <= 3; ++m) {
        Matrix S = brute_S(lay, m, B, v);
        Vector Z = covol::block_increments(obs, lay, m);
        ref += -0.5 * (Z.dot(S.inverse() * Z) + std::log(S.determinant()));
    }
    CHECK(ev.value == Catch::Approx(ref).epsilon(1e-10));
    CHECK(ev.skipped.empty());

    // Zero data: value reduces to -(1/2) sum log det S.
    for (auto& val : obs.y[0].values) val = 0.0;
    covol::ObjectiveEval ev0 = covol::quasi_loglik(model, Vector(0), v, obs, lay);
    double ld = 0.0;
    for (int m = 2; m <= 3; ++m) ld += std::log(brute_S(lay, m, B, v).determinant());
    CHECK(ev0.value == Catch::Approx(-0.5 * ld).epsilon(1e-10));
}

TEST_CASE("quasi_loglik: theta gradient matches finite differences (CIR 1-d)") {
    covol::PathConfig pcfg;
    pcfg.grid_steps = 8000;
    pcfg.model = covol::CIR1DParams{};
    covol::SamplingConfig scfg;
    scfg.lambda = {1.0};
    scfg.n = 400.0;
    scfg.noise_var = {0.01};
    auto ds = covol::simulate_dataset(pcfg, scfg, 5);
    BlockLayout lay = covol::build_layout(ds.obs, 1.0);
    Vector vhat = covol::estimate_noise_variance(ds.obs, lay);

    covol::CIR1DModel model;
    Vector theta(1);
    theta << 1.2;
    covol::ObjectiveEval ev = covol::quasi_loglik(model, theta, vhat, ds.obs, lay, true);
    Vector fd = oracles::fd_gradient(
        [&](const Vector& th) { return covol::quasi_loglik(model, th, vhat, ds.obs, lay).value; }, theta, 1e-6);
    CHECK(std::abs(ev.grad_theta(0) - fd(0)) <= 1e-5 * (1.0 + std::abs(fd(0))));

    // Thread count must not change the value (deterministic reduction).
    covol::ObjectiveEval ev4 = covol::quasi_loglik(model, theta, vhat, ds.obs, lay, true, 4);
    CHECK(ev4.value == ev.value);
    CHECK((ev4.grad_theta - ev.grad_theta).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("quasi_loglik: Sigma-entry gradients match finite differences (gamma=2)") {
    covol::PathConfig pcfg;
    pcfg.grid_steps = 8000;
    pcfg.model = covol::CIR2DSeasonalParams{};
    covol::SamplingConfig scfg;
    scfg.lambda = {1.0, 1.0};
    scfg.n = 250.0;
    scfg.noise_var = {0.005, 0.005};
    auto ds = covol::simulate_dataset(pcfg, scfg, 8);
    BlockLayout lay = covol::build_layout(ds.obs, 1.0);
    Vector vhat = covol::estimate_noise_variance(ds.obs, lay);

    ParamSigmaModel model;
    Vector theta(3);
    theta << 0.9, 0.8, 0.25;
    covol::ObjectiveEval ev = covol::quasi_loglik(model, theta, vhat, ds.obs, lay, true);
    Vector fd = oracles::fd_gradient(
        [&](const Vector& th) { return covol::quasi_loglik(model, th, vhat, ds.obs, lay).value; }, theta, 1e-6);
    for (int i = 0; i < 3; ++i)
        CHECK(std::abs(ev.grad_theta(i) - fd(i)) <= 1e-5 * (1.0 + std::abs(fd(i))));

    // Seasonal parametric family chains through the same Sigma gradients.
    covol::CIR2DSeasonalModel seas;
    Vector th2(3);
    th2 << 1.0, std::sqrt(0.75), 0.5;
    covol::ObjectiveEval ev2 = covol::quasi_loglik(seas, th2, vhat, ds.obs, lay, true);
    Vector fd2 = oracles::fd_gradient(
        [&](const Vector& th) { return covol::quasi_loglik(seas, th, vhat, ds.obs, lay).value; }, th2, 1e-6);
    for (int i = 0; i < 3; ++i)
        CHECK(std::abs(ev2.grad_theta(i) - fd2(i)) <= 1e-5 * (1.0 + std::abs(fd2(i))));
}

TEST_CASE("quasi_loglik: invariant under consistent component relabeling") {
    covol::PathConfig pcfg;
    pcfg.grid_steps = 5000;
    pcfg.model = covol::CIR2DSeasonalParams{};
    covol::SamplingConfig scfg;
    scfg.lambda = {1.0, 1.5};
    scfg.n = 200.0;
    scfg.noise_var = {0.005, 0.008};
    auto ds = covol::simulate_dataset(pcfg, scfg, 21);
    BlockLayout lay = covol::build_layout(ds.obs, 1.0);
    Vector vhat = covol::estimate_noise_variance(ds.obs, lay);
    Matrix B(2, 2);
    B << 1.1, 0.3, 0.3, 0.7;
    ConstModel model(B);
    double h1 = covol::quasi_loglik(model, Vector(0), vhat, ds.obs, lay).value;

    ObservationSet swapped = ds.obs;
    std::swap(swapped.y[0], swapped.y[1]);
    swapped.x = {ds.obs.x[0], ds.obs.x[2], ds.obs.x[1]};
    BlockLayout lay2 = covol::build_layout(swapped, 1.0);
    Vector vswap(2);
    vswap << vhat(1), vhat(0);
    Matrix Bs(2, 2);
    Bs << B(1, 1), B(0, 1), B(1, 0), B(0, 0);
    ConstModel model2(Bs);
    double h2 = covol::quasi_loglik(model2, Vector(0), vswap, swapped, lay2).value;
    CHECK(h2 == Catch::Approx(h1).epsilon(1e-12));
}

TEST_CASE("golden_section_max and nelder_mead_max on quadratics") {
    double xstar = covol::golden_section_max([](double x) { return -(x - 1.3) * (x - 1.3); }, -2.0, 4.0, 1e-9);
    CHECK(std::abs(xstar - 1.3) < 1e-6);

    Vector x0 = Vector::Zero(2);
    std::vector<double> trace;
    Vector best = covol::nelder_mead_max(
        [](const Vector& x) {
            const double a = x(0) - 0.4, b = x(1) + 1.1;
            return -(2.0 * a * a + b * b + 0.5 * a * b);
        },
        x0, 0.5, 3000, 1e-16, &trace);
    CHECK(std::abs(best(0) - 0.4) < 1e-5);
    CHECK(std::abs(best(1) + 1.1) < 1e-5);
    // Trace of incumbent values is nondecreasing.
    for (std::size_t i = 1; i < trace.size(); ++i) CHECK(trace[i] >= trace[i - 1] - 1e-15);
}

TEST_CASE("fit_argmax: correctly specified CIR recovers sigma near 1") {
    covol::PathConfig pcfg;
    pcfg.grid_steps = 40000;
    pcfg.model = covol::CIR1DParams{};
    covol::SamplingConfig scfg;
    scfg.lambda = {1.0};
    scfg.n = 2000.0;
    scfg.noise_var = {0.005};
    std::vector<double> errs;
    for (int rep = 0; rep < 5; ++rep) {
        auto ds = covol::simulate_dataset(pcfg, scfg, covol::derive_seed(1234, static_cast<std::uint64_t>(rep)));
        BlockLayout lay = covol::build_layout(ds.obs, 1.0);
        Vector vhat = covol::estimate_noise_variance(ds.obs, lay);
        covol::CIR1DModel model;
        double shat = covol::golden_section_max(
            [&](double s) {
                Vector th(1);
                th << s;
                return covol::quasi_loglik(model, th, vhat, ds.obs, lay).value;
            },
            0.2, 3.0, 1e-6);
        errs.push_back(std::abs(shat - 1.0));
    }
    std::sort(errs.begin(), errs.end());
    CHECK(errs[2] <= 0.15);
}

TEST_CASE("series oracles: gamma=1 collapses to the direct inverse") {
    ObservationSet obs = equidistant_obs(10, 1.0);
    BlockLayout lay = covol::build_layout(obs, 1.1, 1);
    Matrix B(1, 1);
    B << 1.4;
    Vector v(1);
    v << 0.05;
    covol::LocalCovariance lc = covol::assemble_S(B, v, lay, 1);
    Matrix inv0 = covol::inverse_series_oracle(B, v, lay, 1, 0);
    Matrix inv5 = covol::inverse_series_oracle(B, v, lay, 1, 5);
    CHECK((inv0 - lc.S.inverse()).cwiseAbs().maxCoeff() < 1e-10);
    CHECK((inv5 - inv0).cwiseAbs().maxCoeff() == 0.0);
    CHECK(covol::logdet_series_oracle(B, v, lay, 1, 5) == Catch::Approx(lc.log_det()).epsilon(1e-12));
}

TEST_CASE("series oracles: gamma=2 truncation error and geometric decay") {
    ObservationSet obs;
    ComponentSeries c1, c2;
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> uni(0.01, 0.12);
    double t = 0.0;
    while (t < 1.0) {
        c1.times.push_back(t);
        c1.values.push_back(0.0);
        t += uni(rng);
    }
    t = 0.013;
    while (t < 1.0) {
        c2.times.push_back(t);
        c2.values.push_back(0.0);
        t += uni(rng);
    }
    obs.y = {c1, c2};
    BlockLayout lay = covol::build_layout(obs, 1.05, 1);
    Matrix B(2, 2);
    B << 1.0, 0.35, 0.35, 1.2;
    Vector v(2);
    v << 0.02, 0.03;
    covol::LocalCovariance lc = covol::assemble_S(B, v, lay, 1);
    Matrix Sinv = lc.llt.solve(Matrix::Identity(lc.S.rows(), lc.S.rows()));

    Matrix inv20 = covol::inverse_series_oracle(B, v, lay, 1, 20);
    CHECK((inv20 - Sinv).cwiseAbs().maxCoeff() <= 1e-8);
    CHECK(covol::logdet_series_oracle(B, v, lay, 1, 20) == Catch::Approx(lc.log_det()).margin(1e-8));

    // Geometric decay of the truncation error in P.
    double prev = (covol::inverse_series_oracle(B, v, lay, 1, 2) - Sinv).cwiseAbs().maxCoeff();
    for (int P = 4; P <= 10; P += 2) {
        double err = (covol::inverse_series_oracle(B, v, lay, 1, P) - Sinv).cwiseAbs().maxCoeff();
        CHECK(err < prev);
        CHECK(err < 0.7 * prev);
        prev = err;
    }

    // No length-1 cycles: the P=1 log det truncation equals P=0.
    CHECK(covol::logdet_series_oracle(B, v, lay, 1, 1) ==
          Catch::Approx(covol::logdet_series_oracle(B, v, lay, 1, 0)).epsilon(1e-14));

    // Strong off-diagonal coupling violates the contraction condition.
    Matrix Bbad(2, 2);
    Bbad << 1.0, 1.2, 1.2, 1.0;
    CHECK_THROWS_AS(covol::inverse_series_oracle(Bbad, v, lay, 1, 3), covol::ContractionViolated);
}
