/**
 * @file models.hpp
 * @brief Volatility model families Sigma(t, x, theta) with parameter
 *        gradients: parametric CIR, polynomial, and a feed-forward neural
 *        network with backpropagation, plus the ADADELTA optimizer.
 *
 * Gradient convention: vjp(t, x, theta, Gbar) returns d<Gbar, Sigma>_F /
 * d theta with the full Frobenius inner product (off-diagonal entries of a
 * symmetric Gbar counted on both sides).
 */
#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <random>
#include <vector>

#include "covol/common.hpp"

namespace covol {

/// Sigma(t, x, theta) family; x is the explanatory vector without the time
/// coordinate (time is the separate first argument).
class VolatilityModel {
  public:
    virtual ~VolatilityModel() = default;
    virtual int gamma() const = 0;
    virtual int input_dim() const = 0;
    virtual int n_params() const = 0;
    virtual Matrix eval(double t, const Vector& x, const Vector& theta) const = 0;
    virtual Vector vjp(double t, const Vector& x, const Vector& theta, const Matrix& gbar) const = 0;
    virtual std::string name() const = 0;

    void check_theta(const Vector& theta) const {
        if (theta.size() != n_params()) throw ShapeMismatch(name() + ": theta size");
    }
};

/// Sigma(t, x, sigma) = sigma^2 x, gamma = 1. Negative x is clipped at 0 and
/// counted.
class CIR1DModel final : public VolatilityModel {
  public:
    int gamma() const override { return 1; }
    int input_dim() const override { return 1; }
    int n_params() const override { return 1; }
    std::string name() const override { return "cir1d"; }

    Matrix eval(double t, const Vector& x, const Vector& theta) const override {
        (void)t;
        check_theta(theta);
        Matrix s(1, 1);
        s(0, 0) = theta(0) * theta(0) * clip(x(0));
        return s;
    }
    Vector vjp(double t, const Vector& x, const Vector& theta, const Matrix& gbar) const override {
        (void)t;
        check_theta(theta);
        Vector g(1);
        g(0) = gbar(0, 0) * 2.0 * theta(0) * clip(x(0));
        return g;
    }
    mutable long clip_count = 0;

  private:
    double clip(double v) const {
        if (v < 0.0) {
            ++clip_count;
            return 0.0;
        }
        return v;
    }
};

/// Seasonal 2-d family with known a, b, c and theta = (s1, s2, s3):
/// Sigma = f(t)^2 [[s1^2 x1, s1 s3 r], [s1 s3 r, (s2^2 + s3^2) x2]],
/// f(t) = a t^2 + b t + c, r = sqrt(x1 x2).
class CIR2DSeasonalModel final : public VolatilityModel {
  public:
    double a = 1.0, b = -4.0 / 3.0, c = 2.0 / 3.0;

    int gamma() const override { return 2; }
    int input_dim() const override { return 2; }
    int n_params() const override { return 3; }
    std::string name() const override { return "cir2d_seasonal"; }

    Matrix eval(double t, const Vector& x, const Vector& theta) const override {
        check_theta(theta);
        const double f = a * t * t + b * t + c;
        const double f2 = f * f;
        const double x1 = std::max(x(0), 0.0), x2 = std::max(x(1), 0.0);
        const double r = std::sqrt(x1 * x2);
        Matrix s(2, 2);
        s(0, 0) = f2 * theta(0) * theta(0) * x1;
        s(0, 1) = s(1, 0) = f2 * theta(0) * theta(2) * r;
        s(1, 1) = f2 * (theta(1) * theta(1) + theta(2) * theta(2)) * x2;
        return s;
    }
    Vector vjp(double t, const Vector& x, const Vector& theta, const Matrix& gbar) const override {
        check_theta(theta);
        const double f = a * t * t + b * t + c;
        const double f2 = f * f;
        const double x1 = std::max(x(0), 0.0), x2 = std::max(x(1), 0.0);
        const double r = std::sqrt(x1 * x2);
        const double goff = gbar(0, 1) + gbar(1, 0);
        Vector g(3);
        g(0) = gbar(0, 0) * 2.0 * f2 * theta(0) * x1 + goff * f2 * theta(2) * r;
        g(1) = gbar(1, 1) * 2.0 * f2 * theta(1) * x2;
        g(2) = goff * f2 * theta(0) * r + gbar(1, 1) * 2.0 * f2 * theta(2) * x2;
        return g;
    }
};

/// Scalar polynomial family (beta0 + sum_{j<=p} (beta_j t^j + beta_{j+p} x^j))^2 + eps.
class PolyModel final : public VolatilityModel {
  public:
    explicit PolyModel(int p, double eps = 1e-4) : p_(p), eps_(eps) {
        if (p < 1 || p > 3) throw BadConfig("PolyModel: p must be in {1,2,3}");
    }
    int gamma() const override { return 1; }
    int input_dim() const override { return 1; }
    int n_params() const override { return 1 + 2 * p_; }
    std::string name() const override { return "poly" + std::to_string(p_); }
    double eps() const { return eps_; }

    Matrix eval(double t, const Vector& x, const Vector& theta) const override {
        check_theta(theta);
        const double g = base(t, x(0), theta);
        Matrix s(1, 1);
        s(0, 0) = g * g + eps_;
        return s;
    }
    Vector vjp(double t, const Vector& x, const Vector& theta, const Matrix& gbar) const override {
        check_theta(theta);
        const double g = base(t, x(0), theta);
        Vector out(n_params());
        out(0) = 1.0;
        double tp = 1.0, xp = 1.0;
        for (int j = 1; j <= p_; ++j) {
            tp *= t;
            xp *= x(0);
            out(j) = tp;
            out(j + p_) = xp;
        }
        return (gbar(0, 0) * 2.0 * g) * out;
    }

  private:
    double base(double t, double x, const Vector& theta) const {
        double g = theta(0);
        double tp = 1.0, xp = 1.0;
        for (int j = 1; j <= p_; ++j) {
            tp *= t;
            xp *= x;
            g += theta(j) * tp + theta(j + p_) * xp;
        }
        return g;
    }
    int p_;
    double eps_;
};

inline double swish(double x) { return x / (1.0 + std::exp(-x)); }
inline double swish_prime(double x) {
    const double s = 1.0 / (1.0 + std::exp(-x));
    return s * (1.0 + x * (1.0 - s));
}

/**
 * @brief Feed-forward network: input u0 = (t, x), hidden layers
 *        u^k = swish(W_k^T u^{k-1}), output [b]_{ij} = w_{ij}^T u^{K-1}
 *        for i <= j (symmetrized), Sigma = b b^T + eps I.
 */
class NeuralNetModel final : public VolatilityModel {
  public:
    /// widths = (L0, L1, ..., L_{K-1}) with L0 = 1 + input_dim (time included).
    NeuralNetModel(int gamma, int input_dim, std::vector<int> widths, double eps = 1e-4)
        : gamma_(gamma), input_dim_(input_dim), widths_(std::move(widths)), eps_(eps) {
        if (widths_.size() < 2) throw BadConfig("NeuralNetModel: depth K must be >= 2");
        if (widths_.front() != input_dim_ + 1) throw BadConfig("NeuralNetModel: L0 must be 1 + input_dim");
        for (int w : widths_)
            if (w < 1) throw BadConfig("NeuralNetModel: widths must be positive");
        n_pairs_ = gamma_ * (gamma_ + 1) / 2;
        n_hidden_ = 0;
        for (std::size_t k = 1; k < widths_.size(); ++k)
            n_hidden_ += widths_[k - 1] * widths_[k];
        n_out_ = n_pairs_ * widths_.back();
    }

    int gamma() const override { return gamma_; }
    int input_dim() const override { return input_dim_; }
    int n_params() const override { return n_hidden_ + n_out_; }
    std::string name() const override { return "nn"; }
    double eps() const { return eps_; }
    const std::vector<int>& widths() const { return widths_; }

    struct Cache {
        std::vector<Vector> u;  ///< activations u^0 .. u^{K-1}
        std::vector<Vector> z;  ///< pre-activations z^1 .. z^{K-1}
        Matrix b;
    };

    Cache forward(double t, const Vector& x, const Vector& theta) const {
        check_theta(theta);
        if (x.size() != input_dim_) throw ShapeMismatch("nn: input size");
        Cache cc;
        Vector u0(input_dim_ + 1);
        u0(0) = t;
        u0.tail(input_dim_) = x;
        cc.u.push_back(u0);
        int off = 0;
        for (std::size_t k = 1; k < widths_.size(); ++k) {
            const int li = widths_[k - 1], lo = widths_[k];
            Eigen::Map<const Matrix> W(theta.data() + off, li, lo);
            off += li * lo;
            Vector z = W.transpose() * cc.u.back();
            Vector u(lo);
            for (int j = 0; j < lo; ++j) u(j) = swish(z(j));
            cc.z.push_back(std::move(z));
            cc.u.push_back(std::move(u));
        }
        cc.b = Matrix::Zero(gamma_, gamma_);
        const int lw = widths_.back();
        int pidx = 0;
        for (int i = 0; i < gamma_; ++i)
            for (int j = i; j < gamma_; ++j, ++pidx) {
                Eigen::Map<const Vector> w(theta.data() + n_hidden_ + pidx * lw, lw);
                const double val = w.dot(cc.u.back());
                cc.b(i, j) = cc.b(j, i) = val;
            }
        return cc;
    }

    Matrix eval(double t, const Vector& x, const Vector& theta) const override {
        Cache cc = forward(t, x, theta);
        return cc.b * cc.b.transpose() + eps_ * Matrix::Identity(gamma_, gamma_);
    }

    /// Backward pass from a cached forward; gbar is dL/dSigma (Frobenius).
    Vector backward(const Cache& cc, const Vector& theta, const Matrix& gbar) const {
        check_theta(theta);
        Vector grad = Vector::Zero(n_params());
        // Sigma = b b^T: dL/db = (Gbar + Gbar^T) b.
        Matrix db = (gbar + gbar.transpose()) * cc.b;
        const int lw = widths_.back();
        Vector du = Vector::Zero(lw);
        int pidx = 0;
        for (int i = 0; i < gamma_; ++i)
            for (int j = i; j < gamma_; ++j, ++pidx) {
                // Entries (i,j) and (j,i) share one parameter block.
                const double cb = (i == j) ? db(i, i) : db(i, j) + db(j, i);
                Eigen::Map<const Vector> w(theta.data() + n_hidden_ + pidx * lw, lw);
                Eigen::Map<Vector> gw(grad.data() + n_hidden_ + pidx * lw, lw);
                gw = cb * cc.u.back();
                du += cb * w;
            }
        int off = n_hidden_;
        for (std::size_t k = widths_.size() - 1; k >= 1; --k) {
            const int li = widths_[k - 1], lo = widths_[k];
            off -= li * lo;
            Eigen::Map<const Matrix> W(theta.data() + off, li, lo);
            Eigen::Map<Matrix> gW(grad.data() + off, li, lo);
            Vector dz(lo);
            for (int j = 0; j < lo; ++j) dz(j) = du(j) * swish_prime(cc.z[k - 1](j));
            gW = cc.u[k - 1] * dz.transpose();
            du = W * dz;
        }
        return grad;
    }

    Vector vjp(double t, const Vector& x, const Vector& theta, const Matrix& gbar) const override {
        Cache cc = forward(t, x, theta);
        return backward(cc, theta, gbar);
    }

    /// Fan-based uniform initialization on +-sqrt(6 / (L_in + L_out)).
    Vector init_theta(std::uint64_t seed) const {
        std::mt19937_64 rng(seed);
        Vector theta(n_params());
        int off = 0;
        for (std::size_t k = 1; k < widths_.size(); ++k) {
            const int li = widths_[k - 1], lo = widths_[k];
            const double bound = std::sqrt(6.0 / (li + lo));
            std::uniform_real_distribution<double> uni(-bound, bound);
            for (int i = 0; i < li * lo; ++i) theta(off + i) = uni(rng);
            off += li * lo;
        }
        const int lw = widths_.back();
        const double bound = std::sqrt(6.0 / (lw + 1));
        std::uniform_real_distribution<double> uni(-bound, bound);
        for (int i = 0; i < n_out_; ++i) theta(off + i) = uni(rng);
        return theta;
    }

  private:
    int gamma_, input_dim_;
    std::vector<int> widths_;
    double eps_;
    int n_pairs_ = 0, n_hidden_ = 0, n_out_ = 0;
};

/// ADADELTA running state (Zeiler 2012).
struct AdadeltaState {
    Vector eg2;   ///< decaying average of squared gradients
    Vector edx2;  ///< decaying average of squared updates
    double rho = 0.95;
    double eps = 1e-6;

    explicit AdadeltaState(int n, double rho_ = 0.95, double eps_ = 1e-6)
        : eg2(Vector::Zero(n)), edx2(Vector::Zero(n)), rho(rho_), eps(eps_) {}
};

/**
 * @brief One ADADELTA step minimizing a loss: theta <- theta + dx with
 *        dx = -sqrt(edx2 + eps)/sqrt(eg2 + eps) * g, where
 *        g = grad_loss + 2 * weight_decay * theta.
 */
inline void adadelta_step(Vector& theta, const Vector& grad_loss, AdadeltaState& st,
                          double weight_decay = 0.0) {
    if (theta.size() != grad_loss.size() || theta.size() != st.eg2.size())
        throw ShapeMismatch("adadelta_step: size mismatch");
    for (int i = 0; i < theta.size(); ++i) {
        const double g = grad_loss(i) + 2.0 * weight_decay * theta(i);
        if (!std::isfinite(g)) throw NonFinite("adadelta_step: gradient not finite");
        st.eg2(i) = st.rho * st.eg2(i) + (1.0 - st.rho) * g * g;
        const double dx = -std::sqrt(st.edx2(i) + st.eps) / std::sqrt(st.eg2(i) + st.eps) * g;
        st.edx2(i) = st.rho * st.edx2(i) + (1.0 - st.rho) * dx * dx;
        theta(i) += dx;
    }
}

}  // namespace covol
