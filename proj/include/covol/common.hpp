/**
 * @file common.hpp
 * @brief Shared error types, deterministic reductions, and small utilities.
 */
#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace covol {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Base class for all library errors.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Matrix expected to be positive semi-definite is not.
struct NotPSD : Error {
    using Error::Error;
};

/// Matrix expected to be positive definite is not (factorization failed).
struct NotPD : Error {
    using Error::Error;
};

/// Matrix expected to be invertible is singular.
struct Singular : Error {
    using Error::Error;
};

/// Argument list has unsupported length.
struct BadArity : Error {
    using Error::Error;
};

/// Configuration violates a documented invariant.
struct BadConfig : Error {
    using Error::Error;
};

/// Tensor/matrix dimensions do not line up.
struct ShapeMismatch : Error {
    using Error::Error;
};

/// Series-expansion contraction condition fails.
struct ContractionViolated : Error {
    using Error::Error;
};

/// A block has no usable increments for some component.
struct EmptyBlock : Error {
    using Error::Error;
};

/// A block has no explanatory observations.
struct EmptyExplanatoryBlock : Error {
    using Error::Error;
};

/// Objective became non-finite during optimization.
struct NonFinite : Error {
    using Error::Error;
};

/// Pre-averaging needs at least two increments per component in a block.
struct BlockTooSmall : Error {
    using Error::Error;
};

/// The definitional and simplified objective forms disagree; implementation bug.
struct SimplificationMismatch : Error {
    using Error::Error;
};

/**
 * @brief Pairwise (cascade) summation over a vector of terms.
 *
 * Used as the deterministic reduction for all per-block objective sums: the
 * result depends only on the order of the input vector, never on thread
 * scheduling.
 */
inline double pairwise_sum(const std::vector<double>& terms, std::size_t lo, std::size_t hi) {
    const std::size_t n = hi - lo;
    if (n == 0) return 0.0;
    if (n <= 8) {
        double s = 0.0;
        for (std::size_t i = lo; i < hi; ++i) s += terms[i];
        return s;
    }
    const std::size_t mid = lo + n / 2;
    return pairwise_sum(terms, lo, mid) + pairwise_sum(terms, mid, hi);
}

inline double pairwise_sum(const std::vector<double>& terms) {
    return pairwise_sum(terms, 0, terms.size());
}

/**
 * @brief Run fn(i) for i in [0, n) on up to n_threads workers.
 *
 * fn must write only to its own slot of preallocated output storage; the
 * caller performs any reduction afterwards in deterministic order.
 */
inline void parallel_for(std::size_t n, unsigned n_threads, const std::function<void(std::size_t)>& fn) {
    if (n == 0) return;
    if (n_threads <= 1 || n == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    const unsigned workers = static_cast<unsigned>(std::min<std::size_t>(n_threads, n));
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (unsigned w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            for (std::size_t i = w; i < n; i += workers) fn(i);
        });
    }
    for (auto& t : pool) t.join();
}

/// SplitMix64 step; used to derive independent per-replication seeds.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) {
    std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (index + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace covol
