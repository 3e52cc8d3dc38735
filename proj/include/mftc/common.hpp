#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace mftc {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Any coordinate beyond this magnitude (or non-finite) marks a trajectory as diverged.
inline constexpr double kDivergenceThreshold = 1e12;

// Cost assigned to diverged rollouts so ascent directions stay well defined.
inline constexpr double kSaturatedCost = 1e30;

/// Thrown when a caller violates a documented precondition (dimension
/// mismatches, invalid configuration values, ...). Maps to exit code 2 in the CLI.
class ContractViolation : public std::runtime_error {
public:
    explicit ContractViolation(const std::string& what) : std::runtime_error(what) {}
};

/// Thrown when an iterative solver fails to make progress. Exit code 3.
class NonConvergence : public std::runtime_error {
public:
    explicit NonConvergence(const std::string& what) : std::runtime_error(what) {}
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw ContractViolation(msg);
}

inline bool is_finite(const Vec& v) { return v.allFinite(); }

inline bool is_diverged_state(const Vec& v) {
    if (!v.allFinite()) return true;
    return v.cwiseAbs().maxCoeff() > kDivergenceThreshold;
}

// --- keyed RNG streams ------------------------------------------------------
//
// All randomness flows from a single 64-bit seed through splitmix64-mixed
// stream keys, so results do not depend on thread schedule or call order.

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t mix_keys(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
    return splitmix64(splitmix64(seed ^ splitmix64(a)) ^ splitmix64(b ^ 0xa5a5a5a5a5a5a5a5ULL));
}

/// RNG for the stream identified by (seed, key_a, key_b).
inline std::mt19937_64 keyed_rng(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
    return std::mt19937_64(mix_keys(seed, a, b));
}

inline Vec gaussian_vector(std::mt19937_64& rng, int dim, double stddev) {
    std::normal_distribution<double> normal(0.0, stddev);
    Vec v(dim);
    for (int i = 0; i < dim; ++i) v[i] = normal(rng);
    return v;
}

// --- deterministic parallel loop -------------------------------------------

/// Runs fn(i) for i in [0, n). Work is split into contiguous chunks; each
/// index is processed exactly once regardless of the thread count, so any
/// per-index keyed randomness is schedule independent.
inline void parallel_for(int n, int threads, const std::function<void(int)>& fn) {
    if (n <= 0) return;
    if (threads <= 0) threads = static_cast<int>(std::thread::hardware_concurrency());
    if (threads <= 1 || n == 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    threads = std::min(threads, n);
    std::vector<std::thread> pool;
    pool.reserve(threads);
    const int chunk = (n + threads - 1) / threads;
    for (int t = 0; t < threads; ++t) {
        const int lo = t * chunk;
        const int hi = std::min(n, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([lo, hi, &fn] {
            for (int i = lo; i < hi; ++i) fn(i);
        });
    }
    for (auto& th : pool) th.join();
}

}  // namespace mftc
