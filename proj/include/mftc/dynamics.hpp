#pragma once

// Discretized mean-field-type problem definition and ensemble simulation.
//
// An ensemble of N trajectories is coupled through the empirical means of the
// states and controls. Two discrete-time forms are supported:
//   Euler:  x+ = x + f(t, x, mx, u, mu) * dt + sigma * B
//   Direct: x+ = f(t, x, mx, u, mu)          + sigma * B
// where B ~ N(0, dt) per coordinate and (mx, mu) are the empirical means.

#include "mftc/common.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>

namespace mftc::core {

struct TimeGrid {
    double horizon = 0.0;  // T
    int steps = 0;         // N_T

    TimeGrid() = default;
    TimeGrid(double horizon_, int steps_) : horizon(horizon_), steps(steps_) {
        require(steps > 0, "TimeGrid: steps must be positive");
        require(horizon > 0.0, "TimeGrid: horizon must be positive");
    }
    static TimeGrid from_dt(double dt, int steps) { return TimeGrid(dt * steps, steps); }

    double dt() const { return horizon / steps; }
    double t(int k) const { return k * dt(); }
};

enum class DiscretizationMode { Euler, Direct };

/// drift(t, x, mean_x, u, mean_u) -> R^d
using DriftFn = std::function<Vec(double, const Vec&, const Vec&, const Vec&, const Vec&)>;
/// running_cost(t, x, mean_x, u, mean_u) -> R
using RunningCostFn = std::function<double(double, const Vec&, const Vec&, const Vec&, const Vec&)>;
/// terminal_cost(x, mean_x) -> R
using TerminalCostFn = std::function<double(const Vec&, const Vec&)>;

/// Partial derivatives of the drift with respect to each of its vector
/// arguments. Optional; when absent the adjoint solver falls back to central
/// finite differences on the callable.
struct DriftJacobians {
    std::function<Mat(double, const Vec&, const Vec&, const Vec&, const Vec&)> dx;
    std::function<Mat(double, const Vec&, const Vec&, const Vec&, const Vec&)> dmean_x;
    std::function<Mat(double, const Vec&, const Vec&, const Vec&, const Vec&)> du;
    std::function<Mat(double, const Vec&, const Vec&, const Vec&, const Vec&)> dmean_u;
};

struct RunningCostGradients {
    std::function<Vec(double, const Vec&, const Vec&, const Vec&, const Vec&)> dx;
    std::function<Vec(double, const Vec&, const Vec&, const Vec&, const Vec&)> dmean_x;
    std::function<Vec(double, const Vec&, const Vec&, const Vec&, const Vec&)> du;
    std::function<Vec(double, const Vec&, const Vec&, const Vec&, const Vec&)> dmean_u;
};

struct TerminalCostGradients {
    std::function<Vec(const Vec&, const Vec&)> dx;
    std::function<Vec(const Vec&, const Vec&)> dmean_x;
};

struct BoxBounds {
    Vec lo;
    Vec hi;
};

struct ProblemSpec {
    int state_dim = 1;
    int control_dim = 1;
    DriftFn drift;
    RunningCostFn running_cost;
    TerminalCostFn terminal_cost;
    double noise_scale = 0.0;  // sigma
    std::function<Vec(std::mt19937_64&)> initial_law;
    DiscretizationMode mode = DiscretizationMode::Euler;
    std::optional<BoxBounds> control_bounds;

    // Optional analytic derivatives (used by the adjoint solvers when present).
    std::optional<DriftJacobians> drift_jac;
    std::optional<RunningCostGradients> running_grad;
    std::optional<TerminalCostGradients> terminal_grad;
};

struct NoiseTensor {
    // increments[i][k] in R^d, each coordinate ~ N(0, dt).
    std::vector<std::vector<Vec>> increments;
    std::uint64_t seed = 0;

    int samples() const { return static_cast<int>(increments.size()); }
    int steps() const { return increments.empty() ? 0 : static_cast<int>(increments[0].size()); }
};

/// Per-trajectory streams keyed by (seed, i): bit-identical regardless of the
/// order the samples are generated in.
NoiseTensor sample_noise(std::uint64_t seed, int samples, int steps, int dim, double dt);

struct ControlBatch {
    std::vector<std::vector<Vec>> controls;  // [i][k] in R^c
    std::vector<Vec> mean_controls;          // [k]

    int samples() const { return static_cast<int>(controls.size()); }
    int steps() const { return controls.empty() ? 0 : static_cast<int>(controls[0].size()); }

    static ControlBatch zeros(int samples, int steps, int control_dim);
    void recompute_means();
};

struct Ensemble {
    // states[i][k] for k = 0..N_T (N_T+1 time points per trajectory).
    std::vector<std::vector<Vec>> states;
    std::vector<Vec> mean_states;   // [k], k = 0..N_T, over non-diverged samples
    std::vector<int> diverged_at;   // step index of divergence, -1 if clean

    int samples() const { return static_cast<int>(states.size()); }
    int time_points() const { return states.empty() ? 0 : static_cast<int>(states[0].size()); }
    bool any_diverged() const;
};

/// One step of the discrete dynamics. Dimension mismatches are a contract
/// violation; a non-finite or out-of-threshold output is the caller's
/// divergence signal, not an exception.
Vec step(const ProblemSpec& spec, double t, double dt, const Vec& x, const Vec& mean_x,
         const Vec& u, const Vec& mean_u, const Vec& noise);

/// Rolls the whole ensemble forward, recomputing empirical means at every
/// step before stepping. Trajectories that cross the divergence threshold are
/// frozen at a NaN sentinel and excluded from subsequent means.
Ensemble rollout_ensemble(const ProblemSpec& spec, const TimeGrid& grid,
                          const std::vector<Vec>& initial_states,
                          const ControlBatch& controls, const NoiseTensor& noise);

/// Sample-average cost J^N. Returns the saturated cost if any trajectory
/// diverged or the accumulated value is non-finite.
double empirical_cost(const ProblemSpec& spec, const TimeGrid& grid,
                      const Ensemble& ensemble, const ControlBatch& controls);

/// Deterministic recursion for E[x(t_k)], valid for drift affine in
/// (x, mean_x, u, mean_u). Returns the N_T+1 mean states including t_0.
std::vector<Vec> propagate_mean(const ProblemSpec& spec, const TimeGrid& grid,
                                const Vec& mean_x0, const std::vector<Vec>& mean_controls);

// --- numeric derivative fallbacks (used when analytic ones are absent) ------

DriftJacobians numeric_drift_jacobians(const ProblemSpec& spec);
RunningCostGradients numeric_running_gradients(const ProblemSpec& spec);
TerminalCostGradients numeric_terminal_gradients(const ProblemSpec& spec);

// --- serialization -----------------------------------------------------------
//
// Columnar CSV: sample,step,coordinate,value. Binary: 16-byte header
// (magic "MFTC", u16 version, u16 dim, u32 samples, u32 time points) followed
// by little-endian doubles in (sample, step, coordinate) order.

void write_states_csv(std::ostream& os, const std::vector<std::vector<Vec>>& data);
void write_states_binary(std::ostream& os, const std::vector<std::vector<Vec>>& data);
std::vector<std::vector<Vec>> read_states_binary(std::istream& is);

}  // namespace mftc::core
