#pragma once

// Closed-loop simulation (dynamics + trained controller) and empirical
// stochastic-stability characterization: containment probabilities with
// Wilson intervals, delta-radius search, and controller comparison tables.
//
// The controller consumes z = (x, mean_x, B_k) and emits the pair
// (u, mean_u) that feeds the drift's two control slots.

#include "mftc/dynamics.hpp"
#include "mftc/mlp.hpp"

#include <cstdint>
#include <string>

namespace mftc::stab {

struct Ball {
    Vec center;
    double radius = 0.0;

    static Ball origin(int dim, double radius) { return Ball{Vec::Zero(dim), radius}; }
    bool contains(const Vec& x) const { return (x - center).norm() <= radius; }
};

enum class Sampling { UniformBall, UniformSphere, Grid };
enum class MeanMode { Ensemble, Deterministic };

struct StabilityQuery {
    double r = 0.0;
    double epsilon = 0.0;  // in (0,1)
    int trials = 1;        // M
    Sampling sampling = Sampling::UniformBall;
    MeanMode mean_mode = MeanMode::Deterministic;
    std::uint64_t seed = 0;
    int ensemble_size = 100;       // companion copies in Ensemble mode
    bool check_terminal = false;   // Eq-literal default: steps 1..N_T-1 only
    int threads = 1;
};

enum class TrialOutcome { Contained, Escaped, Diverged };

struct StabilityReport {
    std::string scenario;
    double r = 0.0;
    double epsilon = 0.0;
    double delta = 0.0;
    double p_hat = 0.0;
    double ci_lo = 0.0;
    double ci_hi = 0.0;
    int trials = 0;
    std::uint64_t seed = 0;
    std::vector<TrialOutcome> outcomes;
    std::vector<Vec> initial_states;

    int count(TrialOutcome o) const;
    std::string to_json() const;
    void write_trials_csv(std::ostream& os) const;
};

struct ClosedLoopTrajectory {
    std::vector<Vec> states;       // t_0 .. t_NT
    std::vector<Vec> mean_states;  // companion mean path
    int diverged_at = -1;          // -1 if clean

    bool diverged() const { return diverged_at >= 0; }
    double sup_norm(int first_step = 1, int last_step = -1) const;
};

/// Per-step noise source for a closed-loop rollout; must return a d-vector
/// of N(0, dt) increments for step k.
using NoiseStream = std::function<Vec(int)>;

/// Keyed Gaussian noise stream (bit-reproducible for a given key pair).
NoiseStream gaussian_noise_stream(std::uint64_t seed, std::uint64_t trial_key, int dim, double dt);
NoiseStream zero_noise_stream(int dim);

/// Rolls the closed loop from x0. Deterministic mean mode propagates the
/// companion mean with zero noise and the controller evaluated at
/// (mean, mean, 0); Ensemble mode runs `ensemble_size` noisy copies of the
/// state and uses their empirical mean (the returned trajectory is copy 0).
ClosedLoopTrajectory closed_loop_rollout(const core::ProblemSpec& spec,
                                         const core::TimeGrid& grid, const nn::MlpParams& params,
                                         const Vec& x0, const Vec& mean_x0,
                                         const NoiseStream& noise, MeanMode mean_mode,
                                         int ensemble_size = 1,
                                         std::uint64_t ensemble_noise_seed = 0);

TrialOutcome classify_containment(const ClosedLoopTrajectory& traj, const Ball& ball,
                                  bool check_terminal);

/// Wilson 95% binomial interval.
void wilson_interval(int successes, int trials, double& lo, double& hi);

/// Samples M initial states from B_delta (antithetic pairs, coupled across
/// delta via unit samples scaled by delta) and counts trajectories that stay
/// in B_r for k = 1..N_T-1. The initial mean is set to x0 per trial.
StabilityReport estimate_containment(const core::ProblemSpec& spec, const core::TimeGrid& grid,
                                     const nn::MlpParams& params, double delta,
                                     const StabilityQuery& query);

struct DeltaSearchResult {
    double delta = 0.0;
    bool found = false;  // false: even the smallest grid delta fails
};

/// Largest delta on a bisection grid of resolution r/256 whose p-hat meets
/// 1 - epsilon with Wilson lower bound >= 1 - epsilon - 0.02. Monotonicity of
/// p-hat in delta is assumed for the bisection and verified at queried points.
DeltaSearchResult find_delta(const core::ProblemSpec& spec, const core::TimeGrid& grid,
                             const nn::MlpParams& params, double r, double epsilon,
                             const StabilityQuery& query);

struct ScenarioSpec {
    std::string label;
    double r = 0.0;
    double epsilon = 0.0;
    double delta = 0.0;
};

struct ComparisonTable {
    std::vector<std::string> controller_names;
    std::vector<ScenarioSpec> scenarios;
    std::vector<std::vector<StabilityReport>> cells;  // [scenario][controller]

    std::string to_text() const;
    void write_csv(std::ostream& os) const;
};

ComparisonTable compare_controllers(const core::ProblemSpec& spec, const core::TimeGrid& grid,
                                    const std::vector<nn::MlpParams>& controllers,
                                    const std::vector<std::string>& names,
                                    const std::vector<ScenarioSpec>& scenarios,
                                    const StabilityQuery& query);

}  // namespace mftc::stab
