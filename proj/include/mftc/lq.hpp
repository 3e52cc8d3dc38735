#pragma once

// Scalar linear-quadratic mean-field benchmark: discrete map
//   x+ = a1 x + a2 m + b1 u + b2 nu + sigma B,   m = E[x], nu = E[u]
// with per-step cost q1 x^2 + r1 u^2 + q2 (x-m)^2 + r2 (u-nu)^2 and the
// matching terminal cost. Includes an exact Riccati oracle obtained by the
// mean/deviation decomposition, the two reference network architectures, and
// the end-to-end pipeline (data, training, stability, attack, retraining).

#include "mftc/retrain.hpp"

#include <string>

namespace mftc::lq {

struct LqParams {
    double a1 = 2.0, a2 = 1.0, b1 = 1.0, b2 = 2.0;
    double q1 = 20.0, q2 = 10.0, r1 = 200.0, r2 = 100.0;
    double sigma = 1.0;
    int steps = 15;     // N_T
    double dt = 0.05;

    core::TimeGrid grid() const { return core::TimeGrid::from_dt(dt, steps); }
    void validate() const;
};

/// Coupled-ensemble problem (d = 1, one control slot pair via the empirical
/// means). initial_half_width sets the uniform initial law half-width.
core::ProblemSpec make_spec(const LqParams& params, double initial_half_width = 50.0);

/// Deterministic-mean lift: state (x, m), controls (u, nu), no cross-sample
/// coupling. Each sample carries its own mean path started at m0 = x0, which
/// matches the closed-loop evaluation where E[x0] = x0. Noise only drives the
/// x coordinate (use lifted_noise).
core::ProblemSpec make_lifted_spec(const LqParams& params, double initial_half_width = 50.0);

/// Noise tensor for the lifted problem: N(0, dt) in the x coordinate, zero in
/// the mean coordinate.
core::NoiseTensor lifted_noise(std::uint64_t seed, int samples, int steps, double dt);

/// Lifted initial states (x0, x0) with x0 ~ U[-half_width, half_width].
std::vector<Vec> lifted_initial_states(std::uint64_t seed, int samples, double half_width);

/// Flattens a lifted solve into standard training records: input
/// (x, m, B_x), target (u, nu).
nn::Dataset lifted_records(const opt::OptimalBatch& batch, const core::NoiseTensor& noise);

struct RiccatiSolution {
    // Index k = 0..N_T for values, 0..N_T-1 for gains.
    std::vector<double> value_mean;  // mean-subsystem coefficients
    std::vector<double> gain_mean;
    std::vector<double> value_dev;   // deviation-subsystem coefficients
    std::vector<double> gain_dev;
    std::vector<double> noise_terms; // sigma^2 dt * P_{k+1} per step
    double noise_cost = 0.0;         // their sum

    std::string to_json() const;
};

RiccatiSolution riccati_solve(const LqParams& params);

/// P0_mean * mean(x0)^2 + P0_dev * var(x0) + noise cost, on the empirical
/// moments of the given initial states (first coordinate for lifted states).
double riccati_optimal_cost(const RiccatiSolution& solution,
                            const std::vector<Vec>& initial_states);

/// Optimal feedback controls u^i = -Kbar * mean - K * (x^i - mean) rolled out
/// on the coupled ensemble; attains the oracle cost within sampling slack.
opt::OptimalBatch riccati_feedback_rollout(const LqParams& params,
                                           const std::vector<Vec>& initial_states,
                                           const core::NoiseTensor& noise);

// Table-I architectures: 3 layers / 6 neurons and 5 layers / 106 neurons.
std::vector<nn::LayerSpec> nn1_architecture();
std::vector<nn::LayerSpec> nn2_architecture();

/// Largest x0 > 0 (bisection, resolution r/256, capped at 2r) from which the
/// deterministic-start closed loop (x0 = E[x0], noisy state) stays in B_r for
/// steps 1..N_T-1 in at least half of `trials` seeded rollouts.
double basin_edge(const core::ProblemSpec& spec, const core::TimeGrid& grid,
                  const nn::MlpParams& params, double r, int trials, std::uint64_t seed);

enum class DataGenerator { PcdLifted, PcdEnsemble, RiccatiFeedback };

struct BenchmarkConfig {
    LqParams lq;
    double initial_half_width = 50.0;
    int data_samples = 1000;          // N
    DataGenerator generator = DataGenerator::PcdLifted;
    opt::OptimizerConfig optimizer;
    nn::TrainConfig training;
    std::vector<stab::ScenarioSpec> scenarios;  // defaults: Table-II rows
    int stability_trials = 1000;      // M
    int adversarial_count = 500;      // N-check
    double attack_alpha = 250.0;
    double attack_beta = 0.02;
    double adversarial_min_separation = 0.25;
    std::uint64_t seed = 1;
    int threads = 1;

    static BenchmarkConfig defaults();
    /// Smoke scale: small N / M / epochs for fast end-to-end runs.
    static BenchmarkConfig smoke();
};

struct GeneratedData {
    nn::Dataset records;
    std::vector<Vec> initial_states;
    core::NoiseTensor noise;
    double achieved_cost = 0.0;
    double oracle_cost = 0.0;
};

/// Training data per the configured generator (records are always laid out as
/// input (x, mean, noise), target (control, mean control)).
GeneratedData generate_dataset(const BenchmarkConfig& config);

struct BenchmarkReport {
    RiccatiSolution riccati;
    double optimizer_cost = 0.0;
    double oracle_cost = 0.0;
    nn::MlpParams nn1, nn2, improved_nn1;
    stab::ComparisonTable table;
    adv::AttackResult attack;
    bool harvest_shortfall = false;
    int harvested = 0;
    double edge_nn1 = 0.0, edge_improved = 0.0;
    std::string summary_json;
};

/// Runs the whole pipeline and writes table2.csv, fig3_trajectories.csv,
/// riccati.json, controller files, attack artifacts and summary.json into
/// out_dir (created if missing).
BenchmarkReport run_benchmark(const BenchmarkConfig& config, const std::string& out_dir);

}  // namespace mftc::lq
