#pragma once

// Adversarial retraining loop: harvest adversarial initial conditions, solve
// the optimal-control problem from them, and retrain the controller on the
// augmented dataset (base and adversarial sums equally weighted).

#include "mftc/attack.hpp"
#include "mftc/optimizer.hpp"

namespace mftc::retrain {

enum class Provenance { Base, Adversarial };

struct AugmentedDataset {
    nn::Dataset records;
    std::vector<Provenance> provenance;  // per record

    int adversarial_count() const;
    void append(const nn::Dataset& more, Provenance tag);
};

struct HarvestConfig {
    adv::AttackConfig attack;
    int count = 0;               // N-check
    double min_separation = 0.0; // 0 means alpha / 100
    int attempt_budget = 0;      // 0 means 20 * count attacks
};

struct HarvestResult {
    std::vector<Vec> states;
    bool shortfall = false;
};

/// Runs attacks with fresh noise seeds until `count` verified adversarial
/// initial states are collected (de-duplicated by minimum pairwise distance)
/// or the attempt budget runs out (SHORTFALL).
HarvestResult harvest_adversarials(const core::ProblemSpec& spec, const core::TimeGrid& grid,
                                   const nn::MlpParams& params, const HarvestConfig& config);

/// Optimal controls from the adversarial initial states (delegates to the
/// trajectory optimizer with those states as the initial ensemble).
opt::OptimalBatch solve_from_adversarials(const core::ProblemSpec& spec,
                                          const core::TimeGrid& grid,
                                          const std::vector<Vec>& adversarial_states,
                                          const core::NoiseTensor& noise,
                                          const opt::OptimizerConfig& config);

/// Standard record layout: input (x, mean_x, B), target (u, mean_u).
nn::Dataset records_from_batch(const opt::OptimalBatch& batch, const core::NoiseTensor& noise);

struct RetrainConfig {
    nn::TrainConfig train;
    bool warm_start = true;            // initialize at the incoming parameters
    double adversarial_weight = 1.0;   // knob; 1 matches the plain two-sum loss
};

/// Minimizes the combined base + adversarial loss, warm-started by default.
nn::TrainResult retrain(const nn::MlpParams& params_init, const AugmentedDataset& augmented,
                        const RetrainConfig& config, std::uint64_t cold_start_seed = 0);

}  // namespace mftc::retrain
