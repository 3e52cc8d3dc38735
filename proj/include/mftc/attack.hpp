#pragma once

// Projected gradient ascent on the closed-loop cost over the initial state:
// y <- Proj_{B_alpha}(y + beta * grad J(y)), stopping when the rollout from y
// meets the configured divergence goal.

#include "mftc/stability.hpp"

namespace mftc::adv {

enum class AttackGradientMethod { Adjoint, FiniteDiff };

/// Strict divergence uses the global threshold; EscapeBall treats leaving
/// B_{escape_radius} as the (weaker) attack goal.
enum class AttackGoal { Divergence, EscapeBall };

struct AttackConfig {
    double alpha = 0.0;          // search-ball radius
    double beta = 1.0;           // PGD step size, constant per run
    int max_pgd_iters = 100;
    int restarts = 1;
    std::uint64_t seed = 0;
    AttackGradientMethod gradient_method = AttackGradientMethod::Adjoint;
    double init_delta = 0.0;     // y0 ~ B_init_delta; 0 means alpha/10
    AttackGoal goal = AttackGoal::Divergence;
    double escape_radius = 0.0;  // required for EscapeBall
    stab::MeanMode mean_mode = stab::MeanMode::Deterministic;
    int ensemble_size = 1;       // companions when mean_mode == Ensemble
    int threads = 1;
};

enum class StopReason { Diverged, MaxIters, Stalled };

struct AttackResult {
    bool found = false;
    Vec adversarial;                  // empty when !found
    std::vector<Vec> iterates;        // y_0 .. y_m of the reported restart
    std::vector<double> objectives;   // J(y_m) per iterate
    StopReason stop_reason = StopReason::MaxIters;
    int restart_index = -1;
    std::uint64_t seed = 0;

    std::string to_json() const;
    void write_walk_csv(std::ostream& os) const;
};

Vec project_ball(const Vec& x, const stab::Ball& ball);

/// Closed-loop empirical cost from initial state y (x0 = E[x0] = y), with the
/// controller supplying both control slots. Diverged rollouts contribute the
/// saturated cost.
double attack_objective(const core::ProblemSpec& spec, const core::TimeGrid& grid,
                        const nn::MlpParams& params, const Vec& y,
                        const stab::NoiseStream& noise, stab::MeanMode mean_mode,
                        int ensemble_size = 1, std::uint64_t ensemble_noise_seed = 0);

/// dJ/dy. Exact reverse-mode through all steps (dynamics adjoint chained with
/// the controller's input gradient) in deterministic-mean mode; central
/// finite differences otherwise or past saturation.
Vec input_gradient(const core::ProblemSpec& spec, const core::TimeGrid& grid,
                   const nn::MlpParams& params, const Vec& y, const stab::NoiseStream& noise,
                   stab::MeanMode mean_mode, AttackGradientMethod method,
                   int ensemble_size = 1, std::uint64_t ensemble_noise_seed = 0);

AttackResult pgd_attack(const core::ProblemSpec& spec, const core::TimeGrid& grid,
                        const nn::MlpParams& params, const AttackConfig& config);

}  // namespace mftc::adv
