#pragma once

// Sample-average trajectory optimization: minimize the empirical cost J^N
// over per-sample, per-step control variables under mean-coupled dynamics.
// The gradient accounts for the cross-sample coupling through the empirical
// means (each control influences every sample's cost with weight 1/N).

#include "mftc/dynamics.hpp"

namespace mftc::opt {

enum class GradientMethod { Adjoint, FiniteDiff };

struct OptimizerConfig {
    int max_iters = 2000;
    double learning_rate = 0.5;
    GradientMethod gradient_method = GradientMethod::Adjoint;
    double convergence_tol = 1e-8;  // relative cost decrease
    double beta1 = 0.9;             // first-order moment decay
    double beta2 = 0.999;           // second-order moment decay
    int flat_iters_to_converge = 20;
    int threads = 1;
};

struct OptimalBatch {
    core::ControlBatch controls;
    core::Ensemble states;
    double achieved_cost = 0.0;
    int iterations_used = 0;
    bool converged = false;
};

/// dJ^N/du as an (N x N_T) array of control-dim vectors.
std::vector<std::vector<Vec>> cost_gradient(const core::ProblemSpec& spec,
                                            const core::TimeGrid& grid,
                                            const core::ControlBatch& controls,
                                            const std::vector<Vec>& initial_states,
                                            const core::NoiseTensor& noise,
                                            GradientMethod method);

/// First-order descent with adaptive moments and a cost-based line-search
/// fallback (step rejected and learning rate halved on cost increase, up to
/// 30 halvings before NonConvergence). Accepted iterates never increase J^N.
OptimalBatch solve_pcd(const core::ProblemSpec& spec, const core::TimeGrid& grid,
                       const std::vector<Vec>& initial_states, const core::NoiseTensor& noise,
                       const OptimizerConfig& config);

}  // namespace mftc::opt
