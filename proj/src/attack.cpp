#include "mftc/attack.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>

#include <nlohmann/json.hpp>

namespace mftc::adv {

using core::DiscretizationMode;
using core::ProblemSpec;
using core::TimeGrid;
using stab::ClosedLoopTrajectory;
using stab::MeanMode;
using stab::NoiseStream;
using stab::gaussian_noise_stream;

std::string AttackResult::to_json() const {
    nlohmann::json j;
    j["found"] = found;
    if (found) j["adversarial"] = std::vector<double>(adversarial.data(),
                                                      adversarial.data() + adversarial.size());
    nlohmann::json path = nlohmann::json::array();
    for (const Vec& y : iterates)
        path.push_back(std::vector<double>(y.data(), y.data() + y.size()));
    j["iterates"] = path;
    j["objectives"] = objectives;
    j["stop_reason"] = stop_reason == StopReason::Diverged  ? "diverged"
                       : stop_reason == StopReason::MaxIters ? "max_iters"
                                                             : "stalled";
    j["restart_index"] = restart_index;
    j["seed"] = seed;
    return j.dump(2);
}

void AttackResult::write_walk_csv(std::ostream& os) const {
    const int d = iterates.empty() ? 0 : static_cast<int>(iterates[0].size());
    os << "iter";
    for (int c = 0; c < d; ++c) os << ",y_" << c;
    os << ",objective\n";
    char buf[64];
    for (std::size_t m = 0; m < iterates.size(); ++m) {
        os << m;
        for (int c = 0; c < d; ++c) {
            std::snprintf(buf, sizeof(buf), "%.17g", iterates[m][c]);
            os << ',' << buf;
        }
        std::snprintf(buf, sizeof(buf), "%.17g", objectives[m]);
        os << ',' << buf << "\n";
    }
}

Vec project_ball(const Vec& x, const stab::Ball& ball) {
    require(ball.radius > 0.0, "project_ball: radius must be positive");
    const Vec rel = x - ball.center;
    const double nrm = rel.norm();
    if (nrm <= ball.radius) return x;
    return ball.center + (ball.radius / nrm) * rel;
}

namespace {

struct ClosedLoopCost {
    double value = 0.0;
    bool diverged = false;
};

ClosedLoopCost closed_loop_cost(const ProblemSpec& spec, const TimeGrid& grid,
                                const nn::MlpParams& params, const ClosedLoopTrajectory& traj,
                                const NoiseStream& noise) {
    const double dtf = spec.mode == DiscretizationMode::Euler ? grid.dt() : 1.0;
    if (traj.diverged_at >= 0) return {kSaturatedCost, true};
    double total = 0.0;
    for (int k = 0; k < grid.steps; ++k) {
        Vec z(3 * spec.state_dim);
        z << traj.states[k], traj.mean_states[k], noise(k);
        const Vec out = nn::forward(params, z);
        total += spec.running_cost(grid.t(k), traj.states[k], traj.mean_states[k],
                                   out.head(spec.control_dim), out.tail(spec.control_dim)) *
                 dtf;
    }
    total += spec.terminal_cost(traj.states[grid.steps], traj.mean_states[grid.steps]);
    if (!std::isfinite(total)) return {kSaturatedCost, true};
    return {total, false};
}

/// Exact reverse-mode dJ/dy for the deterministic-mean closed loop. The
/// augmented state is (x, m); both start at y, so dJ/dy = lambda_x0 +
/// lambda_m0.
Vec deterministic_adjoint(const ProblemSpec& spec, const TimeGrid& grid,
                          const nn::MlpParams& params, const Vec& y, const NoiseStream& noise) {
    const int d = spec.state_dim;
    const int c = spec.control_dim;
    const double dt = grid.dt();
    const bool euler = spec.mode == DiscretizationMode::Euler;
    const double dtf = euler ? dt : 1.0;
    const double fscale = euler ? dt : 1.0;
    const Vec zero = Vec::Zero(d);

    const ClosedLoopTrajectory traj = stab::closed_loop_rollout(
        spec, grid, params, y, y, noise, MeanMode::Deterministic);
    require(traj.diverged_at < 0, "deterministic_adjoint: rollout diverged");

    const auto fjac = spec.drift_jac ? *spec.drift_jac : core::numeric_drift_jacobians(spec);
    const auto lgrad =
        spec.running_grad ? *spec.running_grad : core::numeric_running_gradients(spec);
    const auto pgrad =
        spec.terminal_grad ? *spec.terminal_grad : core::numeric_terminal_gradients(spec);

    Vec lambda_x = pgrad.dx(traj.states[grid.steps], traj.mean_states[grid.steps]);
    Vec lambda_m = pgrad.dmean_x(traj.states[grid.steps], traj.mean_states[grid.steps]);

    for (int k = grid.steps - 1; k >= 0; --k) {
        const double t = grid.t(k);
        const Vec& x = traj.states[k];
        const Vec& m = traj.mean_states[k];
        const Vec b = noise(k);

        Vec z(3 * d), zm(3 * d);
        z << x, m, b;
        zm << m, m, zero;
        const Vec out = nn::forward(params, z);
        const Vec out_m = nn::forward(params, zm);
        const Vec u = out.head(c), mu = out.tail(c);
        const Vec um = out_m.head(c), mum = out_m.tail(c);

        // Network jacobians split into (x, mean) input blocks.
        const Mat jz = nn::input_jacobian(params, z);
        const Mat jzm = nn::input_jacobian(params, zm);
        const Mat g0_x = jz.topLeftCorner(c, d);
        const Mat g0_m = jz.block(0, d, c, d);
        const Mat g1_x = jz.block(c, 0, c, d);
        const Mat g1_m = jz.block(c, d, c, d);
        const Mat gm0 = jzm.topLeftCorner(c, d) + jzm.block(0, d, c, d);
        const Mat gm1 = jzm.block(c, 0, c, d) + jzm.block(c, d, c, d);

        const Mat fx = fjac.dx(t, x, m, u, mu);
        const Mat fm = fjac.dmean_x(t, x, m, u, mu);
        const Mat fu = fjac.du(t, x, m, u, mu);
        const Mat fmu = fjac.dmean_u(t, x, m, u, mu);

        // Transition jacobians of x+ = Step(x, m).
        Mat Ax = fscale * (fx + fu * g0_x + fmu * g1_x);
        Mat Am = fscale * (fm + fu * g0_m + fmu * g1_m);
        if (euler) Ax += Mat::Identity(d, d);

        // Mean recursion m+ = Step_mean(m).
        const Mat fx_m = fjac.dx(t, m, m, um, mum);
        const Mat fm_m = fjac.dmean_x(t, m, m, um, mum);
        const Mat fu_m = fjac.du(t, m, m, um, mum);
        const Mat fmu_m = fjac.dmean_u(t, m, m, um, mum);
        Mat Amm = fscale * (fx_m + fm_m + fu_m * gm0 + fmu_m * gm1);
        if (euler) Amm += Mat::Identity(d, d);

        // Running-cost partials, with controls supplied by the network.
        const Vec lx = lgrad.dx(t, x, m, u, mu);
        const Vec lm = lgrad.dmean_x(t, x, m, u, mu);
        const Vec lu = lgrad.du(t, x, m, u, mu);
        const Vec lmu = lgrad.dmean_u(t, x, m, u, mu);
        const Vec cost_x = dtf * (lx + g0_x.transpose() * lu + g1_x.transpose() * lmu);
        const Vec cost_m = dtf * (lm + g0_m.transpose() * lu + g1_m.transpose() * lmu);

        const Vec new_lambda_x = Ax.transpose() * lambda_x + cost_x;
        const Vec new_lambda_m = Am.transpose() * lambda_x + Amm.transpose() * lambda_m + cost_m;
        lambda_x = new_lambda_x;
        lambda_m = new_lambda_m;
    }
    return lambda_x + lambda_m;
}

Vec finite_diff_input_gradient(const ProblemSpec& spec, const TimeGrid& grid,
                               const nn::MlpParams& params, const Vec& y,
                               const NoiseStream& noise, MeanMode mean_mode, int ensemble_size,
                               std::uint64_t ensemble_noise_seed) {
    Vec grad(y.size());
    for (int i = 0; i < y.size(); ++i) {
        const double h = 1e-5 * (1.0 + std::abs(y[i]));
        Vec plus = y, minus = y;
        plus[i] += h;
        minus[i] -= h;
        const double jp = attack_objective(spec, grid, params, plus, noise, mean_mode,
                                           ensemble_size, ensemble_noise_seed);
        const double jm = attack_objective(spec, grid, params, minus, noise, mean_mode,
                                           ensemble_size, ensemble_noise_seed);
        grad[i] = (jp - jm) / (2.0 * h);
    }
    return grad;
}

}  // namespace

double attack_objective(const ProblemSpec& spec, const TimeGrid& grid,
                        const nn::MlpParams& params, const Vec& y, const NoiseStream& noise,
                        MeanMode mean_mode, int ensemble_size,
                        std::uint64_t ensemble_noise_seed) {
    const ClosedLoopTrajectory traj = stab::closed_loop_rollout(
        spec, grid, params, y, y, noise, mean_mode, ensemble_size, ensemble_noise_seed);
    return closed_loop_cost(spec, grid, params, traj, noise).value;
}

Vec input_gradient(const ProblemSpec& spec, const TimeGrid& grid, const nn::MlpParams& params,
                   const Vec& y, const NoiseStream& noise, MeanMode mean_mode,
                   AttackGradientMethod method, int ensemble_size,
                   std::uint64_t ensemble_noise_seed) {
    if (method == AttackGradientMethod::Adjoint && mean_mode == MeanMode::Deterministic) {
        const ClosedLoopTrajectory traj =
            stab::closed_loop_rollout(spec, grid, params, y, y, noise, mean_mode);
        if (traj.diverged_at < 0) return deterministic_adjoint(spec, grid, params, y, noise);
        // Saturated objective: fall back to finite differences.
    }
    return finite_diff_input_gradient(spec, grid, params, y, noise, mean_mode, ensemble_size,
                                      ensemble_noise_seed);
}

AttackResult pgd_attack(const ProblemSpec& spec, const TimeGrid& grid,
                        const nn::MlpParams& params, const AttackConfig& config) {
    require(config.alpha > 0.0 && config.beta >= 0.0, "pgd_attack: invalid alpha/beta");
    require(config.max_pgd_iters >= 1 && config.restarts >= 1, "pgd_attack: invalid budgets");
    if (config.goal == AttackGoal::EscapeBall)
        require(config.escape_radius > 0.0, "pgd_attack: escape_radius required");
    const int d = spec.state_dim;
    const stab::Ball search_ball = stab::Ball::origin(d, config.alpha);
    const double init_delta = config.init_delta > 0.0 ? config.init_delta : config.alpha / 10.0;

    auto goal_met = [&](const ClosedLoopTrajectory& traj) {
        if (traj.diverged_at >= 0) return true;
        if (config.goal == AttackGoal::EscapeBall)
            return traj.sup_norm(1) > config.escape_radius;
        return false;
    };

    struct RestartOutcome {
        AttackResult result;
        double best_objective = -1.0;
    };
    std::vector<RestartOutcome> outcomes(config.restarts);

    parallel_for(config.restarts, config.threads, [&](int restart) {
        // Common random numbers: one fixed noise sample per restart.
        const NoiseStream noise = gaussian_noise_stream(
            config.seed, 0xad0000 + static_cast<std::uint64_t>(restart), d, grid.dt());
        auto rng = keyed_rng(config.seed, 0xad1111, static_cast<std::uint64_t>(restart));
        Vec dir = gaussian_vector(rng, d, 1.0);
        if (dir.norm() > 0) dir /= dir.norm();
        std::uniform_real_distribution<double> uni(0.0, 1.0);
        Vec y = init_delta * std::pow(uni(rng), 1.0 / d) * dir;

        AttackResult res;
        res.seed = config.seed;
        res.restart_index = restart;
        res.stop_reason = StopReason::MaxIters;
        const std::uint64_t ens_seed = mix_keys(config.seed, 0xad2222, restart);

        for (int m = 0; m <= config.max_pgd_iters; ++m) {
            const ClosedLoopTrajectory traj =
                stab::closed_loop_rollout(spec, grid, params, y, y, noise, config.mean_mode,
                                          config.ensemble_size, ens_seed);
            const double obj = closed_loop_cost(spec, grid, params, traj, noise).value;
            res.iterates.push_back(y);
            res.objectives.push_back(obj);
            if (goal_met(traj)) {
                res.found = true;
                res.adversarial = y;
                res.stop_reason = StopReason::Diverged;
                break;
            }
            if (m == config.max_pgd_iters) break;
            Vec grad = input_gradient(spec, grid, params, y, noise, config.mean_mode,
                                      config.gradient_method, config.ensemble_size, ens_seed);
            if (!grad.allFinite()) {
                // Restart within the restart: fresh y0 from the init ball.
                Vec fresh = gaussian_vector(rng, d, 1.0);
                if (fresh.norm() > 0) fresh /= fresh.norm();
                y = init_delta * std::pow(uni(rng), 1.0 / d) * fresh;
                continue;
            }
            const Vec next = project_ball(y + config.beta * grad, search_ball);
            if ((next - y).norm() <= 1e-12 * (1.0 + y.norm())) {
                res.stop_reason = StopReason::Stalled;
                res.iterates.push_back(next);
                res.objectives.push_back(obj);
                break;
            }
            y = next;
        }
        outcomes[restart].best_objective =
            res.objectives.empty() ? -1.0 : *std::max_element(res.objectives.begin(),
                                                              res.objectives.end());
        outcomes[restart].result = std::move(res);
    });

    // First success by restart index; otherwise the best objective seen.
    for (auto& out : outcomes)
        if (out.result.found) return out.result;
    int best = 0;
    for (int i = 1; i < config.restarts; ++i)
        if (outcomes[i].best_objective > outcomes[best].best_objective) best = i;
    return outcomes[best].result;
}

}  // namespace mftc::adv
