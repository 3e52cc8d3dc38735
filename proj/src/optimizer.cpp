#include "mftc/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace mftc::opt {

using core::ControlBatch;
using core::DiscretizationMode;
using core::Ensemble;
using core::NoiseTensor;
using core::ProblemSpec;
using core::TimeGrid;

namespace {

std::vector<std::vector<Vec>> adjoint_gradient(const ProblemSpec& spec, const TimeGrid& grid,
                                               const ControlBatch& controls,
                                               const std::vector<Vec>& initial_states,
                                               const NoiseTensor& noise) {
    const int n = static_cast<int>(initial_states.size());
    const int nk = grid.steps;
    const Ensemble ens = core::rollout_ensemble(spec, grid, initial_states, controls, noise);
    require(!ens.any_diverged(), "adjoint_gradient: rollout diverged");

    const auto fjac = spec.drift_jac ? *spec.drift_jac : core::numeric_drift_jacobians(spec);
    const auto lgrad =
        spec.running_grad ? *spec.running_grad : core::numeric_running_gradients(spec);
    const auto pgrad =
        spec.terminal_grad ? *spec.terminal_grad : core::numeric_terminal_gradients(spec);

    const double dt = grid.dt();
    const bool euler = spec.mode == DiscretizationMode::Euler;
    const double dtf = euler ? dt : 1.0;  // running-cost scaling
    const double fscale = euler ? dt : 1.0;  // drift-jacobian scaling inside the step map

    // Terminal costate: (1/N) [psi_x(i) + avg_j psi_mu(j)].
    std::vector<Vec> lambda(n);
    {
        const Vec& mean_T = ens.mean_states[nk];
        Vec mu_avg = Vec::Zero(spec.state_dim);
        for (int j = 0; j < n; ++j) mu_avg += pgrad.dmean_x(ens.states[j][nk], mean_T);
        mu_avg /= n;
        for (int i = 0; i < n; ++i)
            lambda[i] = (pgrad.dx(ens.states[i][nk], mean_T) + mu_avg) / n;
    }

    std::vector<std::vector<Vec>> grad(n, std::vector<Vec>(nk, Vec::Zero(spec.control_dim)));
    for (int k = nk - 1; k >= 0; --k) {
        const double t = grid.t(k);
        const Vec& mx = ens.mean_states[k];
        const Vec& mu = controls.mean_controls[k];

        // Cross-sample aggregates, each with weight 1/N.
        Vec coup_x = Vec::Zero(spec.state_dim);    // sum_j F_mx(j)^T lam(j)
        Vec coup_u = Vec::Zero(spec.control_dim);  // sum_j F_mu(j)^T lam(j)
        Vec lmx_avg = Vec::Zero(spec.state_dim);
        Vec lmu_avg = Vec::Zero(spec.control_dim);
        for (int j = 0; j < n; ++j) {
            const Vec& x = ens.states[j][k];
            const Vec& u = controls.controls[j][k];
            coup_x += fscale * fjac.dmean_x(t, x, mx, u, mu).transpose() * lambda[j];
            coup_u += fscale * fjac.dmean_u(t, x, mx, u, mu).transpose() * lambda[j];
            lmx_avg += lgrad.dmean_x(t, x, mx, u, mu);
            lmu_avg += lgrad.dmean_u(t, x, mx, u, mu);
        }
        coup_x /= n;
        coup_u /= n;
        lmx_avg /= n;
        lmu_avg /= n;

        std::vector<Vec> lambda_prev(n);
        for (int i = 0; i < n; ++i) {
            const Vec& x = ens.states[i][k];
            const Vec& u = controls.controls[i][k];
            grad[i][k] = fscale * fjac.du(t, x, mx, u, mu).transpose() * lambda[i] + coup_u +
                         dtf * (lgrad.du(t, x, mx, u, mu) + lmu_avg) / n;
            Vec lam = fscale * fjac.dx(t, x, mx, u, mu).transpose() * lambda[i] + coup_x +
                      dtf * (lgrad.dx(t, x, mx, u, mu) + lmx_avg) / n;
            if (euler) lam += lambda[i];  // identity part of x+ = x + f dt
            lambda_prev[i] = std::move(lam);
        }
        lambda = std::move(lambda_prev);
    }
    return grad;
}

std::vector<std::vector<Vec>> finite_diff_gradient(const ProblemSpec& spec, const TimeGrid& grid,
                                                   const ControlBatch& controls,
                                                   const std::vector<Vec>& initial_states,
                                                   const NoiseTensor& noise) {
    const int n = static_cast<int>(initial_states.size());
    const int nk = grid.steps;
    auto evaluate = [&](const ControlBatch& c) {
        ControlBatch local = c;
        local.recompute_means();
        const Ensemble ens = core::rollout_ensemble(spec, grid, initial_states, local, noise);
        return core::empirical_cost(spec, grid, ens, local);
    };
    std::vector<std::vector<Vec>> grad(n, std::vector<Vec>(nk, Vec::Zero(spec.control_dim)));
    ControlBatch work = controls;
    for (int i = 0; i < n; ++i) {
        for (int k = 0; k < nk; ++k) {
            for (int c = 0; c < spec.control_dim; ++c) {
                const double u0 = controls.controls[i][k][c];
                const double h = 1e-5 * (1.0 + std::abs(u0));
                work.controls[i][k][c] = u0 + h;
                const double jp = evaluate(work);
                work.controls[i][k][c] = u0 - h;
                const double jm = evaluate(work);
                work.controls[i][k][c] = u0;
                grad[i][k][c] = (jp - jm) / (2.0 * h);
            }
        }
    }
    return grad;
}

double max_norm(const std::vector<std::vector<Vec>>& grad) {
    double m = 0.0;
    for (const auto& row : grad)
        for (const Vec& g : row) m = std::max(m, g.cwiseAbs().maxCoeff());
    return m;
}

bool all_finite(const std::vector<std::vector<Vec>>& grad) {
    for (const auto& row : grad)
        for (const Vec& g : row)
            if (!g.allFinite()) return false;
    return true;
}

void project_controls(const ProblemSpec& spec, ControlBatch& controls) {
    if (!spec.control_bounds) return;
    const auto& box = *spec.control_bounds;
    for (auto& row : controls.controls)
        for (Vec& u : row) u = u.cwiseMax(box.lo).cwiseMin(box.hi);
}

}  // namespace

std::vector<std::vector<Vec>> cost_gradient(const ProblemSpec& spec, const TimeGrid& grid,
                                            const ControlBatch& controls,
                                            const std::vector<Vec>& initial_states,
                                            const NoiseTensor& noise, GradientMethod method) {
    for (const auto& row : controls.controls)
        for (const Vec& u : row)
            require(u.allFinite(), "cost_gradient: non-finite control");
    auto grad = method == GradientMethod::Adjoint
                    ? adjoint_gradient(spec, grid, controls, initial_states, noise)
                    : finite_diff_gradient(spec, grid, controls, initial_states, noise);
    if (!all_finite(grad)) throw NonConvergence("cost_gradient: non-finite gradient");
    return grad;
}

OptimalBatch solve_pcd(const ProblemSpec& spec, const TimeGrid& grid,
                       const std::vector<Vec>& initial_states, const NoiseTensor& noise,
                       const OptimizerConfig& config) {
    require(config.max_iters >= 1 && config.learning_rate > 0.0 && config.convergence_tol > 0.0,
            "solve_pcd: invalid config");
    const int n = static_cast<int>(initial_states.size());
    const int nk = grid.steps;

    ControlBatch controls = ControlBatch::zeros(n, nk, spec.control_dim);
    project_controls(spec, controls);
    controls.recompute_means();

    auto evaluate = [&](const ControlBatch& c) {
        const Ensemble ens = core::rollout_ensemble(spec, grid, initial_states, c, noise);
        return std::make_pair(core::empirical_cost(spec, grid, ens, c), ens);
    };

    auto [cost, ensemble] = evaluate(controls);
    require(cost < kSaturatedCost, "solve_pcd: initial rollout diverged");

    using Field = std::vector<std::vector<Vec>>;
    auto dot = [&](const Field& a, const Field& b) {
        double s = 0.0;
        for (int i = 0; i < n; ++i)
            for (int k = 0; k < nk; ++k) s += a[i][k].dot(b[i][k]);
        return s;
    };
    auto axpy = [&](double a, const Field& x, Field& y) {
        for (int i = 0; i < n; ++i)
            for (int k = 0; k < nk; ++k) y[i][k] += a * x[i][k];
    };
    auto shifted = [&](const Field& d, double alpha) {
        ControlBatch candidate = controls;
        for (int i = 0; i < n; ++i)
            for (int k = 0; k < nk; ++k) candidate.controls[i][k] += alpha * d[i][k];
        project_controls(spec, candidate);
        candidate.recompute_means();
        return candidate;
    };
    auto zeros = [&] { return Field(n, std::vector<Vec>(nk, Vec::Zero(spec.control_dim))); };
    auto gradient = [&](const ControlBatch& c) {
        return cost_gradient(spec, grid, c, initial_states, noise, config.gradient_method);
    };

    int flat_streak = 0;
    int iters = 0;
    bool converged = false;

    for (int outer = 1; iters < config.max_iters; ++outer) {
        Field g = gradient(controls);
        ++iters;
        const double gnorm = max_norm(g);
#ifdef MFTC_OPT_TRACE
        std::fprintf(stderr, "outer=%d iters=%d cost=%.8g gnorm=%.3g\n", outer, iters, cost,
                     gnorm);
#endif
        if (gnorm < config.convergence_tol * (1.0 + std::abs(cost))) {
            converged = true;
            break;
        }

        // Inner solve of H d = -g by conjugate gradients. Curvature products
        // come from gradient differences, H p = grad(u + s p) - grad(u) up to
        // the probe scale s (exact when the objective is quadratic in the
        // controls), so the whole step uses first-order information only. CG
        // minimizes the energy norm of the step error, which for a quadratic
        // objective is precisely the remaining cost gap.
        Field d = zeros();
        Field r = g;  // residual of H d = -g, negated convention: r = g + H d
        for (auto& row : r)
            for (Vec& x : row) x = -x;
        Field p = r;
        double rtr = dot(r, r);
        const double rtr0 = rtr;
        Field hp = zeros();
        while (iters < config.max_iters && rtr > 1e-24 * rtr0) {
            // Probe scale keeps the shifted rollout finite near instability.
            const double pmax = max_norm(p);
            if (!(pmax > 0.0) || !std::isfinite(pmax)) break;
            const double s = config.learning_rate / pmax;
            Field gs;
            try {
                gs = gradient(shifted(p, s));
            } catch (const NonConvergence&) {
                break;  // probe diverged; fall back to the accumulated step
            } catch (const ContractViolation&) {
                break;
            }
            ++iters;
            for (int i = 0; i < n; ++i)
                for (int k = 0; k < nk; ++k) hp[i][k] = (gs[i][k] - g[i][k]) / s;
            // The probe gradient is relative to u, not u + d; correct by the
            // linearity of the residual recursion instead of re-probing.
            const double php = dot(p, hp);
            if (!(php > 0.0) || !std::isfinite(php)) break;  // nonconvex or noise floor
            const double alpha = rtr / php;
            axpy(alpha, p, d);
            axpy(-alpha, hp, r);
            const double rtr_new = dot(r, r);
            if (!std::isfinite(rtr_new)) break;
            const double beta = rtr_new / rtr;
            rtr = rtr_new;
            for (int i = 0; i < n; ++i)
                for (int k = 0; k < nk; ++k) p[i][k] = r[i][k] + beta * p[i][k];
        }
        if (dot(g, d) >= 0.0) {
            d = g;  // fall back to steepest descent
            for (auto& row : d)
                for (Vec& x : row) x = -x;
        }

        // Monotone acceptance: full step first, halved on cost increase.
        bool accepted = false;
        double step = 1.0;
        for (int halving = 0; halving <= 30; ++halving) {
            const ControlBatch candidate = shifted(d, step);
            const auto [cand_cost, cand_ens] = evaluate(candidate);
            if (std::isfinite(cand_cost) && cand_cost <= cost && cand_cost < kSaturatedCost) {
                const double rel_drop = (cost - cand_cost) / (1.0 + std::abs(cost));
                controls = candidate;
                cost = cand_cost;
                ensemble = cand_ens;
                accepted = true;
                flat_streak = rel_drop < config.convergence_tol ? flat_streak + 1 : 0;
                break;
            }
            step *= 0.5;
        }
        if (!accepted)
            throw NonConvergence("solve_pcd: no descent after 30 step halvings");
        if (flat_streak >= config.flat_iters_to_converge) {
            converged = true;
            break;
        }
    }

    OptimalBatch batch;
    batch.controls = std::move(controls);
    batch.states = std::move(ensemble);
    batch.achieved_cost = cost;
    batch.iterations_used = iters;
    batch.converged = converged;
    return batch;
}

}  // namespace mftc::opt
