#include <doctest.h>

#include "mftc/lq.hpp"
#include "mftc/optimizer.hpp"

#include <cmath>

using namespace mftc;
using namespace mftc::core;
using namespace mftc::opt;

namespace {

Vec scalar(double v) {
    Vec x(1);
    x[0] = v;
    return x;
}

// Decoupled scalar problem y+ = 2y + v with cost 30 y^2 + 300 v^2 and
// terminal 30 y^2 (the deviation subsystem of the reference instance).
ProblemSpec deviation_spec() {
    ProblemSpec spec;
    spec.state_dim = 1;
    spec.control_dim = 1;
    spec.mode = DiscretizationMode::Direct;
    spec.noise_scale = 0.0;
    spec.drift = [](double, const Vec& y, const Vec&, const Vec& v, const Vec&) {
        return scalar(2.0 * y[0] + v[0]);
    };
    spec.running_cost = [](double, const Vec& y, const Vec&, const Vec& v, const Vec&) {
        return 30.0 * y[0] * y[0] + 300.0 * v[0] * v[0];
    };
    spec.terminal_cost = [](const Vec& y, const Vec&) { return 30.0 * y[0] * y[0]; };
    return spec;
}

NoiseTensor zero_noise(int samples, int steps) {
    NoiseTensor noise;
    noise.increments.assign(samples, std::vector<Vec>(steps, scalar(0.0)));
    return noise;
}

}  // namespace

TEST_CASE("origin start with zero noise needs no control") {
    const ProblemSpec spec = deviation_spec();
    const TimeGrid grid = TimeGrid::from_dt(0.05, 5);
    OptimizerConfig cfg;
    cfg.max_iters = 200;
    const OptimalBatch sol = solve_pcd(spec, grid, {scalar(0.0)}, zero_noise(1, 5), cfg);
    CHECK(std::abs(sol.achieved_cost) < 1e-9);
    for (int k = 0; k < 5; ++k) CHECK(std::abs(sol.controls.controls[0][k][0]) < 1e-6);
}

TEST_CASE("one-step solve recovers the analytic feedback v* = -(2/11) y") {
    // min 30 y0^2 + 300 v^2 + 30 (2 y0 + v)^2 over v: v* = -60 y0 / 330.
    const ProblemSpec spec = deviation_spec();
    const TimeGrid grid = TimeGrid::from_dt(0.05, 1);
    OptimizerConfig cfg;
    cfg.max_iters = 500;
    cfg.convergence_tol = 1e-12;
    for (double y0 : {1.0, -3.0, 10.0}) {
        const OptimalBatch sol = solve_pcd(spec, grid, {scalar(y0)}, zero_noise(1, 1), cfg);
        CHECK(sol.controls.controls[0][0][0] == doctest::Approx(-2.0 / 11.0 * y0).epsilon(1e-6));
        const double expected =
            30.0 * y0 * y0 + 300.0 * std::pow(2.0 / 11.0 * y0, 2) +
            30.0 * std::pow(2.0 * y0 - 2.0 / 11.0 * y0, 2);
        CHECK(sol.achieved_cost == doctest::Approx(expected).epsilon(1e-9));
    }
}

TEST_CASE("one-step gradient at zero controls matches the hand derivative") {
    // dJ/dv at v=0: 2 R v + 2 P_T (2 y0 + v) = 120 y0 at v = 0.
    const ProblemSpec spec = deviation_spec();
    const TimeGrid grid = TimeGrid::from_dt(0.05, 1);
    const double y0 = 1.7;
    const auto controls = ControlBatch::zeros(1, 1, 1);
    const auto grad = cost_gradient(spec, grid, controls, {scalar(y0)}, zero_noise(1, 1),
                                    GradientMethod::Adjoint);
    CHECK(grad[0][0][0] == doctest::Approx(120.0 * y0).epsilon(1e-9));
}

TEST_CASE("adjoint gradient matches central differences on a coupled instance") {
    const lq::LqParams params;
    ProblemSpec spec = lq::make_spec(params);
    const TimeGrid grid = TimeGrid::from_dt(params.dt, 6);
    const int n = 5;
    std::vector<Vec> x0;
    for (int i = 0; i < n; ++i) x0.push_back(scalar(1.0 + 0.5 * i * (i % 2 ? -1 : 1)));
    const NoiseTensor noise = sample_noise(11, n, grid.steps, 1, grid.dt());
    ControlBatch controls = ControlBatch::zeros(n, grid.steps, 1);
    std::uint64_t s = 5;
    for (auto& traj : controls.controls)
        for (Vec& u : traj) {
            s = splitmix64(s);
            u[0] = static_cast<double>(s % 1000) / 1000.0 - 0.5;
        }
    controls.recompute_means();
    const auto adjoint =
        cost_gradient(spec, grid, controls, x0, noise, GradientMethod::Adjoint);
    const auto fd =
        cost_gradient(spec, grid, controls, x0, noise, GradientMethod::FiniteDiff);
    double max_rel = 0.0;
    for (int i = 0; i < n; ++i)
        for (int k = 0; k < grid.steps; ++k) {
            const double scale = 1.0 + std::abs(fd[i][k][0]);
            max_rel = std::max(max_rel, std::abs(adjoint[i][k][0] - fd[i][k][0]) / scale);
        }
    CHECK(max_rel < 1e-5);
}

TEST_CASE("solved cost reaches the Riccati oracle within 1% on a small ensemble") {
    const lq::LqParams params;
    const ProblemSpec spec = lq::make_spec(params);
    const TimeGrid grid = params.grid();
    const int n = 20;
    std::vector<Vec> x0;
    auto rng = keyed_rng(3, 0);
    std::uniform_real_distribution<double> uni(-50.0, 50.0);
    for (int i = 0; i < n; ++i) x0.push_back(scalar(uni(rng)));
    const NoiseTensor noise = sample_noise(3, n, grid.steps, 1, grid.dt());
    OptimizerConfig cfg;
    cfg.max_iters = 3000;
    cfg.convergence_tol = 1e-9;
    const OptimalBatch sol = solve_pcd(spec, grid, x0, noise, cfg);
    const double oracle = lq::riccati_optimal_cost(lq::riccati_solve(params), x0);
    CHECK(sol.achieved_cost <= oracle * 1.01);
    CHECK(sol.achieved_cost >= oracle * 0.90);  // sampling slack on the noise term
}

TEST_CASE("optimizer is permutation equivariant") {
    const lq::LqParams params;
    const ProblemSpec spec = lq::make_spec(params);
    const TimeGrid grid = TimeGrid::from_dt(params.dt, 6);
    const std::vector<Vec> x0 = {scalar(3.0), scalar(-1.0), scalar(0.5)};
    NoiseTensor noise = sample_noise(9, 3, grid.steps, 1, grid.dt());
    OptimizerConfig cfg;
    cfg.max_iters = 400;
    const OptimalBatch a = solve_pcd(spec, grid, x0, noise, cfg);

    const std::vector<int> perm = {2, 0, 1};
    std::vector<Vec> x0p(3);
    NoiseTensor noisep = noise;
    for (int i = 0; i < 3; ++i) {
        x0p[i] = x0[perm[i]];
        noisep.increments[i] = noise.increments[perm[i]];
    }
    const OptimalBatch b = solve_pcd(spec, grid, x0p, noisep, cfg);
    for (int i = 0; i < 3; ++i)
        for (int k = 0; k < grid.steps; ++k)
            CHECK(b.controls.controls[i][k][0]
                  == doctest::Approx(a.controls.controls[perm[i]][k][0]).epsilon(1e-6));
    CHECK(b.achieved_cost == doctest::Approx(a.achieved_cost).epsilon(1e-9));
}

TEST_CASE("accepted iterates never cost more than the zero-control start") {
    const lq::LqParams params;
    const ProblemSpec spec = lq::make_spec(params);
    const TimeGrid grid = TimeGrid::from_dt(params.dt, 8);
    const std::vector<Vec> x0 = {scalar(4.0), scalar(-4.0)};
    const NoiseTensor noise = sample_noise(17, 2, grid.steps, 1, grid.dt());
    const auto zero = ControlBatch::zeros(2, grid.steps, 1);
    const Ensemble ens = rollout_ensemble(spec, grid, x0, zero, noise);
    const double start_cost = empirical_cost(spec, grid, ens, zero);
    OptimizerConfig cfg;
    cfg.max_iters = 300;
    const OptimalBatch sol = solve_pcd(spec, grid, x0, noise, cfg);
    CHECK(sol.achieved_cost <= start_cost);
    CHECK(sol.iterations_used > 0);
}
