#include <doctest.h>

#include "mftc/lq.hpp"

#include <cmath>

using namespace mftc;
using namespace mftc::lq;

namespace {

Vec scalar(double v) {
    Vec x(1);
    x[0] = v;
    return x;
}

// Independent scalar Riccati recursion used as the oracle for riccati_solve.
struct HandRiccati {
    std::vector<double> value, gain;
};

HandRiccati hand_riccati(double A, double B, double Q, double R, double PT, int steps) {
    HandRiccati out;
    out.value.assign(steps + 1, 0.0);
    out.gain.assign(steps, 0.0);
    out.value[steps] = PT;
    for (int k = steps - 1; k >= 0; --k) {
        const double P = out.value[k + 1];
        out.gain[k] = A * B * P / (R + B * B * P);
        out.value[k] = Q + A * A * P - A * A * B * B * P * P / (R + B * B * P);
    }
    return out;
}

nn::MlpParams linear_controller(double k) {
    nn::MlpParams params;
    nn::Layer layer;
    layer.W = Mat::Zero(2, 3);
    layer.W(0, 0) = -k;
    layer.W(1, 1) = -k;
    layer.b = Vec::Zero(2);
    params.layers.push_back(layer);
    return params;
}

}  // namespace

TEST_CASE("one-step Riccati gains match the hand fractions 2/11 and 9/19") {
    LqParams p;
    p.steps = 1;
    const RiccatiSolution sol = riccati_solve(p);
    REQUIRE(sol.gain_dev.size() == 1);
    REQUIRE(sol.gain_mean.size() == 1);
    CHECK(sol.gain_dev[0] == doctest::Approx(2.0 / 11.0).epsilon(1e-12));
    CHECK(sol.gain_mean[0] == doctest::Approx(9.0 / 19.0).epsilon(1e-12));
    CHECK(sol.value_mean[1] == doctest::Approx(20.0));   // terminal q1
    CHECK(sol.value_dev[1] == doctest::Approx(30.0));    // terminal q1 + q2
}

TEST_CASE("riccati_solve matches an independent recursion on the full horizon") {
    const LqParams p;
    const RiccatiSolution sol = riccati_solve(p);
    // Mean subsystem (A, B, Q, R) = (3, 3, 20, 200); deviation (2, 1, 30, 300).
    const HandRiccati mean = hand_riccati(3.0, 3.0, 20.0, 200.0, 20.0, p.steps);
    const HandRiccati dev = hand_riccati(2.0, 1.0, 30.0, 300.0, 30.0, p.steps);
    REQUIRE(sol.value_mean.size() == static_cast<std::size_t>(p.steps + 1));
    for (int k = 0; k <= p.steps; ++k) {
        CHECK(sol.value_mean[k] == doctest::Approx(mean.value[k]).epsilon(1e-12));
        CHECK(sol.value_dev[k] == doctest::Approx(dev.value[k]).epsilon(1e-12));
        CHECK(sol.value_mean[k] > 0.0);
        CHECK(sol.value_dev[k] > 0.0);
    }
    for (int k = 0; k < p.steps; ++k) {
        CHECK(sol.gain_mean[k] == doctest::Approx(mean.gain[k]).epsilon(1e-12));
        CHECK(sol.gain_dev[k] == doctest::Approx(dev.gain[k]).epsilon(1e-12));
    }
    // Noise constant: sigma^2 dt sum of downstream deviation values.
    double noise = 0.0;
    for (int k = 0; k < p.steps; ++k) noise += p.sigma * p.sigma * p.dt * dev.value[k + 1];
    CHECK(sol.noise_cost == doctest::Approx(noise).epsilon(1e-12));
}

TEST_CASE("optimal cost formula degenerates correctly") {
    const LqParams p;
    const RiccatiSolution sol = riccati_solve(p);
    // All starts at the origin: pure noise cost.
    const std::vector<Vec> zeros(4, scalar(0.0));
    CHECK(riccati_optimal_cost(sol, zeros) == doctest::Approx(sol.noise_cost));

    // sigma = 0, x0 = E[x0] = 1: the mean value coefficient exactly.
    LqParams quiet = p;
    quiet.sigma = 0.0;
    const RiccatiSolution qsol = riccati_solve(quiet);
    CHECK(qsol.noise_cost == 0.0);
    CHECK(riccati_optimal_cost(qsol, {scalar(1.0)}) == doctest::Approx(qsol.value_mean[0]));
}

TEST_CASE("feedback rollout attains the oracle and no random batch beats it") {
    const LqParams p;
    const core::ProblemSpec spec = make_spec(p);
    const core::TimeGrid grid = p.grid();
    const int n = 200;
    std::vector<Vec> x0;
    auto rng = keyed_rng(41, 0);
    std::uniform_real_distribution<double> uni(-50.0, 50.0);
    for (int i = 0; i < n; ++i) x0.push_back(scalar(uni(rng)));
    const core::NoiseTensor noise = core::sample_noise(41, n, grid.steps, 1, grid.dt());

    const RiccatiSolution sol = riccati_solve(p);
    const double oracle = riccati_optimal_cost(sol, x0);
    const opt::OptimalBatch fb = riccati_feedback_rollout(p, x0, noise);
    CHECK(fb.achieved_cost == doctest::Approx(oracle).epsilon(0.02));

    // 50 random perturbed batches all cost at least as much as the feedback.
    std::normal_distribution<double> jitter(0.0, 0.05);
    for (int trial = 0; trial < 50; ++trial) {
        core::ControlBatch batch = fb.controls;
        for (auto& traj : batch.controls)
            for (Vec& u : traj) u[0] += jitter(rng);
        batch.recompute_means();
        const core::Ensemble ens = core::rollout_ensemble(spec, grid, x0, batch, noise);
        CHECK(core::empirical_cost(spec, grid, ens, batch) >= fb.achieved_cost);
    }
}

TEST_CASE("deviation mean stays at zero under exact feedback") {
    LqParams p;
    p.sigma = 0.0;
    const int n = 8;
    std::vector<Vec> x0;
    for (int i = 0; i < n / 2; ++i) {
        x0.push_back(scalar(3.0 * (i + 1)));
        x0.push_back(scalar(-3.0 * (i + 1)));
    }
    core::NoiseTensor noise;
    noise.increments.assign(n, std::vector<Vec>(p.steps, scalar(0.0)));
    const opt::OptimalBatch fb = riccati_feedback_rollout(p, x0, noise);
    // Symmetric starts: the empirical mean path is identically zero, so each
    // pair of antithetic trajectories stays antithetic.
    for (int k = 0; k <= p.steps; ++k)
        CHECK(std::abs(fb.states.mean_states[k][0]) < 1e-10);
}

TEST_CASE("reference architectures match the published shapes") {
    const auto a1 = nn1_architecture();
    const auto a2 = nn2_architecture();
    const nn::MlpParams p1 = nn::make_mlp(a1, 1);
    const nn::MlpParams p2 = nn::make_mlp(a2, 1);
    CHECK(p1.input_dim() == 3);
    CHECK(p1.output_dim() == 2);
    CHECK(p1.total_neurons() == 6);
    CHECK(p1.layers.size() == 3);
    CHECK(p2.input_dim() == 3);
    CHECK(p2.output_dim() == 2);
    CHECK(p2.total_neurons() == 106);
    CHECK(p2.layers.size() == 5);
    CHECK(p1.layers[0].activation == nn::Activation::Linear);
    CHECK(p1.layers[1].activation == nn::Activation::Tanh);
    CHECK(p1.layers[2].activation == nn::Activation::Linear);
}

TEST_CASE("lifted problem reproduces the coupled single-sample dynamics") {
    const LqParams p;
    const core::ProblemSpec lifted = make_lifted_spec(p);
    CHECK(lifted.state_dim == 2);
    CHECK(lifted.control_dim == 2);
    // One deterministic step from (x, m) = (1, 1) with controls (0.5, 0.5):
    // x+ = 2 + 1 + 0.5 + 1.0 = 4.5, m+ = 3 + 3*0.5 = 4.5.
    Vec x(2), u(2);
    x << 1.0, 1.0;
    u << 0.5, 0.5;
    const Vec next = core::step(lifted, 0.0, p.dt, x, x, u, u, Vec::Zero(2));
    CHECK(next[0] == doctest::Approx(4.5));
    CHECK(next[1] == doctest::Approx(4.5));
}

TEST_CASE("lifted noise drives only the state coordinate") {
    const core::NoiseTensor noise = lifted_noise(5, 3, 4, 0.05);
    for (const auto& traj : noise.increments)
        for (const Vec& b : traj) {
            CHECK(b.size() == 2);
            CHECK(b[1] == 0.0);
        }
}

TEST_CASE("generated dataset has N * N_T records in the standard layout") {
    BenchmarkConfig cfg = BenchmarkConfig::smoke();
    cfg.data_samples = 12;
    cfg.seed = 5;
    const GeneratedData data = generate_dataset(cfg);
    CHECK(data.records.size() == static_cast<std::size_t>(12 * cfg.lq.steps));
    for (const nn::Record& rec : data.records) {
        CHECK(rec.input.size() == 3);
        CHECK(rec.target.size() == 2);
    }
    CHECK(data.achieved_cost > 0.0);
    CHECK(data.oracle_cost > 0.0);
    CHECK(data.achieved_cost <= data.oracle_cost * 1.01);
}

TEST_CASE("basin edge of a contracting deterministic loop hits the 2r cap") {
    LqParams p;
    p.sigma = 0.0;
    const core::ProblemSpec spec = make_spec(p);
    const double edge = basin_edge(spec, p.grid(), linear_controller(0.9), 200.0, 5, 61);
    CHECK(edge == doctest::Approx(400.0).epsilon(0.01));
}

TEST_CASE("basin edge of the open loop collapses toward zero") {
    LqParams p;
    p.sigma = 0.0;
    const core::ProblemSpec spec = make_spec(p);
    const double edge = basin_edge(spec, p.grid(), linear_controller(0.0), 200.0, 5, 61);
    // 3^14 x0 must stay below 200: only sub-unit starts survive.
    CHECK(edge < 1.0);
}
