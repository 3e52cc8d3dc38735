#include <doctest.h>

#include "mftc/dynamics.hpp"
#include "mftc/lq.hpp"

#include <cmath>
#include <sstream>

using namespace mftc;
using namespace mftc::core;

namespace {

Vec scalar(double v) {
    Vec x(1);
    x[0] = v;
    return x;
}

// Scalar mean-field map x+ = 2x + m + u + 2nu (+ sigma B), quadratic cost.
ProblemSpec direct_lq_spec(double sigma) {
    ProblemSpec spec;
    spec.state_dim = 1;
    spec.control_dim = 1;
    spec.mode = DiscretizationMode::Direct;
    spec.noise_scale = sigma;
    spec.drift = [](double, const Vec& x, const Vec& m, const Vec& u, const Vec& nu) {
        return scalar(2.0 * x[0] + m[0] + u[0] + 2.0 * nu[0]);
    };
    spec.running_cost = [](double, const Vec& x, const Vec& m, const Vec& u, const Vec& nu) {
        const double dx = x[0] - m[0];
        const double du = u[0] - nu[0];
        return 20.0 * x[0] * x[0] + 200.0 * u[0] * u[0] + 10.0 * dx * dx + 100.0 * du * du;
    };
    spec.terminal_cost = [](const Vec& x, const Vec& m) {
        const double dx = x[0] - m[0];
        return 20.0 * x[0] * x[0] + 10.0 * dx * dx;
    };
    return spec;
}

}  // namespace

TEST_CASE("direct step evaluates the map itself") {
    const ProblemSpec spec = direct_lq_spec(1.0);
    const Vec zero = scalar(0.0);
    // x=1, m=1, u=nu=0: 2 + 1 = 3.
    CHECK(step(spec, 0.0, 0.05, scalar(1.0), scalar(1.0), zero, zero, zero)[0]
          == doctest::Approx(3.0));
    // all ones: 2 + 1 + 1 + 2 = 6.
    CHECK(step(spec, 0.0, 0.05, scalar(1.0), scalar(1.0), scalar(1.0), scalar(1.0), zero)[0]
          == doctest::Approx(6.0));
}

TEST_CASE("euler step with zero drift and zero noise is the identity") {
    ProblemSpec spec = direct_lq_spec(0.0);
    spec.mode = DiscretizationMode::Euler;
    spec.drift = [](double, const Vec& x, const Vec&, const Vec&, const Vec&) {
        return Vec(Vec::Zero(x.size()));
    };
    const Vec zero = scalar(0.0);
    CHECK(step(spec, 0.0, 0.1, scalar(3.5), zero, zero, zero, zero)[0] == 3.5);
}

TEST_CASE("step rejects dimension mismatches") {
    const ProblemSpec spec = direct_lq_spec(1.0);
    Vec bad(2);
    bad << 1.0, 2.0;
    const Vec zero = scalar(0.0);
    CHECK_THROWS_AS(step(spec, 0.0, 0.05, bad, zero, zero, zero, zero), ContractViolation);
    CHECK_THROWS_AS(step(spec, 0.0, 0.05, zero, zero, bad, zero, zero), ContractViolation);
}

TEST_CASE("single zero-drift euler trajectory stays constant") {
    ProblemSpec spec = direct_lq_spec(0.0);
    spec.mode = DiscretizationMode::Euler;
    spec.drift = [](double, const Vec& x, const Vec&, const Vec&, const Vec&) {
        return Vec(Vec::Zero(x.size()));
    };
    const TimeGrid grid(0.5, 10);
    const auto controls = ControlBatch::zeros(1, grid.steps, 1);
    NoiseTensor noise;
    noise.increments.assign(1, std::vector<Vec>(grid.steps, scalar(0.0)));
    const Ensemble ens = rollout_ensemble(spec, grid, {scalar(7.0)}, controls, noise);
    for (int k = 0; k <= grid.steps; ++k) CHECK(ens.states[0][k][0] == 7.0);
    CHECK_FALSE(ens.any_diverged());
}

TEST_CASE("antithetic ensemble under odd drift keeps the mean at zero") {
    ProblemSpec spec = direct_lq_spec(0.0);
    const TimeGrid grid(0.25, 5);
    const int n = 6;
    std::vector<Vec> x0;
    for (int i = 0; i < n / 2; ++i) {
        x0.push_back(scalar(0.5 * (i + 1)));
        x0.push_back(scalar(-0.5 * (i + 1)));
    }
    const auto controls = ControlBatch::zeros(n, grid.steps, 1);
    NoiseTensor noise;
    noise.increments.assign(n, std::vector<Vec>(grid.steps, scalar(0.0)));
    const Ensemble ens = rollout_ensemble(spec, grid, x0, controls, noise);
    for (int k = 0; k <= grid.steps; ++k)
        CHECK(std::abs(ens.mean_states[k][0]) < 1e-12);
}

TEST_CASE("uncontrolled mean grows like 3^k and escapes B_200 at step 5") {
    const ProblemSpec spec = direct_lq_spec(0.0);
    const TimeGrid grid = TimeGrid::from_dt(0.05, 6);
    const auto controls = ControlBatch::zeros(1, grid.steps, 1);
    NoiseTensor noise;
    noise.increments.assign(1, std::vector<Vec>(grid.steps, scalar(0.0)));
    const Ensemble ens = rollout_ensemble(spec, grid, {scalar(1.0)}, controls, noise);
    for (int k = 0; k <= grid.steps; ++k)
        CHECK(ens.states[0][k][0] == doctest::Approx(std::pow(3.0, k)));
    CHECK(std::abs(ens.states[0][4][0]) < 200.0);
    CHECK(std::abs(ens.states[0][5][0]) > 200.0);  // 3^5 = 243
}

TEST_CASE("empirical cost: equilibrium is free") {
    const ProblemSpec spec = direct_lq_spec(0.0);
    const TimeGrid grid = TimeGrid::from_dt(0.05, 4);
    const auto controls = ControlBatch::zeros(2, grid.steps, 1);
    NoiseTensor noise;
    noise.increments.assign(2, std::vector<Vec>(grid.steps, scalar(0.0)));
    const Ensemble ens =
        rollout_ensemble(spec, grid, {scalar(0.0), scalar(0.0)}, controls, noise);
    CHECK(empirical_cost(spec, grid, ens, controls) == doctest::Approx(0.0));
}

TEST_CASE("empirical cost: one-step hand value 200") {
    // x0 = 1, u = 0: running 20*1 = 20, x1 = 3, terminal 20*9 = 180.
    const ProblemSpec spec = direct_lq_spec(0.0);
    const TimeGrid grid = TimeGrid::from_dt(0.05, 1);
    const auto controls = ControlBatch::zeros(1, 1, 1);
    NoiseTensor noise;
    noise.increments.assign(1, std::vector<Vec>(1, scalar(0.0)));
    const Ensemble ens = rollout_ensemble(spec, grid, {scalar(1.0)}, controls, noise);
    CHECK(ens.states[0][1][0] == doctest::Approx(3.0));
    CHECK(empirical_cost(spec, grid, ens, controls) == doctest::Approx(200.0));
}

TEST_CASE("euler mode scales the running cost by dt") {
    ProblemSpec spec = direct_lq_spec(0.0);
    spec.mode = DiscretizationMode::Euler;
    spec.drift = [](double, const Vec& x, const Vec&, const Vec&, const Vec&) {
        return Vec(Vec::Zero(x.size()));
    };
    const TimeGrid grid = TimeGrid::from_dt(0.1, 3);
    const auto controls = ControlBatch::zeros(1, 3, 1);
    NoiseTensor noise;
    noise.increments.assign(1, std::vector<Vec>(3, scalar(0.0)));
    const Ensemble ens = rollout_ensemble(spec, grid, {scalar(1.0)}, controls, noise);
    // Constant at 1: running 3 * 20 * 0.1 = 6, terminal 20.
    CHECK(empirical_cost(spec, grid, ens, controls) == doctest::Approx(26.0));
}

TEST_CASE("divergence saturates the cost and freezes the trajectory") {
    const ProblemSpec spec = direct_lq_spec(0.0);
    const TimeGrid grid = TimeGrid::from_dt(0.05, 40);
    const auto controls = ControlBatch::zeros(1, grid.steps, 1);
    NoiseTensor noise;
    noise.increments.assign(1, std::vector<Vec>(grid.steps, scalar(0.0)));
    // 3^k from 1 crosses 1e12 within 26 steps.
    const Ensemble ens = rollout_ensemble(spec, grid, {scalar(1.0)}, controls, noise);
    CHECK(ens.any_diverged());
    CHECK(ens.diverged_at[0] > 0);
    CHECK(empirical_cost(spec, grid, ens, controls) == kSaturatedCost);
}

TEST_CASE("propagate_mean matches hand recursions") {
    const ProblemSpec spec = direct_lq_spec(0.0);
    const TimeGrid grid = TimeGrid::from_dt(0.05, 6);
    const std::vector<Vec> zero_u(grid.steps, scalar(0.0));

    const auto zeros = propagate_mean(spec, grid, scalar(0.0), zero_u);
    for (const Vec& m : zeros) CHECK(m[0] == 0.0);

    const auto growth = propagate_mean(spec, grid, scalar(1.0), zero_u);
    for (int k = 0; k <= grid.steps; ++k)
        CHECK(growth[k][0] == doctest::Approx(std::pow(3.0, k)));
}

TEST_CASE("propagate_mean agrees with the noisy ensemble mean at O(1/sqrt(N))") {
    const lq::LqParams params;
    const ProblemSpec spec = lq::make_spec(params);
    const TimeGrid grid = TimeGrid::from_dt(params.dt, 8);
    const std::vector<Vec> zero_u(grid.steps, scalar(0.0));
    const auto det = propagate_mean(spec, grid, scalar(1.0), zero_u);
    const auto run = [&](int n) {
        const std::vector<Vec> x0(n, scalar(1.0));
        const auto controls = ControlBatch::zeros(n, grid.steps, 1);
        const NoiseTensor noise = sample_noise(7, n, grid.steps, 1, grid.dt());
        const Ensemble ens = rollout_ensemble(spec, grid, x0, controls, noise);
        double err = 0.0;
        for (int k = 0; k <= grid.steps; ++k)
            err = std::max(err, std::abs(ens.mean_states[k][0] - det[k][0]));
        return err;
    };
    const double err_small = run(100);
    const double err_big = run(10000);
    // 100x more samples should shrink the Monte-Carlo error by roughly 10x.
    CHECK(err_big < err_small);
    CHECK(err_big < err_small / 3.0);
}

TEST_CASE("noise sampling is keyed and has the right scale") {
    const double dt = 0.05;
    const NoiseTensor a = sample_noise(42, 50, 200, 1, dt);
    const NoiseTensor b = sample_noise(42, 50, 200, 1, dt);
    const NoiseTensor c = sample_noise(43, 50, 200, 1, dt);
    CHECK(a.increments[7][13][0] == b.increments[7][13][0]);
    CHECK(a.increments[7][13][0] != c.increments[7][13][0]);

    double sum = 0.0, sq = 0.0;
    int cnt = 0;
    for (const auto& traj : a.increments)
        for (const Vec& v : traj) {
            sum += v[0];
            sq += v[0] * v[0];
            ++cnt;
        }
    const double mean = sum / cnt;
    const double var = sq / cnt - mean * mean;
    CHECK(std::abs(mean) < 0.01);
    CHECK(var == doctest::Approx(dt).epsilon(0.1));
}

TEST_CASE("numeric jacobians agree with the analytic LQ drift") {
    const lq::LqParams p;
    const ProblemSpec spec = lq::make_spec(p);
    REQUIRE(spec.drift_jac.has_value());
    const DriftJacobians num = numeric_drift_jacobians(spec);
    const Vec x = scalar(1.3), m = scalar(-0.4), u = scalar(0.7), nu = scalar(0.2);
    CHECK(num.dx(0.0, x, m, u, nu)(0, 0)
          == doctest::Approx(spec.drift_jac->dx(0.0, x, m, u, nu)(0, 0)).epsilon(1e-6));
    CHECK(num.dmean_x(0.0, x, m, u, nu)(0, 0)
          == doctest::Approx(spec.drift_jac->dmean_x(0.0, x, m, u, nu)(0, 0)).epsilon(1e-6));
    CHECK(num.du(0.0, x, m, u, nu)(0, 0)
          == doctest::Approx(spec.drift_jac->du(0.0, x, m, u, nu)(0, 0)).epsilon(1e-6));
    CHECK(num.dmean_u(0.0, x, m, u, nu)(0, 0)
          == doctest::Approx(spec.drift_jac->dmean_u(0.0, x, m, u, nu)(0, 0)).epsilon(1e-6));
}

TEST_CASE("binary state serialization round-trips exactly") {
    std::vector<std::vector<Vec>> data(3, std::vector<Vec>(4, Vec(2)));
    std::uint64_t s = 1;
    for (auto& traj : data)
        for (Vec& x : traj)
            for (int c = 0; c < 2; ++c) {
                s = splitmix64(s);
                x[c] = static_cast<double>(s) / 1e18 - 9.0;
            }
    std::stringstream buf;
    write_states_binary(buf, data);
    const auto back = read_states_binary(buf);
    REQUIRE(back.size() == data.size());
    for (std::size_t i = 0; i < data.size(); ++i)
        for (std::size_t k = 0; k < data[i].size(); ++k)
            CHECK(back[i][k] == data[i][k]);
}

TEST_CASE("csv state serialization emits the documented header") {
    std::vector<std::vector<Vec>> data(1, std::vector<Vec>(1, scalar(0.5)));
    std::stringstream buf;
    write_states_csv(buf, data);
    std::string line;
    std::getline(buf, line);
    CHECK(line == "sample,step,coordinate,value");
    std::getline(buf, line);
    CHECK(line == "0,0,0,0.5");
}
