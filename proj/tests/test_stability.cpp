#include <doctest.h>

#include "mftc/lq.hpp"
#include "mftc/stability.hpp"

#include <cmath>

using namespace mftc;
using namespace mftc::stab;

namespace {

// Single linear layer z = (x, m, B) -> (u, nu) = (-k x, -k m).
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

nn::MlpParams zero_controller() { return linear_controller(0.0); }

Vec scalar(double v) {
    Vec x(1);
    x[0] = v;
    return x;
}

}  // namespace

TEST_CASE("ball membership is closed") {
    const Ball ball = Ball::origin(2, 5.0);
    Vec edge(2);
    edge << 3.0, 4.0;
    CHECK(ball.contains(edge));
    CHECK(ball.contains(Vec::Zero(2)));
    CHECK_FALSE(ball.contains(Vec(1.001 * edge)));
}

TEST_CASE("wilson interval brackets the point estimate") {
    double lo = 0.0, hi = 0.0;
    wilson_interval(990, 1000, lo, hi);
    CHECK(lo <= 0.99);
    CHECK(hi >= 0.99);
    CHECK(lo > 0.97);
    CHECK(hi < 1.0);
    wilson_interval(0, 10, lo, hi);
    CHECK(lo == 0.0);
    CHECK(hi > 0.0);
    wilson_interval(10, 10, lo, hi);
    CHECK(hi == doctest::Approx(1.0));
    CHECK(lo < 1.0);
}

TEST_CASE("open-loop rollout grows 3^k and escapes B_200 at step 5") {
    lq::LqParams p;
    p.sigma = 0.0;
    const core::ProblemSpec spec = lq::make_spec(p);
    const core::TimeGrid grid = p.grid();
    const ClosedLoopTrajectory traj =
        closed_loop_rollout(spec, grid, zero_controller(), scalar(1.0), scalar(1.0),
                            zero_noise_stream(1), MeanMode::Deterministic);
    for (int k = 0; k <= 6; ++k)
        CHECK(traj.states[k][0] == doctest::Approx(std::pow(3.0, k)));
    const TrialOutcome out = classify_containment(traj, Ball::origin(1, 200.0), false);
    CHECK(out == TrialOutcome::Escaped);
    CHECK(traj.sup_norm(1, 4) < 200.0);
    CHECK(traj.sup_norm(1, 5) > 200.0);
}

TEST_CASE("origin equilibrium stays put for any zero-at-zero controller") {
    lq::LqParams p;
    p.sigma = 0.0;
    const core::ProblemSpec spec = lq::make_spec(p);
    const ClosedLoopTrajectory traj =
        closed_loop_rollout(spec, p.grid(), linear_controller(0.7), scalar(0.0), scalar(0.0),
                            zero_noise_stream(1), MeanMode::Deterministic);
    for (const Vec& x : traj.states) CHECK(x[0] == 0.0);
    CHECK(classify_containment(traj, Ball::origin(1, 1.0), true) == TrialOutcome::Contained);
}

TEST_CASE("delta = 0 with a stabilizing controller gives p_hat = 1") {
    lq::LqParams p;
    p.sigma = 0.0;
    const core::ProblemSpec spec = lq::make_spec(p);
    StabilityQuery query;
    query.r = 200.0;
    query.trials = 50;
    query.seed = 123;
    const StabilityReport report =
        estimate_containment(spec, p.grid(), linear_controller(0.9), 0.0, query);
    CHECK(report.p_hat == 1.0);
    CHECK(report.count(TrialOutcome::Contained) == 50);
    CHECK(report.ci_lo <= report.p_hat);
    CHECK(report.ci_hi >= report.p_hat);
}

TEST_CASE("open loop from B_20 is essentially never contained in B_200") {
    const lq::LqParams p;  // sigma = 1
    const core::ProblemSpec spec = lq::make_spec(p);
    StabilityQuery query;
    query.r = 200.0;
    query.trials = 200;
    query.seed = 9;
    const StabilityReport report =
        estimate_containment(spec, p.grid(), zero_controller(), 20.0, query);
    CHECK(report.p_hat < 0.1);
    CHECK(report.p_hat
          == doctest::Approx(report.count(TrialOutcome::Contained) / 200.0));
}

TEST_CASE("find_delta returns r for a contracting deterministic closed loop") {
    lq::LqParams p;
    p.sigma = 0.0;
    const core::ProblemSpec spec = lq::make_spec(p);
    // u = nu = -0.9 x gives x+ = 3x - 0.9x - 1.8x = 0.3x. The trial count must
    // push the all-success Wilson lower bound past 1 - eps - 0.02.
    StabilityQuery query;
    query.trials = 200;
    query.seed = 4;
    const DeltaSearchResult found =
        find_delta(spec, p.grid(), linear_controller(0.9), 200.0, 0.01, query);
    CHECK(found.found);
    CHECK(found.delta == doctest::Approx(200.0));
}

TEST_CASE("find_delta reports NONE_FOUND for the open loop at tiny epsilon") {
    const lq::LqParams p;
    const core::ProblemSpec spec = lq::make_spec(p);
    StabilityQuery query;
    query.trials = 64;
    query.seed = 4;
    const DeltaSearchResult found =
        find_delta(spec, p.grid(), zero_controller(), 200.0, 0.01, query);
    CHECK_FALSE(found.found);
    CHECK(found.delta == 0.0);
}

TEST_CASE("p_hat is monotone under the coupled initial-condition samples") {
    const lq::LqParams p;
    const core::ProblemSpec spec = lq::make_spec(p);
    const nn::MlpParams controller = linear_controller(0.85);
    StabilityQuery query;
    query.r = 200.0;
    query.trials = 200;
    query.seed = 31;
    double prev = 1.1;
    for (double delta : {20.0, 80.0, 150.0, 220.0}) {
        const StabilityReport report =
            estimate_containment(spec, p.grid(), controller, delta, query);
        CHECK(report.p_hat <= prev);
        prev = report.p_hat;
    }
}

TEST_CASE("identical controllers produce identical comparison columns") {
    const lq::LqParams p;
    const core::ProblemSpec spec = lq::make_spec(p);
    const nn::MlpParams controller = linear_controller(0.8);
    StabilityQuery query;
    query.trials = 100;
    query.seed = 77;
    std::vector<ScenarioSpec> scenarios = {{"delta1", 200.0, 0.01, 20.0},
                                           {"delta2", 200.0, 0.55, 150.0}};
    const ComparisonTable table = compare_controllers(
        spec, p.grid(), {controller, controller}, {"a", "b"}, scenarios, query);
    REQUIRE(table.cells.size() == 2);
    for (const auto& row : table.cells) {
        REQUIRE(row.size() == 2);
        CHECK(row[0].p_hat == row[1].p_hat);
        CHECK(row[0].outcomes == row[1].outcomes);
    }
}

TEST_CASE("reports are reproducible for a fixed seed") {
    const lq::LqParams p;
    const core::ProblemSpec spec = lq::make_spec(p);
    const nn::MlpParams controller = linear_controller(0.8);
    StabilityQuery query;
    query.trials = 100;
    query.seed = 555;
    query.r = 200.0;
    const StabilityReport a = estimate_containment(spec, p.grid(), controller, 100.0, query);
    const StabilityReport b = estimate_containment(spec, p.grid(), controller, 100.0, query);
    CHECK(a.p_hat == b.p_hat);
    CHECK(a.outcomes == b.outcomes);
    for (std::size_t i = 0; i < a.initial_states.size(); ++i)
        CHECK(a.initial_states[i] == b.initial_states[i]);
}
