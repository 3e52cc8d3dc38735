#include "mftc/stability.hpp"

#include <cmath>
#include <cstdio>
#include <ostream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace mftc::stab {

using core::ProblemSpec;
using core::TimeGrid;

int StabilityReport::count(TrialOutcome o) const {
    int c = 0;
    for (TrialOutcome out : outcomes)
        if (out == o) ++c;
    return c;
}

std::string StabilityReport::to_json() const {
    nlohmann::json j;
    j["scenario"] = scenario;
    j["r"] = r;
    j["epsilon"] = epsilon;
    j["delta"] = delta;
    j["p_hat"] = p_hat;
    j["ci_lo"] = ci_lo;
    j["ci_hi"] = ci_hi;
    j["M"] = trials;
    j["seed"] = seed;
    j["outcome_counts"] = {{"contained", count(TrialOutcome::Contained)},
                           {"escaped", count(TrialOutcome::Escaped)},
                           {"diverged", count(TrialOutcome::Diverged)}};
    return j.dump(2);
}

void StabilityReport::write_trials_csv(std::ostream& os) const {
    os << "trial,outcome";
    const int d = initial_states.empty() ? 0 : static_cast<int>(initial_states[0].size());
    for (int c = 0; c < d; ++c) os << ",x0_" << c;
    os << "\n";
    for (std::size_t i = 0; i < outcomes.size(); ++i) {
        const char* name = outcomes[i] == TrialOutcome::Contained ? "contained"
                           : outcomes[i] == TrialOutcome::Escaped ? "escaped"
                                                                  : "diverged";
        os << i << ',' << name;
        char buf[64];
        for (int c = 0; c < d; ++c) {
            std::snprintf(buf, sizeof(buf), "%.17g", initial_states[i][c]);
            os << ',' << buf;
        }
        os << "\n";
    }
}

double ClosedLoopTrajectory::sup_norm(int first_step, int last_step) const {
    if (last_step < 0) last_step = static_cast<int>(states.size()) - 1;
    double m = 0.0;
    for (int k = first_step; k <= last_step && k < static_cast<int>(states.size()); ++k) {
        if (!states[k].allFinite()) return std::numeric_limits<double>::infinity();
        m = std::max(m, states[k].norm());
    }
    return m;
}

NoiseStream gaussian_noise_stream(std::uint64_t seed, std::uint64_t trial_key, int dim,
                                  double dt) {
    // Draw per-step values from a step-keyed stream so the mapping is pure.
    const double stddev = std::sqrt(dt);
    return [=](int k) {
        auto rng = keyed_rng(seed, trial_key, static_cast<std::uint64_t>(k));
        return gaussian_vector(rng, dim, stddev);
    };
}

NoiseStream zero_noise_stream(int dim) {
    return [dim](int) { return Vec::Zero(dim); };
}

namespace {

Vec step_closed(const ProblemSpec& spec, double t, double dt, const Vec& x, const Vec& mean_x,
                const Vec& u, const Vec& mean_u, const Vec& noise) {
    const Vec f = spec.drift(t, x, mean_x, u, mean_u);
    if (spec.mode == core::DiscretizationMode::Euler)
        return x + f * dt + spec.noise_scale * noise;
    return f + spec.noise_scale * noise;
}

/// Controller evaluation: z = (x, mean_x, B); output splits into (u, mean_u).
void eval_controller(const ProblemSpec& spec, const nn::MlpParams& params, const Vec& x,
                     const Vec& mean_x, const Vec& noise, Vec& u, Vec& mean_u) {
    Vec z(3 * spec.state_dim);
    z << x, mean_x, noise;
    const Vec out = nn::forward(params, z);
    require(out.size() == 2 * spec.control_dim,
            "closed loop: controller output dim must be 2 * control_dim");
    u = out.head(spec.control_dim);
    mean_u = out.tail(spec.control_dim);
}

}  // namespace

ClosedLoopTrajectory closed_loop_rollout(const ProblemSpec& spec, const TimeGrid& grid,
                                         const nn::MlpParams& params, const Vec& x0,
                                         const Vec& mean_x0, const NoiseStream& noise,
                                         MeanMode mean_mode, int ensemble_size,
                                         std::uint64_t ensemble_noise_seed) {
    require(params.input_dim() == 3 * spec.state_dim,
            "closed loop: controller input dim must be 3 * state_dim");
    require(x0.size() == spec.state_dim && mean_x0.size() == spec.state_dim,
            "closed loop: initial state dimension mismatch");
    const double dt = grid.dt();
    const Vec zero = Vec::Zero(spec.state_dim);

    ClosedLoopTrajectory traj;
    traj.states.resize(grid.steps + 1);
    traj.mean_states.resize(grid.steps + 1);
    traj.states[0] = x0;
    traj.mean_states[0] = mean_x0;

    if (mean_mode == MeanMode::Deterministic) {
        Vec u, mu;
        for (int k = 0; k < grid.steps; ++k) {
            const double t = grid.t(k);
            const Vec& m = traj.mean_states[k];
            eval_controller(spec, params, m, m, zero, u, mu);
            traj.mean_states[k + 1] = step_closed(spec, t, dt, m, m, u, mu, zero);
            if (traj.diverged_at >= 0) {
                traj.states[k + 1] = traj.states[k];
                continue;
            }
            const Vec b = noise(k);
            eval_controller(spec, params, traj.states[k], m, b, u, mu);
            Vec next = step_closed(spec, t, dt, traj.states[k], m, u, mu, b);
            if (is_diverged_state(next)) {
                traj.diverged_at = k + 1;
                next = traj.states[k];
            }
            traj.states[k + 1] = next;
        }
        return traj;
    }

    // Ensemble mode: copy 0 uses the provided stream; companions use keyed
    // streams derived from ensemble_noise_seed.
    const int n = std::max(1, ensemble_size);
    std::vector<Vec> xs(n, x0);
    std::vector<NoiseStream> streams;
    streams.push_back(noise);
    for (int i = 1; i < n; ++i)
        streams.push_back(gaussian_noise_stream(ensemble_noise_seed, 0x1000 + i, spec.state_dim,
                                                dt));
    std::vector<bool> dead(n, false);
    Vec u, mu;
    for (int k = 0; k < grid.steps; ++k) {
        const double t = grid.t(k);
        Vec mean = Vec::Zero(spec.state_dim);
        int live = 0;
        for (int i = 0; i < n; ++i)
            if (!dead[i]) {
                mean += xs[i];
                ++live;
            }
        if (live > 0) mean /= live;
        traj.mean_states[k] = mean;
        for (int i = 0; i < n; ++i) {
            if (dead[i]) continue;
            const Vec b = streams[i](k);
            eval_controller(spec, params, xs[i], mean, b, u, mu);
            Vec next = step_closed(spec, t, dt, xs[i], mean, u, mu, b);
            if (is_diverged_state(next)) {
                dead[i] = true;
                if (i == 0 && traj.diverged_at < 0) traj.diverged_at = k + 1;
            } else {
                xs[i] = next;
            }
        }
        traj.states[k + 1] = xs[0];
    }
    {
        Vec mean = Vec::Zero(spec.state_dim);
        int live = 0;
        for (int i = 0; i < n; ++i)
            if (!dead[i]) {
                mean += xs[i];
                ++live;
            }
        if (live > 0) mean /= live;
        traj.mean_states[grid.steps] = mean;
    }
    return traj;
}

TrialOutcome classify_containment(const ClosedLoopTrajectory& traj, const Ball& ball,
                                  bool check_terminal) {
    const int last = static_cast<int>(traj.states.size()) - 1;
    const int last_checked = check_terminal ? last : last - 1;
    for (int k = 1; k <= last_checked; ++k) {
        if (traj.diverged_at >= 0 && k >= traj.diverged_at) return TrialOutcome::Diverged;
        if (!ball.contains(traj.states[k])) return TrialOutcome::Escaped;
    }
    if (traj.diverged_at >= 0 && traj.diverged_at <= last_checked)
        return TrialOutcome::Diverged;
    return TrialOutcome::Contained;
}

void wilson_interval(int successes, int trials, double& lo, double& hi) {
    require(trials >= 1 && successes >= 0 && successes <= trials, "wilson_interval: bad counts");
    const double z = 1.959963984540054;  // 97.5% normal quantile
    const double n = trials;
    const double p = static_cast<double>(successes) / n;
    const double z2 = z * z;
    const double denom = 1.0 + z2 / n;
    const double center = (p + z2 / (2.0 * n)) / denom;
    const double half = z * std::sqrt(p * (1.0 - p) / n + z2 / (4.0 * n * n)) / denom;
    lo = std::max(0.0, center - half);
    hi = std::min(1.0, center + half);
}

namespace {

/// Unit sample in the ball/sphere for trial m; antithetic pairs (2j, 2j+1).
Vec unit_sample(std::uint64_t seed, int trial, int dim, Sampling sampling, int total_trials) {
    if (sampling == Sampling::Grid) {
        // Symmetric 1-d style grid along alternating coordinate axes.
        const int pairs = std::max(1, total_trials);
        const double frac = (trial / 2 + 1) / static_cast<double>((pairs + 1) / 2);
        Vec v = Vec::Zero(dim);
        v[(trial / 2) % dim] = frac;
        return trial % 2 == 0 ? v : Vec(-v);
    }
    const int pair = trial / 2;
    auto rng = keyed_rng(seed, 0x73616d70 /* "samp" */, static_cast<std::uint64_t>(pair));
    Vec dir = gaussian_vector(rng, dim, 1.0);
    const double nrm = dir.norm();
    dir = nrm > 0 ? Vec(dir / nrm) : Vec(Vec::Unit(dim, 0));
    double radius_frac = 1.0;
    if (sampling == Sampling::UniformBall) {
        std::uniform_real_distribution<double> uni(0.0, 1.0);
        radius_frac = std::pow(uni(rng), 1.0 / dim);
    }
    Vec v = radius_frac * dir;
    return trial % 2 == 0 ? v : Vec(-v);
}

}  // namespace

StabilityReport estimate_containment(const ProblemSpec& spec, const TimeGrid& grid,
                                     const nn::MlpParams& params, double delta,
                                     const StabilityQuery& query) {
    require(query.trials >= 1, "estimate_containment: trials must be >= 1");
    require(query.epsilon > 0.0 ? query.epsilon < 1.0 : true,
            "estimate_containment: epsilon must be in (0,1)");
    const int d = spec.state_dim;
    const Ball ball = Ball::origin(d, query.r);

    StabilityReport report;
    report.r = query.r;
    report.epsilon = query.epsilon;
    report.delta = delta;
    report.trials = query.trials;
    report.seed = query.seed;
    report.outcomes.assign(query.trials, TrialOutcome::Escaped);
    report.initial_states.assign(query.trials, Vec::Zero(d));

    parallel_for(query.trials, query.threads, [&](int m) {
        const Vec x0 = delta * unit_sample(query.seed, m, d, query.sampling, query.trials);
        const NoiseStream stream =
            gaussian_noise_stream(query.seed, static_cast<std::uint64_t>(m), d, grid.dt());
        const ClosedLoopTrajectory traj = closed_loop_rollout(
            spec, grid, params, x0, x0, stream, query.mean_mode, query.ensemble_size,
            mix_keys(query.seed, static_cast<std::uint64_t>(m), 0x656e73));
        report.initial_states[m] = x0;
        report.outcomes[m] = classify_containment(traj, ball, query.check_terminal);
    });

    const int contained = report.count(TrialOutcome::Contained);
    report.p_hat = static_cast<double>(contained) / query.trials;
    wilson_interval(contained, query.trials, report.ci_lo, report.ci_hi);
    return report;
}

DeltaSearchResult find_delta(const ProblemSpec& spec, const TimeGrid& grid,
                             const nn::MlpParams& params, double r, double epsilon,
                             const StabilityQuery& query) {
    require(epsilon > 0.0 && epsilon < 1.0, "find_delta: epsilon must be in (0,1)");
    StabilityQuery q = query;
    q.r = r;
    q.epsilon = epsilon;

    auto passes = [&](double delta) {
        const StabilityReport rep = estimate_containment(spec, grid, params, delta, q);
        return rep.p_hat >= 1.0 - epsilon && rep.ci_lo >= 1.0 - epsilon - 0.02;
    };

    const int grid_points = 256;
    const double resolution = r / grid_points;
    if (!passes(resolution)) return DeltaSearchResult{0.0, false};

    // Bisection on grid indices, assuming p-hat is monotone in delta.
    int lo = 1, hi = grid_points;  // lo always passing
    if (passes(r)) return DeltaSearchResult{r, true};
    while (hi - lo > 1) {
        const int mid = (lo + hi) / 2;
        if (passes(mid * resolution))
            lo = mid;
        else
            hi = mid;
    }
    return DeltaSearchResult{lo * resolution, true};
}

std::string ComparisonTable::to_text() const {
    std::ostringstream os;
    os << "scenario";
    for (const auto& name : controller_names) os << "  |  " << name;
    os << "\n";
    for (std::size_t s = 0; s < scenarios.size(); ++s) {
        os << scenarios[s].label << " (r=" << scenarios[s].r << ", delta=" << scenarios[s].delta
           << ")";
        for (std::size_t c = 0; c < controller_names.size(); ++c) {
            char buf[96];
            std::snprintf(buf, sizeof(buf), "  |  %.3f [%.3f, %.3f]", cells[s][c].p_hat,
                          cells[s][c].ci_lo, cells[s][c].ci_hi);
            os << buf;
        }
        os << "\n";
    }
    return os.str();
}

void ComparisonTable::write_csv(std::ostream& os) const {
    os << "scenario,r,epsilon,delta,controller,p_hat,ci_lo,ci_hi,M\n";
    for (std::size_t s = 0; s < scenarios.size(); ++s) {
        for (std::size_t c = 0; c < controller_names.size(); ++c) {
            const StabilityReport& rep = cells[s][c];
            os << scenarios[s].label << ',' << scenarios[s].r << ',' << scenarios[s].epsilon
               << ',' << scenarios[s].delta << ',' << controller_names[c] << ',' << rep.p_hat
               << ',' << rep.ci_lo << ',' << rep.ci_hi << ',' << rep.trials << "\n";
        }
    }
}

ComparisonTable compare_controllers(const ProblemSpec& spec, const TimeGrid& grid,
                                    const std::vector<nn::MlpParams>& controllers,
                                    const std::vector<std::string>& names,
                                    const std::vector<ScenarioSpec>& scenarios,
                                    const StabilityQuery& query) {
    require(controllers.size() >= 2, "compare_controllers: need at least two controllers");
    require(controllers.size() == names.size(), "compare_controllers: names mismatch");
    ComparisonTable table;
    table.controller_names = names;
    table.scenarios = scenarios;
    for (const ScenarioSpec& scen : scenarios) {
        std::vector<StabilityReport> row;
        for (const nn::MlpParams& params : controllers) {
            StabilityQuery q = query;
            q.r = scen.r;
            q.epsilon = scen.epsilon;
            StabilityReport rep = estimate_containment(spec, grid, params, scen.delta, q);
            rep.scenario = scen.label;
            row.push_back(std::move(rep));
        }
        table.cells.push_back(std::move(row));
    }
    return table;
}

}  // namespace mftc::stab
