#include "mftc/lq.hpp"
#include "mftc/io.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

namespace mftc::lq {

using core::NoiseTensor;
using core::ProblemSpec;
using core::TimeGrid;

void LqParams::validate() const {
    require(r1 + r2 > 0.0, "LqParams: control cost must be positive definite");
    require(q1 >= 0.0 && q2 >= 0.0 && r1 >= 0.0 && r2 >= 0.0, "LqParams: negative weight");
    require(steps >= 0 && dt > 0.0, "LqParams: bad grid");
}

ProblemSpec make_spec(const LqParams& p, double initial_half_width) {
    p.validate();
    ProblemSpec spec;
    spec.state_dim = 1;
    spec.control_dim = 1;
    spec.mode = core::DiscretizationMode::Direct;
    spec.noise_scale = p.sigma;
    spec.drift = [p](double, const Vec& x, const Vec& mx, const Vec& u, const Vec& mu) {
        Vec f(1);
        f[0] = p.a1 * x[0] + p.a2 * mx[0] + p.b1 * u[0] + p.b2 * mu[0];
        return f;
    };
    spec.running_cost = [p](double, const Vec& x, const Vec& mx, const Vec& u, const Vec& mu) {
        const double dx = x[0] - mx[0];
        const double du = u[0] - mu[0];
        return p.q1 * x[0] * x[0] + p.r1 * u[0] * u[0] + p.q2 * dx * dx + p.r2 * du * du;
    };
    spec.terminal_cost = [p](const Vec& x, const Vec& mx) {
        const double dx = x[0] - mx[0];
        return p.q1 * x[0] * x[0] + p.q2 * dx * dx;
    };
    spec.initial_law = [initial_half_width](std::mt19937_64& rng) {
        std::uniform_real_distribution<double> uni(-initial_half_width, initial_half_width);
        Vec x(1);
        x[0] = uni(rng);
        return x;
    };

    core::DriftJacobians jac;
    jac.dx = [p](double, const Vec&, const Vec&, const Vec&, const Vec&) {
        return Mat::Constant(1, 1, p.a1);
    };
    jac.dmean_x = [p](double, const Vec&, const Vec&, const Vec&, const Vec&) {
        return Mat::Constant(1, 1, p.a2);
    };
    jac.du = [p](double, const Vec&, const Vec&, const Vec&, const Vec&) {
        return Mat::Constant(1, 1, p.b1);
    };
    jac.dmean_u = [p](double, const Vec&, const Vec&, const Vec&, const Vec&) {
        return Mat::Constant(1, 1, p.b2);
    };
    spec.drift_jac = jac;

    core::RunningCostGradients lg;
    lg.dx = [p](double, const Vec& x, const Vec& mx, const Vec&, const Vec&) {
        return Vec::Constant(1, 2.0 * p.q1 * x[0] + 2.0 * p.q2 * (x[0] - mx[0]));
    };
    lg.dmean_x = [p](double, const Vec& x, const Vec& mx, const Vec&, const Vec&) {
        return Vec::Constant(1, -2.0 * p.q2 * (x[0] - mx[0]));
    };
    lg.du = [p](double, const Vec&, const Vec&, const Vec& u, const Vec& mu) {
        return Vec::Constant(1, 2.0 * p.r1 * u[0] + 2.0 * p.r2 * (u[0] - mu[0]));
    };
    lg.dmean_u = [p](double, const Vec&, const Vec&, const Vec& u, const Vec& mu) {
        return Vec::Constant(1, -2.0 * p.r2 * (u[0] - mu[0]));
    };
    spec.running_grad = lg;

    core::TerminalCostGradients tg;
    tg.dx = [p](const Vec& x, const Vec& mx) {
        return Vec::Constant(1, 2.0 * p.q1 * x[0] + 2.0 * p.q2 * (x[0] - mx[0]));
    };
    tg.dmean_x = [p](const Vec& x, const Vec& mx) {
        return Vec::Constant(1, -2.0 * p.q2 * (x[0] - mx[0]));
    };
    spec.terminal_grad = tg;
    return spec;
}

ProblemSpec make_lifted_spec(const LqParams& p, double initial_half_width) {
    p.validate();
    ProblemSpec spec;
    spec.state_dim = 2;   // (x, m)
    spec.control_dim = 2; // (u, nu)
    spec.mode = core::DiscretizationMode::Direct;
    spec.noise_scale = p.sigma;
    spec.drift = [p](double, const Vec& x, const Vec&, const Vec& u, const Vec&) {
        Vec f(2);
        f[0] = p.a1 * x[0] + p.a2 * x[1] + p.b1 * u[0] + p.b2 * u[1];
        f[1] = (p.a1 + p.a2) * x[1] + (p.b1 + p.b2) * u[1];
        return f;
    };
    spec.running_cost = [p](double, const Vec& x, const Vec&, const Vec& u, const Vec&) {
        const double dx = x[0] - x[1];
        const double du = u[0] - u[1];
        return p.q1 * x[0] * x[0] + p.r1 * u[0] * u[0] + p.q2 * dx * dx + p.r2 * du * du;
    };
    spec.terminal_cost = [p](const Vec& x, const Vec&) {
        const double dx = x[0] - x[1];
        return p.q1 * x[0] * x[0] + p.q2 * dx * dx;
    };
    spec.initial_law = [initial_half_width](std::mt19937_64& rng) {
        std::uniform_real_distribution<double> uni(-initial_half_width, initial_half_width);
        Vec x(2);
        x[0] = uni(rng);
        x[1] = x[0];
        return x;
    };

    core::DriftJacobians jac;
    jac.dx = [p](double, const Vec&, const Vec&, const Vec&, const Vec&) {
        Mat j(2, 2);
        j << p.a1, p.a2, 0.0, p.a1 + p.a2;
        return j;
    };
    jac.dmean_x = [](double, const Vec&, const Vec&, const Vec&, const Vec&) {
        return Mat::Zero(2, 2).eval();
    };
    jac.du = [p](double, const Vec&, const Vec&, const Vec&, const Vec&) {
        Mat j(2, 2);
        j << p.b1, p.b2, 0.0, p.b1 + p.b2;
        return j;
    };
    jac.dmean_u = [](double, const Vec&, const Vec&, const Vec&, const Vec&) {
        return Mat::Zero(2, 2).eval();
    };
    spec.drift_jac = jac;

    core::RunningCostGradients lg;
    lg.dx = [p](double, const Vec& x, const Vec&, const Vec&, const Vec&) {
        const double dx = x[0] - x[1];
        Vec g(2);
        g << 2.0 * p.q1 * x[0] + 2.0 * p.q2 * dx, -2.0 * p.q2 * dx;
        return g;
    };
    lg.dmean_x = [](double, const Vec&, const Vec&, const Vec&, const Vec&) {
        return Vec::Zero(2).eval();
    };
    lg.du = [p](double, const Vec&, const Vec&, const Vec& u, const Vec&) {
        const double du = u[0] - u[1];
        Vec g(2);
        g << 2.0 * p.r1 * u[0] + 2.0 * p.r2 * du, -2.0 * p.r2 * du;
        return g;
    };
    lg.dmean_u = [](double, const Vec&, const Vec&, const Vec&, const Vec&) {
        return Vec::Zero(2).eval();
    };
    spec.running_grad = lg;

    core::TerminalCostGradients tg;
    tg.dx = [p](const Vec& x, const Vec&) {
        const double dx = x[0] - x[1];
        Vec g(2);
        g << 2.0 * p.q1 * x[0] + 2.0 * p.q2 * dx, -2.0 * p.q2 * dx;
        return g;
    };
    tg.dmean_x = [](const Vec&, const Vec&) { return Vec::Zero(2).eval(); };
    spec.terminal_grad = tg;
    return spec;
}

NoiseTensor lifted_noise(std::uint64_t seed, int samples, int steps, double dt) {
    NoiseTensor noise = core::sample_noise(seed, samples, steps, 2, dt);
    for (auto& traj : noise.increments)
        for (Vec& b : traj) b[1] = 0.0;
    return noise;
}

std::vector<Vec> lifted_initial_states(std::uint64_t seed, int samples, double half_width) {
    std::vector<Vec> states(samples);
    for (int i = 0; i < samples; ++i) {
        auto rng = keyed_rng(seed, 0x78300000 + static_cast<std::uint64_t>(i));
        std::uniform_real_distribution<double> uni(-half_width, half_width);
        Vec x(2);
        x[0] = uni(rng);
        x[1] = x[0];
        states[i] = x;
    }
    return states;
}

// --- Riccati oracle ----------------------------------------------------------

namespace {

void scalar_riccati(double A, double B, double Q, double R, double terminal, int steps,
                    std::vector<double>& value, std::vector<double>& gain) {
    value.assign(steps + 1, 0.0);
    gain.assign(std::max(0, steps), 0.0);
    value[steps] = terminal;
    for (int k = steps - 1; k >= 0; --k) {
        const double pn = value[k + 1];
        const double denom = R + B * B * pn;
        require(denom > 0.0, "riccati_solve: ill-posed problem (R + B^2 P <= 0)");
        gain[k] = A * B * pn / denom;
        value[k] = Q + A * A * pn - A * A * B * B * pn * pn / denom;
        require(value[k] >= 0.0, "riccati_solve: negative value coefficient");
    }
}

}  // namespace

RiccatiSolution riccati_solve(const LqParams& p) {
    p.validate();
    RiccatiSolution sol;
    scalar_riccati(p.a1 + p.a2, p.b1 + p.b2, p.q1, p.r1, p.q1, p.steps, sol.value_mean,
                   sol.gain_mean);
    scalar_riccati(p.a1, p.b1, p.q1 + p.q2, p.r1 + p.r2, p.q1 + p.q2, p.steps, sol.value_dev,
                   sol.gain_dev);
    sol.noise_terms.assign(p.steps, 0.0);
    sol.noise_cost = 0.0;
    for (int k = 0; k < p.steps; ++k) {
        sol.noise_terms[k] = p.sigma * p.sigma * p.dt * sol.value_dev[k + 1];
        sol.noise_cost += sol.noise_terms[k];
    }
    return sol;
}

std::string RiccatiSolution::to_json() const {
    nlohmann::json j;
    j["value_mean"] = value_mean;
    j["gain_mean"] = gain_mean;
    j["value_dev"] = value_dev;
    j["gain_dev"] = gain_dev;
    j["noise_terms"] = noise_terms;
    j["noise_cost"] = noise_cost;
    return j.dump(2);
}

double riccati_optimal_cost(const RiccatiSolution& solution,
                            const std::vector<Vec>& initial_states) {
    require(!initial_states.empty(), "riccati_optimal_cost: empty ensemble");
    const int n = static_cast<int>(initial_states.size());
    double mean = 0.0;
    for (const Vec& x : initial_states) mean += x[0];
    mean /= n;
    double var = 0.0;
    for (const Vec& x : initial_states) var += (x[0] - mean) * (x[0] - mean);
    var /= n;
    return solution.value_mean[0] * mean * mean + solution.value_dev[0] * var +
           solution.noise_cost;
}

opt::OptimalBatch riccati_feedback_rollout(const LqParams& p,
                                           const std::vector<Vec>& initial_states,
                                           const NoiseTensor& noise) {
    const RiccatiSolution sol = riccati_solve(p);
    const ProblemSpec spec = make_spec(p);
    const TimeGrid grid = p.grid();
    const int n = static_cast<int>(initial_states.size());
    require(noise.samples() == n && noise.steps() == grid.steps,
            "riccati_feedback_rollout: noise extents disagree");

    core::ControlBatch controls = core::ControlBatch::zeros(n, grid.steps, 1);
    std::vector<Vec> xs = initial_states;
    for (int k = 0; k < grid.steps; ++k) {
        double mean = 0.0;
        for (const Vec& x : xs) mean += x[0];
        mean /= n;
        double mean_u = -sol.gain_mean[k] * mean;
        for (int i = 0; i < n; ++i)
            controls.controls[i][k][0] = mean_u - sol.gain_dev[k] * (xs[i][0] - mean);
        controls.mean_controls[k][0] = mean_u;
        for (int i = 0; i < n; ++i) {
            const double x = xs[i][0];
            xs[i][0] = p.a1 * x + p.a2 * mean + p.b1 * controls.controls[i][k][0] +
                       p.b2 * mean_u + p.sigma * noise.increments[i][k][0];
        }
    }
    controls.recompute_means();

    opt::OptimalBatch batch;
    batch.states = core::rollout_ensemble(spec, grid, initial_states, controls, noise);
    batch.controls = std::move(controls);
    batch.achieved_cost = core::empirical_cost(spec, grid, batch.states, batch.controls);
    batch.converged = true;
    return batch;
}

// --- architectures -----------------------------------------------------------

std::vector<nn::LayerSpec> nn1_architecture() {
    return {{3, 2, nn::Activation::Linear},
            {2, 2, nn::Activation::Tanh},
            {2, 2, nn::Activation::Linear}};
}

std::vector<nn::LayerSpec> nn2_architecture() {
    return {{3, 2, nn::Activation::Linear},
            {2, 2, nn::Activation::Tanh},
            {2, 50, nn::Activation::Tanh},
            {50, 50, nn::Activation::Tanh},
            {50, 2, nn::Activation::Linear}};
}

// --- basin edge --------------------------------------------------------------

double basin_edge(const ProblemSpec& spec, const TimeGrid& grid, const nn::MlpParams& params,
                  double r, int trials, std::uint64_t seed) {
    require(trials >= 1 && r > 0.0, "basin_edge: bad arguments");
    const stab::Ball ball = stab::Ball::origin(spec.state_dim, r);
    auto succeeds = [&](double x0) {
        int contained = 0;
        for (int t = 0; t < trials; ++t) {
            const Vec start = x0 * Vec::Unit(spec.state_dim, 0);
            const stab::NoiseStream stream = stab::gaussian_noise_stream(
                seed, 0xb000 + static_cast<std::uint64_t>(t), spec.state_dim, grid.dt());
            const stab::ClosedLoopTrajectory traj = stab::closed_loop_rollout(
                spec, grid, params, start, start, stream, stab::MeanMode::Deterministic);
            if (stab::classify_containment(traj, ball, false) == stab::TrialOutcome::Contained)
                ++contained;
        }
        return 2 * contained >= trials;
    };

    const double resolution = r / 256.0;
    if (!succeeds(resolution)) return 0.0;
    double lo = resolution, hi = 2.0 * r;
    if (succeeds(hi)) return hi;
    while (hi - lo > resolution) {
        const double mid = 0.5 * (lo + hi);
        if (succeeds(mid))
            lo = mid;
        else
            hi = mid;
    }
    return lo;
}

// --- benchmark pipeline ------------------------------------------------------

BenchmarkConfig BenchmarkConfig::defaults() {
    BenchmarkConfig cfg;
    cfg.optimizer.max_iters = 3000;
    cfg.optimizer.learning_rate = 0.5;
    cfg.optimizer.convergence_tol = 1e-9;
    cfg.training.epochs = 400;
    cfg.training.batch_size = 128;
    cfg.training.learning_rate = 5e-4;
    cfg.scenarios = {{"delta1", 200.0, 0.01, 20.0},
                     {"delta2", 200.0, 0.55, 150.0},
                     {"delta3", 200.0, 0.7, 180.0}};
    return cfg;
}

BenchmarkConfig BenchmarkConfig::smoke() {
    BenchmarkConfig cfg = defaults();
    cfg.data_samples = 40;
    cfg.stability_trials = 100;
    cfg.adversarial_count = 20;
    cfg.training.epochs = 120;
    cfg.optimizer.max_iters = 800;
    return cfg;
}

nn::Dataset lifted_records(const opt::OptimalBatch& batch, const NoiseTensor& noise) {
    nn::Dataset records;
    const int n = batch.states.samples();
    const int nk = batch.controls.steps();
    for (int i = 0; i < n; ++i) {
        for (int k = 0; k < nk; ++k) {
            nn::Record rec;
            rec.input = Vec(3);
            rec.input << batch.states.states[i][k][0], batch.states.states[i][k][1],
                noise.increments[i][k][0];
            rec.target = batch.controls.controls[i][k];
            records.push_back(std::move(rec));
        }
    }
    return records;
}

namespace {

void write_text_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os << text;
}

}  // namespace

GeneratedData generate_dataset(const BenchmarkConfig& config) {
    const TimeGrid grid = config.lq.grid();
    const RiccatiSolution sol = riccati_solve(config.lq);
    const std::uint64_t data_seed = mix_keys(config.seed, 0xda7a);
    GeneratedData data;
    if (config.generator == DataGenerator::PcdEnsemble) {
        const ProblemSpec coupled = make_spec(config.lq, config.initial_half_width);
        data.initial_states.resize(config.data_samples);
        for (int i = 0; i < config.data_samples; ++i) {
            auto rng = keyed_rng(data_seed, 0x7830, static_cast<std::uint64_t>(i));
            data.initial_states[i] = coupled.initial_law(rng);
        }
        data.noise = core::sample_noise(data_seed, config.data_samples, grid.steps, 1,
                                        grid.dt());
        const opt::OptimalBatch batch = opt::solve_pcd(coupled, grid, data.initial_states,
                                                       data.noise, config.optimizer);
        data.achieved_cost = batch.achieved_cost;
        data.records = retrain::records_from_batch(batch, data.noise);
    } else {
        const ProblemSpec lifted = make_lifted_spec(config.lq, config.initial_half_width);
        data.initial_states = lifted_initial_states(data_seed, config.data_samples,
                                                    config.initial_half_width);
        data.noise = lifted_noise(data_seed, config.data_samples, grid.steps, grid.dt());
        opt::OptimalBatch batch;
        if (config.generator == DataGenerator::PcdLifted) {
            batch = opt::solve_pcd(lifted, grid, data.initial_states, data.noise,
                                   config.optimizer);
        } else {
            // Riccati feedback on the lifted states, no optimization.
            core::ControlBatch controls = core::ControlBatch::zeros(
                config.data_samples, grid.steps, 2);
            std::vector<Vec> xs = data.initial_states;
            for (int k = 0; k < grid.steps; ++k) {
                for (int i = 0; i < config.data_samples; ++i) {
                    const double m = xs[i][1];
                    const double nu = -sol.gain_mean[k] * m;
                    const double u = nu - sol.gain_dev[k] * (xs[i][0] - m);
                    controls.controls[i][k] << u, nu;
                    Vec next(2);
                    next[0] = config.lq.a1 * xs[i][0] + config.lq.a2 * m + config.lq.b1 * u +
                              config.lq.b2 * nu +
                              config.lq.sigma * data.noise.increments[i][k][0];
                    next[1] = (config.lq.a1 + config.lq.a2) * m +
                              (config.lq.b1 + config.lq.b2) * nu;
                    xs[i] = next;
                }
            }
            controls.recompute_means();
            batch.states = core::rollout_ensemble(lifted, grid, data.initial_states, controls,
                                                  data.noise);
            batch.controls = std::move(controls);
            batch.achieved_cost = core::empirical_cost(lifted, grid, batch.states,
                                                       batch.controls);
            batch.converged = true;
        }
        data.achieved_cost = batch.achieved_cost;
        data.records = lifted_records(batch, data.noise);
    }
    if (config.generator == DataGenerator::PcdEnsemble) {
        data.oracle_cost = riccati_optimal_cost(sol, data.initial_states);
    } else {
        // Per-sample mean path started at m0 = x0: the spread across samples
        // is carried by the cheap mean subsystem, so the optimum is
        // Pbar_0 * avg(x0^2) plus the deviation noise cost.
        double avg_sq = 0.0;
        for (const Vec& x : data.initial_states) avg_sq += x[0] * x[0];
        avg_sq /= static_cast<double>(data.initial_states.size());
        data.oracle_cost = sol.value_mean[0] * avg_sq + sol.noise_cost;
    }
    return data;
}

BenchmarkReport run_benchmark(const BenchmarkConfig& config, const std::string& out_dir) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    const fs::path out(out_dir);
    BenchmarkReport report;

    const TimeGrid grid = config.lq.grid();
    const ProblemSpec coupled = make_spec(config.lq, config.initial_half_width);
    const ProblemSpec lifted = make_lifted_spec(config.lq, config.initial_half_width);

    // Riccati oracle.
    report.riccati = riccati_solve(config.lq);
    write_text_file(out / "riccati.json", report.riccati.to_json());

    // Training data.
    const GeneratedData data = generate_dataset(config);
    const nn::Dataset& dataset = data.records;
    report.optimizer_cost = data.achieved_cost;
    report.oracle_cost = data.oracle_cost;
    io::write_dataset_csv((out / "dataset.csv").string(), dataset, nullptr);

    // Train both architectures on standardized inputs.
    const nn::InputScaling scaling = nn::standardize_inputs(dataset);
    nn::TrainConfig train_cfg = config.training;
    train_cfg.shuffle_seed = mix_keys(config.seed, 0x6e6e31);
    nn::MlpParams init1 = nn::make_mlp(nn1_architecture(), train_cfg.shuffle_seed);
    init1.input_scaling = scaling;
    report.nn1 = nn::train(init1, dataset, train_cfg).params;
    train_cfg.shuffle_seed = mix_keys(config.seed, 0x6e6e32);
    nn::MlpParams init2 = nn::make_mlp(nn2_architecture(), train_cfg.shuffle_seed);
    init2.input_scaling = scaling;
    report.nn2 = nn::train(init2, dataset, train_cfg).params;
    nn::save_mlp_file((out / "nn1.controller").string(), report.nn1);
    nn::save_mlp_file((out / "nn2.controller").string(), report.nn2);

    // Adversarial attack on NN1.
    adv::AttackConfig attack;
    attack.alpha = config.attack_alpha;
    attack.beta = config.attack_beta;
    attack.max_pgd_iters = 200;
    attack.restarts = 20;
    attack.seed = mix_keys(config.seed, 0xa77ac);
    attack.goal = adv::AttackGoal::EscapeBall;
    attack.escape_radius = 10.0 * config.scenarios.front().r;
    attack.init_delta = config.scenarios.front().delta;
    attack.threads = config.threads;
    report.attack = adv::pgd_attack(coupled, grid, report.nn1, attack);
    write_text_file(out / "attack.json", report.attack.to_json());
    {
        std::ofstream os(out / "attack_walk.csv");
        report.attack.write_walk_csv(os);
    }

    // Harvest adversarial starts, solve from them, retrain NN1.
    retrain::HarvestConfig harvest_cfg;
    harvest_cfg.attack = attack;
    harvest_cfg.attack.restarts = 1;
    harvest_cfg.count = config.adversarial_count;
    harvest_cfg.min_separation = config.adversarial_min_separation;
    const retrain::HarvestResult harvest =
        retrain::harvest_adversarials(coupled, grid, report.nn1, harvest_cfg);
    report.harvest_shortfall = harvest.shortfall;
    report.harvested = static_cast<int>(harvest.states.size());

    retrain::AugmentedDataset augmented;
    augmented.append(dataset, retrain::Provenance::Base);
    if (!harvest.states.empty()) {
        std::vector<Vec> adv_x0;
        for (const Vec& y : harvest.states) {
            Vec x(2);
            x << y[0], y[0];
            adv_x0.push_back(x);
        }
        const NoiseTensor adv_noise = lifted_noise(mix_keys(config.seed, 0xadda),
                                                   static_cast<int>(adv_x0.size()), grid.steps,
                                                   grid.dt());
        const opt::OptimalBatch adv_batch =
            retrain::solve_from_adversarials(lifted, grid, adv_x0, adv_noise, config.optimizer);
        augmented.append(lifted_records(adv_batch, adv_noise), retrain::Provenance::Adversarial);
    }
    io::write_dataset_csv((out / "dataset_augmented.csv").string(), augmented.records,
                          &augmented.provenance);

    retrain::RetrainConfig retrain_cfg;
    retrain_cfg.train = config.training;
    retrain_cfg.train.shuffle_seed = mix_keys(config.seed, 0x6e6e33);
    report.improved_nn1 = retrain::retrain(report.nn1, augmented, retrain_cfg).params;
    nn::save_mlp_file((out / "improved_nn1.controller").string(), report.improved_nn1);

    // Stability comparison (Table-II style).
    stab::StabilityQuery query;
    query.trials = config.stability_trials;
    query.mean_mode = stab::MeanMode::Deterministic;
    query.seed = mix_keys(config.seed, 0x57ab);
    query.threads = config.threads;
    report.table = stab::compare_controllers(
        coupled, grid, {report.nn1, report.nn2, report.improved_nn1},
        {"nn1", "nn2", "improved_nn1"}, config.scenarios, query);
    {
        std::ofstream os(out / "table2.csv");
        report.table.write_csv(os);
    }

    // Deterministic-start basin edges and trajectory fans.
    const double r0 = config.scenarios.front().r;
    const std::uint64_t edge_seed = mix_keys(config.seed, 0xed6e);
    report.edge_nn1 = basin_edge(coupled, grid, report.nn1, r0, 21, edge_seed);
    report.edge_improved = basin_edge(coupled, grid, report.improved_nn1, r0, 21, edge_seed);
    {
        std::ofstream os(out / "fig3_trajectories.csv");
        os << "controller,x0,step,x,mean_x\n";
        const std::vector<std::pair<std::string, const nn::MlpParams*>> nets = {
            {"nn1", &report.nn1}, {"nn2", &report.nn2}, {"improved_nn1", &report.improved_nn1}};
        for (const auto& [name, params] : nets) {
            for (double x0 = -250.0; x0 <= 250.0 + 1e-9; x0 += 25.0) {
                const Vec start = Vec::Constant(1, x0);
                const stab::NoiseStream stream = stab::gaussian_noise_stream(
                    mix_keys(config.seed, 0xf193), static_cast<std::uint64_t>(x0 + 300.0), 1,
                    grid.dt());
                const stab::ClosedLoopTrajectory traj = stab::closed_loop_rollout(
                    coupled, grid, *params, start, start, stream,
                    stab::MeanMode::Deterministic);
                for (std::size_t k = 0; k < traj.states.size(); ++k)
                    os << name << ',' << x0 << ',' << k << ',' << traj.states[k][0] << ','
                       << traj.mean_states[k][0] << "\n";
            }
        }
    }

    // Summary checks.
    nlohmann::json summary;
    summary["optimizer_cost"] = report.optimizer_cost;
    summary["oracle_cost"] = report.oracle_cost;
    summary["optimizer_within_1pct_of_oracle"] =
        report.optimizer_cost <= 1.01 * report.oracle_cost;
    const auto& cells = report.table.cells;
    auto phat = [&](int scenario, int controller) { return cells[scenario][controller].p_hat; };
    auto lo = [&](int scenario, int controller) { return cells[scenario][controller].ci_lo; };
    auto hi = [&](int scenario, int controller) { return cells[scenario][controller].ci_hi; };
    summary["row_delta1_all_one"] =
        lo(0, 0) >= 0.95 && lo(0, 1) >= 0.95 && lo(0, 2) >= 0.95;
    summary["ordering_nn2_ge_nn1_delta2"] = hi(1, 1) >= lo(1, 0);
    summary["ordering_nn2_ge_nn1_delta3"] = hi(2, 1) >= lo(2, 0);
    summary["ordering_improved_ge_nn1_delta2"] = hi(1, 2) >= lo(1, 0);
    summary["ordering_improved_ge_nn1_delta3"] = hi(2, 2) >= lo(2, 0);
    summary["p_hat"] = {{"delta1", {phat(0, 0), phat(0, 1), phat(0, 2)}},
                        {"delta2", {phat(1, 0), phat(1, 1), phat(1, 2)}},
                        {"delta3", {phat(2, 0), phat(2, 1), phat(2, 2)}}};
    summary["attack_found"] = report.attack.found;
    summary["harvested"] = report.harvested;
    summary["harvest_shortfall"] = report.harvest_shortfall;
    summary["edge_nn1"] = report.edge_nn1;
    summary["edge_improved_nn1"] = report.edge_improved;
    summary["edge_ratio"] =
        report.edge_nn1 > 0.0 ? report.edge_improved / report.edge_nn1 : 0.0;
    summary["edge_ratio_ge_1_5"] =
        report.edge_nn1 > 0.0 && report.edge_improved >= 1.5 * report.edge_nn1;
    report.summary_json = summary.dump(2);
    write_text_file(out / "summary.json", report.summary_json);

    return report;
}

}  // namespace mftc::lq
