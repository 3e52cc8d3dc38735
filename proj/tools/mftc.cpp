// mftc: reproducible mean-field control experiments from JSON configs.
//
// Every command reads one config file, derives all randomness from a single
// seed, writes its artifacts under --out, and drops a manifest.json listing
// them. Exit codes: 0 ok, 2 contract violation, 3 solver nonconvergence,
// 4 I/O failure.

#include "mftc/io.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using namespace mftc;

namespace {

struct CliState {
    std::string config_path;
    std::string out_dir = "out";
    std::string scale = "full";
    std::uint64_t seed = 0;
    bool seed_set = false;
    int threads = 0;
    bool threads_set = false;

    std::string config_bytes;  // raw file contents, hashed into the manifest
    io::CliConfig config;
};

void load_config(CliState& st) {
    if (st.config_path.empty()) {
        st.config_bytes = io::default_config_json();
    } else {
        std::ifstream is(st.config_path);
        if (!is) throw std::runtime_error("cannot read config " + st.config_path);
        std::stringstream ss;
        ss << is.rdbuf();
        st.config_bytes = ss.str();
    }
    st.config = io::parse_config(st.config_bytes);
    if (st.scale == "smoke") {
        lq::BenchmarkConfig& b = st.config.bench;
        const lq::BenchmarkConfig s = lq::BenchmarkConfig::smoke();
        b.data_samples = std::min(b.data_samples, s.data_samples);
        b.stability_trials = std::min(b.stability_trials, s.stability_trials);
        b.adversarial_count = std::min(b.adversarial_count, s.adversarial_count);
        b.training.epochs = std::min(b.training.epochs, s.training.epochs);
        b.optimizer.max_iters = std::min(b.optimizer.max_iters, s.optimizer.max_iters);
    }
    if (st.seed_set) st.config.bench.seed = st.seed;
    if (st.threads_set) st.config.bench.threads = st.threads;
    st.config.attack.threads = st.config.bench.threads;
}

void finish(const CliState& st, const std::string& command,
            std::vector<std::string> outputs) {
    io::RunManifest manifest =
        io::make_manifest(command, st.config_bytes, st.config.bench.seed, st.scale);
    manifest.outputs = std::move(outputs);
    manifest.write((fs::path(st.out_dir) / "manifest.json").string());
}

nn::MlpParams load_controller(const CliState& st) {
    require(!st.config.controller_path.empty(),
            "config: field 'controller' is required for this command");
    return nn::load_mlp_file(st.config.controller_path);
}

nn::Dataset load_dataset(const CliState& st, std::vector<retrain::Provenance>* provenance) {
    std::string path = st.config.dataset_path;
    if (path.empty()) path = (fs::path(st.out_dir) / "dataset.csv").string();
    return io::read_dataset_csv(path, provenance);
}

int cmd_generate(CliState& st) {
    fs::create_directories(st.out_dir);
    const lq::GeneratedData data = lq::generate_dataset(st.config.bench);
    const fs::path out(st.out_dir);
    io::write_dataset_csv((out / "dataset.csv").string(), data.records, nullptr);
    {
        std::ofstream os(out / "riccati.json");
        os << lq::riccati_solve(st.config.bench.lq).to_json() << "\n";
    }
    std::cout << "generated " << data.records.size() << " records, achieved cost "
              << data.achieved_cost << " (oracle " << data.oracle_cost << ")\n";
    finish(st, "generate", {"dataset.csv", "riccati.json"});
    return 0;
}

int cmd_train(CliState& st) {
    fs::create_directories(st.out_dir);
    const nn::Dataset dataset = load_dataset(st, nullptr);
    const auto arch = st.config.architecture == "nn2" ? lq::nn2_architecture()
                                                      : lq::nn1_architecture();
    nn::TrainConfig cfg = st.config.bench.training;
    cfg.shuffle_seed = mix_keys(st.config.bench.seed, 0x6e6e31);
    nn::MlpParams init = nn::make_mlp(arch, cfg.shuffle_seed);
    init.input_scaling = nn::standardize_inputs(dataset);
    const nn::TrainResult result = nn::train(init, dataset, cfg);
    const std::string name = st.config.architecture + ".controller";
    nn::save_mlp_file((fs::path(st.out_dir) / name).string(), result.params);
    std::cout << "trained " << st.config.architecture << ", final mse "
              << result.epoch_loss.back() << "\n";
    finish(st, "train", {name});
    return 0;
}

int cmd_attack(CliState& st) {
    fs::create_directories(st.out_dir);
    const nn::MlpParams controller = load_controller(st);
    const core::ProblemSpec spec =
        lq::make_spec(st.config.bench.lq, st.config.bench.initial_half_width);
    adv::AttackConfig attack = st.config.attack;
    attack.seed = mix_keys(st.config.bench.seed, 0xa77ac);
    const adv::AttackResult result =
        adv::pgd_attack(spec, st.config.bench.lq.grid(), controller, attack);
    const fs::path out(st.out_dir);
    {
        std::ofstream os(out / "attack.json");
        os << result.to_json() << "\n";
    }
    {
        std::ofstream os(out / "attack_walk.csv");
        result.write_walk_csv(os);
    }
    std::cout << (result.found ? "adversarial state found" : "no adversarial state") << "\n";
    finish(st, "attack", {"attack.json", "attack_walk.csv"});
    return 0;
}

int cmd_stability(CliState& st) {
    fs::create_directories(st.out_dir);
    const nn::MlpParams controller = load_controller(st);
    const core::ProblemSpec spec =
        lq::make_spec(st.config.bench.lq, st.config.bench.initial_half_width);
    const core::TimeGrid grid = st.config.bench.lq.grid();
    stab::StabilityQuery query;
    query.trials = st.config.bench.stability_trials;
    query.seed = mix_keys(st.config.bench.seed, 0x57ab);
    query.threads = st.config.bench.threads;
    const fs::path out(st.out_dir);
    std::ofstream os(out / "stability.json");
    os << "[\n";
    std::vector<std::string> outputs = {"stability.json"};
    bool first = true;
    for (const stab::ScenarioSpec& sc : st.config.bench.scenarios) {
        query.r = sc.r;
        query.epsilon = sc.epsilon;
        stab::StabilityReport report;
        if (sc.delta > 0.0) {
            report = stab::estimate_containment(spec, grid, controller, sc.delta, query);
        } else {
            const stab::DeltaSearchResult found =
                stab::find_delta(spec, grid, controller, sc.r, sc.epsilon, query);
            report = stab::estimate_containment(spec, grid, controller, found.delta, query);
        }
        report.scenario = sc.label;
        os << (first ? "" : ",\n") << report.to_json();
        first = false;
        const std::string trials_name = "trials_" + sc.label + ".csv";
        std::ofstream ts(out / trials_name);
        report.write_trials_csv(ts);
        outputs.push_back(trials_name);
        std::cout << sc.label << ": p_hat " << report.p_hat << " at delta " << report.delta
                  << "\n";
    }
    os << "\n]\n";
    finish(st, "stability", outputs);
    return 0;
}

int cmd_retrain(CliState& st) {
    fs::create_directories(st.out_dir);
    const nn::MlpParams controller = load_controller(st);
    const lq::BenchmarkConfig& b = st.config.bench;
    const core::ProblemSpec coupled = lq::make_spec(b.lq, b.initial_half_width);
    const core::ProblemSpec lifted = lq::make_lifted_spec(b.lq, b.initial_half_width);
    const core::TimeGrid grid = b.lq.grid();

    retrain::HarvestConfig harvest_cfg;
    harvest_cfg.attack = st.config.attack;
    harvest_cfg.attack.restarts = 1;
    harvest_cfg.attack.seed = mix_keys(b.seed, 0xa77ac);
    harvest_cfg.count = b.adversarial_count;
    harvest_cfg.min_separation = st.config.adversarial_min_separation;
    const retrain::HarvestResult harvest =
        retrain::harvest_adversarials(coupled, grid, controller, harvest_cfg);
    std::cout << "harvested " << harvest.states.size() << " adversarial states"
              << (harvest.shortfall ? " (shortfall)" : "") << "\n";

    retrain::AugmentedDataset augmented;
    augmented.append(load_dataset(st, nullptr), retrain::Provenance::Base);
    if (!harvest.states.empty()) {
        std::vector<Vec> adv_x0;
        for (const Vec& y : harvest.states) {
            Vec x(2);
            x << y[0], y[0];
            adv_x0.push_back(x);
        }
        const core::NoiseTensor noise = lq::lifted_noise(
            mix_keys(b.seed, 0xadda), static_cast<int>(adv_x0.size()), grid.steps, grid.dt());
        const opt::OptimalBatch batch =
            retrain::solve_from_adversarials(lifted, grid, adv_x0, noise, b.optimizer);
        augmented.append(lq::lifted_records(batch, noise), retrain::Provenance::Adversarial);
    }
    const fs::path out(st.out_dir);
    io::write_dataset_csv((out / "dataset_augmented.csv").string(), augmented.records,
                          &augmented.provenance);

    retrain::RetrainConfig cfg;
    cfg.train = b.training;
    cfg.train.shuffle_seed = mix_keys(b.seed, 0x6e6e33);
    const nn::TrainResult result = retrain::retrain(controller, augmented, cfg);
    nn::save_mlp_file((out / "improved.controller").string(), result.params);
    std::cout << "retrained controller, final mse " << result.epoch_loss.back() << "\n";
    finish(st, "retrain", {"dataset_augmented.csv", "improved.controller"});
    return 0;
}

int cmd_benchmark(CliState& st) {
    const lq::BenchmarkReport report = lq::run_benchmark(st.config.bench, st.out_dir);
    std::cout << report.table.to_text();
    std::cout << "summary:\n" << report.summary_json << "\n";
    finish(st, "benchmark",
           {"dataset.csv", "dataset_augmented.csv", "riccati.json", "nn1.controller",
            "nn2.controller", "improved_nn1.controller", "attack.json", "attack_walk.csv",
            "table2.csv", "fig3_trajectories.csv", "summary.json"});
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Mean-field control experiments: data generation, controller training, "
                 "stability estimation, adversarial attack and retraining."};
    app.require_subcommand(1);

    CliState st;
    app.add_option("--config", st.config_path, "JSON config file (defaults used when absent)");
    app.add_option("--out", st.out_dir, "output directory")->capture_default_str();
    app.add_option("--scale", st.scale, "problem scale")
        ->check(CLI::IsMember({"smoke", "full"}))
        ->capture_default_str();
    auto* seed_opt = app.add_option("--seed", st.seed, "override the config seed");
    auto* threads_opt = app.add_option("--threads", st.threads, "worker thread cap");

    int (*handler)(CliState&) = nullptr;
    const std::vector<std::pair<const char*, std::pair<const char*, int (*)(CliState&)>>> cmds =
        {{"generate", {"solve the control problem and emit the training dataset", cmd_generate}},
         {"train", {"fit a feedback controller to a dataset", cmd_train}},
         {"attack", {"search for adversarial initial states", cmd_attack}},
         {"stability", {"estimate containment probabilities", cmd_stability}},
         {"retrain", {"augment with adversarial solves and retrain", cmd_retrain}},
         {"benchmark", {"run the full pipeline and comparison table", cmd_benchmark}}};
    for (const auto& [name, entry] : cmds) {
        auto* sub = app.add_subcommand(name, entry.first);
        sub->fallthrough();  // global flags may follow the subcommand
        auto fn = entry.second;
        sub->callback([&handler, fn] { handler = fn; });
    }

    CLI11_PARSE(app, argc, argv);
    st.seed_set = seed_opt->count() > 0;
    st.threads_set = threads_opt->count() > 0;

    try {
        load_config(st);
        return handler(st);
    } catch (const ContractViolation& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const NonConvergence& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    }
}
