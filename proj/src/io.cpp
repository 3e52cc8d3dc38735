#include "mftc/io.hpp"

#include <cstdio>
#include <ctime>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#ifndef MFTC_REVISION
#define MFTC_REVISION "unversioned"
#endif

namespace mftc::io {

using nlohmann::json;

std::string fnv1a_hex(const std::string& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::string RunManifest::to_json() const {
    json j;
    j["command"] = command;
    j["config_digest"] = config_digest;
    j["seed"] = seed;
    j["scale"] = scale;
    j["outputs"] = outputs;
    j["timestamp"] = timestamp;
    j["revision"] = revision;
    j["module_versions"] = module_versions;
    return j.dump(2);
}

void RunManifest::write(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write manifest " + path);
    os << to_json() << "\n";
}

RunManifest make_manifest(const std::string& command, const std::string& config_bytes,
                          std::uint64_t seed, const std::string& scale) {
    RunManifest m;
    m.command = command;
    m.config_digest = fnv1a_hex(config_bytes);
    m.seed = seed;
    m.scale = scale;
    m.revision = MFTC_REVISION;
    const char* version = "0.1.0";
    for (const char* mod : {"dynamics", "trajectory-optimizer", "neural-controller",
                            "stability-lab", "adversary", "adversarial-retraining",
                            "lq-benchmark", "cli-harness"})
        m.module_versions[mod] = version;
    std::time_t now = std::time(nullptr);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
    m.timestamp = buf;
    return m;
}

// --- config parsing ----------------------------------------------------------

namespace {

void check_keys(const json& obj, const std::vector<std::string>& allowed,
                const std::string& context) {
    require(obj.is_object(), "config: " + context + " must be a JSON object");
    for (const auto& [key, value] : obj.items()) {
        bool ok = false;
        for (const auto& a : allowed)
            if (key == a) ok = true;
        require(ok, "config: unknown key '" + key + "' in " + context);
    }
}

double get_num(const json& obj, const std::string& key, double fallback) {
    if (!obj.contains(key)) return fallback;
    require(obj[key].is_number(), "config: field '" + key + "' must be a number");
    return obj[key].get<double>();
}

int get_int(const json& obj, const std::string& key, int fallback) {
    if (!obj.contains(key)) return fallback;
    require(obj[key].is_number_integer(), "config: field '" + key + "' must be an integer");
    return obj[key].get<int>();
}

std::string get_str(const json& obj, const std::string& key, const std::string& fallback) {
    if (!obj.contains(key)) return fallback;
    require(obj[key].is_string(), "config: field '" + key + "' must be a string");
    return obj[key].get<std::string>();
}

void parse_lq(const json& obj, lq::LqParams& p) {
    check_keys(obj, {"a1", "a2", "b1", "b2", "q1", "q2", "r1", "r2", "sigma", "steps", "dt"},
               "lq");
    p.a1 = get_num(obj, "a1", p.a1);
    p.a2 = get_num(obj, "a2", p.a2);
    p.b1 = get_num(obj, "b1", p.b1);
    p.b2 = get_num(obj, "b2", p.b2);
    p.q1 = get_num(obj, "q1", p.q1);
    p.q2 = get_num(obj, "q2", p.q2);
    p.r1 = get_num(obj, "r1", p.r1);
    p.r2 = get_num(obj, "r2", p.r2);
    p.sigma = get_num(obj, "sigma", p.sigma);
    p.steps = get_int(obj, "steps", p.steps);
    p.dt = get_num(obj, "dt", p.dt);
    p.validate();
}

void parse_optimizer(const json& obj, opt::OptimizerConfig& c) {
    check_keys(obj,
               {"max_iters", "learning_rate", "gradient_method", "convergence_tol",
                "flat_iters_to_converge"},
               "optimizer");
    c.max_iters = get_int(obj, "max_iters", c.max_iters);
    c.learning_rate = get_num(obj, "learning_rate", c.learning_rate);
    c.convergence_tol = get_num(obj, "convergence_tol", c.convergence_tol);
    c.flat_iters_to_converge = get_int(obj, "flat_iters_to_converge", c.flat_iters_to_converge);
    const std::string method = get_str(obj, "gradient_method", "adjoint");
    if (method == "adjoint")
        c.gradient_method = opt::GradientMethod::Adjoint;
    else if (method == "finite_diff")
        c.gradient_method = opt::GradientMethod::FiniteDiff;
    else
        throw ContractViolation("config: field 'gradient_method' must be 'adjoint' or "
                                "'finite_diff'");
    require(c.max_iters >= 1, "config: field 'optimizer.max_iters' must be >= 1");
    require(c.learning_rate > 0.0, "config: field 'optimizer.learning_rate' must be > 0");
}

void parse_training(const json& obj, nn::TrainConfig& c) {
    check_keys(obj, {"epochs", "batch_size", "learning_rate"}, "training");
    c.epochs = get_int(obj, "epochs", c.epochs);
    c.batch_size = get_int(obj, "batch_size", c.batch_size);
    c.learning_rate = get_num(obj, "learning_rate", c.learning_rate);
    require(c.epochs >= 1, "config: field 'training.epochs' must be >= 1");
    require(c.batch_size >= 1, "config: field 'training.batch_size' must be >= 1");
    require(c.learning_rate > 0.0, "config: field 'training.learning_rate' must be > 0");
}

void parse_scenarios(const json& arr, std::vector<stab::ScenarioSpec>& out) {
    require(arr.is_array() && !arr.empty(), "config: field 'scenarios' must be a non-empty array");
    out.clear();
    for (const auto& obj : arr) {
        check_keys(obj, {"label", "r", "epsilon", "delta"}, "scenarios[]");
        stab::ScenarioSpec s;
        s.label = get_str(obj, "label", "scenario" + std::to_string(out.size() + 1));
        s.r = get_num(obj, "r", 200.0);
        s.epsilon = get_num(obj, "epsilon", 0.01);
        s.delta = get_num(obj, "delta", 0.0);
        require(s.r > 0.0, "config: field 'scenarios[].r' must be > 0");
        require(s.epsilon >= 0.0 && s.epsilon < 1.0,
                "config: field 'scenarios[].epsilon' must lie in [0, 1)");
        require(s.delta >= 0.0, "config: field 'scenarios[].delta' must be >= 0");
        out.push_back(std::move(s));
    }
}

void parse_attack(const json& obj, CliConfig& cfg) {
    check_keys(obj,
               {"alpha", "beta", "max_pgd_iters", "restarts", "goal", "escape_radius",
                "init_delta", "gradient_method", "min_separation"},
               "attack");
    adv::AttackConfig& a = cfg.attack;
    a.alpha = get_num(obj, "alpha", a.alpha);
    a.beta = get_num(obj, "beta", a.beta);
    a.max_pgd_iters = get_int(obj, "max_pgd_iters", a.max_pgd_iters);
    a.restarts = get_int(obj, "restarts", a.restarts);
    a.escape_radius = get_num(obj, "escape_radius", a.escape_radius);
    a.init_delta = get_num(obj, "init_delta", a.init_delta);
    const std::string goal = get_str(obj, "goal", "escape");
    if (goal == "escape")
        a.goal = adv::AttackGoal::EscapeBall;
    else if (goal == "divergence")
        a.goal = adv::AttackGoal::Divergence;
    else
        throw ContractViolation("config: field 'attack.goal' must be 'escape' or 'divergence'");
    const std::string method = get_str(obj, "gradient_method", "adjoint");
    if (method == "adjoint")
        a.gradient_method = adv::AttackGradientMethod::Adjoint;
    else if (method == "finite_diff")
        a.gradient_method = adv::AttackGradientMethod::FiniteDiff;
    else
        throw ContractViolation("config: field 'attack.gradient_method' must be 'adjoint' or "
                                "'finite_diff'");
    require(a.alpha > 0.0, "config: field 'attack.alpha' must be > 0");
    require(a.beta > 0.0, "config: field 'attack.beta' must be > 0");
    cfg.adversarial_min_separation = get_num(obj, "min_separation",
                                             cfg.adversarial_min_separation);
}

}  // namespace

CliConfig parse_config(const std::string& json_text) {
    json root;
    try {
        root = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw ContractViolation(std::string("config: invalid JSON: ") + e.what());
    }
    check_keys(root,
               {"schema_version", "seed", "threads", "lq", "initial_half_width", "data_samples",
                "generator", "optimizer", "training", "scenarios", "stability_trials",
                "adversarial_count", "attack", "architecture", "dataset", "controller"},
               "top level");
    CliConfig cfg;
    cfg.bench = lq::BenchmarkConfig::defaults();
    cfg.attack.alpha = cfg.bench.attack_alpha;
    cfg.attack.beta = cfg.bench.attack_beta;
    cfg.attack.max_pgd_iters = 200;
    cfg.attack.restarts = 20;
    cfg.attack.goal = adv::AttackGoal::EscapeBall;
    cfg.attack.escape_radius = 2000.0;
    cfg.attack.init_delta = 20.0;
    cfg.adversarial_min_separation = cfg.bench.adversarial_min_separation;

    cfg.schema_version = get_int(root, "schema_version", 1);
    require(cfg.schema_version == 1, "config: field 'schema_version' must be 1");
    if (root.contains("seed")) {
        require(root["seed"].is_number_unsigned() || root["seed"].is_number_integer(),
                "config: field 'seed' must be an integer");
        cfg.bench.seed = root["seed"].get<std::uint64_t>();
    }
    cfg.bench.threads = get_int(root, "threads", cfg.bench.threads);
    require(cfg.bench.threads >= 0, "config: field 'threads' must be >= 0");
    if (root.contains("lq")) parse_lq(root["lq"], cfg.bench.lq);
    cfg.bench.initial_half_width =
        get_num(root, "initial_half_width", cfg.bench.initial_half_width);
    require(cfg.bench.initial_half_width > 0.0,
            "config: field 'initial_half_width' must be > 0");
    cfg.bench.data_samples = get_int(root, "data_samples", cfg.bench.data_samples);
    require(cfg.bench.data_samples >= 1, "config: field 'data_samples' must be >= 1");
    const std::string gen = get_str(root, "generator", "pcd_lifted");
    if (gen == "pcd_lifted")
        cfg.bench.generator = lq::DataGenerator::PcdLifted;
    else if (gen == "pcd_ensemble")
        cfg.bench.generator = lq::DataGenerator::PcdEnsemble;
    else if (gen == "riccati_feedback")
        cfg.bench.generator = lq::DataGenerator::RiccatiFeedback;
    else
        throw ContractViolation("config: field 'generator' must be 'pcd_lifted', "
                                "'pcd_ensemble' or 'riccati_feedback'");
    if (root.contains("optimizer")) parse_optimizer(root["optimizer"], cfg.bench.optimizer);
    if (root.contains("training")) parse_training(root["training"], cfg.bench.training);
    if (root.contains("scenarios")) parse_scenarios(root["scenarios"], cfg.bench.scenarios);
    cfg.bench.stability_trials = get_int(root, "stability_trials", cfg.bench.stability_trials);
    require(cfg.bench.stability_trials >= 1,
            "config: field 'stability_trials' must be >= 1");
    cfg.bench.adversarial_count =
        get_int(root, "adversarial_count", cfg.bench.adversarial_count);
    require(cfg.bench.adversarial_count >= 0,
            "config: field 'adversarial_count' must be >= 0");
    if (root.contains("attack")) parse_attack(root["attack"], cfg);
    cfg.bench.attack_alpha = cfg.attack.alpha;
    cfg.bench.attack_beta = cfg.attack.beta;
    cfg.bench.adversarial_min_separation = cfg.adversarial_min_separation;
    cfg.architecture = get_str(root, "architecture", cfg.architecture);
    require(cfg.architecture == "nn1" || cfg.architecture == "nn2",
            "config: field 'architecture' must be 'nn1' or 'nn2'");
    cfg.dataset_path = get_str(root, "dataset", "");
    cfg.controller_path = get_str(root, "controller", "");
    return cfg;
}

std::string default_config_json() {
    const lq::BenchmarkConfig d = lq::BenchmarkConfig::defaults();
    json j;
    j["schema_version"] = 1;
    j["seed"] = d.seed;
    j["threads"] = d.threads;
    j["lq"] = {{"a1", d.lq.a1},       {"a2", d.lq.a2}, {"b1", d.lq.b1}, {"b2", d.lq.b2},
               {"q1", d.lq.q1},       {"q2", d.lq.q2}, {"r1", d.lq.r1}, {"r2", d.lq.r2},
               {"sigma", d.lq.sigma}, {"steps", d.lq.steps}, {"dt", d.lq.dt}};
    j["initial_half_width"] = d.initial_half_width;
    j["data_samples"] = d.data_samples;
    j["generator"] = "pcd_lifted";
    j["optimizer"] = {{"max_iters", d.optimizer.max_iters},
                      {"learning_rate", d.optimizer.learning_rate},
                      {"gradient_method", "adjoint"},
                      {"convergence_tol", d.optimizer.convergence_tol},
                      {"flat_iters_to_converge", d.optimizer.flat_iters_to_converge}};
    j["training"] = {{"epochs", d.training.epochs},
                     {"batch_size", d.training.batch_size},
                     {"learning_rate", d.training.learning_rate}};
    j["scenarios"] = json::array();
    for (const auto& s : d.scenarios)
        j["scenarios"].push_back(
            {{"label", s.label}, {"r", s.r}, {"epsilon", s.epsilon}, {"delta", s.delta}});
    j["stability_trials"] = d.stability_trials;
    j["adversarial_count"] = d.adversarial_count;
    j["attack"] = {{"alpha", d.attack_alpha},
                   {"beta", d.attack_beta},
                   {"max_pgd_iters", 200},
                   {"restarts", 20},
                   {"goal", "escape"},
                   {"escape_radius", 2000.0},
                   {"init_delta", 20.0},
                   {"gradient_method", "adjoint"},
                   {"min_separation", d.adversarial_min_separation}};
    j["architecture"] = "nn1";
    return j.dump(2);
}

// --- dataset CSV -------------------------------------------------------------

void write_dataset_csv(const std::string& path, const nn::Dataset& records,
                       const std::vector<retrain::Provenance>* provenance) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path);
    os << "record,x,mean_x,noise,u,mean_u";
    if (provenance) os << ",provenance";
    os << "\n";
    char buf[64];
    for (std::size_t i = 0; i < records.size(); ++i) {
        require(records[i].input.size() == 3 && records[i].target.size() == 2,
                "write_dataset_csv: records must be 3-input / 2-target");
        os << i;
        auto put = [&](double v) {
            std::snprintf(buf, sizeof(buf), "%.17g", v);
            os << ',' << buf;
        };
        for (int c = 0; c < 3; ++c) put(records[i].input[c]);
        for (int c = 0; c < 2; ++c) put(records[i].target[c]);
        if (provenance)
            os << ','
               << ((*provenance)[i] == retrain::Provenance::Base ? "base" : "adversarial");
        os << "\n";
    }
}

nn::Dataset read_dataset_csv(const std::string& path,
                             std::vector<retrain::Provenance>* provenance) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot read " + path);
    std::string line;
    require(static_cast<bool>(std::getline(is, line)), "read_dataset_csv: empty file " + path);
    const bool has_provenance = line.find("provenance") != std::string::npos;
    nn::Dataset records;
    if (provenance) provenance->clear();
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        std::vector<std::string> cells;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        require(cells.size() == (has_provenance ? 7u : 6u),
                "read_dataset_csv: malformed row in " + path);
        nn::Record rec;
        rec.input = Vec(3);
        rec.target = Vec(2);
        for (int c = 0; c < 3; ++c) rec.input[c] = std::stod(cells[1 + c]);
        for (int c = 0; c < 2; ++c) rec.target[c] = std::stod(cells[4 + c]);
        records.push_back(std::move(rec));
        if (provenance)
            provenance->push_back(has_provenance && cells[6] == "adversarial"
                                      ? retrain::Provenance::Adversarial
                                      : retrain::Provenance::Base);
    }
    return records;
}

}  // namespace mftc::io
