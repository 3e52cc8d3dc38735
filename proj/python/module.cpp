// Python bindings for the mean-field control toolkit. Exposes the LQ
// benchmark parameters, the Riccati oracle, dataset generation, controller
// training/IO, stability estimation, the PGD attack, and the full pipeline.

#include "mftc/io.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

namespace py = pybind11;
using namespace mftc;

namespace {

nn::MlpParams train_controller(const nn::Dataset& dataset, const std::string& architecture,
                               const nn::TrainConfig& config, std::uint64_t seed) {
    const auto arch =
        architecture == "nn2" ? lq::nn2_architecture() : lq::nn1_architecture();
    nn::TrainConfig cfg = config;
    cfg.shuffle_seed = mix_keys(seed, 0x6e6e31);
    nn::MlpParams init = nn::make_mlp(arch, cfg.shuffle_seed);
    init.input_scaling = nn::standardize_inputs(dataset);
    return nn::train(init, dataset, cfg).params;
}

stab::StabilityReport estimate(const lq::LqParams& params, const nn::MlpParams& controller,
                               double delta, double r, int trials, std::uint64_t seed,
                               double initial_half_width) {
    const core::ProblemSpec spec = lq::make_spec(params, initial_half_width);
    stab::StabilityQuery query;
    query.r = r;
    query.trials = trials;
    query.seed = seed;
    return stab::estimate_containment(spec, params.grid(), controller, delta, query);
}

adv::AttackResult attack(const lq::LqParams& params, const nn::MlpParams& controller,
                         const adv::AttackConfig& config, double initial_half_width) {
    const core::ProblemSpec spec = lq::make_spec(params, initial_half_width);
    return adv::pgd_attack(spec, params.grid(), controller, config);
}

}  // namespace

PYBIND11_MODULE(_mftc, m) {
    m.doc() = "Mean-field control experiments: LQ benchmark, training, stability, attacks.";

    py::register_exception<ContractViolation>(m, "ContractViolation");
    py::register_exception<NonConvergence>(m, "NonConvergence");

    py::class_<lq::LqParams>(m, "LqParams")
        .def(py::init<>())
        .def_readwrite("a1", &lq::LqParams::a1)
        .def_readwrite("a2", &lq::LqParams::a2)
        .def_readwrite("b1", &lq::LqParams::b1)
        .def_readwrite("b2", &lq::LqParams::b2)
        .def_readwrite("q1", &lq::LqParams::q1)
        .def_readwrite("q2", &lq::LqParams::q2)
        .def_readwrite("r1", &lq::LqParams::r1)
        .def_readwrite("r2", &lq::LqParams::r2)
        .def_readwrite("sigma", &lq::LqParams::sigma)
        .def_readwrite("steps", &lq::LqParams::steps)
        .def_readwrite("dt", &lq::LqParams::dt);

    py::class_<lq::RiccatiSolution>(m, "RiccatiSolution")
        .def_readonly("value_mean", &lq::RiccatiSolution::value_mean)
        .def_readonly("gain_mean", &lq::RiccatiSolution::gain_mean)
        .def_readonly("value_dev", &lq::RiccatiSolution::value_dev)
        .def_readonly("gain_dev", &lq::RiccatiSolution::gain_dev)
        .def_readonly("noise_cost", &lq::RiccatiSolution::noise_cost)
        .def("to_json", &lq::RiccatiSolution::to_json);
    m.def("riccati_solve", &lq::riccati_solve);
    m.def("riccati_optimal_cost", &lq::riccati_optimal_cost);

    py::class_<nn::TrainConfig>(m, "TrainConfig")
        .def(py::init<>())
        .def_readwrite("epochs", &nn::TrainConfig::epochs)
        .def_readwrite("batch_size", &nn::TrainConfig::batch_size)
        .def_readwrite("learning_rate", &nn::TrainConfig::learning_rate);

    py::class_<opt::OptimizerConfig>(m, "OptimizerConfig")
        .def(py::init<>())
        .def_readwrite("max_iters", &opt::OptimizerConfig::max_iters)
        .def_readwrite("learning_rate", &opt::OptimizerConfig::learning_rate)
        .def_readwrite("convergence_tol", &opt::OptimizerConfig::convergence_tol)
        .def_readwrite("threads", &opt::OptimizerConfig::threads);

    py::class_<nn::Record>(m, "Record")
        .def(py::init<>())
        .def_readwrite("input", &nn::Record::input)
        .def_readwrite("target", &nn::Record::target);

    py::class_<nn::MlpParams>(m, "Controller")
        .def("input_dim", &nn::MlpParams::input_dim)
        .def("output_dim", &nn::MlpParams::output_dim)
        .def("parameter_count", &nn::MlpParams::parameter_count)
        .def("total_neurons", &nn::MlpParams::total_neurons)
        .def("__call__",
             [](const nn::MlpParams& p, const Vec& z) { return nn::forward(p, z); });
    m.def("save_controller", &nn::save_mlp_file);
    m.def("load_controller", &nn::load_mlp_file);
    m.def("train_controller", &train_controller, py::arg("dataset"),
          py::arg("architecture") = "nn1", py::arg("config") = nn::TrainConfig{},
          py::arg("seed") = 1);

    py::class_<lq::BenchmarkConfig>(m, "BenchmarkConfig")
        .def(py::init<>())
        .def_static("defaults", &lq::BenchmarkConfig::defaults)
        .def_static("smoke", &lq::BenchmarkConfig::smoke)
        .def_readwrite("lq", &lq::BenchmarkConfig::lq)
        .def_readwrite("initial_half_width", &lq::BenchmarkConfig::initial_half_width)
        .def_readwrite("data_samples", &lq::BenchmarkConfig::data_samples)
        .def_readwrite("optimizer", &lq::BenchmarkConfig::optimizer)
        .def_readwrite("training", &lq::BenchmarkConfig::training)
        .def_readwrite("stability_trials", &lq::BenchmarkConfig::stability_trials)
        .def_readwrite("adversarial_count", &lq::BenchmarkConfig::adversarial_count)
        .def_readwrite("seed", &lq::BenchmarkConfig::seed)
        .def_readwrite("threads", &lq::BenchmarkConfig::threads);

    py::class_<lq::GeneratedData>(m, "GeneratedData")
        .def_readonly("records", &lq::GeneratedData::records)
        .def_readonly("achieved_cost", &lq::GeneratedData::achieved_cost)
        .def_readonly("oracle_cost", &lq::GeneratedData::oracle_cost);
    m.def("generate_dataset", &lq::generate_dataset);

    py::class_<stab::StabilityReport>(m, "StabilityReport")
        .def_readonly("delta", &stab::StabilityReport::delta)
        .def_readonly("p_hat", &stab::StabilityReport::p_hat)
        .def_readonly("ci_lo", &stab::StabilityReport::ci_lo)
        .def_readonly("ci_hi", &stab::StabilityReport::ci_hi)
        .def_readonly("trials", &stab::StabilityReport::trials)
        .def("to_json", &stab::StabilityReport::to_json);
    m.def("estimate_containment", &estimate, py::arg("params"), py::arg("controller"),
          py::arg("delta"), py::arg("r") = 200.0, py::arg("trials") = 200,
          py::arg("seed") = 1, py::arg("initial_half_width") = 50.0);

    py::enum_<adv::AttackGoal>(m, "AttackGoal")
        .value("Divergence", adv::AttackGoal::Divergence)
        .value("EscapeBall", adv::AttackGoal::EscapeBall);

    py::class_<adv::AttackConfig>(m, "AttackConfig")
        .def(py::init<>())
        .def_readwrite("alpha", &adv::AttackConfig::alpha)
        .def_readwrite("beta", &adv::AttackConfig::beta)
        .def_readwrite("max_pgd_iters", &adv::AttackConfig::max_pgd_iters)
        .def_readwrite("restarts", &adv::AttackConfig::restarts)
        .def_readwrite("seed", &adv::AttackConfig::seed)
        .def_readwrite("init_delta", &adv::AttackConfig::init_delta)
        .def_readwrite("goal", &adv::AttackConfig::goal)
        .def_readwrite("escape_radius", &adv::AttackConfig::escape_radius);

    py::class_<adv::AttackResult>(m, "AttackResult")
        .def_readonly("found", &adv::AttackResult::found)
        .def_readonly("adversarial", &adv::AttackResult::adversarial)
        .def_readonly("restart_index", &adv::AttackResult::restart_index)
        .def_readonly("seed", &adv::AttackResult::seed)
        .def("to_json", &adv::AttackResult::to_json);
    m.def("pgd_attack", &attack, py::arg("params"), py::arg("controller"),
          py::arg("config"), py::arg("initial_half_width") = 50.0);

    m.def(
        "run_benchmark",
        [](const lq::BenchmarkConfig& config, const std::string& out_dir) {
            return lq::run_benchmark(config, out_dir).summary_json;
        },
        py::arg("config"), py::arg("out_dir"),
        "Run the full pipeline, write artifacts to out_dir, return the summary JSON.");
}
