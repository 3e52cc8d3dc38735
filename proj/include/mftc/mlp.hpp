#pragma once

// From-scratch multilayer perceptron: layer composition, exact reverse-mode
// derivatives (parameters and input), supervised training, and a
// self-describing text file format.

#include "mftc/common.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>

namespace mftc::nn {

enum class Activation { Linear, Tanh };

std::string activation_name(Activation a);
Activation activation_from_name(const std::string& name);

struct LayerSpec {
    int in_dim = 1;
    int out_dim = 1;
    Activation activation = Activation::Linear;
};

struct Layer {
    Mat W;  // out_dim x in_dim
    Vec b;  // out_dim
    Activation activation = Activation::Linear;
};

/// Optional affine input scaling stored with the parameters so a saved
/// controller is self-contained: the network consumes (z - offset) / scale.
struct InputScaling {
    Vec offset;
    Vec scale;
};

struct MlpParams {
    std::vector<Layer> layers;
    std::optional<InputScaling> input_scaling;

    int input_dim() const { return layers.empty() ? 0 : static_cast<int>(layers.front().W.cols()); }
    int output_dim() const { return layers.empty() ? 0 : static_cast<int>(layers.back().W.rows()); }
    int parameter_count() const;
    /// Sum of layer output widths ("total neurons" in the architecture sense).
    int total_neurons() const;
    void validate() const;
};

/// Fan-based symmetric uniform weight init, zero biases.
MlpParams make_mlp(const std::vector<LayerSpec>& layers, std::uint64_t seed);

Vec forward(const MlpParams& params, const Vec& z);

struct ForwardCache {
    Vec input;                      // after input scaling
    std::vector<Vec> pre;           // pre-activations per layer
    std::vector<Vec> post;          // activations per layer
};

ForwardCache forward_cached(const MlpParams& params, const Vec& z);

struct Gradients {
    std::vector<Mat> dW;
    std::vector<Vec> db;
    Vec dinput;  // with respect to the raw (unscaled) input z
};

/// Reverse-mode derivatives of upstream^T * output with respect to every
/// parameter and the input.
Gradients backward(const MlpParams& params, const ForwardCache& cache, const Vec& upstream);

/// d(output)/d(z) as a full Jacobian (output_dim x input_dim).
Mat input_jacobian(const MlpParams& params, const Vec& z);

struct Record {
    Vec input;
    Vec target;
};
using Dataset = std::vector<Record>;

struct LossValue {
    double mse = 0.0;         // mean squared Euclidean distance (training objective)
    double mean_norm = 0.0;   // mean unsquared Euclidean distance (reported)
};

LossValue supervised_loss(const MlpParams& params, const Dataset& dataset);

/// Componentwise mean/standard-deviation scaling fitted on the dataset inputs.
InputScaling standardize_inputs(const Dataset& dataset);

struct TrainConfig {
    int epochs = 200;
    int batch_size = 64;
    double learning_rate = 1e-3;
    std::uint64_t shuffle_seed = 0;
    // Adam moment decay rates.
    double beta1 = 0.9;
    double beta2 = 0.999;
    /// Optional per-record weights (e.g. up-weighting adversarial records).
    std::vector<double> record_weights;
};

struct TrainResult {
    MlpParams params;
    std::vector<double> epoch_loss;  // MSE after each epoch
};

/// Minibatch Adam on the squared-norm loss. Aborts with NonConvergence naming
/// the offending batch if the loss turns non-finite.
TrainResult train(const MlpParams& init, const Dataset& dataset, const TrainConfig& config);

// --- controller file format --------------------------------------------------
// Versioned text document; round-trips bit-exactly through %.17g.

void save_mlp(std::ostream& os, const MlpParams& params);
MlpParams load_mlp(std::istream& is);
void save_mlp_file(const std::string& path, const MlpParams& params);
MlpParams load_mlp_file(const std::string& path);

}  // namespace mftc::nn
