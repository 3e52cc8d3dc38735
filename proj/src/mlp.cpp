#include "mftc/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

namespace mftc::nn {

std::string activation_name(Activation a) {
    return a == Activation::Linear ? "linear" : "tanh";
}

Activation activation_from_name(const std::string& name) {
    if (name == "linear" || name == "lin") return Activation::Linear;
    if (name == "tanh") return Activation::Tanh;
    throw ContractViolation("unknown activation: " + name);
}

namespace {

double act_value(Activation a, double v) {
    return a == Activation::Linear ? v : std::tanh(v);
}

double act_derivative(Activation a, double pre) {
    if (a == Activation::Linear) return 1.0;
    const double t = std::tanh(pre);
    return 1.0 - t * t;
}

Vec apply_activation(Activation a, const Vec& pre) {
    if (a == Activation::Linear) return pre;
    return pre.array().tanh().matrix();
}

}  // namespace

int MlpParams::parameter_count() const {
    int n = 0;
    for (const Layer& l : layers) n += static_cast<int>(l.W.size() + l.b.size());
    return n;
}

int MlpParams::total_neurons() const {
    int n = 0;
    for (const Layer& l : layers) n += static_cast<int>(l.W.rows());
    return n;
}

void MlpParams::validate() const {
    require(!layers.empty(), "MlpParams: no layers");
    for (std::size_t j = 0; j < layers.size(); ++j) {
        const Layer& l = layers[j];
        require(l.W.rows() == l.b.size(), "MlpParams: W/b shape mismatch");
        require(l.W.allFinite() && l.b.allFinite(), "MlpParams: non-finite parameters");
        if (j + 1 < layers.size())
            require(layers[j + 1].W.cols() == l.W.rows(), "MlpParams: layer dims do not chain");
    }
    if (input_scaling) {
        require(input_scaling->offset.size() == input_dim() &&
                    input_scaling->scale.size() == input_dim(),
                "MlpParams: input scaling dimension mismatch");
    }
}

MlpParams make_mlp(const std::vector<LayerSpec>& specs, std::uint64_t seed) {
    require(!specs.empty(), "make_mlp: no layers");
    MlpParams params;
    auto rng = keyed_rng(seed, 0x6d6c70 /* "mlp" */);
    for (std::size_t j = 0; j < specs.size(); ++j) {
        const LayerSpec& s = specs[j];
        require(s.in_dim >= 1 && s.out_dim >= 1, "make_mlp: dims must be >= 1");
        if (j > 0)
            require(s.in_dim == specs[j - 1].out_dim, "make_mlp: layer dims do not chain");
        const double limit = std::sqrt(6.0 / (s.in_dim + s.out_dim));
        std::uniform_real_distribution<double> uniform(-limit, limit);
        Layer layer;
        layer.W = Mat(s.out_dim, s.in_dim);
        for (int r = 0; r < s.out_dim; ++r)
            for (int c = 0; c < s.in_dim; ++c) layer.W(r, c) = uniform(rng);
        layer.b = Vec::Zero(s.out_dim);
        layer.activation = s.activation;
        params.layers.push_back(std::move(layer));
    }
    return params;
}

Vec forward(const MlpParams& params, const Vec& z) {
    require(z.size() == params.input_dim(), "forward: input dimension mismatch");
    Vec a = z;
    if (params.input_scaling)
        a = (a - params.input_scaling->offset).cwiseQuotient(params.input_scaling->scale);
    for (const Layer& l : params.layers) {
        a = apply_activation(l.activation, l.W * a + l.b);
    }
    return a;
}

ForwardCache forward_cached(const MlpParams& params, const Vec& z) {
    require(z.size() == params.input_dim(), "forward_cached: input dimension mismatch");
    ForwardCache cache;
    Vec a = z;
    if (params.input_scaling)
        a = (a - params.input_scaling->offset).cwiseQuotient(params.input_scaling->scale);
    cache.input = a;
    for (const Layer& l : params.layers) {
        Vec pre = l.W * a + l.b;
        a = apply_activation(l.activation, pre);
        cache.pre.push_back(std::move(pre));
        cache.post.push_back(a);
    }
    return cache;
}

Gradients backward(const MlpParams& params, const ForwardCache& cache, const Vec& upstream) {
    const int n_layers = static_cast<int>(params.layers.size());
    require(upstream.size() == params.output_dim(), "backward: upstream dimension mismatch");
    Gradients grads;
    grads.dW.resize(n_layers);
    grads.db.resize(n_layers);
    Vec delta = upstream;
    for (int j = n_layers - 1; j >= 0; --j) {
        const Layer& l = params.layers[j];
        Vec dpre(delta.size());
        for (int i = 0; i < delta.size(); ++i)
            dpre[i] = delta[i] * act_derivative(l.activation, cache.pre[j][i]);
        const Vec& in = j == 0 ? cache.input : cache.post[j - 1];
        grads.dW[j] = dpre * in.transpose();
        grads.db[j] = dpre;
        delta = l.W.transpose() * dpre;
    }
    if (params.input_scaling)
        delta = delta.cwiseQuotient(params.input_scaling->scale);
    grads.dinput = delta;
    return grads;
}

Mat input_jacobian(const MlpParams& params, const Vec& z) {
    const ForwardCache cache = forward_cached(params, z);
    const int out = params.output_dim();
    Mat jac(out, params.input_dim());
    for (int r = 0; r < out; ++r) {
        Vec e = Vec::Zero(out);
        e[r] = 1.0;
        jac.row(r) = backward(params, cache, e).dinput.transpose();
    }
    return jac;
}

InputScaling standardize_inputs(const Dataset& dataset) {
    require(!dataset.empty(), "standardize_inputs: empty dataset");
    const int d = static_cast<int>(dataset.front().input.size());
    Vec mean = Vec::Zero(d), var = Vec::Zero(d);
    for (const Record& rec : dataset) mean += rec.input;
    mean /= static_cast<double>(dataset.size());
    for (const Record& rec : dataset)
        var += (rec.input - mean).cwiseProduct(rec.input - mean);
    var /= static_cast<double>(dataset.size());
    InputScaling s;
    s.offset = mean;
    // Guard against constant columns (e.g. a zeroed noise coordinate).
    s.scale = (var.cwiseSqrt().array() + 1e-9).matrix();
    return s;
}

LossValue supervised_loss(const MlpParams& params, const Dataset& dataset) {
    require(!dataset.empty(), "supervised_loss: empty dataset");
    LossValue loss;
    for (const Record& rec : dataset) {
        const Vec out = forward(params, rec.input);
        require(out.size() == rec.target.size(), "supervised_loss: target dimension mismatch");
        const double sq = (out - rec.target).squaredNorm();
        loss.mse += sq;
        loss.mean_norm += std::sqrt(sq);
    }
    loss.mse /= dataset.size();
    loss.mean_norm /= dataset.size();
    return loss;
}

TrainResult train(const MlpParams& init, const Dataset& dataset, const TrainConfig& config) {
    require(!dataset.empty(), "train: empty dataset");
    require(config.batch_size >= 1 &&
                config.batch_size <= static_cast<int>(dataset.size()),
            "train: batch_size must be in [1, dataset size]");
    require(config.learning_rate > 0.0, "train: learning_rate must be positive");
    init.validate();
    require(init.input_dim() == dataset.front().input.size(),
            "train: architecture input dim does not match dataset");
    if (!config.record_weights.empty())
        require(config.record_weights.size() == dataset.size(),
                "train: record_weights size mismatch");

    TrainResult result;
    result.params = init;
    MlpParams& params = result.params;
    const int n_layers = static_cast<int>(params.layers.size());

    std::vector<Mat> mW(n_layers), vW(n_layers);
    std::vector<Vec> mb(n_layers), vb(n_layers);
    for (int j = 0; j < n_layers; ++j) {
        mW[j] = Mat::Zero(params.layers[j].W.rows(), params.layers[j].W.cols());
        vW[j] = mW[j];
        mb[j] = Vec::Zero(params.layers[j].b.size());
        vb[j] = mb[j];
    }

    std::vector<int> order(dataset.size());
    std::iota(order.begin(), order.end(), 0);
    auto rng = keyed_rng(config.shuffle_seed, 0x747261696e /* "train" */);

    const double eps = 1e-8;
    long step_count = 0;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(config.batch_size)) {
            const std::size_t end =
                std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
            std::vector<Mat> gW(n_layers);
            std::vector<Vec> gb(n_layers);
            for (int j = 0; j < n_layers; ++j) {
                gW[j] = Mat::Zero(params.layers[j].W.rows(), params.layers[j].W.cols());
                gb[j] = Vec::Zero(params.layers[j].b.size());
            }
            double batch_weight = 0.0;
            for (std::size_t s = start; s < end; ++s) {
                const Record& rec = dataset[order[s]];
                const double w =
                    config.record_weights.empty() ? 1.0 : config.record_weights[order[s]];
                const ForwardCache cache = forward_cached(params, rec.input);
                const Vec residual = cache.post.back() - rec.target;
                const Gradients g = backward(params, cache, 2.0 * w * residual);
                for (int j = 0; j < n_layers; ++j) {
                    gW[j] += g.dW[j];
                    gb[j] += g.db[j];
                }
                batch_weight += w;
            }
            if (batch_weight <= 0.0) continue;
            bool finite = true;
            for (int j = 0; j < n_layers; ++j) {
                gW[j] /= batch_weight;
                gb[j] /= batch_weight;
                finite = finite && gW[j].allFinite() && gb[j].allFinite();
            }
            if (!finite)
                throw NonConvergence("train: non-finite gradient in batch starting at record " +
                                     std::to_string(start) + " of epoch " +
                                     std::to_string(epoch));
            ++step_count;
            const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(step_count));
            const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(step_count));
            for (int j = 0; j < n_layers; ++j) {
                mW[j] = config.beta1 * mW[j] + (1.0 - config.beta1) * gW[j];
                vW[j] = config.beta2 * vW[j] +
                        (1.0 - config.beta2) * gW[j].cwiseProduct(gW[j]);
                mb[j] = config.beta1 * mb[j] + (1.0 - config.beta1) * gb[j];
                vb[j] = config.beta2 * vb[j] + (1.0 - config.beta2) * gb[j].cwiseProduct(gb[j]);
                params.layers[j].W -=
                    config.learning_rate *
                    (mW[j] / bc1).cwiseQuotient(((vW[j] / bc2).cwiseSqrt().array() + eps).matrix());
                params.layers[j].b -=
                    config.learning_rate *
                    (mb[j] / bc1).cwiseQuotient(((vb[j] / bc2).cwiseSqrt().array() + eps).matrix());
            }
        }
        const LossValue loss = supervised_loss(params, dataset);
        if (!std::isfinite(loss.mse))
            throw NonConvergence("train: non-finite loss after epoch " + std::to_string(epoch));
        result.epoch_loss.push_back(loss.mse);
    }
    return result;
}

// --- controller file format --------------------------------------------------

void save_mlp(std::ostream& os, const MlpParams& params) {
    params.validate();
    char buf[64];
    auto put = [&](double v) {
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        os << buf;
    };
    os << "MFTC-CONTROLLER 1\n";
    os << "layers " << params.layers.size() << "\n";
    for (const Layer& l : params.layers) {
        os << "layer " << activation_name(l.activation) << ' ' << l.W.cols() << ' ' << l.W.rows()
           << "\n";
        os << "W";
        for (int r = 0; r < l.W.rows(); ++r)
            for (int c = 0; c < l.W.cols(); ++c) {
                os << ' ';
                put(l.W(r, c));
            }
        os << "\nb";
        for (int i = 0; i < l.b.size(); ++i) {
            os << ' ';
            put(l.b[i]);
        }
        os << "\n";
    }
    if (params.input_scaling) {
        os << "input_scaling\noffset";
        for (int i = 0; i < params.input_scaling->offset.size(); ++i) {
            os << ' ';
            put(params.input_scaling->offset[i]);
        }
        os << "\nscale";
        for (int i = 0; i < params.input_scaling->scale.size(); ++i) {
            os << ' ';
            put(params.input_scaling->scale[i]);
        }
        os << "\n";
    }
}

MlpParams load_mlp(std::istream& is) {
    std::string tag;
    int version = 0;
    is >> tag >> version;
    require(is.good() && tag == "MFTC-CONTROLLER", "load_mlp: bad file tag");
    require(version == 1, "load_mlp: unsupported version");
    std::string key;
    int n_layers = 0;
    is >> key >> n_layers;
    require(key == "layers" && n_layers >= 1, "load_mlp: bad layer count");
    MlpParams params;
    for (int j = 0; j < n_layers; ++j) {
        std::string act;
        int in_dim = 0, out_dim = 0;
        is >> key >> act >> in_dim >> out_dim;
        require(is.good() && key == "layer" && in_dim >= 1 && out_dim >= 1,
                "load_mlp: bad layer header");
        Layer layer;
        layer.activation = activation_from_name(act);
        layer.W = Mat(out_dim, in_dim);
        is >> key;
        require(key == "W", "load_mlp: expected W block");
        for (int r = 0; r < out_dim; ++r)
            for (int c = 0; c < in_dim; ++c) is >> layer.W(r, c);
        is >> key;
        require(key == "b", "load_mlp: expected b block");
        layer.b = Vec(out_dim);
        for (int i = 0; i < out_dim; ++i) is >> layer.b[i];
        require(is.good(), "load_mlp: truncated layer data");
        params.layers.push_back(std::move(layer));
    }
    if (is >> key && key == "input_scaling") {
        InputScaling scaling;
        const int d = params.input_dim();
        is >> key;
        require(key == "offset", "load_mlp: expected offset block");
        scaling.offset = Vec(d);
        for (int i = 0; i < d; ++i) is >> scaling.offset[i];
        is >> key;
        require(key == "scale", "load_mlp: expected scale block");
        scaling.scale = Vec(d);
        for (int i = 0; i < d; ++i) is >> scaling.scale[i];
        require(is.good(), "load_mlp: truncated scaling data");
        params.input_scaling = std::move(scaling);
    }
    params.validate();
    return params;
}

void save_mlp_file(const std::string& path, const MlpParams& params) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    save_mlp(os, params);
}

MlpParams load_mlp_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open for reading: " + path);
    return load_mlp(is);
}

}  // namespace mftc::nn
