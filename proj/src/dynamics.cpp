#include "mftc/dynamics.hpp"

#include <cmath>
#include <cstring>
#include <istream>
#include <limits>
#include <ostream>

namespace mftc::core {

namespace {
constexpr double kSentinel = std::numeric_limits<double>::quiet_NaN();
}

NoiseTensor sample_noise(std::uint64_t seed, int samples, int steps, int dim, double dt) {
    require(samples >= 0 && steps >= 0 && dim >= 1, "sample_noise: bad extents");
    require(dt > 0.0, "sample_noise: dt must be positive");
    NoiseTensor noise;
    noise.seed = seed;
    noise.increments.resize(samples);
    const double stddev = std::sqrt(dt);
    for (int i = 0; i < samples; ++i) {
        auto rng = keyed_rng(seed, static_cast<std::uint64_t>(i));
        noise.increments[i].reserve(steps);
        for (int k = 0; k < steps; ++k) {
            noise.increments[i].push_back(gaussian_vector(rng, dim, stddev));
        }
    }
    return noise;
}

ControlBatch ControlBatch::zeros(int samples, int steps, int control_dim) {
    ControlBatch batch;
    batch.controls.assign(samples, std::vector<Vec>(steps, Vec::Zero(control_dim)));
    batch.mean_controls.assign(steps, Vec::Zero(control_dim));
    return batch;
}

void ControlBatch::recompute_means() {
    const int n = samples();
    const int nk = steps();
    mean_controls.assign(nk, Vec());
    for (int k = 0; k < nk; ++k) {
        Vec m = Vec::Zero(controls[0][k].size());
        for (int i = 0; i < n; ++i) m += controls[i][k];
        mean_controls[k] = m / std::max(1, n);
    }
}

bool Ensemble::any_diverged() const {
    for (int s : diverged_at)
        if (s >= 0) return true;
    return false;
}

Vec step(const ProblemSpec& spec, double t, double dt, const Vec& x, const Vec& mean_x,
         const Vec& u, const Vec& mean_u, const Vec& noise) {
    require(x.size() == spec.state_dim && mean_x.size() == spec.state_dim,
            "step: state dimension mismatch");
    require(u.size() == spec.control_dim && mean_u.size() == spec.control_dim,
            "step: control dimension mismatch");
    require(noise.size() == spec.state_dim, "step: noise dimension mismatch");
    const Vec f = spec.drift(t, x, mean_x, u, mean_u);
    require(f.size() == spec.state_dim, "step: drift returned wrong dimension");
    if (spec.mode == DiscretizationMode::Euler) {
        return x + f * dt + spec.noise_scale * noise;
    }
    return f + spec.noise_scale * noise;
}

namespace {

Vec step_with_dt(const ProblemSpec& spec, double t, double dt, const Vec& x,
                 const Vec& mean_x, const Vec& u, const Vec& mean_u, const Vec& noise) {
    const Vec f = spec.drift(t, x, mean_x, u, mean_u);
    if (spec.mode == DiscretizationMode::Euler) {
        return x + f * dt + spec.noise_scale * noise;
    }
    return f + spec.noise_scale * noise;
}

}  // namespace

Ensemble rollout_ensemble(const ProblemSpec& spec, const TimeGrid& grid,
                          const std::vector<Vec>& initial_states,
                          const ControlBatch& controls, const NoiseTensor& noise) {
    const int n = static_cast<int>(initial_states.size());
    require(n > 0, "rollout_ensemble: empty ensemble");
    require(controls.samples() == n && noise.samples() == n,
            "rollout_ensemble: sample extents disagree");
    require(controls.steps() == grid.steps && noise.steps() == grid.steps,
            "rollout_ensemble: step extents disagree");
    for (const Vec& x0 : initial_states)
        require(x0.size() == spec.state_dim && x0.allFinite(),
                "rollout_ensemble: initial state invalid");

    const double dt = grid.dt();
    Ensemble ens;
    ens.states.assign(n, std::vector<Vec>(grid.steps + 1));
    ens.mean_states.assign(grid.steps + 1, Vec::Zero(spec.state_dim));
    ens.diverged_at.assign(n, -1);
    for (int i = 0; i < n; ++i) ens.states[i][0] = initial_states[i];

    const Vec sentinel = Vec::Constant(spec.state_dim, kSentinel);
    for (int k = 0; k <= grid.steps; ++k) {
        // Empirical mean over live trajectories before stepping.
        Vec mean = Vec::Zero(spec.state_dim);
        int live = 0;
        for (int i = 0; i < n; ++i) {
            if (ens.diverged_at[i] >= 0 && ens.diverged_at[i] <= k) continue;
            mean += ens.states[i][k];
            ++live;
        }
        if (live > 0) mean /= live;
        ens.mean_states[k] = mean;
        if (k == grid.steps) break;

        Vec mean_u = Vec::Zero(spec.control_dim);
        {
            int live_u = 0;
            for (int i = 0; i < n; ++i) {
                if (ens.diverged_at[i] >= 0 && ens.diverged_at[i] <= k) continue;
                mean_u += controls.controls[i][k];
                ++live_u;
            }
            if (live_u > 0) mean_u /= live_u;
        }

        for (int i = 0; i < n; ++i) {
            if (ens.diverged_at[i] >= 0 && ens.diverged_at[i] <= k) {
                ens.states[i][k + 1] = sentinel;
                continue;
            }
            Vec next = step_with_dt(spec, grid.t(k), dt, ens.states[i][k], mean,
                                    controls.controls[i][k], mean_u, noise.increments[i][k]);
            if (is_diverged_state(next)) {
                ens.diverged_at[i] = k + 1;
                ens.states[i][k + 1] = sentinel;
            } else {
                ens.states[i][k + 1] = next;
            }
        }
    }
    return ens;
}

double empirical_cost(const ProblemSpec& spec, const TimeGrid& grid,
                      const Ensemble& ensemble, const ControlBatch& controls) {
    const int n = ensemble.samples();
    require(n > 0 && controls.samples() == n, "empirical_cost: extents disagree");
    if (ensemble.any_diverged()) return kSaturatedCost;
    // Direct mode folds the dt factor into the running cost.
    const double dt_factor = spec.mode == DiscretizationMode::Euler ? grid.dt() : 1.0;
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        double acc = 0.0;
        for (int k = 0; k < grid.steps; ++k) {
            acc += spec.running_cost(grid.t(k), ensemble.states[i][k], ensemble.mean_states[k],
                                     controls.controls[i][k], controls.mean_controls[k]) *
                   dt_factor;
        }
        acc += spec.terminal_cost(ensemble.states[i][grid.steps], ensemble.mean_states[grid.steps]);
        total += acc;
    }
    total /= n;
    if (!std::isfinite(total)) return kSaturatedCost;
    return total;
}

std::vector<Vec> propagate_mean(const ProblemSpec& spec, const TimeGrid& grid,
                                const Vec& mean_x0, const std::vector<Vec>& mean_controls) {
    require(static_cast<int>(mean_controls.size()) == grid.steps,
            "propagate_mean: control extent disagrees with grid");
    const Vec zero_noise = Vec::Zero(spec.state_dim);
    std::vector<Vec> means(grid.steps + 1);
    means[0] = mean_x0;
    for (int k = 0; k < grid.steps; ++k) {
        means[k + 1] = step_with_dt(spec, grid.t(k), grid.dt(), means[k], means[k],
                                    mean_controls[k], mean_controls[k], zero_noise);
    }
    return means;
}

// --- numeric derivatives -----------------------------------------------------

namespace {

constexpr double kFdStepScale = 1e-6;

template <typename Eval>
Mat central_jacobian(const Eval& eval, const Vec& at, int out_dim) {
    const int n = static_cast<int>(at.size());
    Mat jac(out_dim, n);
    for (int j = 0; j < n; ++j) {
        const double h = kFdStepScale * (1.0 + std::abs(at[j]));
        Vec plus = at, minus = at;
        plus[j] += h;
        minus[j] -= h;
        jac.col(j) = (eval(plus) - eval(minus)) / (2.0 * h);
    }
    return jac;
}

template <typename Eval>
Vec central_gradient(const Eval& eval, const Vec& at) {
    const int n = static_cast<int>(at.size());
    Vec grad(n);
    for (int j = 0; j < n; ++j) {
        const double h = kFdStepScale * (1.0 + std::abs(at[j]));
        Vec plus = at, minus = at;
        plus[j] += h;
        minus[j] -= h;
        grad[j] = (eval(plus) - eval(minus)) / (2.0 * h);
    }
    return grad;
}

}  // namespace

DriftJacobians numeric_drift_jacobians(const ProblemSpec& spec) {
    const DriftFn f = spec.drift;
    const int d = spec.state_dim;
    DriftJacobians jac;
    jac.dx = [f, d](double t, const Vec& x, const Vec& mx, const Vec& u, const Vec& mu) {
        return central_jacobian([&](const Vec& v) { return f(t, v, mx, u, mu); }, x, d);
    };
    jac.dmean_x = [f, d](double t, const Vec& x, const Vec& mx, const Vec& u, const Vec& mu) {
        return central_jacobian([&](const Vec& v) { return f(t, x, v, u, mu); }, mx, d);
    };
    jac.du = [f, d](double t, const Vec& x, const Vec& mx, const Vec& u, const Vec& mu) {
        return central_jacobian([&](const Vec& v) { return f(t, x, mx, v, mu); }, u, d);
    };
    jac.dmean_u = [f, d](double t, const Vec& x, const Vec& mx, const Vec& u, const Vec& mu) {
        return central_jacobian([&](const Vec& v) { return f(t, x, mx, u, v); }, mu, d);
    };
    return jac;
}

RunningCostGradients numeric_running_gradients(const ProblemSpec& spec) {
    const RunningCostFn l = spec.running_cost;
    RunningCostGradients grad;
    grad.dx = [l](double t, const Vec& x, const Vec& mx, const Vec& u, const Vec& mu) {
        return central_gradient([&](const Vec& v) { return l(t, v, mx, u, mu); }, x);
    };
    grad.dmean_x = [l](double t, const Vec& x, const Vec& mx, const Vec& u, const Vec& mu) {
        return central_gradient([&](const Vec& v) { return l(t, x, v, u, mu); }, mx);
    };
    grad.du = [l](double t, const Vec& x, const Vec& mx, const Vec& u, const Vec& mu) {
        return central_gradient([&](const Vec& v) { return l(t, x, mx, v, mu); }, u);
    };
    grad.dmean_u = [l](double t, const Vec& x, const Vec& mx, const Vec& u, const Vec& mu) {
        return central_gradient([&](const Vec& v) { return l(t, x, mx, u, v); }, mu);
    };
    return grad;
}

TerminalCostGradients numeric_terminal_gradients(const ProblemSpec& spec) {
    const TerminalCostFn psi = spec.terminal_cost;
    TerminalCostGradients grad;
    grad.dx = [psi](const Vec& x, const Vec& mx) {
        return central_gradient([&](const Vec& v) { return psi(v, mx); }, x);
    };
    grad.dmean_x = [psi](const Vec& x, const Vec& mx) {
        return central_gradient([&](const Vec& v) { return psi(x, v); }, mx);
    };
    return grad;
}

// --- serialization -----------------------------------------------------------

void write_states_csv(std::ostream& os, const std::vector<std::vector<Vec>>& data) {
    os << "sample,step,coordinate,value\n";
    char buf[64];
    for (std::size_t i = 0; i < data.size(); ++i) {
        for (std::size_t k = 0; k < data[i].size(); ++k) {
            for (int c = 0; c < data[i][k].size(); ++c) {
                std::snprintf(buf, sizeof(buf), "%.17g", data[i][k][c]);
                os << i << ',' << k << ',' << c << ',' << buf << '\n';
            }
        }
    }
}

namespace {
struct BinaryHeader {
    char magic[4];
    std::uint16_t version;
    std::uint16_t dim;
    std::uint32_t samples;
    std::uint32_t time_points;
};
static_assert(sizeof(BinaryHeader) == 16, "header must be 16 bytes");
}  // namespace

void write_states_binary(std::ostream& os, const std::vector<std::vector<Vec>>& data) {
    BinaryHeader hdr{};
    std::memcpy(hdr.magic, "MFTC", 4);
    hdr.version = 1;
    hdr.samples = static_cast<std::uint32_t>(data.size());
    hdr.time_points = data.empty() ? 0 : static_cast<std::uint32_t>(data[0].size());
    hdr.dim = data.empty() || data[0].empty() ? 0 : static_cast<std::uint16_t>(data[0][0].size());
    os.write(reinterpret_cast<const char*>(&hdr), sizeof(hdr));
    for (const auto& traj : data) {
        for (const Vec& x : traj) {
            os.write(reinterpret_cast<const char*>(x.data()),
                     static_cast<std::streamsize>(sizeof(double) * x.size()));
        }
    }
}

std::vector<std::vector<Vec>> read_states_binary(std::istream& is) {
    BinaryHeader hdr{};
    is.read(reinterpret_cast<char*>(&hdr), sizeof(hdr));
    require(is.good() && std::memcmp(hdr.magic, "MFTC", 4) == 0,
            "read_states_binary: bad magic");
    require(hdr.version == 1, "read_states_binary: unsupported version");
    std::vector<std::vector<Vec>> data(hdr.samples,
                                       std::vector<Vec>(hdr.time_points, Vec(hdr.dim)));
    for (auto& traj : data) {
        for (Vec& x : traj) {
            is.read(reinterpret_cast<char*>(x.data()),
                    static_cast<std::streamsize>(sizeof(double) * hdr.dim));
        }
    }
    require(is.good(), "read_states_binary: truncated payload");
    return data;
}

}  // namespace mftc::core
