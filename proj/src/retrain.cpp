#include "mftc/retrain.hpp"

namespace mftc::retrain {

int AugmentedDataset::adversarial_count() const {
    int c = 0;
    for (Provenance p : provenance)
        if (p == Provenance::Adversarial) ++c;
    return c;
}

void AugmentedDataset::append(const nn::Dataset& more, Provenance tag) {
    records.insert(records.end(), more.begin(), more.end());
    provenance.insert(provenance.end(), more.size(), tag);
}

HarvestResult harvest_adversarials(const core::ProblemSpec& spec, const core::TimeGrid& grid,
                                   const nn::MlpParams& params, const HarvestConfig& config) {
    require(config.count >= 0, "harvest_adversarials: count must be >= 0");
    HarvestResult result;
    if (config.count == 0) return result;
    const double min_sep =
        config.min_separation > 0.0 ? config.min_separation : config.attack.alpha / 100.0;
    const int budget = config.attempt_budget > 0 ? config.attempt_budget : 20 * config.count;

    auto distinct = [&](const Vec& y) {
        for (const Vec& seen : result.states)
            if ((seen - y).norm() < min_sep) return false;
        return true;
    };

    for (int attempt = 0; attempt < budget; ++attempt) {
        if (static_cast<int>(result.states.size()) >= config.count) break;
        adv::AttackConfig attack = config.attack;
        // Fresh noise seed per attack to diversify the found states.
        attack.seed = mix_keys(config.attack.seed, 0x686172 /* "har" */,
                               static_cast<std::uint64_t>(attempt));
        const adv::AttackResult res = adv::pgd_attack(spec, grid, params, attack);
        if (res.found && distinct(res.adversarial)) result.states.push_back(res.adversarial);
    }
    result.shortfall = static_cast<int>(result.states.size()) < config.count;
    return result;
}

opt::OptimalBatch solve_from_adversarials(const core::ProblemSpec& spec,
                                          const core::TimeGrid& grid,
                                          const std::vector<Vec>& adversarial_states,
                                          const core::NoiseTensor& noise,
                                          const opt::OptimizerConfig& config) {
    for (const Vec& x : adversarial_states)
        require(x.allFinite(), "solve_from_adversarials: non-finite state");
    return opt::solve_pcd(spec, grid, adversarial_states, noise, config);
}

nn::Dataset records_from_batch(const opt::OptimalBatch& batch, const core::NoiseTensor& noise) {
    nn::Dataset records;
    const int n = batch.states.samples();
    const int nk = batch.controls.steps();
    for (int i = 0; i < n; ++i) {
        for (int k = 0; k < nk; ++k) {
            nn::Record rec;
            const Vec& x = batch.states.states[i][k];
            const Vec& mx = batch.states.mean_states[k];
            const Vec& b = noise.increments[i][k];
            rec.input = Vec(x.size() + mx.size() + b.size());
            rec.input << x, mx, b;
            const Vec& u = batch.controls.controls[i][k];
            const Vec& mu = batch.controls.mean_controls[k];
            rec.target = Vec(u.size() + mu.size());
            rec.target << u, mu;
            records.push_back(std::move(rec));
        }
    }
    return records;
}

nn::TrainResult retrain(const nn::MlpParams& params_init, const AugmentedDataset& augmented,
                        const RetrainConfig& config, std::uint64_t cold_start_seed) {
    require(!augmented.records.empty(), "retrain: empty dataset");
    nn::TrainConfig train_cfg = config.train;
    if (config.adversarial_weight != 1.0) {
        train_cfg.record_weights.assign(augmented.records.size(), 1.0);
        for (std::size_t i = 0; i < augmented.provenance.size(); ++i)
            if (augmented.provenance[i] == Provenance::Adversarial)
                train_cfg.record_weights[i] = config.adversarial_weight;
    }
    if (config.warm_start) return nn::train(params_init, augmented.records, train_cfg);

    std::vector<nn::LayerSpec> specs;
    for (const nn::Layer& l : params_init.layers)
        specs.push_back({static_cast<int>(l.W.cols()), static_cast<int>(l.W.rows()),
                         l.activation});
    return nn::train(nn::make_mlp(specs, cold_start_seed), augmented.records, train_cfg);
}

}  // namespace mftc::retrain
