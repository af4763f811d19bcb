#include "mimir/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numbers>

namespace mimir::train {

void TrainConfig::validate() const {
    auto fail = [](const std::string& msg) { throw std::invalid_argument("TrainConfig: " + msg); };
    if (!(base_lr >= 0.0)) fail("base_lr must be non-negative");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) fail("betas must lie in [0, 1)");
    if (!(weight_decay >= 0.0)) fail("weight_decay must be non-negative");
    if (total_epochs == 0) fail("total_epochs must be positive");
    if (warmup_epochs >= total_epochs) fail("warmup_epochs must be smaller than total_epochs");
    if (batch_size == 0) fail("batch_size must be positive");
    if (!(lambda >= 0.0)) fail("lambda must be non-negative");
    if (!(layer_decay > 0.0 && layer_decay <= 1.0)) fail("layer_decay must lie in (0, 1]");
    attack.validate();
}

TrainConfig TrainConfig::pretrain_defaults() { return TrainConfig{}; }

TrainConfig TrainConfig::finetune_defaults() {
    TrainConfig c;
    c.base_lr = 5e-3;
    c.beta2 = 0.999;
    c.layer_decay = 0.65;
    c.warmup_epochs = 10;
    c.total_epochs = 100;
    c.batch_size = 128;
    c.lambda = 0.0;
    c.attack = attack::AttackSpec::finetune_default();
    return c;
}

TrainState TrainState::fresh(vit::ModelParams params, std::uint64_t seed) {
    TrainState s;
    for (const auto& [name, t] : params.trainable()) {
        s.m[name].assign(t.numel(), 0.0);
        s.v[name].assign(t.numel(), 0.0);
    }
    s.params = std::move(params);
    s.rng = Rng(seed);
    return s;
}

LossTerms mimir_loss(const vit::Model& model, const Tensor& images, const vit::MaskPlan& plan,
                     const Tensor& adversarial, const TrainConfig& config, mi::PenaltyConfig penalty) {
    if (adversarial.shape() != images.shape()) throw std::invalid_argument("mimir_loss: adversarial batch shape mismatch");
    std::size_t batch = images.dim(0);
    if (config.lambda > 0.0 && batch < 2) throw std::invalid_argument("mimir_loss: MI penalty needs a batch of at least 2");

    Tensor patches = vit::patchify(adversarial, model.config.patch_size);
    vit::LatentBatch latent = vit::encode(model, patches, plan);
    Tensor rec = vit::unpatchify(vit::decode(model, latent), model.config.patch_size, model.config.channels);
    Tensor mse = vit::reconstruction_loss(model, rec, images, plan);

    LossTerms out;
    out.mse = mse.item();
    out.total = mse;
    if (batch >= 2) {
        // Masked patches never reach z, so only visible patches represent x + delta.
        Tensor visible = gather_rows(patches, plan.visible());
        penalty.estimator = config.estimator;
        Tensor term = mi::penalty_mi(visible, latent.z, penalty);
        out.mi = term.item();
        if (config.lambda > 0.0) out.total = add(mse, scale(term, config.lambda));
    }
    return out;
}

double cosine_lr(std::size_t step, std::size_t warmup_steps, std::size_t total_steps, double base_lr) {
    if (total_steps <= warmup_steps) throw std::invalid_argument("cosine_lr: total_steps must exceed warmup_steps");
    if (step > total_steps) throw std::invalid_argument("cosine_lr: step beyond total_steps");
    if (step < warmup_steps) return base_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
    double progress = static_cast<double>(step - warmup_steps) / static_cast<double>(total_steps - warmup_steps);
    return 0.5 * base_lr * (1.0 + std::cos(std::numbers::pi * progress));
}

double layer_lr_scale(const std::string& name, std::size_t enc_layers, double layer_decay) {
    std::size_t depth = enc_layers + 1 - vit::layer_id(name, enc_layers);
    return std::pow(layer_decay, static_cast<double>(depth));
}

void adamw_step(TrainState& state, double lr, const TrainConfig& config,
                const std::function<double(const std::string&)>& lr_scale) {
    ++state.step;
    double t = static_cast<double>(state.step);
    double bc1 = 1.0 - std::pow(config.beta1, t);
    double bc2 = 1.0 - std::pow(config.beta2, t);
    for (auto& [name, param] : state.params.trainable()) {
        auto& m = state.m[name];
        auto& v = state.v[name];
        if (m.size() != param.numel()) m.assign(param.numel(), 0.0);
        if (v.size() != param.numel()) v.assign(param.numel(), 0.0);
        auto g = param.grad();
        if (!g.empty() && g.size() != param.numel()) throw std::invalid_argument("adamw_step: gradient shape mismatch");
        double step_lr = lr * (lr_scale ? lr_scale(name) : 1.0);
        auto w = param.mutable_values();
        for (std::size_t i = 0; i < w.size(); ++i) {
            double gi = g.empty() ? 0.0 : g[i];
            m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * gi;
            v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * gi * gi;
            double mhat = m[i] / bc1;
            double vhat = v[i] / bc2;
            w[i] -= step_lr * (mhat / (std::sqrt(vhat) + 1e-8) + config.weight_decay * w[i]);
        }
        if (!std::all_of(w.begin(), w.end(), [](double x) { return std::isfinite(x); }))
            throw NumericError("adamw_step: parameter '" + name + "' diverged");
    }
}

namespace {

struct ScheduleInfo {
    std::size_t steps_per_epoch;
    std::size_t warmup_steps;
    std::size_t total_steps;
};

ScheduleInfo schedule(std::size_t n, const TrainConfig& config, std::size_t min_batch) {
    std::size_t full = n / config.batch_size;
    std::size_t rem = n % config.batch_size;
    std::size_t per_epoch = full + ((rem > 0 && rem >= min_batch) ? 1 : 0);
    if (per_epoch == 0) throw std::invalid_argument("dataset too small for one batch");
    return {per_epoch, config.warmup_epochs * per_epoch, config.total_epochs * per_epoch};
}

double now_seconds() {
    using clock = std::chrono::steady_clock;
    return std::chrono::duration<double>(clock::now().time_since_epoch()).count();
}

}  // namespace

EpochMetrics pretrain_epoch(TrainState& state, const vit::ViTConfig& vit_config, const Dataset& data,
                            const TrainConfig& config) {
    config.validate();
    if (data.size() == 0) throw std::invalid_argument("pretrain_epoch: empty dataset");
    std::size_t min_batch = config.lambda > 0.0 ? 2 : 1;
    auto sched = schedule(data.size(), config, min_batch);
    double t0 = config.wall_clock ? now_seconds() : 0.0;

    vit::Model model{vit_config, state.params};
    EpochMetrics em;
    em.epoch = state.epoch;
    auto batches = shuffled_batches(data.size(), config.batch_size, state.rng, min_batch);
    for (const auto& idx : batches) {
        Tensor x = data.images(idx);
        vit::MaskPlan plan = vit::sample_mask(vit_config.num_patches(), vit_config.mask_ratio, state.rng, idx.size());
        // Random-init delta, then the reconstruction attack on visible patches.
        attack::Perturbation pert = attack::attack_recon(model, x, plan, config.attack, state.rng);

        state.params.zero_grad();
        LossTerms loss = mimir_loss(model, x, plan, pert.adversarial, config);
        backward(loss.total);
        double lr = cosine_lr(state.step, sched.warmup_steps, sched.total_steps, config.base_lr);
        adamw_step(state, lr, config);

        em.loss_mse += loss.mse;
        em.loss_mi += loss.mi;
        em.loss_total += loss.total.item();
        em.adv_objective += pert.achieved_loss;
        em.lr = lr;
    }
    state.params.zero_grad();
    double nb = static_cast<double>(batches.size());
    em.loss_mse /= nb;
    em.loss_mi /= nb;
    em.loss_total /= nb;
    em.adv_objective /= nb;
    em.seconds = config.wall_clock ? now_seconds() - t0 : 0.0;
    ++state.epoch;
    return em;
}

EpochMetrics finetune_epoch(TrainState& state, const vit::ViTConfig& vit_config, const Dataset& data,
                            const TrainConfig& config) {
    config.validate();
    if (data.size() == 0) throw std::invalid_argument("finetune_epoch: empty dataset");
    if (!state.params.contains("head.weight") || !state.params.contains("head.bias"))
        throw std::invalid_argument("finetune_epoch: classification head missing");
    auto sched = schedule(data.size(), config, 1);
    double t0 = config.wall_clock ? now_seconds() : 0.0;

    vit::Model model{vit_config, state.params};
    auto scale_of = [&](const std::string& name) {
        return layer_lr_scale(name, vit_config.enc_layers, config.layer_decay);
    };
    EpochMetrics em;
    em.epoch = state.epoch;
    auto batches = shuffled_batches(data.size(), config.batch_size, state.rng, 1);
    for (const auto& idx : batches) {
        Tensor x = data.images(idx);
        std::vector<int> y = data.labels_at(idx);
        attack::Perturbation pert = attack::attack_ce(model, x, y, config.attack, state.rng);

        state.params.zero_grad();
        Tensor loss = cross_entropy(vit::classify(model, pert.adversarial), y);
        backward(loss);
        double lr = cosine_lr(state.step, sched.warmup_steps, sched.total_steps, config.base_lr);
        adamw_step(state, lr, config, scale_of);

        em.loss_total += loss.item();
        em.adv_objective += pert.achieved_loss;
        em.lr = lr;
    }
    state.params.zero_grad();
    double nb = static_cast<double>(batches.size());
    em.loss_total /= nb;
    em.adv_objective /= nb;
    em.seconds = config.wall_clock ? now_seconds() - t0 : 0.0;
    ++state.epoch;
    return em;
}

vit::ModelParams attach_classifier(const vit::ModelParams& pretrained, const vit::ViTConfig& config) {
    vit::ModelParams out;
    for (const auto& [name, t] : pretrained.all()) {
        if (name.rfind("dec.", 0) == 0 || name.rfind("head.", 0) == 0) continue;
        out.set(name, t.detach(t.requires_grad()));
    }
    out.set("head.weight", Tensor::zeros({config.enc_dim, config.num_classes}, true));
    out.set("head.bias", Tensor::zeros({config.num_classes}, true));
    return out;
}

std::string metrics_csv_header() { return "epoch,loss_mse,loss_mi,loss_total,lr,seconds\n"; }

std::string metrics_csv_row(const EpochMetrics& m) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%llu,%.9g,%.9g,%.9g,%.9g,%.3f\n", static_cast<unsigned long long>(m.epoch),
                  m.loss_mse, m.loss_mi, m.loss_total, m.lr, m.seconds);
    return buf;
}

}  // namespace mimir::train
