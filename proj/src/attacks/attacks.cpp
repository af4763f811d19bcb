#include "mimir/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace mimir::attack {

namespace {

// Projects one coordinate onto [x - eps, x + eps] intersected with the box,
// nudging by one ulp where rounding in x +- eps would overshoot.
double project_scalar(double adv, double x, double eps, double lo, double hi) {
    double v = std::clamp(adv, x - eps, x + eps);
    v = std::clamp(v, lo, hi);
    while (v - x > eps) v = std::nextafter(v, x);
    while (x - v > eps) v = std::nextafter(v, x);
    return v;
}

double evaluate(const Objective& objective, const Tensor& x_adv) {
    Tensor loss = objective(x_adv);
    if (loss.numel() != 1) throw std::invalid_argument("pgd: objective must be scalar");
    double v = loss.item();
    if (!std::isfinite(v)) throw NumericError("pgd: non-finite objective");
    return v;
}

vit::Model frozen(const vit::Model& model) { return {model.config, model.params.frozen()}; }

Perturbation finish(const Tensor& x, const Tensor& best, double best_loss) {
    std::vector<double> d(x.numel());
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = best.at(i) - x.at(i);
    return {Tensor::create(x.shape(), std::move(d)), best, best_loss};
}

}  // namespace

void AttackSpec::validate() const {
    // A zero budget is accepted: it is the natural-training reduction.
    if (!(epsilon >= 0.0 && epsilon < 1.0)) throw std::invalid_argument("AttackSpec: epsilon must lie in [0, 1)");
    if (!(step_size > 0.0)) throw std::invalid_argument("AttackSpec: step_size must be positive");
    if (iters < 1) throw std::invalid_argument("AttackSpec: iters must be at least 1");
    if (!(box_lo < box_hi)) throw std::invalid_argument("AttackSpec: empty box");
}

AttackSpec AttackSpec::pretrain_default() { return {8.0 / 255.0, 10.0 / 255.0, 1, Init::Uniform, 0.0, 1.0}; }
AttackSpec AttackSpec::finetune_default() { return {8.0 / 255.0, 2.0 / 255.0, 10, Init::Uniform, 0.0, 1.0}; }
AttackSpec AttackSpec::eval_default() { return {8.0 / 255.0, 2.0 / 255.0, 20, Init::Uniform, 0.0, 1.0}; }

Tensor linf_project(const Tensor& x_adv, const Tensor& x, const AttackSpec& spec) {
    if (x_adv.shape() != x.shape()) throw std::invalid_argument("linf_project: shape mismatch");
    std::vector<double> out(x.numel());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = project_scalar(x_adv.at(i), x.at(i), spec.epsilon, spec.box_lo, spec.box_hi);
    return Tensor::create(x.shape(), std::move(out));
}

Perturbation pgd(const Objective& objective, const Tensor& x, const AttackSpec& spec, Rng& rng,
                 std::span<const char> pixel_mask) {
    spec.validate();
    std::size_t n = x.numel();
    if (!pixel_mask.empty() && pixel_mask.size() != n) throw std::invalid_argument("pgd: pixel mask size mismatch");
    auto pinned = [&](std::size_t i) { return !pixel_mask.empty() && pixel_mask[i] == 0; };

    std::vector<double> start(n);
    for (std::size_t i = 0; i < n; ++i) {
        double d = spec.init == Init::Uniform ? rng.uniform(-spec.epsilon, spec.epsilon) : 0.0;
        start[i] = pinned(i) ? x.at(i) : x.at(i) + d;
    }
    Tensor x_adv = linf_project(Tensor::create(x.shape(), std::move(start)), x, spec);

    Tensor best = x_adv;
    double best_loss = -std::numeric_limits<double>::infinity();
    for (int it = 0; it < spec.iters; ++it) {
        Tensor leaf = x_adv.detach(true);
        Tensor loss = objective(leaf);
        if (loss.numel() != 1) throw std::invalid_argument("pgd: objective must be scalar");
        double v = loss.item();
        if (!std::isfinite(v)) throw NumericError("pgd: non-finite objective");
        if (v > best_loss) {
            best_loss = v;
            best = x_adv;
        }
        backward(loss);
        std::vector<double> next(n);
        auto g = leaf.grad();
        for (std::size_t i = 0; i < n; ++i) {
            double gi = g.empty() ? 0.0 : g[i];
            if (!std::isfinite(gi)) throw NumericError("pgd: non-finite gradient");
            double sgn = gi > 0.0 ? 1.0 : (gi < 0.0 ? -1.0 : 0.0);
            next[i] = pinned(i) ? x.at(i) : x_adv.at(i) + spec.step_size * sgn;
        }
        x_adv = linf_project(Tensor::create(x.shape(), std::move(next)), x, spec);
    }
    double last = evaluate(objective, x_adv);
    if (last > best_loss) {
        best_loss = last;
        best = x_adv;
    }
    return finish(x, best, best_loss);
}

Perturbation attack_ce(const vit::Model& model, const Tensor& images, std::span<const int> labels,
                       const AttackSpec& spec, Rng& rng) {
    for (int y : labels) {
        if (y < 0 || static_cast<std::size_t>(y) >= model.config.num_classes)
            throw std::invalid_argument("attack_ce: label out of range");
    }
    std::vector<int> ys(labels.begin(), labels.end());
    vit::Model m = frozen(model);
    return pgd([&](const Tensor& x_adv) { return cross_entropy(vit::classify(m, x_adv), ys); }, images, spec, rng);
}

std::vector<char> visible_pixel_mask(const vit::MaskPlan& plan, const vit::ViTConfig& config) {
    std::size_t c = config.channels, s = config.image_size, ps = config.patch_size, g = config.grid();
    auto vis = plan.visibility();
    std::vector<char> mask(plan.batch() * c * s * s, 0);
    for (std::size_t b = 0; b < plan.batch(); ++b)
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t y = 0; y < s; ++y)
                for (std::size_t x = 0; x < s; ++x)
                    mask[((b * c + ch) * s + y) * s + x] = vis[b][(y / ps) * g + x / ps];
    return mask;
}

Perturbation attack_recon(const vit::Model& model, const Tensor& images, const vit::MaskPlan& plan,
                          const AttackSpec& spec, Rng& rng) {
    auto mask = visible_pixel_mask(plan, model.config);
    if (mask.size() != images.numel()) throw std::invalid_argument("attack_recon: plan does not match images");
    vit::Model m = frozen(model);
    return pgd(
        [&](const Tensor& x_adv) {
            return vit::reconstruction_loss(m, vit::forward_autoencoder(m, x_adv, plan), images, plan);
        },
        images, spec, rng, mask);
}

Perturbation attack_mi(const vit::Model& model, const mi::PenaltyConfig& penalty, const Tensor& images,
                       std::span<const int> labels, double lambda, const AttackSpec& spec, Rng& rng) {
    if (images.dim(0) < 2) throw std::invalid_argument("attack_mi: the MI term needs a batch of at least 2");
    if (!(lambda >= 0.0)) throw std::invalid_argument("attack_mi: lambda must be non-negative");
    for (int y : labels) {
        if (y < 0 || static_cast<std::size_t>(y) >= model.config.num_classes)
            throw std::invalid_argument("attack_mi: label out of range");
    }
    std::vector<int> ys(labels.begin(), labels.end());
    vit::Model m = frozen(model);
    return pgd(
        [&](const Tensor& x_adv) {
            Tensor z = vit::features(m, x_adv);
            Tensor pooled = mean(z, {1});
            Tensor logits = add(matmul(pooled, m.params.at("head.weight")), m.params.at("head.bias"));
            return add(cross_entropy(logits, ys), scale(mi::penalty_mi(x_adv, z, penalty), lambda));
        },
        images, spec, rng);
}

Perturbation attack_fea(const vit::Model& model, const Tensor& images, const AttackSpec& spec, Rng& rng) {
    if (spec.init != Init::Uniform)
        throw std::invalid_argument("attack_fea: zero init has an identically zero gradient; use random init");
    vit::Model m = frozen(model);
    Tensor clean = vit::features(m, images.detach());
    return pgd([&](const Tensor& x_adv) { return mse_loss(vit::features(m, x_adv), clean); }, images, spec, rng);
}

}  // namespace mimir::attack
