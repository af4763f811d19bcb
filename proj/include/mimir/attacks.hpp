#pragma once

#include <functional>
#include <span>
#include <vector>

#include "mimir/mi.hpp"
#include "mimir/rng.hpp"
#include "mimir/tensor.hpp"
#include "mimir/vit.hpp"

namespace mimir::attack {

enum class Init { Zero, Uniform };

/// L-infinity attack budget. Pixels live on the [0, 1] scale, so budgets
/// quoted as k/255 are used verbatim.
struct AttackSpec {
    double epsilon = 8.0 / 255.0;
    double step_size = 2.0 / 255.0;
    int iters = 10;
    Init init = Init::Uniform;
    double box_lo = 0.0;
    double box_hi = 1.0;

    void validate() const;
    bool operator==(const AttackSpec&) const = default;

    /// One random-init step, eps 8/255, step 10/255.
    static AttackSpec pretrain_default();
    /// Ten steps, eps 8/255, step 2/255.
    static AttackSpec finetune_default();
    /// PGD-20 evaluation, eps 8/255, step 2/255.
    static AttackSpec eval_default();
};

struct Perturbation {
    Tensor delta;        // adversarial - x
    Tensor adversarial;  // the attacked input itself
    double achieved_loss = 0.0;
};

using Objective = std::function<Tensor(const Tensor& x_adv)>;

/// Clamps x_adv - x to [-eps, eps] and x_adv to the box. The returned
/// points satisfy both constraints exactly in floating point.
Tensor linf_project(const Tensor& x_adv, const Tensor& x, const AttackSpec& spec);

/// Signed-gradient ascent with projection after every step. Returns the best
/// iterate visited, the starting point included. `pixel_mask`, when
/// non-empty, pins coordinates with mask 0 to x.
Perturbation pgd(const Objective& objective, const Tensor& x, const AttackSpec& spec, Rng& rng,
                 std::span<const char> pixel_mask = {});

Perturbation attack_ce(const vit::Model& model, const Tensor& images, std::span<const int> labels,
                       const AttackSpec& spec, Rng& rng);

/// Maximizes the reconstruction loss of the autoencoder against the natural
/// images; only pixels of visible patches move.
Perturbation attack_recon(const vit::Model& model, const Tensor& images, const vit::MaskPlan& plan,
                          const AttackSpec& spec, Rng& rng);

/// Adaptive attack maximizing CE + lambda * I(x + delta, z).
Perturbation attack_mi(const vit::Model& model, const mi::PenaltyConfig& penalty, const Tensor& images,
                       std::span<const int> labels, double lambda, const AttackSpec& spec, Rng& rng);

/// Maximizes the squared feature distance between clean and attacked
/// encodings. Requires random init: the gradient vanishes at delta = 0.
Perturbation attack_fea(const vit::Model& model, const Tensor& images, const AttackSpec& spec, Rng& rng);

/// 1 for pixels that belong to a visible patch of `plan`, else 0; laid out
/// like images [batch, C, H, W].
std::vector<char> visible_pixel_mask(const vit::MaskPlan& plan, const vit::ViTConfig& config);

}  // namespace mimir::attack
