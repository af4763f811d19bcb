#pragma once

#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "mimir/attacks.hpp"
#include "mimir/dataset.hpp"
#include "mimir/mi.hpp"
#include "mimir/rng.hpp"
#include "mimir/vit.hpp"

namespace mimir::train {

struct TrainConfig {
    double base_lr = 1.5e-4;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double weight_decay = 0.05;
    std::size_t warmup_epochs = 40;
    std::size_t total_epochs = 800;
    std::size_t batch_size = 512;
    double lambda = 1e-5;
    mi::Estimator estimator = mi::Estimator::Hsic;
    double layer_decay = 1.0;
    attack::AttackSpec attack = attack::AttackSpec::pretrain_default();
    std::uint64_t seed = 0;
    /// Record wall-clock seconds in metrics; off keeps metrics byte-deterministic.
    bool wall_clock = false;

    void validate() const;
    bool operator==(const TrainConfig&) const = default;

    /// Pre-training defaults (AdamW, lr 1.5e-4, betas 0.9/0.95, wd 0.05,
    /// 40 warmup of 800 epochs, batch 512, HSIC with lambda 1e-5).
    static TrainConfig pretrain_defaults();
    /// Adversarial fine-tuning defaults (lr 5e-3, betas 0.9/0.999,
    /// layer decay 0.65, 10 warmup of 100 epochs, batch 128, PGD-10).
    static TrainConfig finetune_defaults();
};

struct TrainState {
    vit::ModelParams params;
    std::map<std::string, std::vector<double>> m;
    std::map<std::string, std::vector<double>> v;
    std::uint64_t step = 0;
    std::uint64_t epoch = 0;
    Rng rng;

    static TrainState fresh(vit::ModelParams params, std::uint64_t seed);
};

struct EpochMetrics {
    std::uint64_t epoch = 0;
    double loss_mse = 0.0;
    double loss_mi = 0.0;
    double loss_total = 0.0;
    double adv_objective = 0.0;
    double lr = 0.0;
    double seconds = 0.0;
};

struct LossTerms {
    Tensor total;
    double mse = 0.0;
    double mi = 0.0;
};

/// L_mse(x, x_re) + lambda * I(x + delta, z) on one graph, with z the
/// encoding of the attacked visible patches. `penalty` overrides the kernel
/// widths; its estimator field is ignored in favour of config.estimator.
LossTerms mimir_loss(const vit::Model& model, const Tensor& images, const vit::MaskPlan& plan,
                     const Tensor& adversarial, const TrainConfig& config, mi::PenaltyConfig penalty = {});

/// Linear warmup from 0, then half-cosine decay to 0 at total_steps.
double cosine_lr(std::size_t step, std::size_t warmup_steps, std::size_t total_steps, double base_lr);

/// Per-parameter learning-rate multiplier for layer-wise decay.
double layer_lr_scale(const std::string& name, std::size_t enc_layers, double layer_decay);

/// Decoupled-weight-decay Adam update over every trainable parameter, using
/// the gradients currently held by the parameters (missing = zero).
void adamw_step(TrainState& state, double lr, const TrainConfig& config,
                const std::function<double(const std::string&)>& lr_scale = {});

/// One pass of adversarial MAE pre-training with the MI penalty.
EpochMetrics pretrain_epoch(TrainState& state, const vit::ViTConfig& vit_config, const Dataset& data,
                            const TrainConfig& config);

/// One pass of PGD adversarial fine-tuning of encoder + head.
EpochMetrics finetune_epoch(TrainState& state, const vit::ViTConfig& vit_config, const Dataset& data,
                            const TrainConfig& config);

/// Drops decoder tensors and resets the classification head to zeros.
vit::ModelParams attach_classifier(const vit::ModelParams& pretrained, const vit::ViTConfig& config);

std::string metrics_csv_header();
std::string metrics_csv_row(const EpochMetrics& m);

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const TrainState& state, const std::string& path);
TrainState load_checkpoint(const std::string& path);
std::string serialize_checkpoint(const TrainState& state);
TrainState deserialize_checkpoint(const std::string& bytes);

}  // namespace mimir::train
