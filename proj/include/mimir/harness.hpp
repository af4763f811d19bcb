#pragma once

#include <string>
#include <vector>

#include "mimir/attacks.hpp"
#include "mimir/dataset.hpp"
#include "mimir/mi.hpp"
#include "mimir/rng.hpp"
#include "mimir/vit.hpp"

namespace mimir::harness {

/// Parses one CIFAR-10 binary batch file (3073-byte records).
Dataset load_cifar10_file(const std::string& path);
/// Reads data_batch_1..5.bin for split "train" or test_batch.bin for "test".
Dataset load_cifar10_binary(const std::string& dir, const std::string& split = "train");

/// Oriented sinusoidal gratings, one orientation per class, plus uniform
/// noise in [-noise, noise], clamped to [0, 1].
Dataset synth_dataset(std::size_t num_classes, std::size_t samples_per_class, std::size_t image_size, double noise,
                      Rng& rng, std::size_t channels = 1, double contrast = 1.0);
/// Noise-free grating for `label`, [C * H * W].
std::vector<double> class_template(std::size_t label, std::size_t num_classes, std::size_t image_size,
                                   std::size_t channels = 1, double contrast = 1.0);

enum class AttackKind { Ce, Mi, Fea };

struct EvalAttack {
    AttackKind kind = AttackKind::Ce;
    attack::AttackSpec spec = attack::AttackSpec::eval_default();
    double mi_lambda = 1.0;
    mi::Estimator estimator = mi::Estimator::Hsic;

    /// PGD-20, PGD-MI-100, PGD-fea-100, ...
    std::string id() const;
};

/// Parses "pgd-20", "pgd-mi-100", "pgd-fea-100" (case-insensitive).
EvalAttack parse_eval_attack(const std::string& token, const attack::AttackSpec& base);

struct EvalRow {
    std::string attack;
    double robust = 0.0;  // percent
};

struct EvalReport {
    std::size_t n = 0;
    double natural = 0.0;  // percent
    std::vector<EvalRow> rows;

    /// `attack,natural,robust,n`; a "clean" row when no attack was run.
    std::string to_csv() const;
};

std::vector<int> predict(const vit::Model& model, const Tensor& images);

/// Natural accuracy plus, per attack, the share of samples classified
/// correctly both before and after the attack. Each attack draws from its
/// own stream seeded by `seed`.
EvalReport evaluate(const vit::Model& model, const Dataset& data, const std::vector<EvalAttack>& attacks,
                    std::uint64_t seed, std::size_t batch_size = 64);

/// Mean cross-entropy over the dataset, batch-weighted.
double dataset_loss(const vit::Model& model, const Dataset& data, std::size_t batch_size = 64);

struct LandscapePoint {
    double a;
    double b;
    double loss;
};

/// Clean loss at theta + a d1 + b d2 on a resolution x resolution grid over
/// [-half_width, half_width]^2; directions are rescaled per tensor to the
/// tensor's own norm.
std::vector<LandscapePoint> landscape_grid(const vit::Model& model, const Dataset& data, double half_width,
                                           std::size_t resolution, Rng& rng, std::size_t batch_size = 64);
std::string landscape_csv(const std::vector<LandscapePoint>& points);

}  // namespace mimir::harness
