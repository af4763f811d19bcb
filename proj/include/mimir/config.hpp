#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mimir/attacks.hpp"
#include "mimir/train.hpp"
#include "mimir/vit.hpp"

namespace mimir::harness {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline const std::vector<std::string>& commands() {
    static const std::vector<std::string> names = {"pretrain", "finetune",  "attack",     "eval",
                                                   "bounds",   "landscape", "mi-estimate"};
    return names;
}

struct DataConfig {
    std::string source = "synthetic";  // synthetic | cifar10
    std::string path;
    std::size_t num_classes = 4;
    std::size_t samples_per_class = 16;
    std::size_t test_samples_per_class = 16;
    std::size_t image_size = 16;
    std::size_t channels = 1;
    double noise = 0.2;
    double contrast = 0.4;
    std::uint64_t seed = 1234;
    std::size_t limit = 0;  // 0 = whole split

    bool operator==(const DataConfig&) const = default;
};

struct EvalConfig {
    std::string attacks = "pgd-20";
    double epsilon = 8.0 / 255.0;
    double step_size = 2.0 / 255.0;
    double mi_lambda = 1.0;
    mi::Estimator estimator = mi::Estimator::Hsic;
    std::size_t batch_size = 64;
    std::size_t samples = 0;

    bool operator==(const EvalConfig&) const = default;
};

struct ExperimentConfig {
    std::string command;
    std::uint64_t seed = 0;
    std::string output_dir;

    DataConfig data;
    vit::ViTConfig model;
    std::string model_checkpoint;

    train::TrainConfig train;
    std::string train_resume;
    std::size_t checkpoint_every = 0;
    std::size_t stop_after = 0;  // 0 = run to total_epochs
    std::string attack_kind = "ce";

    std::string finetune_init;
    EvalConfig eval;

    int bounds_num_classes = 10;
    double bounds_step = 0.01;

    double landscape_half_width = 1.0;
    std::size_t landscape_resolution = 21;
    std::size_t landscape_samples = 0;

    std::size_t mi_samples = 32;
    double mi_alpha = 2.0;

    bool operator==(const ExperimentConfig&) const = default;
};

struct Overrides {
    std::optional<std::string> command;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> output_dir;
};

/// Strict `section.key = value` parser; '#' starts a comment. Unknown or
/// duplicate keys, malformed values and missing required keys all throw
/// ConfigError. Real-valued keys also accept "a/b".
ExperimentConfig parse_config(const std::string& text, const Overrides& overrides = {});
ExperimentConfig load_config(const std::string& path, const Overrides& overrides = {});
/// Every key, one per line; parse_config(serialize_config(c)) == c.
std::string serialize_config(const ExperimentConfig& config);
/// Checks that every referenced path exists.
void validate_paths(const ExperimentConfig& config);

/// Executes the configured command, writing artifacts under output_dir.
void run(const ExperimentConfig& config);
/// load_config + run; prints the error and returns 1 on failure.
int run_config(const std::string& path, const Overrides& overrides = {});

}  // namespace mimir::harness
