#pragma once

#include <string>
#include <vector>

#include "mimir/rng.hpp"
#include "mimir/tensor.hpp"

namespace mimir {

/// Labeled images, pixels in [0, 1], stored [N, C, H, W] row-major.
struct Dataset {
    std::size_t channels = 0;
    std::size_t image_size = 0;
    std::size_t num_classes = 0;
    std::vector<double> pixels;
    std::vector<int> labels;
    std::string split;

    std::size_t size() const { return labels.size(); }
    std::size_t image_numel() const { return channels * image_size * image_size; }
    void validate() const;

    /// Images at `indices` as a [k, C, H, W] tensor.
    Tensor images(const std::vector<std::size_t>& indices) const;
    std::vector<int> labels_at(const std::vector<std::size_t>& indices) const;
    /// First `n` samples (or all when n == 0 or n >= size()).
    Dataset head(std::size_t n) const;
};

/// Consecutive index batches over a permutation drawn from `rng`. A trailing
/// remainder smaller than `min_batch` is dropped.
std::vector<std::vector<std::size_t>> shuffled_batches(std::size_t n, std::size_t batch_size, Rng& rng,
                                                       std::size_t min_batch = 1);
/// Same split without shuffling.
std::vector<std::vector<std::size_t>> ordered_batches(std::size_t n, std::size_t batch_size);

}  // namespace mimir
