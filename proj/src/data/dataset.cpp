#include "mimir/dataset.hpp"

#include <numeric>
#include <stdexcept>

namespace mimir {

void Dataset::validate() const {
    if (channels == 0 || image_size == 0) throw std::invalid_argument("Dataset: empty image geometry");
    if (pixels.size() != labels.size() * image_numel()) throw std::invalid_argument("Dataset: pixel/label count mismatch");
    for (int y : labels) {
        if (y < 0 || static_cast<std::size_t>(y) >= num_classes)
            throw std::invalid_argument("Dataset: label " + std::to_string(y) + " out of range");
    }
    for (double p : pixels) {
        if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("Dataset: pixel outside [0, 1]");
    }
}

Tensor Dataset::images(const std::vector<std::size_t>& indices) const {
    if (indices.empty()) throw std::invalid_argument("Dataset::images: empty batch");
    std::size_t m = image_numel();
    std::vector<double> v;
    v.reserve(indices.size() * m);
    for (std::size_t i : indices) {
        if (i >= size()) throw std::out_of_range("Dataset::images: index out of range");
        v.insert(v.end(), pixels.begin() + static_cast<std::ptrdiff_t>(i * m),
                 pixels.begin() + static_cast<std::ptrdiff_t>((i + 1) * m));
    }
    return Tensor::create({indices.size(), channels, image_size, image_size}, std::move(v));
}

std::vector<int> Dataset::labels_at(const std::vector<std::size_t>& indices) const {
    std::vector<int> out;
    for (std::size_t i : indices) out.push_back(labels.at(i));
    return out;
}

Dataset Dataset::head(std::size_t n) const {
    if (n == 0 || n >= size()) return *this;
    Dataset d = *this;
    d.labels.resize(n);
    d.pixels.resize(n * image_numel());
    return d;
}

std::vector<std::vector<std::size_t>> shuffled_batches(std::size_t n, std::size_t batch_size, Rng& rng,
                                                       std::size_t min_batch) {
    if (batch_size == 0) throw std::invalid_argument("batch_size must be positive");
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    for (std::size_t i = n; i-- > 1;) std::swap(perm[i], perm[rng.below(i + 1)]);
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t s = 0; s < n; s += batch_size) {
        std::size_t e = std::min(n, s + batch_size);
        if (e - s < min_batch) break;
        out.emplace_back(perm.begin() + static_cast<std::ptrdiff_t>(s), perm.begin() + static_cast<std::ptrdiff_t>(e));
    }
    return out;
}

std::vector<std::vector<std::size_t>> ordered_batches(std::size_t n, std::size_t batch_size) {
    if (batch_size == 0) throw std::invalid_argument("batch_size must be positive");
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t s = 0; s < n; s += batch_size) {
        std::vector<std::size_t> b;
        for (std::size_t i = s; i < std::min(n, s + batch_size); ++i) b.push_back(i);
        out.push_back(std::move(b));
    }
    return out;
}

}  // namespace mimir
