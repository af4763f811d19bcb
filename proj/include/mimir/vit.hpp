#pragma once

#include <map>
#include <string>
#include <vector>

#include "mimir/rng.hpp"
#include "mimir/tensor.hpp"

namespace mimir::vit {

struct ViTConfig {
    std::size_t image_size = 16;
    std::size_t channels = 1;
    std::size_t patch_size = 4;
    std::size_t enc_layers = 2;
    std::size_t enc_dim = 32;
    std::size_t enc_heads = 2;
    std::size_t enc_mlp_ratio = 4;
    std::size_t dec_layers = 1;
    std::size_t dec_dim = 32;
    std::size_t dec_heads = 2;
    std::size_t dec_mlp_ratio = 4;
    std::size_t num_classes = 4;
    double mask_ratio = 0.75;
    /// Restrict the reconstruction loss to masked patches (MAE parity mode).
    bool masked_only_loss = false;

    void validate() const;
    std::size_t grid() const { return image_size / patch_size; }
    std::size_t num_patches() const { return grid() * grid(); }
    std::size_t patch_dim() const { return channels * patch_size * patch_size; }

    bool operator==(const ViTConfig&) const = default;
};

/// Named parameter tensors, iterated in name order.
class ModelParams {
public:
    void set(const std::string& name, Tensor t) { tensors_[name] = std::move(t); }
    const Tensor& at(const std::string& name) const;
    bool contains(const std::string& name) const { return tensors_.count(name) != 0; }
    const std::map<std::string, Tensor>& all() const { return tensors_; }
    /// Tensors that take gradient updates (positional tables excluded).
    std::vector<std::pair<std::string, Tensor>> trainable() const;
    void zero_grad();
    /// Deep copy; the copy shares no storage with this one.
    ModelParams clone() const;
    /// Deep copy with gradients disabled everywhere, for attacks that must
    /// leave parameter gradients untouched.
    ModelParams frozen() const;

private:
    std::map<std::string, Tensor> tensors_;
};

struct Model {
    ViTConfig config;
    ModelParams params;
};

/// Per-image random ordering of patch indices; the first `visible_count`
/// entries of each order are visible, the rest masked.
struct MaskPlan {
    std::size_t num_patches = 0;
    std::size_t visible_count = 0;
    std::vector<std::vector<std::size_t>> order;

    std::size_t batch() const { return order.size(); }
    std::vector<std::vector<std::size_t>> visible() const;
    std::vector<std::vector<std::size_t>> masked() const;
    /// restore[b][p] = position of patch p within order[b].
    std::vector<std::vector<std::size_t>> restore() const;
    /// 0/1 per (image, patch) flag, 1 = visible.
    std::vector<std::vector<char>> visibility() const;

    bool operator==(const MaskPlan&) const = default;
};

struct LatentBatch {
    Tensor z;  // [batch, visible, enc_dim]
    MaskPlan plan;
};

std::size_t visible_count(std::size_t num_patches, double mask_ratio);

MaskPlan sample_mask(std::size_t num_patches, double mask_ratio, Rng& rng, std::size_t batch = 1);
/// Identity ordering, every patch visible.
MaskPlan full_plan(std::size_t num_patches, std::size_t batch);

Tensor patchify(const Tensor& images, std::size_t patch_size);
Tensor unpatchify(const Tensor& patches, std::size_t patch_size, std::size_t channels);

/// Fixed 2-D sine/cosine table of shape [grid*grid, dim].
Tensor sincos_pos_embed(std::size_t dim, std::size_t grid);

ModelParams init_params(const ViTConfig& config, Rng& rng);

LatentBatch encode(const Model& model, const Tensor& patches, const MaskPlan& plan);
Tensor decode(const Model& model, const LatentBatch& latent);
/// unpatchify(decode(encode(patchify(images)))).
Tensor forward_autoencoder(const Model& model, const Tensor& images, const MaskPlan& plan);
/// Encoder tokens for the unmasked image, [batch, num_patches, enc_dim].
Tensor features(const Model& model, const Tensor& images);
Tensor classify(const Model& model, const Tensor& images);

/// Reconstruction loss between x_re and the natural images; honors
/// `masked_only_loss`.
Tensor reconstruction_loss(const Model& model, const Tensor& reconstruction, const Tensor& images,
                           const MaskPlan& plan);

/// Group index for layer-wise lr decay: 0 = patch embedding, i+1 = encoder
/// block i, enc_layers+1 = encoder norm and head. Decoder tensors map to
/// enc_layers+1 as well.
std::size_t layer_id(const std::string& name, std::size_t enc_layers);

}  // namespace mimir::vit
