#include "mimir/vit.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace mimir::vit {

namespace {

Tensor linear(const Tensor& x, const ModelParams& p, const std::string& prefix) {
    return add(matmul(x, p.at(prefix + ".weight")), p.at(prefix + ".bias"));
}

Tensor norm(const Tensor& x, const ModelParams& p, const std::string& prefix) {
    return layer_norm(x, p.at(prefix + ".gamma"), p.at(prefix + ".beta"));
}

Tensor attention(const Tensor& x, const ModelParams& p, const std::string& prefix, std::size_t heads) {
    std::size_t b = x.dim(0), t = x.dim(1), d = x.dim(2), dh = d / heads;
    auto split = [&](const Tensor& y) { return permute(reshape(y, {b, t, heads, dh}), {0, 2, 1, 3}); };
    Tensor q = split(linear(x, p, prefix + ".q"));
    Tensor k = split(linear(x, p, prefix + ".k"));
    Tensor v = split(linear(x, p, prefix + ".v"));
    Tensor scores = scale(matmul(q, transpose(k, -2, -1)), 1.0 / std::sqrt(static_cast<double>(dh)));
    Tensor out = matmul(softmax(scores, -1), v);
    out = reshape(permute(out, {0, 2, 1, 3}), {b, t, d});
    return linear(out, p, prefix + ".proj");
}

// Pre-norm ViT block.
Tensor block(const Tensor& x, const ModelParams& p, const std::string& prefix, std::size_t heads) {
    Tensor h = add(x, attention(norm(x, p, prefix + ".norm1"), p, prefix + ".attn", heads));
    Tensor m = linear(gelu(linear(norm(h, p, prefix + ".norm2"), p, prefix + ".mlp.fc1")), p, prefix + ".mlp.fc2");
    return add(h, m);
}

void check_plan(const MaskPlan& plan, std::size_t batch, std::size_t num_patches) {
    if (plan.num_patches != num_patches) {
        throw std::invalid_argument("mask plan covers " + std::to_string(plan.num_patches) + " patches, input has " +
                                    std::to_string(num_patches));
    }
    if (plan.batch() != batch) throw std::invalid_argument("mask plan batch size mismatch");
    if (plan.visible_count == 0 || plan.visible_count > num_patches)
        throw std::invalid_argument("mask plan has invalid visible count");
}

void add_linear(ModelParams& p, const std::string& name, std::size_t in, std::size_t out, Rng& rng) {
    std::vector<double> w(in * out);
    for (auto& v : w) v = rng.truncated_normal(0.02);
    p.set(name + ".weight", Tensor::create({in, out}, std::move(w), true));
    p.set(name + ".bias", Tensor::zeros({out}, true));
}

void add_norm(ModelParams& p, const std::string& name, std::size_t dim) {
    p.set(name + ".gamma", Tensor::full({dim}, 1.0, true));
    p.set(name + ".beta", Tensor::zeros({dim}, true));
}

void add_block(ModelParams& p, const std::string& prefix, std::size_t dim, std::size_t mlp_ratio, Rng& rng) {
    add_norm(p, prefix + ".norm1", dim);
    add_linear(p, prefix + ".attn.q", dim, dim, rng);
    add_linear(p, prefix + ".attn.k", dim, dim, rng);
    add_linear(p, prefix + ".attn.v", dim, dim, rng);
    add_linear(p, prefix + ".attn.proj", dim, dim, rng);
    add_norm(p, prefix + ".norm2", dim);
    add_linear(p, prefix + ".mlp.fc1", dim, dim * mlp_ratio, rng);
    add_linear(p, prefix + ".mlp.fc2", dim * mlp_ratio, dim, rng);
}

std::string enc_block(std::size_t i) { return "enc.blocks." + std::to_string(i); }
std::string dec_block(std::size_t i) { return "dec.blocks." + std::to_string(i); }

}  // namespace

void ViTConfig::validate() const {
    auto fail = [](const std::string& msg) { throw std::invalid_argument("ViTConfig: " + msg); };
    if (image_size == 0 || patch_size == 0 || channels == 0) fail("sizes must be positive");
    if (image_size % patch_size != 0) fail("image_size must be divisible by patch_size");
    if (enc_layers == 0) fail("enc_layers must be positive");
    if (enc_heads == 0 || enc_dim % enc_heads != 0) fail("enc_dim must be divisible by enc_heads");
    if (dec_heads == 0 || dec_dim % dec_heads != 0) fail("dec_dim must be divisible by dec_heads");
    if (enc_dim % 4 != 0 || dec_dim % 4 != 0) fail("embedding dims must be divisible by 4 for 2-D sin/cos tables");
    if (enc_mlp_ratio == 0 || dec_mlp_ratio == 0) fail("mlp ratios must be positive");
    if (num_classes == 0) fail("num_classes must be positive");
    if (!(mask_ratio >= 0.0 && mask_ratio < 1.0)) fail("mask_ratio must lie in [0, 1)");
}

const Tensor& ModelParams::at(const std::string& name) const {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw std::out_of_range("ModelParams: no tensor named '" + name + "'");
    return it->second;
}

std::vector<std::pair<std::string, Tensor>> ModelParams::trainable() const {
    std::vector<std::pair<std::string, Tensor>> out;
    for (const auto& [name, t] : tensors_) {
        if (t.requires_grad()) out.emplace_back(name, t);
    }
    return out;
}

void ModelParams::zero_grad() {
    for (auto& [name, t] : tensors_) t.zero_grad();
}

ModelParams ModelParams::clone() const {
    ModelParams c;
    for (const auto& [name, t] : tensors_) c.set(name, t.detach(t.requires_grad()));
    return c;
}

ModelParams ModelParams::frozen() const {
    ModelParams c;
    for (const auto& [name, t] : tensors_) c.set(name, t.detach(false));
    return c;
}

std::vector<std::vector<std::size_t>> MaskPlan::visible() const {
    std::vector<std::vector<std::size_t>> out;
    for (const auto& o : order) out.emplace_back(o.begin(), o.begin() + static_cast<std::ptrdiff_t>(visible_count));
    return out;
}

std::vector<std::vector<std::size_t>> MaskPlan::masked() const {
    std::vector<std::vector<std::size_t>> out;
    for (const auto& o : order) out.emplace_back(o.begin() + static_cast<std::ptrdiff_t>(visible_count), o.end());
    return out;
}

std::vector<std::vector<std::size_t>> MaskPlan::restore() const {
    std::vector<std::vector<std::size_t>> out;
    for (const auto& o : order) {
        std::vector<std::size_t> r(o.size());
        for (std::size_t pos = 0; pos < o.size(); ++pos) r[o[pos]] = pos;
        out.push_back(std::move(r));
    }
    return out;
}

std::vector<std::vector<char>> MaskPlan::visibility() const {
    std::vector<std::vector<char>> out;
    for (const auto& o : order) {
        std::vector<char> v(num_patches, 0);
        for (std::size_t i = 0; i < visible_count; ++i) v[o[i]] = 1;
        out.push_back(std::move(v));
    }
    return out;
}

std::size_t visible_count(std::size_t num_patches, double mask_ratio) {
    if (!(mask_ratio >= 0.0 && mask_ratio < 1.0)) throw std::invalid_argument("mask_ratio must lie in [0, 1)");
    // The epsilon absorbs representation error such as 16 * 0.25 = 3.999...
    auto keep = static_cast<std::size_t>(std::floor(static_cast<double>(num_patches) * (1.0 - mask_ratio) + 1e-9));
    return std::max<std::size_t>(1, std::min(keep, num_patches));
}

MaskPlan sample_mask(std::size_t num_patches, double mask_ratio, Rng& rng, std::size_t batch) {
    if (num_patches == 0) throw std::invalid_argument("sample_mask: no patches");
    MaskPlan plan;
    plan.num_patches = num_patches;
    plan.visible_count = visible_count(num_patches, mask_ratio);
    for (std::size_t b = 0; b < batch; ++b) {
        std::vector<std::size_t> perm(num_patches);
        std::iota(perm.begin(), perm.end(), std::size_t{0});
        for (std::size_t i = num_patches; i-- > 1;) std::swap(perm[i], perm[rng.below(i + 1)]);
        plan.order.push_back(std::move(perm));
    }
    return plan;
}

MaskPlan full_plan(std::size_t num_patches, std::size_t batch) {
    MaskPlan plan;
    plan.num_patches = num_patches;
    plan.visible_count = num_patches;
    std::vector<std::size_t> id(num_patches);
    std::iota(id.begin(), id.end(), std::size_t{0});
    plan.order.assign(batch, id);
    return plan;
}

Tensor patchify(const Tensor& images, std::size_t patch_size) {
    if (images.rank() != 4) throw std::invalid_argument("patchify: expected [batch, C, H, W]");
    std::size_t b = images.dim(0), c = images.dim(1), h = images.dim(2), w = images.dim(3);
    if (h != w) throw std::invalid_argument("patchify: images must be square");
    if (patch_size == 0 || h % patch_size != 0)
        throw std::invalid_argument("patchify: image size " + std::to_string(h) + " not divisible by patch size " +
                                    std::to_string(patch_size));
    std::size_t g = h / patch_size;
    Tensor t = reshape(images, {b, c, g, patch_size, g, patch_size});
    t = permute(t, {0, 2, 4, 3, 5, 1});
    return reshape(t, {b, g * g, patch_size * patch_size * c});
}

Tensor unpatchify(const Tensor& patches, std::size_t patch_size, std::size_t channels) {
    if (patches.rank() != 3) throw std::invalid_argument("unpatchify: expected [batch, patches, dim]");
    std::size_t b = patches.dim(0), n = patches.dim(1);
    auto g = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(n))));
    if (g * g != n || patches.dim(2) != patch_size * patch_size * channels)
        throw std::invalid_argument("unpatchify: inconsistent patch layout");
    Tensor t = reshape(patches, {b, g, g, patch_size, patch_size, channels});
    t = permute(t, {0, 5, 1, 3, 2, 4});
    return reshape(t, {b, channels, g * patch_size, g * patch_size});
}

Tensor sincos_pos_embed(std::size_t dim, std::size_t grid) {
    if (dim % 4 != 0) throw std::invalid_argument("sincos_pos_embed: dim must be divisible by 4");
    std::size_t quarter = dim / 4;
    std::vector<double> v(grid * grid * dim);
    for (std::size_t r = 0; r < grid; ++r) {
        for (std::size_t c = 0; c < grid; ++c) {
            double* row = v.data() + (r * grid + c) * dim;
            for (std::size_t i = 0; i < quarter; ++i) {
                double omega = 1.0 / std::pow(10000.0, static_cast<double>(i) / static_cast<double>(quarter));
                // Column coordinate fills the first half, row coordinate the second.
                row[i] = std::sin(static_cast<double>(c) * omega);
                row[quarter + i] = std::cos(static_cast<double>(c) * omega);
                row[2 * quarter + i] = std::sin(static_cast<double>(r) * omega);
                row[3 * quarter + i] = std::cos(static_cast<double>(r) * omega);
            }
        }
    }
    return Tensor::create({grid * grid, dim}, std::move(v), false);
}

ModelParams init_params(const ViTConfig& config, Rng& rng) {
    config.validate();
    ModelParams p;
    add_linear(p, "patch_embed", config.patch_dim(), config.enc_dim, rng);
    p.set("enc.pos", sincos_pos_embed(config.enc_dim, config.grid()));
    for (std::size_t i = 0; i < config.enc_layers; ++i)
        add_block(p, enc_block(i), config.enc_dim, config.enc_mlp_ratio, rng);
    add_norm(p, "enc.norm", config.enc_dim);

    add_linear(p, "dec.embed", config.enc_dim, config.dec_dim, rng);
    std::vector<double> m(config.dec_dim);
    for (auto& v : m) v = rng.truncated_normal(0.02);
    p.set("dec.mask_token", Tensor::create({config.dec_dim}, std::move(m), true));
    p.set("dec.pos", sincos_pos_embed(config.dec_dim, config.grid()));
    for (std::size_t i = 0; i < config.dec_layers; ++i)
        add_block(p, dec_block(i), config.dec_dim, config.dec_mlp_ratio, rng);
    add_norm(p, "dec.norm", config.dec_dim);
    add_linear(p, "dec.pred", config.dec_dim, config.patch_dim(), rng);

    p.set("head.weight", Tensor::zeros({config.enc_dim, config.num_classes}, true));
    p.set("head.bias", Tensor::zeros({config.num_classes}, true));
    return p;
}

LatentBatch encode(const Model& model, const Tensor& patches, const MaskPlan& plan) {
    const auto& cfg = model.config;
    const auto& p = model.params;
    if (patches.rank() != 3 || patches.dim(2) != cfg.patch_dim())
        throw std::invalid_argument("encode: patches must be [batch, num_patches, " + std::to_string(cfg.patch_dim()) +
                                    "]");
    std::size_t b = patches.dim(0), n = patches.dim(1);
    if (n != cfg.num_patches()) throw std::invalid_argument("encode: patch count does not match config");
    check_plan(plan, b, n);

    auto vis = plan.visible();
    Tensor x = gather_rows(patches, vis);
    x = add(matmul(x, p.at("patch_embed.weight")), p.at("patch_embed.bias"));
    x = add(x, gather_rows(broadcast_to(p.at("enc.pos"), {b, n, cfg.enc_dim}), vis));
    for (std::size_t i = 0; i < cfg.enc_layers; ++i) x = block(x, p, enc_block(i), cfg.enc_heads);
    return {norm(x, p, "enc.norm"), plan};
}

Tensor decode(const Model& model, const LatentBatch& latent) {
    const auto& cfg = model.config;
    const auto& p = model.params;
    const MaskPlan& plan = latent.plan;
    const Tensor& z = latent.z;
    if (z.rank() != 3 || z.dim(2) != cfg.enc_dim) throw std::invalid_argument("decode: latent has wrong shape");
    if (z.dim(0) != plan.batch() || z.dim(1) != plan.visible_count)
        throw std::invalid_argument("decode: latent does not match its mask plan");
    check_plan(plan, z.dim(0), cfg.num_patches());

    std::size_t b = z.dim(0), n = plan.num_patches, masked = n - plan.visible_count;
    Tensor y = add(matmul(z, p.at("dec.embed.weight")), p.at("dec.embed.bias"));
    if (masked > 0) {
        Tensor tokens = broadcast_to(p.at("dec.mask_token"), {b, masked, cfg.dec_dim});
        y = concat({y, tokens}, 1);
    }
    y = gather_rows(y, plan.restore());
    y = add(y, p.at("dec.pos"));
    for (std::size_t i = 0; i < cfg.dec_layers; ++i) y = block(y, p, dec_block(i), cfg.dec_heads);
    y = norm(y, p, "dec.norm");
    return add(matmul(y, p.at("dec.pred.weight")), p.at("dec.pred.bias"));
}

Tensor forward_autoencoder(const Model& model, const Tensor& images, const MaskPlan& plan) {
    Tensor patches = patchify(images, model.config.patch_size);
    Tensor rec = decode(model, encode(model, patches, plan));
    return unpatchify(rec, model.config.patch_size, model.config.channels);
}

Tensor features(const Model& model, const Tensor& images) {
    Tensor patches = patchify(images, model.config.patch_size);
    return encode(model, patches, full_plan(patches.dim(1), patches.dim(0))).z;
}

Tensor classify(const Model& model, const Tensor& images) {
    if (model.config.num_classes == 0) throw std::invalid_argument("classify: num_classes = 0");
    Tensor pooled = mean(features(model, images), {1});
    return add(matmul(pooled, model.params.at("head.weight")), model.params.at("head.bias"));
}

Tensor reconstruction_loss(const Model& model, const Tensor& reconstruction, const Tensor& images,
                           const MaskPlan& plan) {
    if (!model.config.masked_only_loss || plan.visible_count == plan.num_patches)
        return mse_loss(reconstruction, images);
    std::size_t ps = model.config.patch_size;
    auto masked = plan.masked();
    return mse_loss(gather_rows(patchify(reconstruction, ps), masked), gather_rows(patchify(images, ps), masked));
}

std::size_t layer_id(const std::string& name, std::size_t enc_layers) {
    if (name.rfind("patch_embed", 0) == 0 || name == "enc.pos") return 0;
    const std::string prefix = "enc.blocks.";
    if (name.rfind(prefix, 0) == 0) {
        std::size_t end = name.find('.', prefix.size());
        return std::stoul(name.substr(prefix.size(), end - prefix.size())) + 1;
    }
    return enc_layers + 1;
}

}  // namespace mimir::vit
