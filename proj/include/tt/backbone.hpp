// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tt/ops.hpp"
#include "tt/rng.hpp"
#include "tt/tensor.hpp"

namespace tt {

struct BackboneConfig {
    std::size_t image_size = 32;
    std::size_t patch_size = 4;
    std::size_t depth = 4;
    std::size_t width = 64;
    std::size_t heads = 4;
    double mlp_ratio = 4.0;
    std::size_t channels = 3;
    // Normalize the encoder output before the heads, usual ViT practice.
    // Off makes a depth-0 encoder the literal cls + pos[0].
    bool final_layer_norm = true;
    double ln_eps = 1e-5;

    std::size_t n_patches() const {
        return (image_size / patch_size) * (image_size / patch_size);
    }
    std::size_t tokens() const { return n_patches() + 1; }
    std::size_t patch_dim() const { return channels * patch_size * patch_size; }
    std::size_t mlp_hidden() const {
        return static_cast<std::size_t>(mlp_ratio * static_cast<double>(width));
    }

    void validate() const {
        if (image_size == 0 || patch_size == 0 || width == 0 || heads == 0 || channels == 0)
            throw ContractError("backbone config: extents must be positive");
        if (image_size % patch_size != 0)
            throw ContractError("backbone config: image size not divisible by patch size");
        if (width % heads != 0)
            throw ContractError("backbone config: width not divisible by heads");
        if (mlp_ratio <= 0.0) throw ContractError("backbone config: mlp_ratio must be positive");
    }
};

// Named parameter with its weight-decay eligibility (matrices decay, biases,
// norms and embeddings do not).
template <class S>
struct ParamRef {
    std::string name;
    Tensor<S> tensor;
    bool decay = false;
};

template <class S>
struct BackboneParams {
    struct Layer {
        Tensor<S> ln1_g, ln1_b, w_qkv, b_qkv, w_o, b_o;
        Tensor<S> ln2_g, ln2_b, w_fc1, b_fc1, w_fc2, b_fc2;
    };
    Tensor<S> w_patch;  // (channels P^2) x d
    Tensor<S> cls;      // d
    Tensor<S> pos;      // (N+1) x d
    std::vector<Layer> layers;
    Tensor<S> ln_f_g, ln_f_b;  // only when final_layer_norm

    std::vector<ParamRef<S>> params;  // registry in a fixed order
};

namespace detail {

template <class S>
Tensor<S> init_param(std::vector<ParamRef<S>>& registry, const std::string& name,
                     std::vector<std::size_t> shape, std::uint64_t seed, double init_std,
                     double fill, bool decay) {
    std::size_t n = shape_numel<S>(shape);
    std::vector<S> data(n, static_cast<S>(fill));
    if (init_std > 0.0) {
        Rng rng(derive_seed(seed, name));
        for (auto& v : data) v = static_cast<S>(rng.truncated_normal(init_std));
    }
    auto t = param<S>(std::move(shape), std::move(data));
    registry.push_back({name, t, decay});
    return t;
}

}  // namespace detail

// Truncated-normal(0.02) projections, zero biases and class token, unit
// layer-norm scales. Every tensor draws from its own named stream, so the
// layout of one parameter never shifts the initialization of another.
template <class S>
BackboneParams<S> init_backbone(const BackboneConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    constexpr double kStd = 0.02;
    BackboneParams<S> p;
    p.w_patch = detail::init_param<S>(p.params, "w_patch", {cfg.patch_dim(), cfg.width}, seed,
                                      kStd, 0.0, true);
    p.cls = detail::init_param<S>(p.params, "cls", {cfg.width}, seed, 0.0, 0.0, false);
    p.pos = detail::init_param<S>(p.params, "pos", {cfg.tokens(), cfg.width}, seed, kStd, 0.0,
                                  false);
    for (std::size_t l = 0; l < cfg.depth; ++l) {
        const std::string base = "layer" + std::to_string(l) + ".";
        typename BackboneParams<S>::Layer layer;
        layer.ln1_g = detail::init_param<S>(p.params, base + "ln1_g", {cfg.width}, seed, 0.0,
                                            1.0, false);
        layer.ln1_b = detail::init_param<S>(p.params, base + "ln1_b", {cfg.width}, seed, 0.0,
                                            0.0, false);
        layer.w_qkv = detail::init_param<S>(p.params, base + "w_qkv",
                                            {cfg.width, 3 * cfg.width}, seed, kStd, 0.0, true);
        layer.b_qkv = detail::init_param<S>(p.params, base + "b_qkv", {3 * cfg.width}, seed,
                                            0.0, 0.0, false);
        layer.w_o = detail::init_param<S>(p.params, base + "w_o", {cfg.width, cfg.width}, seed,
                                          kStd, 0.0, true);
        layer.b_o = detail::init_param<S>(p.params, base + "b_o", {cfg.width}, seed, 0.0, 0.0,
                                          false);
        layer.ln2_g = detail::init_param<S>(p.params, base + "ln2_g", {cfg.width}, seed, 0.0,
                                            1.0, false);
        layer.ln2_b = detail::init_param<S>(p.params, base + "ln2_b", {cfg.width}, seed, 0.0,
                                            0.0, false);
        layer.w_fc1 = detail::init_param<S>(p.params, base + "w_fc1",
                                            {cfg.width, cfg.mlp_hidden()}, seed, kStd, 0.0,
                                            true);
        layer.b_fc1 = detail::init_param<S>(p.params, base + "b_fc1", {cfg.mlp_hidden()}, seed,
                                            0.0, 0.0, false);
        layer.w_fc2 = detail::init_param<S>(p.params, base + "w_fc2",
                                            {cfg.mlp_hidden(), cfg.width}, seed, kStd, 0.0,
                                            true);
        layer.b_fc2 = detail::init_param<S>(p.params, base + "b_fc2", {cfg.width}, seed, 0.0,
                                            0.0, false);
        p.layers.push_back(std::move(layer));
    }
    if (cfg.final_layer_norm) {
        p.ln_f_g = detail::init_param<S>(p.params, "ln_f_g", {cfg.width}, seed, 0.0, 1.0,
                                         false);
        p.ln_f_b = detail::init_param<S>(p.params, "ln_f_b", {cfg.width}, seed, 0.0, 0.0,
                                         false);
    }
    return p;
}

// Splits an H x W x C row-major image into the N x (C P^2) patch matrix; row
// k is patch k in raster order, flattened row-major as (py, px, c).
template <class S>
std::vector<S> patchify(const std::vector<S>& image, const BackboneConfig& cfg) {
    cfg.validate();
    const std::size_t hw = cfg.image_size;
    const std::size_t c = cfg.channels;
    if (image.size() != hw * hw * c)
        throw ContractError("patchify: image size does not match config");
    const std::size_t p = cfg.patch_size;
    const std::size_t grid = hw / p;
    std::vector<S> out;
    out.reserve(cfg.n_patches() * cfg.patch_dim());
    for (std::size_t gy = 0; gy < grid; ++gy)
        for (std::size_t gx = 0; gx < grid; ++gx)
            for (std::size_t py = 0; py < p; ++py)
                for (std::size_t px = 0; px < p; ++px) {
                    const std::size_t row = gy * p + py;
                    const std::size_t col = gx * p + px;
                    const S* pix = image.data() + (row * hw + col) * c;
                    for (std::size_t ch = 0; ch < c; ++ch) out.push_back(pix[ch]);
                }
    return out;
}

// Encoder forward over a batch of pre-patchified images. Returns the class
// token embedding per sample (batch x width), differentiable w.r.t. params.
template <class S>
Tensor<S> encode_batch(const Tensor<S>& patches, const BackboneParams<S>& p,
                       const BackboneConfig& cfg, std::size_t batch) {
    cfg.validate();
    const std::size_t n = cfg.n_patches();
    const std::size_t tokens = cfg.tokens();
    if (patches->shape.size() != 2 || patches->shape[0] != batch * n ||
        patches->shape[1] != cfg.patch_dim())
        throw ContractError("encode_batch: patch matrix shape mismatch");

    auto embedded = matmul(patches, p.w_patch);
    auto x = assemble_tokens(embedded, p.cls, p.pos, batch, n);
    const S eps = static_cast<S>(cfg.ln_eps);
    for (std::size_t l = 0; l < cfg.depth; ++l) {
        const auto& layer = p.layers[l];
        auto normed = layer_norm(x, layer.ln1_g, layer.ln1_b, eps);
        auto qkv = affine(normed, layer.w_qkv, layer.b_qkv);
        auto attended = self_attention(qkv, batch, tokens, cfg.heads);
        auto projected = affine(attended, layer.w_o, layer.b_o);
        x = add(x, projected);
        auto normed2 = layer_norm(x, layer.ln2_g, layer.ln2_b, eps);
        auto hidden = gelu(affine(normed2, layer.w_fc1, layer.b_fc1));
        auto mlp_out = affine(hidden, layer.w_fc2, layer.b_fc2);
        x = add(x, mlp_out);
        if (!all_finite(x->value))
            throw NumericError("encode: non-finite activations after layer " +
                               std::to_string(l));
    }
    if (cfg.final_layer_norm) x = layer_norm(x, p.ln_f_g, p.ln_f_b, eps);
    return select_rows(x, 0, tokens, batch);
}

// Convenience wrapper: one raw image in, one embedding out.
template <class S>
std::vector<S> encode(const std::vector<S>& image, const BackboneParams<S>& p,
                      const BackboneConfig& cfg) {
    auto pat = constant<S>({cfg.n_patches(), cfg.patch_dim()}, patchify(image, cfg));
    NoGradGuard guard;
    auto z = encode_batch(pat, p, cfg, 1);
    return z->value;
}

}  // namespace tt
