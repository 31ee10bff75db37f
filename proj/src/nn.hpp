#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace dolphin {

struct NamedParam {
    std::string name;
    Tensor tensor;
};

/// Deterministic stream of per-parameter init seeds.
class SeedStream {
public:
    explicit SeedStream(std::uint64_t root) : root_(root) {}
    std::uint64_t next() { return root_ * 0x9e3779b97f4a7c15ull + (++counter_); }

private:
    std::uint64_t root_;
    std::uint64_t counter_ = 0;
};

constexpr double kInitStd = 0.02;

struct Linear {
    Tensor weight;  // [in x out]
    Tensor bias;    // [out]

    Linear() = default;
    Linear(std::size_t in, std::size_t out, SeedStream& seeds);
    Tensor forward(const Tensor& x) const;  // [.. x in] -> [.. x out]
    void collect(const std::string& prefix, std::vector<NamedParam>& out) const;
};

struct LayerNormParams {
    Tensor gamma;
    Tensor beta;

    LayerNormParams() = default;
    explicit LayerNormParams(std::size_t d);
    Tensor forward(const Tensor& x) const { return layer_norm(x, gamma, beta); }
    void collect(const std::string& prefix, std::vector<NamedParam>& out) const;
};

/// Multi-head attention, softmax(QK^T/sqrt(D/h))V per head with output
/// projection. Query and key/value token sets may differ; self-attention is
/// the q == kv case. `causal` masks keys j > i (only valid when L_q == L_kv).
struct CrossAttentionLayer {
    std::size_t dim = 0;
    std::size_t heads = 1;
    Linear wq, wk, wv, wo;

    CrossAttentionLayer() = default;
    CrossAttentionLayer(std::size_t d, std::size_t h, SeedStream& seeds);
    Tensor forward(const Tensor& q_tokens, const Tensor& kv_tokens, bool causal = false) const;
    void collect(const std::string& prefix, std::vector<NamedParam>& out) const;
};

struct FFNLayer {
    Linear fc1;  // D -> 4D
    Linear fc2;  // 4D -> D

    FFNLayer() = default;
    FFNLayer(std::size_t d, SeedStream& seeds);
    Tensor forward(const Tensor& x) const { return fc2.forward(gelu(fc1.forward(x))); }
    void collect(const std::string& prefix, std::vector<NamedParam>& out) const;
};

/// Pre-LN transformer block: x += SelfAttn(LN(x)); x += FFN(LN(x)).
struct ViTBlock {
    LayerNormParams ln1, ln2;
    CrossAttentionLayer attn;
    FFNLayer ffn;

    ViTBlock() = default;
    ViTBlock(std::size_t d, std::size_t heads, SeedStream& seeds);
    Tensor forward(const Tensor& tokens) const;
    void collect(const std::string& prefix, std::vector<NamedParam>& out) const;
};

/// Non-overlapping patch projection with learned positional embeddings.
/// Input maps whose sides are not multiples of the patch size are zero
/// padded on the right/bottom first.
struct PatchEmbed {
    std::size_t patch = 0;
    std::size_t grid_h = 0, grid_w = 0;
    Tensor proj_w;   // [D x C x p x p], applied as a stride-p convolution
    Tensor proj_b;   // [D]
    Tensor pos_emb;  // [grid_h*grid_w x D]

    PatchEmbed() = default;
    PatchEmbed(std::size_t channels, std::size_t h, std::size_t w, std::size_t p, std::size_t d, SeedStream& seeds);
    std::size_t token_count() const { return grid_h * grid_w; }
    Tensor forward(const Tensor& map) const;  // [C x H x W] -> [L x D]
    void collect(const std::string& prefix, std::vector<NamedParam>& out) const;
};

struct MultiScaleFeature {
    Tensor tokens;  // [L_ms x D]
    std::vector<std::size_t> segment_lengths;  // 1/8, 1/16, 1/32 in that order
};

/// Segment lengths for the three pyramid levels after padding H, W up to
/// multiples of 32: (H'/8 * W'/8, H'/16 * W'/16, H'/32 * W'/32).
std::vector<std::size_t> pyramid_segment_lengths(std::size_t h, std::size_t w);

/// Strided-conv pyramid: a stride-4 stem then three stride-2 conv levels,
/// each level's map flattened to tokens of width D and concatenated
/// coarse-grid-first as (1/8, 1/16, 1/32).
struct PyramidModule {
    std::size_t in_h = 0, in_w = 0;      // declared input size (pre padding)
    std::size_t pad_h = 0, pad_w = 0;    // padded to multiples of 32
    Tensor stem_w, stem_b;               // k4 s4, C -> D
    Tensor lvl_w[3], lvl_b[3];           // k3 s2 p1, D -> D

    PyramidModule() = default;
    PyramidModule(std::size_t channels, std::size_t h, std::size_t w, std::size_t d, SeedStream& seeds);
    MultiScaleFeature forward(const Tensor& map) const;  // [C x H x W]
    void collect(const std::string& prefix, std::vector<NamedParam>& out) const;
};

}  // namespace dolphin
