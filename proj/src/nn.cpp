#include "nn.hpp"

#include <cmath>

namespace dolphin {

namespace {

std::size_t round_up(std::size_t v, std::size_t m) { return (v + m - 1) / m * m; }

Tensor map_to_tokens(const Tensor& map) {
    // [D x h x w] -> [h*w x D]
    const std::size_t d = map.dim(0), n = map.dim(1) * map.dim(2);
    return transpose2d(reshape(map, {d, n}));
}

}  // namespace

Linear::Linear(std::size_t in, std::size_t out, SeedStream& seeds)
    : weight(Tensor::randn({in, out}, seeds.next(), kInitStd).set_requires_grad(true)),
      bias(Tensor::zeros({out}).set_requires_grad(true)) {}

Tensor Linear::forward(const Tensor& x) const { return add(matmul(x, weight), bias); }

void Linear::collect(const std::string& prefix, std::vector<NamedParam>& out) const {
    out.push_back({prefix + ".weight", weight});
    out.push_back({prefix + ".bias", bias});
}

LayerNormParams::LayerNormParams(std::size_t d)
    : gamma(Tensor::ones({d}).set_requires_grad(true)), beta(Tensor::zeros({d}).set_requires_grad(true)) {}

void LayerNormParams::collect(const std::string& prefix, std::vector<NamedParam>& out) const {
    out.push_back({prefix + ".gamma", gamma});
    out.push_back({prefix + ".beta", beta});
}

CrossAttentionLayer::CrossAttentionLayer(std::size_t d, std::size_t h, SeedStream& seeds)
    : dim(d), heads(h), wq(d, d, seeds), wk(d, d, seeds), wv(d, d, seeds), wo(d, d, seeds) {
    if (h == 0 || d % h != 0)
        throw ShapeError("attention width " + std::to_string(d) + " not divisible by " + std::to_string(h) + " heads");
}

Tensor CrossAttentionLayer::forward(const Tensor& q_tokens, const Tensor& kv_tokens, bool causal) const {
    if (q_tokens.rank() != 2 || kv_tokens.rank() != 2 || q_tokens.dim(1) != dim || kv_tokens.dim(1) != dim)
        throw ShapeError("attention expects [L x " + std::to_string(dim) + "] tokens, got " +
                         shape_str(q_tokens.shape()) + " and " + shape_str(kv_tokens.shape()));
    const std::size_t lq = q_tokens.dim(0), lkv = kv_tokens.dim(0);
    if (causal && lq != lkv) throw ShapeError("causal attention requires L_q == L_kv");
    const std::size_t dh = dim / heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

    Tensor q = wq.forward(q_tokens);
    Tensor k = wk.forward(kv_tokens);
    Tensor v = wv.forward(kv_tokens);
    return wo.forward(attention_core(q, k, v, heads, inv_sqrt, causal));
}

void CrossAttentionLayer::collect(const std::string& prefix, std::vector<NamedParam>& out) const {
    wq.collect(prefix + ".wq", out);
    wk.collect(prefix + ".wk", out);
    wv.collect(prefix + ".wv", out);
    wo.collect(prefix + ".wo", out);
}

FFNLayer::FFNLayer(std::size_t d, SeedStream& seeds) : fc1(d, 4 * d, seeds), fc2(4 * d, d, seeds) {}

void FFNLayer::collect(const std::string& prefix, std::vector<NamedParam>& out) const {
    fc1.collect(prefix + ".fc1", out);
    fc2.collect(prefix + ".fc2", out);
}

ViTBlock::ViTBlock(std::size_t d, std::size_t heads, SeedStream& seeds)
    : ln1(d), ln2(d), attn(d, heads, seeds), ffn(d, seeds) {}

Tensor ViTBlock::forward(const Tensor& tokens) const {
    Tensor normed = ln1.forward(tokens);
    Tensor x = add(tokens, attn.forward(normed, normed));
    return add(x, ffn.forward(ln2.forward(x)));
}

void ViTBlock::collect(const std::string& prefix, std::vector<NamedParam>& out) const {
    ln1.collect(prefix + ".ln1", out);
    ln2.collect(prefix + ".ln2", out);
    attn.collect(prefix + ".attn", out);
    ffn.collect(prefix + ".ffn", out);
}

PatchEmbed::PatchEmbed(std::size_t channels, std::size_t h, std::size_t w, std::size_t p, std::size_t d,
                       SeedStream& seeds)
    : patch(p),
      grid_h(round_up(h, p) / p),
      grid_w(round_up(w, p) / p),
      proj_w(Tensor::randn({d, channels, p, p}, seeds.next(), kInitStd).set_requires_grad(true)),
      proj_b(Tensor::zeros({d}).set_requires_grad(true)),
      pos_emb(Tensor::randn({grid_h * grid_w, d}, seeds.next(), kInitStd).set_requires_grad(true)) {
    if (p == 0) throw ShapeError("patch size must be >= 1");
}

Tensor PatchEmbed::forward(const Tensor& map) const {
    Tensor x = map;
    const std::size_t ph = grid_h * patch, pw = grid_w * patch;
    if (map.dim(1) != ph || map.dim(2) != pw) x = pad2d(map, ph, pw);
    Tensor grid = conv2d(x, proj_w, proj_b, patch, 0);
    return add(map_to_tokens(grid), pos_emb);
}

void PatchEmbed::collect(const std::string& prefix, std::vector<NamedParam>& out) const {
    out.push_back({prefix + ".proj_w", proj_w});
    out.push_back({prefix + ".proj_b", proj_b});
    out.push_back({prefix + ".pos_emb", pos_emb});
}

std::vector<std::size_t> pyramid_segment_lengths(std::size_t h, std::size_t w) {
    const std::size_t ph = round_up(h, 32), pw = round_up(w, 32);
    return {(ph / 8) * (pw / 8), (ph / 16) * (pw / 16), (ph / 32) * (pw / 32)};
}

PyramidModule::PyramidModule(std::size_t channels, std::size_t h, std::size_t w, std::size_t d, SeedStream& seeds)
    : in_h(h), in_w(w), pad_h(round_up(h, 32)), pad_w(round_up(w, 32)) {
    if (pad_h < 32 || pad_w < 32) throw ShapeError("pyramid input must be >= 32 in each spatial dim after padding");
    stem_w = Tensor::randn({d, channels, 4, 4}, seeds.next(), kInitStd).set_requires_grad(true);
    stem_b = Tensor::zeros({d}).set_requires_grad(true);
    for (int i = 0; i < 3; ++i) {
        lvl_w[i] = Tensor::randn({d, d, 3, 3}, seeds.next(), kInitStd).set_requires_grad(true);
        lvl_b[i] = Tensor::zeros({d}).set_requires_grad(true);
    }
}

MultiScaleFeature PyramidModule::forward(const Tensor& map) const {
    if (map.rank() != 3) throw ShapeError("pyramid expects [C x H x W], got " + shape_str(map.shape()));
    if (map.dim(1) != in_h || map.dim(2) != in_w)
        throw ShapeError("pyramid configured for " + std::to_string(in_h) + "x" + std::to_string(in_w) + ", got " +
                         shape_str(map.shape()));
    Tensor x = map;
    if (in_h != pad_h || in_w != pad_w) x = pad2d(map, pad_h, pad_w);
    Tensor stem = gelu(conv2d(x, stem_w, stem_b, 4, 0));  // 1/4
    Tensor m8 = gelu(conv2d(stem, lvl_w[0], lvl_b[0], 2, 1));
    Tensor m16 = gelu(conv2d(m8, lvl_w[1], lvl_b[1], 2, 1));
    Tensor m32 = gelu(conv2d(m16, lvl_w[2], lvl_b[2], 2, 1));
    MultiScaleFeature out;
    out.segment_lengths = {m8.dim(1) * m8.dim(2), m16.dim(1) * m16.dim(2), m32.dim(1) * m32.dim(2)};
    out.tokens = concat({map_to_tokens(m8), map_to_tokens(m16), map_to_tokens(m32)}, 0);
    return out;
}

void PyramidModule::collect(const std::string& prefix, std::vector<NamedParam>& out) const {
    out.push_back({prefix + ".stem_w", stem_w});
    out.push_back({prefix + ".stem_b", stem_b});
    for (int i = 0; i < 3; ++i) {
        out.push_back({prefix + ".lvl" + std::to_string(i) + "_w", lvl_w[i]});
        out.push_back({prefix + ".lvl" + std::to_string(i) + "_b", lvl_b[i]});
    }
}

}  // namespace dolphin
