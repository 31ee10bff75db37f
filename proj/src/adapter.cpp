#include "adapter.hpp"

namespace dolphin {

void AdapterConfig::validate() const {
    if (n_blocks < 1) throw ValueError("adapter needs at least one block");
    if (layers_per_block < 1) throw ValueError("layers_per_block must be >= 1");
    if (dim == 0 || heads == 0 || dim % heads != 0) throw ValueError("dim must be a positive multiple of heads");
    if (frames < 1) throw ValueError("frame count must be >= 1");
    if (patch == 0) throw ValueError("patch size must be >= 1");
}

AdapterBlock::AdapterBlock(std::size_t d, std::size_t heads, SeedStream& seeds)
    : gate(d), inject(d, heads, seeds), fuse(d, heads, seeds), ms_update(d, heads, seeds), ms_ffn(d, seeds) {}

void AdapterBlock::collect(const std::string& prefix, std::vector<NamedParam>& backbone_out,
                           std::vector<NamedParam>& adapter_out) const {
    adapter_out.push_back({prefix + ".beta", gate.beta});
    inject.collect(prefix + ".inject", adapter_out);
    fuse.collect(prefix + ".fuse", adapter_out);
    ms_update.collect(prefix + ".ms_update", adapter_out);
    ms_ffn.collect(prefix + ".ms_ffn", adapter_out);
    for (std::size_t i = 0; i < backbone.size(); ++i)
        backbone[i].collect(prefix + ".vit" + std::to_string(i), backbone_out);
}

ModalityPathway::ModalityPathway(std::size_t channels, std::size_t h, std::size_t w, std::size_t patch,
                                 const AdapterConfig& cfg, SeedStream& encoder_seeds, SeedStream& adapter_seeds)
    : embed(channels, h, w, patch, cfg.dim, encoder_seeds), pyramid(channels, h, w, cfg.dim, adapter_seeds) {
    blocks.reserve(cfg.n_blocks);
    for (std::size_t i = 0; i < cfg.n_blocks; ++i) {
        AdapterBlock block(cfg.dim, cfg.heads, adapter_seeds);
        // backbone weights come from the encoder stream so they are
        // independent of the adapter parameter layout
        for (std::size_t l = 0; l < cfg.layers_per_block; ++l)
            block.backbone.emplace_back(cfg.dim, cfg.heads, encoder_seeds);
        blocks.push_back(std::move(block));
    }
}

AVAdapter::AVAdapter(const AdapterConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    SeedStream vis_encoder(seed * 4 + 1), aud_encoder(seed * 4 + 2), vis_adapter(seed * 4 + 3),
        aud_adapter(seed * 4 + 4);
    visual_ = ModalityPathway(cfg.vis_channels, cfg.vis_h, cfg.vis_w, cfg.patch, cfg_, vis_encoder, vis_adapter);
    audio_ = ModalityPathway(cfg.aud_channels, cfg.aud_h, cfg.aud_w, cfg.patch, cfg_, aud_encoder, aud_adapter);
}

Tensor AVAdapter::inject_cross_modal(const MultiScaleFeature& ms, const Tensor& other_global,
                                     const CrossAttentionLayer& layer) {
    return layer.forward(ms.tokens, other_global);
}

Tensor AVAdapter::fuse_global(const Tensor& global_tokens, const Tensor& injected, const FusionGate& gate,
                              const CrossAttentionLayer& layer) {
    Tensor read = layer.forward(global_tokens, injected);
    return add(global_tokens, mul(read, gate.beta));
}

void AVAdapter::advance_block(AdapterState& visual, AdapterState& audio) const {
    if (visual.block_index != audio.block_index) throw ValueError("modality pathways out of step");
    if (visual.block_index > cfg_.n_blocks)
        throw ValueError("advance_block past block " + std::to_string(cfg_.n_blocks));
    const std::size_t i = visual.block_index - 1;
    const AdapterBlock& vb = visual_.blocks[i];
    const AdapterBlock& ab = audio_.blocks[i];

    // both directions read the pre-update globals
    Tensor av = inject_cross_modal(visual.ms, audio.global_tokens, vb.inject);
    Tensor va = inject_cross_modal(audio.ms, visual.global_tokens, ab.inject);

    Tensor v_hat = fuse_global(visual.global_tokens, av, vb.gate, vb.fuse);
    Tensor a_hat = fuse_global(audio.global_tokens, va, ab.gate, ab.fuse);

    for (const ViTBlock& blk : vb.backbone) v_hat = blk.forward(v_hat);
    for (const ViTBlock& blk : ab.backbone) a_hat = blk.forward(a_hat);
    visual.global_tokens = v_hat;
    audio.global_tokens = a_hat;

    Tensor v_ms = add(visual.ms.tokens, vb.ms_update.forward(visual.ms.tokens, visual.global_tokens));
    visual.ms.tokens = add(v_ms, vb.ms_ffn.forward(v_ms));
    Tensor a_ms = add(audio.ms.tokens, ab.ms_update.forward(audio.ms.tokens, audio.global_tokens));
    audio.ms.tokens = add(a_ms, ab.ms_ffn.forward(a_ms));

    ++visual.block_index;
    ++audio.block_index;
}

AdapterState AVAdapter::init_visual_state(const Tensor& frame) const {
    AdapterState s;
    s.global_tokens = visual_.embed.forward(frame);
    s.ms = visual_.pyramid.forward(frame);
    return s;
}

AdapterState AVAdapter::init_audio_state(const Tensor& spectrogram) const {
    AdapterState s;
    s.global_tokens = audio_.embed.forward(spectrogram);
    s.ms = audio_.pyramid.forward(spectrogram);
    return s;
}

std::pair<Tensor, Tensor> AVAdapter::forward(const Tensor& frames, const Tensor& specs) const {
    if (frames.rank() != 5 || specs.rank() != 5)
        throw ShapeError("adapter forward expects rank-5 frame/spectrogram stacks");
    if (frames.dim(0) != specs.dim(0)) throw ValueError("modalities disagree on batch size");
    if (frames.dim(1) != cfg_.frames || specs.dim(1) != cfg_.frames)
        throw ValueError("frame count does not match configured T=" + std::to_string(cfg_.frames));
    const std::size_t b = frames.dim(0), t = frames.dim(1);

    std::vector<Tensor> vis_rows, aud_rows;
    for (std::size_t bi = 0; bi < b; ++bi) {
        std::vector<Tensor> vis_frames, aud_frames;
        for (std::size_t ti = 0; ti < t; ++ti) {
            Tensor frame = reshape(slice(slice(frames, 0, bi, 1), 1, ti, 1),
                                   {frames.dim(2), frames.dim(3), frames.dim(4)});
            Tensor spec = reshape(slice(slice(specs, 0, bi, 1), 1, ti, 1), {specs.dim(2), specs.dim(3), specs.dim(4)});
            AdapterState vs = init_visual_state(frame);
            AdapterState as = init_audio_state(spec);
            for (std::size_t i = 0; i < cfg_.n_blocks; ++i) advance_block(vs, as);
            vis_frames.push_back(reshape(vs.global_tokens, {1, 1, vs.global_tokens.dim(0), cfg_.dim}));
            aud_frames.push_back(reshape(as.global_tokens, {1, 1, as.global_tokens.dim(0), cfg_.dim}));
        }
        vis_rows.push_back(concat(vis_frames, 1));
        aud_rows.push_back(concat(aud_frames, 1));
    }
    return {concat(vis_rows, 0), concat(aud_rows, 0)};
}

Tensor AVAdapter::backbone_only(const Tensor& map, bool audio_modality) const {
    const ModalityPathway& path = audio_modality ? audio_ : visual_;
    Tensor tokens = path.embed.forward(map);
    for (const AdapterBlock& block : path.blocks)
        for (const ViTBlock& blk : block.backbone) tokens = blk.forward(tokens);
    return tokens;
}

void AVAdapter::collect_params(std::vector<NamedParam>& visual_encoder, std::vector<NamedParam>& audio_encoder,
                               std::vector<NamedParam>& adapter) const {
    visual_.embed.collect("visual.embed", visual_encoder);
    audio_.embed.collect("audio.embed", audio_encoder);
    visual_.pyramid.collect("visual.pyramid", adapter);
    audio_.pyramid.collect("audio.pyramid", adapter);
    for (std::size_t i = 0; i < visual_.blocks.size(); ++i)
        visual_.blocks[i].collect("visual.block" + std::to_string(i), visual_encoder, adapter);
    for (std::size_t i = 0; i < audio_.blocks.size(); ++i)
        audio_.blocks[i].collect("audio.block" + std::to_string(i), audio_encoder, adapter);
}

Tensor temporal_pool(const Tensor& tokens) {
    if (tokens.rank() != 4) throw ShapeError("temporal_pool expects [B x T x L x D], got " + shape_str(tokens.shape()));
    return mean(tokens, 1);
}

}  // namespace dolphin
