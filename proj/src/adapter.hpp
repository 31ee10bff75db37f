#pragma once

#include <vector>

#include "nn.hpp"
#include "tensor.hpp"

namespace dolphin {

struct AdapterConfig {
    std::size_t n_blocks = 2;
    std::size_t layers_per_block = 1;
    std::size_t dim = 16;
    std::size_t heads = 2;
    std::size_t frames = 8;
    std::size_t vis_channels = 3;
    std::size_t vis_h = 32, vis_w = 32;
    std::size_t patch = 16;
    std::size_t aud_channels = 1;
    std::size_t aud_h = 32, aud_w = 48;

    void validate() const;
};

/// Per-channel gate on the cross-modal residual, zero at init so the
/// adapter starts as an exact no-op on the global stream.
struct FusionGate {
    Tensor beta;  // [D]

    FusionGate() = default;
    explicit FusionGate(std::size_t d) : beta(Tensor::zeros({d}).set_requires_grad(true)) {}
};

/// One adapter stage of a modality pathway: cross-modal injection into the
/// multi-scale tokens, gated fusion back into the global stream, the
/// backbone layers of this stage, and the multi-scale pathway update.
struct AdapterBlock {
    FusionGate gate;
    CrossAttentionLayer inject;     // query: multi-scale, kv: other modality's global
    CrossAttentionLayer fuse;       // query: global, kv: injected multi-scale
    std::vector<ViTBlock> backbone;
    CrossAttentionLayer ms_update;  // query: multi-scale, kv: advanced global
    FFNLayer ms_ffn;

    AdapterBlock() = default;
    AdapterBlock(std::size_t d, std::size_t heads, SeedStream& seeds);  // backbone filled by the pathway
    void collect(const std::string& prefix, std::vector<NamedParam>& backbone_out,
                 std::vector<NamedParam>& adapter_out) const;
};

struct ModalityPathway {
    PatchEmbed embed;
    PyramidModule pyramid;
    std::vector<AdapterBlock> blocks;

    ModalityPathway() = default;
    ModalityPathway(std::size_t channels, std::size_t h, std::size_t w, std::size_t patch, const AdapterConfig& cfg,
                    SeedStream& encoder_seeds, SeedStream& adapter_seeds);
};

/// Single-frame pathway state between blocks (1-based block index; index
/// n_blocks+1 means all blocks applied).
struct AdapterState {
    Tensor global_tokens;  // [L x D]
    MultiScaleFeature ms;
    std::size_t block_index = 1;
};

class AVAdapter {
public:
    explicit AVAdapter(const AdapterConfig& cfg, std::uint64_t seed);

    const AdapterConfig& config() const { return cfg_; }
    std::size_t visual_token_count() const { return visual_.embed.token_count(); }
    std::size_t audio_token_count() const { return audio_.embed.token_count(); }

    /// Injection direction: multi-scale tokens query the other modality's
    /// per-frame global tokens.
    static Tensor inject_cross_modal(const MultiScaleFeature& ms, const Tensor& other_global,
                                     const CrossAttentionLayer& layer);
    /// Fusion direction: gated residual read of the injected tokens.
    static Tensor fuse_global(const Tensor& global_tokens, const Tensor& injected, const FusionGate& gate,
                              const CrossAttentionLayer& layer);

    /// One stage for both modalities; both read the other's pre-update
    /// global tokens, keeping the pathways symmetric.
    void advance_block(AdapterState& visual, AdapterState& audio) const;

    AdapterState init_visual_state(const Tensor& frame) const;       // [C x H_v x W_v]
    AdapterState init_audio_state(const Tensor& spectrogram) const;  // [1 x H_a x W_a]

    /// Full adapter: frames [B x T x C x H_v x W_v], specs [B x T x 1 x H_a x W_a]
    /// -> global token stacks ([B x T x L_v x D], [B x T x L_a x D]).
    std::pair<Tensor, Tensor> forward(const Tensor& frames, const Tensor& specs) const;

    /// Backbone with the adapter branch removed: patch embed + all ViT
    /// blocks. The beta = 0 initialization must reproduce this exactly.
    Tensor backbone_only(const Tensor& map, bool audio_modality) const;

    void collect_params(std::vector<NamedParam>& visual_encoder, std::vector<NamedParam>& audio_encoder,
                        std::vector<NamedParam>& adapter) const;

private:
    AdapterConfig cfg_;
    ModalityPathway visual_;
    ModalityPathway audio_;
};

/// Mean over the temporal axis: [B x T x L x D] -> [B x L x D].
Tensor temporal_pool(const Tensor& tokens);

}  // namespace dolphin
