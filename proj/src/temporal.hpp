#pragma once

#include <vector>

#include "nn.hpp"
#include "tensor.hpp"

namespace dolphin {

/// One frame's interleaved visual/audio token pair plus the contextualized
/// outputs of the bidirectional attention.
struct AVGroup {
    std::size_t frame = 0;
    Tensor visual;   // [L_v x D]
    Tensor audio;    // [L_a x D]
    Tensor visual_ctx;  // audio-contextualized visual read, [L_a x D]
    Tensor audio_ctx;   // visual-contextualized audio read, [L_v x D]
};

/// Two-layer MLP into the language-model width, shared across frames and
/// modalities.
struct JointProjector {
    Linear fc1;  // D -> D_llm
    Linear fc2;  // D_llm -> D_llm

    JointProjector() = default;
    JointProjector(std::size_t d, std::size_t d_llm, SeedStream& seeds);
    Tensor forward(const Tensor& x) const { return fc2.forward(gelu(fc1.forward(x))); }
    void collect(const std::string& prefix, std::vector<NamedParam>& out) const;
};

class TemporalMerger {
public:
    TemporalMerger() = default;
    TemporalMerger(std::size_t d, std::size_t heads, std::size_t d_llm, SeedStream& seeds);

    /// Frame-ordered AV groups from the adapter's global token stacks
    /// ([B x T x L_v x D], [B x T x L_a x D]); one group list per batch item.
    static std::vector<std::vector<AVGroup>> build_groups(const Tensor& visual, const Tensor& audio);

    /// Bidirectional contextual attention inside one group; both reads use
    /// the pre-update tokens and one shared attention layer.
    void bidir_context(AVGroup& group) const;

    /// Mean-pool each contextualized stream to one vector, project, and
    /// interleave as [v_1, a_1, ..., v_T, a_T]: exactly 2T tokens of width
    /// D_llm per batch item.
    Tensor condense_and_project(const std::vector<AVGroup>& groups) const;  // [2T x D_llm]

    /// build_groups + bidir_context + condense_and_project, stacked over the
    /// batch: -> [B x 2T x D_llm].
    Tensor forward(const Tensor& visual, const Tensor& audio) const;

    void collect_params(std::vector<NamedParam>& out) const;

private:
    CrossAttentionLayer context_attn_;
    JointProjector projector_;
};

}  // namespace dolphin
