#include "temporal.hpp"

namespace dolphin {

JointProjector::JointProjector(std::size_t d, std::size_t d_llm, SeedStream& seeds)
    : fc1(d, d_llm, seeds), fc2(d_llm, d_llm, seeds) {}

void JointProjector::collect(const std::string& prefix, std::vector<NamedParam>& out) const {
    fc1.collect(prefix + ".fc1", out);
    fc2.collect(prefix + ".fc2", out);
}

TemporalMerger::TemporalMerger(std::size_t d, std::size_t heads, std::size_t d_llm, SeedStream& seeds)
    : context_attn_(d, heads, seeds), projector_(d, d_llm, seeds) {}

std::vector<std::vector<AVGroup>> TemporalMerger::build_groups(const Tensor& visual, const Tensor& audio) {
    if (visual.rank() != 4 || audio.rank() != 4)
        throw ShapeError("build_groups expects [B x T x L x D] stacks");
    if (visual.dim(0) != audio.dim(0) || visual.dim(1) != audio.dim(1))
        throw ValueError("modalities disagree on batch/frame counts: " + shape_str(visual.shape()) + " vs " +
                         shape_str(audio.shape()));
    const std::size_t b = visual.dim(0), t = visual.dim(1);
    std::vector<std::vector<AVGroup>> out(b);
    for (std::size_t bi = 0; bi < b; ++bi) {
        out[bi].reserve(t);
        for (std::size_t ti = 0; ti < t; ++ti) {
            AVGroup g;
            g.frame = ti;
            g.visual = reshape(slice(slice(visual, 0, bi, 1), 1, ti, 1), {visual.dim(2), visual.dim(3)});
            g.audio = reshape(slice(slice(audio, 0, bi, 1), 1, ti, 1), {audio.dim(2), audio.dim(3)});
            out[bi].push_back(std::move(g));
        }
    }
    return out;
}

void TemporalMerger::bidir_context(AVGroup& group) const {
    // audio queries visual tokens and vice versa; no sequential dependence
    group.visual_ctx = context_attn_.forward(group.audio, group.visual);
    group.audio_ctx = context_attn_.forward(group.visual, group.audio);
}

Tensor TemporalMerger::condense_and_project(const std::vector<AVGroup>& groups) const {
    if (groups.empty()) throw ValueError("condense_and_project on zero groups");
    std::vector<Tensor> tokens;
    tokens.reserve(groups.size() * 2);
    for (const AVGroup& g : groups) {
        if (!g.visual_ctx.defined() || !g.audio_ctx.defined())
            throw ValueError("group " + std::to_string(g.frame) + " has no contextualized tokens");
        Tensor v = projector_.forward(reshape(mean(g.visual_ctx, 0), {1, g.visual_ctx.dim(1)}));
        Tensor a = projector_.forward(reshape(mean(g.audio_ctx, 0), {1, g.audio_ctx.dim(1)}));
        tokens.push_back(v);
        tokens.push_back(a);
    }
    return concat(tokens, 0);
}

Tensor TemporalMerger::forward(const Tensor& visual, const Tensor& audio) const {
    auto batches = build_groups(visual, audio);
    std::vector<Tensor> rows;
    rows.reserve(batches.size());
    for (auto& groups : batches) {
        for (AVGroup& g : groups) bidir_context(g);
        Tensor merged = condense_and_project(groups);
        rows.push_back(reshape(merged, {1, merged.dim(0), merged.dim(1)}));
    }
    return concat(rows, 0);
}

void TemporalMerger::collect_params(std::vector<NamedParam>& out) const {
    context_attn_.collect("temporal.context_attn", out);
    projector_.collect("temporal.joint_projector", out);
}

}  // namespace dolphin
