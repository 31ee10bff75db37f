#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "adapter.hpp"
#include "temporal.hpp"
#include "tensor.hpp"

namespace dolphin {

enum class ParamGroup { VisualEncoder, AudioEncoder, Adapter, Projectors, Readout };

const char* param_group_name(ParamGroup g);

struct GroupedParam {
    std::string name;
    ParamGroup group;
    Tensor tensor;
};

struct ModelConfig {
    AdapterConfig adapter;
    std::size_t d_llm = 32;
    std::size_t vocab = 64;
    std::size_t readout_blocks = 2;
    std::size_t target_len = 6;
    std::uint64_t seed = 1;

    void validate() const;
};

/// Decoder block of the readout head: causal self-attention, cross-attention
/// over the 2T AV tokens, FFN; all pre-LN with residuals.
struct ReadoutBlock {
    LayerNormParams ln1, ln2, ln3;
    CrossAttentionLayer self_attn;
    CrossAttentionLayer av_attn;
    FFNLayer ffn;

    ReadoutBlock() = default;
    ReadoutBlock(std::size_t d, std::size_t heads, SeedStream& seeds);
    Tensor forward(const Tensor& text, const Tensor& av_tokens) const;
    void collect(const std::string& prefix, std::vector<NamedParam>& out) const;
};

/// Desk-scale stand-in for the full stack: toy encoders + dual adapters +
/// interleaved merging + a small autoregressive readout head.
class ToyModel {
public:
    explicit ToyModel(const ModelConfig& cfg);

    const ModelConfig& config() const { return cfg_; }
    const AVAdapter& adapter() const { return adapter_; }
    const TemporalMerger& merger() const { return merger_; }

    /// frames [B x T x C x H x W], specs [B x T x 1 x H_a x W_a],
    /// targets [B][target_len] -> logits [B x target_len x vocab].
    Tensor forward(const Tensor& frames, const Tensor& specs, const std::vector<std::vector<int>>& targets) const;

    /// AV token sequence fed to the readout head, [B x 2T x D_llm].
    Tensor av_tokens(const Tensor& frames, const Tensor& specs) const;

    const std::vector<GroupedParam>& parameters() const { return params_; }
    std::vector<double> snapshot() const;  // all parameter values, flat

    void save_checkpoint(const std::string& dir) const;
    void load_checkpoint(const std::string& dir);

private:
    ModelConfig cfg_;
    AVAdapter adapter_;
    TemporalMerger merger_;
    Tensor token_emb_;  // [vocab x D_llm]
    Tensor pos_emb_;    // [target_len x D_llm]
    std::vector<ReadoutBlock> readout_blocks_;
    LayerNormParams final_ln_;
    Linear lm_head_;
    std::vector<GroupedParam> params_;
};

struct FreezeSchedule {
    int stage = 1;  // 1: projectors + adapter; 2: everything but the encoders

    bool trainable(ParamGroup g) const;
    std::vector<ParamGroup> frozen_groups() const;
};

struct SyntheticBatch {
    Tensor frames;
    Tensor specs;
    std::vector<std::vector<int>> targets;
};

SyntheticBatch make_synthetic_batch(const ModelConfig& cfg, std::size_t batch, std::uint64_t seed);

/// Forward + cross-entropy + one SGD step on the trainable groups.
double train_step(ToyModel& model, const SyntheticBatch& batch, const FreezeSchedule& schedule, double lr);

struct StepRecord {
    std::size_t step;
    int stage;
    double loss;
    double seconds;
};

struct OverfitReport {
    double initial_loss = 0.0;
    double final_loss = 0.0;
    std::size_t steps = 0;
    double wall_seconds = 0.0;
    bool diverged = false;
    std::vector<StepRecord> trajectory;

    /// Loss trajectory only (no timings), used for bit-reproducibility checks.
    std::string trajectory_string() const;
};

OverfitReport overfit_smoke(const ModelConfig& cfg, const FreezeSchedule& schedule, std::size_t samples,
                            std::size_t steps, double lr, std::uint64_t data_seed);

}  // namespace dolphin
