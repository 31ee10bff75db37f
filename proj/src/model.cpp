#include "model.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

namespace dolphin {

const char* param_group_name(ParamGroup g) {
    switch (g) {
        case ParamGroup::VisualEncoder: return "visual_encoder";
        case ParamGroup::AudioEncoder: return "audio_encoder";
        case ParamGroup::Adapter: return "adapter";
        case ParamGroup::Projectors: return "projectors";
        case ParamGroup::Readout: return "readout";
    }
    return "?";
}

void ModelConfig::validate() const {
    adapter.validate();
    if (d_llm == 0 || d_llm % adapter.heads != 0) throw ValueError("d_llm must be a positive multiple of heads");
    if (vocab < 2) throw ValueError("vocabulary must have at least 2 tokens");
    if (readout_blocks < 1) throw ValueError("readout needs at least one block");
    if (target_len < 1) throw ValueError("target_len must be >= 1");
}

ReadoutBlock::ReadoutBlock(std::size_t d, std::size_t heads, SeedStream& seeds)
    : ln1(d), ln2(d), ln3(d), self_attn(d, heads, seeds), av_attn(d, heads, seeds), ffn(d, seeds) {}

Tensor ReadoutBlock::forward(const Tensor& text, const Tensor& av_tokens) const {
    Tensor normed = ln1.forward(text);
    Tensor x = add(text, self_attn.forward(normed, normed, /*causal=*/true));
    x = add(x, av_attn.forward(ln2.forward(x), av_tokens));
    return add(x, ffn.forward(ln3.forward(x)));
}

void ReadoutBlock::collect(const std::string& prefix, std::vector<NamedParam>& out) const {
    ln1.collect(prefix + ".ln1", out);
    ln2.collect(prefix + ".ln2", out);
    ln3.collect(prefix + ".ln3", out);
    self_attn.collect(prefix + ".self_attn", out);
    av_attn.collect(prefix + ".av_attn", out);
    ffn.collect(prefix + ".ffn", out);
}

ToyModel::ToyModel(const ModelConfig& cfg) : cfg_(cfg), adapter_(cfg.adapter, cfg.seed * 8 + 5) {
    cfg_.validate();
    SeedStream proj_seeds(cfg.seed * 8 + 6), readout_seeds(cfg.seed * 8 + 7);
    merger_ = TemporalMerger(cfg.adapter.dim, cfg.adapter.heads, cfg.d_llm, proj_seeds);
    token_emb_ = Tensor::randn({cfg.vocab, cfg.d_llm}, readout_seeds.next(), kInitStd).set_requires_grad(true);
    pos_emb_ = Tensor::randn({cfg.target_len, cfg.d_llm}, readout_seeds.next(), kInitStd).set_requires_grad(true);
    for (std::size_t i = 0; i < cfg.readout_blocks; ++i)
        readout_blocks_.emplace_back(cfg.d_llm, cfg.adapter.heads, readout_seeds);
    final_ln_ = LayerNormParams(cfg.d_llm);
    lm_head_ = Linear(cfg.d_llm, cfg.vocab, readout_seeds);

    std::vector<NamedParam> ve, ae, ad, pr, ro;
    adapter_.collect_params(ve, ae, ad);
    merger_.collect_params(pr);
    ro.push_back({"readout.token_emb", token_emb_});
    ro.push_back({"readout.pos_emb", pos_emb_});
    for (std::size_t i = 0; i < readout_blocks_.size(); ++i)
        readout_blocks_[i].collect("readout.block" + std::to_string(i), ro);
    final_ln_.collect("readout.final_ln", ro);
    lm_head_.collect("readout.lm_head", ro);

    auto push = [this](const std::vector<NamedParam>& src, ParamGroup g) {
        for (const auto& p : src) params_.push_back({p.name, g, p.tensor});
    };
    push(ve, ParamGroup::VisualEncoder);
    push(ae, ParamGroup::AudioEncoder);
    push(ad, ParamGroup::Adapter);
    push(pr, ParamGroup::Projectors);
    push(ro, ParamGroup::Readout);
}

Tensor ToyModel::av_tokens(const Tensor& frames, const Tensor& specs) const {
    auto [v, a] = adapter_.forward(frames, specs);
    return merger_.forward(v, a);
}

Tensor ToyModel::forward(const Tensor& frames, const Tensor& specs,
                         const std::vector<std::vector<int>>& targets) const {
    if (targets.size() != frames.dim(0)) throw ValueError("target batch size mismatch");
    Tensor av = av_tokens(frames, specs);
    std::vector<Tensor> rows;
    rows.reserve(targets.size());
    for (std::size_t bi = 0; bi < targets.size(); ++bi) {
        const auto& seq = targets[bi];
        if (seq.size() != cfg_.target_len) throw ValueError("target length mismatch");
        // teacher forcing: position 0 reads token 0 as start marker
        std::vector<int> inputs(seq.size());
        inputs[0] = 0;
        for (std::size_t i = 1; i < seq.size(); ++i) inputs[i] = seq[i - 1];
        Tensor x = add(embedding_rows(token_emb_, inputs), pos_emb_);
        Tensor av_b = reshape(slice(av, 0, bi, 1), {av.dim(1), av.dim(2)});
        for (const ReadoutBlock& block : readout_blocks_) x = block.forward(x, av_b);
        Tensor logits = lm_head_.forward(final_ln_.forward(x));
        rows.push_back(reshape(logits, {1, cfg_.target_len, cfg_.vocab}));
    }
    return concat(rows, 0);
}

std::vector<double> ToyModel::snapshot() const {
    std::vector<double> out;
    for (const auto& p : params_) out.insert(out.end(), p.tensor.data().begin(), p.tensor.data().end());
    return out;
}

void ToyModel::save_checkpoint(const std::string& dir) const {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    std::ostringstream manifest;
    for (std::size_t i = 0; i < params_.size(); ++i) {
        const auto& p = params_[i];
        manifest << p.name << " " << param_group_name(p.group) << " " << shape_str(p.tensor.shape()) << "\n";
        save_tensor(p.tensor, dir + "/p" + std::to_string(i) + ".dtns");
    }
    std::ofstream mf(dir + "/manifest.txt", std::ios::trunc);
    mf << manifest.str();
    if (!mf) throw TensorError("cannot write checkpoint manifest in " + dir);
}

void ToyModel::load_checkpoint(const std::string& dir) {
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Tensor loaded = load_tensor(dir + "/p" + std::to_string(i) + ".dtns");
        if (loaded.shape() != params_[i].tensor.shape())
            throw ShapeError("checkpoint shape mismatch for " + params_[i].name);
        params_[i].tensor.mutable_data() = loaded.data();
    }
}

bool FreezeSchedule::trainable(ParamGroup g) const {
    if (stage == 1) return g == ParamGroup::Adapter || g == ParamGroup::Projectors;
    if (stage == 2) return g != ParamGroup::VisualEncoder && g != ParamGroup::AudioEncoder;
    throw ValueError("freeze schedule stage must be 1 or 2");
}

std::vector<ParamGroup> FreezeSchedule::frozen_groups() const {
    std::vector<ParamGroup> out;
    for (ParamGroup g : {ParamGroup::VisualEncoder, ParamGroup::AudioEncoder, ParamGroup::Adapter,
                         ParamGroup::Projectors, ParamGroup::Readout})
        if (!trainable(g)) out.push_back(g);
    return out;
}

SyntheticBatch make_synthetic_batch(const ModelConfig& cfg, std::size_t batch, std::uint64_t seed) {
    SyntheticBatch out;
    const auto& a = cfg.adapter;
    out.frames = Tensor::randn({batch, a.frames, a.vis_channels, a.vis_h, a.vis_w}, seed * 3 + 1);
    out.specs = Tensor::randn({batch, a.frames, a.aud_channels, a.aud_h, a.aud_w}, seed * 3 + 2);
    std::mt19937_64 rng(seed * 3 + 3);
    out.targets.resize(batch);
    for (auto& seq : out.targets) {
        seq.resize(cfg.target_len);
        for (int& t : seq) t = static_cast<int>(rng() % cfg.vocab);
    }
    return out;
}

double train_step(ToyModel& model, const SyntheticBatch& batch, const FreezeSchedule& schedule, double lr) {
    for (auto& p : model.parameters()) {
        Tensor t = p.tensor;
        t.zero_grad();
    }
    Tape tape;
    double loss_value;
    {
        Tape::Scope scope(tape);
        Tensor logits = model.forward(batch.frames, batch.specs, batch.targets);
        std::vector<int> flat;
        for (const auto& seq : batch.targets) flat.insert(flat.end(), seq.begin(), seq.end());
        Tensor loss = cross_entropy(reshape(logits, {logits.dim(0) * logits.dim(1), logits.dim(2)}), flat);
        loss_value = loss.item();
        if (!std::isfinite(loss_value)) throw NumericError("training loss is non-finite");
        tape.backward(loss);
    }
    for (auto& p : model.parameters()) {
        if (!schedule.trainable(p.group)) continue;
        Tensor t = p.tensor;
        if (!t.has_grad()) continue;
        auto& v = t.mutable_data();
        const auto& g = t.grad();
        for (std::size_t i = 0; i < v.size(); ++i) v[i] -= lr * g[i];
    }
    return loss_value;
}

std::string OverfitReport::trajectory_string() const {
    std::ostringstream os;
    os.precision(17);
    os << "initial=" << initial_loss << " final=" << final_loss << " steps=" << steps << "\n";
    for (const auto& r : trajectory) os << r.step << " " << r.stage << " " << r.loss << "\n";
    return os.str();
}

OverfitReport overfit_smoke(const ModelConfig& cfg, const FreezeSchedule& schedule, std::size_t samples,
                            std::size_t steps, double lr, std::uint64_t data_seed) {
    OverfitReport report;
    ToyModel model(cfg);
    SyntheticBatch batch = make_synthetic_batch(cfg, samples, data_seed);
    const auto start = std::chrono::steady_clock::now();
    for (std::size_t s = 0; s < steps; ++s) {
        const auto t0 = std::chrono::steady_clock::now();
        double loss;
        try {
            loss = train_step(model, batch, schedule, lr);
        } catch (const NumericError&) {
            report.diverged = true;
            break;
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (s == 0) report.initial_loss = loss;
        report.final_loss = loss;
        report.trajectory.push_back({s, schedule.stage, loss, secs});
        ++report.steps;
    }
    report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return report;
}

}  // namespace dolphin
