#include "commands.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "adapter.hpp"
#include "model.hpp"
#include "temporal.hpp"

namespace dolphin {

namespace {

constexpr double kGradTolerance = 1e-4;

std::size_t round_up(std::size_t v, std::size_t m) { return (v + m - 1) / m * m; }

Tensor readout_scalar(const Tensor& t) {
    Tensor s = sum_all(t);
    // second-order weighting so the check exercises nonlinear paths
    return sum_all(mul(s, s));
}

void atomic_write(const std::string& path, const std::string& content) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::trunc);
        if (!out) throw ConfigError("cannot open " + tmp + " for writing");
        out << content;
        if (!out) throw ConfigError("write failed: " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

}  // namespace

std::vector<GradCheckResult> run_gradchecks(const RunConfig& cfg) {
    const std::size_t d = cfg.model.adapter.dim;
    const std::size_t heads = cfg.model.adapter.heads;
    const std::size_t d_llm = cfg.model.d_llm;
    const std::uint64_t seed = cfg.model.seed;
    std::vector<GradCheckResult> results;
    auto check = [&results](const std::string& name, const std::function<Tensor(const Tensor&)>& f, const Tensor& x) {
        const double err = grad_check(f, x);
        results.push_back({name, err, err < kGradTolerance});
    };

    SeedStream seeds(seed + 101);
    CrossAttentionLayer attn(d, heads, seeds);
    Tensor kv = Tensor::randn({5, d}, seed + 1);
    check("cross_attention", [&](const Tensor& x) { return readout_scalar(attn.forward(x, kv)); },
          Tensor::randn({3, d}, seed + 2));

    FFNLayer ffn(d, seeds);
    check("ffn", [&](const Tensor& x) { return readout_scalar(ffn.forward(x)); }, Tensor::randn({3, d}, seed + 3));

    ViTBlock vit(d, heads, seeds);
    check("vit_block", [&](const Tensor& x) { return readout_scalar(vit.forward(x)); },
          Tensor::randn({4, d}, seed + 4));

    AdapterConfig small;
    small.n_blocks = 1;
    small.layers_per_block = 1;
    small.dim = d;
    small.heads = heads;
    small.frames = 1;
    small.vis_h = small.vis_w = 32;
    small.aud_h = small.aud_w = 32;
    small.patch = 16;
    AVAdapter adapter(small, seed + 5);
    Tensor aud_spec = Tensor::randn({1, 32, 32}, seed + 6);
    check("adapter_block",
          [&](const Tensor& x) {
              AdapterState vs = adapter.init_visual_state(x);
              AdapterState as = adapter.init_audio_state(aud_spec);
              adapter.advance_block(vs, as);
              return readout_scalar(add(sum_all(vs.global_tokens), sum_all(as.global_tokens)));
          },
          Tensor::randn({3, 32, 32}, seed + 7));

    SeedStream merge_seeds(seed + 102);
    TemporalMerger merger(d, heads, d_llm, merge_seeds);
    Tensor aud_tokens = Tensor::randn({1, 1, 3, d}, seed + 8);
    check("temporal_merge",
          [&](const Tensor& x) {
              Tensor v = reshape(x, {1, 1, x.dim(0), x.dim(1)});
              return readout_scalar(merger.forward(v, aud_tokens));
          },
          Tensor::randn({2, d}, seed + 9));

    SeedStream readout_seeds(seed + 103);
    ReadoutBlock block(d_llm, heads, readout_seeds);
    Tensor av = Tensor::randn({4, d_llm}, seed + 10);
    check("readout_block", [&](const Tensor& x) { return readout_scalar(block.forward(x, av)); },
          Tensor::randn({3, d_llm}, seed + 11));

    return results;
}

std::string cmd_shapes(const RunConfig& cfg) {
    cfg.validate();
    const auto& a = cfg.model.adapter;
    const auto vseg = pyramid_segment_lengths(a.vis_h, a.vis_w);
    const auto aseg = pyramid_segment_lengths(a.aud_h, a.aud_w);
    const std::size_t lv = (round_up(a.vis_h, a.patch) / a.patch) * (round_up(a.vis_w, a.patch) / a.patch);
    const std::size_t la = (round_up(a.aud_h, a.patch) / a.patch) * (round_up(a.aud_w, a.patch) / a.patch);

    ToyModel model(cfg.model);
    std::map<std::string, std::size_t> group_params;
    std::size_t total = 0;
    for (const auto& p : model.parameters()) {
        group_params[param_group_name(p.group)] += p.tensor.size();
        total += p.tensor.size();
    }

    std::ostringstream os;
    os << "visual input: " << a.vis_h << "x" << a.vis_w << " (padded " << round_up(a.vis_h, 32) << "x"
       << round_up(a.vis_w, 32) << ")\n";
    os << "visual multi-scale segments: " << vseg[0] << "/" << vseg[1] << "/" << vseg[2] << " (total "
       << vseg[0] + vseg[1] + vseg[2] << ")\n";
    os << "audio input: " << a.aud_h << "x" << a.aud_w << " (padded " << round_up(a.aud_h, 32) << "x"
       << round_up(a.aud_w, 32) << ")\n";
    os << "audio multi-scale segments: " << aseg[0] << "/" << aseg[1] << "/" << aseg[2] << " (total "
       << aseg[0] + aseg[1] + aseg[2] << ")\n";
    os << "global tokens: L_v=" << lv << " L_a=" << la << " (width D=" << a.dim << ")\n";
    os << "frames: T=" << a.frames << "\n";
    os << "LLM tokens: " << 2 * a.frames << " (width " << cfg.model.d_llm << ")\n";
    os << "parameters:\n";
    for (const auto& [name, count] : group_params) os << "  " << name << ": " << count << "\n";
    os << "  total: " << total << "\n";
    return os.str();
}

std::string cmd_gradcheck(const RunConfig& cfg, bool& all_pass) {
    cfg.validate();
    const auto results = run_gradchecks(cfg);
    all_pass = true;
    std::ostringstream os;
    for (const auto& r : results) {
        os << r.block << ": max_rel_err=" << r.max_rel_error << " " << (r.pass ? "PASS" : "FAIL") << "\n";
        all_pass = all_pass && r.pass;
    }
    os << (all_pass ? "all blocks pass" : "gradient check FAILED") << " (tolerance " << kGradTolerance << ")\n";
    return os.str();
}

std::string cmd_train(const RunConfig& cfg, const std::string& report_path) {
    cfg.validate();
    FreezeSchedule schedule{cfg.stage};
    OverfitReport report = overfit_smoke(cfg.model, schedule, cfg.samples, cfg.steps, cfg.lr, cfg.model.seed);

    std::ostringstream lines;
    lines.precision(17);
    for (const auto& r : report.trajectory)
        lines << "{\"step\":" << r.step << ",\"stage\":" << r.stage << ",\"loss\":" << r.loss
              << ",\"seconds\":" << r.seconds << "}\n";
    if (!report_path.empty()) atomic_write(report_path, lines.str());

    std::ostringstream os;
    os << "stage " << cfg.stage << ", frozen groups: {";
    const auto frozen = schedule.frozen_groups();
    for (std::size_t i = 0; i < frozen.size(); ++i) os << (i ? ", " : "") << param_group_name(frozen[i]);
    os << "}\n";
    os << "samples=" << cfg.samples << " steps=" << report.steps << " lr=" << cfg.lr << "\n";
    os << "initial loss " << report.initial_loss << ", final loss " << report.final_loss << ", "
       << report.wall_seconds << "s\n";
    if (report.diverged) os << "DIVERGED: loss became non-finite\n";
    return os.str();
}

std::string cmd_curate(const RunConfig& cfg, const std::string& input_path, const std::string& output_path) {
    cfg.validate();
    if (!std::filesystem::exists(input_path)) throw avu::PipelineError("input corpus not found: " + input_path);
    const auto input = avu::read_corpus(input_path);
    avu::PipelineResult result = avu::run_pipeline(input, cfg.pipeline);
    avu::write_corpus(result.records, output_path);
    std::ostringstream os;
    os << result.stats.table();
    for (const auto& [id, reason] : result.quarantine) os << "quarantined " << id << ": " << reason << "\n";
    return os.str();
}

}  // namespace dolphin
