#include <cmath>
#include <filesystem>
#include <set>
#include <vector>

#include "doctest.h"
#include "model.hpp"

using namespace dolphin;

namespace {

ModelConfig tiny_config(std::uint64_t seed = 1) {
    ModelConfig cfg;
    cfg.adapter.n_blocks = 1;
    cfg.adapter.layers_per_block = 1;
    cfg.adapter.dim = 8;
    cfg.adapter.heads = 2;
    cfg.adapter.frames = 2;
    cfg.adapter.vis_h = cfg.adapter.vis_w = 32;
    cfg.adapter.aud_h = cfg.adapter.aud_w = 32;
    cfg.adapter.patch = 16;
    cfg.d_llm = 8;
    cfg.vocab = 16;
    cfg.readout_blocks = 1;
    cfg.target_len = 4;
    cfg.seed = seed;
    return cfg;
}

}  // namespace

TEST_CASE("parameters are named uniquely and cover all five groups") {
    ToyModel model(tiny_config());
    std::set<std::string> names;
    std::set<ParamGroup> groups;
    for (const auto& p : model.parameters()) {
        CHECK(names.insert(p.name).second);
        groups.insert(p.group);
        CHECK(p.tensor.requires_grad());
    }
    CHECK(groups.size() == 5);
    CHECK(std::string(param_group_name(ParamGroup::VisualEncoder)) == "visual_encoder");
    CHECK(std::string(param_group_name(ParamGroup::Projectors)) == "projectors");
}

TEST_CASE("freeze schedule stages gate exactly the documented groups") {
    FreezeSchedule s1{1};
    CHECK_FALSE(s1.trainable(ParamGroup::VisualEncoder));
    CHECK_FALSE(s1.trainable(ParamGroup::AudioEncoder));
    CHECK(s1.trainable(ParamGroup::Adapter));
    CHECK(s1.trainable(ParamGroup::Projectors));
    CHECK_FALSE(s1.trainable(ParamGroup::Readout));
    CHECK(s1.frozen_groups() ==
          std::vector<ParamGroup>{ParamGroup::VisualEncoder, ParamGroup::AudioEncoder, ParamGroup::Readout});

    FreezeSchedule s2{2};
    CHECK_FALSE(s2.trainable(ParamGroup::VisualEncoder));
    CHECK_FALSE(s2.trainable(ParamGroup::AudioEncoder));
    CHECK(s2.trainable(ParamGroup::Readout));
    CHECK(s2.frozen_groups() == std::vector<ParamGroup>{ParamGroup::VisualEncoder, ParamGroup::AudioEncoder});

    FreezeSchedule bad{3};
    CHECK_THROWS_AS(bad.trainable(ParamGroup::Adapter), ValueError);
}

TEST_CASE("forward emits [B x target_len x vocab] logits") {
    ModelConfig cfg = tiny_config();
    ToyModel model(cfg);
    SyntheticBatch batch = make_synthetic_batch(cfg, 2, 5);
    Tensor logits = model.forward(batch.frames, batch.specs, batch.targets);
    CHECK(logits.shape() == std::vector<std::size_t>{2, cfg.target_len, cfg.vocab});
    Tensor av = model.av_tokens(batch.frames, batch.specs);
    CHECK(av.shape() == std::vector<std::size_t>{2, 2 * cfg.adapter.frames, cfg.d_llm});

    auto short_targets = batch.targets;
    short_targets[0].pop_back();
    CHECK_THROWS_AS(model.forward(batch.frames, batch.specs, short_targets), ValueError);
}

TEST_CASE("zeroing the output head gives the exact uniform loss ln(vocab)") {
    ModelConfig cfg = tiny_config();
    ToyModel model(cfg);
    for (const auto& p : model.parameters())
        if (p.name.find("lm_head") != std::string::npos) {
            Tensor t = p.tensor;
            for (double& v : t.mutable_data()) v = 0.0;
        }
    SyntheticBatch batch = make_synthetic_batch(cfg, 2, 6);
    // zero-lr step evaluates the loss without mutating the model
    const double loss = train_step(model, batch, FreezeSchedule{2}, 0.0);
    CHECK(std::abs(loss - std::log(static_cast<double>(cfg.vocab))) < 1e-12);
}

TEST_CASE("identical seeds give bit-identical models and training runs") {
    ModelConfig cfg = tiny_config(3);
    ToyModel a(cfg), b(cfg);
    CHECK(a.snapshot() == b.snapshot());

    SyntheticBatch batch = make_synthetic_batch(cfg, 2, 7);
    FreezeSchedule schedule{2};
    for (int step = 0; step < 3; ++step) {
        const double la = train_step(a, batch, schedule, 0.3);
        const double lb = train_step(b, batch, schedule, 0.3);
        CHECK(la == lb);
    }
    CHECK(a.snapshot() == b.snapshot());

    ToyModel c(tiny_config(4));  // different seed, different weights
    CHECK(a.snapshot() != c.snapshot());
}

TEST_CASE("a zero learning rate leaves every parameter bit-identical") {
    ModelConfig cfg = tiny_config();
    ToyModel model(cfg);
    const std::vector<double> before = model.snapshot();
    SyntheticBatch batch = make_synthetic_batch(cfg, 2, 8);
    train_step(model, batch, FreezeSchedule{2}, 0.0);
    CHECK(model.snapshot() == before);
}

TEST_CASE("train_step updates only the trainable groups") {
    ModelConfig cfg = tiny_config();
    ToyModel model(cfg);
    std::vector<std::vector<double>> before;
    for (const auto& p : model.parameters()) before.push_back(p.tensor.data());
    SyntheticBatch batch = make_synthetic_batch(cfg, 2, 9);

    SUBCASE("stage 1 freezes encoders and readout") {
        for (int i = 0; i < 3; ++i) train_step(model, batch, FreezeSchedule{1}, 0.3);
        bool adapter_changed = false, projector_changed = false;
        const auto& params = model.parameters();
        for (std::size_t i = 0; i < params.size(); ++i) {
            const bool same = params[i].tensor.data() == before[i];
            switch (params[i].group) {
                case ParamGroup::VisualEncoder:
                case ParamGroup::AudioEncoder:
                case ParamGroup::Readout: CHECK(same); break;
                case ParamGroup::Adapter: adapter_changed = adapter_changed || !same; break;
                case ParamGroup::Projectors: projector_changed = projector_changed || !same; break;
            }
        }
        CHECK(adapter_changed);
        CHECK(projector_changed);
    }

    SUBCASE("stage 2 freezes only the encoders") {
        for (int i = 0; i < 3; ++i) train_step(model, batch, FreezeSchedule{2}, 0.3);
        bool readout_changed = false;
        const auto& params = model.parameters();
        for (std::size_t i = 0; i < params.size(); ++i) {
            const bool same = params[i].tensor.data() == before[i];
            if (params[i].group == ParamGroup::VisualEncoder || params[i].group == ParamGroup::AudioEncoder)
                CHECK(same);
            if (params[i].group == ParamGroup::Readout && !same) readout_changed = true;
        }
        CHECK(readout_changed);
    }
}

TEST_CASE("overfit_smoke records a reproducible trajectory") {
    ModelConfig cfg = tiny_config(5);
    OverfitReport r1 = overfit_smoke(cfg, FreezeSchedule{2}, 2, 5, 0.3, 11);
    OverfitReport r2 = overfit_smoke(cfg, FreezeSchedule{2}, 2, 5, 0.3, 11);
    CHECK(r1.steps == 5);
    CHECK_FALSE(r1.diverged);
    CHECK(r1.trajectory_string() == r2.trajectory_string());
    CHECK(r1.initial_loss == r2.initial_loss);
    CHECK(r1.final_loss == r2.final_loss);
    CHECK(r1.final_loss < r1.initial_loss);
}

TEST_CASE("overfit_smoke flags divergence instead of throwing") {
    ModelConfig cfg = tiny_config(6);
    OverfitReport r = overfit_smoke(cfg, FreezeSchedule{2}, 2, 40, 1e6, 12);
    CHECK(r.diverged);
    CHECK(r.steps < 40);
}

TEST_CASE("checkpoints round-trip bit-exactly") {
    namespace fs = std::filesystem;
    const std::string dir = (fs::temp_directory_path() / "dolphin_test_ckpt").string();
    ModelConfig cfg = tiny_config(7);
    ToyModel model(cfg);
    SyntheticBatch batch = make_synthetic_batch(cfg, 2, 13);
    train_step(model, batch, FreezeSchedule{2}, 0.3);
    const std::vector<double> trained = model.snapshot();
    model.save_checkpoint(dir);

    ToyModel restored(cfg);
    CHECK(restored.snapshot() != trained);
    restored.load_checkpoint(dir);
    CHECK(restored.snapshot() == trained);
    fs::remove_all(dir);
}

TEST_CASE("synthetic batches are deterministic in the seed") {
    ModelConfig cfg = tiny_config();
    SyntheticBatch a = make_synthetic_batch(cfg, 3, 21);
    SyntheticBatch b = make_synthetic_batch(cfg, 3, 21);
    SyntheticBatch c = make_synthetic_batch(cfg, 3, 22);
    CHECK(a.frames.data() == b.frames.data());
    CHECK(a.specs.data() == b.specs.data());
    CHECK(a.targets == b.targets);
    CHECK(a.frames.data() != c.frames.data());
    for (const auto& seq : a.targets) {
        CHECK(seq.size() == cfg.target_len);
        for (int t : seq) {
            CHECK(t >= 0);
            CHECK(t < static_cast<int>(cfg.vocab));
        }
    }
}

TEST_CASE("model config validation") {
    ModelConfig cfg = tiny_config();
    cfg.vocab = 1;
    CHECK_THROWS_AS(ToyModel{cfg}, ValueError);
    cfg = tiny_config();
    cfg.d_llm = 9;  // not a multiple of heads
    CHECK_THROWS_AS(ToyModel{cfg}, ValueError);
    cfg = tiny_config();
    cfg.target_len = 0;
    CHECK_THROWS_AS(ToyModel{cfg}, ValueError);
}
