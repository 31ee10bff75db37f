#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "config.hpp"
#include "doctest.h"

using namespace dolphin;

TEST_CASE("defaults are valid and round-trip through the text form") {
    RunConfig cfg = RunConfig::defaults();
    CHECK_NOTHROW(cfg.validate());
    RunConfig back = RunConfig::from_text(cfg.to_text());
    CHECK(back.to_text() == cfg.to_text());
}

TEST_CASE("parsing reads sections, comments and whitespace") {
    RunConfig cfg = RunConfig::from_text(
        "# comment line\n"
        "[model]\n"
        "dim = 24\n"
        "  heads =   4  \n"
        "; another comment\n"
        "[train]\n"
        "lr = 0.25\n"
        "steps = 42\n"
        "[pipeline]\n"
        "tau_hi = 0.9\n"
        "scorer_backend = mock\n");
    CHECK(cfg.model.adapter.dim == 24);
    CHECK(cfg.model.adapter.heads == 4);
    CHECK(cfg.lr == 0.25);
    CHECK(cfg.steps == 42);
    CHECK(cfg.pipeline.tau_hi == 0.9);
    // untouched keys keep their defaults
    CHECK(cfg.model.vocab == RunConfig::defaults().model.vocab);
}

TEST_CASE("unknown sections and keys are rejected with context") {
    CHECK_THROWS_WITH_AS(RunConfig::from_text("[model]\nwidth = 3\n"), doctest::Contains("model.width"),
                         ConfigError);
    CHECK_THROWS_WITH_AS(RunConfig::from_text("[optimizer]\nlr = 1\n"), doctest::Contains("optimizer"), ConfigError);
    CHECK_THROWS_AS(RunConfig::from_text("dim = 3\n"), ConfigError);            // key outside a section
    CHECK_THROWS_AS(RunConfig::from_text("[model\ndim = 3\n"), ConfigError);    // malformed header
    CHECK_THROWS_AS(RunConfig::from_text("[model]\ndim 3\n"), ConfigError);     // missing equals
    CHECK_THROWS_AS(RunConfig::from_text("[model]\ndim = abc\n"), ConfigError); // bad integer
    CHECK_THROWS_AS(RunConfig::from_text("[train]\nlr = fast\n"), ConfigError); // bad number
}

TEST_CASE("set() uses dotted keys and validates values") {
    RunConfig cfg;
    cfg.set("model.dim", "16");
    cfg.set("train.stage", "2");
    cfg.set("pipeline.multiqa_fraction", "0.5");
    CHECK(cfg.model.adapter.dim == 16);
    CHECK(cfg.stage == 2);
    CHECK(cfg.pipeline.multiqa_fraction == 0.5);
    CHECK_THROWS_AS(cfg.set("model", "3"), ConfigError);      // no dot
    CHECK_THROWS_AS(cfg.set("model.nope", "3"), ConfigError);
    CHECK_THROWS_AS(cfg.set("model.dim", "-1"), ConfigError);
}

TEST_CASE("validation rejects out-of-range settings") {
    RunConfig cfg;
    cfg.lr = 0.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = RunConfig{};
    cfg.stage = 3;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = RunConfig{};
    cfg.pipeline.tau_lo = 0.9;  // above tau_hi
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = RunConfig{};
    cfg.model.adapter.dim = 9;  // not divisible by heads
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("environment variables override individual keys") {
    ::setenv("DOLPHIN_MODEL_DIM", "48", 1);
    ::setenv("DOLPHIN_TRAIN_LR", "0.75", 1);
    RunConfig cfg;
    cfg.apply_env_overrides();
    CHECK(cfg.model.adapter.dim == 48);
    CHECK(cfg.lr == 0.75);
    ::unsetenv("DOLPHIN_MODEL_DIM");
    ::unsetenv("DOLPHIN_TRAIN_LR");

    ::setenv("DOLPHIN_MODEL_NOPE", "1", 1);
    RunConfig bad;
    CHECK_THROWS_AS(bad.apply_env_overrides(), ConfigError);
    ::unsetenv("DOLPHIN_MODEL_NOPE");
}

TEST_CASE("from_file loads, applies env overrides, and reports IO errors") {
    namespace fs = std::filesystem;
    const std::string path = (fs::temp_directory_path() / "dolphin_test_config.ini").string();
    std::ofstream(path) << "[model]\ndim = 24\nheads = 2\n[train]\nsteps = 7\n";
    ::setenv("DOLPHIN_TRAIN_STEPS", "9", 1);
    RunConfig cfg = RunConfig::from_file(path);
    CHECK(cfg.model.adapter.dim == 24);
    CHECK(cfg.steps == 9);  // env wins over the file
    ::unsetenv("DOLPHIN_TRAIN_STEPS");
    fs::remove(path);
    CHECK_THROWS_AS(RunConfig::from_file(path), ConfigError);
}
