#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "avu.hpp"
#include "doctest.h"

using namespace dolphin::avu;

namespace {

SampleRecord basic_record(const std::string& id) {
    SampleRecord r;
    r.id = id;
    r.video_caption = "a dog runs";
    r.audio_caption = "barking";
    r.meta_info["event"] = {"a dog runs"};
    r.keywords = {"dog", "barking"};
    return r;
}

// independent re-implementation of the split rule
SplitLabel split_oracle(const SampleRecord& rec, const PipelineConfig& cfg) {
    if (rec.has_task_annotation) return SplitLabel::Tasks;
    const double c = *rec.scores.consistency;
    if (c >= cfg.tau_hi)
        return hash_unit(rec.id + "|multiqa") < cfg.multiqa_fraction ? SplitLabel::MultiQA : SplitLabel::Pretrain;
    if (c >= cfg.tau_lo) return SplitLabel::Specific;
    return SplitLabel::Negatives;
}

std::string serialize(const std::vector<SampleRecord>& records) {
    std::string out;
    for (const auto& r : records) out += r.to_json_line() + "\n";
    return out;
}

}  // namespace

TEST_CASE("weighted confidence matches the 2/1/5 normalized mean") {
    Scores s;
    s.clip = 0.9;
    s.self_consistency = 0.5;
    s.annotation = 0.8;
    CHECK(compute_confidence(s) == doctest::Approx(0.7875).epsilon(1e-15));

    s.clip = 1.0;
    s.self_consistency = 1.0;
    s.annotation = 1.0;
    CHECK(compute_confidence(s) == 1.0);
    s.clip = 0.0;
    s.self_consistency = 0.0;
    s.annotation = 0.0;
    CHECK(compute_confidence(s) == 0.0);

    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int i = 0; i < 1000; ++i) {
        s.clip = unit(rng);
        s.self_consistency = unit(rng);
        s.annotation = unit(rng);
        const double expect = (2.0 * *s.clip + *s.self_consistency + 5.0 * *s.annotation) / 8.0;
        CHECK(compute_confidence(s) == expect);  // identical arithmetic, no tolerance
    }
}

TEST_CASE("confidence requires all three scores in range") {
    Scores s;
    s.clip = 0.5;
    s.self_consistency = 0.5;
    CHECK_THROWS_AS(compute_confidence(s), PipelineError);  // annotation missing
    s.annotation = 1.5;
    CHECK_THROWS_AS(compute_confidence(s), PipelineError);  // out of range
}

TEST_CASE("bottom-quartile filter drops exactly floor(n/4) records") {
    for (std::size_t n : {std::size_t{0}, std::size_t{1}, std::size_t{3}, std::size_t{4}, std::size_t{5},
                          std::size_t{7}, std::size_t{8}, std::size_t{100}, std::size_t{101}, std::size_t{103}}) {
        std::vector<SampleRecord> records;
        for (std::size_t i = 0; i < n; ++i) {
            SampleRecord r = basic_record("r" + std::to_string(i));
            r.confidence = hash_unit(r.id);
            records.push_back(r);
        }
        auto [kept, dropped] = filter_bottom_quartile(records);
        CHECK(dropped.size() == n / 4);
        CHECK(kept.size() == n - n / 4);
    }
}

TEST_CASE("filter drops the lowest-confidence records and keeps input order") {
    std::vector<SampleRecord> records;
    const std::vector<double> conf = {0.9, 0.1, 0.5, 0.7, 0.3, 0.8, 0.2, 0.6};
    for (std::size_t i = 0; i < conf.size(); ++i) {
        SampleRecord r = basic_record("r" + std::to_string(i));
        r.confidence = conf[i];
        records.push_back(r);
    }
    auto [kept, dropped] = filter_bottom_quartile(records);
    REQUIRE(dropped.size() == 2);
    CHECK(dropped[0].id == "r1");  // 0.1 and 0.2 are the two lowest
    CHECK(dropped[1].id == "r6");
    // survivors appear in their original order
    std::vector<std::string> kept_ids;
    for (const auto& r : kept) kept_ids.push_back(r.id);
    CHECK(kept_ids == std::vector<std::string>{"r0", "r2", "r3", "r4", "r5", "r7"});
}

TEST_CASE("equal confidences break ties by ascending id, dropping the larger ids") {
    std::vector<SampleRecord> records;
    for (const char* id : {"d", "b", "a", "c"}) {
        SampleRecord r = basic_record(id);
        r.confidence = 0.5;
        records.push_back(r);
    }
    auto [kept, dropped] = filter_bottom_quartile(records);
    REQUIRE(dropped.size() == 1);
    CHECK(dropped[0].id == "d");  // the last id in ranking order goes first
}

TEST_CASE("split assignment agrees with an independent oracle") {
    PipelineConfig cfg;
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int i = 0; i < 2000; ++i) {
        SampleRecord r = basic_record("rec-" + std::to_string(i));
        r.scores.consistency = unit(rng);
        r.has_task_annotation = (rng() % 7) == 0;
        CHECK(assign_split(r, cfg) == split_oracle(r, cfg));
    }
}

TEST_CASE("split thresholds are inclusive at the documented boundaries") {
    PipelineConfig cfg;
    SampleRecord r = basic_record("edge");
    r.scores.consistency = cfg.tau_hi;  // exactly 0.8 -> high-consistency branch
    const SplitLabel hi = assign_split(r, cfg);
    CHECK((hi == SplitLabel::Pretrain || hi == SplitLabel::MultiQA));
    r.scores.consistency = cfg.tau_lo;  // exactly 0.4 -> Specific
    CHECK(assign_split(r, cfg) == SplitLabel::Specific);
    r.scores.consistency = 0.3999999;
    CHECK(assign_split(r, cfg) == SplitLabel::Negatives);
    r.has_task_annotation = true;  // annotation outranks consistency
    CHECK(assign_split(r, cfg) == SplitLabel::Tasks);

    SampleRecord missing = basic_record("noscore");
    CHECK_THROWS_AS(assign_split(missing, cfg), PipelineError);
}

TEST_CASE("mock integrator joins the captions with the AV marker") {
    SampleRecord r = basic_record("x");
    CHECK(integrate_captions(r, mock_integrator()) == "a dog runs [AV] barking");
    r.audio_caption.clear();
    CHECK_THROWS_AS(integrate_captions(r, mock_integrator()), PipelineError);
    r.audio_caption = "barking";
    r.video_caption.clear();
    CHECK_THROWS_AS(integrate_captions(r, mock_integrator()), PipelineError);
}

TEST_CASE("mock scorer is a pure function of id and score name") {
    ScorerBackend scorer = mock_scorer();
    SampleRecord a = basic_record("a"), b = basic_record("b");
    CHECK(scorer.score(a, "clip") == scorer.score(a, "clip"));
    CHECK(scorer.score(a, "clip") != scorer.score(b, "clip"));
    CHECK(scorer.score(a, "clip") != scorer.score(a, "annotation"));
    const double v = scorer.score(a, "consistency");
    CHECK(v >= 0.0);
    CHECK(v < 1.0);
}

TEST_CASE("prompt rendering is deterministic and split-specific") {
    SampleRecord r = basic_record("p");
    r.av_caption = "a dog runs [AV] barking";

    Instruction pre1 = render_prompt("Pretrain", r, 5);
    Instruction pre2 = render_prompt("Pretrain", r, 5);
    CHECK(pre1.question == pre2.question);
    CHECK(pre1.answer == r.av_caption);

    Instruction qa = render_prompt("MultiQA", r, 5);
    CHECK(qa.answer.find("a dog runs") != std::string::npos);

    Instruction task = render_prompt("Tasks", r, 5);
    CHECK(task.answer == "dog, barking");

    Instruction neg = render_prompt("Negatives", r, 5);
    CHECK_FALSE(neg.question.empty());
    CHECK_FALSE(neg.answer.empty());

    Instruction spec = render_prompt("Specific", r, 5);
    CHECK((spec.answer == r.video_caption || spec.answer == r.audio_caption));

    CHECK_THROWS_AS(render_prompt("NoSuchSplit", r, 5), PipelineError);
}

TEST_CASE("prompt rendering reports missing template inputs") {
    SampleRecord r = basic_record("q");
    r.av_caption = "joined";
    r.meta_info.clear();  // MultiQA needs the event meta key
    CHECK_THROWS_AS(render_prompt("MultiQA", r, 5), PipelineError);
    r.keywords.clear();
    CHECK_THROWS_AS(render_prompt("Tasks", r, 5), PipelineError);
    SampleRecord no_caption = basic_record("s");
    CHECK_THROWS_AS(render_prompt("Pretrain", no_caption, 5), PipelineError);
}

TEST_CASE("records round-trip through their line format byte-for-byte") {
    auto corpus = make_synthetic_corpus(20, 3);
    for (const auto& r : corpus) {
        const std::string line = r.to_json_line();
        CHECK(SampleRecord::from_json_line(line).to_json_line() == line);
    }
    CHECK_THROWS_AS(SampleRecord::from_json_line("not json"), PipelineError);
    CHECK_THROWS_AS(SampleRecord::from_json_line("{\"id\":\"\"}"), PipelineError);
    CHECK_THROWS_AS(SampleRecord::from_json_line("{\"id\":\"x\",\"meta_info\":{\"mood\":[\"odd\"]}}"),
                    PipelineError);
    CHECK_THROWS_AS(SampleRecord::from_json_line("{\"id\":\"x\",\"scores\":{\"clip\":2.0}}"), PipelineError);
}

TEST_CASE("synthetic corpus generation is deterministic") {
    auto a = make_synthetic_corpus(50, 9);
    auto b = make_synthetic_corpus(50, 9);
    auto c = make_synthetic_corpus(50, 10);
    CHECK(serialize(a) == serialize(b));
    CHECK(serialize(a) != serialize(c));
    std::set<std::string> ids;
    for (const auto& r : a) CHECK(ids.insert(r.id).second);
}

TEST_CASE("pipeline output is deterministic and partitions the kept records") {
    auto corpus = make_synthetic_corpus(60, 4);
    PipelineConfig cfg;
    PipelineResult r1 = run_pipeline(corpus, cfg);
    PipelineResult r2 = run_pipeline(corpus, cfg);
    CHECK(serialize(r1.records) == serialize(r2.records));

    CHECK(r1.stats.input_records == 60);
    CHECK(r1.stats.dropped_low_confidence == 15);
    CHECK(r1.stats.quarantined == 0);
    CHECK(r1.stats.kept() == 45);
    CHECK(r1.records.size() == 45);

    std::size_t split_total = 0;
    for (const auto& [name, count] : r1.stats.split_records) split_total += count;
    CHECK(split_total == 45);
    for (const auto& rec : r1.records) {
        REQUIRE(rec.split.has_value());
        REQUIRE(rec.confidence.has_value());
        CHECK_FALSE(rec.av_caption.empty());
        CHECK_FALSE(rec.question.empty());
        CHECK_FALSE(rec.answer.empty());
        CHECK(*rec.split == assign_split(rec, cfg));
    }
    CHECK(r1.stats.table().find("input=60") != std::string::npos);
}

TEST_CASE("invalid records are quarantined, not fatal") {
    auto corpus = make_synthetic_corpus(8, 5);
    corpus[2].video_caption.clear();  // fails caption integration
    SampleRecord bad = basic_record("bad-score");
    bad.scores.clip = 7.0;  // fails validation
    corpus.push_back(bad);

    PipelineResult r = run_pipeline(corpus, PipelineConfig{});
    CHECK(r.stats.quarantined >= 1);
    std::set<std::string> quarantined_ids;
    for (const auto& [id, reason] : r.quarantine) {
        quarantined_ids.insert(id);
        CHECK_FALSE(reason.empty());
    }
    CHECK(quarantined_ids.count("bad-score") == 1);
    for (const auto& rec : r.records) CHECK(quarantined_ids.count(rec.id) == 0);
}

TEST_CASE("unregistered backends are rejected") {
    PipelineConfig cfg;
    cfg.scorer_backend = "external-judge";
    CHECK_THROWS_AS(run_pipeline({}, cfg), PipelineError);
    cfg = PipelineConfig{};
    cfg.integrator_backend = "gpt";
    CHECK_THROWS_AS(run_pipeline({}, cfg), PipelineError);
}

TEST_CASE("corpus files round-trip and report IO failures") {
    namespace fs = std::filesystem;
    const std::string path = (fs::temp_directory_path() / "dolphin_test_corpus.jsonl").string();
    auto corpus = make_synthetic_corpus(10, 6);
    write_corpus(corpus, path);
    auto back = read_corpus(path);
    CHECK(serialize(back) == serialize(corpus));
    CHECK_FALSE(fs::exists(path + ".tmp"));  // written atomically via rename

    std::ofstream(path, std::ios::app) << "{broken\n";
    CHECK_THROWS_AS(read_corpus(path), PipelineError);
    fs::remove(path);
    CHECK_THROWS_AS(read_corpus(path), PipelineError);
}

TEST_CASE("hashing utilities are stable across calls and inputs") {
    CHECK(fnv1a("") == 0xcbf29ce484222325ull);
    CHECK(fnv1a("a") != fnv1a("b"));
    CHECK(fnv1a("dolphin") == fnv1a("dolphin"));
    for (const char* s : {"x", "y", "z", "longer-string"}) {
        const double u = hash_unit(s);
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
    }
}
