#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace dolphin::avu {

struct PipelineError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline const std::vector<std::string> kMetaKeys = {"event", "object", "scene", "place", "action", "emotion"};

enum class SplitLabel { Pretrain, MultiQA, Specific, Negatives, Tasks };

const char* split_name(SplitLabel s);

struct Scores {
    std::optional<double> clip;
    std::optional<double> self_consistency;
    std::optional<double> annotation;
    std::optional<double> consistency;
};

struct SampleRecord {
    std::string id;
    std::string video_caption;
    std::string audio_caption;
    std::map<std::string, std::vector<std::string>> meta_info;  // keys restricted to kMetaKeys
    std::vector<std::string> keywords;
    Scores scores;
    bool has_task_annotation = false;
    std::optional<double> confidence;
    std::optional<SplitLabel> split;
    std::string av_caption;
    std::string question;
    std::string answer;

    void validate() const;
    std::string to_json_line() const;
    static SampleRecord from_json_line(const std::string& line);
};

/// Stable 64-bit FNV-1a; all mock scoring and seeded selection goes through
/// this so pipeline output does not depend on the stdlib's std::hash.
std::uint64_t fnv1a(const std::string& s);
double hash_unit(const std::string& s);  // -> [0,1)

/// Named scoring backends. The bundled "mock" backend is a pure function of
/// the record id and score name; external judge services plug in behind the
/// same signature.
struct ScorerBackend {
    std::string name;
    std::function<double(const SampleRecord&, const std::string& score_name)> score;
};

ScorerBackend mock_scorer();

struct IntegratorBackend {
    std::string name;
    std::function<std::string(const SampleRecord&)> integrate;
};

/// Joins the two captions with a fixed " [AV] " marker.
IntegratorBackend mock_integrator();

struct PipelineConfig {
    double tau_hi = 0.8;
    double tau_lo = 0.4;
    double multiqa_fraction = 0.31;
    std::uint64_t seed = 1;
    std::string scorer_backend = "mock";
    std::string integrator_backend = "mock";
};

/// Weighted confidence with fixed weights (clip 2, self-consistency 1,
/// annotation 5) normalized to [0,1].
double compute_confidence(const Scores& s);

/// Rank by descending confidence (ties by ascending id) and drop the lowest
/// floor(n/4); kept records keep their input order.
std::pair<std::vector<SampleRecord>, std::vector<SampleRecord>> filter_bottom_quartile(
    std::vector<SampleRecord> records);

SplitLabel assign_split(const SampleRecord& rec, const PipelineConfig& cfg);

std::string integrate_captions(const SampleRecord& rec, const IntegratorBackend& integrator);

struct Instruction {
    std::string question;
    std::string answer;
};

/// Seeded template rendering for the record's split family.
Instruction render_prompt(const std::string& template_id, const SampleRecord& rec, std::uint64_t seed);

struct PipelineStats {
    std::size_t input_records = 0;
    std::size_t dropped_low_confidence = 0;
    std::size_t quarantined = 0;
    std::map<std::string, std::size_t> split_records;
    std::map<std::string, std::size_t> split_instructions;

    std::size_t kept() const;
    std::string table() const;  // plain-text summary table
};

struct PipelineResult {
    std::vector<SampleRecord> records;
    std::vector<std::pair<std::string, std::string>> quarantine;  // (id, reason)
    PipelineStats stats;
};

PipelineResult run_pipeline(const std::vector<SampleRecord>& input, const PipelineConfig& cfg);

std::vector<SampleRecord> read_corpus(const std::string& path);
void write_corpus(const std::vector<SampleRecord>& records, const std::string& path);  // atomic

/// Deterministic synthetic corpus for fixtures and tests.
std::vector<SampleRecord> make_synthetic_corpus(std::size_t n, std::uint64_t seed);

}  // namespace dolphin::avu
