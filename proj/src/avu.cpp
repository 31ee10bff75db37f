#include "avu.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "json.hpp"

namespace dolphin::avu {

using nlohmann::json;

const char* split_name(SplitLabel s) {
    switch (s) {
        case SplitLabel::Pretrain: return "Pretrain";
        case SplitLabel::MultiQA: return "MultiQA";
        case SplitLabel::Specific: return "Specific";
        case SplitLabel::Negatives: return "Negatives";
        case SplitLabel::Tasks: return "Tasks";
    }
    return "?";
}

namespace {

SplitLabel split_from_name(const std::string& s) {
    for (SplitLabel l : {SplitLabel::Pretrain, SplitLabel::MultiQA, SplitLabel::Specific, SplitLabel::Negatives,
                         SplitLabel::Tasks})
        if (s == split_name(l)) return l;
    throw PipelineError("unknown split label: " + s);
}

void check_unit(const std::optional<double>& v, const char* name) {
    if (v && (*v < 0.0 || *v > 1.0))
        throw PipelineError(std::string("score '") + name + "' outside [0,1]: " + std::to_string(*v));
}

}  // namespace

void SampleRecord::validate() const {
    if (id.empty()) throw PipelineError("record with empty id");
    for (const auto& [key, _] : meta_info)
        if (std::find(kMetaKeys.begin(), kMetaKeys.end(), key) == kMetaKeys.end())
            throw PipelineError("record " + id + ": unknown meta_info key '" + key + "'");
    check_unit(scores.clip, "clip");
    check_unit(scores.self_consistency, "self_consistency");
    check_unit(scores.annotation, "annotation");
    check_unit(scores.consistency, "consistency");
}

std::string SampleRecord::to_json_line() const {
    json j;
    j["id"] = id;
    j["video_caption"] = video_caption;
    j["audio_caption"] = audio_caption;
    j["meta_info"] = meta_info;
    j["keywords"] = keywords;
    json s = json::object();
    if (scores.clip) s["clip"] = *scores.clip;
    if (scores.self_consistency) s["self_consistency"] = *scores.self_consistency;
    if (scores.annotation) s["annotation"] = *scores.annotation;
    if (scores.consistency) s["consistency"] = *scores.consistency;
    j["scores"] = s;
    j["has_task_annotation"] = has_task_annotation;
    if (confidence) j["confidence"] = *confidence;
    if (split) j["split"] = split_name(*split);
    if (!av_caption.empty()) j["av_caption"] = av_caption;
    if (!question.empty()) j["question"] = question;
    if (!answer.empty()) j["answer"] = answer;
    return j.dump();
}

SampleRecord SampleRecord::from_json_line(const std::string& line) {
    json j;
    try {
        j = json::parse(line);
    } catch (const json::exception& e) {
        throw PipelineError(std::string("record parse error: ") + e.what());
    }
    SampleRecord r;
    r.id = j.at("id").get<std::string>();
    r.video_caption = j.value("video_caption", "");
    r.audio_caption = j.value("audio_caption", "");
    if (j.contains("meta_info")) r.meta_info = j["meta_info"].get<decltype(r.meta_info)>();
    if (j.contains("keywords")) r.keywords = j["keywords"].get<std::vector<std::string>>();
    if (j.contains("scores")) {
        const json& s = j["scores"];
        if (s.contains("clip")) r.scores.clip = s["clip"].get<double>();
        if (s.contains("self_consistency")) r.scores.self_consistency = s["self_consistency"].get<double>();
        if (s.contains("annotation")) r.scores.annotation = s["annotation"].get<double>();
        if (s.contains("consistency")) r.scores.consistency = s["consistency"].get<double>();
    }
    r.has_task_annotation = j.value("has_task_annotation", false);
    if (j.contains("confidence")) r.confidence = j["confidence"].get<double>();
    if (j.contains("split")) r.split = split_from_name(j["split"].get<std::string>());
    r.av_caption = j.value("av_caption", "");
    r.question = j.value("question", "");
    r.answer = j.value("answer", "");
    r.validate();
    return r;
}

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

double hash_unit(const std::string& s) {
    return static_cast<double>(fnv1a(s) >> 11) / 9007199254740992.0;  // 2^53
}

ScorerBackend mock_scorer() {
    return {"mock", [](const SampleRecord& rec, const std::string& score_name) {
                return hash_unit(rec.id + "|" + score_name);
            }};
}

IntegratorBackend mock_integrator() {
    return {"mock", [](const SampleRecord& rec) { return rec.video_caption + " [AV] " + rec.audio_caption; }};
}

double compute_confidence(const Scores& s) {
    if (!s.clip || !s.self_consistency || !s.annotation)
        throw PipelineError("confidence requires clip, self_consistency and annotation scores");
    check_unit(s.clip, "clip");
    check_unit(s.self_consistency, "self_consistency");
    check_unit(s.annotation, "annotation");
    return (2.0 * *s.clip + 1.0 * *s.self_consistency + 5.0 * *s.annotation) / 8.0;
}

std::pair<std::vector<SampleRecord>, std::vector<SampleRecord>> filter_bottom_quartile(
    std::vector<SampleRecord> records) {
    const std::size_t n = records.size();
    const std::size_t drop = n / 4;
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&records](std::size_t a, std::size_t b) {
        const double ca = records[a].confidence.value_or(-1.0);
        const double cb = records[b].confidence.value_or(-1.0);
        if (ca != cb) return ca > cb;
        return records[a].id < records[b].id;
    });
    std::vector<bool> dropped(n, false);
    for (std::size_t i = n - drop; i < n; ++i) dropped[order[i]] = true;
    std::pair<std::vector<SampleRecord>, std::vector<SampleRecord>> out;
    for (std::size_t i = 0; i < n; ++i)
        (dropped[i] ? out.second : out.first).push_back(std::move(records[i]));
    return out;
}

SplitLabel assign_split(const SampleRecord& rec, const PipelineConfig& cfg) {
    if (rec.has_task_annotation) return SplitLabel::Tasks;
    if (!rec.scores.consistency) throw PipelineError("record " + rec.id + " has no consistency score");
    const double c = *rec.scores.consistency;
    if (c < 0.0 || c > 1.0) throw PipelineError("record " + rec.id + ": consistency outside [0,1]");
    if (c >= cfg.tau_hi) {
        // deterministic diversion of a fixed fraction of high-consistency
        // records into the multi-turn Q&A split
        return hash_unit(rec.id + "|multiqa") < cfg.multiqa_fraction ? SplitLabel::MultiQA : SplitLabel::Pretrain;
    }
    if (c >= cfg.tau_lo) return SplitLabel::Specific;
    return SplitLabel::Negatives;
}

std::string integrate_captions(const SampleRecord& rec, const IntegratorBackend& integrator) {
    if (rec.video_caption.empty()) throw PipelineError("record " + rec.id + ": empty video caption");
    if (rec.audio_caption.empty()) throw PipelineError("record " + rec.id + ": empty audio caption");
    return integrator.integrate(rec);
}

namespace {

const std::vector<std::string> kPretrainQuestions = {
    "Describe the video with both its visual and audio content.",
    "What is happening in this video, considering what you see and hear?",
    "Give a caption covering the visuals and the sounds of this clip.",
    "Summarize the visual scene and the audio of this video.",
};

const std::vector<std::string> kMultiQAQuestions = {
    "What event takes place in this video, and what sound accompanies it?",
    "Based on both modalities, what is the main event and how does it sound?",
};

const std::vector<std::string> kSpecificVisualQuestions = {
    "Focusing only on the visuals, what do you see?",
    "Ignore the audio. What is shown in the frames?",
};

const std::vector<std::string> kSpecificAudioQuestions = {
    "Focusing only on the audio, what do you hear?",
    "Ignore the visuals. What sound is present?",
};

const std::vector<std::string> kNegativeQuestions = {
    "Is the source of the sound visible in the frames?",
    "Does the audio match what is shown in the video?",
};

const std::vector<std::string> kNegativeAnswers = {
    "No. The audio does not correspond to anything visible in the video.",
    "I cannot connect the sound to the visual content; they do not match.",
};

const std::vector<std::string> kTaskQuestions = {
    "Which of the annotated keywords apply to this audio-visual clip?",
    "Identify the annotated audio-visual events in this clip.",
};

std::size_t pick(std::size_t n, std::uint64_t seed, const std::string& salt) {
    std::mt19937_64 rng(seed ^ fnv1a(salt));
    return static_cast<std::size_t>(rng() % n);
}

std::string join(const std::vector<std::string>& items, const std::string& sep) {
    std::string out;
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (i) out += sep;
        out += items[i];
    }
    return out;
}

const std::vector<std::string>& require_meta(const SampleRecord& rec, const std::string& key) {
    auto it = rec.meta_info.find(key);
    if (it == rec.meta_info.end() || it->second.empty())
        throw PipelineError("record " + rec.id + ": template references missing meta_info key '" + key + "'");
    return it->second;
}

}  // namespace

Instruction render_prompt(const std::string& template_id, const SampleRecord& rec, std::uint64_t seed) {
    if (template_id == "Pretrain") {
        const auto& q = kPretrainQuestions[pick(kPretrainQuestions.size(), seed, rec.id + "|q")];
        if (rec.av_caption.empty()) throw PipelineError("record " + rec.id + ": no integrated caption to answer with");
        return {q, rec.av_caption};
    }
    if (template_id == "MultiQA") {
        const auto& q = kMultiQAQuestions[pick(kMultiQAQuestions.size(), seed, rec.id + "|q")];
        const auto& events = require_meta(rec, "event");
        return {q, "The main event is " + join(events, ", ") + ". " + rec.audio_caption};
    }
    if (template_id == "Specific") {
        // alternate deterministically between the two modality families
        const bool visual = pick(2, seed, rec.id + "|modality") == 0;
        const auto& pool = visual ? kSpecificVisualQuestions : kSpecificAudioQuestions;
        const auto& q = pool[pick(pool.size(), seed, rec.id + "|q")];
        return {q, visual ? rec.video_caption : rec.audio_caption};
    }
    if (template_id == "Negatives") {
        const auto& q = kNegativeQuestions[pick(kNegativeQuestions.size(), seed, rec.id + "|q")];
        return {q, kNegativeAnswers[pick(kNegativeAnswers.size(), seed, rec.id + "|a")]};
    }
    if (template_id == "Tasks") {
        const auto& q = kTaskQuestions[pick(kTaskQuestions.size(), seed, rec.id + "|q")];
        if (rec.keywords.empty()) throw PipelineError("record " + rec.id + ": task record without keywords");
        return {q, join(rec.keywords, ", ")};
    }
    throw PipelineError("unknown template id: " + template_id);
}

std::size_t PipelineStats::kept() const {
    std::size_t total = 0;
    for (const auto& [_, v] : split_records) total += v;
    return total;
}

std::string PipelineStats::table() const {
    std::ostringstream os;
    os << "split        records  instructions\n";
    os << "-----------  -------  ------------\n";
    for (SplitLabel l : {SplitLabel::Pretrain, SplitLabel::MultiQA, SplitLabel::Specific, SplitLabel::Negatives,
                         SplitLabel::Tasks}) {
        const std::string name = split_name(l);
        const std::size_t r = split_records.count(name) ? split_records.at(name) : 0;
        const std::size_t i = split_instructions.count(name) ? split_instructions.at(name) : 0;
        os << name;
        for (std::size_t p = name.size(); p < 13; ++p) os << ' ';
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%7zu  %12zu\n", r, i);
        os << buf;
    }
    os << "\ninput=" << input_records << " dropped=" << dropped_low_confidence << " quarantined=" << quarantined
       << " kept=" << kept() << "\n";
    return os.str();
}

PipelineResult run_pipeline(const std::vector<SampleRecord>& input, const PipelineConfig& cfg) {
    if (cfg.scorer_backend != "mock")
        throw PipelineError("scorer backend '" + cfg.scorer_backend + "' is not registered");
    if (cfg.integrator_backend != "mock")
        throw PipelineError("integrator backend '" + cfg.integrator_backend + "' is not registered");
    const ScorerBackend scorer = mock_scorer();
    const IntegratorBackend integrator = mock_integrator();

    PipelineResult result;
    result.stats.input_records = input.size();

    std::vector<SampleRecord> scored;
    scored.reserve(input.size());
    for (const SampleRecord& rec_in : input) {
        SampleRecord rec = rec_in;
        try {
            rec.validate();
            if (!rec.scores.clip) rec.scores.clip = scorer.score(rec, "clip");
            if (!rec.scores.self_consistency) rec.scores.self_consistency = scorer.score(rec, "self_consistency");
            if (!rec.scores.annotation) rec.scores.annotation = scorer.score(rec, "annotation");
            if (!rec.scores.consistency) rec.scores.consistency = scorer.score(rec, "consistency");
            rec.confidence = compute_confidence(rec.scores);
            scored.push_back(std::move(rec));
        } catch (const PipelineError& e) {
            result.quarantine.emplace_back(rec.id, e.what());
            ++result.stats.quarantined;
        }
    }

    auto [kept, dropped] = filter_bottom_quartile(std::move(scored));
    result.stats.dropped_low_confidence = dropped.size();

    for (SampleRecord& rec : kept) {
        try {
            rec.split = assign_split(rec, cfg);
            rec.av_caption = integrate_captions(rec, integrator);
            Instruction inst = render_prompt(split_name(*rec.split), rec, cfg.seed);
            rec.question = inst.question;
            rec.answer = inst.answer;
            ++result.stats.split_records[split_name(*rec.split)];
            ++result.stats.split_instructions[split_name(*rec.split)];
            result.records.push_back(std::move(rec));
        } catch (const PipelineError& e) {
            result.quarantine.emplace_back(rec.id, e.what());
            ++result.stats.quarantined;
        }
    }
    return result;
}

std::vector<SampleRecord> read_corpus(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw PipelineError("cannot open corpus: " + path);
    std::vector<SampleRecord> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            out.push_back(SampleRecord::from_json_line(line));
        } catch (const PipelineError& e) {
            throw PipelineError(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

void write_corpus(const std::vector<SampleRecord>& records, const std::string& path) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::trunc);
        if (!out) throw PipelineError("cannot open " + tmp + " for writing");
        for (const auto& r : records) out << r.to_json_line() << "\n";
        if (!out) throw PipelineError("write failed: " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

std::vector<SampleRecord> make_synthetic_corpus(std::size_t n, std::uint64_t seed) {
    static const std::vector<std::string> kSubjects = {"a dog", "a violinist", "a train", "a crowd", "a waterfall",
                                                       "a drummer", "a cat", "an engine"};
    static const std::vector<std::string> kActions = {"runs across a field", "performs on stage", "passes a station",
                                                      "cheers loudly", "crashes over rocks", "plays a solo",
                                                      "chases a toy", "revs repeatedly"};
    static const std::vector<std::string> kSounds = {"barking", "violin music", "rail clatter", "applause",
                                                     "rushing water", "drum beats", "meowing", "engine roar"};
    std::vector<SampleRecord> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        SampleRecord r;
        char idbuf[32];
        std::snprintf(idbuf, sizeof(idbuf), "sample-%04zu", i);
        r.id = idbuf;
        std::mt19937_64 rng(seed ^ fnv1a(r.id));
        const auto& subj = kSubjects[rng() % kSubjects.size()];
        const auto& act = kActions[rng() % kActions.size()];
        const auto& snd = kSounds[rng() % kSounds.size()];
        r.video_caption = subj + " " + act;
        r.audio_caption = "the sound of " + snd;
        r.meta_info["event"] = {subj + " " + act};
        r.meta_info["object"] = {subj};
        r.meta_info["action"] = {act};
        r.keywords = {subj, snd};
        r.has_task_annotation = (rng() % 10) == 0;
        out.push_back(std::move(r));
    }
    return out;
}

}  // namespace dolphin::avu
