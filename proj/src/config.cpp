#include "config.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <sstream>

extern char** environ;

namespace dolphin {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

std::size_t parse_size(const std::string& key, const std::string& v) {
    try {
        const long long n = std::stoll(v);
        if (n < 0) throw ConfigError(key + " must be non-negative");
        return static_cast<std::size_t>(n);
    } catch (const std::logic_error&) {
        throw ConfigError(key + ": cannot parse integer '" + v + "'");
    }
}

double parse_double(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        double d = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::logic_error&) {
        throw ConfigError(key + ": cannot parse number '" + v + "'");
    }
}

}  // namespace

void RunConfig::validate() const {
    try {
        model.validate();
    } catch (const std::exception& e) {
        throw ConfigError(std::string("model config: ") + e.what());
    }
    if (lr <= 0.0) throw ConfigError("train.lr must be positive");
    if (stage != 1 && stage != 2) throw ConfigError("train.stage must be 1 or 2");
    if (samples < 1) throw ConfigError("train.samples must be >= 1");
    if (pipeline.tau_lo < 0.0 || pipeline.tau_hi > 1.0 || pipeline.tau_lo > pipeline.tau_hi)
        throw ConfigError("pipeline thresholds must satisfy 0 <= tau_lo <= tau_hi <= 1");
    if (pipeline.multiqa_fraction < 0.0 || pipeline.multiqa_fraction > 1.0)
        throw ConfigError("pipeline.multiqa_fraction must be in [0,1]");
}

RunConfig RunConfig::defaults() { return RunConfig{}; }

void RunConfig::set(const std::string& dotted_key, const std::string& value) {
    const auto dot = dotted_key.find('.');
    if (dot == std::string::npos) throw ConfigError("expected section.key, got '" + dotted_key + "'");
    const std::string section = dotted_key.substr(0, dot);
    const std::string key = dotted_key.substr(dot + 1);
    auto& a = model.adapter;
    if (section == "model") {
        if (key == "dim") a.dim = parse_size(dotted_key, value);
        else if (key == "heads") a.heads = parse_size(dotted_key, value);
        else if (key == "n_blocks") a.n_blocks = parse_size(dotted_key, value);
        else if (key == "layers_per_block") a.layers_per_block = parse_size(dotted_key, value);
        else if (key == "frames") a.frames = parse_size(dotted_key, value);
        else if (key == "vis_channels") a.vis_channels = parse_size(dotted_key, value);
        else if (key == "vis_h") a.vis_h = parse_size(dotted_key, value);
        else if (key == "vis_w") a.vis_w = parse_size(dotted_key, value);
        else if (key == "patch") a.patch = parse_size(dotted_key, value);
        else if (key == "aud_h") a.aud_h = parse_size(dotted_key, value);
        else if (key == "aud_w") a.aud_w = parse_size(dotted_key, value);
        else if (key == "d_llm") model.d_llm = parse_size(dotted_key, value);
        else if (key == "vocab") model.vocab = parse_size(dotted_key, value);
        else if (key == "readout_blocks") model.readout_blocks = parse_size(dotted_key, value);
        else if (key == "target_len") model.target_len = parse_size(dotted_key, value);
        else if (key == "seed") model.seed = parse_size(dotted_key, value);
        else throw ConfigError("unknown key '" + dotted_key + "'");
    } else if (section == "train") {
        if (key == "lr") lr = parse_double(dotted_key, value);
        else if (key == "steps") steps = parse_size(dotted_key, value);
        else if (key == "stage") stage = static_cast<int>(parse_size(dotted_key, value));
        else if (key == "samples") samples = parse_size(dotted_key, value);
        else throw ConfigError("unknown key '" + dotted_key + "'");
    } else if (section == "pipeline") {
        if (key == "tau_hi") pipeline.tau_hi = parse_double(dotted_key, value);
        else if (key == "tau_lo") pipeline.tau_lo = parse_double(dotted_key, value);
        else if (key == "multiqa_fraction") pipeline.multiqa_fraction = parse_double(dotted_key, value);
        else if (key == "seed") pipeline.seed = parse_size(dotted_key, value);
        else if (key == "scorer_backend") pipeline.scorer_backend = value;
        else if (key == "integrator_backend") pipeline.integrator_backend = value;
        else throw ConfigError("unknown key '" + dotted_key + "'");
    } else {
        throw ConfigError("unknown section '" + section + "'");
    }
}

RunConfig RunConfig::from_text(const std::string& text) {
    RunConfig cfg;
    std::istringstream in(text);
    std::string line, section;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#' || t[0] == ';') continue;
        if (t.front() == '[') {
            if (t.back() != ']') throw ConfigError("line " + std::to_string(lineno) + ": malformed section header");
            section = trim(t.substr(1, t.size() - 2));
            continue;
        }
        const auto eq = t.find('=');
        if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
        if (section.empty()) throw ConfigError("line " + std::to_string(lineno) + ": key outside any section");
        cfg.set(section + "." + trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
    }
    return cfg;
}

RunConfig RunConfig::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    RunConfig cfg = from_text(buf.str());
    cfg.apply_env_overrides();
    return cfg;
}

void RunConfig::apply_env_overrides() {
    constexpr const char* kPrefix = "DOLPHIN_";
    for (char** e = environ; e && *e; ++e) {
        const std::string entry = *e;
        if (entry.rfind(kPrefix, 0) != 0) continue;
        const auto eq = entry.find('=');
        if (eq == std::string::npos) continue;
        std::string name = entry.substr(std::string(kPrefix).size(), eq - std::string(kPrefix).size());
        const std::string value = entry.substr(eq + 1);
        const auto us = name.find('_');
        if (us == std::string::npos) throw ConfigError("malformed override variable: " + entry.substr(0, eq));
        std::string key = name.substr(0, us) + "." + name.substr(us + 1);
        std::transform(key.begin(), key.end(), key.begin(), [](unsigned char c) { return std::tolower(c); });
        set(key, value);
    }
}

std::string RunConfig::to_text() const {
    const auto& a = model.adapter;
    std::ostringstream os;
    os << "[model]\n"
       << "dim = " << a.dim << "\nheads = " << a.heads << "\nn_blocks = " << a.n_blocks
       << "\nlayers_per_block = " << a.layers_per_block << "\nframes = " << a.frames
       << "\nvis_channels = " << a.vis_channels << "\nvis_h = " << a.vis_h << "\nvis_w = " << a.vis_w
       << "\npatch = " << a.patch << "\naud_h = " << a.aud_h << "\naud_w = " << a.aud_w
       << "\nd_llm = " << model.d_llm << "\nvocab = " << model.vocab
       << "\nreadout_blocks = " << model.readout_blocks << "\ntarget_len = " << model.target_len
       << "\nseed = " << model.seed << "\n\n[train]\n"
       << "lr = " << lr << "\nsteps = " << steps << "\nstage = " << stage << "\nsamples = " << samples
       << "\n\n[pipeline]\n"
       << "tau_hi = " << pipeline.tau_hi << "\ntau_lo = " << pipeline.tau_lo
       << "\nmultiqa_fraction = " << pipeline.multiqa_fraction << "\nseed = " << pipeline.seed
       << "\nscorer_backend = " << pipeline.scorer_backend << "\nintegrator_backend = " << pipeline.integrator_backend
       << "\n";
    return os.str();
}

}  // namespace dolphin
