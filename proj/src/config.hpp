#pragma once

#include <string>

#include "avu.hpp"
#include "model.hpp"

namespace dolphin {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Full run configuration: [model], [train] and [pipeline] sections of the
/// config file. Unknown sections or keys are rejected; environment
/// variables DOLPHIN_<SECTION>_<KEY> override individual scalars.
struct RunConfig {
    ModelConfig model;
    double lr = 0.1;
    std::size_t steps = 500;
    int stage = 1;
    std::size_t samples = 8;
    avu::PipelineConfig pipeline;

    /// Throws ConfigError on invalid values.
    void validate() const;

    static RunConfig defaults();
    static RunConfig from_file(const std::string& path);
    static RunConfig from_text(const std::string& text);
    void set(const std::string& dotted_key, const std::string& value);  // e.g. "model.dim"
    void apply_env_overrides();
    std::string to_text() const;
};

}  // namespace dolphin
