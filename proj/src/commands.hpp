#pragma once

#include <string>
#include <vector>

#include "config.hpp"

namespace dolphin {

// process exit codes, shared by the C API and the CLI
enum StatusCode { kOk = 0, kValidationError = 2, kNumericError = 3, kIoError = 4 };

struct GradCheckResult {
    std::string block;
    double max_rel_error;
    bool pass;
};

/// Finite-difference checks over every block type at small dims derived
/// from the config.
std::vector<GradCheckResult> run_gradchecks(const RunConfig& cfg);

std::string cmd_shapes(const RunConfig& cfg);
std::string cmd_gradcheck(const RunConfig& cfg, bool& all_pass);
std::string cmd_train(const RunConfig& cfg, const std::string& report_path);
std::string cmd_curate(const RunConfig& cfg, const std::string& input_path, const std::string& output_path);

}  // namespace dolphin
