// Operator CLI. Talks to the core exclusively through the C API.
#include <cstdio>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dolphin/dolphin.h"

namespace {

struct ConfigGuard {
    dolphin_config* cfg = nullptr;
    ~ConfigGuard() { dolphin_config_free(cfg); }
};

int load_config(const std::string& path, const std::vector<std::string>& overrides, ConfigGuard& guard) {
    guard.cfg = path.empty() ? dolphin_config_default() : dolphin_config_load(path.c_str());
    if (!guard.cfg) {
        std::fprintf(stderr, "error: %s\n", dolphin_last_error());
        return DOLPHIN_ERR_VALIDATION;
    }
    for (const std::string& kv : overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) {
            std::fprintf(stderr, "error: override must be key=value, got '%s'\n", kv.c_str());
            return DOLPHIN_ERR_VALIDATION;
        }
        if (dolphin_config_set(guard.cfg, kv.substr(0, eq).c_str(), kv.substr(eq + 1).c_str()) != DOLPHIN_OK) {
            std::fprintf(stderr, "error: %s\n", dolphin_last_error());
            return DOLPHIN_ERR_VALIDATION;
        }
    }
    return DOLPHIN_OK;
}

int emit(int status, char* text) {
    if (text) {
        std::fputs(text, stdout);
        dolphin_string_free(text);
    }
    if (status != DOLPHIN_OK) std::fprintf(stderr, "error: %s\n", dolphin_last_error());
    return status;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"dolphin: desk-scale audio-visual fusion model and AVU curation pipeline"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path;
    std::vector<std::string> overrides;
    app.add_option("--config", config_path, "config file ([model]/[train]/[pipeline] sections)");
    app.add_option("--set", overrides, "override a config key, e.g. --set model.dim=16");

    auto* shapes = app.add_subcommand("shapes", "print token/segment/parameter shape report");
    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference checks over every block type");
    auto* train = app.add_subcommand("train", "seeded overfit run under the configured freeze stage");
    std::string report_path;
    train->add_option("--report", report_path, "per-step JSONL report file");
    auto* curate = app.add_subcommand("curate", "run the AVU curation pipeline over a record corpus");
    std::string input_path, output_path;
    curate->add_option("input", input_path, "input corpus (one JSON record per line)")->required();
    curate->add_option("output", output_path, "output corpus path")->required();
    auto* dump = app.add_subcommand("config", "print the effective configuration");

    CLI11_PARSE(app, argc, argv);

    ConfigGuard guard;
    if (int rc = load_config(config_path, overrides, guard); rc != DOLPHIN_OK) return rc;

    char* text = nullptr;
    int status = DOLPHIN_ERR_VALIDATION;
    if (shapes->parsed()) status = dolphin_shapes(guard.cfg, &text);
    else if (gradcheck->parsed()) status = dolphin_gradcheck(guard.cfg, &text);
    else if (train->parsed())
        status = dolphin_train(guard.cfg, report_path.empty() ? nullptr : report_path.c_str(), &text);
    else if (curate->parsed()) status = dolphin_curate(guard.cfg, input_path.c_str(), output_path.c_str(), &text);
    else if (dump->parsed()) status = dolphin_config_dump(guard.cfg, &text);
    return emit(status, text);
}
