#include "dolphin/dolphin.h"

#include <cstring>
#include <string>

#include "avu.hpp"
#include "commands.hpp"
#include "config.hpp"

using dolphin::RunConfig;

struct dolphin_config {
    RunConfig cfg;
};

namespace {

thread_local std::string g_last_error;

char* dup_string(const std::string& s) {
    char* out = static_cast<char*>(std::malloc(s.size() + 1));
    if (out) std::memcpy(out, s.c_str(), s.size() + 1);
    return out;
}

int classify(const std::exception& e) {
    if (dynamic_cast<const dolphin::NumericError*>(&e)) return DOLPHIN_ERR_NUMERIC;
    const std::string msg = e.what();
    if (msg.find("cannot open") != std::string::npos || msg.find("not found") != std::string::npos ||
        msg.find("write failed") != std::string::npos)
        return DOLPHIN_ERR_IO;
    return DOLPHIN_ERR_VALIDATION;
}

template <typename Fn>
int guarded(Fn&& fn) {
    try {
        g_last_error.clear();
        return fn();
    } catch (const std::exception& e) {
        g_last_error = e.what();
        return classify(e);
    }
}

}  // namespace

extern "C" {

dolphin_config* dolphin_config_default(void) { return new dolphin_config{RunConfig::defaults()}; }

dolphin_config* dolphin_config_load(const char* path) {
    dolphin_config* out = nullptr;
    guarded([&]() {
        out = new dolphin_config{RunConfig::from_file(path ? path : "")};
        return DOLPHIN_OK;
    });
    return out;
}

int dolphin_config_set(dolphin_config* cfg, const char* key, const char* value) {
    if (!cfg || !key || !value) {
        g_last_error = "null argument";
        return DOLPHIN_ERR_VALIDATION;
    }
    return guarded([&]() {
        cfg->cfg.set(key, value);
        return DOLPHIN_OK;
    });
}

void dolphin_config_free(dolphin_config* cfg) { delete cfg; }

int dolphin_config_dump(const dolphin_config* cfg, char** out_text) {
    if (!cfg || !out_text) {
        g_last_error = "null argument";
        return DOLPHIN_ERR_VALIDATION;
    }
    return guarded([&]() {
        *out_text = dup_string(cfg->cfg.to_text());
        return DOLPHIN_OK;
    });
}

int dolphin_shapes(const dolphin_config* cfg, char** out_report) {
    if (!cfg || !out_report) {
        g_last_error = "null argument";
        return DOLPHIN_ERR_VALIDATION;
    }
    return guarded([&]() {
        *out_report = dup_string(dolphin::cmd_shapes(cfg->cfg));
        return DOLPHIN_OK;
    });
}

int dolphin_gradcheck(const dolphin_config* cfg, char** out_report) {
    if (!cfg || !out_report) {
        g_last_error = "null argument";
        return DOLPHIN_ERR_VALIDATION;
    }
    return guarded([&]() {
        bool all_pass = false;
        *out_report = dup_string(dolphin::cmd_gradcheck(cfg->cfg, all_pass));
        if (!all_pass) {
            g_last_error = "gradient check failed";
            return static_cast<int>(DOLPHIN_ERR_NUMERIC);
        }
        return static_cast<int>(DOLPHIN_OK);
    });
}

int dolphin_train(const dolphin_config* cfg, const char* report_path, char** out_summary) {
    if (!cfg || !out_summary) {
        g_last_error = "null argument";
        return DOLPHIN_ERR_VALIDATION;
    }
    return guarded([&]() {
        *out_summary = dup_string(dolphin::cmd_train(cfg->cfg, report_path ? report_path : ""));
        return DOLPHIN_OK;
    });
}

int dolphin_curate(const dolphin_config* cfg, const char* input_path, const char* output_path, char** out_stats) {
    if (!cfg || !input_path || !output_path || !out_stats) {
        g_last_error = "null argument";
        return DOLPHIN_ERR_VALIDATION;
    }
    return guarded([&]() {
        *out_stats = dup_string(dolphin::cmd_curate(cfg->cfg, input_path, output_path));
        return DOLPHIN_OK;
    });
}

void dolphin_string_free(char* s) { std::free(s); }

const char* dolphin_last_error(void) { return g_last_error.c_str(); }

}  // extern "C"
