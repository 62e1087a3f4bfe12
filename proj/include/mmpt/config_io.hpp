#pragma once

#include <string>

#include "mmpt/client.hpp"
#include "mmpt/decoder.hpp"
#include "mmpt/schedule.hpp"

namespace mmpt {

// Run configuration: a "model" object plus a "stages" map, with optional
// "data" pointers to the mixture manifest and template files, output and
// preset locations, and the remote-judge client settings.
struct RunConfig {
    ModelConfig model;
    std::map<std::string, StageConfig> stages;
    std::string manifest_path;
    std::string templates_path;
    std::string presets_path;
    std::string out_dir = "runs";
    uint64_t seed = 0;
    std::string judge = "stub";  // "stub" or "remote"
    ClientConfig client;
};

RunConfig load_run_config(const std::string& path);

ModelConfig model_config_from_json_text(const std::string& text);
StageConfig stage_config_from_json_text(const std::string& text, const std::string& name);

}  // namespace mmpt
