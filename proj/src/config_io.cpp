#include "mmpt/config_io.hpp"

#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "mmpt/errors.hpp"

namespace mmpt {

namespace {

using nlohmann::json;

ModelConfig model_from_json(const json& j) {
    ModelConfig c;
    c.d_model = j.value("d_model", c.d_model);
    c.n_layers = j.value("n_layers", c.n_layers);
    c.n_heads = j.value("n_heads", c.n_heads);
    c.vocab_size = j.value("vocab_size", c.vocab_size);
    c.max_seq_len = j.value("max_seq_len", c.max_seq_len);
    if (j.contains("fusion_mode"))
        c.fusion_mode = fusion_mode_from(j.at("fusion_mode").get<std::string>());
    c.llm_frozen = j.value("llm_frozen", c.llm_frozen);
    c.adapter_interval = j.value("adapter_interval", c.adapter_interval);
    c.adapter_bottleneck = j.value("adapter_bottleneck", c.adapter_bottleneck);
    c.cross_attn_interval = j.value("cross_attn_interval", c.cross_attn_interval);
    c.bidirectional_prefix = j.value("bidirectional_prefix", c.bidirectional_prefix);
    c.d_v = j.value("d_v", c.d_v);
    c.tower_depth = j.value("tower_depth", c.tower_depth);
    c.tower_heads = j.value("tower_heads", c.tower_heads);
    c.grid_rows = j.value("grid_rows", c.grid_rows);
    c.grid_cols = j.value("grid_cols", c.grid_cols);
    c.max_frames = j.value("max_frames", c.max_frames);
    c.vision_frozen = j.value("vision_frozen", c.vision_frozen);
    c.resampler_queries = j.value("resampler_queries", c.resampler_queries);
    c.resampler_depth = j.value("resampler_depth", c.resampler_depth);
    c.resampler_heads = j.value("resampler_heads", c.resampler_heads);
    c.resampler_query_self_attn =
        j.value("resampler_query_self_attn", c.resampler_query_self_attn);
    c.validate();
    return c;
}

StageConfig stage_from_json(const json& j, const std::string& name) {
    StageConfig c;
    c.name = j.value("name", name);
    c.total_steps = j.value("total_steps", c.total_steps);
    c.peak_lr = j.value("peak_lr", c.peak_lr);
    c.warmup_rate = j.value("warmup_rate", c.warmup_rate);
    c.floor_lr = j.value("floor_lr", c.floor_lr);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.resolution = j.value("resolution", c.resolution);
    if (j.contains("mask_policy")) {
        const std::string p = j.at("mask_policy").get<std::string>();
        if (p == "all_tokens")
            c.mask_policy = LossMaskPolicy::kAllTokens;
        else if (p == "response_only")
            c.mask_policy = LossMaskPolicy::kResponseOnly;
        else
            throw ConfigError("stage '" + name + "': unknown mask_policy '" + p + "'");
    }
    c.checkpoint_interval = j.value("checkpoint_interval", c.checkpoint_interval);
    c.validate();
    return c;
}

json parse_text(const std::string& text, const std::string& what) {
    try {
        return json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(what + " is not valid JSON: " + e.what());
    }
}

}  // namespace

ModelConfig model_config_from_json_text(const std::string& text) {
    return model_from_json(parse_text(text, "model config"));
}

StageConfig stage_config_from_json_text(const std::string& text, const std::string& name) {
    return stage_from_json(parse_text(text, "stage config"), name);
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    const json root = parse_text(buf.str(), "config file '" + path + "'");

    RunConfig rc;
    try {
        if (root.contains("model")) rc.model = model_from_json(root.at("model"));
        if (root.contains("stages")) {
            for (const auto& [name, body] : root.at("stages").items())
                rc.stages.emplace(name, stage_from_json(body, name));
        }
        if (root.contains("data")) {
            rc.manifest_path = root.at("data").value("manifest", "");
            rc.templates_path = root.at("data").value("templates", "");
            rc.presets_path = root.at("data").value("presets", "");
        }
        rc.out_dir = root.value("out_dir", rc.out_dir);
        rc.seed = root.value("seed", rc.seed);
        if (root.contains("judge")) {
            const json& j = root.at("judge");
            rc.judge = j.value("kind", rc.judge);
            if (rc.judge != "stub" && rc.judge != "remote")
                throw ConfigError("judge kind must be 'stub' or 'remote', got '" + rc.judge +
                                  "'");
            rc.client.base_url = j.value("base_url", rc.client.base_url);
            rc.client.path = j.value("path", rc.client.path);
            rc.client.model = j.value("model", rc.client.model);
            rc.client.api_key_env = j.value("api_key_env", rc.client.api_key_env);
            rc.client.max_retries = j.value("max_retries", rc.client.max_retries);
            rc.client.timeout_sec = j.value("timeout_sec", rc.client.timeout_sec);
        }
    } catch (const json::exception& e) {
        throw ConfigError("config file '" + path + "': " + e.what());
    }
    return rc;
}

}  // namespace mmpt
