#include "mmpt/decoder.hpp"

namespace mmpt {

std::string fusion_mode_name(FusionMode m) {
    return m == FusionMode::kPrefix ? "prefix" : "cross_attention";
}

FusionMode fusion_mode_from(const std::string& s) {
    if (s == "prefix") return FusionMode::kPrefix;
    if (s == "cross_attention") return FusionMode::kCrossAttention;
    throw ConfigError("unknown fusion mode '" + s + "'");
}

void ModelConfig::validate() const {
    if (d_model <= 0 || n_layers <= 0 || n_heads <= 0 || d_v <= 0 || tower_depth <= 0 ||
        tower_heads <= 0 || resampler_queries <= 0 || resampler_depth <= 0 ||
        resampler_heads <= 0 || grid_rows <= 0 || grid_cols <= 0 || max_frames <= 0) {
        throw ConfigError("model config: dimensions must be positive");
    }
    if (d_model % n_heads != 0) {
        throw ConfigError("model config: d_model " + std::to_string(d_model) +
                          " not divisible by " + std::to_string(n_heads) + " heads");
    }
    if (d_v % tower_heads != 0) {
        throw ConfigError("model config: d_v not divisible by tower heads");
    }
    if (d_model % resampler_heads != 0) {
        throw ConfigError("model config: d_model not divisible by resampler heads");
    }
    if (adapter_interval < 1 || cross_attn_interval < 1) {
        throw ConfigError("model config: insertion intervals must be at least 1");
    }
    if (adapter_bottleneck <= 0) {
        throw ConfigError("model config: adapter bottleneck must be positive");
    }
    if (vocab_size < 260) {
        throw ConfigError("model config: vocabulary must cover all byte and special ids");
    }
    if (max_seq_len < resampler_queries + 8) {
        throw ConfigError("model config: max_seq_len leaves no room for text after the prefix");
    }
}

std::map<std::string, std::string> ModelConfig::to_card() const {
    return {
        {"d_model", std::to_string(d_model)},
        {"n_layers", std::to_string(n_layers)},
        {"n_heads", std::to_string(n_heads)},
        {"vocab_size", std::to_string(vocab_size)},
        {"max_seq_len", std::to_string(max_seq_len)},
        {"fusion_mode", fusion_mode_name(fusion_mode)},
        {"llm_frozen", llm_frozen ? "true" : "false"},
        {"adapter_interval", std::to_string(adapter_interval)},
        {"adapter_bottleneck", std::to_string(adapter_bottleneck)},
        {"cross_attn_interval", std::to_string(cross_attn_interval)},
        {"bidirectional_prefix", bidirectional_prefix ? "true" : "false"},
        {"d_v", std::to_string(d_v)},
        {"tower_depth", std::to_string(tower_depth)},
        {"tower_heads", std::to_string(tower_heads)},
        {"grid_rows", std::to_string(grid_rows)},
        {"grid_cols", std::to_string(grid_cols)},
        {"max_frames", std::to_string(max_frames)},
        {"vision_frozen", vision_frozen ? "true" : "false"},
        {"resampler_queries", std::to_string(resampler_queries)},
        {"resampler_depth", std::to_string(resampler_depth)},
        {"resampler_heads", std::to_string(resampler_heads)},
        {"resampler_query_self_attn", resampler_query_self_attn ? "true" : "false"},
    };
}

namespace {

int card_int(const std::map<std::string, std::string>& kv, const std::string& key) {
    auto it = kv.find(key);
    if (it == kv.end()) throw ConfigError("model card: missing key '" + key + "'");
    try {
        return std::stoi(it->second);
    } catch (const std::exception&) {
        throw ConfigError("model card: bad integer for '" + key + "'");
    }
}

bool card_bool(const std::map<std::string, std::string>& kv, const std::string& key) {
    auto it = kv.find(key);
    if (it == kv.end()) throw ConfigError("model card: missing key '" + key + "'");
    if (it->second == "true") return true;
    if (it->second == "false") return false;
    throw ConfigError("model card: bad boolean for '" + key + "'");
}

}  // namespace

ModelConfig ModelConfig::from_card(const std::map<std::string, std::string>& kv) {
    ModelConfig c;
    c.d_model = card_int(kv, "d_model");
    c.n_layers = card_int(kv, "n_layers");
    c.n_heads = card_int(kv, "n_heads");
    c.vocab_size = card_int(kv, "vocab_size");
    c.max_seq_len = card_int(kv, "max_seq_len");
    auto it = kv.find("fusion_mode");
    if (it == kv.end()) throw ConfigError("model card: missing key 'fusion_mode'");
    c.fusion_mode = fusion_mode_from(it->second);
    c.llm_frozen = card_bool(kv, "llm_frozen");
    c.adapter_interval = card_int(kv, "adapter_interval");
    c.adapter_bottleneck = card_int(kv, "adapter_bottleneck");
    c.cross_attn_interval = card_int(kv, "cross_attn_interval");
    c.bidirectional_prefix = card_bool(kv, "bidirectional_prefix");
    c.d_v = card_int(kv, "d_v");
    c.tower_depth = card_int(kv, "tower_depth");
    c.tower_heads = card_int(kv, "tower_heads");
    c.grid_rows = card_int(kv, "grid_rows");
    c.grid_cols = card_int(kv, "grid_cols");
    c.max_frames = card_int(kv, "max_frames");
    c.vision_frozen = card_bool(kv, "vision_frozen");
    c.resampler_queries = card_int(kv, "resampler_queries");
    c.resampler_depth = card_int(kv, "resampler_depth");
    c.resampler_heads = card_int(kv, "resampler_heads");
    c.resampler_query_self_attn = card_bool(kv, "resampler_query_self_attn");
    c.validate();
    return c;
}

Tensor adapter_apply(const AdapterP& p, const Tensor& x) {
    return add(x, linear(p.up, silu(linear(p.down, norm(p.ln, x)))));
}

MultimodalLM::MultimodalLM(const ModelConfig& cfg, uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(seed);

    VisionConfig vc;
    vc.d_v = cfg.d_v;
    vc.depth = cfg.tower_depth;
    vc.heads = cfg.tower_heads;
    vc.grid_rows = cfg.grid_rows;
    vc.grid_cols = cfg.grid_cols;
    vc.max_frames = cfg.max_frames;
    vc.frozen = cfg.vision_frozen;
    tower_ = std::make_unique<VisionTower>(vc, store_, rng);

    ResamplerConfig rc;
    rc.queries = cfg.resampler_queries;
    rc.depth = cfg.resampler_depth;
    rc.heads = cfg.resampler_heads;
    rc.d_model = cfg.d_model;
    rc.query_self_attn = cfg.resampler_query_self_attn;
    resampler_ = std::make_unique<Resampler>(rc, store_, rng);

    vision_proj_ = add_linear(store_, "connector.proj", cfg.d_v, cfg.d_model, rng,
                              Init::kNormal, false);
    if (cfg.fusion_mode == FusionMode::kPrefix) {
        media_boundary_ = &store_.add("connector.boundary",
                                      init_tensor({1, cfg.d_model}, Init::kNormal, rng));
    }

    token_embed_ = &store_.add(
        "decoder.token_embed",
        init_tensor({cfg.vocab_size, cfg.d_model}, Init::kNormal, rng), cfg.llm_frozen);
    pos_embed_ = &store_.add(
        "decoder.pos_embed",
        init_tensor({cfg.max_seq_len, cfg.d_model}, Init::kNormal, rng), cfg.llm_frozen);

    for (int i = 0; i < cfg.n_layers; ++i) {
        const std::string base = "decoder.block" + std::to_string(i);
        DecoderBlock b;
        b.ln1 = add_layer_norm(store_, base + ".ln1", cfg.d_model, cfg.llm_frozen);
        b.attn = add_attention(store_, base + ".attn", cfg.d_model, cfg.d_model,
                               cfg.d_model, cfg.n_heads, rng, cfg.llm_frozen);
        b.ln2 = add_layer_norm(store_, base + ".ln2", cfg.d_model, cfg.llm_frozen);
        b.mlp = add_ffn(store_, base + ".mlp", cfg.d_model, 4 * cfg.d_model, rng,
                        cfg.llm_frozen);
        if (cfg.fusion_mode == FusionMode::kPrefix &&
            (i + 1) % cfg.adapter_interval == 0) {
            AdapterP a;
            a.ln = add_layer_norm(store_, base + ".adapter.ln", cfg.d_model, false);
            a.down = add_linear(store_, base + ".adapter.down", cfg.d_model,
                                cfg.adapter_bottleneck, rng, Init::kNormal, false);
            a.up = add_linear(store_, base + ".adapter.up", cfg.adapter_bottleneck,
                              cfg.d_model, rng, Init::kZero, false);
            b.adapter = std::move(a);
        }
        if (cfg.fusion_mode == FusionMode::kCrossAttention &&
            (i + 1) % cfg.cross_attn_interval == 0) {
            GatedXattnP g;
            g.ln_attn = add_layer_norm(store_, base + ".xattn.ln", cfg.d_model, false);
            g.attn = add_attention(store_, base + ".xattn.attn", cfg.d_model, cfg.d_model,
                                   cfg.d_model, cfg.n_heads, rng, false);
            g.gate_attn = &store_.add(base + ".xattn.attn_gate",
                                      init_tensor({1}, Init::kZero));
            g.ln_mlp = add_layer_norm(store_, base + ".xattn.mlp_ln", cfg.d_model, false);
            g.mlp = add_ffn(store_, base + ".xattn.mlp", cfg.d_model, 4 * cfg.d_model,
                            rng, false);
            g.gate_mlp = &store_.add(base + ".xattn.mlp_gate",
                                     init_tensor({1}, Init::kZero));
            b.xattn = std::move(g);
        }
        blocks_.push_back(std::move(b));
    }
    final_norm_ = add_layer_norm(store_, "decoder.final_norm", cfg.d_model, cfg.llm_frozen);
    lm_head_ = add_linear(store_, "decoder.lm_head", cfg.d_model, cfg.vocab_size, rng,
                          Init::kNormal, cfg.llm_frozen);
}

Tensor MultimodalLM::condense(const ImageTensor& img) const {
    return resampler_->resample(tower_->encode_image(img).tokens, vision_proj_);
}

Tensor MultimodalLM::condense(const VideoClip& clip) const {
    return resampler_->resample(tower_->encode_video(clip).tokens, vision_proj_);
}

Tensor MultimodalLM::condense_media(const std::string& path) const {
    if (is_video_path(path)) return condense(load_video(path));
    return condense(load_raw_image(path));
}

int64_t MultimodalLM::text_offset(bool has_vision) const {
    if (cfg_.fusion_mode == FusionMode::kPrefix && has_vision) {
        return cfg_.resampler_queries + 1;
    }
    return 0;
}

Tensor MultimodalLM::decode_stack(const Tensor& seq, int64_t prefix_len,
                                  const std::optional<Tensor>& vision,
                                  bool skip_adapters) const {
    const int64_t s = seq.dim(0);
    if (s > cfg_.max_seq_len) {
        throw Error("sequence of " + std::to_string(s) + " positions exceeds context of " +
                    std::to_string(cfg_.max_seq_len));
    }
    Tensor x = add(seq, slice_rows(pos_embed_->value, 0, s));
    const std::vector<uint8_t> mask =
        causal_mask(s, prefix_len, cfg_.bidirectional_prefix);
    for (const DecoderBlock& b : blocks_) {
        if (b.xattn && vision) {
            Tensor h = attention(b.xattn->attn, norm(b.xattn->ln_attn, x), *vision);
            x = add(x, scale_by(h, tanh_t(b.xattn->gate_attn->value)));
            Tensor f = ffn(b.xattn->mlp, norm(b.xattn->ln_mlp, x));
            x = add(x, scale_by(f, tanh_t(b.xattn->gate_mlp->value)));
        }
        Tensor h = norm(b.ln1, x);
        x = add(x, attention(b.attn, h, h, &mask));
        x = add(x, ffn(b.mlp, norm(b.ln2, x)));
        if (b.adapter && !skip_adapters) x = adapter_apply(*b.adapter, x);
    }
    return linear(lm_head_, norm(final_norm_, x));
}

Tensor MultimodalLM::forward_prefix(const std::optional<Tensor>& vision,
                                    const std::vector<int>& text,
                                    bool skip_adapters) const {
    if (text.empty()) throw Error("forward: empty token sequence");
    Tensor emb = embedding(token_embed_->value, text);
    if (vision) {
        if (vision->rank() != 2 || vision->dim(0) != cfg_.resampler_queries ||
            vision->dim(1) != cfg_.d_model) {
            throw ShapeError("forward: vision prefix " + shape_str(vision->shape()) +
                             " does not match the model");
        }
        Tensor seq = concat_rows({*vision, media_boundary_->value, emb});
        return decode_stack(seq, text_offset(true), std::nullopt, skip_adapters);
    }
    return decode_stack(emb, 0, std::nullopt, skip_adapters);
}

Tensor MultimodalLM::forward_cross_attention(const std::optional<Tensor>& vision,
                                             const std::vector<int>& text) const {
    if (text.empty()) throw Error("forward: empty token sequence");
    Tensor emb = embedding(token_embed_->value, text);
    return decode_stack(emb, 0, vision, /*skip_adapters=*/false);
}

Tensor MultimodalLM::forward(const std::optional<Tensor>& vision,
                             const std::vector<int>& text) const {
    if (cfg_.fusion_mode == FusionMode::kPrefix) return forward_prefix(vision, text);
    return forward_cross_attention(vision, text);
}

std::vector<Parameter*> MultimodalLM::trainable_parameters() { return store_.trainable(); }

void save_model(const std::string& ckpt_path, const std::string& card_path,
                const MultimodalLM& model, const AdamW* opt) {
    save_checkpoint(ckpt_path, model.params(), model.config().grid_rows,
                    model.config().grid_cols, opt);
    write_model_card(card_path, model.config().to_card());
}

std::unique_ptr<MultimodalLM> load_model(const std::string& ckpt_path,
                                         const std::string& card_path, AdamW* opt) {
    const ModelConfig cfg = ModelConfig::from_card(read_model_card(card_path));
    auto model = std::make_unique<MultimodalLM>(cfg, /*seed=*/0);
    load_checkpoint(ckpt_path, model->params(), opt);
    return model;
}

}  // namespace mmpt
