#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>

#include "mmpt/checkpoint.hpp"
#include "mmpt/resampler.hpp"
#include "mmpt/tokenizer.hpp"
#include "mmpt/vision.hpp"

namespace mmpt {

enum class FusionMode { kPrefix, kCrossAttention };
enum class LossMaskPolicy { kAllTokens, kResponseOnly };

std::string fusion_mode_name(FusionMode m);
FusionMode fusion_mode_from(const std::string& s);

struct ModelConfig {
    int d_model = 128;
    int n_layers = 4;
    int n_heads = 4;
    int vocab_size = 260;
    int max_seq_len = 512;
    FusionMode fusion_mode = FusionMode::kPrefix;
    bool llm_frozen = false;
    // Prefix mode: an adapter follows every adapter_interval-th decoder block.
    int adapter_interval = 1;
    int adapter_bottleneck = 64;
    // Cross-attention mode: a gated fusion layer precedes every
    // cross_attn_interval-th decoder block.
    int cross_attn_interval = 1;
    bool bidirectional_prefix = false;

    int d_v = 128;
    int tower_depth = 2;
    int tower_heads = 4;
    int grid_rows = 16;
    int grid_cols = 16;
    int max_frames = 4;
    bool vision_frozen = false;

    int resampler_queries = 32;
    int resampler_depth = 2;
    int resampler_heads = 4;
    bool resampler_query_self_attn = false;

    void validate() const;
    std::map<std::string, std::string> to_card() const;
    static ModelConfig from_card(const std::map<std::string, std::string>& kv);
};

// Bottleneck block: normalize, project down, SiLU, project up, residual.
// The up projection starts at zero, so a fresh adapter is an identity.
struct AdapterP {
    LayerNormP ln;
    LinearP down, up;
};

Tensor adapter_apply(const AdapterP& p, const Tensor& x);

// Gated cross-attention fusion: both tanh gates start at zero, so a fresh
// layer passes text through unchanged.
struct GatedXattnP {
    LayerNormP ln_attn;
    AttentionP attn;
    Parameter* gate_attn = nullptr;
    LayerNormP ln_mlp;
    FfnP mlp;
    Parameter* gate_mlp = nullptr;
};

// Decoder-only language model with a vision pathway attached either as a
// resampled token prefix or through gated cross-attention layers.
class MultimodalLM {
  public:
    MultimodalLM(const ModelConfig& cfg, uint64_t seed);

    const ModelConfig& config() const { return cfg_; }
    ParamStore& params() { return store_; }
    const ParamStore& params() const { return store_; }
    const VisionTower& tower() const { return *tower_; }

    // Runs the tower and resampler; result is [resampler_queries x d_model].
    Tensor condense(const ImageTensor& img) const;
    Tensor condense(const VideoClip& clip) const;
    Tensor condense_media(const std::string& path) const;

    // Logits at every position of the packed sequence. In prefix mode the
    // text starts at text_offset(); earlier positions belong to the vision
    // prefix and its boundary marker.
    Tensor forward_prefix(const std::optional<Tensor>& vision,
                          const std::vector<int>& text,
                          bool skip_adapters = false) const;
    Tensor forward_cross_attention(const std::optional<Tensor>& vision,
                                   const std::vector<int>& text) const;
    // Dispatches on cfg.fusion_mode.
    Tensor forward(const std::optional<Tensor>& vision, const std::vector<int>& text) const;

    // Number of positions before the first text token.
    int64_t text_offset(bool has_vision) const;

    std::vector<Parameter*> trainable_parameters();

  private:
    struct DecoderBlock {
        LayerNormP ln1, ln2;
        AttentionP attn;
        FfnP mlp;
        std::optional<AdapterP> adapter;
        std::optional<GatedXattnP> xattn;
    };

    Tensor decode_stack(const Tensor& seq, int64_t prefix_len,
                        const std::optional<Tensor>& vision, bool skip_adapters) const;

    ModelConfig cfg_;
    ParamStore store_;
    std::unique_ptr<VisionTower> tower_;
    std::unique_ptr<Resampler> resampler_;
    LinearP vision_proj_;
    Parameter* media_boundary_ = nullptr;
    Parameter* token_embed_ = nullptr;
    Parameter* pos_embed_ = nullptr;
    std::vector<DecoderBlock> blocks_;
    LayerNormP final_norm_;
    LinearP lm_head_;
};

void save_model(const std::string& ckpt_path, const std::string& card_path,
                const MultimodalLM& model, const AdamW* opt = nullptr);
// Builds the model from the card, then restores parameter values.
std::unique_ptr<MultimodalLM> load_model(const std::string& ckpt_path,
                                         const std::string& card_path,
                                         AdamW* opt = nullptr);

}  // namespace mmpt
