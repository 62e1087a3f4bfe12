#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mmpt/param.hpp"

namespace mmpt {

// y = x W + b with W stored [in x out].
struct LinearP {
    Parameter* w = nullptr;
    Parameter* b = nullptr;
};

LinearP add_linear(ParamStore& store, const std::string& name, int64_t in, int64_t out,
                   Rng& rng, Init w_init, bool frozen);
Tensor linear(const LinearP& p, const Tensor& x);

struct LayerNormP {
    Parameter* gain = nullptr;
    Parameter* bias = nullptr;
};

LayerNormP add_layer_norm(ParamStore& store, const std::string& name, int64_t d, bool frozen);
Tensor norm(const LayerNormP& p, const Tensor& x);

// Multi-head attention projecting queries from x_q and keys/values from x_kv
// into d_inner, with the output projected back to x_q's width.
struct AttentionP {
    LinearP q, k, v, o;
    int heads = 1;
};

AttentionP add_attention(ParamStore& store, const std::string& name, int64_t d_q,
                         int64_t d_kv, int64_t d_inner, int heads, Rng& rng, bool frozen,
                         bool zero_out_proj = false);
// mask, when present, covers [rows(x_q) x rows(x_kv)]; entries with 0 are
// never attended to.
Tensor attention(const AttentionP& p, const Tensor& x_q, const Tensor& x_kv,
                 const std::vector<uint8_t>* mask = nullptr);

// expand -> SiLU -> contract.
struct FfnP {
    LinearP in_proj, out_proj;
};

FfnP add_ffn(ParamStore& store, const std::string& name, int64_t d, int64_t hidden,
             Rng& rng, bool frozen, bool zero_out_proj = false);
Tensor ffn(const FfnP& p, const Tensor& x);

// Pre-norm residual self-attention + feed-forward, as used by the vision
// tower and the resampler's optional query self-attention.
struct EncoderBlockP {
    LayerNormP ln1, ln2;
    AttentionP attn;
    FfnP mlp;
};

EncoderBlockP add_encoder_block(ParamStore& store, const std::string& name, int64_t d,
                                int heads, Rng& rng, bool frozen);
Tensor encoder_block(const EncoderBlockP& p, const Tensor& x);

// Uniform causal mask over a sequence; when prefix_len > 0 and bidirectional
// is set, the first prefix_len positions attend to the whole prefix.
std::vector<uint8_t> causal_mask(int64_t t, int64_t prefix_len = 0,
                                 bool bidirectional_prefix = false);

}  // namespace mmpt
