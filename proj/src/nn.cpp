#include "mmpt/nn.hpp"

#include <cmath>

namespace mmpt {

LinearP add_linear(ParamStore& store, const std::string& name, int64_t in, int64_t out,
                   Rng& rng, Init w_init, bool frozen) {
    LinearP p;
    p.w = &store.add(name + ".w", init_tensor({in, out}, w_init, rng), frozen);
    p.b = &store.add(name + ".b", init_tensor({out}, Init::kZero, rng), frozen);
    return p;
}

Tensor linear(const LinearP& p, const Tensor& x) {
    return add_bias(matmul(x, p.w->value), p.b->value);
}

LayerNormP add_layer_norm(ParamStore& store, const std::string& name, int64_t d, bool frozen) {
    LayerNormP p;
    p.gain = &store.add(name + ".gain", init_tensor({d}, Init::kOnes), frozen);
    p.bias = &store.add(name + ".bias", init_tensor({d}, Init::kZero), frozen);
    return p;
}

Tensor norm(const LayerNormP& p, const Tensor& x) {
    return layer_norm(x, p.gain->value, p.bias->value);
}

AttentionP add_attention(ParamStore& store, const std::string& name, int64_t d_q,
                         int64_t d_kv, int64_t d_inner, int heads, Rng& rng, bool frozen,
                         bool zero_out_proj) {
    if (d_inner % heads != 0) {
        throw ConfigError(name + ": width " + std::to_string(d_inner) +
                          " not divisible by " + std::to_string(heads) + " heads");
    }
    AttentionP p;
    p.heads = heads;
    p.q = add_linear(store, name + ".q", d_q, d_inner, rng, Init::kNormal, frozen);
    p.k = add_linear(store, name + ".k", d_kv, d_inner, rng, Init::kNormal, frozen);
    p.v = add_linear(store, name + ".v", d_kv, d_inner, rng, Init::kNormal, frozen);
    p.o = add_linear(store, name + ".o", d_inner, d_q, rng,
                     zero_out_proj ? Init::kZero : Init::kNormal, frozen);
    return p;
}

Tensor attention(const AttentionP& p, const Tensor& x_q, const Tensor& x_kv,
                 const std::vector<uint8_t>* mask) {
    const int64_t d_inner = p.q.w->value.dim(1);
    const int64_t head_dim = d_inner / p.heads;
    Tensor qh = split_heads(linear(p.q, x_q), p.heads);
    Tensor kh = split_heads(linear(p.k, x_kv), p.heads);
    Tensor vh = split_heads(linear(p.v, x_kv), p.heads);
    Tensor scores = scale(bmm(qh, transpose_last2(kh)),
                          1.0 / std::sqrt(static_cast<Real>(head_dim)));
    Tensor weights = mask ? masked_softmax_lastdim(scores, *mask) : softmax_lastdim(scores);
    Tensor mixed = merge_heads(bmm(weights, vh));
    return linear(p.o, mixed);
}

FfnP add_ffn(ParamStore& store, const std::string& name, int64_t d, int64_t hidden,
             Rng& rng, bool frozen, bool zero_out_proj) {
    FfnP p;
    p.in_proj = add_linear(store, name + ".in", d, hidden, rng, Init::kNormal, frozen);
    p.out_proj = add_linear(store, name + ".out", hidden, d, rng,
                            zero_out_proj ? Init::kZero : Init::kNormal, frozen);
    return p;
}

Tensor ffn(const FfnP& p, const Tensor& x) {
    return linear(p.out_proj, silu(linear(p.in_proj, x)));
}

EncoderBlockP add_encoder_block(ParamStore& store, const std::string& name, int64_t d,
                                int heads, Rng& rng, bool frozen) {
    EncoderBlockP p;
    p.ln1 = add_layer_norm(store, name + ".ln1", d, frozen);
    p.attn = add_attention(store, name + ".attn", d, d, d, heads, rng, frozen);
    p.ln2 = add_layer_norm(store, name + ".ln2", d, frozen);
    p.mlp = add_ffn(store, name + ".mlp", d, 4 * d, rng, frozen);
    return p;
}

Tensor encoder_block(const EncoderBlockP& p, const Tensor& x) {
    Tensor h = norm(p.ln1, x);
    Tensor y = add(x, attention(p.attn, h, h));
    return add(y, ffn(p.mlp, norm(p.ln2, y)));
}

std::vector<uint8_t> causal_mask(int64_t t, int64_t prefix_len, bool bidirectional_prefix) {
    std::vector<uint8_t> mask(static_cast<size_t>(t * t), 0);
    for (int64_t q = 0; q < t; ++q) {
        for (int64_t k = 0; k <= q; ++k) mask[static_cast<size_t>(q * t + k)] = 1;
        if (bidirectional_prefix && q < prefix_len) {
            for (int64_t k = 0; k < prefix_len; ++k) mask[static_cast<size_t>(q * t + k)] = 1;
        }
    }
    return mask;
}

}  // namespace mmpt
