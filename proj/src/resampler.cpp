#include "mmpt/resampler.hpp"

namespace mmpt {

Resampler::Resampler(const ResamplerConfig& cfg, ParamStore& store, Rng& rng) : cfg_(cfg) {
    queries_ = &store.add("resampler.queries",
                          init_tensor({cfg.queries, cfg.d_model}, Init::kNormal, rng));
    for (int i = 0; i < cfg.depth; ++i) {
        const std::string base = "resampler.block" + std::to_string(i);
        Block b;
        if (cfg.query_self_attn) {
            b.has_self = true;
            b.ln_s = add_layer_norm(store, base + ".self_ln", cfg.d_model, false);
            b.self = add_attention(store, base + ".self", cfg.d_model, cfg.d_model,
                                   cfg.d_model, cfg.heads, rng, false,
                                   /*zero_out_proj=*/true);
        }
        b.ln_q = add_layer_norm(store, base + ".cross_ln", cfg.d_model, false);
        b.cross = add_attention(store, base + ".cross", cfg.d_model, cfg.d_model,
                                cfg.d_model, cfg.heads, rng, false,
                                /*zero_out_proj=*/true);
        b.ln_f = add_layer_norm(store, base + ".mlp_ln", cfg.d_model, false);
        b.mlp = add_ffn(store, base + ".mlp", cfg.d_model, 4 * cfg.d_model, rng, false,
                        /*zero_out_proj=*/true);
        blocks_.push_back(std::move(b));
    }
}

Tensor Resampler::resample(const Tensor& raw, const LinearP& proj) const {
    if (raw.rank() != 2 || raw.dim(1) != proj.w->value.dim(0)) {
        throw ShapeError("resample: raw tokens " + shape_str(raw.shape()) +
                         " do not match the projection");
    }
    Tensor kv = linear(proj, raw);
    Tensor x = queries_->value;
    for (const Block& b : blocks_) {
        if (b.has_self) {
            Tensor h = norm(b.ln_s, x);
            x = add(x, attention(b.self, h, h));
        }
        x = add(x, attention(b.cross, norm(b.ln_q, x), kv));
        x = add(x, ffn(b.mlp, norm(b.ln_f, x)));
    }
    return x;
}

}  // namespace mmpt
