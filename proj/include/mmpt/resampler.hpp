#pragma once

#include "mmpt/nn.hpp"
#include "mmpt/vision.hpp"

namespace mmpt {

struct ResamplerConfig {
    int queries = 32;
    int depth = 2;
    int heads = 4;
    int d_model = 128;
    bool query_self_attn = false;
};

// Condenses any number of raw vision tokens into a fixed-length sequence of
// learnable queries via cross-attention. Every block's output projections are
// zero-initialized, so at initialization the output equals the query bank.
class Resampler {
  public:
    Resampler(const ResamplerConfig& cfg, ParamStore& store, Rng& rng);

    // raw: [N x d_v]; proj maps d_v to d_model. Output is always
    // [queries x d_model] regardless of N.
    Tensor resample(const Tensor& raw, const LinearP& proj) const;

    const ResamplerConfig& config() const { return cfg_; }
    const Tensor& query_bank() const { return queries_->value; }

  private:
    struct Block {
        LayerNormP ln_q;
        AttentionP cross;
        LayerNormP ln_f;
        FfnP mlp;
        // Present only with query_self_attn.
        LayerNormP ln_s;
        AttentionP self;
        bool has_self = false;
    };

    ResamplerConfig cfg_;
    Parameter* queries_ = nullptr;
    std::vector<Block> blocks_;
};

}  // namespace mmpt
