#pragma once

#include "mmpt/image.hpp"
#include "mmpt/nn.hpp"

namespace mmpt {

struct VisionConfig {
    int d_v = 128;
    int depth = 2;
    int heads = 4;
    // Native positional grid; other grids are served by interpolation.
    int grid_rows = 16;
    int grid_cols = 16;
    int max_frames = 4;
    bool frozen = false;
};

struct RawVisionTokens {
    Tensor tokens;  // [N x d_v]
    int rows = 0;
    int cols = 0;
    int frames = 1;
};

// Patch embedding + learned 2-D positional embeddings + a shallow transformer.
// Videos are encoded frame by frame with a learned frame-index embedding and
// concatenated along the token axis.
class VisionTower {
  public:
    VisionTower(const VisionConfig& cfg, ParamStore& store, Rng& rng);

    RawVisionTokens encode_image(const ImageTensor& img) const;
    RawVisionTokens encode_video(const VideoClip& clip) const;

    const VisionConfig& config() const { return cfg_; }

  private:
    Tensor encode_frame(const ImageTensor& img, int frame_index, bool is_video) const;

    VisionConfig cfg_;
    LinearP patch_;
    Parameter* pos_embed_ = nullptr;
    Parameter* frame_embed_ = nullptr;
    std::vector<EncoderBlockP> blocks_;
    LayerNormP final_norm_;
};

// Resizes a [r0*c0 x d] positional-embedding grid to [r1*c1 x d] with
// align-corners bilinear interpolation; exact identity when the grids match.
Tensor interpolate_pos_embed(const Tensor& grid, int r0, int c0, int r1, int c1);

}  // namespace mmpt
