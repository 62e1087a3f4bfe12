#include "mmpt/vision.hpp"

namespace mmpt {

VisionTower::VisionTower(const VisionConfig& cfg, ParamStore& store, Rng& rng) : cfg_(cfg) {
    const int64_t patch_dim = 3LL * kPatchSize * kPatchSize;
    patch_ = add_linear(store, "vision.patch", patch_dim, cfg.d_v, rng, Init::kNormal,
                        cfg.frozen);
    pos_embed_ = &store.add(
        "vision.pos_embed",
        init_tensor({static_cast<int64_t>(cfg.grid_rows) * cfg.grid_cols, cfg.d_v},
                    Init::kNormal, rng),
        cfg.frozen);
    frame_embed_ = &store.add(
        "vision.frame_embed",
        init_tensor({cfg.max_frames, cfg.d_v}, Init::kNormal, rng), cfg.frozen);
    for (int i = 0; i < cfg.depth; ++i) {
        blocks_.push_back(add_encoder_block(store, "vision.block" + std::to_string(i),
                                            cfg.d_v, cfg.heads, rng, cfg.frozen));
    }
    final_norm_ = add_layer_norm(store, "vision.final_norm", cfg.d_v, cfg.frozen);
}

Tensor VisionTower::encode_frame(const ImageTensor& img, int frame_index,
                                 bool is_video) const {
    if (img.height % kPatchSize != 0 || img.width % kPatchSize != 0) {
        throw DataError("image size " + std::to_string(img.height) + "x" +
                        std::to_string(img.width) + " is not a multiple of " +
                        std::to_string(kPatchSize));
    }
    const int rows = img.height / kPatchSize;
    const int cols = img.width / kPatchSize;
    const int64_t n = static_cast<int64_t>(rows) * cols;
    const int64_t patch_dim = 3LL * kPatchSize * kPatchSize;

    std::vector<Real> patches(static_cast<size_t>(n * patch_dim));
    for (int pr = 0; pr < rows; ++pr) {
        for (int pc = 0; pc < cols; ++pc) {
            Real* dst = patches.data() + (static_cast<int64_t>(pr) * cols + pc) * patch_dim;
            for (int c = 0; c < 3; ++c)
                for (int py = 0; py < kPatchSize; ++py)
                    for (int px = 0; px < kPatchSize; ++px)
                        dst[(c * kPatchSize + py) * kPatchSize + px] =
                            img.at(c, pr * kPatchSize + py, pc * kPatchSize + px);
        }
    }

    Tensor x = linear(patch_, Tensor({n, patch_dim}, std::move(patches)));
    Tensor pos = interpolate_pos_embed(pos_embed_->value, cfg_.grid_rows, cfg_.grid_cols,
                                       rows, cols);
    x = add(x, pos);
    if (is_video) {
        x = add(x, embedding(frame_embed_->value,
                             std::vector<int>(static_cast<size_t>(n), frame_index)));
    }
    for (const EncoderBlockP& b : blocks_) x = encoder_block(b, x);
    return norm(final_norm_, x);
}

RawVisionTokens VisionTower::encode_image(const ImageTensor& img) const {
    RawVisionTokens out;
    out.tokens = encode_frame(img, 0, /*is_video=*/false);
    out.rows = img.height / kPatchSize;
    out.cols = img.width / kPatchSize;
    out.frames = 1;
    return out;
}

RawVisionTokens VisionTower::encode_video(const VideoClip& clip) const {
    if (clip.frames.empty()) throw DataError("video has no frames");
    if (static_cast<int>(clip.frames.size()) > cfg_.max_frames) {
        throw DataError("video has " + std::to_string(clip.frames.size()) +
                        " frames, limit is " + std::to_string(cfg_.max_frames));
    }
    std::vector<Tensor> parts;
    for (size_t f = 0; f < clip.frames.size(); ++f) {
        parts.push_back(encode_frame(clip.frames[f], static_cast<int>(f), /*is_video=*/true));
    }
    RawVisionTokens out;
    out.tokens = parts.size() == 1 ? parts[0] : concat_rows(parts);
    out.rows = clip.frames[0].height / kPatchSize;
    out.cols = clip.frames[0].width / kPatchSize;
    out.frames = static_cast<int>(clip.frames.size());
    return out;
}

Tensor interpolate_pos_embed(const Tensor& grid, int r0, int c0, int r1, int c1) {
    return bilinear_resize_grid(grid, r0, c0, r1, c1);
}

}  // namespace mmpt
