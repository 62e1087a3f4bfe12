#pragma once

#include <string>
#include <vector>

namespace mmpt {

constexpr int kPatchSize = 14;

// Planar RGB, values in [0, 1], data laid out as [3][height][width].
struct ImageTensor {
    int height = 0;
    int width = 0;
    std::vector<float> data;

    float at(int c, int y, int x) const {
        return data[(static_cast<size_t>(c) * height + y) * width + x];
    }
    float& at(int c, int y, int x) {
        return data[(static_cast<size_t>(c) * height + y) * width + x];
    }
};

struct VideoClip {
    std::vector<ImageTensor> frames;
};

// Image files are "MMPTIMG1" + u32 height + u32 width (little-endian) followed
// by float32 planar RGB data. A video is a directory containing frames.txt
// listing image filenames in display order.
ImageTensor load_raw_image(const std::string& path);
void save_raw_image(const std::string& path, const ImageTensor& img);

VideoClip load_video(const std::string& path);
bool is_video_path(const std::string& path);

ImageTensor make_solid_image(int height, int width, float r, float g, float b);

}  // namespace mmpt
