#include "mmpt/image.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>

#include "mmpt/errors.hpp"

namespace mmpt {

namespace {

constexpr char kMagic[8] = {'M', 'M', 'P', 'T', 'I', 'M', 'G', '1'};

uint32_t get_u32(std::istream& is, const std::string& path) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (is.gcount() != 4) throw DataError("image '" + path + "' is truncated");
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
    return v;
}

void put_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace

ImageTensor load_raw_image(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open image '" + path + "'");
    char magic[8];
    is.read(magic, 8);
    if (is.gcount() != 8 || std::memcmp(magic, kMagic, 8) != 0) {
        throw DataError("'" + path + "' is not an image file");
    }
    ImageTensor img;
    img.height = static_cast<int>(get_u32(is, path));
    img.width = static_cast<int>(get_u32(is, path));
    if (img.height <= 0 || img.width <= 0 || img.height > 1 << 14 || img.width > 1 << 14) {
        throw DataError("image '" + path + "' has invalid size " +
                        std::to_string(img.height) + "x" + std::to_string(img.width));
    }
    const size_t n = 3u * img.height * img.width;
    img.data.resize(n);
    is.read(reinterpret_cast<char*>(img.data.data()),
            static_cast<std::streamsize>(n * sizeof(float)));
    if (static_cast<size_t>(is.gcount()) != n * sizeof(float)) {
        throw DataError("image '" + path + "' is truncated");
    }
    for (float v : img.data) {
        if (!(v >= 0.0f && v <= 1.0f)) {
            throw DataError("image '" + path + "' has values outside [0, 1]");
        }
    }
    return img;
}

void save_raw_image(const std::string& path, const ImageTensor& img) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw Error("cannot open '" + path + "' for writing");
    os.write(kMagic, 8);
    put_u32(os, static_cast<uint32_t>(img.height));
    put_u32(os, static_cast<uint32_t>(img.width));
    os.write(reinterpret_cast<const char*>(img.data.data()),
             static_cast<std::streamsize>(img.data.size() * sizeof(float)));
    if (!os) throw Error("write to '" + path + "' failed");
}

bool is_video_path(const std::string& path) {
    return std::filesystem::is_directory(path);
}

VideoClip load_video(const std::string& path) {
    const std::filesystem::path dir(path);
    const std::filesystem::path manifest = dir / "frames.txt";
    std::ifstream is(manifest);
    if (!is) throw DataError("video '" + path + "' has no frames.txt");
    VideoClip clip;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        clip.frames.push_back(load_raw_image((dir / line).string()));
    }
    if (clip.frames.empty()) throw DataError("video '" + path + "' lists no frames");
    for (const ImageTensor& f : clip.frames) {
        if (f.height != clip.frames[0].height || f.width != clip.frames[0].width) {
            throw DataError("video '" + path + "' mixes frame sizes");
        }
    }
    return clip;
}

ImageTensor make_solid_image(int height, int width, float r, float g, float b) {
    ImageTensor img;
    img.height = height;
    img.width = width;
    img.data.resize(3u * height * width);
    const float rgb[3] = {r, g, b};
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < height; ++y)
            for (int x = 0; x < width; ++x) img.at(c, y, x) = rgb[c];
    return img;
}

}  // namespace mmpt
