#pragma once

#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "latiq/util.hpp"

namespace latiq {

// RGB image, interleaved, values in [0,1].
struct Image {
    int h = 0;
    int w = 0;
    std::vector<double> px; // h*w*3

    Image() = default;
    Image(int height, int width) : h(height), w(width), px(size_t(height) * width * 3, 0.0) {}

    double& at(int y, int x, int c) { return px[(size_t(y) * w + x) * 3 + c]; }
    double at(int y, int x, int c) const { return px[(size_t(y) * w + x) * 3 + c]; }
};

// ---- binary PPM (P6, 8-bit) -----------------------------------------------

inline std::vector<uint8_t> encode_ppm(const Image& img) {
    std::string header = "P6\n" + std::to_string(img.w) + " " + std::to_string(img.h) + "\n255\n";
    std::vector<uint8_t> out(header.begin(), header.end());
    out.reserve(out.size() + img.px.size());
    for (double v : img.px) {
        double c = clamp01(v);
        out.push_back(uint8_t(std::lround(c * 255.0)));
    }
    return out;
}

inline Image decode_ppm(const std::vector<uint8_t>& bytes) {
    std::string text(bytes.begin(), bytes.end());
    std::istringstream in(text);
    std::string magic;
    int w = 0, h = 0, maxval = 0;
    in >> magic >> w >> h >> maxval;
    if (magic != "P6" || w <= 0 || h <= 0 || maxval != 255)
        throw std::runtime_error("decode_ppm: unsupported or corrupt header");
    in.get(); // single whitespace after maxval
    size_t offset = size_t(in.tellg());
    size_t need = size_t(w) * h * 3;
    if (bytes.size() < offset + need) throw std::runtime_error("decode_ppm: truncated pixel data");
    Image img(h, w);
    for (size_t i = 0; i < need; ++i) img.px[i] = double(bytes[offset + i]) / 255.0;
    return img;
}

inline void write_ppm(const Image& img, const std::string& path) {
    auto bytes = encode_ppm(img);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("write_ppm: cannot open " + path);
    out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
    if (!out) throw std::runtime_error("write_ppm: write failed for " + path);
}

inline Image read_ppm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("read_ppm: cannot open " + path);
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_ppm(bytes);
}

} // namespace latiq
