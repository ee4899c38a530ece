#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace s3f {

// Planar float image, values in [0,1], indexed as (y, x, channel).
struct Image {
    int width = 0, height = 0, channels = 0;
    std::vector<double> px;

    Image() = default;
    Image(int w, int h, int c) : width(w), height(h), channels(c), px((size_t)w * h * c, 0.0) {}

    double& at(int y, int x, int c) { return px[((size_t)y * width + x) * channels + c]; }
    double at(int y, int x, int c) const { return px[((size_t)y * width + x) * channels + c]; }
    size_t size() const { return px.size(); }
};

// Binary PPM (P6): 3-channel, 8 bits per channel.
void write_ppm(const std::string& path, const Image& img);
Image read_ppm(const std::string& path);

// Binary PGM (P5): single channel, 8 bits.
void write_pgm(const std::string& path, const Image& img);
Image read_pgm(const std::string& path);

}  // namespace s3f
