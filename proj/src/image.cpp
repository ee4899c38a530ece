#include "s3f/image.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace s3f {

namespace {

uint8_t to_byte(double v) {
    double s = std::lround(v * 255.0);
    if (s < 0) s = 0;
    if (s > 255) s = 255;
    return static_cast<uint8_t>(s);
}

// Reads one whitespace-delimited token, skipping '#' comment lines.
std::string next_token(std::istream& in) {
    std::string tok;
    int c;
    while ((c = in.get()) != EOF) {
        if (c == '#') {
            while ((c = in.get()) != EOF && c != '\n') {}
        } else if (!std::isspace(c)) {
            tok.push_back(static_cast<char>(c));
            while ((c = in.peek()) != EOF && !std::isspace(c)) tok.push_back(static_cast<char>(in.get()));
            return tok;
        }
    }
    throw std::runtime_error("unexpected end of pnm header");
}

Image read_pnm(const std::string& path, const std::string& magic, int channels) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    if (next_token(in) != magic) throw std::runtime_error(path + ": not a " + magic + " file");
    int w = std::stoi(next_token(in));
    int h = std::stoi(next_token(in));
    int maxval = std::stoi(next_token(in));
    if (maxval != 255) throw std::runtime_error(path + ": only maxval 255 supported");
    in.get();  // single whitespace after header
    Image img(w, h, channels);
    std::vector<uint8_t> row((size_t)w * channels);
    for (int y = 0; y < h; ++y) {
        in.read(reinterpret_cast<char*>(row.data()), (std::streamsize)row.size());
        if (!in) throw std::runtime_error(path + ": truncated pixel data");
        for (size_t i = 0; i < row.size(); ++i) img.px[(size_t)y * w * channels + i] = row[i] / 255.0;
    }
    return img;
}

void write_pnm(const std::string& path, const Image& img, const std::string& magic, int channels) {
    if (img.channels != channels) throw std::runtime_error("channel count mismatch writing " + path);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << magic << "\n" << img.width << " " << img.height << "\n255\n";
    std::vector<uint8_t> row((size_t)img.width * channels);
    for (int y = 0; y < img.height; ++y) {
        for (size_t i = 0; i < row.size(); ++i)
            row[i] = to_byte(img.px[(size_t)y * img.width * channels + i]);
        out.write(reinterpret_cast<const char*>(row.data()), (std::streamsize)row.size());
    }
}

}  // namespace

void write_ppm(const std::string& path, const Image& img) { write_pnm(path, img, "P6", 3); }
Image read_ppm(const std::string& path) { return read_pnm(path, "P6", 3); }
void write_pgm(const std::string& path, const Image& img) { write_pnm(path, img, "P5", 1); }
Image read_pgm(const std::string& path) { return read_pnm(path, "P5", 1); }

}  // namespace s3f
