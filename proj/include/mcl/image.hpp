#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "mcl/errors.hpp"
#include "mcl/tensor.hpp"

namespace mcl {

/// 8-bit grayscale raster, row-major.
struct Image {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<std::uint8_t> pixels;

    Image() = default;
    Image(std::size_t w, std::size_t h, std::uint8_t fill = 0) : width(w), height(h), pixels(w * h, fill) {}

    std::uint8_t& at(std::size_t x, std::size_t y) { return pixels[y * width + x]; }
    std::uint8_t at(std::size_t x, std::size_t y) const { return pixels[y * width + x]; }

    /// Bilinear sample at continuous pixel coordinates (pixel centers sit at
    /// integer positions), replicating the border outside the raster.
    double sample(double x, double y) const {
        const double cx = std::clamp(x, 0.0, static_cast<double>(width - 1));
        const double cy = std::clamp(y, 0.0, static_cast<double>(height - 1));
        const auto x0 = static_cast<std::size_t>(std::floor(cx));
        const auto y0 = static_cast<std::size_t>(std::floor(cy));
        const std::size_t x1 = std::min(x0 + 1, width - 1), y1 = std::min(y0 + 1, height - 1);
        const double fx = cx - static_cast<double>(x0), fy = cy - static_cast<double>(y0);
        const double top = (1.0 - fx) * at(x0, y0) + fx * at(x1, y0);
        const double bottom = (1.0 - fx) * at(x0, y1) + fx * at(x1, y1);
        return (1.0 - fy) * top + fy * bottom;
    }

    friend bool operator==(const Image&, const Image&) = default;
};

inline std::uint8_t to_pixel(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

/// v -> (v - 128) * 0.0078125, mapping [0, 255] onto [-1, 1).
template <typename T = real>
Tensor<T> normalize_pixels(const Image& img) {
    Tensor<T> t(Dims{img.height, img.width, 1});
    for (std::size_t i = 0; i < img.pixels.size(); ++i) t[i] = (static_cast<T>(img.pixels[i]) - T{128}) * T{0.0078125};
    return t;
}

inline void write_pgm(const Image& img, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open '" + path + "' for writing");
    out << "P5\n" << img.width << ' ' << img.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
    if (!out) throw Error("failed writing '" + path + "'");
}

inline Image read_pgm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw LoadError("cannot open image '" + path + "'");
    auto next_token = [&]() {
        std::string tok;
        char c;
        while (in.get(c)) {
            if (c == '#') {
                std::string skip;
                std::getline(in, skip);
                continue;
            }
            if (std::isspace(static_cast<unsigned char>(c))) {
                if (!tok.empty()) break;
                continue;
            }
            tok += c;
        }
        return tok;
    };
    if (next_token() != "P5") throw LoadError("'" + path + "' is not a binary PGM (P5)");
    long w = 0, h = 0, maxval = 0;
    try {
        w = std::stol(next_token());
        h = std::stol(next_token());
        maxval = std::stol(next_token());
    } catch (const std::exception&) {
        throw LoadError("'" + path + "' has a malformed PGM header");
    }
    if (w <= 0 || h <= 0 || maxval != 255) throw LoadError("'" + path + "' must be an 8-bit PGM with positive size");
    Image img(static_cast<std::size_t>(w), static_cast<std::size_t>(h));
    in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
    if (in.gcount() != static_cast<std::streamsize>(img.pixels.size())) throw LoadError("'" + path + "' has truncated pixel data");
    return img;
}

}  // namespace mcl
