#pragma once

// Training-set augmentation: rotation, face-box scaling and translation,
// horizontal flip and block-DCT compression, plus the gray-box occluder.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "mcl/dataset.hpp"
#include "mcl/errors.hpp"
#include "mcl/geometry.hpp"
#include "mcl/image.hpp"

namespace mcl {

struct AugmentParams {
    std::vector<double> rotation_degrees{-15.0, 0.0, 15.0};
    std::vector<double> scale_factors{0.9, 1.0, 1.1};
    std::vector<double> translation_offsets{-0.05, 0.0, 0.05};  // fraction of the face box, per axis
    bool do_flip = true;
    std::vector<int> compression_qualities{90, 30};
    std::size_t max_outputs = 0;  // keep a seeded random subset when > 0

    static AugmentParams identity() { return {{0.0}, {1.0}, {0.0}, false, {}, 0}; }

    void validate() const {
        if (rotation_degrees.empty() || scale_factors.empty() || translation_offsets.empty()) {
            throw ContractError("augment: rotation, scale and translation lists must be nonempty");
        }
        for (double s : scale_factors)
            if (!(s > 0.0)) throw ContractError("augment: scale factors must be > 0");
        for (int q : compression_qualities)
            if (q < 1 || q > 100) throw ContractError("augment: compression quality must be in 1..100");
    }
};

struct AugmentResult {
    std::vector<Sample> samples;
    std::size_t skipped = 0;  // crops that fell entirely outside the source image
};

/// Rotation by `degrees` about the patch center in normalized coordinates (y down).
inline Point rotate_about_center(Point p, double degrees) {
    const double a = degrees * std::numbers::pi / 180.0;
    const double c = std::cos(a), s = std::sin(a);
    const double dx = p.x - 0.5, dy = p.y - 0.5;
    return {0.5 + c * dx - s * dy, 0.5 + s * dx + c * dy};
}

/// Mirrors the raster left to right.
inline Image flip_image(const Image& img) {
    Image out(img.width, img.height);
    for (std::size_t y = 0; y < img.height; ++y)
        for (std::size_t x = 0; x < img.width; ++x) out.at(img.width - 1 - x, y) = img.at(x, y);
    return out;
}

inline Sample flip_sample(const Sample& s, const LabelingPattern& pattern) {
    return {flip_image(s.image), flip_shape(s.shape, pattern), s.id};
}

namespace detail {

inline constexpr std::array<int, 64> jpeg_luma_table{
    16, 11, 10, 16, 24,  40,  51,  61,  12, 12, 14, 19, 26,  58,  60,  55,  14, 13, 16, 24, 40,  57,
    69, 56, 14, 17, 22,  29,  51,  87,  80, 62, 18, 22, 37,  56,  68,  109, 103, 77, 24, 35, 55, 64,
    81, 104, 113, 92, 49, 64, 78, 87, 103, 121, 120, 101, 72, 92, 95, 98, 112, 100, 103, 99};

struct Box {
    double x0, y0, x1, y1;
    double width() const { return x1 - x0; }
    double height() const { return y1 - y0; }
    double cx() const { return 0.5 * (x0 + x1); }
    double cy() const { return 0.5 * (y0 + y1); }
};

inline Box tight_box(const Shape& s) {
    Box b{1e300, 1e300, -1e300, -1e300};
    for (std::size_t j = 0; j < s.landmarks(); ++j) {
        const Point p = s.point(j);
        b.x0 = std::min(b.x0, p.x);
        b.y0 = std::min(b.y0, p.y);
        b.x1 = std::max(b.x1, p.x);
        b.y1 = std::max(b.y1, p.y);
    }
    return b;
}

}  // namespace detail

/// Lossy 8x8 block-DCT round trip with the baseline luminance table scaled
/// to `quality` (1..100, higher keeps more detail).
inline Image compress_blocks(const Image& img, int quality) {
    if (quality < 1 || quality > 100) throw ContractError("compression quality must be in 1..100");
    const int scale = quality < 50 ? 5000 / quality : 200 - 2 * quality;
    std::array<double, 64> q{};
    for (std::size_t i = 0; i < 64; ++i) q[i] = std::clamp((detail::jpeg_luma_table[i] * scale + 50) / 100, 1, 255);

    std::array<std::array<double, 8>, 8> basis{};
    for (std::size_t k = 0; k < 8; ++k) {
        const double ck = k == 0 ? std::sqrt(0.125) : 0.5;
        for (std::size_t n = 0; n < 8; ++n) basis[k][n] = ck * std::cos((2.0 * static_cast<double>(n) + 1.0) * static_cast<double>(k) * std::numbers::pi / 16.0);
    }

    Image out(img.width, img.height);
    for (std::size_t by = 0; by < img.height; by += 8) {
        for (std::size_t bx = 0; bx < img.width; bx += 8) {
            std::array<double, 64> block{}, coef{}, tmp{};
            for (std::size_t y = 0; y < 8; ++y)
                for (std::size_t x = 0; x < 8; ++x)
                    block[y * 8 + x] = img.at(std::min(bx + x, img.width - 1), std::min(by + y, img.height - 1)) - 128.0;
            // rows then columns
            for (std::size_t y = 0; y < 8; ++y)
                for (std::size_t u = 0; u < 8; ++u) {
                    double s = 0;
                    for (std::size_t x = 0; x < 8; ++x) s += basis[u][x] * block[y * 8 + x];
                    tmp[y * 8 + u] = s;
                }
            for (std::size_t v = 0; v < 8; ++v)
                for (std::size_t u = 0; u < 8; ++u) {
                    double s = 0;
                    for (std::size_t y = 0; y < 8; ++y) s += basis[v][y] * tmp[y * 8 + u];
                    coef[v * 8 + u] = std::round(s / q[v * 8 + u]) * q[v * 8 + u];
                }
            for (std::size_t y = 0; y < 8; ++y)
                for (std::size_t u = 0; u < 8; ++u) {
                    double s = 0;
                    for (std::size_t v = 0; v < 8; ++v) s += basis[v][y] * coef[v * 8 + u];
                    tmp[y * 8 + u] = s;
                }
            for (std::size_t y = 0; y < 8 && by + y < img.height; ++y)
                for (std::size_t x = 0; x < 8 && bx + x < img.width; ++x) {
                    double s = 0;
                    for (std::size_t u = 0; u < 8; ++u) s += basis[u][x] * tmp[y * 8 + u];
                    out.at(bx + x, by + y) = to_pixel(s + 128.0);
                }
        }
    }
    return out;
}

/// Expands one sample over the augmentation grid. For each rotation the face
/// box follows the tight box of the rotated landmarks (keeping the source
/// patch's margin around them); each scale/translation pair then crops and
/// resamples that box to 50 x 50. Flipped and compressed copies are added on
/// top of every crop.
inline AugmentResult augment(const Sample& sample, const LabelingPattern& pattern, const AugmentParams& params,
                             std::uint64_t seed) {
    params.validate();
    AugmentResult result;
    const double side = static_cast<double>(sample.image.width);
    const detail::Box base = detail::tight_box(sample.shape);
    const double base_extent = std::max(base.width(), base.height());
    if (!(base_extent > 0.0)) throw ContractError("augment: landmarks of '" + sample.id + "' are all coincident");

    for (std::size_t ri = 0; ri < params.rotation_degrees.size(); ++ri) {
        const double deg = params.rotation_degrees[ri];
        Shape rotated(sample.shape.landmarks());
        for (std::size_t j = 0; j < rotated.landmarks(); ++j) rotated.set(j, rotate_about_center(sample.shape.point(j), deg));
        const detail::Box tight = detail::tight_box(rotated);
        const double ratio = std::max(tight.width(), tight.height()) / base_extent;

        for (std::size_t si = 0; si < params.scale_factors.size(); ++si) {
            for (std::size_t ti = 0; ti < params.translation_offsets.size(); ++ti) {
                for (std::size_t tj = 0; tj < params.translation_offsets.size(); ++tj) {
                    const double size = params.scale_factors[si] * ratio;
                    const double cx = tight.cx() + (0.5 - base.cx()) * ratio + params.translation_offsets[ti] * size;
                    const double cy = tight.cy() + (0.5 - base.cy()) * ratio + params.translation_offsets[tj] * size;
                    const detail::Box crop{cx - 0.5 * size, cy - 0.5 * size, cx + 0.5 * size, cy + 0.5 * size};
                    if (crop.x1 <= 0.0 || crop.y1 <= 0.0 || crop.x0 >= 1.0 || crop.y0 >= 1.0) {
                        ++result.skipped;
                        continue;
                    }

                    Sample out;
                    out.image = Image(sample.image.width, sample.image.height);
                    for (std::size_t py = 0; py < out.image.height; ++py) {
                        for (std::size_t px = 0; px < out.image.width; ++px) {
                            const Point q{cx + ((static_cast<double>(px) + 0.5) / side - 0.5) * size,
                                          cy + ((static_cast<double>(py) + 0.5) / side - 0.5) * size};
                            const Point src = rotate_about_center(q, -deg);
                            out.image.at(px, py) = to_pixel(sample.image.sample(src.x * side - 0.5, src.y * side - 0.5));
                        }
                    }
                    out.shape = Shape(rotated.landmarks());
                    for (std::size_t j = 0; j < rotated.landmarks(); ++j) {
                        const Point p = rotated.point(j);
                        out.shape.set(j, {(p.x - cx) / size + 0.5, (p.y - cy) / size + 0.5});
                    }
                    const std::string stem = sample.id + "_r" + std::to_string(ri) + "s" + std::to_string(si) + "t" +
                                             std::to_string(ti) + std::to_string(tj);

                    std::vector<Sample> variants;
                    out.id = stem + "f0";
                    variants.push_back(out);
                    if (params.do_flip) {
                        Sample f = flip_sample(out, pattern);
                        f.id = stem + "f1";
                        variants.push_back(std::move(f));
                    }
                    for (const auto& v : variants) {
                        result.samples.push_back(v);
                        for (std::size_t qi = 0; qi < params.compression_qualities.size(); ++qi) {
                            Sample c{compress_blocks(v.image, params.compression_qualities[qi]), v.shape,
                                     v.id + "q" + std::to_string(qi)};
                            result.samples.push_back(std::move(c));
                        }
                    }
                }
            }
        }
    }

    if (params.max_outputs > 0 && result.samples.size() > params.max_outputs) {
        std::mt19937_64 rng(seed);
        std::shuffle(result.samples.begin(), result.samples.end(), rng);
        result.samples.resize(params.max_outputs);
        std::sort(result.samples.begin(), result.samples.end(), [](const Sample& a, const Sample& b) { return a.id < b.id; });
    }
    return result;
}

/// Augments every sample of a dataset; ids stay unique.
inline Dataset augment_dataset(const Dataset& ds, const AugmentParams& params, std::uint64_t seed,
                               std::size_t* skipped = nullptr) {
    Dataset out{{}, ds.pattern, ds.split};
    std::size_t skip = 0;
    for (std::size_t i = 0; i < ds.samples.size(); ++i) {
        auto r = augment(ds.samples[i], ds.pattern, params, seed + i);
        skip += r.skipped;
        for (auto& s : r.samples) out.samples.push_back(std::move(s));
    }
    if (skipped) *skipped = skip;
    return out;
}

/// Fills the tight axis-aligned box around cluster `cluster`'s ground-truth
/// landmarks with `gray`. Landmarks are left untouched.
inline Sample occlude_cluster(const Sample& sample, const ClusterPartition& partition, std::size_t cluster,
                              std::uint8_t gray = 128) {
    if (cluster >= partition.size() || partition.clusters[cluster].empty()) throw ContractError("occlude_cluster: invalid cluster");
    double x0 = 1e300, y0 = 1e300, x1 = -1e300, y1 = -1e300;
    const double w = static_cast<double>(sample.image.width), h = static_cast<double>(sample.image.height);
    for (int j : partition.clusters[cluster]) {
        const Point p = sample.shape.point(static_cast<std::size_t>(j));
        x0 = std::min(x0, p.x * w - 0.5);
        x1 = std::max(x1, p.x * w - 0.5);
        y0 = std::min(y0, p.y * h - 0.5);
        y1 = std::max(y1, p.y * h - 0.5);
    }
    Sample out = sample;
    const auto lo = [](double v, double limit) { return static_cast<long>(std::clamp(std::floor(v), 0.0, limit)); };
    const auto hi = [](double v, double limit) { return static_cast<long>(std::clamp(std::ceil(v), -1.0, limit)); };
    const long xa = lo(x0, w), xb = hi(x1, w - 1), ya = lo(y0, h), yb = hi(y1, h - 1);
    for (long y = ya; y <= yb; ++y)
        for (long x = xa; x <= xb; ++x) out.image.at(static_cast<std::size_t>(x), static_cast<std::size_t>(y)) = gray;
    return out;
}

}  // namespace mcl
