#pragma once

// Procedural schematic faces with analytically known landmarks.
//
// A face is drawn in canonical patch coordinates (ellipse outline, eyes with
// pupils, brows, a triangular nose, two-lip mouth), then placed by a random
// similarity transform. Each pixel is rendered by mapping its sub-samples back
// to canonical coordinates, so landmarks and pixels agree exactly.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "mcl/dataset.hpp"
#include "mcl/geometry.hpp"
#include "mcl/image.hpp"

namespace mcl {

struct SynthOptions {
    double max_rotation_degrees = 30.0;
    double min_scale = 0.9;
    double max_scale = 1.1;
    double max_translation = 0.05;
    double max_noise_sigma = 6.0;  // additive Gaussian pixel noise, drawn per face in [0, max]
    bool shape_jitter = true;
};

namespace detail {

struct FaceGeometry {
    double face_cx = 0.5, face_cy = 0.52, face_rx = 0.34, face_ry = 0.42;
    double eye_dx = 0.16, eye_y = 0.42, eye_rx = 0.065, eye_ry = 0.032, pupil_r = 0.022;
    double brow_y = 0.335, brow_half = 0.075, brow_arch = 0.018, brow_thick = 0.012;
    double nose_top = 0.45, nose_tip = 0.57, nose_base = 0.605, nose_half = 0.05;
    double mouth_y = 0.725, mouth_half = 0.11, lip_up = 0.028, lip_down = 0.036;
    double lip_gap = 0.004;

    double left_eye_x() const { return 0.5 - eye_dx; }
    double right_eye_x() const { return 0.5 + eye_dx; }
    Point eye_point(bool right, double deg) const {
        const double a = deg * std::numbers::pi / 180.0;
        return {(right ? right_eye_x() : left_eye_x()) + eye_rx * std::cos(a), eye_y + eye_ry * std::sin(a)};
    }
    // t in [-1, 1] across the brow from image-left to image-right
    Point brow_point(bool right, double t) const {
        return {(right ? right_eye_x() : left_eye_x()) + brow_half * t, brow_y - brow_arch * (1.0 - t * t)};
    }
    Point mouth_outer(double t, bool upper) const {
        return {0.5 + mouth_half * t, mouth_y + (upper ? -lip_up : lip_down) * (1.0 - t * t)};
    }
    Point mouth_inner(double t, bool upper) const {
        return {0.5 + mouth_half * t, mouth_y + (upper ? -lip_gap : lip_gap) * (1.0 - t * t)};
    }
    Point contour(double deg) const {
        const double a = deg * std::numbers::pi / 180.0;
        return {face_cx + face_rx * std::cos(a), face_cy + face_ry * std::sin(a)};
    }
};

struct FaceShading {
    double background = 60, skin = 180, brow = 45, sclera = 235, pupil = 15, nose = 140, lip = 95, lip_line = 40;
};

inline double shade(const FaceGeometry& g, const FaceShading& s, Point p) {
    auto in_ellipse = [](Point q, double cx, double cy, double rx, double ry) {
        const double dx = (q.x - cx) / rx, dy = (q.y - cy) / ry;
        return dx * dx + dy * dy <= 1.0;
    };
    if (!in_ellipse(p, g.face_cx, g.face_cy, g.face_rx, g.face_ry)) return s.background;
    for (bool right : {false, true}) {
        const double ex = right ? g.right_eye_x() : g.left_eye_x();
        if (std::hypot(p.x - ex, p.y - g.eye_y) <= g.pupil_r) return s.pupil;
        if (in_ellipse(p, ex, g.eye_y, g.eye_rx, g.eye_ry)) return s.sclera;
        const double t = (p.x - ex) / g.brow_half;
        if (std::abs(t) <= 1.0) {
            const double by = g.brow_y - g.brow_arch * (1.0 - t * t);
            if (std::abs(p.y - by) <= g.brow_thick) return s.brow;
        }
    }
    if (p.y >= g.nose_top && p.y <= g.nose_base) {
        const double half = g.nose_half * (p.y - g.nose_top) / (g.nose_base - g.nose_top);
        if (std::abs(p.x - 0.5) <= half) return s.nose;
    }
    const double t = (p.x - 0.5) / g.mouth_half;
    if (std::abs(t) <= 1.0) {
        const double w = 1.0 - t * t;
        const double top = g.mouth_y - g.lip_up * w, bottom = g.mouth_y + g.lip_down * w;
        if (p.y >= top && p.y <= bottom) {
            if (std::abs(p.y - g.mouth_y) <= g.lip_gap * w + 0.006) return s.lip_line;
            return s.lip;
        }
    }
    return s.skin;
}

inline Shape face_landmarks(const FaceGeometry& g, int n) {
    Shape s(static_cast<std::size_t>(n));
    auto put = [&](int one_based, Point p) { s.set(static_cast<std::size_t>(one_based - 1), p); };
    const Point le{g.left_eye_x(), g.eye_y}, re{g.right_eye_x(), g.eye_y};
    const Point tip{0.5, g.nose_tip};
    const Point nl{0.5 - g.nose_half, g.nose_base}, nr{0.5 + g.nose_half, g.nose_base};
    if (n == 5) {
        put(1, le);
        put(2, re);
        put(3, tip);
        put(4, g.mouth_outer(-1.0, true));
        put(5, g.mouth_outer(1.0, true));
        return s;
    }
    if (n == 29) {
        // odd index = image-left feature, even = image-right
        for (bool right : {false, true}) {
            const int k = right ? 1 : 0;
            const double outer = right ? 1.0 : -1.0;
            put(1 + k, g.brow_point(right, outer));
            put(3 + k, g.brow_point(right, -outer));
            put(5 + k, {g.brow_point(right, 0.0).x, g.brow_point(right, 0.0).y - g.brow_thick});
            put(7 + k, {g.brow_point(right, 0.0).x, g.brow_point(right, 0.0).y + g.brow_thick});
            put(9 + k, g.eye_point(right, right ? 0.0 : 180.0));
            put(11 + k, g.eye_point(right, right ? 180.0 : 0.0));
            put(13 + k, g.eye_point(right, 270.0));
            put(15 + k, g.eye_point(right, 90.0));
            put(17 + k, right ? re : le);
        }
        put(19, nl);
        put(20, nr);
        put(21, tip);
        put(22, {0.5, g.nose_base});
        put(23, g.mouth_outer(-1.0, true));
        put(24, g.mouth_outer(1.0, true));
        put(25, g.mouth_outer(0.0, true));
        put(26, g.mouth_inner(0.0, true));
        put(27, g.mouth_inner(0.0, false));
        put(28, g.mouth_outer(0.0, false));
        put(29, g.contour(90.0));
        return s;
    }
    // 68 points
    for (int k = 0; k < 17; ++k) put(1 + k, g.contour(170.0 - 10.0 * k));
    for (int k = 0; k < 5; ++k) {
        const double t = -1.0 + 0.5 * k;
        put(18 + k, g.brow_point(false, t));
        put(23 + k, g.brow_point(true, t));
    }
    for (int k = 0; k < 4; ++k) put(28 + k, {0.5, g.nose_top + (g.nose_tip - g.nose_top) * k / 3.0});
    for (int k = 0; k < 5; ++k) put(32 + k, {0.5 - g.nose_half + 0.5 * g.nose_half * k, g.nose_base});
    const double lid[6] = {180.0, 240.0, 300.0, 0.0, 60.0, 120.0};
    for (int k = 0; k < 6; ++k) {
        put(37 + k, g.eye_point(false, lid[k]));
        put(43 + k, g.eye_point(true, lid[k]));
    }
    for (int k = 0; k <= 6; ++k) put(49 + k, g.mouth_outer(-1.0 + k / 3.0, true));
    for (int k = 0; k < 5; ++k) put(56 + k, g.mouth_outer(2.0 / 3.0 - k / 3.0, false));
    put(61, g.mouth_inner(-0.85, true));
    put(62, g.mouth_inner(-0.4, true));
    put(63, g.mouth_inner(0.0, true));
    put(64, g.mouth_inner(0.4, true));
    put(65, g.mouth_inner(0.85, true));
    put(66, g.mouth_inner(0.4, false));
    put(67, g.mouth_inner(0.0, false));
    put(68, g.mouth_inner(-0.4, false));
    return s;
}

}  // namespace detail

/// One rendered face: canonical geometry jittered and placed by a similarity
/// transform drawn from `rng`.
inline Sample synth_face(const LabelingPattern& pattern, std::mt19937_64& rng, const SynthOptions& opt, std::string id) {
    auto uni = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
    detail::FaceGeometry g;
    if (opt.shape_jitter) {
        g.face_rx = uni(0.31, 0.37);
        g.face_ry = uni(0.39, 0.44);
        g.eye_dx = uni(0.145, 0.175);
        g.eye_y = uni(0.40, 0.44);
        g.eye_rx = uni(0.055, 0.072);
        g.brow_y = g.eye_y - uni(0.075, 0.095);
        g.nose_tip = uni(0.55, 0.59);
        g.nose_base = g.nose_tip + uni(0.03, 0.04);
        g.nose_half = uni(0.04, 0.06);
        g.mouth_y = uni(0.70, 0.75);
        g.mouth_half = uni(0.09, 0.13);
    }
    detail::FaceShading sh;
    sh.background = uni(20, 100);
    sh.skin = uni(150, 210);
    sh.nose = sh.skin - uni(25, 50);
    sh.lip = uni(80, 120);
    const double contrast = uni(0.7, 1.2);
    const double sigma = uni(0.0, opt.max_noise_sigma);

    const double angle = uni(-opt.max_rotation_degrees, opt.max_rotation_degrees) * std::numbers::pi / 180.0;
    const double scale = uni(opt.min_scale, opt.max_scale);
    const double tx = uni(-opt.max_translation, opt.max_translation);
    const double ty = uni(-opt.max_translation, opt.max_translation);
    const double ca = std::cos(angle), sa = std::sin(angle);
    auto to_patch = [&](Point q) {
        const double dx = q.x - 0.5, dy = q.y - 0.5;
        return Point{0.5 + scale * (ca * dx - sa * dy) + tx, 0.5 + scale * (sa * dx + ca * dy) + ty};
    };
    auto to_canonical = [&](Point p) {
        const double dx = (p.x - 0.5 - tx) / scale, dy = (p.y - 0.5 - ty) / scale;
        return Point{0.5 + ca * dx + sa * dy, 0.5 - sa * dx + ca * dy};
    };

    Sample s;
    s.id = std::move(id);
    s.image = Image(50, 50);
    std::normal_distribution<double> noise(0.0, 1.0);
    for (std::size_t py = 0; py < 50; ++py) {
        for (std::size_t px = 0; px < 50; ++px) {
            double acc = 0.0;
            for (int sy = 0; sy < 2; ++sy)
                for (int sx = 0; sx < 2; ++sx) {
                    const Point p{(static_cast<double>(px) + 0.25 + 0.5 * sx) / 50.0,
                                  (static_cast<double>(py) + 0.25 + 0.5 * sy) / 50.0};
                    acc += detail::shade(g, sh, to_canonical(p));
                }
            double v = 128.0 + contrast * (acc / 4.0 - 128.0);
            if (sigma > 0.0) v += sigma * noise(rng);
            s.image.at(px, py) = to_pixel(v);
        }
    }
    const Shape canonical = detail::face_landmarks(g, pattern.n);
    s.shape = Shape(canonical.landmarks());
    for (std::size_t j = 0; j < canonical.landmarks(); ++j) s.shape.set(j, to_patch(canonical.point(j)));
    return s;
}

/// Deterministic synthetic dataset of `count` faces.
inline Dataset synth_generate(const LabelingPattern& pattern, std::size_t count, std::uint64_t seed,
                              const SynthOptions& opt = {}, std::string split = "train") {
    if (count < 1) throw ContractError("synth_generate: count must be >= 1");
    Dataset ds{{}, pattern, std::move(split)};
    std::mt19937_64 rng(seed);
    for (std::size_t i = 0; i < count; ++i) {
        char id[32];
        std::snprintf(id, sizeof(id), "face%06zu", i);
        ds.samples.push_back(synth_face(pattern, rng, opt, id));
    }
    return ds;
}

}  // namespace mcl
