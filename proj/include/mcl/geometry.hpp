#pragma once

// Landmark shapes, labeling patterns, inter-ocular normalization and the
// semantic cluster tables.
//
// Coordinates are normalized to the face patch: (0,0) is the top-left corner
// of the patch and (1,1) the bottom-right, y pointing down. Landmark indices
// are 0-based in code and 1-based in text files.

#include <algorithm>
#include <array>
#include <cmath>
#include <istream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "mcl/errors.hpp"

namespace mcl {

struct LabelingPattern {
    int n = 0;  // landmarks
    int m = 0;  // clusters / shape prediction heads

    friend bool operator==(const LabelingPattern&, const LabelingPattern&) = default;
};

inline LabelingPattern pattern_for(int n) {
    switch (n) {
        case 5: return {5, 4};
        case 29: return {29, 5};
        case 68: return {68, 7};
        default: throw ContractError("unsupported labeling pattern " + std::to_string(n) + " (expected 5, 29 or 68)");
    }
}

inline bool is_supported_pattern(int n) { return n == 5 || n == 29 || n == 68; }

struct Point {
    double x = 0.0, y = 0.0;
};

/// 2n interleaved coordinates (x1, y1, ..., xn, yn).
struct Shape {
    std::vector<double> coords;

    Shape() = default;
    explicit Shape(std::size_t n_landmarks) : coords(2 * n_landmarks, 0.0) {}
    explicit Shape(std::vector<double> c) : coords(std::move(c)) {}

    std::size_t landmarks() const noexcept { return coords.size() / 2; }
    Point point(std::size_t j) const { return {coords[2 * j], coords[2 * j + 1]}; }
    void set(std::size_t j, Point p) {
        coords[2 * j] = p.x;
        coords[2 * j + 1] = p.y;
    }

    friend bool operator==(const Shape&, const Shape&) = default;
};

struct ClusterPartition {
    std::vector<std::string> names;
    std::vector<std::vector<int>> clusters;  // 0-based landmark indices
    int n = 0;

    std::size_t size() const noexcept { return clusters.size(); }

    /// Q^i: every landmark outside cluster i, ascending.
    std::vector<int> complement(std::size_t i) const {
        std::vector<bool> in(static_cast<std::size_t>(n), false);
        for (int j : clusters.at(i)) in[static_cast<std::size_t>(j)] = true;
        std::vector<int> q;
        for (int j = 0; j < n; ++j)
            if (!in[static_cast<std::size_t>(j)]) q.push_back(j);
        return q;
    }

    std::size_t index_of(const std::string& name) const {
        auto it = std::find(names.begin(), names.end(), name);
        if (it == names.end()) throw ContractError("unknown cluster '" + name + "'");
        return static_cast<std::size_t>(it - names.begin());
    }

    /// Owning cluster of every landmark.
    std::vector<int> owner() const {
        std::vector<int> own(static_cast<std::size_t>(n), -1);
        for (std::size_t i = 0; i < clusters.size(); ++i)
            for (int j : clusters[i]) own[static_cast<std::size_t>(j)] = static_cast<int>(i);
        return own;
    }

    /// Throws unless the clusters are nonempty, disjoint and cover 0..n-1.
    void validate() const {
        std::vector<int> seen(static_cast<std::size_t>(n), 0);
        for (std::size_t i = 0; i < clusters.size(); ++i) {
            if (clusters[i].empty()) throw ContractError("cluster " + std::to_string(i) + " is empty");
            for (int j : clusters[i]) {
                if (j < 0 || j >= n) throw ContractError("cluster index out of range: " + std::to_string(j));
                ++seen[static_cast<std::size_t>(j)];
            }
        }
        for (int j = 0; j < n; ++j) {
            if (seen[static_cast<std::size_t>(j)] == 0) throw ContractError("landmark " + std::to_string(j + 1) + " is in no cluster");
            if (seen[static_cast<std::size_t>(j)] > 1) throw ContractError("landmark " + std::to_string(j + 1) + " is in several clusters");
        }
    }
};

namespace detail {

inline std::vector<int> one_based_range(int first, int last) {
    std::vector<int> v;
    for (int i = first; i <= last; ++i) v.push_back(i - 1);
    return v;
}

inline std::vector<int> concat(std::vector<int> a, const std::vector<int>& b) {
    a.insert(a.end(), b.begin(), b.end());
    return a;
}

}  // namespace detail

// 29-point layout (left/right alternate, "left" meaning the image-left side):
//   1/2 brow outer, 3/4 brow inner, 5/6 brow top, 7/8 brow bottom,
//   9/10 eye outer, 11/12 eye inner, 13/14 eye top, 15/16 eye bottom,
//   17/18 pupil, 19/20 nostril, 21 nose tip, 22 nose bottom,
//   23/24 mouth corner, 25 upper lip top, 26 upper lip bottom,
//   27 lower lip top, 28 lower lip bottom, 29 chin.
// 68-point layout: the usual 300-W annotation order.
inline ClusterPartition clusters_for_pattern(const LabelingPattern& p) {
    using detail::concat;
    using detail::one_based_range;
    ClusterPartition cp;
    cp.n = p.n;
    switch (p.n) {
        case 5:
            cp.names = {"left_eye", "right_eye", "nose", "mouth"};
            cp.clusters = {{0}, {1}, {2}, {3, 4}};
            break;
        case 29:
            cp.names = {"left_eye", "right_eye", "nose", "mouth", "chin"};
            cp.clusters = {{0, 2, 4, 6, 8, 10, 12, 14, 16},
                           {1, 3, 5, 7, 9, 11, 13, 15, 17},
                           one_based_range(19, 22),
                           one_based_range(23, 28),
                           {28}};
            break;
        case 68:
            cp.names = {"left_eye", "right_eye", "nose", "mouth", "left_contour", "chin", "right_contour"};
            cp.clusters = {concat(one_based_range(18, 22), one_based_range(37, 42)),
                           concat(one_based_range(23, 27), one_based_range(43, 48)),
                           one_based_range(28, 36),
                           one_based_range(49, 68),
                           one_based_range(1, 6),
                           one_based_range(7, 11),
                           one_based_range(12, 17)};
            break;
        default:
            throw ContractError("unsupported labeling pattern " + std::to_string(p.n));
    }
    return cp;
}

/// Reads the plain-text cluster table format: one cluster per line,
/// "pattern cluster_name idx,idx,..." with 1-based indices. Blank lines and
/// lines starting with '#' are ignored.
inline std::vector<std::pair<int, std::pair<std::string, std::vector<int>>>> parse_cluster_table(std::istream& in) {
    std::vector<std::pair<int, std::pair<std::string, std::vector<int>>>> rows;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        int pattern = 0;
        std::string name, list;
        if (!(ls >> pattern >> name >> list)) throw LoadError("cluster table line " + std::to_string(line_no) + " is malformed");
        std::vector<int> idx;
        std::istringstream is(list);
        std::string tok;
        while (std::getline(is, tok, ',')) idx.push_back(std::stoi(tok) - 1);
        rows.push_back({pattern, {name, idx}});
    }
    return rows;
}

inline void write_cluster_table(std::ostream& out, const LabelingPattern& p) {
    const auto cp = clusters_for_pattern(p);
    for (std::size_t i = 0; i < cp.size(); ++i) {
        out << p.n << ' ' << cp.names[i] << ' ';
        for (std::size_t k = 0; k < cp.clusters[i].size(); ++k) out << (k ? "," : "") << cp.clusters[i][k] + 1;
        out << '\n';
    }
}

/// The two eye centers used for inter-ocular normalization.
inline std::pair<Point, Point> eye_centers(const Shape& gt) {
    auto centroid = [&](int first, int last) {
        Point c;
        for (int j = first - 1; j < last; ++j) {
            c.x += gt.coords[2 * static_cast<std::size_t>(j)];
            c.y += gt.coords[2 * static_cast<std::size_t>(j) + 1];
        }
        const double k = last - first + 1;
        return Point{c.x / k, c.y / k};
    };
    switch (gt.landmarks()) {
        case 5: return {gt.point(0), gt.point(1)};
        case 29: return {gt.point(16), gt.point(17)};
        case 68: return {centroid(37, 42), centroid(43, 48)};
        default: throw ContractError("shape has " + std::to_string(gt.landmarks()) + " landmarks; no labeling pattern matches");
    }
}

inline double distance(Point a, Point b) { return std::hypot(a.x - b.x, a.y - b.y); }

inline double interocular_distance(const Shape& gt) {
    const auto [l, r] = eye_centers(gt);
    const double d = distance(l, r);
    if (!(d > 0.0)) throw DegenerateFaceError("inter-ocular distance is zero; eye centers coincide");
    return d;
}

/// Euclidean error of each landmark divided by the ground-truth inter-ocular distance.
inline std::vector<double> per_landmark_errors(const Shape& pred, const Shape& gt) {
    if (pred.coords.size() != gt.coords.size()) {
        throw ContractError("per_landmark_errors: prediction has " + std::to_string(pred.landmarks()) +
                            " landmarks, ground truth " + std::to_string(gt.landmarks()));
    }
    const double d = interocular_distance(gt);
    std::vector<double> e(gt.landmarks());
    for (std::size_t j = 0; j < e.size(); ++j) e[j] = distance(pred.point(j), gt.point(j)) / d;
    return e;
}

inline double mean_of(const std::vector<double>& v) {
    return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

/// Left/right relabeling for a horizontal mirror. Involutive; midline points are fixed.
inline std::vector<int> flip_index_map(const LabelingPattern& p) {
    std::vector<int> map(static_cast<std::size_t>(p.n));
    std::iota(map.begin(), map.end(), 0);
    auto swap1 = [&](int a, int b) {  // 1-based
        map[static_cast<std::size_t>(a - 1)] = b - 1;
        map[static_cast<std::size_t>(b - 1)] = a - 1;
    };
    switch (p.n) {
        case 5:
            swap1(1, 2);
            swap1(4, 5);
            break;
        case 29:
            for (int a = 1; a <= 19; a += 2) swap1(a, a + 1);
            swap1(23, 24);
            break;
        case 68:
            for (int a = 1; a <= 8; ++a) swap1(a, 18 - a);
            for (int a = 18; a <= 22; ++a) swap1(a, 45 - a);
            swap1(32, 36);
            swap1(33, 35);
            for (auto [a, b] : std::array<std::pair<int, int>, 6>{{{37, 46}, {38, 45}, {39, 44}, {40, 43}, {41, 48}, {42, 47}}})
                swap1(a, b);
            for (auto [a, b] : std::array<std::pair<int, int>, 7>{{{49, 55}, {50, 54}, {51, 53}, {56, 60}, {57, 59}, {61, 65}, {62, 64}}})
                swap1(a, b);
            swap1(66, 68);
            break;
        default:
            throw ContractError("unsupported labeling pattern " + std::to_string(p.n));
    }
    return map;
}

/// Mirrors a shape about x = 0.5 and relabels left/right counterparts.
inline Shape flip_shape(const Shape& s, const LabelingPattern& p) {
    const auto map = flip_index_map(p);
    Shape out(s.landmarks());
    for (std::size_t j = 0; j < s.landmarks(); ++j) {
        const Point q = s.point(j);
        out.set(static_cast<std::size_t>(map[j]), {1.0 - q.x, q.y});
    }
    return out;
}

}  // namespace mcl
