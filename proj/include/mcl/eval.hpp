#pragma once

// Metrics: normalized mean error, failure rate, CED curves, inference speed,
// and the clean/occluded comparison table.

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include "mcl/augment.hpp"
#include "mcl/dataset.hpp"
#include "mcl/errors.hpp"
#include "mcl/geometry.hpp"
#include "mcl/image.hpp"
#include "mcl/loss.hpp"
#include "mcl/network.hpp"

namespace mcl {

inline constexpr double failure_threshold = 0.10;

struct EvalReport {
    std::vector<double> per_sample_mean_errors;
    double mean_error = 0.0;    // percent
    double failure_rate = 0.0;  // percent
    std::size_t n_samples = 0;
};

/// A face fails when its mean error is strictly larger than 10%.
inline EvalReport make_report(std::vector<double> per_sample) {
    if (per_sample.empty()) throw ContractError("evaluation needs at least one sample");
    EvalReport r;
    r.n_samples = per_sample.size();
    const auto failures = std::count_if(per_sample.begin(), per_sample.end(), [](double e) { return e > failure_threshold; });
    r.mean_error = 100.0 * std::accumulate(per_sample.begin(), per_sample.end(), 0.0) / static_cast<double>(r.n_samples);
    r.failure_rate = 100.0 * static_cast<double>(failures) / static_cast<double>(r.n_samples);
    r.per_sample_mean_errors = std::move(per_sample);
    return r;
}

struct CEDCurve {
    std::vector<double> thresholds;
    std::vector<double> fractions;
};

/// 0, 0.002, ..., 0.2
inline std::vector<double> default_ced_thresholds() {
    std::vector<double> t(101);
    for (std::size_t k = 0; k < t.size(); ++k) t[k] = 0.002 * static_cast<double>(k);
    return t;
}

/// fraction(t) = #{e <= t} / N
inline CEDCurve ced_curve(const std::vector<double>& errors, const std::vector<double>& thresholds) {
    if (!std::is_sorted(thresholds.begin(), thresholds.end())) throw ContractError("CED thresholds must be ascending");
    CEDCurve c{thresholds, std::vector<double>(thresholds.size(), 0.0)};
    if (errors.empty()) return c;
    std::vector<double> sorted = errors;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t k = 0; k < thresholds.size(); ++k) {
        const auto count = std::upper_bound(sorted.begin(), sorted.end(), thresholds[k]) - sorted.begin();
        c.fractions[k] = static_cast<double>(count) / static_cast<double>(sorted.size());
    }
    return c;
}

// ---------------------------------------------------------------------------
// Batched prediction over a dataset

/// A dataset converted once into network input and ground truth.
template <typename T>
struct PreparedSet {
    Tensor<T> images;  // N x 50 x 50 x 1, normalized
    std::vector<Shape> shapes;
    std::vector<double> iod;
    LabelingPattern pattern{5, 4};

    std::size_t size() const noexcept { return shapes.size(); }
};

template <typename T>
PreparedSet<T> prepare_set(const Dataset& ds) {
    if (ds.empty()) throw ContractError("dataset '" + ds.split + "' is empty");
    PreparedSet<T> set;
    set.pattern = ds.pattern;
    const std::size_t px = patch_size * patch_size;
    set.images = Tensor<T>(Dims{ds.size(), patch_size, patch_size, 1});
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const Sample& s = ds.samples[i];
        if (s.image.width != patch_size || s.image.height != patch_size) {
            throw ContractError("sample '" + s.id + "' is not a 50x50 patch");
        }
        if (s.shape.landmarks() != static_cast<std::size_t>(ds.pattern.n)) {
            throw ContractError("sample '" + s.id + "' does not match the dataset labeling pattern");
        }
        const Tensor<T> img = normalize_pixels<T>(s.image);
        std::copy(img.data(), img.data() + px, set.images.data() + i * px);
        try {
            set.iod.push_back(interocular_distance(s.shape));
        } catch (const DegenerateFaceError& e) {
            throw DegenerateFaceError("sample '" + s.id + "': " + e.what());
        }
        set.shapes.push_back(s.shape);
    }
    return set;
}

/// Copies rows `idx` of an N x ... tensor into a new B x ... tensor.
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& src, const std::vector<std::size_t>& idx) {
    Dims dims = src.dims();
    const std::size_t row = src.size() / dims[0];
    dims[0] = idx.size();
    Tensor<T> out(dims);
    for (std::size_t b = 0; b < idx.size(); ++b) std::copy_n(src.data() + idx[b] * row, row, out.data() + b * row);
    return out;
}

/// Pooled features (N x D) in inference mode, computed in chunks.
template <typename T>
Tensor<T> features_of(const NetworkParams<T>& params, const Tensor<T>& images, std::size_t chunk = 32) {
    const std::size_t n = images.dim(0);
    Tensor<T> out;
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < n; start += chunk) {
        idx.clear();
        for (std::size_t i = start; i < std::min(n, start + chunk); ++i) idx.push_back(i);
        const Tensor<T> f = forward_infer(params, gather_rows(images, idx));
        if (start == 0) out = Tensor<T>(Dims{n, f.dim(1)});
        std::copy(f.data(), f.data() + f.size(), out.data() + start * f.dim(1));
    }
    return out;
}

template <typename T>
std::vector<Shape> shapes_from_predictions(const Tensor<T>& pred) {
    const std::size_t n = pred.dim(0), cols = pred.dim(1);
    std::vector<Shape> shapes(n, Shape(cols / 2));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < cols; ++k) shapes[i].coords[k] = static_cast<double>(pred[i * cols + k]);
    return shapes;
}

template <typename T>
std::vector<Shape> predict_set(const NetworkParams<T>& params, std::size_t head, const PreparedSet<T>& set) {
    return shapes_from_predictions(predict_batch(params, head, features_of(params, set.images)));
}

/// Per-sample mean error over `landmarks` (0-based; empty = all).
inline std::vector<double> per_sample_errors(const std::vector<Shape>& preds, const std::vector<Shape>& gts,
                                             const std::vector<int>& landmarks = {}) {
    if (preds.size() != gts.size()) throw ContractError("prediction and ground-truth counts differ");
    std::vector<double> out;
    out.reserve(preds.size());
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const auto e = per_landmark_errors(preds[i], gts[i]);
        if (landmarks.empty()) {
            out.push_back(mean_of(e));
        } else {
            double s = 0.0;
            for (int j : landmarks) s += e.at(static_cast<std::size_t>(j));
            out.push_back(s / static_cast<double>(landmarks.size()));
        }
    }
    return out;
}

/// eps_j = mean over samples of landmark j's normalized error.
inline ErrorProfile error_profile(const std::vector<Shape>& preds, const std::vector<Shape>& gts) {
    if (preds.empty()) throw ContractError("error profile needs at least one sample");
    if (preds.size() != gts.size()) throw ContractError("prediction and ground-truth counts differ");
    ErrorProfile p{std::vector<double>(gts[0].landmarks(), 0.0)};
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const auto e = per_landmark_errors(preds[i], gts[i]);
        for (std::size_t j = 0; j < e.size(); ++j) p.eps[j] += e[j];
    }
    for (auto& v : p.eps) v /= static_cast<double>(preds.size());
    return p;
}

template <typename T>
ErrorProfile validation_errors(const NetworkParams<T>& params, std::size_t head, const PreparedSet<T>& val) {
    return error_profile(predict_set(params, head, val), val.shapes);
}

template <typename T>
ErrorProfile validation_errors(const NetworkParams<T>& params, std::size_t head, const Dataset& val) {
    return validation_errors(params, head, prepare_set<T>(val));
}

template <typename T>
EvalReport evaluate(const NetworkParams<T>& params, std::size_t head, const PreparedSet<T>& test) {
    return make_report(per_sample_errors(predict_set(params, head, test), test.shapes));
}

template <typename T>
EvalReport evaluate(const NetworkParams<T>& params, std::size_t head, const Dataset& test) {
    return evaluate(params, head, prepare_set<T>(test));
}

// ---------------------------------------------------------------------------
// Speed

inline double fps_from(std::size_t images, double seconds) {
    if (!(seconds > 0.0)) throw ContractError("fps needs a positive elapsed time");
    return static_cast<double>(images) / seconds;
}

/// Feeds one image at a time through feature extraction and prediction.
/// Inputs are normalized beforehand; one untimed warm-up pass precedes the
/// `repeats` timed passes over `images`.
template <typename T>
double fps_bench(const NetworkParams<T>& params, std::size_t head, const std::vector<Tensor<T>>& images, std::size_t repeats) {
    if (repeats < 1) throw ContractError("fps_bench: repeats must be >= 1");
    if (images.empty()) throw ContractError("fps_bench: no images");
    volatile double sink = 0.0;
    sink = sink + predict_shape(params, head, extract_features(params, images.front())).coords[0];
    const auto t0 = std::chrono::steady_clock::now();
    std::size_t count = 0;
    for (std::size_t r = 0; r < repeats; ++r) {
        for (const auto& img : images) {
            sink = sink + predict_shape(params, head, extract_features(params, img)).coords[0];
            ++count;
        }
    }
    const auto t1 = std::chrono::steady_clock::now();
    return fps_from(count, std::chrono::duration<double>(t1 - t0).count());
}

// ---------------------------------------------------------------------------
// Occlusion

struct OcclusionCell {
    std::string model;      // "WM" or "AM"
    std::string condition;  // "clean" or "occluded"
    std::string group;      // cluster name or "others"
    double mean_error = 0.0;  // percent
};

struct OcclusionTable {
    std::string cluster;
    std::vector<OcclusionCell> cells;

    double at(const std::string& model, const std::string& condition, const std::string& group) const {
        for (const auto& c : cells)
            if (c.model == model && c.condition == condition && c.group == group) return c.mean_error;
        throw ContractError("no occlusion cell " + model + "/" + condition + "/" + group);
    }
};

/// Gray-fills cluster `cluster` in every test face and compares WM and AM on
/// the occluded landmarks and on the rest. Each model uses its head 0.
template <typename T>
OcclusionTable occlusion_report(const NetworkParams<T>& wm, const NetworkParams<T>& am, const Dataset& test,
                                std::size_t cluster) {
    const ClusterPartition cp = clusters_for_pattern(test.pattern);
    if (cluster >= cp.size()) throw ContractError("cluster index " + std::to_string(cluster) + " out of range");
    Dataset occluded = test;
    for (auto& s : occluded.samples) s = occlude_cluster(s, cp, cluster);

    const std::vector<int>& inside = cp.clusters[cluster];
    const std::vector<int> outside = cp.complement(cluster);
    const PreparedSet<T> clean_set = prepare_set<T>(test), occl_set = prepare_set<T>(occluded);

    OcclusionTable table{cp.names[cluster], {}};
    for (const auto& [name, params] : {std::pair<std::string, const NetworkParams<T>*>{"WM", &wm}, {"AM", &am}}) {
        for (const auto& [cond, set] :
             {std::pair<std::string, const PreparedSet<T>*>{"clean", &clean_set}, {"occluded", &occl_set}}) {
            const auto preds = predict_set(*params, 0, *set);
            for (std::size_t g = 0; g < 2; ++g) {
                const auto& lm = g == 0 ? inside : outside;
                if (lm.empty()) continue;
                const auto e = per_sample_errors(preds, set->shapes, lm);
                table.cells.push_back({name, cond, g == 0 ? cp.names[cluster] : "others", 100.0 * mean_of(e)});
            }
        }
    }
    return table;
}

// ---------------------------------------------------------------------------
// CSV output

struct ReportRow {
    std::string model;
    std::string dataset;
    double mean_error = 0.0;
    double failure_rate = 0.0;
};

struct PerturbationRow {
    double delta = 0.0;
    std::uint64_t seed = 0;
    double mean_error = 0.0;
};

inline std::string format_number(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

inline std::string format_percent(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

inline void write_report_csv(std::ostream& out, const std::vector<ReportRow>& rows) {
    out << "model,dataset,mean_error,failure_rate\n";
    for (const auto& r : rows) {
        out << r.model << ',' << r.dataset << ',' << format_number(r.mean_error) << ',' << format_number(r.failure_rate) << '\n';
    }
}

inline void write_ced_csv(std::ostream& out, const CEDCurve& c) {
    out << "threshold,fraction\n";
    for (std::size_t k = 0; k < c.thresholds.size(); ++k) {
        out << format_number(c.thresholds[k]) << ',' << format_number(c.fractions[k]) << '\n';
    }
}

inline void write_perturbation_csv(std::ostream& out, const std::vector<PerturbationRow>& rows) {
    out << "delta,seed,mean_error\n";
    for (const auto& r : rows) out << format_number(r.delta) << ',' << r.seed << ',' << format_number(r.mean_error) << '\n';
}

inline void write_occlusion_csv(std::ostream& out, const OcclusionTable& t) {
    out << "model,condition,group,mean_error\n";
    for (const auto& c : t.cells) out << c.model << ',' << c.condition << ',' << c.group << ',' << format_number(c.mean_error) << '\n';
}

}  // namespace mcl
