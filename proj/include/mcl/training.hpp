#pragma once

// The four training stages: uniform pre-training (BM), two-step weighting
// fine-tuning (WM), per-cluster head fine-tuning, and column assembling (AM).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "mcl/augment.hpp"
#include "mcl/dataset.hpp"
#include "mcl/errors.hpp"
#include "mcl/eval.hpp"
#include "mcl/loss.hpp"
#include "mcl/network.hpp"
#include "mcl/optim.hpp"

namespace mcl {

struct StageConfig {
    int max_iterations = 60000;
    double initial_lr = 0.001;
    double lr_decay_factor = 0.3;
    int lr_decay_every = 30000;
    int batch_size = 64;
    double momentum = 0.9;
    double weight_decay = 0.0005;
    int validate_every = 500;
    int convergence_patience = 10;

    static StageConfig full_pretrain() {
        StageConfig c;
        c.max_iterations = 180000;
        c.initial_lr = 0.02;
        return c;
    }
    static StageConfig full_finetune() { return {}; }

    double lr_at(int iteration) const {
        return initial_lr * std::pow(lr_decay_factor, static_cast<double>(iteration / lr_decay_every));
    }

    void validate(const std::string& stage = "stage") const {
        auto fail = [&](const std::string& what) { throw ContractError(stage + " config: " + what); };
        if (max_iterations < 0) fail("max_iterations must be >= 0");
        if (!(initial_lr > 0.0)) fail("initial_lr must be positive");
        if (!(lr_decay_factor > 0.0 && lr_decay_factor < 1.0)) fail("lr_decay_factor must lie in (0, 1)");
        if (lr_decay_every < 1) fail("lr_decay_every must be >= 1");
        if (batch_size < 1) fail("batch_size must be >= 1");
        if (momentum < 0.0 || momentum >= 1.0) fail("momentum must lie in [0, 1)");
        if (weight_decay < 0.0) fail("weight_decay must be >= 0");
        if (validate_every < 1) fail("validate_every must be >= 1");
        if (convergence_patience < 1) fail("convergence_patience must be >= 1");
    }
};

struct StageLog {
    std::string stage;
    int iterations_run = 0;
    int best_iteration = 0;
    double best_val_error = 0.0;  // fraction, on the stage's selection landmarks
    std::vector<std::pair<int, double>> val_history;
    std::vector<double> loss_history;
};

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

namespace detail {

/// Epoch-wise shuffled mini-batches of sample indices.
class BatchSampler {
public:
    BatchSampler(std::size_t n, std::size_t batch, std::uint64_t seed) : order_(n), batch_(std::min(batch, n)), rng_(seed) {
        std::iota(order_.begin(), order_.end(), std::size_t{0});
        std::shuffle(order_.begin(), order_.end(), rng_);
    }
    std::vector<std::size_t> next() {
        std::vector<std::size_t> idx;
        idx.reserve(batch_);
        while (idx.size() < batch_) {
            if (pos_ == order_.size()) {
                std::shuffle(order_.begin(), order_.end(), rng_);
                pos_ = 0;
            }
            idx.push_back(order_[pos_++]);
        }
        return idx;
    }

private:
    std::vector<std::size_t> order_;
    std::size_t batch_;
    std::size_t pos_ = 0;
    std::mt19937_64 rng_;
};

/// Mean weighted loss of a batch of predictions and its gradient (B x 2n).
template <typename T>
double batch_loss(const Tensor<T>& pred, const PreparedSet<T>& set, const std::vector<std::size_t>& idx,
                  const WeightVector& u, Tensor<T>& grad) {
    const std::size_t b = idx.size(), cols = pred.dim(1);
    grad = Tensor<T>(Dims{b, cols});
    double total = 0.0;
    std::vector<double> row(cols);
    for (std::size_t r = 0; r < b; ++r) {
        for (std::size_t k = 0; k < cols; ++k) row[k] = static_cast<double>(pred[r * cols + k]);
        const Shape& gt = set.shapes[idx[r]];
        const double d = set.iod[idx[r]];
        total += weighted_loss(row, gt.coords, u.u, d);
        const auto g = loss_gradient(row, gt.coords, u.u, d);
        for (std::size_t k = 0; k < cols; ++k) grad[r * cols + k] = static_cast<T>(g[k] / static_cast<double>(b));
    }
    return total / static_cast<double>(b);
}

template <typename T>
bool any_shared_trainable(const NetworkParams<T>& p) {
    for (const auto& b : p.blocks)
        if (!b.statistic && !p.is_head(b.name) && !b.block.frozen) return true;
    return false;
}

/// Per-sample mean error over `landmarks` averaged over the set.
inline double selection_error(const std::vector<Shape>& preds, const std::vector<Shape>& gts, const std::vector<int>& landmarks) {
    return mean_of(per_sample_errors(preds, gts, landmarks));
}

}  // namespace detail

/// One SGD iteration through the whole network on the batch `idx`. Shared
/// blocks that are frozen are not stepped; BN layers whose scale and shift
/// are frozen run on their running statistics. Returns the batch loss.
template <typename T>
double network_step(NetworkParams<T>& params, std::size_t head, const PreparedSet<T>& set,
                    const std::vector<std::size_t>& idx, const WeightVector& u, const SgdHyper& h, ForwardCache<T>& cache) {
    const Tensor<T> batch = gather_rows(set.images, idx);
    const Tensor<T> feats = forward_train(params, batch, cache);
    ParamBlock<T>& w = params.head(head);
    const Tensor<T> pred = affine_forward(w.value, feats);
    Tensor<T> grad;
    const double loss = detail::batch_loss(pred, set, idx, u, grad);
    if (!std::isfinite(loss)) throw NumericError("loss became non-finite");
    const bool shared = detail::any_shared_trainable(params);
    auto g = affine_backward(grad, w.value, feats, shared);
    w.grad = std::move(g.grad_weights);
    if (shared) backward_shared(params, cache, g.grad_x);
    const std::string head_name = NetworkSpec::head_name(head);
    for (auto& b : params.blocks) {
        if (b.statistic || (params.is_head(b.name) && b.name != head_name)) continue;
        sgd_step(b.block, h, b.name);
    }
    return loss;
}

/// One SGD iteration on a prediction head over fixed features (B x D).
/// With momentum and weight decay zero this is
///   w_k <- w_k - lr * (1/B) sum_b u_j (yhat_k - y_k) / d_b^2 * x_b
/// for the two columns k of every landmark j.
template <typename T>
double head_step(ParamBlock<T>& w, const Tensor<T>& feats, const PreparedSet<T>& set, const std::vector<std::size_t>& idx,
                 const WeightVector& u, const SgdHyper& h) {
    const Tensor<T> f = gather_rows(feats, idx);
    const Tensor<T> pred = affine_forward(w.value, f);
    Tensor<T> grad;
    const double loss = detail::batch_loss(pred, set, idx, u, grad);
    if (!std::isfinite(loss)) throw NumericError("loss became non-finite");
    w.grad = affine_backward(grad, w.value, f, false).grad_weights;
    sgd_step(w, h, "head");
    return loss;
}

/// Trains every non-frozen block of `params` plus head `head` with weights
/// `u`, keeping the checkpoint with the lowest validation error over
/// `select` (0-based landmarks; empty = all). The starting point counts as a
/// checkpoint.
template <typename T>
StageLog train_network_stage(NetworkParams<T>& params, std::size_t head, const PreparedSet<T>& train,
                             const PreparedSet<T>& val, const WeightVector& u, const StageConfig& cfg,
                             std::uint64_t seed, const std::string& stage, std::ostream* log = nullptr,
                             const std::vector<int>& select = {}) {
    cfg.validate(stage);
    if (u.size() != static_cast<std::size_t>(train.pattern.n)) throw ContractError(stage + ": weight vector length mismatch");
    params.reset_momentum();
    StageLog out{stage};
    auto val_error = [&] { return detail::selection_error(predict_set(params, head, val), val.shapes, select); };

    NetworkParams<T> best = params;
    out.best_val_error = val_error();
    out.val_history.push_back({0, out.best_val_error});
    int stale = 0;
    detail::BatchSampler sampler(train.size(), static_cast<std::size_t>(cfg.batch_size), seed);
    ForwardCache<T> cache;
    try {
        for (int it = 0; it < cfg.max_iterations; ++it) {
            const SgdHyper h{cfg.lr_at(it), cfg.momentum, cfg.weight_decay};
            out.loss_history.push_back(network_step(params, head, train, sampler.next(), u, h, cache));
            out.iterations_run = it + 1;
            if ((it + 1) % cfg.validate_every == 0 || it + 1 == cfg.max_iterations) {
                const double e = val_error();
                if (!std::isfinite(e)) throw NumericError("validation error became non-finite");
                out.val_history.push_back({it + 1, e});
                if (log) *log << stage << " iter " << it + 1 << " loss " << out.loss_history.back() << " val " << format_percent(100.0 * e) << "%\n";
                if (e < out.best_val_error) {
                    out.best_val_error = e;
                    out.best_iteration = it + 1;
                    best = params;
                    stale = 0;
                } else if (++stale >= cfg.convergence_patience) {
                    break;
                }
            }
        }
    } catch (const NumericError& e) {
        throw TrainingError(stage, std::string(e.what()) + " at iteration " + std::to_string(out.iterations_run + 1));
    }
    const auto masks = params;  // keep the freeze flags the caller set
    params = std::move(best);
    for (std::size_t k = 0; k < params.blocks.size(); ++k) params.blocks[k].block.frozen = masks.blocks[k].block.frozen;
    params.reset_momentum();
    params.zero_grads();
    return out;
}

/// Trains only `w` on precomputed features, selecting on `select`.
template <typename T>
StageLog train_head_stage(ParamBlock<T>& w, const Tensor<T>& train_feats, const PreparedSet<T>& train,
                          const Tensor<T>& val_feats, const PreparedSet<T>& val, const WeightVector& u,
                          const StageConfig& cfg, std::uint64_t seed, const std::string& stage,
                          std::ostream* log = nullptr, const std::vector<int>& select = {}) {
    cfg.validate(stage);
    w.reset_momentum();
    w.frozen = false;
    StageLog out{stage};
    auto val_error = [&] {
        return detail::selection_error(shapes_from_predictions(affine_forward(w.value, val_feats)), val.shapes, select);
    };
    Tensor<T> best = w.value;
    out.best_val_error = val_error();
    out.val_history.push_back({0, out.best_val_error});
    int stale = 0;
    detail::BatchSampler sampler(train.size(), static_cast<std::size_t>(cfg.batch_size), seed);
    try {
        for (int it = 0; it < cfg.max_iterations; ++it) {
            const SgdHyper h{cfg.lr_at(it), cfg.momentum, cfg.weight_decay};
            out.loss_history.push_back(head_step(w, train_feats, train, sampler.next(), u, h));
            out.iterations_run = it + 1;
            if ((it + 1) % cfg.validate_every == 0 || it + 1 == cfg.max_iterations) {
                const double e = val_error();
                if (!std::isfinite(e)) throw NumericError("validation error became non-finite");
                out.val_history.push_back({it + 1, e});
                if (log) *log << stage << " iter " << it + 1 << " loss " << out.loss_history.back() << " val " << format_percent(100.0 * e) << "%\n";
                if (e < out.best_val_error) {
                    out.best_val_error = e;
                    out.best_iteration = it + 1;
                    best = w.value;
                    stale = 0;
                } else if (++stale >= cfg.convergence_patience) {
                    break;
                }
            }
        }
    } catch (const NumericError& e) {
        throw TrainingError(stage, std::string(e.what()) + " at iteration " + std::to_string(out.iterations_run + 1));
    }
    w.value = std::move(best);
    w.reset_momentum();
    w.zero_grad();
    return out;
}

// ---------------------------------------------------------------------------
// Stages

/// Step 1: all parameters, u_j = 1.
template <typename T>
NetworkParams<T> pretrain_bm(const NetworkSpec& spec, const PreparedSet<T>& train, const PreparedSet<T>& val,
                             const StageConfig& cfg, std::uint64_t seed, std::ostream* log = nullptr,
                             StageLog* stage_log = nullptr) {
    if (train.pattern.n != val.pattern.n || train.pattern.n != spec.n_landmarks) {
        throw ContractError("pretrain: datasets and network must share the labeling pattern");
    }
    NetworkParams<T> params = init_params<T>(spec, derive_seed(seed, 0));
    auto s = train_network_stage(params, 0, train, val, uniform_weights(static_cast<std::size_t>(spec.n_landmarks)), cfg,
                                 derive_seed(seed, 1), "pretrain", log);
    if (stage_log) *stage_log = std::move(s);
    unfreeze_all(params);
    return params;
}

/// Steps 2-3: error-derived weights from BM's validation errors (or `override_weights`),
/// first with the six lowest conv layers frozen, then with everything trainable.
template <typename T>
NetworkParams<T> weighting_finetune(const NetworkParams<T>& bm, const PreparedSet<T>& train, const PreparedSet<T>& val,
                                    const StageConfig& cfg, std::uint64_t seed, std::ostream* log = nullptr,
                                    const std::optional<WeightVector>& override_weights = std::nullopt,
                                    ErrorProfile* eps_b_out = nullptr, std::vector<StageLog>* logs = nullptr) {
    const ErrorProfile eps_b = validation_errors(bm, 0, val);
    if (eps_b_out) *eps_b_out = eps_b;
    const WeightVector u = override_weights ? *override_weights : weights_from_errors(eps_b);
    NetworkParams<T> wm = bm;
    freeze_first_six_conv(wm);
    auto s2 = train_network_stage(wm, 0, train, val, u, cfg, derive_seed(seed, 2), "weighting-step2", log);
    unfreeze_all(wm);
    auto s3 = train_network_stage(wm, 0, train, val, u, cfg, derive_seed(seed, 3), "weighting-step3", log);
    if (logs) {
        logs->push_back(std::move(s2));
        logs->push_back(std::move(s3));
    }
    return wm;
}

/// Steps 4-6 for cluster i: shared layers fixed, head initialized from WM's
/// and trained with the multi-center weights. Features are computed once.
template <typename T>
Tensor<T> multicenter_finetune(const NetworkParams<T>& wm, std::size_t i, const ClusterPartition& partition,
                               const ErrorProfile& eps_w, const Tensor<T>& train_feats, const PreparedSet<T>& train,
                               const Tensor<T>& val_feats, const PreparedSet<T>& val, const StageConfig& cfg,
                               double alpha, std::uint64_t seed, std::ostream* log = nullptr, StageLog* stage_log = nullptr) {
    const WeightVector u = multicenter_weights(i, eps_w, partition, alpha);
    ParamBlock<T> w(wm.head(0).value);
    auto s = train_head_stage(w, train_feats, train, val_feats, val, u, cfg, derive_seed(seed, 10 + i),
                              "multicenter-" + partition.names[i], log, partition.clusters[i]);
    if (stage_log) *stage_log = std::move(s);
    return w.value;
}

template <typename T>
Tensor<T> multicenter_finetune(const NetworkParams<T>& wm, std::size_t i, const PreparedSet<T>& train,
                               const PreparedSet<T>& val, const StageConfig& cfg, double alpha, std::uint64_t seed,
                               std::ostream* log = nullptr) {
    const ClusterPartition cp = clusters_for_pattern(train.pattern);
    const ErrorProfile eps_w = validation_errors(wm, 0, val);
    return multicenter_finetune(wm, i, cp, eps_w, features_of(wm, train.images), train, features_of(wm, val.images), val,
                                cfg, alpha, seed, log);
}

/// Step 7: W^a takes the two columns of landmark j from the head whose
/// cluster owns j.
template <typename T>
Tensor<T> assemble(const std::vector<Tensor<T>>& heads, const ClusterPartition& partition) {
    partition.validate();
    if (heads.size() != partition.size()) {
        throw ContractError("assemble: " + std::to_string(heads.size()) + " heads for " + std::to_string(partition.size()) + " clusters");
    }
    for (const auto& h : heads) {
        if (h.rank() != 2 || h.dims() != heads[0].dims()) throw ShapeError("assemble: heads must share dims");
    }
    const std::size_t rows = heads[0].dim(0), cols = heads[0].dim(1);
    if (cols != 2 * static_cast<std::size_t>(partition.n)) throw ShapeError("assemble: head width does not match 2n");
    Tensor<T> wa = heads[0];
    const auto owner = partition.owner();
    for (std::size_t j = 0; j < owner.size(); ++j) {
        const Tensor<T>& src = heads[static_cast<std::size_t>(owner[j])];
        for (std::size_t r = 0; r < rows; ++r) {
            wa[r * cols + 2 * j] = src[r * cols + 2 * j];
            wa[r * cols + 2 * j + 1] = src[r * cols + 2 * j + 1];
        }
    }
    return wa;
}

// ---------------------------------------------------------------------------
// Full pipeline

struct PipelineConfig {
    NetworkSpec spec = NetworkSpec::for_pattern(5);
    StageConfig pretrain = StageConfig::full_pretrain();
    StageConfig weighting = StageConfig::full_finetune();
    StageConfig multicenter = StageConfig::full_finetune();
    double alpha = default_alpha;
    bool augment = false;
    AugmentParams augment_params;
};

template <typename T>
struct TrainedModels {
    NetworkSpec spec;
    NetworkParams<T> bm;
    NetworkParams<T> wm;
    std::vector<Tensor<T>> heads;
    NetworkParams<T> am;
    ErrorProfile eps_b;
    ErrorProfile eps_w;

    /// WM's shared layers with head i as the only prediction layer.
    NetworkParams<T> head_model(std::size_t i) const {
        NetworkParams<T> p = wm;
        p.set_single_head(heads.at(i));
        return p;
    }
};

template <typename T>
struct PipelineResult {
    TrainedModels<T> models;
    std::vector<ReportRow> report;
    std::vector<StageLog> stages;
};

template <typename T>
PipelineResult<T> run_full_pipeline(const Dataset& train_ds, const Dataset& val_ds, const PipelineConfig& cfg,
                                    std::uint64_t seed, std::ostream* log = nullptr, const std::string& dataset_name = "val") {
    if (train_ds.pattern.n != val_ds.pattern.n) throw ContractError("train and val datasets use different labeling patterns");
    cfg.spec.validate();
    if (cfg.spec.n_landmarks != train_ds.pattern.n) throw ContractError("network spec does not match the dataset pattern");
    cfg.pretrain.validate("pretrain");
    cfg.weighting.validate("weighting");
    cfg.multicenter.validate("multicenter");
    if (!(cfg.alpha > 1.0)) throw ContractError("alpha must be > 1");

    Dataset train_aug = cfg.augment ? augment_dataset(train_ds, cfg.augment_params, derive_seed(seed, 100)) : train_ds;
    const PreparedSet<T> train = prepare_set<T>(train_aug);
    const PreparedSet<T> val = prepare_set<T>(val_ds);
    const ClusterPartition cp = clusters_for_pattern(train_ds.pattern);

    PipelineResult<T> res;
    auto& m = res.models;
    m.spec = cfg.spec;

    StageLog s1;
    m.bm = pretrain_bm(cfg.spec, train, val, cfg.pretrain, seed, log, &s1);
    res.stages.push_back(std::move(s1));
    m.wm = weighting_finetune(m.bm, train, val, cfg.weighting, seed, log, std::nullopt, &m.eps_b, &res.stages);

    m.eps_w = validation_errors(m.wm, 0, val);
    const Tensor<T> train_feats = features_of(m.wm, train.images), val_feats = features_of(m.wm, val.images);
    for (std::size_t i = 0; i < cp.size(); ++i) {
        StageLog s;
        m.heads.push_back(multicenter_finetune(m.wm, i, cp, m.eps_w, train_feats, train, val_feats, val, cfg.multicenter,
                                               cfg.alpha, seed, log, &s));
        res.stages.push_back(std::move(s));
    }
    m.am = m.wm;
    m.am.set_single_head(assemble(m.heads, cp));

    for (const auto& [name, p] : {std::pair<const char*, const NetworkParams<T>*>{"BM", &m.bm}, {"WM", &m.wm}, {"AM", &m.am}}) {
        const EvalReport r = evaluate(*p, 0, val);
        res.report.push_back({name, dataset_name, r.mean_error, r.failure_rate});
    }
    return res;
}

/// Reruns the weighting fine-tune from `bm` with perturbed error-derived weights for
/// every (delta, seed) cell and reports the validation mean error (percent).
template <typename T>
std::vector<PerturbationRow> perturbation_study(const NetworkParams<T>& bm, const PreparedSet<T>& train,
                                                const PreparedSet<T>& val, const StageConfig& cfg,
                                                const std::vector<double>& deltas, const std::vector<std::uint64_t>& seeds,
                                                std::ostream* log = nullptr) {
    const WeightVector base = weights_from_errors(validation_errors(bm, 0, val));
    const double min_u = *std::min_element(base.u.begin(), base.u.end());
    for (double d : deltas) {
        if (!(d >= 0.0) || !std::isfinite(d)) throw ContractError("perturbation delta must be a finite non-negative number");
        if (d > min_u) throw ContractError("perturbation delta " + format_number(d) + " would make a weight negative");
    }
    std::vector<PerturbationRow> rows;
    for (double d : deltas) {
        for (std::uint64_t s : seeds) {
            const WeightVector u = perturb_weights(base, d, s);
            const NetworkParams<T> wm = weighting_finetune(bm, train, val, cfg, s, log, u);
            rows.push_back({d, s, evaluate(wm, 0, val).mean_error});
        }
    }
    return rows;
}

}  // namespace mcl
