#pragma once

// Weighted alignment loss and the landmark-weight constructions used by the
// training stages.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "mcl/errors.hpp"
#include "mcl/geometry.hpp"

namespace mcl {

inline constexpr double default_alpha = 125.0;

struct WeightVector {
    enum class Kind { uniform, weighting, multicenter, perturbed };

    std::vector<double> u;
    Kind kind = Kind::uniform;
    int cluster = -1;    // multicenter only
    double delta = 0.0;  // perturbed only

    std::size_t size() const noexcept { return u.size(); }
    double sum() const { return std::accumulate(u.begin(), u.end(), 0.0); }
};

/// Mean validation error of each landmark.
struct ErrorProfile {
    std::vector<double> eps;
};

inline WeightVector uniform_weights(std::size_t n) { return {std::vector<double>(n, 1.0), WeightVector::Kind::uniform}; }

namespace detail {

inline void check_loss_args(std::size_t pred_len, std::size_t gt_len, std::size_t n_weights, double d) {
    if (!(d > 0.0)) throw ContractError("weighted loss needs a positive inter-ocular distance");
    if (pred_len != gt_len || gt_len != 2 * n_weights) {
        throw ContractError("weighted loss: mismatched lengths (pred " + std::to_string(pred_len) + ", gt " +
                            std::to_string(gt_len) + ", weights " + std::to_string(n_weights) + ")");
    }
}

}  // namespace detail

/// E = sum_j u_j [(y_2j-1 - yhat_2j-1)^2 + (y_2j - yhat_2j)^2] / (2 d^2)
template <typename Pred>
double weighted_loss(const Pred& pred, const std::vector<double>& gt, const std::vector<double>& u, double d) {
    detail::check_loss_args(pred.size(), gt.size(), u.size(), d);
    double e = 0.0;
    for (std::size_t j = 0; j < u.size(); ++j) {
        const double dx = gt[2 * j] - static_cast<double>(pred[2 * j]);
        const double dy = gt[2 * j + 1] - static_cast<double>(pred[2 * j + 1]);
        e += u[j] * (dx * dx + dy * dy);
    }
    return e / (2.0 * d * d);
}

inline double weighted_loss(const Shape& pred, const Shape& gt, const WeightVector& u, double d) {
    return weighted_loss(pred.coords, gt.coords, u.u, d);
}

/// dE/dyhat_k = u_j (yhat_k - y_k) / d^2 for k in {2j-1, 2j}.
template <typename Pred>
std::vector<double> loss_gradient(const Pred& pred, const std::vector<double>& gt, const std::vector<double>& u, double d) {
    detail::check_loss_args(pred.size(), gt.size(), u.size(), d);
    std::vector<double> g(gt.size());
    const double inv_d2 = 1.0 / (d * d);
    for (std::size_t k = 0; k < gt.size(); ++k) g[k] = u[k / 2] * (static_cast<double>(pred[k]) - gt[k]) * inv_d2;
    return g;
}

inline std::vector<double> loss_gradient(const Shape& pred, const Shape& gt, const WeightVector& u, double d) {
    return loss_gradient(pred.coords, gt.coords, u.u, d);
}

/// u_j = n eps_j / sum eps: challenging landmarks get proportionally larger weight.
inline WeightVector weights_from_errors(const ErrorProfile& profile) {
    const auto& eps = profile.eps;
    const double total = std::accumulate(eps.begin(), eps.end(), 0.0);
    if (eps.empty() || !(total > 0.0) || !std::isfinite(total)) {
        throw ContractError("weights_from_errors: error profile must have a positive finite sum");
    }
    for (double e : eps)
        if (e < 0.0) throw ContractError("weights_from_errors: negative landmark error");
    WeightVector w{std::vector<double>(eps.size()), WeightVector::Kind::weighting};
    const double n = static_cast<double>(eps.size());
    for (std::size_t j = 0; j < eps.size(); ++j) w.u[j] = n * eps[j] / total;
    return w;
}

/// Group-level weights (u_P, u_Q) with u_P = alpha u_Q and u_P |P| + u_Q (n - |P|) = n.
inline std::pair<double, double> group_weights(double alpha, std::size_t cluster_size, std::size_t n) {
    if (!(alpha > 1.0)) throw ContractError("multicenter weights need alpha > 1");
    if (cluster_size == 0 || cluster_size > n) throw ContractError("multicenter weights: invalid cluster size");
    const double nn = static_cast<double>(n);
    const double denom = (alpha - 1.0) * static_cast<double>(cluster_size) + nn;
    return {alpha * nn / denom, nn / denom};
}

/// Landmark weights for fine-tuning head `i`: the cluster's group mass and the
/// complement's group mass are each spread in proportion to the landmark errors.
inline WeightVector multicenter_weights(std::size_t i, const ErrorProfile& profile, const ClusterPartition& partition,
                                        double alpha = default_alpha) {
    const auto& eps = profile.eps;
    const std::size_t n = eps.size();
    if (static_cast<int>(n) != partition.n) throw ContractError("multicenter_weights: profile/partition size mismatch");
    if (i >= partition.size()) throw ContractError("multicenter_weights: cluster index out of range");
    const auto& p = partition.clusters[i];
    const auto q = partition.complement(i);
    const auto [u_p, u_q] = group_weights(alpha, p.size(), n);

    double sum_p = 0.0, sum_q = 0.0;
    for (int j : p) sum_p += eps[static_cast<std::size_t>(j)];
    for (int j : q) sum_q += eps[static_cast<std::size_t>(j)];
    if (!(sum_p > 0.0) || (!q.empty() && !(sum_q > 0.0))) {
        throw ContractError("multicenter_weights: cluster or complement has zero total error");
    }

    WeightVector w{std::vector<double>(n, 0.0), WeightVector::Kind::multicenter, static_cast<int>(i)};
    const double mass_p = u_p * static_cast<double>(p.size());
    const double mass_q = u_q * static_cast<double>(q.size());
    for (int j : p) w.u[static_cast<std::size_t>(j)] = mass_p * eps[static_cast<std::size_t>(j)] / sum_p;
    for (int j : q) w.u[static_cast<std::size_t>(j)] = mass_q * eps[static_cast<std::size_t>(j)] / sum_q;
    return w;
}

/// Adds +delta to floor(n/2) randomly chosen landmarks and -delta to the rest.
inline WeightVector perturb_weights(const WeightVector& w, double delta, std::uint64_t seed) {
    if (delta < 0.0) throw ContractError("perturb_weights: delta must be >= 0");
    const std::size_t n = w.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);

    WeightVector out = w;
    out.kind = WeightVector::Kind::perturbed;
    out.delta = delta;
    for (std::size_t k = 0; k < n; ++k) {
        const std::size_t j = order[k];
        out.u[j] = k < n / 2 ? w.u[j] + delta : w.u[j] - delta;
        if (out.u[j] < 0.0) {
            throw ContractError("perturb_weights: delta " + std::to_string(delta) + " drives weight of landmark " +
                                std::to_string(j + 1) + " below zero");
        }
    }
    return out;
}

}  // namespace mcl
