#pragma once

// The fixed alignment network: four convolutional stacks (2, 2, 2 and 3
// convolutions, each followed by batch normalization and ReLU), max pooling
// after the first three stacks, global average pooling over the last
// D-channel map, and one or more linear shape prediction heads.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <set>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "mcl/errors.hpp"
#include "mcl/geometry.hpp"
#include "mcl/layers.hpp"
#include "mcl/tensor.hpp"

namespace mcl {

inline constexpr std::size_t patch_size = 50;
inline constexpr std::size_t conv_units = 9;
inline constexpr std::size_t kernel_size = 3;

/// Feature dimensionality by labeling pattern: 512 / 512 / 1024 for 5 / 29 / 68.
inline int default_feature_dim(int n_landmarks) {
    pattern_for(n_landmarks);
    return n_landmarks == 68 ? 1024 : 512;
}

struct LayerDesc {
    enum class Kind { conv, batchnorm, relu, maxpool, global_avg_pool, linear };
    Kind kind;
    std::string name;
    int in_channels = 0;
    int out_channels = 0;
};

struct NetworkSpec {
    int n_landmarks = 5;
    int feature_dim = 512;
    std::array<int, 4> widths{32, 64, 128, 128};  // channels of the four stacks

    static NetworkSpec for_pattern(int n_landmarks) {
        return NetworkSpec{n_landmarks, default_feature_dim(n_landmarks), {32, 64, 128, 128}};
    }

    LabelingPattern pattern() const { return pattern_for(n_landmarks); }
    int outputs() const { return 2 * n_landmarks; }

    /// Input/output channels of conv unit u (0..8).
    std::pair<int, int> conv_channels(std::size_t u) const {
        static constexpr std::array<int, conv_units> stack{0, 0, 1, 1, 2, 2, 3, 3, 3};
        const int out = u == conv_units - 1 ? feature_dim : widths[static_cast<std::size_t>(stack[u])];
        const int in = u == 0 ? 1 : (u == conv_units - 1 ? widths[3] : conv_channels(u - 1).second);
        return {in, out};
    }

    std::vector<LayerDesc> layer_plan() const {
        using K = LayerDesc::Kind;
        std::vector<LayerDesc> plan;
        for (std::size_t u = 0; u < conv_units; ++u) {
            const auto [in, out] = conv_channels(u);
            plan.push_back({K::conv, conv_name(u), in, out});
            plan.push_back({K::batchnorm, bn_name(u), out, out});
            plan.push_back({K::relu, "relu" + unit_suffix(u), out, out});
            if (u == 1 || u == 3 || u == 5) plan.push_back({K::maxpool, "pool" + std::to_string(u / 2 + 1), out, out});
        }
        plan.push_back({K::global_avg_pool, "gap", feature_dim, feature_dim});
        plan.push_back({K::linear, "head", feature_dim + 1, outputs()});
        return plan;
    }

    void validate() const {
        pattern_for(n_landmarks);
        if (feature_dim < 1) throw ContractError("feature dimension must be >= 1");
        for (int w : widths)
            if (w < 1) throw ContractError("channel widths must be >= 1");
    }

    static std::string unit_suffix(std::size_t u) {
        static constexpr std::array<int, conv_units> stack{1, 1, 2, 2, 3, 3, 4, 4, 4};
        static constexpr std::array<int, conv_units> pos{1, 2, 1, 2, 1, 2, 1, 2, 3};
        return std::to_string(stack[u]) + "_" + std::to_string(pos[u]);
    }
    static std::string conv_name(std::size_t u) { return "conv" + unit_suffix(u); }
    static std::string bn_name(std::size_t u) { return "bn" + unit_suffix(u); }
    static std::string head_name(std::size_t i) { return "head." + std::to_string(i) + ".W"; }

    friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;
};

template <typename T>
struct NamedBlock {
    std::string name;
    ParamBlock<T> block;
    bool statistic = false;  // BN running mean/variance: saved, never stepped

    friend bool operator==(const NamedBlock& a, const NamedBlock& b) {
        return a.name == b.name && a.statistic == b.statistic && a.block.value == b.block.value &&
               a.block.frozen == b.block.frozen;
    }
};

using FreezeMask = std::set<std::string>;

template <typename T>
class NetworkParams {
public:
    std::vector<NamedBlock<T>> blocks;

    ParamBlock<T>& at(const std::string& name) { return find_entry(name).block; }
    const ParamBlock<T>& at(const std::string& name) const {
        return const_cast<NetworkParams*>(this)->find_entry(name).block;
    }
    bool contains(const std::string& name) const {
        return std::any_of(blocks.begin(), blocks.end(), [&](const auto& b) { return b.name == name; });
    }

    ParamBlock<T>& conv_w(std::size_t u) { return at(NetworkSpec::conv_name(u) + ".W"); }
    ParamBlock<T>& conv_b(std::size_t u) { return at(NetworkSpec::conv_name(u) + ".b"); }
    ParamBlock<T>& bn(std::size_t u, const char* part) { return at(NetworkSpec::bn_name(u) + "." + part); }
    const ParamBlock<T>& conv_w(std::size_t u) const { return at(NetworkSpec::conv_name(u) + ".W"); }
    const ParamBlock<T>& conv_b(std::size_t u) const { return at(NetworkSpec::conv_name(u) + ".b"); }
    const ParamBlock<T>& bn(std::size_t u, const char* part) const { return at(NetworkSpec::bn_name(u) + "." + part); }

    std::size_t head_count() const {
        std::size_t k = 0;
        while (contains(NetworkSpec::head_name(k))) ++k;
        return k;
    }
    ParamBlock<T>& head(std::size_t i) { return at(NetworkSpec::head_name(i)); }
    const ParamBlock<T>& head(std::size_t i) const {
        if (!contains(NetworkSpec::head_name(i))) throw ContractError("no prediction head " + std::to_string(i));
        return at(NetworkSpec::head_name(i));
    }

    /// Appends a prediction head and returns its index.
    std::size_t add_head(Tensor<T> w) {
        const std::size_t i = head_count();
        blocks.push_back({NetworkSpec::head_name(i), ParamBlock<T>(std::move(w)), false});
        return i;
    }

    /// Removes every head, then installs `w` as head 0.
    void set_single_head(Tensor<T> w) {
        std::erase_if(blocks, [](const auto& b) { return b.name.rfind("head.", 0) == 0; });
        add_head(std::move(w));
    }

    bool is_head(const std::string& name) const { return name.rfind("head.", 0) == 0; }

    void zero_grads() {
        for (auto& b : blocks) b.block.zero_grad();
    }
    void reset_momentum() {
        for (auto& b : blocks) b.block.reset_momentum();
    }

    friend bool operator==(const NetworkParams&, const NetworkParams&) = default;

private:
    NamedBlock<T>& find_entry(const std::string& name) {
        for (auto& b : blocks)
            if (b.name == name) return b;
        throw ContractError("no parameter block named '" + name + "'");
    }
};

template <typename T>
struct Network {
    NetworkSpec spec;
    NetworkParams<T> params;
};

namespace detail {

template <typename T>
Tensor<T> uniform_tensor(Dims dims, double bound, std::mt19937_64& rng) {
    Tensor<T> t(std::move(dims));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (auto& v : t.values()) v = static_cast<T>(dist(rng));
    return t;
}

}  // namespace detail

/// Fresh head: (D+1) x 2n, weights uniform in +-1/sqrt(D+1), bias row zero.
template <typename T>
Tensor<T> init_head(const NetworkSpec& spec, std::mt19937_64& rng) {
    const auto rows = static_cast<std::size_t>(spec.feature_dim + 1);
    Tensor<T> w = detail::uniform_tensor<T>({rows, static_cast<std::size_t>(spec.outputs())},
                                            1.0 / std::sqrt(static_cast<double>(rows)), rng);
    for (std::size_t k = 0; k < w.dim(1); ++k) w.at(0, k) = T{0};
    return w;
}

/// Builds parameters for `spec` deterministically from `seed`: conv and
/// linear weights uniform in +-1/sqrt(fan_in), biases zero, BN gamma 1,
/// beta 0, running mean 0, running variance 1, one prediction head.
template <typename T>
NetworkParams<T> init_params(const NetworkSpec& spec, std::uint64_t seed) {
    spec.validate();
    std::mt19937_64 rng(seed);
    NetworkParams<T> p;
    for (std::size_t u = 0; u < conv_units; ++u) {
        const auto [in, out] = spec.conv_channels(u);
        const auto cin = static_cast<std::size_t>(in), cout = static_cast<std::size_t>(out);
        const double fan_in = static_cast<double>(kernel_size * kernel_size * cin);
        const std::string conv = NetworkSpec::conv_name(u), bn = NetworkSpec::bn_name(u);
        p.blocks.push_back({conv + ".W",
                            ParamBlock<T>(detail::uniform_tensor<T>({kernel_size, kernel_size, cin, cout},
                                                                    1.0 / std::sqrt(fan_in), rng)),
                            false});
        p.blocks.push_back({conv + ".b", ParamBlock<T>(Tensor<T>(Dims{cout})), false});
        p.blocks.push_back({bn + ".gamma", ParamBlock<T>(Tensor<T>(Dims{cout}, T{1})), false});
        p.blocks.push_back({bn + ".beta", ParamBlock<T>(Tensor<T>(Dims{cout})), false});
        p.blocks.push_back({bn + ".mean", ParamBlock<T>(Tensor<T>(Dims{cout})), true});
        p.blocks.push_back({bn + ".var", ParamBlock<T>(Tensor<T>(Dims{cout}, T{1})), true});
    }
    p.add_head(init_head<T>(spec, rng));
    return p;
}

template <typename T>
Network<T> build_network(const NetworkSpec& spec, std::uint64_t seed) {
    return {spec, init_params<T>(spec, seed)};
}

template <typename T>
Network<T> build_network(const LabelingPattern& pattern, std::uint64_t seed) {
    return build_network<T>(NetworkSpec::for_pattern(pattern.n), seed);
}

// ---------------------------------------------------------------------------
// Forward / backward

template <typename T>
struct ForwardCache {
    std::array<Tensor<T>, conv_units> conv_input;
    std::array<BatchNormCache<T>, conv_units> bn;
    std::array<Tensor<T>, conv_units> relu_out;
    std::array<std::vector<std::size_t>, 3> pool_argmax;
    std::array<Dims, 3> pool_input_dims;
    Tensor<T> features;  // B x D
};

namespace detail {

inline bool ends_pooled_stack(std::size_t u) { return u == 1 || u == 3 || u == 5; }

template <typename T>
bool bn_frozen(const NetworkParams<T>& p, std::size_t u) {
    return p.bn(u, "gamma").frozen && p.bn(u, "beta").frozen;
}

template <typename T>
bool unit_frozen(const NetworkParams<T>& p, std::size_t u) {
    return p.conv_w(u).frozen && p.conv_b(u).frozen && bn_frozen(p, u);
}

template <typename T>
Tensor<T> batchnorm_infer(const Tensor<T>& input, const NetworkParams<T>& p, std::size_t u, BatchNormCache<T>* cache) {
    Tensor<T> mean = p.bn(u, "mean").value, var = p.bn(u, "var").value;
    return batchnorm_forward(input, p.bn(u, "gamma").value, p.bn(u, "beta").value, mean, var, Mode::infer, cache);
}

// Shared-layer pass. In train mode BN layers whose scale and shift are frozen
// run on running statistics; the others use batch statistics and update them.
template <typename T, typename Params>
Tensor<T> shared_forward(Params& p, const Tensor<T>& images, Mode mode, ForwardCache<T>* cache) {
    if (images.rank() != 4 || images.dim(1) != patch_size || images.dim(2) != patch_size || images.dim(3) != 1) {
        throw ShapeError("network input must be B x 50 x 50 x 1, got " + dims_to_string(images.dims()));
    }
    Tensor<T> x = images;
    for (std::size_t u = 0; u < conv_units; ++u) {
        if (cache) cache->conv_input[u] = x;
        Tensor<T> z = conv2d_forward(x, p.conv_w(u).value, p.conv_b(u).value, 1, 1);
        BatchNormCache<T>* bc = cache ? &cache->bn[u] : nullptr;
        if constexpr (std::is_const_v<Params>) {
            z = batchnorm_infer(z, p, u, bc);
        } else {
            if (mode == Mode::train && !bn_frozen(p, u)) {
                z = batchnorm_forward(z, p.bn(u, "gamma").value, p.bn(u, "beta").value, p.bn(u, "mean").value,
                                      p.bn(u, "var").value, Mode::train, bc);
            } else {
                z = batchnorm_infer(z, std::as_const(p), u, bc);
            }
        }
        x = relu_forward(z);
        if (cache) cache->relu_out[u] = x;
        if (ends_pooled_stack(u)) {
            const std::size_t k = u / 2;
            if (cache) cache->pool_input_dims[k] = x.dims();
            auto pooled = maxpool_forward(x);
            if (cache) cache->pool_argmax[k] = std::move(pooled.argmax);
            x = std::move(pooled.output);
        }
    }
    Tensor<T> feats = global_avg_pool_forward(x);
    if (cache) cache->features = feats;
    return feats;
}

}  // namespace detail

/// Shared layers in train mode (batch statistics, running-stat updates). Returns B x D.
template <typename T>
Tensor<T> forward_train(NetworkParams<T>& params, const Tensor<T>& images, ForwardCache<T>& cache) {
    return detail::shared_forward<T>(params, images, Mode::train, &cache);
}

/// Shared layers in inference mode; never reads batch statistics. Returns B x D.
template <typename T>
Tensor<T> forward_infer(const NetworkParams<T>& params, const Tensor<T>& images, ForwardCache<T>* cache = nullptr) {
    return detail::shared_forward<T>(params, images, Mode::infer, cache);
}

/// Backpropagates d(loss)/d(features) (B x D) into the gradients of every
/// shared block. Propagation stops below the lowest conv unit that still has
/// a trainable block; gradients are overwritten, not accumulated.
template <typename T>
void backward_shared(NetworkParams<T>& params, const ForwardCache<T>& cache, const Tensor<T>& grad_features) {
    std::size_t lowest = conv_units;
    for (std::size_t u = 0; u < conv_units; ++u) {
        if (!detail::unit_frozen(params, u)) {
            lowest = u;
            break;
        }
    }
    if (lowest == conv_units) return;

    Tensor<T> g = global_avg_pool_backward(grad_features, cache.relu_out[conv_units - 1].dims());
    for (std::size_t u = conv_units; u-- > lowest;) {
        g = relu_backward(g, cache.relu_out[u]);
        auto bg = batchnorm_backward(g, cache.bn[u], params.bn(u, "gamma").value);
        params.bn(u, "gamma").grad = std::move(bg.grad_gamma);
        params.bn(u, "beta").grad = std::move(bg.grad_beta);
        auto cg = conv2d_backward(bg.grad_input, cache.conv_input[u], params.conv_w(u).value, 1, 1, u > lowest);
        params.conv_w(u).grad = std::move(cg.grad_filters);
        params.conv_b(u).grad = std::move(cg.grad_bias);
        if (u == lowest) break;
        g = std::move(cg.grad_input);
        if (detail::ends_pooled_stack(u - 1)) {
            const std::size_t k = (u - 1) / 2;
            g = maxpool_backward(g, cache.pool_argmax[k], cache.pool_input_dims[k]);
        }
    }
}

/// Batched shape prediction from pooled features: B x 2n.
template <typename T>
Tensor<T> predict_batch(const NetworkParams<T>& params, std::size_t head, const Tensor<T>& features) {
    return affine_forward(params.head(head).value, features);
}

/// x = (1, GAP features): the (D+1)-vector that feeds every prediction head.
template <typename T>
Tensor<T> extract_features(const NetworkParams<T>& params, const Tensor<T>& image) {
    if (image.rank() != 3 || image.dim(0) != patch_size || image.dim(1) != patch_size || image.dim(2) != 1) {
        throw ShapeError("extract_features: expected a 50 x 50 x 1 image, got " + dims_to_string(image.dims()));
    }
    const Tensor<T> feats = forward_infer(params, image.reshaped({1, patch_size, patch_size, 1}));
    Tensor<T> x(Dims{feats.size() + 1});
    x[0] = T{1};
    std::copy(feats.data(), feats.data() + feats.size(), x.data() + 1);
    return x;
}

template <typename T>
Shape predict_shape(const NetworkParams<T>& params, std::size_t head, const Tensor<T>& x) {
    const Tensor<T> y = linear_forward(params.head(head).value, x);
    Shape s(y.size() / 2);
    for (std::size_t k = 0; k < y.size(); ++k) s.coords[k] = static_cast<double>(y[k]);
    return s;
}

// ---------------------------------------------------------------------------
// Parameter accounting

enum class Segment {
    all,           // every learnable scalar (running statistics excluded), all heads
    feature_head,  // last conv with its BN, counting BN mean and variance like the original accounting
};

template <typename T>
std::size_t count_params(const NetworkParams<T>& params, Segment segment) {
    std::size_t total = 0;
    if (segment == Segment::all) {
        for (const auto& b : params.blocks)
            if (!b.statistic) total += b.block.value.size();
        return total;
    }
    const std::size_t u = conv_units - 1;
    total += params.conv_w(u).value.size() + params.conv_b(u).value.size();
    for (const char* part : {"mean", "var", "gamma", "beta"}) total += params.bn(u, part).value.size();
    return total;
}

// ---------------------------------------------------------------------------
// Freeze masks

template <typename T>
void apply_mask(NetworkParams<T>& params, const FreezeMask& mask) {
    for (const auto& name : mask)
        if (!params.contains(name)) throw ContractError("freeze mask names unknown block '" + name + "'");
    for (auto& b : params.blocks) b.block.frozen = mask.count(b.name) > 0;
}

template <typename T>
void unfreeze_all(NetworkParams<T>& params) {
    apply_mask(params, {});
}

/// Freezes the six conv layers of the first three stacks together with their
/// BN parameters and statistics.
template <typename T>
FreezeMask freeze_first_six_conv(NetworkParams<T>& params) {
    FreezeMask mask;
    for (std::size_t u = 0; u < 6; ++u) {
        mask.insert(NetworkSpec::conv_name(u) + ".W");
        mask.insert(NetworkSpec::conv_name(u) + ".b");
        for (const char* part : {"gamma", "beta", "mean", "var"}) mask.insert(NetworkSpec::bn_name(u) + "." + part);
    }
    apply_mask(params, mask);
    return mask;
}

/// Freezes everything except prediction head `active_head`.
template <typename T>
FreezeMask freeze_shared(NetworkParams<T>& params, std::size_t active_head = 0) {
    const std::string keep = NetworkSpec::head_name(active_head);
    if (!params.contains(keep)) throw ContractError("no prediction head " + std::to_string(active_head));
    FreezeMask mask;
    for (const auto& b : params.blocks)
        if (b.name != keep) mask.insert(b.name);
    apply_mask(params, mask);
    return mask;
}

/// Names of the shared (non-head) blocks.
template <typename T>
std::vector<std::string> shared_block_names(const NetworkParams<T>& params) {
    std::vector<std::string> names;
    for (const auto& b : params.blocks)
        if (!params.is_head(b.name)) names.push_back(b.name);
    return names;
}

}  // namespace mcl
