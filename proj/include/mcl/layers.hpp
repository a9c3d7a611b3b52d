#pragma once

// Forward and backward passes for every layer type of the alignment network.
//
// Activations are channel-last: a single map is H x W x C, a batch is
// B x H x W x C. Filters are k x k x C_in x C_out, so one im2col row of the
// input lines up with one row-major row of the flattened filter bank.

#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include <Eigen/Core>

#include "mcl/errors.hpp"
#include "mcl/tensor.hpp"

namespace mcl {

namespace detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

// Batch view of a rank-3 (single map) or rank-4 (batch of maps) activation.
struct MapDims {
    std::size_t batch, height, width, channels;
};

template <typename T>
MapDims map_dims(const Tensor<T>& t, const char* op) {
    if (t.rank() == 3) return {1, t.dim(0), t.dim(1), t.dim(2)};
    if (t.rank() == 4) return {t.dim(0), t.dim(1), t.dim(2), t.dim(3)};
    throw ShapeError(std::string(op) + ": expected H x W x C or B x H x W x C, got " + dims_to_string(t.dims()));
}

inline Dims make_map_dims(bool batched, std::size_t b, std::size_t h, std::size_t w, std::size_t c) {
    return batched ? Dims{b, h, w, c} : Dims{h, w, c};
}

struct ConvGeometry {
    std::size_t height, width, in_channels;
    std::size_t kernel, stride, pad;
    std::size_t out_height, out_width, out_channels;

    std::size_t patch_size() const { return kernel * kernel * in_channels; }
    std::size_t out_positions() const { return out_height * out_width; }
};

template <typename T>
ConvGeometry conv_geometry(const MapDims& in, const Tensor<T>& filters, const Tensor<T>& bias, std::size_t stride,
                           std::size_t pad) {
    if (filters.rank() != 4 || filters.dim(0) != filters.dim(1)) {
        throw ShapeError("conv2d: filters must be k x k x C_in x C_out, got " + dims_to_string(filters.dims()));
    }
    if (filters.dim(2) != in.channels) {
        throw ShapeError("conv2d: input has " + std::to_string(in.channels) + " channels but filters expect " +
                         std::to_string(filters.dim(2)));
    }
    if (bias.rank() != 1 || bias.dim(0) != filters.dim(3)) {
        throw ShapeError("conv2d: bias must have C_out = " + std::to_string(filters.dim(3)) + " entries");
    }
    if (stride < 1) throw ContractError("conv2d: stride must be >= 1");
    const std::size_t k = filters.dim(0);
    if (k > in.height + 2 * pad || k > in.width + 2 * pad) {
        throw ShapeError("conv2d: kernel larger than padded input");
    }
    ConvGeometry g{in.height, in.width, in.channels, k, stride, pad, 0, 0, filters.dim(3)};
    g.out_height = (in.height + 2 * pad - k) / stride + 1;
    g.out_width = (in.width + 2 * pad - k) / stride + 1;
    return g;
}

template <typename T>
void im2col(const T* image, const ConvGeometry& g, T* col) {
    const std::size_t c = g.in_channels;
    for (std::size_t oh = 0; oh < g.out_height; ++oh) {
        for (std::size_t ow = 0; ow < g.out_width; ++ow) {
            T* row = col + (oh * g.out_width + ow) * g.patch_size();
            for (std::size_t i = 0; i < g.kernel; ++i) {
                const auto ih = static_cast<std::ptrdiff_t>(oh * g.stride + i) - static_cast<std::ptrdiff_t>(g.pad);
                for (std::size_t j = 0; j < g.kernel; ++j) {
                    const auto iw = static_cast<std::ptrdiff_t>(ow * g.stride + j) - static_cast<std::ptrdiff_t>(g.pad);
                    T* dst = row + (i * g.kernel + j) * c;
                    if (ih < 0 || iw < 0 || ih >= static_cast<std::ptrdiff_t>(g.height) ||
                        iw >= static_cast<std::ptrdiff_t>(g.width)) {
                        std::fill(dst, dst + c, T{0});
                    } else {
                        const T* src = image + (static_cast<std::size_t>(ih) * g.width + static_cast<std::size_t>(iw)) * c;
                        std::copy(src, src + c, dst);
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im_add(const T* col, const ConvGeometry& g, T* image) {
    const std::size_t c = g.in_channels;
    for (std::size_t oh = 0; oh < g.out_height; ++oh) {
        for (std::size_t ow = 0; ow < g.out_width; ++ow) {
            const T* row = col + (oh * g.out_width + ow) * g.patch_size();
            for (std::size_t i = 0; i < g.kernel; ++i) {
                const auto ih = static_cast<std::ptrdiff_t>(oh * g.stride + i) - static_cast<std::ptrdiff_t>(g.pad);
                if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.height)) continue;
                for (std::size_t j = 0; j < g.kernel; ++j) {
                    const auto iw = static_cast<std::ptrdiff_t>(ow * g.stride + j) - static_cast<std::ptrdiff_t>(g.pad);
                    if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(g.width)) continue;
                    const T* src = row + (i * g.kernel + j) * c;
                    T* dst = image + (static_cast<std::size_t>(ih) * g.width + static_cast<std::size_t>(iw)) * c;
                    for (std::size_t ch = 0; ch < c; ++ch) dst[ch] += src[ch];
                }
            }
        }
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Convolution

/// 2-D convolution over a single map or a batch of maps.
template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& input, const Tensor<T>& filters, const Tensor<T>& bias, std::size_t stride,
                         std::size_t pad) {
    const auto in = detail::map_dims(input, "conv2d_forward");
    const auto g = detail::conv_geometry(in, filters, bias, stride, pad);
    Tensor<T> out(detail::make_map_dims(input.rank() == 4, in.batch, g.out_height, g.out_width, g.out_channels));

    std::vector<T> col(g.out_positions() * g.patch_size());
    detail::ConstMatMap<T> w(filters.data(), g.patch_size(), g.out_channels);
    Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> b(bias.data(), g.out_channels);
    const std::size_t in_stride = in.height * in.width * in.channels;
    const std::size_t out_stride = g.out_positions() * g.out_channels;
    for (std::size_t n = 0; n < in.batch; ++n) {
        detail::im2col(input.data() + n * in_stride, g, col.data());
        detail::ConstMatMap<T> colm(col.data(), g.out_positions(), g.patch_size());
        detail::MatMap<T> y(out.data() + n * out_stride, g.out_positions(), g.out_channels);
        y.noalias() = colm * w;
        y.rowwise() += b;
    }
    return out;
}

template <typename T>
struct ConvGrads {
    Tensor<T> grad_input;  // left empty when not requested
    Tensor<T> grad_filters;
    Tensor<T> grad_bias;
};

/// Gradients of sum(upstream * conv2d_forward(input, filters, bias)).
template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& upstream, const Tensor<T>& input, const Tensor<T>& filters,
                             std::size_t stride, std::size_t pad, bool need_input_grad = true) {
    const auto in = detail::map_dims(input, "conv2d_backward");
    Tensor<T> bias_shape(Dims{filters.rank() == 4 ? filters.dim(3) : 1});
    const auto g = detail::conv_geometry(in, filters, bias_shape, stride, pad);
    const Dims expected = detail::make_map_dims(input.rank() == 4, in.batch, g.out_height, g.out_width, g.out_channels);
    if (upstream.dims() != expected) {
        throw ShapeError("conv2d_backward: upstream " + dims_to_string(upstream.dims()) + " but output is " +
                         dims_to_string(expected));
    }

    ConvGrads<T> grads{Tensor<T>(), Tensor<T>::zeros_like(filters), Tensor<T>(Dims{g.out_channels})};
    if (need_input_grad) grads.grad_input = Tensor<T>::zeros_like(input);

    std::vector<T> col(g.out_positions() * g.patch_size());
    detail::ConstMatMap<T> w(filters.data(), g.patch_size(), g.out_channels);
    detail::MatMap<T> gw(grads.grad_filters.data(), g.patch_size(), g.out_channels);
    Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> gb(grads.grad_bias.data(), g.out_channels);
    const std::size_t in_stride = in.height * in.width * in.channels;
    const std::size_t out_stride = g.out_positions() * g.out_channels;
    for (std::size_t n = 0; n < in.batch; ++n) {
        detail::ConstMatMap<T> gy(upstream.data() + n * out_stride, g.out_positions(), g.out_channels);
        detail::im2col(input.data() + n * in_stride, g, col.data());
        detail::MatMap<T> colm(col.data(), g.out_positions(), g.patch_size());
        gw.noalias() += colm.transpose() * gy;
        gb += gy.colwise().sum();
        if (need_input_grad) {
            colm.noalias() = gy * w.transpose();
            detail::col2im_add(col.data(), g, grads.grad_input.data() + n * in_stride);
        }
    }
    return grads;
}

// ---------------------------------------------------------------------------
// Max pooling: 2x2 windows, stride 2, ragged edge windows cover what exists.

template <typename T>
struct PoolResult {
    Tensor<T> output;
    std::vector<std::size_t> argmax;  // flat input index per output element
};

template <typename T>
PoolResult<T> maxpool_forward(const Tensor<T>& input) {
    const auto in = detail::map_dims(input, "maxpool_forward");
    const std::size_t oh_n = (in.height + 1) / 2;
    const std::size_t ow_n = (in.width + 1) / 2;
    PoolResult<T> r{Tensor<T>(detail::make_map_dims(input.rank() == 4, in.batch, oh_n, ow_n, in.channels)), {}};
    r.argmax.resize(r.output.size());
    std::size_t o = 0;
    for (std::size_t n = 0; n < in.batch; ++n) {
        const std::size_t base = n * in.height * in.width * in.channels;
        for (std::size_t oh = 0; oh < oh_n; ++oh) {
            for (std::size_t ow = 0; ow < ow_n; ++ow) {
                for (std::size_t c = 0; c < in.channels; ++c, ++o) {
                    std::size_t best = base + ((2 * oh) * in.width + 2 * ow) * in.channels + c;
                    for (std::size_t dh = 0; dh < 2; ++dh) {
                        const std::size_t h = 2 * oh + dh;
                        if (h >= in.height) break;
                        for (std::size_t dw = 0; dw < 2; ++dw) {
                            const std::size_t w = 2 * ow + dw;
                            if (w >= in.width) break;
                            const std::size_t idx = base + (h * in.width + w) * in.channels + c;
                            if (input[idx] > input[best]) best = idx;
                        }
                    }
                    r.output[o] = input[best];
                    r.argmax[o] = best;
                }
            }
        }
    }
    return r;
}

template <typename T>
Tensor<T> maxpool_backward(const Tensor<T>& upstream, const std::vector<std::size_t>& argmax, const Dims& input_dims) {
    if (argmax.size() != upstream.size()) throw ShapeError("maxpool_backward: argmax/upstream size mismatch");
    Tensor<T> grad(input_dims);
    for (std::size_t o = 0; o < argmax.size(); ++o) {
        if (argmax[o] >= grad.size()) throw Error("maxpool_backward: argmax index out of bounds");
        grad[argmax[o]] += upstream[o];
    }
    return grad;
}

// ---------------------------------------------------------------------------
// Batch normalization over the last axis; statistics span every other axis.

enum class Mode { train, infer };

inline constexpr double bn_epsilon = 1e-5;
inline constexpr double bn_running_momentum = 0.9;

template <typename T>
struct BatchNormCache {
    Tensor<T> normalized;  // x_hat
    std::vector<T> inv_std;
    std::vector<T> batch_mean;
    Mode mode = Mode::infer;
};

/// Normalizes `input` per channel. Train mode uses batch statistics and folds
/// them into the running estimates; infer mode reads only the running estimates.
template <typename T>
Tensor<T> batchnorm_forward(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                            Tensor<T>& running_mean, Tensor<T>& running_var, Mode mode,
                            BatchNormCache<T>* cache = nullptr) {
    const std::size_t c = input.dims().back();
    const std::size_t m = input.size() / c;
    for (const Tensor<T>* p : std::initializer_list<const Tensor<T>*>{&gamma, &beta, &running_mean, &running_var}) {
        if (p->size() != c) throw ShapeError("batchnorm: parameter length does not match channel count");
    }
    Tensor<T> out = Tensor<T>::zeros_like(input);
    const T eps = static_cast<T>(bn_epsilon);

    if (mode == Mode::infer) {
        for (std::size_t ch = 0; ch < c; ++ch) {
            const T scale = gamma[ch] / std::sqrt(running_var[ch] + eps);
            const T shift = beta[ch] - running_mean[ch] * scale;
            for (std::size_t i = 0; i < m; ++i) out[i * c + ch] = input[i * c + ch] * scale + shift;
        }
        if (cache) {
            cache->mode = Mode::infer;
            cache->normalized = Tensor<T>::zeros_like(input);
            cache->inv_std.assign(c, T{0});
            for (std::size_t ch = 0; ch < c; ++ch) cache->inv_std[ch] = T{1} / std::sqrt(running_var[ch] + eps);
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t ch = 0; ch < c; ++ch) {
                    cache->normalized[i * c + ch] = (input[i * c + ch] - running_mean[ch]) * cache->inv_std[ch];
                }
            }
        }
        return out;
    }

    if (input.dim(0) < 2) throw ContractError("batchnorm: train mode needs a batch of at least 2");
    std::vector<T> mean(c, T{0}), var(c, T{0});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t ch = 0; ch < c; ++ch) mean[ch] += input[i * c + ch];
    for (auto& v : mean) v /= static_cast<T>(m);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t ch = 0; ch < c; ++ch) {
            const T d = input[i * c + ch] - mean[ch];
            var[ch] += d * d;
        }
    }
    for (auto& v : var) v /= static_cast<T>(m);

    std::vector<T> inv_std(c);
    for (std::size_t ch = 0; ch < c; ++ch) inv_std[ch] = T{1} / std::sqrt(var[ch] + eps);
    Tensor<T> xhat = Tensor<T>::zeros_like(input);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t ch = 0; ch < c; ++ch) {
            const T xh = (input[i * c + ch] - mean[ch]) * inv_std[ch];
            xhat[i * c + ch] = xh;
            out[i * c + ch] = gamma[ch] * xh + beta[ch];
        }
    }

    const T keep = static_cast<T>(bn_running_momentum);
    const T unbias = static_cast<T>(m) / static_cast<T>(m - 1);
    for (std::size_t ch = 0; ch < c; ++ch) {
        running_mean[ch] = keep * running_mean[ch] + (T{1} - keep) * mean[ch];
        running_var[ch] = keep * running_var[ch] + (T{1} - keep) * var[ch] * unbias;
    }
    if (cache) {
        cache->mode = Mode::train;
        cache->normalized = std::move(xhat);
        cache->inv_std = std::move(inv_std);
        cache->batch_mean = std::move(mean);
    }
    return out;
}

template <typename T>
struct BatchNormGrads {
    Tensor<T> grad_input;
    Tensor<T> grad_gamma;
    Tensor<T> grad_beta;
};

template <typename T>
BatchNormGrads<T> batchnorm_backward(const Tensor<T>& upstream, const BatchNormCache<T>& cache, const Tensor<T>& gamma) {
    if (!upstream.same_dims(cache.normalized)) throw ShapeError("batchnorm_backward: upstream shape mismatch");
    const std::size_t c = upstream.dims().back();
    const std::size_t m = upstream.size() / c;
    BatchNormGrads<T> g{Tensor<T>::zeros_like(upstream), Tensor<T>(Dims{c}), Tensor<T>(Dims{c})};
    const Tensor<T>& xhat = cache.normalized;
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t ch = 0; ch < c; ++ch) {
            g.grad_gamma[ch] += upstream[i * c + ch] * xhat[i * c + ch];
            g.grad_beta[ch] += upstream[i * c + ch];
        }
    }
    if (cache.mode == Mode::infer) {
        // Running statistics are constants, so the layer is affine in its input.
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t ch = 0; ch < c; ++ch)
                g.grad_input[i * c + ch] = upstream[i * c + ch] * gamma[ch] * cache.inv_std[ch];
        return g;
    }
    const T inv_m = T{1} / static_cast<T>(m);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t ch = 0; ch < c; ++ch) {
            const T dxhat_sum = gamma[ch] * g.grad_beta[ch];
            const T dxhat_xhat_sum = gamma[ch] * g.grad_gamma[ch];
            const T dxhat = upstream[i * c + ch] * gamma[ch];
            g.grad_input[i * c + ch] =
                inv_m * cache.inv_std[ch] *
                (static_cast<T>(m) * dxhat - dxhat_sum - xhat[i * c + ch] * dxhat_xhat_sum);
        }
    }
    return g;
}

// ---------------------------------------------------------------------------
// ReLU

template <typename T>
Tensor<T> relu_forward(const Tensor<T>& input) {
    Tensor<T> out = input;
    for (auto& v : out.values()) v = v > T{0} ? v : T{0};
    return out;
}

// Gradient at exactly zero is zero.
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& upstream, const Tensor<T>& input) {
    if (!upstream.same_dims(input)) throw ShapeError("relu_backward: shape mismatch");
    Tensor<T> g = upstream;
    for (std::size_t i = 0; i < g.size(); ++i)
        if (!(input[i] > T{0})) g[i] = T{0};
    return g;
}

// ---------------------------------------------------------------------------
// Global average pooling: H x W x C -> C (or B x H x W x C -> B x C).

template <typename T>
Tensor<T> global_avg_pool_forward(const Tensor<T>& input) {
    const auto in = detail::map_dims(input, "global_avg_pool");
    Tensor<T> out(input.rank() == 4 ? Dims{in.batch, in.channels} : Dims{in.channels});
    const std::size_t hw = in.height * in.width;
    for (std::size_t n = 0; n < in.batch; ++n) {
        for (std::size_t p = 0; p < hw; ++p) {
            const T* src = input.data() + (n * hw + p) * in.channels;
            for (std::size_t ch = 0; ch < in.channels; ++ch) out[n * in.channels + ch] += src[ch];
        }
    }
    for (auto& v : out.values()) v /= static_cast<T>(hw);
    return out;
}

template <typename T>
Tensor<T> global_avg_pool_backward(const Tensor<T>& upstream, const Dims& input_dims) {
    Tensor<T> grad(input_dims);
    const auto in = detail::map_dims(grad, "global_avg_pool_backward");
    if (upstream.size() != in.batch * in.channels) throw ShapeError("global_avg_pool_backward: upstream shape mismatch");
    const std::size_t hw = in.height * in.width;
    const T scale = T{1} / static_cast<T>(hw);
    for (std::size_t n = 0; n < in.batch; ++n) {
        for (std::size_t p = 0; p < hw; ++p) {
            T* dst = grad.data() + (n * hw + p) * in.channels;
            for (std::size_t ch = 0; ch < in.channels; ++ch) dst[ch] = upstream[n * in.channels + ch] * scale;
        }
    }
    return grad;
}

// ---------------------------------------------------------------------------
// Shape prediction layer. Weights are (D+1) x 2n; row 0 multiplies the bias
// slot x[0] = 1 and rows 1..D the pooled features.

/// y = W^T x for a feature vector whose first entry is the bias slot.
template <typename T>
Tensor<T> linear_forward(const Tensor<T>& weights, const Tensor<T>& x) {
    if (weights.rank() != 2 || x.rank() != 1 || x.dim(0) != weights.dim(0)) {
        throw ShapeError("linear_forward: weights " + dims_to_string(weights.dims()) + " vs x " +
                         dims_to_string(x.dims()));
    }
    if (x[0] != T{1}) throw ContractError("linear_forward: bias slot x[0] must equal 1");
    const std::size_t rows = weights.dim(0), cols = weights.dim(1);
    Tensor<T> y(Dims{cols});
    detail::ConstMatMap<T> w(weights.data(), rows, cols);
    Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> xv(x.data(), rows);
    Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> yv(y.data(), cols);
    yv.noalias() = xv * w;
    return y;
}

template <typename T>
struct LinearGrads {
    Tensor<T> grad_weights;
    Tensor<T> grad_x;
};

template <typename T>
LinearGrads<T> linear_backward(const Tensor<T>& upstream, const Tensor<T>& weights, const Tensor<T>& x) {
    if (upstream.size() != weights.dim(1) || x.size() != weights.dim(0)) throw ShapeError("linear_backward: shape mismatch");
    const std::size_t rows = weights.dim(0), cols = weights.dim(1);
    LinearGrads<T> g{Tensor<T>::zeros_like(weights), Tensor<T>(Dims{rows})};
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t k = 0; k < cols; ++k) g.grad_weights[r * cols + k] = x[r] * upstream[k];
    detail::ConstMatMap<T> w(weights.data(), rows, cols);
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> gy(upstream.data(), cols);
    Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> gx(g.grad_x.data(), rows);
    gx.noalias() = w * gy;
    return g;
}

/// Batched prediction from pooled features (B x D, no bias slot): B x 2n.
template <typename T>
Tensor<T> affine_forward(const Tensor<T>& weights, const Tensor<T>& features) {
    if (weights.rank() != 2 || features.rank() != 2 || features.dim(1) + 1 != weights.dim(0)) {
        throw ShapeError("affine_forward: weights " + dims_to_string(weights.dims()) + " vs features " +
                         dims_to_string(features.dims()));
    }
    const std::size_t b = features.dim(0), d = features.dim(1), cols = weights.dim(1);
    Tensor<T> y(Dims{b, cols});
    detail::ConstMatMap<T> w(weights.data(), d + 1, cols);
    detail::ConstMatMap<T> f(features.data(), b, d);
    detail::MatMap<T> out(y.data(), b, cols);
    out.noalias() = f * w.bottomRows(d);
    out.rowwise() += w.row(0);
    return y;
}

/// Gradients of sum(upstream * affine_forward(weights, features)).
template <typename T>
LinearGrads<T> affine_backward(const Tensor<T>& upstream, const Tensor<T>& weights, const Tensor<T>& features,
                               bool need_feature_grad = true) {
    const std::size_t b = features.dim(0), d = features.dim(1), cols = weights.dim(1);
    if (upstream.dims() != Dims{b, cols}) throw ShapeError("affine_backward: upstream shape mismatch");
    LinearGrads<T> g{Tensor<T>::zeros_like(weights), Tensor<T>()};
    detail::ConstMatMap<T> w(weights.data(), d + 1, cols);
    detail::ConstMatMap<T> f(features.data(), b, d);
    detail::ConstMatMap<T> gy(upstream.data(), b, cols);
    detail::MatMap<T> gw(g.grad_weights.data(), d + 1, cols);
    gw.row(0) = gy.colwise().sum();
    gw.bottomRows(d).noalias() = f.transpose() * gy;
    if (need_feature_grad) {
        g.grad_x = Tensor<T>(Dims{b, d});
        detail::MatMap<T> gf(g.grad_x.data(), b, d);
        gf.noalias() = gy * w.bottomRows(d).transpose();
    }
    return g;
}

}  // namespace mcl
