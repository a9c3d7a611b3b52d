#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "mcl/tensor.hpp"

namespace mcl::test {

template <typename T = double>
Tensor<T> random_tensor(Dims dims, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(lo, hi);
    Tensor<T> t(std::move(dims));
    for (auto& v : t.values()) v = static_cast<T>(dist(rng));
    return t;
}

template <typename T>
double weighted_sum(const Tensor<T>& a, const Tensor<T>& r) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * static_cast<double>(r[i]);
    return s;
}

template <typename T>
std::vector<double> as_doubles(const Tensor<T>& t) {
    return std::vector<double>(t.data(), t.data() + t.size());
}

// Direct seven-loop convolution used as an oracle for the GEMM path.
inline Tensor<double> naive_conv(const Tensor<double>& x, const Tensor<double>& f, const Tensor<double>& b,
                                 std::size_t stride, std::size_t pad) {
    const std::size_t h = x.dim(0), w = x.dim(1), cin = x.dim(2), k = f.dim(0), cout = f.dim(3);
    const std::size_t oh = (h + 2 * pad - k) / stride + 1, ow = (w + 2 * pad - k) / stride + 1;
    Tensor<double> y(Dims{oh, ow, cout});
    for (std::size_t r = 0; r < oh; ++r)
        for (std::size_t c = 0; c < ow; ++c)
            for (std::size_t o = 0; o < cout; ++o) {
                double acc = b[o];
                for (std::size_t i = 0; i < k; ++i)
                    for (std::size_t j = 0; j < k; ++j)
                        for (std::size_t ch = 0; ch < cin; ++ch) {
                            const long ih = static_cast<long>(r * stride + i) - static_cast<long>(pad);
                            const long iw = static_cast<long>(c * stride + j) - static_cast<long>(pad);
                            if (ih < 0 || iw < 0 || ih >= static_cast<long>(h) || iw >= static_cast<long>(w)) continue;
                            acc += x.at(static_cast<std::size_t>(ih), static_cast<std::size_t>(iw), ch) * f.at(i, j, ch, o);
                        }
                y.at(r, c, o) = acc;
            }
    return y;
}

}  // namespace mcl::test
