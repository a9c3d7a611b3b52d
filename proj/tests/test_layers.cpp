#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "mcl/gradcheck.hpp"
#include "mcl/layers.hpp"
#include "support.hpp"

using namespace mcl;
using test::as_doubles;
using test::random_tensor;
using test::weighted_sum;

namespace {

constexpr int kSeeds = 10;

// Relative error between an analytic gradient and central differences of
// sum(r * layer(theta)) with respect to `theta`.
template <typename T>
double layer_grad_error(Tensor<T>& theta, const std::function<Tensor<T>()>& forward, const Tensor<T>& r,
                        const Tensor<T>& analytic, double eps) {
    auto loss = [&] { return weighted_sum(forward(), r); };
    return finite_diff_check<T>(loss, theta.values(), as_doubles(analytic), eps).max_relative_error;
}

}  // namespace

// --- conv -----------------------------------------------------------------

TEST(Conv, PreservesSpatialSizeWithPadOne) {
    const auto x = random_tensor<double>({50, 50, 1}, 1);
    const auto f = random_tensor<double>({3, 3, 1, 4}, 2);
    const auto y = conv2d_forward(x, f, Tensor<double>(Dims{4}), 1, 1);
    EXPECT_EQ(y.dims(), (Dims{50, 50, 4}));
}

TEST(Conv, IdentityKernel) {
    const auto y = conv2d_forward(Tensor<double>({1, 1, 1}, {5.0}), Tensor<double>({1, 1, 1, 1}, {1.0}),
                                  Tensor<double>({1}, {0.0}), 1, 0);
    ASSERT_EQ(y.size(), 1u);
    EXPECT_EQ(y[0], 5.0);
}

TEST(Conv, HandComputedDiagonalKernel) {
    const Tensor<double> x({2, 2, 1}, {1, 2, 3, 4});
    const Tensor<double> f({2, 2, 1, 1}, {1, 0, 0, 1});
    const auto y = conv2d_forward(x, f, Tensor<double>({1}, {1.0}), 1, 0);
    ASSERT_EQ(y.dims(), (Dims{1, 1, 1}));
    EXPECT_EQ(y[0], 6.0);
}

TEST(Conv, ChannelMismatchIsShapeError) {
    const auto x = random_tensor<double>({4, 4, 2}, 1);
    const auto f = random_tensor<double>({3, 3, 3, 1}, 2);
    EXPECT_THROW(conv2d_forward(x, f, Tensor<double>(Dims{1}), 1, 1), ShapeError);
}

TEST(Conv, ShapesAndValuesMatchNaiveLoopExhaustively) {
    std::uint64_t seed = 0;
    for (std::size_t k = 1; k <= 5; ++k)
        for (std::size_t s = 1; s <= 2; ++s)
            for (std::size_t pad = 0; pad <= 2; ++pad)
                for (std::size_t h = 1; h <= 10; ++h) {
                    const std::size_t w = 11 - h;
                    if (k > h + 2 * pad || k > w + 2 * pad) {
                        EXPECT_THROW(conv2d_forward(random_tensor<double>({h, w, 2}, 1), random_tensor<double>({k, k, 2, 3}, 2),
                                                    Tensor<double>(Dims{3}), s, pad),
                                     Error);
                        continue;
                    }
                    const auto x = random_tensor<double>({h, w, 2}, ++seed);
                    const auto f = random_tensor<double>({k, k, 2, 3}, ++seed);
                    const auto b = random_tensor<double>({3}, ++seed);
                    const auto y = conv2d_forward(x, f, b, s, pad);
                    const auto ref = test::naive_conv(x, f, b, s, pad);
                    ASSERT_EQ(y.dims(), ref.dims()) << "k=" << k << " s=" << s << " pad=" << pad << " h=" << h;
                    EXPECT_EQ(y.dim(0), (h + 2 * pad - k) / s + 1);
                    for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-12);
                }
}

TEST(Conv, BatchedEqualsPerImage) {
    const auto xb = random_tensor<double>({3, 6, 5, 2}, 4);
    const auto f = random_tensor<double>({3, 3, 2, 4}, 5);
    const auto b = random_tensor<double>({4}, 6);
    const auto yb = conv2d_forward(xb, f, b, 1, 1);
    for (std::size_t n = 0; n < 3; ++n) {
        Tensor<double> xi(Dims{6, 5, 2});
        std::copy_n(xb.data() + n * 60, 60, xi.data());
        const auto yi = conv2d_forward(xi, f, b, 1, 1);
        for (std::size_t i = 0; i < yi.size(); ++i) EXPECT_EQ(yb[n * yi.size() + i], yi[i]);
    }
}

TEST(Conv, ZeroUpstreamGivesZeroGradients) {
    const auto x = random_tensor<double>({5, 5, 2}, 1);
    const auto f = random_tensor<double>({3, 3, 2, 3}, 2);
    const auto g = conv2d_backward(Tensor<double>(Dims{5, 5, 3}), x, f, 1, 1);
    for (double v : g.grad_input.values()) EXPECT_EQ(v, 0.0);
    for (double v : g.grad_filters.values()) EXPECT_EQ(v, 0.0);
    for (double v : g.grad_bias.values()) EXPECT_EQ(v, 0.0);
}

TEST(Conv, BiasGradientIsSpatialSum) {
    const auto x = random_tensor<double>({2, 2, 1}, 1);
    const auto f = random_tensor<double>({1, 1, 1, 1}, 2);
    const auto g = conv2d_backward(Tensor<double>(Dims{2, 2, 1}, 1.0), x, f, 1, 0);
    ASSERT_EQ(g.grad_bias.size(), 1u);
    EXPECT_EQ(g.grad_bias[0], 4.0);
}

TEST(Conv, UpstreamShapeMismatch) {
    const auto x = random_tensor<double>({5, 5, 2}, 1);
    const auto f = random_tensor<double>({3, 3, 2, 3}, 2);
    EXPECT_THROW(conv2d_backward(Tensor<double>(Dims{4, 4, 3}), x, f, 1, 1), ShapeError);
}

TEST(Conv, GradientsMatchFiniteDifferences64) {
    for (int seed = 0; seed < kSeeds; ++seed) {
        for (std::size_t stride : {1u, 2u}) {
            auto x = random_tensor<double>({5, 5, 2}, 100 + seed);
            auto f = random_tensor<double>({3, 3, 2, 3}, 200 + seed);
            auto b = random_tensor<double>({3}, 300 + seed);
            auto fwd = [&] { return conv2d_forward(x, f, b, stride, 1); };
            const auto r = random_tensor<double>(fwd().dims(), 400 + seed);
            const auto g = conv2d_backward(r, x, f, stride, 1);
            EXPECT_LT(layer_grad_error<double>(x, fwd, r, g.grad_input, 1e-6), 1e-6);
            EXPECT_LT(layer_grad_error<double>(f, fwd, r, g.grad_filters, 1e-6), 1e-6);
            EXPECT_LT(layer_grad_error<double>(b, fwd, r, g.grad_bias, 1e-6), 1e-6);
        }
    }
}

TEST(Conv, GradientsMatchFiniteDifferences32) {
    for (int seed = 0; seed < kSeeds; ++seed) {
        auto x = random_tensor<float>({5, 5, 2}, 100 + seed);
        auto f = random_tensor<float>({3, 3, 2, 3}, 200 + seed);
        auto b = random_tensor<float>({3}, 300 + seed);
        auto fwd = [&] { return conv2d_forward(x, f, b, 1, 1); };
        const auto r = random_tensor<float>(fwd().dims(), 400 + seed);
        const auto g = conv2d_backward(r, x, f, 1, 1);
        // conv is linear in each argument, so a wide step only shrinks float roundoff
        EXPECT_LT(layer_grad_error<float>(x, fwd, r, g.grad_input, 0.5), 1e-3);
        EXPECT_LT(layer_grad_error<float>(f, fwd, r, g.grad_filters, 0.5), 1e-3);
        EXPECT_LT(layer_grad_error<float>(b, fwd, r, g.grad_bias, 0.5), 1e-3);
    }
}

TEST(Conv, ForwardIsDeterministic) {
    const auto x = random_tensor<float>({2, 12, 12, 3}, 1);
    const auto f = random_tensor<float>({3, 3, 3, 8}, 2);
    const auto b = random_tensor<float>({8}, 3);
    EXPECT_EQ(conv2d_forward(x, f, b, 1, 1), conv2d_forward(x, f, b, 1, 1));
}

// --- max pooling ----------------------------------------------------------

TEST(MaxPool, TwoByTwo) {
    const auto r = maxpool_forward(Tensor<double>({2, 2, 1}, {1, 2, 3, 4}));
    ASSERT_EQ(r.output.dims(), (Dims{1, 1, 1}));
    EXPECT_EQ(r.output[0], 4.0);
}

TEST(MaxPool, ConstantMapHalvesResolution) {
    const auto r = maxpool_forward(Tensor<double>(Dims{6, 4, 2}, 3.5));
    EXPECT_EQ(r.output.dims(), (Dims{3, 2, 2}));
    for (double v : r.output.values()) EXPECT_EQ(v, 3.5);
}

TEST(MaxPool, CeilRoundingChain) {
    Tensor<double> x(Dims{50, 50, 1});
    std::size_t sizes[3];
    for (auto& s : sizes) {
        x = maxpool_forward(x).output;
        s = x.dim(0);
        EXPECT_EQ(x.dim(0), x.dim(1));
    }
    EXPECT_EQ(sizes[0], 25u);
    EXPECT_EQ(sizes[1], 13u);
    EXPECT_EQ(sizes[2], 7u);
}

TEST(MaxPool, RaggedEdgeUsesAvailableCells) {
    const auto r = maxpool_forward(Tensor<double>({3, 3, 1}, {1, 2, 9, 3, 4, 8, 7, 6, 5}));
    ASSERT_EQ(r.output.dims(), (Dims{2, 2, 1}));
    EXPECT_EQ(r.output[0], 4.0);
    EXPECT_EQ(r.output[1], 9.0);
    EXPECT_EQ(r.output[2], 7.0);
    EXPECT_EQ(r.output[3], 5.0);
}

TEST(MaxPool, BackwardRoutesToArgmax) {
    const Tensor<double> x({2, 2, 1}, {1, 2, 3, 4});
    const auto r = maxpool_forward(x);
    const auto g = maxpool_backward(Tensor<double>({1, 1, 1}, {1.0}), r.argmax, x.dims());
    EXPECT_EQ(g, Tensor<double>({2, 2, 1}, {0, 0, 0, 1}));
    const auto z = maxpool_backward(Tensor<double>(Dims{1, 1, 1}), r.argmax, x.dims());
    for (double v : z.values()) EXPECT_EQ(v, 0.0);
}

TEST(MaxPool, BadArgmaxIsError) {
    EXPECT_THROW(maxpool_backward(Tensor<double>({1, 1, 1}, {1.0}), {17}, Dims{2, 2, 1}), Error);
}

TEST(MaxPool, GradientMatchesFiniteDifferences) {
    for (int seed = 0; seed < kSeeds; ++seed) {
        // distinct values keep the argmax stable under the probe step
        auto x = random_tensor<double>({4, 4, 1}, 10 + seed);
        for (std::size_t i = 0; i < x.size(); ++i) x[i] += 0.1 * static_cast<double>(i);
        auto fwd = [&] { return maxpool_forward(x).output; };
        const auto r = random_tensor<double>({2, 2, 1}, 20 + seed);
        const auto g = maxpool_backward(r, maxpool_forward(x).argmax, x.dims());
        EXPECT_LT(layer_grad_error<double>(x, fwd, r, g, 1e-6), 1e-6);
    }
}

// --- batch norm -----------------------------------------------------------

TEST(BatchNorm, ConstantInputGivesBeta) {
    Tensor<double> x(Dims{4, 2}, 3.0), gamma({2}, {2.0, 0.5}), beta({2}, {0.25, -1.0});
    Tensor<double> mean(Dims{2}), var(Dims{2}, 1.0);
    const auto y = batchnorm_forward(x, gamma, beta, mean, var, Mode::train);
    for (std::size_t i = 0; i < 4; ++i) {
        EXPECT_EQ(y[2 * i], 0.25);
        EXPECT_EQ(y[2 * i + 1], -1.0);
    }
}

TEST(BatchNorm, HandNormalizedPair) {
    Tensor<double> x({2, 1}, {-1.0, 1.0}), gamma({1}, {1.0}), beta({1}, {0.0});
    Tensor<double> mean(Dims{1}), var(Dims{1}, 1.0);
    const auto y = batchnorm_forward(x, gamma, beta, mean, var, Mode::train);
    EXPECT_NEAR(y[0], -1.0 / std::sqrt(1.0 + 1e-5), 1e-15);
    EXPECT_NEAR(y[1], 1.0 / std::sqrt(1.0 + 1e-5), 1e-15);
}

TEST(BatchNorm, TrainModeNeedsTwoSamples) {
    Tensor<double> x({1, 2}, {1.0, 2.0}), gamma(Dims{2}, 1.0), beta(Dims{2}), mean(Dims{2}), var(Dims{2}, 1.0);
    EXPECT_THROW(batchnorm_forward(x, gamma, beta, mean, var, Mode::train), ContractError);
    EXPECT_NO_THROW(batchnorm_forward(x, gamma, beta, mean, var, Mode::infer));
}

TEST(BatchNorm, RunningStatisticsMoveTowardBatch) {
    Tensor<double> x({2, 1}, {1.0, 3.0}), gamma({1}, {1.0}), beta({1}, {0.0});
    Tensor<double> mean({1}, {0.0}), var({1}, {1.0});
    batchnorm_forward(x, gamma, beta, mean, var, Mode::train);
    // batch mean 2, unbiased variance 2
    EXPECT_NEAR(mean[0], 0.9 * 0.0 + 0.1 * 2.0, 1e-15);
    EXPECT_NEAR(var[0], 0.9 * 1.0 + 0.1 * 2.0, 1e-15);
}

TEST(BatchNorm, InferModeUsesRunningStatistics) {
    Tensor<double> x({2, 1}, {1.0, 3.0}), gamma({1}, {2.0}), beta({1}, {1.0});
    Tensor<double> mean({1}, {1.0}), var({1}, {4.0});
    const auto y = batchnorm_forward(x, gamma, beta, mean, var, Mode::infer);
    EXPECT_NEAR(y[0], 1.0, 1e-12);
    EXPECT_NEAR(y[1], 2.0 * 2.0 / std::sqrt(4.0 + 1e-5) + 1.0, 1e-12);
    EXPECT_EQ(mean[0], 1.0);
    EXPECT_EQ(var[0], 4.0);
}

TEST(BatchNorm, InferModeIgnoresPoisonedBatchCache) {
    Tensor<double> x({3, 2}, {1, 2, 3, 4, 5, 6}), gamma(Dims{2}, 1.0), beta(Dims{2});
    Tensor<double> mean(Dims{2}), var(Dims{2}, 1.0);
    BatchNormCache<double> cache;
    const double nan = std::numeric_limits<double>::quiet_NaN();
    cache.batch_mean = {nan, nan};
    cache.inv_std = {nan, nan};
    const auto y = batchnorm_forward(x, gamma, beta, mean, var, Mode::infer, &cache);
    for (double v : y.values()) EXPECT_TRUE(std::isfinite(v));
}

TEST(BatchNorm, GradientsMatchFiniteDifferences) {
    for (int seed = 0; seed < kSeeds; ++seed) {
        auto x = random_tensor<double>({4, 3}, 30 + seed);
        auto gamma = random_tensor<double>({3}, 40 + seed, 0.5, 1.5);
        auto beta = random_tensor<double>({3}, 50 + seed);
        const Tensor<double> mean0(Dims{3}), var0(Dims{3}, 1.0);
        auto fwd = [&] {
            Tensor<double> m = mean0, v = var0;
            return batchnorm_forward(x, gamma, beta, m, v, Mode::train);
        };
        const auto r = random_tensor<double>({4, 3}, 60 + seed);
        Tensor<double> m = mean0, v = var0;
        BatchNormCache<double> cache;
        batchnorm_forward(x, gamma, beta, m, v, Mode::train, &cache);
        const auto g = batchnorm_backward(r, cache, gamma);
        EXPECT_LT(layer_grad_error<double>(x, fwd, r, g.grad_input, 1e-6), 1e-6);
        EXPECT_LT(layer_grad_error<double>(gamma, fwd, r, g.grad_gamma, 1e-6), 1e-6);
        EXPECT_LT(layer_grad_error<double>(beta, fwd, r, g.grad_beta, 1e-6), 1e-6);
    }
}

TEST(BatchNorm, ConvMapGradientsMatchFiniteDifferences) {
    for (int seed = 0; seed < kSeeds; ++seed) {
        auto x = random_tensor<double>({2, 3, 3, 2}, 70 + seed);
        auto gamma = random_tensor<double>({2}, 80 + seed, 0.5, 1.5);
        auto beta = random_tensor<double>({2}, 90 + seed);
        auto fwd = [&] {
            Tensor<double> m(Dims{2}), v(Dims{2}, 1.0);
            return batchnorm_forward(x, gamma, beta, m, v, Mode::train);
        };
        const auto r = random_tensor<double>(x.dims(), 95 + seed);
        Tensor<double> m(Dims{2}), v(Dims{2}, 1.0);
        BatchNormCache<double> cache;
        batchnorm_forward(x, gamma, beta, m, v, Mode::train, &cache);
        const auto g = batchnorm_backward(r, cache, gamma);
        EXPECT_LT(layer_grad_error<double>(x, fwd, r, g.grad_input, 1e-6), 1e-6);
    }
}

TEST(BatchNorm, InferModeGradientMatchesFiniteDifferences) {
    for (int seed = 0; seed < kSeeds; ++seed) {
        auto x = random_tensor<double>({4, 3}, 130 + seed);
        auto gamma = random_tensor<double>({3}, 140 + seed, 0.5, 1.5);
        auto beta = random_tensor<double>({3}, 150 + seed);
        const auto mean = random_tensor<double>({3}, 160 + seed);
        const auto var = random_tensor<double>({3}, 170 + seed, 0.5, 2.0);
        auto fwd = [&] {
            Tensor<double> m = mean, v = var;
            return batchnorm_forward(x, gamma, beta, m, v, Mode::infer);
        };
        const auto r = random_tensor<double>({4, 3}, 180 + seed);
        Tensor<double> m = mean, v = var;
        BatchNormCache<double> cache;
        batchnorm_forward(x, gamma, beta, m, v, Mode::infer, &cache);
        const auto g = batchnorm_backward(r, cache, gamma);
        EXPECT_LT(layer_grad_error<double>(x, fwd, r, g.grad_input, 1e-6), 1e-6);
        EXPECT_LT(layer_grad_error<double>(gamma, fwd, r, g.grad_gamma, 1e-6), 1e-6);
    }
}

// --- relu -----------------------------------------------------------------

TEST(Relu, Forward) {
    EXPECT_EQ(relu_forward(Tensor<double>({3}, {-2, 0, 3})), Tensor<double>({3}, {0, 0, 3}));
    const auto pos = random_tensor<double>({5}, 1, 0.1, 2.0);
    EXPECT_EQ(relu_forward(pos), pos);
}

TEST(Relu, SubgradientTieRule) {
    const auto g = relu_backward(Tensor<double>({3}, {1, 1, 1}), Tensor<double>({3}, {-1, 2, 0}));
    EXPECT_EQ(g, Tensor<double>({3}, {0, 1, 0}));
}

TEST(Relu, GradientMatchesFiniteDifferences) {
    for (int seed = 0; seed < kSeeds; ++seed) {
        auto x = random_tensor<double>({3, 4}, 110 + seed);
        for (auto& v : x.values())
            if (std::abs(v) < 0.05) v = 0.1;
        auto fwd = [&] { return relu_forward(x); };
        const auto r = random_tensor<double>({3, 4}, 120 + seed);
        EXPECT_LT(layer_grad_error<double>(x, fwd, r, relu_backward(r, x), 1e-6), 1e-6);
    }
}

// --- global average pooling -----------------------------------------------

TEST(Gap, ConstantAndHandAverage) {
    EXPECT_EQ(global_avg_pool_forward(Tensor<double>(Dims{3, 3, 1}, 7.0))[0], 7.0);
    EXPECT_EQ(global_avg_pool_forward(Tensor<double>({2, 2, 1}, {1, 2, 3, 4}))[0], 2.5);
    EXPECT_EQ(global_avg_pool_forward(Tensor<double>(Dims{7, 7, 16})).dims(), (Dims{16}));
}

TEST(Gap, BackwardConservesGradientMass) {
    for (int seed = 0; seed < kSeeds; ++seed) {
        const auto up = random_tensor<double>({2, 5}, seed);
        const auto g = global_avg_pool_backward(up, Dims{2, 3, 4, 5});
        double sg = 0.0, su = 0.0;
        for (double v : g.values()) sg += v;
        for (double v : up.values()) su += v;
        EXPECT_NEAR(sg, su, 1e-9 * std::max(1.0, std::abs(su)));
    }
}

TEST(Gap, GradientMatchesFiniteDifferences) {
    for (int seed = 0; seed < kSeeds; ++seed) {
        auto x = random_tensor<double>({2, 3, 3, 4}, 210 + seed);
        auto fwd = [&] { return global_avg_pool_forward(x); };
        const auto r = random_tensor<double>({2, 4}, 220 + seed);
        EXPECT_LT(layer_grad_error<double>(x, fwd, r, global_avg_pool_backward(r, x.dims()), 1e-6), 1e-6);
    }
}

// --- prediction layer -----------------------------------------------------

TEST(Linear, ZeroWeights) {
    const auto y = linear_forward(Tensor<double>(Dims{3, 4}), Tensor<double>({3}, {1, 5, 6}));
    for (double v : y.values()) EXPECT_EQ(v, 0.0);
}

TEST(Linear, HandDotProduct) {
    const auto y = linear_forward(Tensor<double>({2, 1}, {3, 4}), Tensor<double>({2}, {1, 2}));
    EXPECT_EQ(y[0], 11.0);
}

TEST(Linear, BiasSlotContract) {
    EXPECT_THROW(linear_forward(Tensor<double>(Dims{2, 1}), Tensor<double>({2}, {0.5, 2})), ContractError);
}

TEST(Linear, WeightGradientIsOuterProduct) {
    const auto x = Tensor<double>({3}, {1.0, -2.0, 0.5});
    const auto g = Tensor<double>({2}, {3.0, 4.0});
    const auto w = random_tensor<double>({3, 2}, 1);
    const auto grads = linear_backward(g, w, x);
    for (std::size_t r = 0; r < 3; ++r)
        for (std::size_t k = 0; k < 2; ++k) EXPECT_EQ(grads.grad_weights.at(r, k), x[r] * g[k]);
}

TEST(Linear, GradientMatchesFiniteDifferences) {
    for (int seed = 0; seed < kSeeds; ++seed) {
        auto w = random_tensor<double>({5, 6}, 230 + seed);
        auto x = random_tensor<double>({5}, 240 + seed);
        x[0] = 1.0;
        auto fwd = [&] { return linear_forward(w, x); };
        const auto r = random_tensor<double>({6}, 250 + seed);
        EXPECT_LT(layer_grad_error<double>(w, fwd, r, linear_backward(r, w, x).grad_weights, 1e-6), 1e-6);
    }
}

TEST(Affine, MatchesLinearPerRow) {
    const auto w = random_tensor<double>({4, 6}, 1);
    const auto f = random_tensor<double>({3, 3}, 2);
    const auto y = affine_forward(w, f);
    for (std::size_t b = 0; b < 3; ++b) {
        Tensor<double> x({4}, {1.0, f.at(b, 0), f.at(b, 1), f.at(b, 2)});
        const auto yl = linear_forward(w, x);
        for (std::size_t k = 0; k < 6; ++k) EXPECT_NEAR(y.at(b, k), yl[k], 1e-14);
    }
}

TEST(Affine, GradientsMatchFiniteDifferences) {
    for (int seed = 0; seed < kSeeds; ++seed) {
        auto w = random_tensor<double>({4, 6}, 260 + seed);
        auto f = random_tensor<double>({3, 3}, 270 + seed);
        auto fwd = [&] { return affine_forward(w, f); };
        const auto r = random_tensor<double>({3, 6}, 280 + seed);
        const auto g = affine_backward(r, w, f);
        EXPECT_LT(layer_grad_error<double>(w, fwd, r, g.grad_weights, 1e-6), 1e-6);
        EXPECT_LT(layer_grad_error<double>(f, fwd, r, g.grad_x, 1e-6), 1e-6);
    }
}
