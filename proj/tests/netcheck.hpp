#pragma once

// End-to-end finite-difference check of the batch loss through every layer
// of a narrow network.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>

#include "mcl/gradcheck.hpp"
#include "mcl/synth.hpp"
#include "mcl/training.hpp"

namespace mcl::test {

struct NetworkCheck {
    double max_relative_error = 0.0;  // over blocks with a nonzero true gradient
    std::string worst_block;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    // A conv bias feeding a train-mode BN is cancelled by the mean
    // subtraction, so its true gradient is 0 and relative error is noise.
    double max_abs_bias_analytic = 0.0;
    double max_abs_bias_numeric = 0.0;
};

inline NetworkCheck network_gradcheck(std::uint64_t seed, std::size_t batch = 4) {
    const auto ds = synth_generate(pattern_for(5), batch, seed);
    const auto set = prepare_set<double>(ds);
    NetworkSpec spec = NetworkSpec::for_pattern(5);
    spec.widths = {2, 3, 3, 4};
    spec.feature_dim = 3;
    const auto p0 = init_params<double>(spec, seed + 1000);
    std::vector<std::size_t> idx(batch);
    for (std::size_t i = 0; i < batch; ++i) idx[i] = i;
    const auto u = uniform_weights(5);

    auto run = [&](NetworkParams<double>& q, ForwardCache<double>& c, Tensor<double>& g) {
        const auto f = forward_train(q, gather_rows(set.images, idx), c);
        const auto pred = affine_forward(q.head(0).value, f);
        return std::pair{detail::batch_loss(pred, set, idx, u, g), f};
    };

    NetworkParams<double> q = p0;
    ForwardCache<double> cache;
    Tensor<double> g;
    const auto [loss, feats] = run(q, cache, g);
    const auto hg = affine_backward(g, q.head(0).value, feats, true);
    q.head(0).grad = hg.grad_weights;
    backward_shared(q, cache, hg.grad_x);

    NetworkParams<double> probe = p0;
    auto loss_fn = [&] {
        NetworkParams<double> r = probe;
        ForwardCache<double> c;
        Tensor<double> gg;
        return run(r, c, gg).first;
    };

    NetworkCheck out;
    for (auto& b : probe.blocks) {
        if (b.statistic) continue;
        const auto& grad = q.at(b.name).grad;
        const std::vector<double> analytic(grad.data(), grad.data() + grad.size());
        const bool bn_bias = b.name.starts_with("conv") && b.name.ends_with(".b");
        if (bn_bias) {
            for (double a : analytic) out.max_abs_bias_analytic = std::max(out.max_abs_bias_analytic, std::abs(a));
            for (std::size_t k = 0; k < analytic.size(); ++k) {
                const std::array<std::size_t, 1> at{k};
                const auto one = finite_diff_check<double>(loss_fn, b.block.value.values(), analytic, 1e-6, at);
                out.max_abs_bias_numeric = std::max(out.max_abs_bias_numeric, std::abs(one.worst_numeric));
            }
            continue;
        }
        const auto r = finite_diff_check<double>(loss_fn, b.block.value.values(), analytic, 1e-6);
        if (r.max_relative_error > out.max_relative_error) {
            out.max_relative_error = r.max_relative_error;
            out.worst_block = b.name;
            out.worst_analytic = r.worst_analytic;
            out.worst_numeric = r.worst_numeric;
        }
    }
    return out;
}

}  // namespace mcl::test
