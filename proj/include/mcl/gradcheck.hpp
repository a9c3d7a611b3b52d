#pragma once

// Central-difference gradient checking.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace mcl {

struct GradCheckResult {
    double max_relative_error = 0.0;
    std::size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    std::size_t checked = 0;
};

inline double relative_error(double a, double b) {
    const double denom = std::max({std::abs(a), std::abs(b), 1e-8});
    return std::abs(a - b) / denom;
}

/// Compares `analytic[i]` with (f(theta + eps e_i) - f(theta - eps e_i)) / 2eps
/// for each i in `indices` (all coordinates when empty). `params` is perturbed
/// in place and restored before returning.
template <typename T>
GradCheckResult finite_diff_check(const std::function<double()>& loss_fn, std::span<T> params,
                                  std::span<const double> analytic, double eps,
                                  std::span<const std::size_t> indices = {}) {
    GradCheckResult r;
    auto check_one = [&](std::size_t i) {
        const T saved = params[i];
        params[i] = static_cast<T>(static_cast<double>(saved) + eps);
        const double up = loss_fn();
        params[i] = static_cast<T>(static_cast<double>(saved) - eps);
        const double down = loss_fn();
        params[i] = saved;
        const double numeric = (up - down) / (2.0 * eps);
        const double err = relative_error(analytic[i], numeric);
        if (err > r.max_relative_error || r.checked == 0) {
            r.max_relative_error = err;
            r.worst_index = i;
            r.worst_analytic = analytic[i];
            r.worst_numeric = numeric;
        }
        ++r.checked;
    };
    if (indices.empty()) {
        for (std::size_t i = 0; i < params.size(); ++i) check_one(i);
    } else {
        for (auto i : indices) check_one(i);
    }
    return r;
}

}  // namespace mcl
