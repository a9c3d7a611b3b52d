#pragma once

#include <cmath>
#include <string>

#include "mcl/errors.hpp"
#include "mcl/tensor.hpp"

namespace mcl {

struct SgdHyper {
    double lr = 0.01;
    double momentum = 0.9;
    double weight_decay = 0.0005;
};

/// One SGD update with classical momentum. Weight decay joins the gradient
/// before the momentum buffer:
///   buf   <- momentum * buf + (grad + weight_decay * value)
///   value <- value - lr * buf
/// Frozen blocks are left untouched.
template <typename T>
void sgd_step(ParamBlock<T>& param, double lr, double momentum, double weight_decay, const std::string& name = "") {
    if (param.frozen) return;
    for (std::size_t i = 0; i < param.grad.size(); ++i) {
        if (!std::isfinite(static_cast<double>(param.grad[i]))) {
            throw NumericError("sgd_step: non-finite gradient at element " + std::to_string(i) +
                               (name.empty() ? std::string() : " of block '" + name + "'") + " (value " +
                               std::to_string(static_cast<double>(param.value[i])) + ")");
        }
    }
    const T mu = static_cast<T>(momentum), wd = static_cast<T>(weight_decay), eta = static_cast<T>(lr);
    T* v = param.value.data();
    T* buf = param.momentum_buf.data();
    const T* g = param.grad.data();
    for (std::size_t i = 0; i < param.value.size(); ++i) {
        buf[i] = mu * buf[i] + (g[i] + wd * v[i]);
        v[i] -= eta * buf[i];
    }
}

template <typename T>
void sgd_step(ParamBlock<T>& param, const SgdHyper& h, const std::string& name = "") {
    sgd_step(param, h.lr, h.momentum, h.weight_decay, name);
}

}  // namespace mcl
