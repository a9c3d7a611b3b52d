#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "mcl/errors.hpp"

namespace mcl {

// Element type of the default build. Configure with -DMCL_DOUBLE to get 64-bit.
#ifdef MCL_DOUBLE
using real = double;
#else
using real = float;
#endif

using Dims = std::vector<std::size_t>;

inline std::string dims_to_string(const Dims& dims) {
    std::string s = "[";
    for (std::size_t i = 0; i < dims.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(dims[i]);
    }
    return s + "]";
}

inline std::size_t dims_product(const Dims& dims) {
    return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>());
}

/// Dense row-major tensor. Extents are all >= 1 and the element count always
/// equals the product of the extents.
template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;

    explicit Tensor(Dims dims, T fill = T{0}) : dims_(std::move(dims)) {
        check_dims(dims_);
        data_.assign(dims_product(dims_), fill);
    }

    Tensor(Dims dims, std::vector<T> values) : dims_(std::move(dims)), data_(std::move(values)) {
        check_dims(dims_);
        if (data_.size() != dims_product(dims_)) {
            throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                             " does not match dims " + dims_to_string(dims_));
        }
    }

    Tensor(std::initializer_list<std::size_t> dims, std::initializer_list<T> values)
        : Tensor(Dims(dims), std::vector<T>(values)) {}

    static Tensor zeros_like(const Tensor& other) { return Tensor(other.dims_); }

    const Dims& dims() const noexcept { return dims_; }
    std::size_t dim(std::size_t axis) const { return dims_.at(axis); }
    std::size_t rank() const noexcept { return dims_.size(); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    T* data() noexcept { return data_.data(); }
    const T* data() const noexcept { return data_.data(); }
    std::span<T> values() noexcept { return data_; }
    std::span<const T> values() const noexcept { return data_; }

    T& operator[](std::size_t i) noexcept { return data_[i]; }
    const T& operator[](std::size_t i) const noexcept { return data_[i]; }

    template <typename... Idx>
    T& at(Idx... idx) {
        return data_[offset(idx...)];
    }
    template <typename... Idx>
    const T& at(Idx... idx) const {
        return data_[offset(idx...)];
    }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    /// Same data, different extents; the element count must not change.
    Tensor reshaped(Dims dims) const& {
        Tensor out = *this;
        return std::move(out).reshaped(std::move(dims));
    }
    Tensor reshaped(Dims dims) && {
        if (dims_product(dims) != data_.size()) {
            throw ShapeError("cannot reshape " + dims_to_string(dims_) + " to " + dims_to_string(dims));
        }
        check_dims(dims);
        dims_ = std::move(dims);
        return std::move(*this);
    }

    bool same_dims(const Tensor& other) const noexcept { return dims_ == other.dims_; }

    friend bool operator==(const Tensor& a, const Tensor& b) = default;

private:
    static void check_dims(const Dims& dims) {
        if (dims.empty()) throw ShapeError("tensor needs at least one extent");
        for (auto d : dims) {
            if (d == 0) throw ShapeError("tensor extents must be >= 1, got " + dims_to_string(dims));
        }
    }

    template <typename... Idx>
    std::size_t offset(Idx... idx) const {
        const std::size_t ix[] = {static_cast<std::size_t>(idx)...};
        if (sizeof...(Idx) != dims_.size()) {
            throw ShapeError("index rank " + std::to_string(sizeof...(Idx)) + " for tensor " + dims_to_string(dims_));
        }
        std::size_t off = 0;
        for (std::size_t a = 0; a < sizeof...(Idx); ++a) {
            if (ix[a] >= dims_[a]) throw ShapeError("index out of range for tensor " + dims_to_string(dims_));
            off = off * dims_[a] + ix[a];
        }
        return off;
    }

    Dims dims_;
    std::vector<T> data_;
};

/// Learnable parameter with its gradient and momentum buffer.
template <typename T>
struct ParamBlock {
    Tensor<T> value;
    Tensor<T> grad;
    Tensor<T> momentum_buf;
    bool frozen = false;

    ParamBlock() = default;
    explicit ParamBlock(Tensor<T> v)
        : value(std::move(v)), grad(Tensor<T>::zeros_like(value)), momentum_buf(Tensor<T>::zeros_like(value)) {}

    void zero_grad() { grad.fill(T{0}); }
    void reset_momentum() { momentum_buf.fill(T{0}); }
};

}  // namespace mcl
