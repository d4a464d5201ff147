#pragma once

#include <cstdint>
#include <memory>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "fcc/errors.hpp"

namespace fcc {

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

template <class S>
struct Storage {
    Shape shape;
    std::vector<S> value;
    std::vector<S> grad;  // empty until first accumulation
    bool requires_grad = false;
    std::int64_t node_id = -1;  // tape node that produced this value, -1 for leaves
};

}  // namespace detail

// Dense row-major n-d array handle. Copies share the underlying buffer;
// use clone() for a deep copy.
template <class S>
class TensorT {
  public:
    using Scalar = S;

    TensorT() : p_(std::make_shared<detail::Storage<S>>()) {}

    explicit TensorT(Shape shape, S fill = S(0)) : p_(std::make_shared<detail::Storage<S>>()) {
        p_->shape = std::move(shape);
        p_->value.assign(static_cast<std::size_t>(shape_numel(p_->shape)), fill);
    }

    static TensorT from_data(Shape shape, std::vector<S> data) {
        if (shape_numel(shape) != static_cast<std::int64_t>(data.size())) {
            throw DimensionError("tensor data length " + std::to_string(data.size()) +
                                 " does not match shape " + shape_str(shape));
        }
        TensorT t;
        t.p_->shape = std::move(shape);
        t.p_->value = std::move(data);
        return t;
    }

    static TensorT scalar(S v) { return from_data({}, {v}); }

    const Shape& shape() const { return p_->shape; }
    std::int64_t rank() const { return static_cast<std::int64_t>(p_->shape.size()); }
    std::int64_t dim(std::int64_t axis) const { return p_->shape[static_cast<std::size_t>(axis)]; }
    std::int64_t numel() const { return static_cast<std::int64_t>(p_->value.size()); }

    // Constness of a TensorT applies to the handle, not the shared buffer
    // (like shared_ptr): accessors hand out mutable views.
    std::span<S> data() const { return {p_->value.data(), p_->value.size()}; }
    std::vector<S>& vec() const { return p_->value; }

    S item() const {
        if (numel() != 1) {
            throw ContractError("item() requires a single-element tensor, got shape " + shape_str(shape()));
        }
        return p_->value[0];
    }

    bool requires_grad() const { return p_->requires_grad; }
    TensorT& set_requires_grad(bool v) {
        p_->requires_grad = v;
        return *this;
    }

    bool has_grad() const { return !p_->grad.empty(); }

    // Zero-filled on first access so unreached tensors read as zero gradient.
    std::span<S> grad() const {
        if (p_->grad.empty()) {
            p_->grad.assign(p_->value.size(), S(0));
        }
        return {p_->grad.data(), p_->grad.size()};
    }

    void zero_grad() const {
        if (!p_->grad.empty()) {
            std::fill(p_->grad.begin(), p_->grad.end(), S(0));
        }
    }

    void drop_grad() const {
        p_->grad.clear();
        p_->grad.shrink_to_fit();
    }

    TensorT clone() const {
        TensorT t;
        t.p_->shape = p_->shape;
        t.p_->value = p_->value;
        t.p_->requires_grad = p_->requires_grad;
        return t;
    }

    // Identity of the underlying buffer; used by the tape for graph wiring.
    std::shared_ptr<detail::Storage<S>> storage() const { return p_; }
    bool same_storage(const TensorT& other) const { return p_ == other.p_; }

    std::int64_t node_id() const { return p_->node_id; }

  private:
    std::shared_ptr<detail::Storage<S>> p_;
};

using Tensor = TensorT<float>;
using Tensor64 = TensorT<double>;

// Uniform fill in [lo, hi) from a caller-owned generator.
template <class S>
TensorT<S> uniform_tensor(const Shape& shape, S lo, S hi, std::mt19937& rng) {
    TensorT<S> t(shape);
    std::uniform_real_distribution<double> dist(static_cast<double>(lo), static_cast<double>(hi));
    for (auto& v : t.vec()) {
        v = static_cast<S>(dist(rng));
    }
    return t;
}

template <class S>
TensorT<S> normal_tensor(const Shape& shape, S mean, S stddev, std::mt19937& rng) {
    TensorT<S> t(shape);
    std::normal_distribution<double> dist(static_cast<double>(mean), static_cast<double>(stddev));
    for (auto& v : t.vec()) {
        v = static_cast<S>(dist(rng));
    }
    return t;
}

}  // namespace fcc
