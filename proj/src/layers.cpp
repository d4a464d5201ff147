#include "fcc/layers.hpp"

#include <cmath>

#include "fcc/optim.hpp"

namespace fcc {

template <class S>
void DenseT<S>::init(std::int64_t in, std::int64_t out, const std::string& prefix,
                     std::mt19937& rng) {
    w = {prefix + ".w", TensorT<S>({in, out}), true, -1};
    he_uniform_init(w.value, in, rng);
    w.value.set_requires_grad(true);
    b = {prefix + ".b", TensorT<S>({out}), true, -1};
    b.value.set_requires_grad(true);
}

template <class S>
TensorT<S> DenseT<S>::forward(Tape<S>* tape, const TensorT<S>& x) const {
    return ops::add(tape, ops::matmul(tape, x, w.value), b.value);
}

template <class S>
ParamRefs<S> DenseT<S>::params() {
    return {&w, &b};
}

template <class S>
void Conv2dT<S>::init(std::int64_t in, std::int64_t out, std::int64_t kernel,
                      const std::string& prefix, std::mt19937& rng) {
    w = {prefix + ".w", TensorT<S>({out, in, kernel, kernel}), true, -1};
    he_uniform_init(w.value, in * kernel * kernel, rng);
    w.value.set_requires_grad(true);
    b = {prefix + ".b", TensorT<S>({out}), true, -1};
    b.value.set_requires_grad(true);
}

template <class S>
TensorT<S> Conv2dT<S>::forward(Tape<S>* tape, const TensorT<S>& x) const {
    return ops::conv2d(tape, x, w.value, b.value, 1, ops::PadMode::same);
}

template <class S>
ParamRefs<S> Conv2dT<S>::params() {
    return {&w, &b};
}

template <class S>
void Conv1dT<S>::init(std::int64_t in, std::int64_t out, std::int64_t window,
                      const std::string& prefix, std::mt19937& rng) {
    w = {prefix + ".w", TensorT<S>({out, window, in}), true, -1};
    he_uniform_init(w.value, in * window, rng);
    w.value.set_requires_grad(true);
    b = {prefix + ".b", TensorT<S>({out}), true, -1};
    b.value.set_requires_grad(true);
}

template <class S>
TensorT<S> Conv1dT<S>::forward(Tape<S>* tape, const TensorT<S>& x) const {
    return ops::conv1d(tape, x, w.value, b.value, ops::PadMode::valid);
}

template <class S>
ParamRefs<S> Conv1dT<S>::params() {
    return {&w, &b};
}

template <class S>
void BatchNormT<S>::init(std::int64_t channels, const std::string& prefix) {
    gamma = {prefix + ".gamma", TensorT<S>({channels}, S(1)), true, -1};
    gamma.value.set_requires_grad(true);
    beta = {prefix + ".beta", TensorT<S>({channels}), true, -1};
    beta.value.set_requires_grad(true);
    running_mean = {prefix + ".running_mean", TensorT<S>({channels}), false, -1};
    running_var = {prefix + ".running_var", TensorT<S>({channels}, S(1)), false, -1};
}

template <class S>
TensorT<S> BatchNormT<S>::forward(Tape<S>* tape, const TensorT<S>& x, ops::BnMode mode) const {
    return ops::batchnorm(tape, x, gamma.value, beta.value, running_mean.value, running_var.value,
                          mode);
}

template <class S>
ParamRefs<S> BatchNormT<S>::params() {
    return {&gamma, &beta, &running_mean, &running_var};
}

template <class S>
void EmbeddingT<S>::init(std::int64_t vocab, std::int64_t dim, const std::string& prefix,
                         std::mt19937& rng) {
    table = {prefix + ".table", TensorT<S>({vocab, dim}), true, 0};
    table.value.set_requires_grad(true);
    std::uniform_real_distribution<double> dist(-0.05, 0.05);
    for (auto& v : table.value.vec()) {
        v = static_cast<S>(dist(rng));
    }
    // padding row stays zero so absent tokens contribute nothing
    for (std::int64_t j = 0; j < dim; ++j) {
        table.value.data()[j] = S(0);
    }
}

template <class S>
TensorT<S> EmbeddingT<S>::forward(Tape<S>* tape, const std::vector<std::int32_t>& ids,
                                  const Shape& ids_shape) const {
    return ops::embedding_lookup(tape, table.value, ids, ids_shape);
}

template <class S>
ParamRefs<S> EmbeddingT<S>::params() {
    return {&table};
}

template <class S>
void ConvBlock2dT<S>::init(std::int64_t in, std::int64_t out, bool is_terminal,
                           const std::string& prefix, std::mt19937& rng) {
    terminal = is_terminal;
    conv1.init(in, out, 3, prefix + ".conv1", rng);
    bn1.init(out, prefix + ".bn1");
    conv2.init(out, out, 3, prefix + ".conv2", rng);
    bn2.init(out, prefix + ".bn2");
}

template <class S>
TensorT<S> ConvBlock2dT<S>::forward(Tape<S>* tape, const TensorT<S>& x, ops::BnMode bn_mode) const {
    auto h = ops::relu(tape, bn1.forward(tape, conv1.forward(tape, x), bn_mode));
    h = ops::relu(tape, bn2.forward(tape, conv2.forward(tape, h), bn_mode));
    if (terminal) {
        return ops::global_maxpool2d(tape, h);
    }
    return ops::maxpool2d(tape, h, 2, 2);
}

template <class S>
ParamRefs<S> ConvBlock2dT<S>::params() {
    ParamRefs<S> out;
    for (auto* p : conv1.params()) out.push_back(p);
    for (auto* p : bn1.params()) out.push_back(p);
    for (auto* p : conv2.params()) out.push_back(p);
    for (auto* p : bn2.params()) out.push_back(p);
    return out;
}

template <class S>
void ConvBlock1dT<S>::init(std::int64_t in, std::int64_t out, std::int64_t window,
                           bool is_terminal, const std::string& prefix, std::mt19937& rng) {
    terminal = is_terminal;
    conv.init(in, out, window, prefix + ".conv", rng);
}

template <class S>
TensorT<S> ConvBlock1dT<S>::forward(Tape<S>* tape, const TensorT<S>& x) const {
    auto h = ops::relu(tape, conv.forward(tape, x));
    if (terminal) {
        return ops::global_maxpool1d(tape, h);
    }
    return ops::maxpool1d(tape, h, conv.w.value.dim(1));
}

template <class S>
ParamRefs<S> ConvBlock1dT<S>::params() {
    return conv.params();
}

template <class S>
void AdamT<S>::step(const ParamRefs<S>& params) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (auto* p : params) {
        if (!p->trainable) {
            continue;
        }
        auto& mom = moments_[p->name];
        const std::size_t n = static_cast<std::size_t>(p->value.numel());
        if (mom.m.size() != n) {
            mom.m.assign(n, S(0));
            mom.v.assign(n, S(0));
        }
        const bool has_grad = p->value.has_grad();
        const S* g = has_grad ? p->value.grad().data() : nullptr;
        S* w = p->value.data().data();

        std::int64_t skip_begin = -1, skip_end = -1;
        if (p->frozen_row >= 0 && p->value.rank() == 2) {
            const std::int64_t dim = p->value.dim(1);
            skip_begin = p->frozen_row * dim;
            skip_end = skip_begin + dim;
        }

        if (has_grad) {
            double acc = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                acc += std::fabs(static_cast<double>(g[i]));
            }
            if (!std::isfinite(acc)) {
                throw NumericError("non-finite gradient for parameter '" + p->name + "'");
            }
        }

        const S lr = static_cast<S>(cfg_.learning_rate);
        const S wd = static_cast<S>(cfg_.weight_decay);
        const S b1 = static_cast<S>(cfg_.beta1);
        const S b2 = static_cast<S>(cfg_.beta2);
        const S eps = static_cast<S>(cfg_.epsilon);
        for (std::size_t i = 0; i < n; ++i) {
            if (static_cast<std::int64_t>(i) >= skip_begin &&
                static_cast<std::int64_t>(i) < skip_end) {
                continue;
            }
            S grad = has_grad ? g[i] : S(0);
            if (!cfg_.decoupled_decay) {
                grad += wd * w[i];
            }
            mom.m[i] = b1 * mom.m[i] + (S(1) - b1) * grad;
            mom.v[i] = b2 * mom.v[i] + (S(1) - b2) * grad * grad;
            const S mhat = mom.m[i] / static_cast<S>(bc1);
            const S vhat = mom.v[i] / static_cast<S>(bc2);
            w[i] -= lr * mhat / (std::sqrt(vhat) + eps);
            if (cfg_.decoupled_decay) {
                w[i] -= lr * wd * w[i];
            }
        }
    }
}

#define FCC_INSTANTIATE_LAYERS(S)    \
    template struct DenseT<S>;       \
    template struct Conv2dT<S>;      \
    template struct Conv1dT<S>;      \
    template struct BatchNormT<S>;   \
    template struct EmbeddingT<S>;   \
    template struct ConvBlock2dT<S>; \
    template struct ConvBlock1dT<S>; \
    template class AdamT<S>;

FCC_INSTANTIATE_LAYERS(float)
FCC_INSTANTIATE_LAYERS(double)

#undef FCC_INSTANTIATE_LAYERS

}  // namespace fcc
