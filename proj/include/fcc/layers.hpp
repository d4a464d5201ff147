#pragma once

#include <random>
#include <string>
#include <vector>

#include "fcc/ops.hpp"
#include "fcc/tape.hpp"
#include "fcc/tensor.hpp"

namespace fcc {

// A named model parameter. Names are unique within a model and stable across
// save/load. frozen_row marks a single row excluded from optimizer updates
// (the padding row of an embedding matrix).
template <class S>
struct ParamT {
    std::string name;
    TensorT<S> value;
    bool trainable = true;
    std::int64_t frozen_row = -1;
};

using Param = ParamT<float>;

template <class S>
using ParamRefs = std::vector<ParamT<S>*>;

template <class S>
std::int64_t count_trainable(const ParamRefs<S>& params) {
    std::int64_t n = 0;
    for (const auto* p : params) {
        if (p->trainable) {
            n += p->value.numel();
        }
    }
    return n;
}

template <class S>
void set_trainable(const ParamRefs<S>& params, bool trainable) {
    for (auto* p : params) {
        if (p->name.find("running_") == std::string::npos) {
            p->trainable = trainable;
            p->value.set_requires_grad(trainable);
        }
    }
}

// He-uniform fill for weights feeding ReLU: U(-sqrt(6/fan_in), +sqrt(6/fan_in)).
template <class S>
void he_uniform_init(TensorT<S>& t, std::int64_t fan_in, std::mt19937& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (auto& v : t.vec()) {
        v = static_cast<S>(dist(rng));
    }
}

template <class S>
struct DenseT {
    ParamT<S> w;  // [in, out]
    ParamT<S> b;  // [out]

    void init(std::int64_t in, std::int64_t out, const std::string& prefix, std::mt19937& rng);
    TensorT<S> forward(Tape<S>* tape, const TensorT<S>& x) const;
    ParamRefs<S> params();
};

template <class S>
struct Conv2dT {
    ParamT<S> w;  // [out, in, kh, kw]
    ParamT<S> b;  // [out]

    void init(std::int64_t in, std::int64_t out, std::int64_t kernel, const std::string& prefix,
              std::mt19937& rng);
    TensorT<S> forward(Tape<S>* tape, const TensorT<S>& x) const;  // stride 1, same padding
    ParamRefs<S> params();
};

template <class S>
struct Conv1dT {
    ParamT<S> w;  // [out, window, in]
    ParamT<S> b;  // [out]

    void init(std::int64_t in, std::int64_t out, std::int64_t window, const std::string& prefix,
              std::mt19937& rng);
    TensorT<S> forward(Tape<S>* tape, const TensorT<S>& x) const;  // valid padding
    ParamRefs<S> params();
};

template <class S>
struct BatchNormT {
    ParamT<S> gamma;
    ParamT<S> beta;
    ParamT<S> running_mean;  // state, never trainable
    ParamT<S> running_var;

    void init(std::int64_t channels, const std::string& prefix);
    TensorT<S> forward(Tape<S>* tape, const TensorT<S>& x, ops::BnMode mode) const;
    ParamRefs<S> params();
};

template <class S>
struct EmbeddingT {
    ParamT<S> table;  // [vocab, dim]; row 0 is the padding row, frozen

    void init(std::int64_t vocab, std::int64_t dim, const std::string& prefix, std::mt19937& rng);
    TensorT<S> forward(Tape<S>* tape, const std::vector<std::int32_t>& ids,
                       const Shape& ids_shape) const;
    ParamRefs<S> params();
};

// conv(3x3 same) -> bn -> relu, twice, then 2x2/2 maxpool; terminal blocks
// end in a global spatial maxpool instead.
template <class S>
struct ConvBlock2dT {
    Conv2dT<S> conv1, conv2;
    BatchNormT<S> bn1, bn2;
    bool terminal = false;

    void init(std::int64_t in, std::int64_t out, bool is_terminal, const std::string& prefix,
              std::mt19937& rng);
    TensorT<S> forward(Tape<S>* tape, const TensorT<S>& x, ops::BnMode bn_mode) const;
    ParamRefs<S> params();
};

// valid 5-window conv -> relu -> width-5 maxpool (global when terminal).
template <class S>
struct ConvBlock1dT {
    Conv1dT<S> conv;
    bool terminal = false;

    void init(std::int64_t in, std::int64_t out, std::int64_t window, bool is_terminal,
              const std::string& prefix, std::mt19937& rng);
    TensorT<S> forward(Tape<S>* tape, const TensorT<S>& x) const;
    ParamRefs<S> params();
};

using Dense = DenseT<float>;
using Conv2d = Conv2dT<float>;
using Conv1d = Conv1dT<float>;
using BatchNorm = BatchNormT<float>;
using Embedding = EmbeddingT<float>;
using ConvBlock2d = ConvBlock2dT<float>;
using ConvBlock1d = ConvBlock1dT<float>;

}  // namespace fcc
