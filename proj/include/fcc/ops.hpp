#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include "fcc/tape.hpp"
#include "fcc/tensor.hpp"

namespace fcc::ops {

enum class PadMode { same, valid };
enum class BnMode { train, infer };

// Every primitive validates shapes, computes forward, verifies the output is
// finite, and records itself on `tape` when given one and some input requires
// gradient. `tape == nullptr` evaluates without recording.

template <class S>
TensorT<S> matmul(Tape<S>* tape, const TensorT<S>& a, const TensorT<S>& b);

// Same-shape addition, or rank-1 bias broadcast over the last axis.
template <class S>
TensorT<S> add(Tape<S>* tape, const TensorT<S>& a, const TensorT<S>& b);

template <class S>
TensorT<S> elementwise_mul(Tape<S>* tape, const TensorT<S>& a, const TensorT<S>& b);

template <class S>
TensorT<S> concat(Tape<S>* tape, const std::vector<TensorT<S>>& parts, std::int64_t axis);

template <class S>
TensorT<S> relu(Tape<S>* tape, const TensorT<S>& x);

// x [N,C,H,W] * w [O,C,KH,KW] (+ bias [O]), stride >= 1.
// PadMode::same keeps the spatial size at stride 1 (odd kernels only).
template <class S>
TensorT<S> conv2d(Tape<S>* tape, const TensorT<S>& x, const TensorT<S>& w, const TensorT<S>& bias,
                  std::int64_t stride, PadMode pad);

template <class S>
TensorT<S> maxpool2d(Tape<S>* tape, const TensorT<S>& x, std::int64_t window, std::int64_t stride);

template <class S>
TensorT<S> global_maxpool2d(Tape<S>* tape, const TensorT<S>& x);

// x [N,T,D] * w [O,KW,D] (+ bias [O]); valid mode shrinks T to T-KW+1.
template <class S>
TensorT<S> conv1d(Tape<S>* tape, const TensorT<S>& x, const TensorT<S>& w, const TensorT<S>& bias,
                  PadMode pad);

// Non-overlapping pooling over the time axis; trailing remainder dropped
// (floor semantics: 996 -> 199 at window 5).
template <class S>
TensorT<S> maxpool1d(Tape<S>* tape, const TensorT<S>& x, std::int64_t window);

template <class S>
TensorT<S> global_maxpool1d(Tape<S>* tape, const TensorT<S>& x);

// table [V,D] gathered by ids (values in [0,V)); output ids_shape + [D].
template <class S>
TensorT<S> embedding_lookup(Tape<S>* tape, const TensorT<S>& table,
                            const std::vector<std::int32_t>& ids, const Shape& ids_shape);

// x [N,C,H,W] or [N,F]; gamma/beta/running stats of length C. Train mode uses
// batch statistics and updates the running buffers in place (momentum 0.9);
// infer mode uses the running buffers. Train mode requires N >= 2.
template <class S>
TensorT<S> batchnorm(Tape<S>* tape, const TensorT<S>& x, const TensorT<S>& gamma,
                     const TensorT<S>& beta, const TensorT<S>& running_mean,
                     const TensorT<S>& running_var, BnMode mode, double momentum = 0.9,
                     double eps = 1e-5);

// Row-wise log softmax over the last axis of [N,C], max-subtracted.
template <class S>
TensorT<S> log_softmax(Tape<S>* tape, const TensorT<S>& x);

// Mean over rows of -logp[i, labels[i]].
template <class S>
TensorT<S> nll_loss(Tape<S>* tape, const TensorT<S>& logp, const std::vector<std::int32_t>& labels);

template <class S>
TensorT<S> mean(Tape<S>* tape, const TensorT<S>& x);

template <class S>
TensorT<S> l2_norm(Tape<S>* tape, const TensorT<S>& x);

// ---------------------------------------------------------------------------
// Uniform dispatcher over the primitive catalog, keyed by kind name. Non-
// tensor arguments (strides, ids, labels, modes) travel in the attribute map.
// ---------------------------------------------------------------------------

using AttrValue = std::variant<std::int64_t, double, std::string, std::vector<std::int64_t>>;
using Attrs = std::map<std::string, AttrValue>;

const std::vector<std::string>& primitive_kinds();

template <class S>
TensorT<S> apply_primitive(Tape<S>* tape, const std::string& kind, std::vector<TensorT<S>> inputs,
                           const Attrs& attrs);

// Throws NumericError naming `what` if any element is NaN/Inf.
template <class S>
void ensure_finite(const TensorT<S>& t, const char* what);

}  // namespace fcc::ops
