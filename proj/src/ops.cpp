#include "fcc/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "ops_common.hpp"

namespace fcc {

std::int64_t shape_numel(const Shape& shape) {
    std::int64_t n = 1;
    for (auto d : shape) {
        if (d <= 0) {
            throw DimensionError("non-positive extent in shape " + shape_str(shape));
        }
        n *= d;
    }
    return n;
}

std::string shape_str(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i > 0) {
            s += ",";
        }
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

}  // namespace fcc

namespace fcc::ops {

using detail::parallel_for;
using detail::parallel_gemm;
using detail::should_record;

template <class S>
void ensure_finite(const TensorT<S>& t, const char* what) {
    const S* p = t.data().data();
    const std::int64_t n = t.numel();
    double acc = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
        acc += std::fabs(static_cast<double>(p[i]));
    }
    if (!std::isfinite(acc)) {
        throw NumericError(std::string(what) + " produced a non-finite value");
    }
}

namespace {

template <class S>
void axpy(std::span<S> dst, std::span<const S> src, S scale = S(1)) {
    for (std::size_t i = 0; i < dst.size(); ++i) {
        dst[i] += scale * src[i];
    }
}

}  // namespace

template <class S>
TensorT<S> matmul(Tape<S>* tape, const TensorT<S>& a, const TensorT<S>& b) {
    if (a.rank() != 2 || b.rank() != 2) {
        throw DimensionError("matmul expects rank-2 tensors, got " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
    }
    if (a.dim(1) != b.dim(0)) {
        throw DimensionError("matmul inner axis mismatch: axis 1 of " + shape_str(a.shape()) +
                             " vs axis 0 of " + shape_str(b.shape()));
    }
    const std::int64_t n = a.dim(0), k = a.dim(1), m = b.dim(1);
    TensorT<S> out({n, m});
    parallel_gemm<S>(false, false, n, m, k, S(1), a.data().data(), k, b.data().data(), m, S(0),
                     out.data().data(), m);
    ensure_finite(out, "matmul");
    if (should_record<S>(tape, {a, b})) {
        tape->record("matmul", {a, b}, out, [a, b, out, n, k, m]() mutable {
            const S* g = out.grad().data();
            if (a.requires_grad() || a.node_id() >= 0) {
                parallel_gemm<S>(false, true, n, k, m, S(1), g, m, b.data().data(), m, S(1),
                                 a.grad().data(), k);
            }
            if (b.requires_grad() || b.node_id() >= 0) {
                parallel_gemm<S>(true, false, k, m, n, S(1), a.data().data(), k, g, m, S(1),
                                 b.grad().data(), m);
            }
        });
    }
    return out;
}

template <class S>
TensorT<S> add(Tape<S>* tape, const TensorT<S>& a, const TensorT<S>& b) {
    const bool bias_cast = b.rank() == 1 && a.rank() >= 2 && a.dim(a.rank() - 1) == b.dim(0) &&
                           a.shape() != b.shape();
    if (!bias_cast && a.shape() != b.shape()) {
        throw DimensionError("add shape mismatch: " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    }
    TensorT<S> out(a.shape());
    const std::int64_t n = a.numel();
    if (bias_cast) {
        const std::int64_t c = b.dim(0);
        const std::int64_t rows = n / c;
        parallel_for(0, rows, [&](std::int64_t r) {
            const S* pa = a.data().data() + r * c;
            const S* pb = b.data().data();
            S* po = out.data().data() + r * c;
            for (std::int64_t j = 0; j < c; ++j) {
                po[j] = pa[j] + pb[j];
            }
        });
    } else {
        const S* pa = a.data().data();
        const S* pb = b.data().data();
        S* po = out.data().data();
        for (std::int64_t i = 0; i < n; ++i) {
            po[i] = pa[i] + pb[i];
        }
    }
    ensure_finite(out, "add");
    if (should_record<S>(tape, {a, b})) {
        tape->record("add", {a, b}, out, [a, b, out, bias_cast]() mutable {
            auto g = out.grad();
            if (a.requires_grad() || a.node_id() >= 0) {
                axpy<S>(a.grad(), g);
            }
            if (b.requires_grad() || b.node_id() >= 0) {
                if (bias_cast) {
                    const std::int64_t c = b.dim(0);
                    const std::int64_t rows = static_cast<std::int64_t>(g.size()) / c;
                    auto gb = b.grad();
                    for (std::int64_t r = 0; r < rows; ++r) {
                        for (std::int64_t j = 0; j < c; ++j) {
                            gb[j] += g[r * c + j];
                        }
                    }
                } else {
                    axpy<S>(b.grad(), g);
                }
            }
        });
    }
    return out;
}

template <class S>
TensorT<S> elementwise_mul(Tape<S>* tape, const TensorT<S>& a, const TensorT<S>& b) {
    if (a.shape() != b.shape()) {
        throw DimensionError("elementwise-mul shape mismatch: " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    }
    TensorT<S> out(a.shape());
    const std::int64_t n = a.numel();
    const S* pa = a.data().data();
    const S* pb = b.data().data();
    S* po = out.data().data();
    for (std::int64_t i = 0; i < n; ++i) {
        po[i] = pa[i] * pb[i];
    }
    ensure_finite(out, "elementwise-mul");
    if (should_record<S>(tape, {a, b})) {
        tape->record("elementwise-mul", {a, b}, out, [a, b, out]() mutable {
            auto g = out.grad();
            const std::int64_t n = static_cast<std::int64_t>(g.size());
            if (a.requires_grad() || a.node_id() >= 0) {
                auto ga = a.grad();
                const S* pb = b.data().data();
                for (std::int64_t i = 0; i < n; ++i) {
                    ga[i] += g[i] * pb[i];
                }
            }
            if (b.requires_grad() || b.node_id() >= 0) {
                auto gb = b.grad();
                const S* pa = a.data().data();
                for (std::int64_t i = 0; i < n; ++i) {
                    gb[i] += g[i] * pa[i];
                }
            }
        });
    }
    return out;
}

template <class S>
TensorT<S> concat(Tape<S>* tape, const std::vector<TensorT<S>>& parts, std::int64_t axis) {
    if (parts.empty()) {
        throw ContractError("concat requires at least one input");
    }
    const auto& first = parts.front().shape();
    if (axis < 0 || axis >= static_cast<std::int64_t>(first.size())) {
        throw DimensionError("concat axis " + std::to_string(axis) + " out of range for rank " +
                             std::to_string(first.size()));
    }
    Shape out_shape = first;
    out_shape[static_cast<std::size_t>(axis)] = 0;
    for (const auto& p : parts) {
        if (p.rank() != static_cast<std::int64_t>(first.size())) {
            throw DimensionError("concat rank mismatch");
        }
        for (std::int64_t d = 0; d < p.rank(); ++d) {
            if (d != axis && p.dim(d) != first[static_cast<std::size_t>(d)]) {
                throw DimensionError("concat extent mismatch on axis " + std::to_string(d) + ": " +
                                     shape_str(p.shape()) + " vs " + shape_str(first));
            }
        }
        out_shape[static_cast<std::size_t>(axis)] += p.dim(axis);
    }

    std::int64_t outer = 1, inner = 1;
    for (std::int64_t d = 0; d < axis; ++d) {
        outer *= first[static_cast<std::size_t>(d)];
    }
    for (std::size_t d = static_cast<std::size_t>(axis) + 1; d < first.size(); ++d) {
        inner *= first[d];
    }

    TensorT<S> out(out_shape);
    const std::int64_t out_axis = out_shape[static_cast<std::size_t>(axis)];
    std::int64_t offset = 0;
    for (const auto& p : parts) {
        const std::int64_t ext = p.dim(axis);
        for (std::int64_t o = 0; o < outer; ++o) {
            std::memcpy(out.data().data() + (o * out_axis + offset) * inner,
                        p.data().data() + o * ext * inner,
                        static_cast<std::size_t>(ext * inner) * sizeof(S));
        }
        offset += ext;
    }
    ensure_finite(out, "concat");
    if (should_record<S>(tape, parts)) {
        tape->record("concat", parts, out, [parts, out, axis, outer, inner, out_axis]() mutable {
            const S* g = out.grad().data();
            std::int64_t offset = 0;
            for (auto& p : parts) {
                const std::int64_t ext = p.dim(axis);
                if (p.requires_grad() || p.node_id() >= 0) {
                    S* gp = p.grad().data();
                    for (std::int64_t o = 0; o < outer; ++o) {
                        const S* src = g + (o * out_axis + offset) * inner;
                        S* dst = gp + o * ext * inner;
                        for (std::int64_t i = 0; i < ext * inner; ++i) {
                            dst[i] += src[i];
                        }
                    }
                }
                offset += ext;
            }
        });
    }
    return out;
}

template <class S>
TensorT<S> relu(Tape<S>* tape, const TensorT<S>& x) {
    TensorT<S> out(x.shape());
    const std::int64_t n = x.numel();
    const S* px = x.data().data();
    S* po = out.data().data();
    for (std::int64_t i = 0; i < n; ++i) {
        po[i] = px[i] > S(0) ? px[i] : S(0);
    }
    ensure_finite(out, "relu");
    if (should_record<S>(tape, {x})) {
        tape->record("relu", {x}, out, [x, out]() mutable {
            auto g = out.grad();
            auto gx = x.grad();
            const S* po = out.data().data();
            for (std::size_t i = 0; i < g.size(); ++i) {
                if (po[i] > S(0)) {
                    gx[i] += g[i];
                }
            }
        });
    }
    return out;
}

template <class S>
TensorT<S> embedding_lookup(Tape<S>* tape, const TensorT<S>& table,
                            const std::vector<std::int32_t>& ids, const Shape& ids_shape) {
    if (table.rank() != 2) {
        throw DimensionError("embedding-lookup table must be rank 2, got " +
                             shape_str(table.shape()));
    }
    const std::int64_t rows = table.dim(0), dim = table.dim(1);
    if (shape_numel(ids_shape) != static_cast<std::int64_t>(ids.size())) {
        throw DimensionError("embedding-lookup ids length does not match ids shape");
    }
    for (auto id : ids) {
        if (id < 0 || id >= rows) {
            throw ContractError("embedding-lookup id " + std::to_string(id) +
                                " outside table of " + std::to_string(rows) + " rows");
        }
    }
    Shape out_shape = ids_shape;
    out_shape.push_back(dim);
    TensorT<S> out(out_shape);
    const S* pt = table.data().data();
    S* po = out.data().data();
    for (std::size_t i = 0; i < ids.size(); ++i) {
        std::memcpy(po + i * dim, pt + static_cast<std::int64_t>(ids[i]) * dim,
                    static_cast<std::size_t>(dim) * sizeof(S));
    }
    if (should_record<S>(tape, {table})) {
        tape->record("embedding-lookup", {table}, out, [table, out, ids, dim]() mutable {
            const S* g = out.grad().data();
            S* gt = table.grad().data();
            for (std::size_t i = 0; i < ids.size(); ++i) {
                axpy<S>({gt + static_cast<std::int64_t>(ids[i]) * dim, static_cast<std::size_t>(dim)},
                        {g + i * dim, static_cast<std::size_t>(dim)});
            }
        });
    }
    return out;
}

template <class S>
TensorT<S> log_softmax(Tape<S>* tape, const TensorT<S>& x) {
    if (x.rank() != 2) {
        throw DimensionError("log-softmax expects rank-2 input, got " + shape_str(x.shape()));
    }
    const std::int64_t n = x.dim(0), c = x.dim(1);
    TensorT<S> out(x.shape());
    for (std::int64_t i = 0; i < n; ++i) {
        const S* row = x.data().data() + i * c;
        S* orow = out.data().data() + i * c;
        S mx = row[0];
        for (std::int64_t j = 1; j < c; ++j) {
            mx = std::max(mx, row[j]);
        }
        double sum = 0.0;
        for (std::int64_t j = 0; j < c; ++j) {
            sum += std::exp(static_cast<double>(row[j] - mx));
        }
        const S lse = static_cast<S>(std::log(sum));
        for (std::int64_t j = 0; j < c; ++j) {
            orow[j] = row[j] - mx - lse;
        }
    }
    ensure_finite(out, "log-softmax");
    if (should_record<S>(tape, {x})) {
        tape->record("log-softmax", {x}, out, [x, out, n, c]() mutable {
            const S* g = out.grad().data();
            const S* po = out.data().data();
            auto gx = x.grad();
            for (std::int64_t i = 0; i < n; ++i) {
                S gsum = S(0);
                for (std::int64_t j = 0; j < c; ++j) {
                    gsum += g[i * c + j];
                }
                for (std::int64_t j = 0; j < c; ++j) {
                    gx[i * c + j] += g[i * c + j] - std::exp(po[i * c + j]) * gsum;
                }
            }
        });
    }
    return out;
}

template <class S>
TensorT<S> nll_loss(Tape<S>* tape, const TensorT<S>& logp, const std::vector<std::int32_t>& labels) {
    if (logp.rank() != 2) {
        throw DimensionError("nll-loss expects rank-2 log-probabilities, got " +
                             shape_str(logp.shape()));
    }
    const std::int64_t n = logp.dim(0), c = logp.dim(1);
    if (static_cast<std::int64_t>(labels.size()) != n) {
        throw DimensionError("nll-loss labels length " + std::to_string(labels.size()) +
                             " does not match batch axis " + std::to_string(n));
    }
    double acc = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
        const auto label = labels[static_cast<std::size_t>(i)];
        if (label < 0 || label >= c) {
            throw ContractError("nll-loss label " + std::to_string(label) + " outside [0," +
                                std::to_string(c) + ")");
        }
        acc -= static_cast<double>(logp.data()[i * c + label]);
    }
    TensorT<S> out = TensorT<S>::scalar(static_cast<S>(acc / static_cast<double>(n)));
    ensure_finite(out, "nll-loss");
    if (should_record<S>(tape, {logp})) {
        tape->record("nll-loss", {logp}, out, [logp, out, labels, n, c]() mutable {
            const S g = out.grad()[0];
            auto gl = logp.grad();
            const S scale = g / static_cast<S>(n);
            for (std::int64_t i = 0; i < n; ++i) {
                gl[i * c + labels[static_cast<std::size_t>(i)]] -= scale;
            }
        });
    }
    return out;
}

template <class S>
TensorT<S> mean(Tape<S>* tape, const TensorT<S>& x) {
    const std::int64_t n = x.numel();
    double acc = 0.0;
    for (auto v : x.data()) {
        acc += static_cast<double>(v);
    }
    TensorT<S> out = TensorT<S>::scalar(static_cast<S>(acc / static_cast<double>(n)));
    ensure_finite(out, "mean");
    if (should_record<S>(tape, {x})) {
        tape->record("mean", {x}, out, [x, out, n]() mutable {
            const S g = out.grad()[0] / static_cast<S>(n);
            auto gx = x.grad();
            for (auto& v : gx) {
                v += g;
            }
        });
    }
    return out;
}

template <class S>
TensorT<S> l2_norm(Tape<S>* tape, const TensorT<S>& x) {
    double acc = 0.0;
    for (auto v : x.data()) {
        acc += static_cast<double>(v) * static_cast<double>(v);
    }
    const S norm = static_cast<S>(std::sqrt(acc));
    TensorT<S> out = TensorT<S>::scalar(norm);
    ensure_finite(out, "l2-norm");
    if (should_record<S>(tape, {x})) {
        tape->record("l2-norm", {x}, out, [x, out, norm]() mutable {
            if (norm <= S(0)) {
                return;  // subgradient 0 at the origin
            }
            const S g = out.grad()[0] / norm;
            auto gx = x.grad();
            const S* px = x.data().data();
            for (std::size_t i = 0; i < gx.size(); ++i) {
                gx[i] += g * px[i];
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Dispatcher
// ---------------------------------------------------------------------------

const std::vector<std::string>& primitive_kinds() {
    static const std::vector<std::string> kinds = {
        "matmul",        "add",       "elementwise-mul",   "concat",
        "relu",          "conv2d",    "maxpool2d",         "global-maxpool-2d",
        "conv1d",        "maxpool1d", "global-maxpool-1d", "embedding-lookup",
        "batchnorm",     "log-softmax", "nll-loss",        "mean",
        "l2-norm",
    };
    return kinds;
}

namespace {

std::int64_t attr_int(const Attrs& attrs, const std::string& key, std::int64_t fallback,
                      bool required = false) {
    auto it = attrs.find(key);
    if (it == attrs.end()) {
        if (required) {
            throw ContractError("missing required attribute '" + key + "'");
        }
        return fallback;
    }
    if (const auto* v = std::get_if<std::int64_t>(&it->second)) {
        return *v;
    }
    throw ContractError("attribute '" + key + "' must be an integer");
}

double attr_double(const Attrs& attrs, const std::string& key, double fallback) {
    auto it = attrs.find(key);
    if (it == attrs.end()) {
        return fallback;
    }
    if (const auto* v = std::get_if<double>(&it->second)) {
        return *v;
    }
    if (const auto* v = std::get_if<std::int64_t>(&it->second)) {
        return static_cast<double>(*v);
    }
    throw ContractError("attribute '" + key + "' must be a number");
}

std::string attr_str(const Attrs& attrs, const std::string& key, const std::string& fallback) {
    auto it = attrs.find(key);
    if (it == attrs.end()) {
        return fallback;
    }
    if (const auto* v = std::get_if<std::string>(&it->second)) {
        return *v;
    }
    throw ContractError("attribute '" + key + "' must be a string");
}

std::vector<std::int64_t> attr_ints(const Attrs& attrs, const std::string& key) {
    auto it = attrs.find(key);
    if (it == attrs.end()) {
        throw ContractError("missing required attribute '" + key + "'");
    }
    if (const auto* v = std::get_if<std::vector<std::int64_t>>(&it->second)) {
        return *v;
    }
    throw ContractError("attribute '" + key + "' must be an integer list");
}

PadMode parse_pad(const std::string& s) {
    if (s == "same") {
        return PadMode::same;
    }
    if (s == "valid") {
        return PadMode::valid;
    }
    throw ContractError("padding-mode must be 'same' or 'valid', got '" + s + "'");
}

std::vector<std::int32_t> to_int32(const std::vector<std::int64_t>& v) {
    std::vector<std::int32_t> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        out[i] = static_cast<std::int32_t>(v[i]);
    }
    return out;
}

template <class S>
const TensorT<S>& nth(const std::vector<TensorT<S>>& inputs, std::size_t i, const char* kind) {
    if (i >= inputs.size()) {
        throw ContractError(std::string(kind) + ": expected at least " + std::to_string(i + 1) +
                            " inputs, got " + std::to_string(inputs.size()));
    }
    return inputs[i];
}

}  // namespace

template <class S>
TensorT<S> apply_primitive(Tape<S>* tape, const std::string& kind, std::vector<TensorT<S>> inputs,
                           const Attrs& attrs) {
    if (kind == "matmul") {
        return matmul(tape, nth(inputs, 0, "matmul"), nth(inputs, 1, "matmul"));
    }
    if (kind == "add") {
        return add(tape, nth(inputs, 0, "add"), nth(inputs, 1, "add"));
    }
    if (kind == "elementwise-mul") {
        return elementwise_mul(tape, nth(inputs, 0, kind.c_str()), nth(inputs, 1, kind.c_str()));
    }
    if (kind == "concat") {
        return concat(tape, inputs, attr_int(attrs, "axis", 0, true));
    }
    if (kind == "relu") {
        return relu(tape, nth(inputs, 0, "relu"));
    }
    if (kind == "conv2d") {
        TensorT<S> bias = inputs.size() > 2 ? inputs[2] : TensorT<S>();
        return conv2d(tape, nth(inputs, 0, "conv2d"), nth(inputs, 1, "conv2d"), bias,
                      attr_int(attrs, "stride", 1), parse_pad(attr_str(attrs, "padding-mode", "valid")));
    }
    if (kind == "maxpool2d") {
        const auto window = attr_int(attrs, "window", 0, true);
        return maxpool2d(tape, nth(inputs, 0, "maxpool2d"), window,
                         attr_int(attrs, "stride", window));
    }
    if (kind == "global-maxpool-2d") {
        return global_maxpool2d(tape, nth(inputs, 0, kind.c_str()));
    }
    if (kind == "conv1d") {
        TensorT<S> bias = inputs.size() > 2 ? inputs[2] : TensorT<S>();
        return conv1d(tape, nth(inputs, 0, "conv1d"), nth(inputs, 1, "conv1d"), bias,
                      parse_pad(attr_str(attrs, "padding-mode", "valid")));
    }
    if (kind == "maxpool1d") {
        return maxpool1d(tape, nth(inputs, 0, "maxpool1d"), attr_int(attrs, "window", 0, true));
    }
    if (kind == "global-maxpool-1d") {
        return global_maxpool1d(tape, nth(inputs, 0, kind.c_str()));
    }
    if (kind == "embedding-lookup") {
        const auto ids = to_int32(attr_ints(attrs, "ids"));
        auto shape = attr_ints(attrs, "ids-shape");
        return embedding_lookup(tape, nth(inputs, 0, kind.c_str()), ids, Shape(shape.begin(), shape.end()));
    }
    if (kind == "batchnorm") {
        const auto mode = attr_str(attrs, "mode", "train") == "infer" ? BnMode::infer : BnMode::train;
        return batchnorm(tape, nth(inputs, 0, "batchnorm"), nth(inputs, 1, "batchnorm"),
                         nth(inputs, 2, "batchnorm"), nth(inputs, 3, "batchnorm"),
                         nth(inputs, 4, "batchnorm"), mode, attr_double(attrs, "momentum", 0.9),
                         attr_double(attrs, "eps", 1e-5));
    }
    if (kind == "log-softmax") {
        return log_softmax(tape, nth(inputs, 0, kind.c_str()));
    }
    if (kind == "nll-loss") {
        return nll_loss(tape, nth(inputs, 0, kind.c_str()), to_int32(attr_ints(attrs, "labels")));
    }
    if (kind == "mean") {
        return mean(tape, nth(inputs, 0, "mean"));
    }
    if (kind == "l2-norm") {
        return l2_norm(tape, nth(inputs, 0, kind.c_str()));
    }
    throw ContractError("unknown primitive kind '" + kind + "'");
}

#define FCC_INSTANTIATE_OPS(S)                                                                    \
    template void ensure_finite<S>(const TensorT<S>&, const char*);                              \
    template TensorT<S> matmul<S>(Tape<S>*, const TensorT<S>&, const TensorT<S>&);               \
    template TensorT<S> add<S>(Tape<S>*, const TensorT<S>&, const TensorT<S>&);                  \
    template TensorT<S> elementwise_mul<S>(Tape<S>*, const TensorT<S>&, const TensorT<S>&);      \
    template TensorT<S> concat<S>(Tape<S>*, const std::vector<TensorT<S>>&, std::int64_t);       \
    template TensorT<S> relu<S>(Tape<S>*, const TensorT<S>&);                                    \
    template TensorT<S> embedding_lookup<S>(Tape<S>*, const TensorT<S>&,                         \
                                            const std::vector<std::int32_t>&, const Shape&);     \
    template TensorT<S> log_softmax<S>(Tape<S>*, const TensorT<S>&);                             \
    template TensorT<S> nll_loss<S>(Tape<S>*, const TensorT<S>&,                                 \
                                    const std::vector<std::int32_t>&);                           \
    template TensorT<S> mean<S>(Tape<S>*, const TensorT<S>&);                                    \
    template TensorT<S> l2_norm<S>(Tape<S>*, const TensorT<S>&);                                 \
    template TensorT<S> apply_primitive<S>(Tape<S>*, const std::string&, std::vector<TensorT<S>>, \
                                           const Attrs&);

FCC_INSTANTIATE_OPS(float)
FCC_INSTANTIATE_OPS(double)

#undef FCC_INSTANTIATE_OPS

}  // namespace fcc::ops
