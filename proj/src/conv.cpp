#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

#include "fcc/ops.hpp"
#include "ops_common.hpp"

namespace fcc::ops {

using detail::parallel_for;
using detail::parallel_gemm;
using detail::should_record;

namespace {

// im2col produces cols[C*KH*KW, cnt] for output rows [ho0, ho1); cnt is the
// number of output positions in the chunk. Out-of-image taps read as zero.
template <class S>
void im2col_chunk(const S* x, std::int64_t c_in, std::int64_t h, std::int64_t w, std::int64_t kh,
                  std::int64_t kw, std::int64_t stride, std::int64_t ph, std::int64_t pw,
                  std::int64_t w_out, std::int64_t ho0, std::int64_t ho1, S* cols) {
    const std::int64_t rows = c_in * kh * kw;
    const std::int64_t cnt = (ho1 - ho0) * w_out;
    parallel_for(0, rows, [&](std::int64_t r) {
        const std::int64_t c = r / (kh * kw);
        const std::int64_t k = r % (kh * kw);
        const std::int64_t dy = k / kw;
        const std::int64_t dx = k % kw;
        S* dst_row = cols + r * cnt;
        for (std::int64_t ho = ho0; ho < ho1; ++ho) {
            S* dst = dst_row + (ho - ho0) * w_out;
            const std::int64_t hi = ho * stride - ph + dy;
            if (hi < 0 || hi >= h) {
                std::memset(dst, 0, static_cast<std::size_t>(w_out) * sizeof(S));
                continue;
            }
            const S* src = x + (c * h + hi) * w;
            if (stride == 1) {
                const std::int64_t off = dx - pw;  // input col for wo = 0
                const std::int64_t wo_begin = std::max<std::int64_t>(0, -off);
                const std::int64_t wo_end = std::min<std::int64_t>(w_out, w - off);
                if (wo_begin > 0) {
                    std::memset(dst, 0, static_cast<std::size_t>(wo_begin) * sizeof(S));
                }
                if (wo_end > wo_begin) {
                    std::memcpy(dst + wo_begin, src + off + wo_begin,
                                static_cast<std::size_t>(wo_end - wo_begin) * sizeof(S));
                }
                if (wo_end < w_out) {
                    std::memset(dst + std::max<std::int64_t>(wo_end, 0), 0,
                                static_cast<std::size_t>(w_out - std::max<std::int64_t>(wo_end, 0)) * sizeof(S));
                }
            } else {
                for (std::int64_t wo = 0; wo < w_out; ++wo) {
                    const std::int64_t wi = wo * stride - pw + dx;
                    dst[wo] = (wi >= 0 && wi < w) ? src[wi] : S(0);
                }
            }
        }
    });
}

// Scatter-add of dcols back into dx; parallel over channels, each of which
// owns a disjoint slice of dx.
template <class S>
void col2im_chunk(const S* cols, std::int64_t c_in, std::int64_t h, std::int64_t w, std::int64_t kh,
                  std::int64_t kw, std::int64_t stride, std::int64_t ph, std::int64_t pw,
                  std::int64_t w_out, std::int64_t ho0, std::int64_t ho1, S* dx) {
    const std::int64_t cnt = (ho1 - ho0) * w_out;
    parallel_for(0, c_in, [&](std::int64_t c) {
        for (std::int64_t k = 0; k < kh * kw; ++k) {
            const std::int64_t dy = k / kw;
            const std::int64_t dxo = k % kw;
            const S* src_row = cols + (c * kh * kw + k) * cnt;
            for (std::int64_t ho = ho0; ho < ho1; ++ho) {
                const std::int64_t hi = ho * stride - ph + dy;
                if (hi < 0 || hi >= h) {
                    continue;
                }
                const S* src = src_row + (ho - ho0) * w_out;
                S* dst = dx + (c * h + hi) * w;
                for (std::int64_t wo = 0; wo < w_out; ++wo) {
                    const std::int64_t wi = wo * stride - pw + dxo;
                    if (wi >= 0 && wi < w) {
                        dst[wi] += src[wo];
                    }
                }
            }
        }
    });
}

constexpr std::int64_t kChunkElems = 1 << 22;  // ~16 MB float scratch per im2col chunk

std::int64_t chunk_rows_for(std::int64_t ckk, std::int64_t w_out, std::int64_t h_out) {
    const std::int64_t rows = std::max<std::int64_t>(1, kChunkElems / std::max<std::int64_t>(1, ckk * w_out));
    return std::min(rows, h_out);
}

}  // namespace

template <class S>
TensorT<S> conv2d(Tape<S>* tape, const TensorT<S>& x, const TensorT<S>& w, const TensorT<S>& bias,
                  std::int64_t stride, PadMode pad) {
    if (x.rank() != 4) {
        throw DimensionError("conv2d input must be [N,C,H,W], got " + shape_str(x.shape()));
    }
    if (w.rank() != 4) {
        throw DimensionError("conv2d weight must be [O,C,KH,KW], got " + shape_str(w.shape()));
    }
    const std::int64_t n = x.dim(0), c_in = x.dim(1), h = x.dim(2), wd = x.dim(3);
    const std::int64_t c_out = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    if (w.dim(1) != c_in) {
        throw DimensionError("conv2d channel mismatch on axis 1: input " + std::to_string(c_in) +
                             " vs weight " + std::to_string(w.dim(1)));
    }
    if (bias.numel() != 0 && (bias.rank() != 1 || bias.dim(0) != c_out)) {
        throw DimensionError("conv2d bias must be [O]");
    }
    if (stride < 1) {
        throw ContractError("conv2d stride must be >= 1");
    }
    std::int64_t ph = 0, pw = 0;
    if (pad == PadMode::same) {
        if (kh % 2 == 0 || kw % 2 == 0) {
            throw ContractError("same-padding requires odd kernel extents");
        }
        ph = (kh - 1) / 2;
        pw = (kw - 1) / 2;
    }
    const std::int64_t h_out = (h + 2 * ph - kh) / stride + 1;
    const std::int64_t w_out = (wd + 2 * pw - kw) / stride + 1;
    if (h + 2 * ph < kh || wd + 2 * pw < kw) {
        throw DimensionError("conv2d spatial extent smaller than kernel on axis 2/3: input " +
                             shape_str(x.shape()) + ", kernel " + shape_str(w.shape()));
    }

    const std::int64_t ckk = c_in * kh * kw;
    const std::int64_t hw = h_out * w_out;
    TensorT<S> out({n, c_out, h_out, w_out});

    const std::int64_t chunk = chunk_rows_for(ckk, w_out, h_out);
    std::vector<S> cols(static_cast<std::size_t>(ckk * chunk * w_out));
    const bool has_bias = bias.numel() != 0;

    for (std::int64_t i = 0; i < n; ++i) {
        const S* xi = x.data().data() + i * c_in * h * wd;
        S* oi = out.data().data() + i * c_out * hw;
        if (has_bias) {
            for (std::int64_t o = 0; o < c_out; ++o) {
                std::fill(oi + o * hw, oi + (o + 1) * hw, bias.data()[o]);
            }
        }
        for (std::int64_t ho0 = 0; ho0 < h_out; ho0 += chunk) {
            const std::int64_t ho1 = std::min(ho0 + chunk, h_out);
            const std::int64_t cnt = (ho1 - ho0) * w_out;
            im2col_chunk(xi, c_in, h, wd, kh, kw, stride, ph, pw, w_out, ho0, ho1, cols.data());
            parallel_gemm<S>(false, false, c_out, cnt, ckk, S(1), w.data().data(), ckk, cols.data(),
                             cnt, has_bias ? S(1) : S(0), oi + ho0 * w_out, hw);
        }
    }
    ensure_finite(out, "conv2d");

    std::vector<TensorT<S>> inputs = {x, w};
    if (has_bias) {
        inputs.push_back(bias);
    }
    if (should_record<S>(tape, inputs)) {
        tape->record("conv2d", inputs, out,
                     [x, w, bias, out, n, c_in, h, wd, c_out, kh, kw, stride, ph, pw, h_out, w_out,
                      ckk, hw, chunk, has_bias]() mutable {
            const bool need_dx = x.requires_grad();
            const bool need_dw = w.requires_grad();
            const bool need_db = has_bias && bias.requires_grad();
            const S* gout = out.grad().data();
            std::vector<S> cols(need_dw ? static_cast<std::size_t>(ckk * chunk * w_out) : 0);
            std::vector<S> dcols(need_dx ? static_cast<std::size_t>(ckk * chunk * w_out) : 0);
            S* gx = need_dx ? x.grad().data() : nullptr;
            S* gw = need_dw ? w.grad().data() : nullptr;
            for (std::int64_t i = 0; i < n; ++i) {
                const S* gi = gout + i * c_out * hw;
                for (std::int64_t ho0 = 0; ho0 < h_out; ho0 += chunk) {
                    const std::int64_t ho1 = std::min(ho0 + chunk, h_out);
                    const std::int64_t cnt = (ho1 - ho0) * w_out;
                    if (need_dw) {
                        im2col_chunk(x.data().data() + i * c_in * h * wd, c_in, h, wd, kh, kw,
                                     stride, ph, pw, w_out, ho0, ho1, cols.data());
                        parallel_gemm<S>(false, true, c_out, ckk, cnt, S(1), gi + ho0 * w_out, hw,
                                         cols.data(), cnt, S(1), gw, ckk);
                    }
                    if (need_dx) {
                        parallel_gemm<S>(true, false, ckk, cnt, c_out, S(1), w.data().data(), ckk,
                                         gi + ho0 * w_out, hw, S(0), dcols.data(), cnt);
                        col2im_chunk(dcols.data(), c_in, h, wd, kh, kw, stride, ph, pw, w_out, ho0,
                                     ho1, gx + i * c_in * h * wd);
                    }
                }
                if (need_db) {
                    auto gb = bias.grad();
                    for (std::int64_t o = 0; o < c_out; ++o) {
                        S acc = S(0);
                        const S* row = gi + o * hw;
                        for (std::int64_t p = 0; p < hw; ++p) {
                            acc += row[p];
                        }
                        gb[o] += acc;
                    }
                }
            }
        });
    }
    return out;
}

template <class S>
TensorT<S> conv1d(Tape<S>* tape, const TensorT<S>& x, const TensorT<S>& w, const TensorT<S>& bias,
                  PadMode pad) {
    if (x.rank() != 3) {
        throw DimensionError("conv1d input must be [N,T,D], got " + shape_str(x.shape()));
    }
    if (w.rank() != 3) {
        throw DimensionError("conv1d weight must be [O,KW,D], got " + shape_str(w.shape()));
    }
    const std::int64_t n = x.dim(0), t = x.dim(1), d = x.dim(2);
    const std::int64_t c_out = w.dim(0), kw = w.dim(1);
    if (w.dim(2) != d) {
        throw DimensionError("conv1d embedding axis mismatch on axis 2: input " + std::to_string(d) +
                             " vs weight " + std::to_string(w.dim(2)));
    }
    if (bias.numel() != 0 && (bias.rank() != 1 || bias.dim(0) != c_out)) {
        throw DimensionError("conv1d bias must be [O]");
    }
    if (pad == PadMode::same) {
        throw ContractError("conv1d supports valid padding only");
    }
    if (t < kw) {
        throw DimensionError("conv1d sequence axis 1 shorter than window: " + std::to_string(t) +
                             " < " + std::to_string(kw));
    }
    const std::int64_t t_out = t - kw + 1;
    TensorT<S> out({n, t_out, c_out});
    const bool has_bias = bias.numel() != 0;

    for (std::int64_t i = 0; i < n; ++i) {
        const S* xi = x.data().data() + i * t * d;
        S* oi = out.data().data() + i * t_out * c_out;
        if (has_bias) {
            for (std::int64_t tt = 0; tt < t_out; ++tt) {
                std::memcpy(oi + tt * c_out, bias.data().data(),
                            static_cast<std::size_t>(c_out) * sizeof(S));
            }
        } else {
            std::memset(oi, 0, static_cast<std::size_t>(t_out * c_out) * sizeof(S));
        }
        for (std::int64_t k = 0; k < kw; ++k) {
            // out[t,o] += x[t+k,:] . w[o,k,:]
            parallel_gemm<S>(false, true, t_out, c_out, d, S(1), xi + k * d, d,
                             w.data().data() + k * d, kw * d, S(1), oi, c_out);
        }
    }
    ensure_finite(out, "conv1d");

    std::vector<TensorT<S>> inputs = {x, w};
    if (has_bias) {
        inputs.push_back(bias);
    }
    if (should_record<S>(tape, inputs)) {
        tape->record("conv1d", inputs, out,
                     [x, w, bias, out, n, t, d, c_out, kw, t_out, has_bias]() mutable {
            const bool need_dx = x.requires_grad();
            const bool need_dw = w.requires_grad();
            const bool need_db = has_bias && bias.requires_grad();
            const S* gout = out.grad().data();
            S* gx = need_dx ? x.grad().data() : nullptr;
            S* gw = need_dw ? w.grad().data() : nullptr;
            for (std::int64_t i = 0; i < n; ++i) {
                const S* gi = gout + i * t_out * c_out;
                for (std::int64_t k = 0; k < kw; ++k) {
                    if (need_dx) {
                        parallel_gemm<S>(false, false, t_out, d, c_out, S(1), gi, c_out,
                                         w.data().data() + k * d, kw * d, S(1), gx + i * t * d + k * d, d);
                    }
                    if (need_dw) {
                        parallel_gemm<S>(true, false, c_out, d, t_out, S(1), gi, c_out,
                                         x.data().data() + i * t * d + k * d, d, S(1), gw + k * d,
                                         kw * d);
                    }
                }
                if (need_db) {
                    auto gb = bias.grad();
                    for (std::int64_t tt = 0; tt < t_out; ++tt) {
                        for (std::int64_t o = 0; o < c_out; ++o) {
                            gb[o] += gi[tt * c_out + o];
                        }
                    }
                }
            }
        });
    }
    return out;
}

template <class S>
TensorT<S> maxpool2d(Tape<S>* tape, const TensorT<S>& x, std::int64_t window, std::int64_t stride) {
    if (x.rank() != 4) {
        throw DimensionError("maxpool2d input must be [N,C,H,W], got " + shape_str(x.shape()));
    }
    if (window < 1 || stride < 1) {
        throw ContractError("maxpool2d window and stride must be >= 1");
    }
    const std::int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (h < window || w < window) {
        throw DimensionError("maxpool2d window larger than spatial axis 2/3 of " +
                             shape_str(x.shape()));
    }
    const std::int64_t h_out = (h - window) / stride + 1;
    const std::int64_t w_out = (w - window) / stride + 1;
    TensorT<S> out({n, c, h_out, w_out});
    auto argmax = std::make_shared<std::vector<std::int64_t>>(
        static_cast<std::size_t>(n * c * h_out * w_out));

    parallel_for(0, n * c, [&](std::int64_t g) {
        const S* xp = x.data().data() + g * h * w;
        S* op = out.data().data() + g * h_out * w_out;
        std::int64_t* ap = argmax->data() + g * h_out * w_out;
        for (std::int64_t ho = 0; ho < h_out; ++ho) {
            for (std::int64_t wo = 0; wo < w_out; ++wo) {
                const std::int64_t hi0 = ho * stride, wi0 = wo * stride;
                S best = xp[hi0 * w + wi0];
                std::int64_t best_at = hi0 * w + wi0;
                for (std::int64_t kh = 0; kh < window; ++kh) {
                    for (std::int64_t kw = 0; kw < window; ++kw) {
                        const std::int64_t at = (hi0 + kh) * w + (wi0 + kw);
                        if (xp[at] > best) {
                            best = xp[at];
                            best_at = at;
                        }
                    }
                }
                op[ho * w_out + wo] = best;
                ap[ho * w_out + wo] = best_at;
            }
        }
    });
    ensure_finite(out, "maxpool2d");
    if (should_record<S>(tape, {x})) {
        tape->record("maxpool2d", {x}, out, [x, out, argmax, n, c, h, w, h_out, w_out]() mutable {
            const S* g = out.grad().data();
            S* gx = x.grad().data();
            const std::int64_t per = h_out * w_out;
            for (std::int64_t grp = 0; grp < n * c; ++grp) {
                const std::int64_t* ap = argmax->data() + grp * per;
                const S* gp = g + grp * per;
                S* gxp = gx + grp * h * w;
                for (std::int64_t p = 0; p < per; ++p) {
                    gxp[ap[p]] += gp[p];
                }
            }
        });
    }
    return out;
}

template <class S>
TensorT<S> global_maxpool2d(Tape<S>* tape, const TensorT<S>& x) {
    if (x.rank() != 4) {
        throw DimensionError("global-maxpool-2d input must be [N,C,H,W], got " +
                             shape_str(x.shape()));
    }
    const std::int64_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    TensorT<S> out({n, c});
    auto argmax = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(n * c));
    parallel_for(0, n * c, [&](std::int64_t g) {
        const S* xp = x.data().data() + g * hw;
        S best = xp[0];
        std::int64_t best_at = 0;
        for (std::int64_t p = 1; p < hw; ++p) {
            if (xp[p] > best) {
                best = xp[p];
                best_at = p;
            }
        }
        out.data()[g] = best;
        (*argmax)[static_cast<std::size_t>(g)] = best_at;
    });
    ensure_finite(out, "global-maxpool-2d");
    if (should_record<S>(tape, {x})) {
        tape->record("global-maxpool-2d", {x}, out, [x, out, argmax, n, c, hw]() mutable {
            const S* g = out.grad().data();
            S* gx = x.grad().data();
            for (std::int64_t grp = 0; grp < n * c; ++grp) {
                gx[grp * hw + (*argmax)[static_cast<std::size_t>(grp)]] += g[grp];
            }
        });
    }
    return out;
}

template <class S>
TensorT<S> maxpool1d(Tape<S>* tape, const TensorT<S>& x, std::int64_t window) {
    if (x.rank() != 3) {
        throw DimensionError("maxpool1d input must be [N,T,D], got " + shape_str(x.shape()));
    }
    if (window < 1) {
        throw ContractError("maxpool1d window must be >= 1");
    }
    const std::int64_t n = x.dim(0), t = x.dim(1), d = x.dim(2);
    if (t < window) {
        throw DimensionError("maxpool1d window larger than sequence axis 1 of " +
                             shape_str(x.shape()));
    }
    const std::int64_t t_out = (t - window) / window + 1;  // floor(t / window)
    TensorT<S> out({n, t_out, d});
    auto argmax = std::make_shared<std::vector<std::int32_t>>(
        static_cast<std::size_t>(n * t_out * d));
    parallel_for(0, n, [&](std::int64_t i) {
        const S* xp = x.data().data() + i * t * d;
        S* op = out.data().data() + i * t_out * d;
        std::int32_t* ap = argmax->data() + i * t_out * d;
        for (std::int64_t to = 0; to < t_out; ++to) {
            const std::int64_t ti0 = to * window;
            S* orow = op + to * d;
            std::int32_t* arow = ap + to * d;
            std::memcpy(orow, xp + ti0 * d, static_cast<std::size_t>(d) * sizeof(S));
            for (std::int64_t j = 0; j < d; ++j) {
                arow[j] = static_cast<std::int32_t>(ti0);
            }
            for (std::int64_t k = 1; k < window; ++k) {
                const S* row = xp + (ti0 + k) * d;
                for (std::int64_t j = 0; j < d; ++j) {
                    if (row[j] > orow[j]) {
                        orow[j] = row[j];
                        arow[j] = static_cast<std::int32_t>(ti0 + k);
                    }
                }
            }
        }
    });
    ensure_finite(out, "maxpool1d");
    if (should_record<S>(tape, {x})) {
        tape->record("maxpool1d", {x}, out, [x, out, argmax, n, t, d, t_out]() mutable {
            const S* g = out.grad().data();
            S* gx = x.grad().data();
            for (std::int64_t i = 0; i < n; ++i) {
                const S* gp = g + i * t_out * d;
                const std::int32_t* ap = argmax->data() + i * t_out * d;
                S* gxp = gx + i * t * d;
                for (std::int64_t p = 0; p < t_out * d; ++p) {
                    const std::int64_t j = p % d;
                    gxp[static_cast<std::int64_t>(ap[p]) * d + j] += gp[p];
                }
            }
        });
    }
    return out;
}

template <class S>
TensorT<S> global_maxpool1d(Tape<S>* tape, const TensorT<S>& x) {
    if (x.rank() != 3) {
        throw DimensionError("global-maxpool-1d input must be [N,T,D], got " +
                             shape_str(x.shape()));
    }
    const std::int64_t n = x.dim(0), t = x.dim(1), d = x.dim(2);
    TensorT<S> out({n, d});
    auto argmax = std::make_shared<std::vector<std::int32_t>>(static_cast<std::size_t>(n * d));
    parallel_for(0, n, [&](std::int64_t i) {
        const S* xp = x.data().data() + i * t * d;
        S* op = out.data().data() + i * d;
        std::int32_t* ap = argmax->data() + i * d;
        std::memcpy(op, xp, static_cast<std::size_t>(d) * sizeof(S));
        std::memset(ap, 0, static_cast<std::size_t>(d) * sizeof(std::int32_t));
        for (std::int64_t tt = 1; tt < t; ++tt) {
            const S* row = xp + tt * d;
            for (std::int64_t j = 0; j < d; ++j) {
                if (row[j] > op[j]) {
                    op[j] = row[j];
                    ap[j] = static_cast<std::int32_t>(tt);
                }
            }
        }
    });
    ensure_finite(out, "global-maxpool-1d");
    if (should_record<S>(tape, {x})) {
        tape->record("global-maxpool-1d", {x}, out, [x, out, argmax, n, t, d]() mutable {
            const S* g = out.grad().data();
            S* gx = x.grad().data();
            for (std::int64_t i = 0; i < n; ++i) {
                for (std::int64_t j = 0; j < d; ++j) {
                    const auto tt = (*argmax)[static_cast<std::size_t>(i * d + j)];
                    gx[i * t * d + static_cast<std::int64_t>(tt) * d + j] += g[i * d + j];
                }
            }
        });
    }
    return out;
}

template <class S>
TensorT<S> batchnorm(Tape<S>* tape, const TensorT<S>& x, const TensorT<S>& gamma,
                     const TensorT<S>& beta, const TensorT<S>& running_mean,
                     const TensorT<S>& running_var, BnMode mode, double momentum, double eps) {
    if (x.rank() != 4 && x.rank() != 2) {
        throw DimensionError("batchnorm input must be [N,C,H,W] or [N,F], got " +
                             shape_str(x.shape()));
    }
    const std::int64_t n = x.dim(0), c = x.dim(1);
    const std::int64_t spatial = x.rank() == 4 ? x.dim(2) * x.dim(3) : 1;
    for (const auto* t : {&gamma, &beta, &running_mean, &running_var}) {
        if (t->rank() != 1 || t->dim(0) != c) {
            throw DimensionError("batchnorm parameter length does not match channel axis 1 (" +
                                 std::to_string(c) + ")");
        }
    }
    if (mode == BnMode::train && n < 2) {
        throw ContractError("batchnorm: degenerate statistics, train mode requires batch >= 2");
    }

    const std::int64_t m = n * spatial;
    auto mean_v = std::make_shared<std::vector<S>>(static_cast<std::size_t>(c));
    auto invstd_v = std::make_shared<std::vector<S>>(static_cast<std::size_t>(c));

    if (mode == BnMode::train) {
        parallel_for(0, c, [&](std::int64_t ch) {
            double acc = 0.0;
            for (std::int64_t i = 0; i < n; ++i) {
                const S* p = x.data().data() + (i * c + ch) * spatial;
                for (std::int64_t s = 0; s < spatial; ++s) {
                    acc += static_cast<double>(p[s]);
                }
            }
            const double mu = acc / static_cast<double>(m);
            double var = 0.0;
            for (std::int64_t i = 0; i < n; ++i) {
                const S* p = x.data().data() + (i * c + ch) * spatial;
                for (std::int64_t s = 0; s < spatial; ++s) {
                    const double d = static_cast<double>(p[s]) - mu;
                    var += d * d;
                }
            }
            var /= static_cast<double>(m);
            (*mean_v)[static_cast<std::size_t>(ch)] = static_cast<S>(mu);
            (*invstd_v)[static_cast<std::size_t>(ch)] = static_cast<S>(1.0 / std::sqrt(var + eps));
            running_mean.data()[ch] = static_cast<S>(momentum * running_mean.data()[ch] + (1.0 - momentum) * mu);
            running_var.data()[ch] = static_cast<S>(momentum * running_var.data()[ch] + (1.0 - momentum) * var);
        });
    } else {
        for (std::int64_t ch = 0; ch < c; ++ch) {
            (*mean_v)[static_cast<std::size_t>(ch)] = running_mean.data()[ch];
            (*invstd_v)[static_cast<std::size_t>(ch)] =
                static_cast<S>(1.0 / std::sqrt(static_cast<double>(running_var.data()[ch]) + eps));
        }
    }

    TensorT<S> out(x.shape());
    parallel_for(0, n, [&](std::int64_t i) {
        for (std::int64_t ch = 0; ch < c; ++ch) {
            const S mu = (*mean_v)[static_cast<std::size_t>(ch)];
            const S is = (*invstd_v)[static_cast<std::size_t>(ch)];
            const S g = gamma.data()[ch];
            const S b = beta.data()[ch];
            const S* p = x.data().data() + (i * c + ch) * spatial;
            S* o = out.data().data() + (i * c + ch) * spatial;
            for (std::int64_t s = 0; s < spatial; ++s) {
                o[s] = (p[s] - mu) * is * g + b;
            }
        }
    });
    ensure_finite(out, "batchnorm");

    if (should_record<S>(tape, {x, gamma, beta})) {
        const bool train = mode == BnMode::train;
        tape->record("batchnorm", {x, gamma, beta}, out,
                     [x, gamma, beta, out, mean_v, invstd_v, n, c, spatial, m, train]() mutable {
            const S* g = out.grad().data();
            // per-channel sums of dy and dy*xhat, in fixed channel order
            std::vector<S> sum_dy(static_cast<std::size_t>(c), S(0));
            std::vector<S> sum_dy_xhat(static_cast<std::size_t>(c), S(0));
            parallel_for(0, c, [&](std::int64_t ch) {
                const S mu = (*mean_v)[static_cast<std::size_t>(ch)];
                const S is = (*invstd_v)[static_cast<std::size_t>(ch)];
                double s1 = 0.0, s2 = 0.0;
                for (std::int64_t i = 0; i < n; ++i) {
                    const S* gp = g + (i * c + ch) * spatial;
                    const S* xp = x.data().data() + (i * c + ch) * spatial;
                    for (std::int64_t s = 0; s < spatial; ++s) {
                        s1 += static_cast<double>(gp[s]);
                        s2 += static_cast<double>(gp[s]) * ((xp[s] - mu) * is);
                    }
                }
                sum_dy[static_cast<std::size_t>(ch)] = static_cast<S>(s1);
                sum_dy_xhat[static_cast<std::size_t>(ch)] = static_cast<S>(s2);
            });
            if (beta.requires_grad()) {
                auto gb = beta.grad();
                for (std::int64_t ch = 0; ch < c; ++ch) {
                    gb[ch] += sum_dy[static_cast<std::size_t>(ch)];
                }
            }
            if (gamma.requires_grad()) {
                auto gg = gamma.grad();
                for (std::int64_t ch = 0; ch < c; ++ch) {
                    gg[ch] += sum_dy_xhat[static_cast<std::size_t>(ch)];
                }
            }
            if (x.requires_grad()) {
                S* gx = x.grad().data();
                parallel_for(0, n, [&](std::int64_t i) {
                    for (std::int64_t ch = 0; ch < c; ++ch) {
                        const S mu = (*mean_v)[static_cast<std::size_t>(ch)];
                        const S is = (*invstd_v)[static_cast<std::size_t>(ch)];
                        const S ga = gamma.data()[ch];
                        const S* gp = g + (i * c + ch) * spatial;
                        const S* xp = x.data().data() + (i * c + ch) * spatial;
                        S* gxp = gx + (i * c + ch) * spatial;
                        if (train) {
                            const S sdy = sum_dy[static_cast<std::size_t>(ch)];
                            const S sdyx = sum_dy_xhat[static_cast<std::size_t>(ch)];
                            const S scale = ga * is / static_cast<S>(m);
                            for (std::int64_t s = 0; s < spatial; ++s) {
                                const S xhat = (xp[s] - mu) * is;
                                gxp[s] += scale * (static_cast<S>(m) * gp[s] - sdy - xhat * sdyx);
                            }
                        } else {
                            const S scale = ga * is;
                            for (std::int64_t s = 0; s < spatial; ++s) {
                                gxp[s] += scale * gp[s];
                            }
                        }
                    }
                });
            }
        });
    }
    return out;
}

#define FCC_INSTANTIATE_CONV(S)                                                                     \
    template TensorT<S> conv2d<S>(Tape<S>*, const TensorT<S>&, const TensorT<S>&,                  \
                                  const TensorT<S>&, std::int64_t, PadMode);                       \
    template TensorT<S> conv1d<S>(Tape<S>*, const TensorT<S>&, const TensorT<S>&,                  \
                                  const TensorT<S>&, PadMode);                                     \
    template TensorT<S> maxpool2d<S>(Tape<S>*, const TensorT<S>&, std::int64_t, std::int64_t);     \
    template TensorT<S> global_maxpool2d<S>(Tape<S>*, const TensorT<S>&);                          \
    template TensorT<S> maxpool1d<S>(Tape<S>*, const TensorT<S>&, std::int64_t);                   \
    template TensorT<S> global_maxpool1d<S>(Tape<S>*, const TensorT<S>&);                          \
    template TensorT<S> batchnorm<S>(Tape<S>*, const TensorT<S>&, const TensorT<S>&,               \
                                     const TensorT<S>&, const TensorT<S>&, const TensorT<S>&,      \
                                     BnMode, double, double);

FCC_INSTANTIATE_CONV(float)
FCC_INSTANTIATE_CONV(double)

#undef FCC_INSTANTIATE_CONV

}  // namespace fcc::ops
