#include "fcc/gradsuite.hpp"

#include <chrono>
#include <cmath>

#include "fcc/layers.hpp"
#include "fcc/ops.hpp"

namespace fcc {

namespace {

double now_seconds() {
    return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
}

// top-2 gap across non-overlapping pooling windows over the time axis
template <class S>
double min_margin_1d(const TensorT<S>& x, std::int64_t window) {
    const std::int64_t n = x.dim(0), t = x.dim(1), d = x.dim(2);
    const std::int64_t t_out = (t - window) / window + 1;
    double worst = 1e30;
    for (std::int64_t i = 0; i < n; ++i) {
        for (std::int64_t to = 0; to < t_out; ++to) {
            for (std::int64_t j = 0; j < d; ++j) {
                double best = -1e30, second = -1e30;
                for (std::int64_t k = 0; k < window; ++k) {
                    const double v = x.data()[(i * t + to * window + k) * d + j];
                    if (v > best) {
                        second = best;
                        best = v;
                    } else if (v > second) {
                        second = v;
                    }
                }
                worst = std::min(worst, best - second);
            }
        }
    }
    return worst;
}

template <class S>
double min_margin_global_1d(const TensorT<S>& x) {
    const std::int64_t n = x.dim(0), t = x.dim(1), d = x.dim(2);
    double worst = 1e30;
    for (std::int64_t i = 0; i < n; ++i) {
        for (std::int64_t j = 0; j < d; ++j) {
            double best = -1e30, second = -1e30;
            for (std::int64_t tt = 0; tt < t; ++tt) {
                const double v = x.data()[(i * t + tt) * d + j];
                if (v > best) {
                    second = best;
                    best = v;
                } else if (v > second) {
                    second = v;
                }
            }
            worst = std::min(worst, best - second);
        }
    }
    return worst;
}

template <class S>
double min_margin_2d(const TensorT<S>& x, std::int64_t window, std::int64_t stride) {
    const std::int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::int64_t ho = (h - window) / stride + 1, wo = (w - window) / stride + 1;
    double worst = 1e30;
    for (std::int64_t g = 0; g < n * c; ++g) {
        const S* p = x.data().data() + g * h * w;
        for (std::int64_t y = 0; y < ho; ++y) {
            for (std::int64_t xx = 0; xx < wo; ++xx) {
                double best = -1e30, second = -1e30;
                for (std::int64_t ky = 0; ky < window; ++ky) {
                    for (std::int64_t kx = 0; kx < window; ++kx) {
                        const double v = p[(y * stride + ky) * w + (xx * stride + kx)];
                        if (v > best) {
                            second = best;
                            best = v;
                        } else if (v > second) {
                            second = v;
                        }
                    }
                }
                worst = std::min(worst, best - second);
            }
        }
    }
    return worst;
}

template <class S>
double min_margin_global_2d(const TensorT<S>& x) {
    const std::int64_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    double worst = 1e30;
    for (std::int64_t g = 0; g < n * c; ++g) {
        const S* p = x.data().data() + g * hw;
        double best = -1e30, second = -1e30;
        for (std::int64_t i = 0; i < hw; ++i) {
            if (p[i] > best) {
                second = best;
                best = p[i];
            } else if (p[i] > second) {
                second = p[i];
            }
        }
        worst = std::min(worst, best - second);
    }
    return worst;
}

template <class S>
struct SuiteBuilder {
    SuiteResult& result;
    double tolerance;
    double step;
    double margin;  // minimum pooling top-2 gap for an admissible draw
    std::uint64_t seed;

    std::mt19937 rng_for(std::uint64_t case_id, std::uint64_t attempt) const {
        std::seed_seq seq{seed, case_id, attempt};
        return std::mt19937(seq);
    }

    void run(const std::string& name, const SubgraphBuilder<S>& builder,
             std::vector<TensorT<S>> params, const std::vector<std::string>& names) {
        auto report = gradient_check<S>(builder, std::move(params), names, tolerance, step);
        for (const auto& e : report.entries) {
            result.entries.push_back({name, e.name, e.max_rel_error, e.pass});
        }
    }
};

template <class S>
void add_primitive_cases(SuiteBuilder<S>& sb, std::uint64_t seed_idx) {
    using ops::PadMode;
    const std::string tag = "seed" + std::to_string(seed_idx) + "/";

    {  // matmul + add(bias) + relu + mean
        auto rng = sb.rng_for(1, 0);
        auto x = uniform_tensor<S>({3, 4}, S(-1), S(1), rng);
        auto w = uniform_tensor<S>({4, 2}, S(-1), S(1), rng);
        auto b = uniform_tensor<S>({2}, S(-0.3), S(0.3), rng);
        sb.run(tag + "matmul-add-relu",
               [x](Tape<S>* t, std::vector<TensorT<S>>& p) {
                   return ops::mean(t, ops::relu(t, ops::add(t, ops::matmul(t, x, p[0]), p[1])));
               },
               {w, b}, {"w", "b"});
    }
    {  // elementwise-mul + l2-norm
        auto rng = sb.rng_for(2, 0);
        auto a = uniform_tensor<S>({6}, S(-1), S(1), rng);
        auto b = uniform_tensor<S>({6}, S(-1), S(1), rng);
        sb.run(tag + "elementwise-mul",
               [b](Tape<S>* t, std::vector<TensorT<S>>& p) {
                   return ops::l2_norm(t, ops::elementwise_mul(t, p[0], b));
               },
               {a}, {"a"});
    }
    {  // concat along the feature axis
        auto rng = sb.rng_for(3, 0);
        auto a = uniform_tensor<S>({2, 3}, S(-1), S(1), rng);
        auto b = uniform_tensor<S>({2, 2}, S(-1), S(1), rng);
        sb.run(tag + "concat",
               [](Tape<S>* t, std::vector<TensorT<S>>& p) {
                   return ops::l2_norm(t, ops::concat(t, {p[0], p[1]}, 1));
               },
               {a, b}, {"a", "b"});
    }
    {  // conv2d, same padding
        auto rng = sb.rng_for(4, 0);
        auto x = uniform_tensor<S>({1, 2, 7, 7}, S(-1), S(1), rng);
        auto w = uniform_tensor<S>({3, 2, 3, 3}, S(-0.5), S(0.5), rng);
        auto b = uniform_tensor<S>({3}, S(-0.2), S(0.2), rng);
        sb.run(tag + "conv2d-same",
               [x](Tape<S>* t, std::vector<TensorT<S>>& p) {
                   return ops::l2_norm(t, ops::conv2d(t, x, p[0], p[1], 1, PadMode::same));
               },
               {w, b}, {"w", "b"});
        sb.run(tag + "conv2d-same-dx",
               [w, b](Tape<S>* t, std::vector<TensorT<S>>& p) {
                   return ops::l2_norm(t, ops::conv2d(t, p[0], w, b, 1, PadMode::same));
               },
               {x}, {"x"});
    }
    {  // conv2d, valid, stride 2
        auto rng = sb.rng_for(5, 0);
        auto x = uniform_tensor<S>({2, 2, 8, 8}, S(-1), S(1), rng);
        auto w = uniform_tensor<S>({2, 2, 3, 3}, S(-0.5), S(0.5), rng);
        sb.run(tag + "conv2d-valid-s2",
               [x](Tape<S>* t, std::vector<TensorT<S>>& p) {
                   return ops::l2_norm(t, ops::conv2d(t, x, p[0], TensorT<S>(), 2, PadMode::valid));
               },
               {w}, {"w"});
    }
    {  // maxpool2d on the input, margin-guarded
        for (std::uint64_t attempt = 0; attempt < 64; ++attempt) {
            auto rng = sb.rng_for(6, attempt);
            auto x = uniform_tensor<S>({1, 2, 6, 6}, S(-2), S(2), rng);
            if (min_margin_2d(x, 2, 2) < sb.margin) {
                continue;
            }
            sb.run(tag + "maxpool2d",
                   [](Tape<S>* t, std::vector<TensorT<S>>& p) {
                       return ops::l2_norm(t, ops::maxpool2d(t, p[0], 2, 2));
                   },
                   {x}, {"x"});
            break;
        }
    }
    {  // global-maxpool-2d
        for (std::uint64_t attempt = 0; attempt < 64; ++attempt) {
            auto rng = sb.rng_for(7, attempt);
            auto x = uniform_tensor<S>({1, 3, 5, 5}, S(-2), S(2), rng);
            if (min_margin_global_2d(x) < sb.margin) {
                continue;
            }
            sb.run(tag + "global-maxpool-2d",
                   [](Tape<S>* t, std::vector<TensorT<S>>& p) {
                       return ops::l2_norm(t, ops::global_maxpool2d(t, p[0]));
                   },
                   {x}, {"x"});
            break;
        }
    }
    {  // conv1d
        auto rng = sb.rng_for(8, 0);
        auto x = uniform_tensor<S>({2, 9, 3}, S(-1), S(1), rng);
        auto w = uniform_tensor<S>({4, 5, 3}, S(-0.5), S(0.5), rng);
        auto b = uniform_tensor<S>({4}, S(-0.2), S(0.2), rng);
        sb.run(tag + "conv1d",
               [x](Tape<S>* t, std::vector<TensorT<S>>& p) {
                   return ops::l2_norm(t, ops::conv1d(t, x, p[0], p[1], PadMode::valid));
               },
               {w, b}, {"w", "b"});
        sb.run(tag + "conv1d-dx",
               [w, b](Tape<S>* t, std::vector<TensorT<S>>& p) {
                   return ops::l2_norm(t, ops::conv1d(t, p[0], w, b, PadMode::valid));
               },
               {x}, {"x"});
    }
    {  // maxpool1d
        for (std::uint64_t attempt = 0; attempt < 64; ++attempt) {
            auto rng = sb.rng_for(9, attempt);
            auto x = uniform_tensor<S>({1, 8, 2}, S(-2), S(2), rng);
            if (min_margin_1d(x, 2) < sb.margin) {
                continue;
            }
            sb.run(tag + "maxpool1d",
                   [](Tape<S>* t, std::vector<TensorT<S>>& p) {
                       return ops::l2_norm(t, ops::maxpool1d(t, p[0], 2));
                   },
                   {x}, {"x"});
            break;
        }
    }
    {  // global-maxpool-1d
        for (std::uint64_t attempt = 0; attempt < 64; ++attempt) {
            auto rng = sb.rng_for(10, attempt);
            auto x = uniform_tensor<S>({1, 7, 3}, S(-2), S(2), rng);
            if (min_margin_global_1d(x) < sb.margin) {
                continue;
            }
            sb.run(tag + "global-maxpool-1d",
                   [](Tape<S>* t, std::vector<TensorT<S>>& p) {
                       return ops::l2_norm(t, ops::global_maxpool1d(t, p[0]));
                   },
                   {x}, {"x"});
            break;
        }
    }
    {  // embedding-lookup with a repeated id (tests scatter accumulation)
        auto rng = sb.rng_for(11, 0);
        auto table = uniform_tensor<S>({5, 4}, S(-1), S(1), rng);
        sb.run(tag + "embedding-lookup",
               [](Tape<S>* t, std::vector<TensorT<S>>& p) {
                   return ops::l2_norm(t, ops::embedding_lookup(t, p[0], {1, 3, 3, 0}, {4}));
               },
               {table}, {"table"});
    }
    {  // batchnorm train, 2-d input
        auto rng = sb.rng_for(12, 0);
        auto x = uniform_tensor<S>({4, 3}, S(-2), S(2), rng);
        auto gamma = uniform_tensor<S>({3}, S(0.5), S(1.5), rng);
        auto beta = uniform_tensor<S>({3}, S(-0.5), S(0.5), rng);
        auto rm = TensorT<S>({3});
        auto rv = TensorT<S>({3}, S(1));
        sb.run(tag + "batchnorm-train",
               [rm, rv](Tape<S>* t, std::vector<TensorT<S>>& p) mutable {
                   auto y = ops::batchnorm(t, p[0], p[1], p[2], rm, rv, ops::BnMode::train);
                   return ops::l2_norm(t, y);
               },
               {x, gamma, beta}, {"x", "gamma", "beta"});
    }
    {  // batchnorm train, 4-d input
        auto rng = sb.rng_for(13, 0);
        auto x = uniform_tensor<S>({2, 2, 3, 3}, S(-2), S(2), rng);
        auto gamma = uniform_tensor<S>({2}, S(0.5), S(1.5), rng);
        auto beta = uniform_tensor<S>({2}, S(-0.5), S(0.5), rng);
        auto rm = TensorT<S>({2});
        auto rv = TensorT<S>({2}, S(1));
        sb.run(tag + "batchnorm-train-4d",
               [rm, rv](Tape<S>* t, std::vector<TensorT<S>>& p) mutable {
                   auto y = ops::batchnorm(t, p[0], p[1], p[2], rm, rv, ops::BnMode::train);
                   return ops::l2_norm(t, y);
               },
               {x, gamma, beta}, {"x", "gamma", "beta"});
    }
    {  // batchnorm infer
        auto rng = sb.rng_for(14, 0);
        auto x = uniform_tensor<S>({2, 3}, S(-2), S(2), rng);
        auto gamma = uniform_tensor<S>({3}, S(0.5), S(1.5), rng);
        auto beta = uniform_tensor<S>({3}, S(-0.5), S(0.5), rng);
        auto rm = uniform_tensor<S>({3}, S(-0.5), S(0.5), rng);
        auto rv = uniform_tensor<S>({3}, S(0.5), S(1.5), rng);
        sb.run(tag + "batchnorm-infer",
               [rm, rv](Tape<S>* t, std::vector<TensorT<S>>& p) mutable {
                   auto y = ops::batchnorm(t, p[0], p[1], p[2], rm, rv, ops::BnMode::infer);
                   return ops::l2_norm(t, y);
               },
               {x, gamma, beta}, {"x", "gamma", "beta"});
    }
    {  // log-softmax + nll-loss
        auto rng = sb.rng_for(15, 0);
        auto x = uniform_tensor<S>({3, 4}, S(-2), S(2), rng);
        sb.run(tag + "log-softmax-nll",
               [](Tape<S>* t, std::vector<TensorT<S>>& p) {
                   return ops::nll_loss(t, ops::log_softmax(t, p[0]), {0, 2, 1});
               },
               {x}, {"x"});
    }
    {  // mean and l2-norm on their own
        auto rng = sb.rng_for(16, 0);
        auto x = uniform_tensor<S>({7}, S(-2), S(2), rng);
        sb.run(tag + "mean",
               [](Tape<S>* t, std::vector<TensorT<S>>& p) { return ops::mean(t, p[0]); }, {x},
               {"x"});
        auto y = uniform_tensor<S>({5}, S(0.5), S(2), rng);
        sb.run(tag + "l2-norm",
               [](Tape<S>* t, std::vector<TensorT<S>>& p) { return ops::l2_norm(t, p[0]); }, {y},
               {"y"});
    }
}

template <class S>
void add_layer_cases(SuiteBuilder<S>& sb, std::uint64_t seed_idx) {
    const std::string tag = "seed" + std::to_string(seed_idx) + "/";

    {  // dense layer 3 -> 2
        auto rng = sb.rng_for(21, 0);
        DenseT<S> dense;
        dense.init(3, 2, "dense", rng);
        auto x = uniform_tensor<S>({4, 3}, S(-1), S(1), rng);
        sb.run(tag + "layer-dense",
               [x, dense](Tape<S>* t, std::vector<TensorT<S>>& p) {
                   DenseT<S> d = dense;
                   d.w.value = p[0];
                   d.b.value = p[1];
                   return ops::mean(t, ops::relu(t, d.forward(t, x)));
               },
               {dense.w.value, dense.b.value}, {"dense.w", "dense.b"});
    }
    {  // 2-d conv block (conv-bn-relu x2 + pool), margin-guarded
        for (std::uint64_t attempt = 0; attempt < 64; ++attempt) {
            auto rng = sb.rng_for(22, attempt);
            ConvBlock2dT<S> block;
            block.init(2, 3, false, "block", rng);
            auto x = uniform_tensor<S>({2, 2, 6, 6}, S(-1), S(1), rng);
            auto pre = ops::relu<S>(
                nullptr, block.bn2.forward(nullptr, block.conv2.forward(
                    nullptr, ops::relu<S>(nullptr, block.bn1.forward(
                        nullptr, block.conv1.forward(nullptr, x), ops::BnMode::train))),
                    ops::BnMode::train));
            if (min_margin_2d(pre, 2, 2) < sb.margin) {
                continue;
            }
            std::vector<TensorT<S>> params;
            std::vector<std::string> names;
            for (auto* p : block.params()) {
                if (p->trainable) {
                    params.push_back(p->value);
                    names.push_back(p->name);
                }
            }
            sb.run(tag + "layer-conv-block-2d",
                   [x, block](Tape<S>* t, std::vector<TensorT<S>>& p) {
                       ConvBlock2dT<S> b = block;
                       b.conv1.w.value = p[0];
                       b.conv1.b.value = p[1];
                       b.bn1.gamma.value = p[2];
                       b.bn1.beta.value = p[3];
                       b.conv2.w.value = p[4];
                       b.conv2.b.value = p[5];
                       b.bn2.gamma.value = p[6];
                       b.bn2.beta.value = p[7];
                       // fresh running stats per evaluation keep the builder pure
                       b.bn1.running_mean.value = TensorT<S>({3});
                       b.bn1.running_var.value = TensorT<S>({3}, S(1));
                       b.bn2.running_mean.value = TensorT<S>({3});
                       b.bn2.running_var.value = TensorT<S>({3}, S(1));
                       return ops::mean(t, b.forward(t, x, ops::BnMode::train));
                   },
                   params, names);
            break;
        }
    }
    {  // 1-d conv block, terminal (global pool), margin-guarded
        for (std::uint64_t attempt = 0; attempt < 64; ++attempt) {
            auto rng = sb.rng_for(23, attempt);
            ConvBlock1dT<S> block;
            block.init(3, 4, 5, true, "block", rng);
            auto x = uniform_tensor<S>({2, 12, 3}, S(-1), S(1), rng);
            auto pre = ops::relu<S>(nullptr, block.conv.forward(nullptr, x));
            if (min_margin_global_1d(pre) < sb.margin) {
                continue;
            }
            sb.run(tag + "layer-conv-block-1d",
                   [x, block](Tape<S>* t, std::vector<TensorT<S>>& p) {
                       ConvBlock1dT<S> b = block;
                       b.conv.w.value = p[0];
                       b.conv.b.value = p[1];
                       return ops::mean(t, b.forward(t, x));
                   },
                   {block.conv.w.value, block.conv.b.value}, {"conv.w", "conv.b"});
            break;
        }
    }
    {  // embedding layer feeding a pooled reduction
        auto rng = sb.rng_for(24, 0);
        EmbeddingT<S> emb;
        emb.init(6, 4, "emb", rng);
        sb.run(tag + "layer-embedding",
               [emb](Tape<S>* t, std::vector<TensorT<S>>& p) {
                   EmbeddingT<S> e = emb;
                   e.table.value = p[0];
                   auto rows = e.forward(t, {2, 5, 5, 1, 0, 3}, {1, 6});
                   return ops::l2_norm(t, rows);
               },
               {emb.table.value}, {"emb.table"});
    }
}

template <class S>
SuiteResult run_suite(std::uint64_t base_seed, int num_seeds) {
    SuiteResult result;
    result.tolerance = default_gradcheck_tolerance<S>();
    const double t0 = now_seconds();
    for (int s = 0; s < num_seeds; ++s) {
        SuiteBuilder<S> sb{result, default_gradcheck_tolerance<S>(), default_gradcheck_step<S>(),
                           sizeof(S) == sizeof(float) ? 5e-2 : 1e-3,
                           base_seed + static_cast<std::uint64_t>(s) * 1000003ULL};
        add_primitive_cases(sb, static_cast<std::uint64_t>(s));
        add_layer_cases(sb, static_cast<std::uint64_t>(s));
    }
    result.seconds = now_seconds() - t0;
    return result;
}

}  // namespace

SuiteResult run_gradient_suite(std::uint64_t base_seed, int num_seeds, bool use_float64) {
    return use_float64 ? run_suite<double>(base_seed, num_seeds)
                       : run_suite<float>(base_seed, num_seeds);
}

}  // namespace fcc
