#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "fcc/blas.hpp"
#include "fcc/ops.hpp"

namespace fcc::ops::detail {

inline bool want_grad(const Tape<float>* tape) { return tape != nullptr; }

template <class S>
bool any_requires_grad(const std::vector<TensorT<S>>& ts) {
    for (const auto& t : ts) {
        if (t.requires_grad()) {
            return true;
        }
    }
    return false;
}

template <class S>
bool should_record(Tape<S>* tape, const std::vector<TensorT<S>>& inputs) {
    return tape != nullptr && any_requires_grad(inputs);
}

// Deterministic loop parallelism: iterations partitioned statically, each
// output element written by exactly one thread.
template <class F>
void parallel_for(std::int64_t begin, std::int64_t end, F&& fn) {
#ifdef _OPENMP
    if (end - begin > 1 && omp_get_max_threads() > 1) {
#pragma omp parallel for schedule(static)
        for (std::int64_t i = begin; i < end; ++i) {
            fn(i);
        }
        return;
    }
#endif
    for (std::int64_t i = begin; i < end; ++i) {
        fn(i);
    }
}

// GEMM with the M dimension split across threads; BLAS itself runs
// single-threaded so numeric results do not depend on the thread count.
template <class S>
void parallel_gemm(bool trans_a, bool trans_b, std::int64_t m, std::int64_t n, std::int64_t k,
                   S alpha, const S* a, std::int64_t lda, const S* b, std::int64_t ldb, S beta,
                   S* c, std::int64_t ldc) {
#ifdef _OPENMP
    const double flops = 2.0 * static_cast<double>(m) * static_cast<double>(n) * static_cast<double>(k);
    if (flops > 2e7 && m > 1 && omp_get_max_threads() > 1) {
        const int threads = std::min<std::int64_t>(omp_get_max_threads(), m);
#pragma omp parallel num_threads(threads)
        {
            const int tid = omp_get_thread_num();
            const int nthr = omp_get_num_threads();
            const std::int64_t chunk = (m + nthr - 1) / nthr;
            const std::int64_t m0 = std::min<std::int64_t>(tid * chunk, m);
            const std::int64_t m1 = std::min<std::int64_t>(m0 + chunk, m);
            if (m1 > m0) {
                const S* a_blk = trans_a ? a + m0 : a + m0 * lda;
                blas::gemm(trans_a, trans_b, m1 - m0, n, k, alpha, a_blk, lda, b, ldb, beta,
                           c + m0 * ldc, ldc);
            }
        }
        return;
    }
#endif
    blas::gemm(trans_a, trans_b, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

}  // namespace fcc::ops::detail
