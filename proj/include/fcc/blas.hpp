#pragma once

#include <cstdint>

namespace fcc::blas {

// Row-major C = alpha * op(A) * op(B) + beta * C.
// Backed by OpenBLAS when available (loaded lazily so the CPU kernel can be
// pinned before library init), with a portable blocked fallback otherwise.
void sgemm(bool trans_a, bool trans_b, std::int64_t m, std::int64_t n, std::int64_t k,
           float alpha, const float* a, std::int64_t lda, const float* b, std::int64_t ldb,
           float beta, float* c, std::int64_t ldc);

void dgemm(bool trans_a, bool trans_b, std::int64_t m, std::int64_t n, std::int64_t k,
           double alpha, const double* a, std::int64_t lda, const double* b, std::int64_t ldb,
           double beta, double* c, std::int64_t ldc);

template <class S>
void gemm(bool trans_a, bool trans_b, std::int64_t m, std::int64_t n, std::int64_t k, S alpha,
          const S* a, std::int64_t lda, const S* b, std::int64_t ldb, S beta, S* c,
          std::int64_t ldc) {
    if constexpr (sizeof(S) == sizeof(float)) {
        sgemm(trans_a, trans_b, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
    } else {
        dgemm(trans_a, trans_b, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
    }
}

// Name of the backing implementation ("openblas:<corename>" or "builtin").
const char* backend_name();

}  // namespace fcc::blas
