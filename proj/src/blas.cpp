#include "fcc/blas.hpp"

#include <dlfcn.h>

#include <cstdlib>
#include <mutex>
#include <string>

namespace fcc::blas {
namespace {

enum CblasOrder { kRowMajor = 101 };
enum CblasTranspose { kNoTrans = 111, kTrans = 112 };

using sgemm_fn = void (*)(int, int, int, int, int, int, float, const float*, int, const float*,
                          int, float, float*, int);
using dgemm_fn = void (*)(int, int, int, int, int, int, double, const double*, int, const double*,
                          int, double, double*, int);
using set_threads_fn = void (*)(int);
using corename_fn = char* (*)();

struct Backend {
    sgemm_fn sgemm = nullptr;
    dgemm_fn dgemm = nullptr;
    std::string name = "builtin";
};

// OpenBLAS selects its kernel from OPENBLAS_CORETYPE in a load-time
// constructor, and its runtime CPU detection reports a generic core on some
// hypervisors. Loading it lazily via dlopen lets us pin the core type from
// the actual CPU features first.
Backend load_backend() {
    Backend b;
    if (getenv("OPENBLAS_CORETYPE") == nullptr) {
#if defined(__x86_64__)
        if (__builtin_cpu_supports("avx512f")) {
            setenv("OPENBLAS_CORETYPE", "SKYLAKEX", 0);
        } else if (__builtin_cpu_supports("avx2")) {
            setenv("OPENBLAS_CORETYPE", "HASWELL", 0);
        }
#endif
    }
    void* h = dlopen("libopenblas.so.0", RTLD_NOW | RTLD_LOCAL);
    if (h == nullptr) {
        h = dlopen("libopenblas.so", RTLD_NOW | RTLD_LOCAL);
    }
    if (h == nullptr) {
        return b;
    }
    b.sgemm = reinterpret_cast<sgemm_fn>(dlsym(h, "cblas_sgemm"));
    b.dgemm = reinterpret_cast<dgemm_fn>(dlsym(h, "cblas_dgemm"));
    if (b.sgemm == nullptr || b.dgemm == nullptr) {
        b = Backend{};
        return b;
    }
    // Threading happens at the batch level; keep BLAS calls single-threaded.
    if (auto set_threads = reinterpret_cast<set_threads_fn>(dlsym(h, "openblas_set_num_threads"))) {
        set_threads(1);
    }
    b.name = "openblas";
    if (auto corename = reinterpret_cast<corename_fn>(dlsym(h, "openblas_get_corename"))) {
        b.name += std::string(":") + corename();
    }
    return b;
}

const Backend& backend() {
    static Backend b = load_backend();
    return b;
}

template <class S>
void gemm_builtin(bool trans_a, bool trans_b, std::int64_t m, std::int64_t n, std::int64_t k,
                  S alpha, const S* a, std::int64_t lda, const S* b, std::int64_t ldb, S beta,
                  S* c, std::int64_t ldc) {
    for (std::int64_t i = 0; i < m; ++i) {
        for (std::int64_t j = 0; j < n; ++j) {
            c[i * ldc + j] *= beta;
        }
    }
    constexpr std::int64_t kBlock = 64;
    for (std::int64_t i0 = 0; i0 < m; i0 += kBlock) {
        const std::int64_t i1 = std::min(i0 + kBlock, m);
        for (std::int64_t p0 = 0; p0 < k; p0 += kBlock) {
            const std::int64_t p1 = std::min(p0 + kBlock, k);
            for (std::int64_t i = i0; i < i1; ++i) {
                for (std::int64_t p = p0; p < p1; ++p) {
                    const S av = alpha * (trans_a ? a[p * lda + i] : a[i * lda + p]);
                    if (av == S(0)) {
                        continue;
                    }
                    const S* brow = trans_b ? nullptr : b + p * ldb;
                    S* crow = c + i * ldc;
                    if (trans_b) {
                        for (std::int64_t j = 0; j < n; ++j) {
                            crow[j] += av * b[j * ldb + p];
                        }
                    } else {
                        for (std::int64_t j = 0; j < n; ++j) {
                            crow[j] += av * brow[j];
                        }
                    }
                }
            }
        }
    }
}

}  // namespace

void sgemm(bool trans_a, bool trans_b, std::int64_t m, std::int64_t n, std::int64_t k, float alpha,
           const float* a, std::int64_t lda, const float* b, std::int64_t ldb, float beta, float* c,
           std::int64_t ldc) {
    if (m == 0 || n == 0) {
        return;
    }
    const Backend& be = backend();
    if (be.sgemm != nullptr) {
        be.sgemm(kRowMajor, trans_a ? kTrans : kNoTrans, trans_b ? kTrans : kNoTrans,
                 static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), alpha, a,
                 static_cast<int>(lda), b, static_cast<int>(ldb), beta, c, static_cast<int>(ldc));
        return;
    }
    gemm_builtin(trans_a, trans_b, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

void dgemm(bool trans_a, bool trans_b, std::int64_t m, std::int64_t n, std::int64_t k, double alpha,
           const double* a, std::int64_t lda, const double* b, std::int64_t ldb, double beta,
           double* c, std::int64_t ldc) {
    if (m == 0 || n == 0) {
        return;
    }
    const Backend& be = backend();
    if (be.dgemm != nullptr) {
        be.dgemm(kRowMajor, trans_a ? kTrans : kNoTrans, trans_b ? kTrans : kNoTrans,
                 static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), alpha, a,
                 static_cast<int>(lda), b, static_cast<int>(ldb), beta, c, static_cast<int>(ldc));
        return;
    }
    gemm_builtin(trans_a, trans_b, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

const char* backend_name() {
    static std::string name = backend().name;
    return name.c_str();
}

}  // namespace fcc::blas
