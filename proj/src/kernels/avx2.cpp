// Compiled with -mavx2 -mfma. Only reached through avx2_table(), which checks
// the CPU first.

#include "segb/kernels.hpp"

#include <immintrin.h>

namespace segb::kernels::detail {
namespace {

inline double hsum(__m256d v) {
    const __m128d lo = _mm256_castpd256_pd128(v);
    const __m128d hi = _mm256_extractf128_pd(v, 1);
    const __m128d s = _mm_add_pd(lo, hi);
    const __m128d sh = _mm_unpackhi_pd(s, s);
    return _mm_cvtsd_f64(_mm_add_sd(s, sh));
}

inline double dot_avx2(const double* x, const double* y, std::size_t n) {
    __m256d acc0 = _mm256_setzero_pd();
    __m256d acc1 = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
        acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4), acc1);
    }
    for (; i + 4 <= n; i += 4)
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
    double acc = hsum(_mm256_add_pd(acc0, acc1));
    for (; i < n; ++i) acc += x[i] * y[i];
    return acc;
}

inline void axpy_avx2(double a, const double* x, double* y, std::size_t n) {
    const __m256d av = _mm256_set1_pd(a);
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        _mm256_storeu_pd(y + i, _mm256_fmadd_pd(av, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
        _mm256_storeu_pd(y + i + 4,
                         _mm256_fmadd_pd(av, _mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4)));
    }
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(y + i, _mm256_fmadd_pd(av, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
    for (; i < n; ++i) y[i] += a * x[i];
}

void gemm_nn_avx2(const double* a, const double* b, double* c, std::size_t n, std::size_t k,
                  std::size_t m) {
    for (std::size_t i = 0; i < n; ++i) {
        double* crow = c + i * m;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a[i * k + p];
            if (av == 0.0) continue;
            axpy_avx2(av, b + p * m, crow, m);
        }
    }
}

void gemm_tn_avx2(const double* a, const double* b, double* c, std::size_t n, std::size_t k,
                  std::size_t m) {
    for (std::size_t i = 0; i < n; ++i) {
        const double* brow = b + i * m;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a[i * k + p];
            if (av == 0.0) continue;
            axpy_avx2(av, brow, c + p * m, m);
        }
    }
}

void gemm_nt_avx2(const double* a, const double* b, double* c, std::size_t n, std::size_t k,
                  std::size_t m) {
    for (std::size_t i = 0; i < n; ++i) {
        const double* arow = a + i * m;
        for (std::size_t p = 0; p < k; ++p) c[i * k + p] += dot_avx2(arow, b + p * m, m);
    }
}

}  // namespace

const KernelTable& avx2_table_impl() {
    static const KernelTable table{"avx2",       dot_avx2,     axpy_avx2,
                                   gemm_nn_avx2, gemm_tn_avx2, gemm_nt_avx2};
    return table;
}

}  // namespace segb::kernels::detail
