#include "segb/kernels.hpp"

#include <arm_neon.h>

namespace segb::kernels::detail {
namespace {

inline double dot_neon(const double* x, const double* y, std::size_t n) {
    float64x2_t acc0 = vdupq_n_f64(0.0);
    float64x2_t acc1 = vdupq_n_f64(0.0);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        acc0 = vfmaq_f64(acc0, vld1q_f64(x + i), vld1q_f64(y + i));
        acc1 = vfmaq_f64(acc1, vld1q_f64(x + i + 2), vld1q_f64(y + i + 2));
    }
    double acc = vaddvq_f64(vaddq_f64(acc0, acc1));
    for (; i < n; ++i) acc += x[i] * y[i];
    return acc;
}

inline void axpy_neon(double a, const double* x, double* y, std::size_t n) {
    const float64x2_t av = vdupq_n_f64(a);
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) vst1q_f64(y + i, vfmaq_f64(vld1q_f64(y + i), av, vld1q_f64(x + i)));
    for (; i < n; ++i) y[i] += a * x[i];
}

void gemm_nn_neon(const double* a, const double* b, double* c, std::size_t n, std::size_t k,
                  std::size_t m) {
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < k; ++p)
            if (a[i * k + p] != 0.0) axpy_neon(a[i * k + p], b + p * m, c + i * m, m);
}

void gemm_tn_neon(const double* a, const double* b, double* c, std::size_t n, std::size_t k,
                  std::size_t m) {
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < k; ++p)
            if (a[i * k + p] != 0.0) axpy_neon(a[i * k + p], b + i * m, c + p * m, m);
}

void gemm_nt_neon(const double* a, const double* b, double* c, std::size_t n, std::size_t k,
                  std::size_t m) {
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < k; ++p) c[i * k + p] += dot_neon(a + i * m, b + p * m, m);
}

}  // namespace

const KernelTable& neon_table_impl() {
    static const KernelTable table{"neon",       dot_neon,     axpy_neon,
                                   gemm_nn_neon, gemm_tn_neon, gemm_nt_neon};
    return table;
}

}  // namespace segb::kernels::detail
