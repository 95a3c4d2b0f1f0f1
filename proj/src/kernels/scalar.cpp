#include "segb/kernels.hpp"

namespace segb::kernels {
namespace {

double dot_scalar(const double* x, const double* y, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += x[i] * y[i];
    return acc;
}

void axpy_scalar(double a, const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

void gemm_nn_scalar(const double* a, const double* b, double* c, std::size_t n, std::size_t k,
                    std::size_t m) {
    for (std::size_t i = 0; i < n; ++i) {
        double* crow = c + i * m;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a[i * k + p];
            if (av == 0.0) continue;
            axpy_scalar(av, b + p * m, crow, m);
        }
    }
}

void gemm_tn_scalar(const double* a, const double* b, double* c, std::size_t n, std::size_t k,
                    std::size_t m) {
    for (std::size_t i = 0; i < n; ++i) {
        const double* brow = b + i * m;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a[i * k + p];
            if (av == 0.0) continue;
            axpy_scalar(av, brow, c + p * m, m);
        }
    }
}

void gemm_nt_scalar(const double* a, const double* b, double* c, std::size_t n, std::size_t k,
                    std::size_t m) {
    for (std::size_t i = 0; i < n; ++i) {
        const double* arow = a + i * m;
        for (std::size_t p = 0; p < k; ++p) c[i * k + p] += dot_scalar(arow, b + p * m, m);
    }
}

}  // namespace

const KernelTable& scalar_table() {
    static const KernelTable table{"scalar",       dot_scalar,     axpy_scalar,
                                   gemm_nn_scalar, gemm_tn_scalar, gemm_nt_scalar};
    return table;
}

}  // namespace segb::kernels
