#pragma once

// Dense double-precision kernels used by every model in the project.
//
// A scalar reference implementation is always built. Vectorised variants
// (AVX2+FMA on x86-64, NEON on AArch64) are compiled into separate
// translation units and selected once at startup if the CPU supports them.
// The environment variable SEGB_KERNELS=scalar|avx2|neon overrides the choice.
//
// All matrices are row-major. The gemm kernels accumulate into C.

#include <cstddef>
#include <string_view>
#include <vector>

namespace segb::kernels {

struct KernelTable {
    const char* name;
    double (*dot)(const double* x, const double* y, std::size_t n);
    // y += a * x
    void (*axpy)(double a, const double* x, double* y, std::size_t n);
    // C[n x m] += A[n x k] * B[k x m]
    void (*gemm_nn)(const double* a, const double* b, double* c, std::size_t n, std::size_t k,
                    std::size_t m);
    // C[k x m] += A[n x k]^T * B[n x m]
    void (*gemm_tn)(const double* a, const double* b, double* c, std::size_t n, std::size_t k,
                    std::size_t m);
    // C[n x k] += A[n x m] * B[k x m]^T
    void (*gemm_nt)(const double* a, const double* b, double* c, std::size_t n, std::size_t k,
                    std::size_t m);
};

const KernelTable& scalar_table();

// nullptr when the variant was not compiled in or the CPU lacks the feature.
const KernelTable* avx2_table();
const KernelTable* neon_table();

// Every table usable on this machine, scalar first.
std::vector<const KernelTable*> available_tables();

// The table all model code goes through.
const KernelTable& active();

// Selects a table by name. Returns false (and leaves the selection unchanged)
// when the named variant is unavailable.
bool select(std::string_view name);

}  // namespace segb::kernels
