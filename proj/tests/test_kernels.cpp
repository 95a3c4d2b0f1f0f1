#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "segb/kernels.hpp"
#include "segb/numerics/seeded_stream.hpp"

using namespace segb;

namespace {

std::vector<double> random_vec(std::size_t n, SeededStream& rng) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.normal();
    return v;
}

// Relative closeness; FMA and multi-accumulator reductions round differently
// from the scalar reference.
void check_close(const std::vector<double>& a, const std::vector<double>& b) {
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i)
        CHECK(std::abs(a[i] - b[i]) <= 1e-12 * std::max(1.0, std::abs(b[i])));
}

const std::size_t kSizes[] = {1, 3, 4, 5, 7, 8, 9, 16, 17, 31, 64, 100};

}  // namespace

TEST_CASE("scalar table is always available and listed first") {
    auto tables = kernels::available_tables();
    REQUIRE(!tables.empty());
    CHECK(std::string(tables.front()->name) == "scalar");
}

TEST_CASE("every vector variant matches the scalar reference") {
    const auto& ref = kernels::scalar_table();
    SeededStream rng(2024);
    for (const auto* table : kernels::available_tables()) {
        CAPTURE(table->name);
        for (std::size_t n : kSizes) {
            auto x = random_vec(n, rng);
            auto y = random_vec(n, rng);
            const double d_ref = ref.dot(x.data(), y.data(), n);
            const double d = table->dot(x.data(), y.data(), n);
            CHECK(std::abs(d - d_ref) <= 1e-12 * std::max(1.0, std::abs(d_ref)));

            auto y_ref = y;
            auto y_var = y;
            ref.axpy(0.37, x.data(), y_ref.data(), n);
            table->axpy(0.37, x.data(), y_var.data(), n);
            check_close(y_var, y_ref);
        }
        for (std::size_t n : {1, 5, 8}) {
            for (std::size_t k : {1, 4, 7, 16}) {
                for (std::size_t m : {1, 3, 8, 13}) {
                    auto a = random_vec(n * k, rng);
                    auto b = random_vec(k * m, rng);
                    auto c0 = random_vec(n * m, rng);
                    auto c_ref = c0, c_var = c0;
                    ref.gemm_nn(a.data(), b.data(), c_ref.data(), n, k, m);
                    table->gemm_nn(a.data(), b.data(), c_var.data(), n, k, m);
                    check_close(c_var, c_ref);

                    // A is n x k, B is n x m, C is k x m.
                    auto bt = random_vec(n * m, rng);
                    auto ct0 = random_vec(k * m, rng);
                    auto ct_ref = ct0, ct_var = ct0;
                    ref.gemm_tn(a.data(), bt.data(), ct_ref.data(), n, k, m);
                    table->gemm_tn(a.data(), bt.data(), ct_var.data(), n, k, m);
                    check_close(ct_var, ct_ref);

                    // A is n x m, B is k x m, C is n x k.
                    auto an = random_vec(n * m, rng);
                    auto bn = random_vec(k * m, rng);
                    auto cn0 = random_vec(n * k, rng);
                    auto cn_ref = cn0, cn_var = cn0;
                    ref.gemm_nt(an.data(), bn.data(), cn_ref.data(), n, k, m);
                    table->gemm_nt(an.data(), bn.data(), cn_var.data(), n, k, m);
                    check_close(cn_var, cn_ref);
                }
            }
        }
    }
}

TEST_CASE("gemm_nn agrees with a naive triple loop") {
    SeededStream rng(7);
    const std::size_t n = 6, k = 5, m = 9;
    auto a = random_vec(n * k, rng);
    auto b = random_vec(k * m, rng);
    std::vector<double> naive(n * m, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j)
            for (std::size_t p = 0; p < k; ++p) naive[i * m + j] += a[i * k + p] * b[p * m + j];
    std::vector<double> c(n * m, 0.0);
    kernels::active().gemm_nn(a.data(), b.data(), c.data(), n, k, m);
    check_close(c, naive);
}

TEST_CASE("select switches the active table and rejects unknown names") {
    const std::string before = kernels::active().name;
    CHECK(kernels::select("scalar"));
    CHECK(std::string(kernels::active().name) == "scalar");
    CHECK_FALSE(kernels::select("does-not-exist"));
    CHECK(std::string(kernels::active().name) == "scalar");
    CHECK(kernels::select(before));
}
