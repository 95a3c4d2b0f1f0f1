#include "segb/kernels.hpp"

#include <atomic>
#include <cstdlib>
#include <string>

namespace segb::kernels {

namespace detail {
#if defined(SEGB_HAVE_AVX2)
const KernelTable& avx2_table_impl();
#endif
#if defined(SEGB_HAVE_NEON)
const KernelTable& neon_table_impl();
#endif
}  // namespace detail

const KernelTable* avx2_table() {
#if defined(SEGB_HAVE_AVX2)
    static const bool supported = [] {
        __builtin_cpu_init();
        return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
    }();
    return supported ? &detail::avx2_table_impl() : nullptr;
#else
    return nullptr;
#endif
}

const KernelTable* neon_table() {
#if defined(SEGB_HAVE_NEON)
    return &detail::neon_table_impl();
#else
    return nullptr;
#endif
}

std::vector<const KernelTable*> available_tables() {
    std::vector<const KernelTable*> out{&scalar_table()};
    if (const auto* t = avx2_table()) out.push_back(t);
    if (const auto* t = neon_table()) out.push_back(t);
    return out;
}

namespace {

const KernelTable* by_name(std::string_view name) {
    for (const auto* t : available_tables())
        if (name == t->name) return t;
    return nullptr;
}

const KernelTable* initial_choice() {
    if (const char* env = std::getenv("SEGB_KERNELS")) {
        if (const auto* t = by_name(env)) return t;
    }
    if (const auto* t = avx2_table()) return t;
    if (const auto* t = neon_table()) return t;
    return &scalar_table();
}

std::atomic<const KernelTable*>& current() {
    static std::atomic<const KernelTable*> table{initial_choice()};
    return table;
}

}  // namespace

const KernelTable& active() { return *current().load(std::memory_order_relaxed); }

bool select(std::string_view name) {
    const auto* t = by_name(name);
    if (t == nullptr) return false;
    current().store(t, std::memory_order_relaxed);
    return true;
}

}  // namespace segb::kernels
