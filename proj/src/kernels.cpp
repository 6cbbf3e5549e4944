#include "mla/kernels.hpp"

#include <cstdlib>
#include <cstring>
#include <stdexcept>

namespace mla::kernels {

const KernelTable& scalar_table();
#ifdef MLA_HAVE_AVX2
const KernelTable& avx2_table();
#endif

bool avx2_supported() {
#if defined(MLA_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
    return __builtin_cpu_supports("avx2");
#else
    return false;
#endif
}

namespace {

Backend pick_backend() {
    if (const char* env = std::getenv("MLA_KERNEL_BACKEND")) {
        if (std::strcmp(env, "scalar") == 0) return Backend::scalar;
        if (std::strcmp(env, "avx2") == 0) {
            if (!avx2_supported())
                throw std::runtime_error("MLA_KERNEL_BACKEND=avx2 but CPU lacks AVX2");
            return Backend::avx2;
        }
        throw std::runtime_error(std::string("unknown MLA_KERNEL_BACKEND: ") + env);
    }
    return avx2_supported() ? Backend::avx2 : Backend::scalar;
}

Backend& backend_slot() {
    static Backend b = pick_backend();
    return b;
}

}  // namespace

Backend active_backend() { return backend_slot(); }

void set_backend(Backend b) {
    if (b == Backend::avx2 && !avx2_supported())
        throw std::runtime_error("AVX2 backend requested but not supported on this CPU");
    backend_slot() = b;
}

const KernelTable& table_for(Backend b) {
#ifdef MLA_HAVE_AVX2
    if (b == Backend::avx2) return avx2_table();
#endif
    (void)b;
    return scalar_table();
}

const KernelTable& table() { return table_for(active_backend()); }

std::string backend_name(Backend b) {
    return b == Backend::avx2 ? "avx2" : "scalar";
}

}  // namespace mla::kernels
