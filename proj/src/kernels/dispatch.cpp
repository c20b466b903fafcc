#include <cstdlib>
#include <string>

#include "kernels_internal.hpp"
#include "lns/error.hpp"

namespace lns::simd {

std::string_view isa_name(Isa isa) noexcept {
    switch (isa) {
        case Isa::scalar: return "scalar";
        case Isa::avx2: return "avx2";
    }
    return "unknown";
}

const Kernels& scalar_kernels() noexcept { return detail::kScalarKernels; }

const Kernels* avx2_kernels() noexcept {
#if defined(LNS_HAVE_AVX2)
    return &detail::kAvx2Kernels;
#else
    return nullptr;
#endif
}

bool cpu_supports(Isa isa) noexcept {
    switch (isa) {
        case Isa::scalar: return true;
        case Isa::avx2:
#if defined(LNS_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
            return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma") &&
                   __builtin_cpu_supports("popcnt");
#else
            return false;
#endif
    }
    return false;
}

const Kernels& kernels_for(Isa isa) {
    if (!cpu_supports(isa)) throw ValueError("SIMD variant '" + std::string(isa_name(isa)) + "' unavailable");
    if (isa == Isa::avx2) return *avx2_kernels();
    return scalar_kernels();
}

namespace {

const Kernels& select() {
    const char* env = std::getenv("LNS_SIMD");
    const std::string want = env ? env : "auto";
    if (want == "scalar") return scalar_kernels();
    if ((want == "auto" || want == "avx2") && cpu_supports(Isa::avx2)) return *avx2_kernels();
    return scalar_kernels();
}

}  // namespace

const Kernels& active() noexcept {
    static const Kernels& table = select();
    return table;
}

}  // namespace lns::simd
