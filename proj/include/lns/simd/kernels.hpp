#pragma once

// Inner-loop kernels used by dense convolution/linear layers and by the
// bit-packed binary convolution. Every routine has a portable scalar
// reference; vectorized variants are selected once at runtime from CPU
// feature detection and must agree with the reference (exactly for integer
// kernels, to rounding for float kernels).

#include <cstddef>
#include <cstdint>
#include <string_view>

namespace lns::simd {

enum class Isa { scalar, avx2 };

std::string_view isa_name(Isa isa) noexcept;

struct Kernels {
    Isa isa;

    // Row-major, contiguous. When accumulate is false C is overwritten.
    // C[M,N] = A[M,K] * B[K,N]
    void (*gemm_nn)(std::size_t M, std::size_t N, std::size_t K, const float* A, const float* B, float* C,
                    bool accumulate);
    // C[M,N] = A[M,K] * B[N,K]^T
    void (*gemm_nt)(std::size_t M, std::size_t N, std::size_t K, const float* A, const float* B, float* C,
                    bool accumulate);
    // C[M,N] = A[K,M]^T * B[K,N]
    void (*gemm_tn)(std::size_t M, std::size_t N, std::size_t K, const float* A, const float* B, float* C,
                    bool accumulate);

    // Sum over i < n of popcount(a[i] ^ b[i]).
    std::uint64_t (*xor_popcount)(const std::uint64_t* a, const std::uint64_t* b, std::size_t n);
};

const Kernels& scalar_kernels() noexcept;

/// Null when the variant was not compiled into this build.
const Kernels* avx2_kernels() noexcept;

bool cpu_supports(Isa isa) noexcept;

/// Table for `isa`; throws lns::ValueError if it is unavailable on this machine.
const Kernels& kernels_for(Isa isa);

/// The process-wide active table. Chosen on first use: the best supported
/// ISA, unless the environment variable LNS_SIMD is set to "scalar" or "avx2".
const Kernels& active() noexcept;

}  // namespace lns::simd
