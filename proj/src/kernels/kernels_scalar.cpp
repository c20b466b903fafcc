#include <bit>

#include "kernels_internal.hpp"

namespace lns::simd::detail {

namespace {

void gemm_nn(std::size_t M, std::size_t N, std::size_t K, const float* A, const float* B, float* C,
             bool accumulate) {
    ref_gemm_nn(M, N, K, A, B, C, accumulate);
}

void gemm_nt(std::size_t M, std::size_t N, std::size_t K, const float* A, const float* B, float* C,
             bool accumulate) {
    ref_gemm_nt(M, N, K, A, B, C, accumulate);
}

void gemm_tn(std::size_t M, std::size_t N, std::size_t K, const float* A, const float* B, float* C,
             bool accumulate) {
    ref_gemm_tn(M, N, K, A, B, C, accumulate);
}

std::uint64_t xor_popcount(const std::uint64_t* a, const std::uint64_t* b, std::size_t n) {
    std::uint64_t total = 0;
    for (std::size_t i = 0; i < n; ++i) total += static_cast<std::uint64_t>(std::popcount(a[i] ^ b[i]));
    return total;
}

}  // namespace

const Kernels kScalarKernels{Isa::scalar, gemm_nn, gemm_nt, gemm_tn, xor_popcount};

}  // namespace lns::simd::detail
