#pragma once

#include <cstddef>

namespace lns::simd {

// Reference matrix products. Used directly for double precision and as the
// scalar float kernels. Loop order keeps the innermost access contiguous.

template <typename T>
void ref_gemm_nn(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C, bool accumulate) {
    for (std::size_t i = 0; i < M; ++i) {
        T* c = C + i * N;
        if (!accumulate)
            for (std::size_t j = 0; j < N; ++j) c[j] = T{};
        for (std::size_t p = 0; p < K; ++p) {
            const T a = A[i * K + p];
            const T* b = B + p * N;
            for (std::size_t j = 0; j < N; ++j) c[j] += a * b[j];
        }
    }
}

template <typename T>
void ref_gemm_nt(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C, bool accumulate) {
    for (std::size_t i = 0; i < M; ++i) {
        const T* a = A + i * K;
        for (std::size_t j = 0; j < N; ++j) {
            const T* b = B + j * K;
            T s{};
            for (std::size_t p = 0; p < K; ++p) s += a[p] * b[p];
            C[i * N + j] = accumulate ? C[i * N + j] + s : s;
        }
    }
}

template <typename T>
void ref_gemm_tn(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C, bool accumulate) {
    if (!accumulate)
        for (std::size_t i = 0; i < M * N; ++i) C[i] = T{};
    for (std::size_t p = 0; p < K; ++p) {
        const T* b = B + p * N;
        for (std::size_t i = 0; i < M; ++i) {
            const T a = A[p * M + i];
            T* c = C + i * N;
            for (std::size_t j = 0; j < N; ++j) c[j] += a * b[j];
        }
    }
}

}  // namespace lns::simd
