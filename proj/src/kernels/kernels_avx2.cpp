// Compiled with -mavx2 -mfma -mpopcnt. Only reached after cpu_supports(Isa::avx2).

#include <immintrin.h>

#include "kernels_internal.hpp"

namespace lns::simd::detail {

namespace {

inline float hsum(__m256 v) {
    __m128 lo = _mm256_castps256_ps128(v);
    __m128 hi = _mm256_extractf128_ps(v, 1);
    lo = _mm_add_ps(lo, hi);
    __m128 sh = _mm_movehdup_ps(lo);
    __m128 s = _mm_add_ps(lo, sh);
    sh = _mm_movehl_ps(sh, s);
    s = _mm_add_ss(s, sh);
    return _mm_cvtss_f32(s);
}

// Streams rows of B against broadcast elements of A. A(i, p) is read as
// A[p * M + i] when kTransA, A[i * K + p] otherwise.
template <bool kTransA>
void gemm_stream_b(std::size_t M, std::size_t N, std::size_t K, const float* A, const float* B, float* C,
                   bool accumulate) {
    for (std::size_t i = 0; i < M; ++i) {
        float* c = C + i * N;
        auto a_at = [&](std::size_t p) { return kTransA ? A[p * M + i] : A[i * K + p]; };
        std::size_t j = 0;
        for (; j + 32 <= N; j += 32) {
            __m256 c0 = accumulate ? _mm256_loadu_ps(c + j) : _mm256_setzero_ps();
            __m256 c1 = accumulate ? _mm256_loadu_ps(c + j + 8) : _mm256_setzero_ps();
            __m256 c2 = accumulate ? _mm256_loadu_ps(c + j + 16) : _mm256_setzero_ps();
            __m256 c3 = accumulate ? _mm256_loadu_ps(c + j + 24) : _mm256_setzero_ps();
            for (std::size_t p = 0; p < K; ++p) {
                const __m256 a = _mm256_set1_ps(a_at(p));
                const float* b = B + p * N + j;
                c0 = _mm256_fmadd_ps(a, _mm256_loadu_ps(b), c0);
                c1 = _mm256_fmadd_ps(a, _mm256_loadu_ps(b + 8), c1);
                c2 = _mm256_fmadd_ps(a, _mm256_loadu_ps(b + 16), c2);
                c3 = _mm256_fmadd_ps(a, _mm256_loadu_ps(b + 24), c3);
            }
            _mm256_storeu_ps(c + j, c0);
            _mm256_storeu_ps(c + j + 8, c1);
            _mm256_storeu_ps(c + j + 16, c2);
            _mm256_storeu_ps(c + j + 24, c3);
        }
        for (; j + 8 <= N; j += 8) {
            __m256 c0 = accumulate ? _mm256_loadu_ps(c + j) : _mm256_setzero_ps();
            for (std::size_t p = 0; p < K; ++p)
                c0 = _mm256_fmadd_ps(_mm256_set1_ps(a_at(p)), _mm256_loadu_ps(B + p * N + j), c0);
            _mm256_storeu_ps(c + j, c0);
        }
        for (; j < N; ++j) {
            float s = accumulate ? c[j] : 0.0f;
            for (std::size_t p = 0; p < K; ++p) s += a_at(p) * B[p * N + j];
            c[j] = s;
        }
    }
}

void gemm_nn(std::size_t M, std::size_t N, std::size_t K, const float* A, const float* B, float* C,
             bool accumulate) {
    gemm_stream_b<false>(M, N, K, A, B, C, accumulate);
}

void gemm_tn(std::size_t M, std::size_t N, std::size_t K, const float* A, const float* B, float* C,
             bool accumulate) {
    gemm_stream_b<true>(M, N, K, A, B, C, accumulate);
}

void gemm_nt(std::size_t M, std::size_t N, std::size_t K, const float* A, const float* B, float* C,
             bool accumulate) {
    for (std::size_t i = 0; i < M; ++i) {
        const float* a = A + i * K;
        for (std::size_t j = 0; j < N; ++j) {
            const float* b = B + j * K;
            __m256 s0 = _mm256_setzero_ps();
            __m256 s1 = _mm256_setzero_ps();
            std::size_t p = 0;
            for (; p + 16 <= K; p += 16) {
                s0 = _mm256_fmadd_ps(_mm256_loadu_ps(a + p), _mm256_loadu_ps(b + p), s0);
                s1 = _mm256_fmadd_ps(_mm256_loadu_ps(a + p + 8), _mm256_loadu_ps(b + p + 8), s1);
            }
            for (; p + 8 <= K; p += 8) s0 = _mm256_fmadd_ps(_mm256_loadu_ps(a + p), _mm256_loadu_ps(b + p), s0);
            float s = hsum(_mm256_add_ps(s0, s1));
            for (; p < K; ++p) s += a[p] * b[p];
            C[i * N + j] = accumulate ? C[i * N + j] + s : s;
        }
    }
}

// Nibble-table popcount over 256-bit lanes, summed with SAD against zero.
std::uint64_t xor_popcount(const std::uint64_t* a, const std::uint64_t* b, std::size_t n) {
    const __m256i lut = _mm256_setr_epi8(0, 1, 1, 2, 1, 2, 2, 3, 1, 2, 2, 3, 2, 3, 3, 4, 0, 1, 1, 2, 1, 2, 2, 3, 1,
                                         2, 2, 3, 2, 3, 3, 4);
    const __m256i low = _mm256_set1_epi8(0x0f);
    __m256i acc = _mm256_setzero_si256();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256i v = _mm256_xor_si256(_mm256_loadu_si256(reinterpret_cast<const __m256i*>(a + i)),
                                           _mm256_loadu_si256(reinterpret_cast<const __m256i*>(b + i)));
        const __m256i lo = _mm256_and_si256(v, low);
        const __m256i hi = _mm256_and_si256(_mm256_srli_epi16(v, 4), low);
        const __m256i cnt = _mm256_add_epi8(_mm256_shuffle_epi8(lut, lo), _mm256_shuffle_epi8(lut, hi));
        acc = _mm256_add_epi64(acc, _mm256_sad_epu8(cnt, _mm256_setzero_si256()));
    }
    std::uint64_t total = static_cast<std::uint64_t>(_mm256_extract_epi64(acc, 0)) +
                          static_cast<std::uint64_t>(_mm256_extract_epi64(acc, 1)) +
                          static_cast<std::uint64_t>(_mm256_extract_epi64(acc, 2)) +
                          static_cast<std::uint64_t>(_mm256_extract_epi64(acc, 3));
    for (; i < n; ++i) total += static_cast<std::uint64_t>(_mm_popcnt_u64(a[i] ^ b[i]));
    return total;
}

}  // namespace

const Kernels kAvx2Kernels{Isa::avx2, gemm_nn, gemm_nt, gemm_tn, xor_popcount};

}  // namespace lns::simd::detail
