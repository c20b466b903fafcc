#include <doctest.h>

#include <bit>
#include <cmath>
#include <random>
#include <vector>

#include "lns/simd/gemm_ref.hpp"
#include "lns/simd/kernels.hpp"

using namespace lns::simd;

namespace {

std::vector<const Kernels*> tables() {
    std::vector<const Kernels*> t{&scalar_kernels()};
    if (cpu_supports(Isa::avx2)) t.push_back(avx2_kernels());
    return t;
}

std::vector<float> random_floats(std::size_t n, std::mt19937_64& rng) {
    std::uniform_real_distribution<float> u(-10.0f, 10.0f);
    std::vector<float> v(n);
    for (auto& x : v) x = u(rng);
    return v;
}

enum class Layout { nn, nt, tn };

// Double-precision product with the operand layout of each kernel.
std::vector<double> oracle(Layout l, std::size_t M, std::size_t N, std::size_t K, const std::vector<float>& A,
                           const std::vector<float>& B) {
    std::vector<double> C(M * N);
    for (std::size_t i = 0; i < M; ++i)
        for (std::size_t j = 0; j < N; ++j) {
            double s = 0;
            for (std::size_t p = 0; p < K; ++p) {
                const double a = l == Layout::tn ? A[p * M + i] : A[i * K + p];
                const double b = l == Layout::nt ? B[j * K + p] : B[p * N + j];
                s += a * b;
            }
            C[i * N + j] = s;
        }
    return C;
}

}  // namespace

TEST_CASE("gemm variants agree with a double oracle on every ISA") {
    std::mt19937_64 rng(11);
    const std::size_t sizes[][3] = {{1, 1, 1}, {3, 5, 7}, {8, 8, 8}, {17, 9, 33}, {2, 31, 65}, {16, 64, 144}};
    for (const auto* k : tables())
        for (const auto& s : sizes)
            for (Layout l : {Layout::nn, Layout::nt, Layout::tn})
                for (bool accumulate : {false, true}) {
                    const std::size_t M = s[0], N = s[1], K = s[2];
                    const auto A = random_floats(M * K, rng), B = random_floats(K * N, rng);
                    auto C = random_floats(M * N, rng);
                    const auto C0 = C;
                    auto fn = l == Layout::nn ? k->gemm_nn : l == Layout::nt ? k->gemm_nt : k->gemm_tn;
                    fn(M, N, K, A.data(), B.data(), C.data(), accumulate);
                    const auto ref = oracle(l, M, N, K, A, B);
                    for (std::size_t i = 0; i < M * N; ++i) {
                        const double want = ref[i] + (accumulate ? C0[i] : 0.0);
                        INFO(isa_name(k->isa) << " M=" << M << " N=" << N << " K=" << K);
                        // float accumulation error bound: K * eps * sum |a b|
                        CHECK(std::abs(C[i] - want) <= 1e-5 * (100.0 * K + std::abs(want)));
                    }
                }
}

TEST_CASE("vector gemm matches the scalar reference closely") {
    if (!cpu_supports(Isa::avx2)) return;
    std::mt19937_64 rng(12);
    const std::size_t M = 13, N = 37, K = 29;
    const auto A = random_floats(M * K, rng), B = random_floats(K * N, rng);
    std::vector<float> c1(M * N), c2(M * N);
    ref_gemm_nn<float>(M, N, K, A.data(), B.data(), c1.data(), false);
    avx2_kernels()->gemm_nn(M, N, K, A.data(), B.data(), c2.data(), false);
    for (std::size_t i = 0; i < c1.size(); ++i) CHECK(c2[i] == doctest::Approx(c1[i]).epsilon(1e-4).scale(10));
}

TEST_CASE("xor popcount is exact on every ISA") {
    std::mt19937_64 rng(13);
    for (std::size_t n : {0, 1, 3, 4, 5, 8, 17, 64, 100}) {
        std::vector<std::uint64_t> a(n), b(n);
        std::uint64_t want = 0;
        for (std::size_t i = 0; i < n; ++i) {
            a[i] = rng();
            b[i] = rng();
            want += std::popcount(a[i] ^ b[i]);
        }
        for (const auto* k : tables()) CHECK(k->xor_popcount(a.data(), b.data(), n) == want);
    }
}

TEST_CASE("dispatch") {
    CHECK(cpu_supports(Isa::scalar));
    CHECK(&kernels_for(Isa::scalar) == &scalar_kernels());
    CHECK(isa_name(Isa::avx2) == "avx2");
    const auto& a = active();
    CHECK((a.isa == Isa::scalar || cpu_supports(a.isa)));
}
