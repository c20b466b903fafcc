#include "lns/selftest.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "lns/binarize.hpp"
#include "lns/noisy_loss.hpp"
#include "lns/simd/kernels.hpp"

namespace lns {

namespace {

SelfCheck unbiasedness(std::mt19937_64& rng) {
    constexpr std::size_t n = 200000;
    const double preds[] = {-0.9, 0.0, 0.5, 1.0};
    const NoiseRates rates[] = {{0.05, 0.05}, {0.2, 0.2}, {0.2, 0.1}};
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double worst = 0;
    for (const auto& r : rates)
        for (double q : preds)
            for (double t : {1.0, -1.0}) {
                double mean = 0, m2 = 0;
                for (std::size_t i = 1; i <= n; ++i) {
                    const double observed = u(rng) < r.rate(static_cast<int>(t)) ? -t : t;
                    const double x = corrected_loss(q, observed, r);
                    const double d = x - mean;
                    mean += d / static_cast<double>(i);
                    m2 += d * (x - mean);
                }
                const double sd = std::sqrt(m2 / static_cast<double>(n - 1));
                // at q = 0 both observations give the same loss, so sd is pure rounding
                const double se = std::max(sd / std::sqrt(double(n)), 1e-12);
                const double z = std::abs(mean - mse_label_loss(q, t)) / se;
                worst = std::max(worst, z);
            }
    std::ostringstream d;
    d << "worst deviation " << worst << " standard errors over 24 cases (limit 4)";
    return {"corrected loss is unbiased", worst <= 4.0, d.str()};
}

SelfCheck gradient(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> q(-1.5, 1.5), rho(0.0, 0.45);
    constexpr double h = 1e-6;
    double worst = 0;
    for (int i = 0; i < 100; ++i) {
        const double p = q(rng);
        const double t = i % 2 ? 1.0 : -1.0;
        const NoiseRates r{rho(rng), rho(rng)};
        const double fd = (corrected_loss(p + h, t, r) - corrected_loss(p - h, t, r)) / (2 * h);
        worst = std::max(worst, std::abs(fd - corrected_loss_grad(p, t, r)));
    }
    std::ostringstream d;
    d << "max |analytic - central difference| = " << worst << " over 100 points (limit 1e-6)";
    return {"corrected loss gradient", worst <= 1e-6, d.str()};
}

SelfCheck zero_noise(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> q(-3.0, 3.0);
    const NoiseRates none{0.0, 0.0};
    std::size_t mismatches = 0;
    for (int i = 0; i < 1000; ++i) {
        const double p = q(rng);
        const double t = i % 2 ? 1.0 : -1.0;
        mismatches += corrected_loss(p, t, none) != mse_label_loss(p, t);
        mismatches += corrected_loss_grad(p, t, none) != 2.0 * (p - t);
        const float pf = static_cast<float>(p), tf = static_cast<float>(t);
        mismatches += corrected_loss(pf, tf, none) != mse_label_loss(pf, tf);
    }
    return {"zero noise reduces to squared error", mismatches == 0,
            std::to_string(mismatches) + " mismatches in 3000 comparisons"};
}

SelfCheck packed_convolution(std::mt19937_64& rng) {
    std::vector<const simd::Kernels*> tables{&simd::scalar_kernels()};
    if (simd::cpu_supports(simd::Isa::avx2)) tables.push_back(simd::avx2_kernels());
    std::uniform_int_distribution<int> coin(0, 1);
    std::size_t cases = 0, bad = 0;
    for (int i = 0; i < 50; ++i) {
        const std::size_t n = 1 + rng() % 3, c = 1 + rng() % 8, o = 1 + rng() % 8;
        const std::size_t k = 1 + 2 * (rng() % 2), stride = 1 + rng() % 2, pad = k == 1 ? 0 : rng() % 2;
        // pick the output extent so the stride divides the padded input exactly
        const std::size_t h = (1 + rng() % 6) * stride + k - stride - 2 * pad;
        const std::size_t w = (1 + rng() % 6) * stride + k - stride - 2 * pad;
        Tensor x(Shape{n, c, h, w}), wt(Shape{o, c, k, k});
        for (auto& v : x.data()) v = coin(rng) ? 1.0f : -1.0f;
        for (auto& v : wt.data()) v = coin(rng) ? 1.0f : -1.0f;
        const auto g = fn::ConvGeometry::make(x.shape(), wt.shape(), stride, pad);
        std::vector<int> ref(n * o * g.oh * g.ow);
        for (std::size_t a = 0; a < n; ++a)
            for (std::size_t f = 0; f < o; ++f)
                for (std::size_t y = 0; y < g.oh; ++y)
                    for (std::size_t z = 0; z < g.ow; ++z) {
                        int s = 0;
                        for (std::size_t ch = 0; ch < c; ++ch)
                            for (std::size_t ky = 0; ky < k; ++ky)
                                for (std::size_t kx = 0; kx < k; ++kx) {
                                    const long iy = long(y * stride + ky) - long(pad);
                                    const long ix = long(z * stride + kx) - long(pad);
                                    const bool inside = iy >= 0 && ix >= 0 && iy < long(h) && ix < long(w);
                                    const float v = inside ? x.at(a, ch, iy, ix) : -1.0f;
                                    s += static_cast<int>(v * wt.at(f, ch, ky, kx));
                                }
                        ref[((a * o + f) * g.oh + y) * g.ow + z] = s;
                    }
        const auto bx = BitTensor::pack(x), bw = BitTensor::pack(wt);
        for (const auto* t : tables) {
            ++cases;
            const auto out = binary_conv2d(bx, bw, stride, pad, *t);
            for (std::size_t j = 0; j < ref.size(); ++j)
                if (out[j] != ref[j]) {
                    ++bad;
                    break;
                }
        }
    }
    std::string isas;
    for (const auto* t : tables) isas += std::string(isas.empty() ? "" : ", ") + std::string(simd::isa_name(t->isa));
    return {"packed convolution matches dense", bad == 0,
            std::to_string(bad) + " of " + std::to_string(cases) + " cases differ (" + isas + ")"};
}

}  // namespace

std::vector<SelfCheck> run_selftest(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<SelfCheck> out;
    out.push_back(unbiasedness(rng));
    out.push_back(gradient(rng));
    out.push_back(zero_noise(rng));
    out.push_back(packed_convolution(rng));
    return out;
}

}  // namespace lns
