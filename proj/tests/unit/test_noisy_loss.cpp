#include <doctest.h>

#include <cmath>
#include <random>

#include "lns/noisy_loss.hpp"

using namespace lns;

TEST_CASE("mse label loss") {
    CHECK(mse_label_loss(1.0, 1.0) == 0.0);
    CHECK(mse_label_loss(0.0, -1.0) == 1.0);
    CHECK(mse_label_loss(0.5, 1.0) == 0.25);
    CHECK_THROWS_AS(mse_label_loss(0.5, 0.5), ValueError);
}

TEST_CASE("corrected loss examples") {
    CHECK(corrected_loss(0.5, 1.0, {0.0, 0.0}) == 0.25);
    CHECK(corrected_loss(0.5, 1.0, {0.1, 0.1}) == doctest::Approx(0.0));
    CHECK(corrected_loss(0.0, -1.0, {0.2, 0.1}) == doctest::Approx(1.0));
    CHECK_THROWS_AS(corrected_loss(0.5, 1.0, {0.6, 0.5}), ValueError);
    CHECK_THROWS_AS(corrected_loss(0.5, 1.0, {-0.1, 0.0}), ValueError);
    CHECK_THROWS_AS(corrected_loss(0.5, 0.0, {0.1, 0.1}), ValueError);
}

TEST_CASE("corrected loss gradient examples") {
    CHECK(corrected_loss_grad(0.5, 1.0, {0.0, 0.0}) == -1.0);
    CHECK(corrected_loss_grad(0.5, 1.0, {0.1, 0.1}) == doctest::Approx(-1.5));
}

TEST_CASE("expectation over the noise equals the clean loss") {
    // Exact expectation: observed = q with prob 1 - rho(q), -q with prob rho(q).
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> u(0, 0.49);
    std::uniform_real_distribution<double> p(-2, 2);
    for (int i = 0; i < 500; ++i) {
        const NoiseRates r{u(rng), u(rng)};
        const double qhat = p(rng);
        for (double q : {1.0, -1.0}) {
            const double rho = r.rate(int(q));
            const double expected = (1 - rho) * corrected_loss(qhat, q, r) + rho * corrected_loss(qhat, -q, r);
            CHECK(expected == doctest::Approx(mse_label_loss(qhat, q)).epsilon(1e-10));
        }
    }
}

TEST_CASE("gradient matches finite differences at 64-bit") {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> u(0, 0.45);
    std::uniform_real_distribution<double> p(-1.5, 1.5);
    for (int i = 0; i < 200; ++i) {
        const NoiseRates r{u(rng), u(rng)};
        const double q = p(rng), t = (rng() & 1) ? 1.0 : -1.0, h = 1e-6;
        const double fd = (corrected_loss(q + h, t, r) - corrected_loss(q - h, t, r)) / (2 * h);
        CHECK(std::abs(fd - corrected_loss_grad(q, t, r)) < 1e-6);
    }
}

TEST_CASE("layer loss") {
    Tensor64 pm(Shape{2, 2}, std::vector<double>{1, -1, -1, 1});
    CHECK(layer_loss(pm, pm, {0, 0}) == 0.0);

    // elementwise corrected losses 0.0 and 1.0
    const NoiseRates r{0.1, 0.1};
    Tensor64 q(Shape{2}, std::vector<double>{0.5, 0.0}), t(Shape{2}, std::vector<double>{1.0, -1.0});
    CHECK(corrected_loss(0.0, -1.0, r) == doctest::Approx(1.0));
    CHECK(layer_loss(q, t, r) == doctest::Approx(0.5));
    CHECK(layer_loss(q, t, r, Reduction::sum) == doctest::Approx(1.0));

    std::mt19937_64 rng(10);
    std::uniform_real_distribution<double> u(-1, 1);
    Tensor64 qh(Shape{4, 4}), ql(Shape{4, 4});
    for (std::size_t i = 0; i < 16; ++i) {
        qh[i] = u(rng);
        ql[i] = (rng() & 1) ? 1 : -1;
    }
    const NoiseRates asym{0.2, 0.05};
    double direct = 0;
    for (std::size_t i = 0; i < 16; ++i) {
        const double t1 = ql[i], rho_t = t1 > 0 ? 0.2 : 0.05, rho_other = t1 > 0 ? 0.05 : 0.2;
        direct += ((1 - rho_other) * std::pow(qh[i] - t1, 2) - rho_t * std::pow(qh[i] + t1, 2)) / 0.75;
    }
    CHECK(layer_loss(qh, ql, asym) == doctest::Approx(direct / 16).epsilon(1e-12));
    CHECK_THROWS_AS(layer_loss(qh, Tensor64(Shape{16}), asym), ShapeError);
}

TEST_CASE("differentiable layer loss uses the analytic gradient") {
    const NoiseRates r{0.05, 0.15};
    Tensor64 q(Shape{3}, std::vector<double>{0.3, -0.7, 0.1}), t(Shape{3}, std::vector<double>{1, -1, -1});
    ag::Tape<double> tape;
    auto v = tape.leaf(q);
    tape.backward(ag::corrected_layer_loss(v, t, r, Reduction::mean));
    const auto g = tape.grad(v);
    for (std::size_t i = 0; i < 3; ++i) CHECK(g[i] == doctest::Approx(corrected_loss_grad(q[i], t[i], r) / 3));
}

TEST_CASE("flip noise simulation") {
    Tensor64 plus(Shape{1000000}, 1.0);
    CHECK(flip_noise_simulate(plus, {0, 0}, 1) == plus);

    const auto noisy = flip_noise_simulate(plus, {0.2, 0.2}, 2);
    double flipped = 0;
    for (double v : noisy.data()) flipped += v < 0;
    CHECK(std::abs(flipped / plus.size() - 0.2) < 0.002);

    const double eps = 1e-3;
    const auto almost = flip_noise_simulate(Tensor64(Shape{100000}, 1.0), {1 - eps, 0}, 3);
    double f2 = 0;
    for (double v : almost.data()) f2 += v < 0;
    CHECK(std::abs(f2 / 100000 - (1 - eps)) < 0.001);

    CHECK(flip_noise_simulate(plus, {0.2, 0.2}, 2) == noisy);
    CHECK_THROWS_AS(flip_noise_simulate(plus, {0.7, 0.3}, 2), ValueError);
}
