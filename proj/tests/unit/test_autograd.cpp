#include <doctest.h>

#include <cmath>
#include <functional>
#include <random>

#include "lns/autograd.hpp"

using namespace lns;
using ag::Tape;
using ag::Var;

namespace {

Tensor64 random64(Shape s, std::mt19937_64& rng, double lo = -1, double hi = 1) {
    Tensor64 t(std::move(s));
    std::uniform_real_distribution<double> u(lo, hi);
    for (auto& v : t.data()) v = u(rng);
    return t;
}

double rel_err(double a, double b) {
    const double err = std::abs(a - b);
    return err < 1e-10 ? 0.0 : err / std::max(std::abs(a), std::abs(b));
}

// Checks every component of every input against central differences.
void check_gradients(std::vector<Tensor64> inputs, const std::function<Var<double>(Tape<double>&, std::vector<Var<double>>&)>& f,
                     double eps, double tol) {
    Tape<double> tape;
    std::vector<Var<double>> vars;
    for (const auto& t : inputs) vars.push_back(tape.leaf(t));
    tape.backward(f(tape, vars));
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        const auto g = tape.grad(vars[k]);
        for (std::size_t i = 0; i < inputs[k].size(); ++i) {
            auto eval = [&](double delta) {
                auto copy = inputs;
                copy[k][i] += delta;
                Tape<double> t2;
                std::vector<Var<double>> v2;
                for (const auto& t : copy) v2.push_back(t2.constant(t));
                return f(t2, v2).value()[0];
            };
            const double fd = (eval(eps) - eval(-eps)) / (2 * eps);
            INFO("input " << k << " component " << i << " analytic " << g[i] << " fd " << fd);
            CHECK(rel_err(g[i], fd) <= tol);
        }
    }
}

}  // namespace

TEST_CASE("sum and sum of squares") {
    std::mt19937_64 rng(1);
    const auto w = random64(Shape{3, 4}, rng);
    Tape<double> t;
    auto v = t.leaf(w);
    t.backward(ag::sum(v));
    CHECK(t.grad(v) == Tensor64(Shape{3, 4}, 1.0));

    Tape<double> t2;
    auto v2 = t2.leaf(w);
    t2.backward(ag::sum_squares(v2));
    const auto g = t2.grad(v2);
    for (std::size_t i = 0; i < w.size(); ++i) CHECK(g[i] == 2 * w[i]);
}

TEST_CASE("backward errors") {
    Tape<double> t;
    auto v = t.leaf(Tensor64(Shape{2}, 1.0));
    CHECK_THROWS_AS(t.backward(v), ValueError);
    auto c = t.constant(Tensor64(Shape{1}, 1.0));
    CHECK_THROWS_AS(t.backward(c), ValueError);
    t.backward(ag::sum(v));
    CHECK_THROWS_AS(t.grad(c), ValueError);
}

TEST_CASE("elementwise ops match finite differences to 1e-4") {
    std::mt19937_64 rng(2);
    auto x = random64(Shape{2, 3, 2, 2}, rng);
    // keep clear of the kinks so a small step never crosses one
    for (auto& v : x.data())
        if (std::abs(v) < 0.05) v += 0.1;
    const auto slope = random64(Shape{3}, rng, 0.1, 0.5);
    using Fn = std::function<Var<double>(Tape<double>&, std::vector<Var<double>>&)>;
    const std::vector<Fn> ops{
        [](Tape<double>&, std::vector<Var<double>>& v) { return ag::sum_squares(ag::tanh(v[0])); },
        [](Tape<double>&, std::vector<Var<double>>& v) { return ag::sum_squares(ag::relu(v[0])); },
        [](Tape<double>&, std::vector<Var<double>>& v) { return ag::sum_squares(ag::hardtanh(ag::scale(v[0], 1.5))); },
        [](Tape<double>&, std::vector<Var<double>>& v) { return ag::sum_squares(ag::prelu(v[0], v[1])); },
        [](Tape<double>&, std::vector<Var<double>>& v) { return ag::mean(ag::add(v[0], ag::tanh(v[0]))); },
    };
    for (const auto& op : ops) check_gradients({x, slope}, op, 1e-6, 1e-4);
}

TEST_CASE("subgradient is zero at kinks") {
    Tape<double> t;
    auto x = t.leaf(Tensor64(Shape{1, 1, 1, 3}, std::vector<double>{0.0, 1.0, -1.0}));
    t.backward(ag::add(ag::sum(ag::relu(x)), ag::sum(ag::hardtanh(x))));
    const auto g = t.grad(x);
    CHECK(g[0] == 1.0);  // relu contributes 0 at 0, hardtanh passes inside
    CHECK(g[1] == 1.0);  // relu passes, hardtanh is 0 at its edge
    CHECK(g[2] == 0.0);
}

TEST_CASE("two-layer conv net gradients match finite differences") {
    std::mt19937_64 rng(3);
    const auto x = random64(Shape{3, 2, 5, 5}, rng);
    const auto w1 = random64(Shape{3, 2, 3, 3}, rng, -0.5, 0.5);
    const auto g1 = random64(Shape{3}, rng, 0.5, 1.5);
    const auto b1 = random64(Shape{3}, rng);
    const auto w2 = random64(Shape{2, 3, 3, 3}, rng, -0.5, 0.5);
    const auto lw = random64(Shape{4, 2 * 2 * 2}, rng);
    const auto lb = random64(Shape{4}, rng);
    const std::vector<std::int32_t> labels{0, 3, 1};

    // Activation branches are pinned at the unperturbed point, so a step of
    // 1e-3 measures the gradient of the piece the analytic pass used.
    ag::RegionFreeze<double> freeze;
    auto net = [&](Tape<double>& t, std::vector<Var<double>>& v) {
        auto h = ag::conv2d(t.constant(x), v[0], 1, 0);
        h = ag::relu(ag::batch_norm<double>(h, v[1], v[2], nullptr, ag::Mode::train), &freeze);
        h = ag::hardtanh(ag::conv2d(h, v[3], 2, 1, -1.0), &freeze);
        h = ag::reshape(h, Shape{3, 2 * 2 * 2});
        return ag::cross_entropy(ag::linear(h, v[4], v[5]), labels);
    };
    Tape<double> t0;
    std::vector<Var<double>> v0;
    for (const auto& p : {w1, g1, b1, w2, lw, lb}) v0.push_back(t0.constant(p));
    net(t0, v0);
    freeze.replay = true;
    auto rewinding = [&](Tape<double>& t, std::vector<Var<double>>& v) {
        freeze.cursor = 0;
        return net(t, v);
    };
    check_gradients({w1, g1, b1, w2, lw, lb}, rewinding, 1e-3, 1e-3);
}

TEST_CASE("region freeze replays the recorded forward exactly") {
    std::mt19937_64 rng(4);
    const auto x = random64(Shape{2, 3, 2, 2}, rng, -2, 2);
    const auto s = random64(Shape{3}, rng);
    ag::RegionFreeze<double> freeze;
    Tape<double> t;
    const auto a = ag::prelu(t.constant(x), t.constant(s), &freeze).value();
    const auto b = ag::hardtanh(t.constant(x), &freeze).value();
    freeze.replay = true;
    freeze.cursor = 0;
    CHECK(ag::prelu(t.constant(x), t.constant(s), &freeze).value() == a);
    CHECK(ag::hardtanh(t.constant(x), &freeze).value() == b);
    CHECK(b == ag::hardtanh(t.constant(x)).value());
}
