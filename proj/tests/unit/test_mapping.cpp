#include <doctest.h>

#include <random>

#include "lns/mapping.hpp"
#include "lns/train.hpp"

using namespace lns;

namespace {

Tensor random_latent(Shape s, std::mt19937_64& rng) {
    Tensor t(std::move(s));
    std::normal_distribution<float> n(0.0f, 0.1f);
    for (auto& v : t.data()) v = n(rng);
    return t;
}

}  // namespace

TEST_CASE("mapping preserves the weight shape with 2c hidden channels") {
    std::mt19937_64 rng(1);
    const auto w = random_latent(Shape{32, 16, 3, 3}, rng);
    const auto net = MappingNet<float>::passthrough(w, rng);
    CHECK(net.conv1.shape() == Shape{32, 16, 3, 3});
    CHECK(net.conv2.shape() == Shape{32, 32, 3, 3});
    CHECK(net.conv3.shape() == Shape{16, 32, 3, 3});
    CHECK(mapping_predict(w, net).shape() == w.shape());
}

TEST_CASE("output lies strictly inside (-1, 1) for odd and even kernels") {
    std::mt19937_64 rng(2);
    for (std::size_t k : {1, 3, 4, 5}) {
        const auto w = random_latent(Shape{6, 3, k, k}, rng);
        const auto q = mapping_predict(w, MappingNet<float>::passthrough(w, rng));
        REQUIRE(q.shape() == w.shape());
        for (float v : q.data()) {
            CHECK(v > -1.0f);
            CHECK(v < 1.0f);
        }
    }
}

TEST_CASE("zero convolutions predict zero") {
    std::mt19937_64 rng(3);
    const auto w = random_latent(Shape{4, 2, 3, 3}, rng);
    const auto q = mapping_predict(w, MappingNet<float>::zeros(2));
    for (float v : q.data()) CHECK(v == 0.0f);
}

TEST_CASE("channel mismatch is rejected") {
    std::mt19937_64 rng(4);
    const auto w = random_latent(Shape{4, 2, 3, 3}, rng);
    CHECK_THROWS_AS(mapping_predict(w, MappingNet<float>::zeros(3)), ShapeError);
}

TEST_CASE("tape and plain forward agree bit for bit") {
    std::mt19937_64 rng(5);
    const auto w = random_latent(Shape{8, 4, 3, 3}, rng);
    const auto net = MappingNet<float>::passthrough(w, rng);
    ag::Tape<float> tape;
    const auto vars = MappingVars<float>::bind(tape, net, false);
    CHECK(mapping_forward(tape.constant(w), vars).value() == mapping_predict(w, net));
}

TEST_CASE("passthrough start keeps the flip rate small") {
    std::mt19937_64 rng(6);
    for (int trial = 0; trial < 5; ++trial) {
        const auto w = random_latent(Shape{32, 16, 3, 3}, rng);
        const auto q = mapping_predict(w, MappingNet<float>::passthrough(w, rng));
        CHECK(flip_rate(sign(w), sign(q)) < 0.05);
    }
}

TEST_CASE("binarize is sign with identity gradient inside the clip range") {
    ag::Tape<float> tape;
    auto p = tape.leaf(Tensor(Shape{3}, std::vector<float>{0.7f, -0.01f, 0.0f}));
    const auto b = mapping_binarize(p);
    CHECK(b.value() == Tensor(Shape{3}, std::vector<float>{1, -1, 1}));
    tape.backward(ag::sum(b));
    CHECK(tape.grad(p) == Tensor(Shape{3}, 1.0f));
}

TEST_CASE("warm start") {
    std::mt19937_64 rng(7);
    const auto w = random_latent(Shape{8, 4, 3, 3}, rng);
    const auto labels = sign(w);
    const auto w_copy = w;

    SUBCASE("zero epochs leaves the net unchanged") {
        auto net = MappingNet<float>::passthrough(w, rng);
        const auto before = net.conv1;
        WarmStartOptions o;
        o.epochs = 0;
        warm_start(net, w, labels, o);
        CHECK(net.conv1 == before);
    }
    SUBCASE("loss decreases and latent weights stay put") {
        auto net = MappingNet<float>::passthrough(w, rng);
        WarmStartOptions o;
        o.epochs = 20;
        o.rates = {0, 0};
        o.lr = 0.05;
        const auto hist = warm_start(net, w, labels, o);
        REQUIRE(hist.size() == 21);
        CHECK(hist.back() < hist.front());
        CHECK(w == w_copy);
    }
    SUBCASE("negative epochs are rejected") {
        auto net = MappingNet<float>::zeros(4);
        WarmStartOptions o;
        o.epochs = -1;
        CHECK_THROWS_AS(warm_start(net, w, labels, o), ValueError);
    }
}

TEST_CASE("mapping gradients match finite differences") {
    std::mt19937_64 rng(8);
    Tensor64 w(Shape{4, 2, 3, 3});
    std::normal_distribution<double> n(0, 0.3);
    for (auto& v : w.data()) v = n(rng);
    auto net = MappingNet<double>::passthrough(w, rng);
    for (auto* p : net.params())
        for (auto& v : p->data()) v += 0.05 * n(rng);
    Tensor64 labels = sign(w);
    labels[3] = -labels[3];
    const NoiseRates r{0.05, 0.1};

    ag::RegionFreeze<double> freeze;
    auto loss = [&](bool track, std::vector<Tensor64>* grads) {
        ag::Tape<double> t;
        auto lv = t.leaf(w, track);
        const auto vars = MappingVars<double>::bind(t, net, track);
        freeze.cursor = 0;
        auto l = ag::corrected_layer_loss(mapping_forward(lv, vars, &freeze), labels, r);
        if (grads) {
            t.backward(l);
            grads->push_back(t.grad(lv));
            for (const auto& v : vars.p) grads->push_back(t.grad(v));
        }
        return l.value()[0];
    };
    std::vector<Tensor64> g;
    loss(true, &g);
    freeze.replay = true;
    std::vector<Tensor64*> params{&w};
    for (auto* p : net.params()) params.push_back(p);
    const double h = 1e-3;
    for (std::size_t k = 0; k < params.size(); ++k)
        for (std::size_t i = 0; i < params[k]->size(); ++i) {
            double& x = (*params[k])[i];
            const double keep = x;
            x = keep + h;
            const double up = loss(false, nullptr);
            x = keep - h;
            const double down = loss(false, nullptr);
            x = keep;
            const double fd = (up - down) / (2 * h);
            const double err = std::abs(fd - g[k][i]);
            INFO("param " << k << " index " << i << " analytic " << g[k][i] << " fd " << fd);
            CHECK((err < 1e-8 || err <= 1e-3 * std::max(std::abs(fd), std::abs(g[k][i]))));
        }
}
