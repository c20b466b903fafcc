#include <doctest.h>

#include <random>

#include "lns/inference.hpp"
#include "lns/model.hpp"

using namespace lns;

TEST_CASE("total loss examples") {
    CHECK(total_loss(0.5, {0.2}, 1.0) == doctest::Approx(0.7));
    CHECK(total_loss(0.37, {0.1, 0.2}, 0.5) == doctest::Approx(0.52));
    CHECK(total_loss(0.37, {0.1, 0.2}, 0.0) == 0.37);
    CHECK(total_loss(0.37, {}, 2.0) == 0.37);
    CHECK_THROWS_AS(total_loss(0.37, {0.1}, -0.1), ValueError);

    ag::Tape<double> t;
    auto cls = t.leaf(Tensor64(Shape{1}, 0.37));
    auto a = t.leaf(Tensor64(Shape{1}, 0.1)), b = t.leaf(Tensor64(Shape{1}, 0.2));
    const auto l = total_loss<double>(cls, {a, b}, 0.5);
    CHECK(l.value()[0] == doctest::Approx(0.52));
    t.backward(l);
    CHECK(t.grad(cls)[0] == 1.0);
    CHECK(t.grad(a)[0] == 0.5);
    CHECK(t.grad(b)[0] == 0.5);
}

TEST_CASE("bnn4 layout") {
    const auto s = ModelSpec::bnn4(1, 16, 16, 10, 16);
    REQUIRE(s.layers.size() == 4);
    CHECK(s.quantized_layers() == std::vector<std::size_t>{1, 2});
    CHECK_FALSE(s.layers.front().quantized);
    CHECK(s.layers.back().kind == LayerKind::linear);
    CHECK(s.layers[1].kernel == 4);
    CHECK(s.output_hw(0) == std::pair<std::size_t, std::size_t>{16, 16});
    CHECK(s.output_hw(1) == std::pair<std::size_t, std::size_t>{8, 8});
    CHECK(s.output_hw(2) == std::pair<std::size_t, std::size_t>{4, 4});
    CHECK(s.layers[3].in == 32 * 16);

    const auto odd = ModelSpec::bnn4(3, 15, 15, 10, 8);
    CHECK(odd.layers[1].kernel == 3);
    CHECK(odd.output_hw(1) == std::pair<std::size_t, std::size_t>{8, 8});
    CHECK(odd.layers[2].kernel == 4);

    CHECK_THROWS_AS(ModelSpec::by_name("resnet", 1, 16, 16, 10), ValueError);
}

TEST_CASE("spec validation") {
    auto s = ModelSpec::bnn4(1, 16, 16, 10, 4);
    SUBCASE("quantized first layer") {
        s.layers.front().quantized = true;
        CHECK_THROWS_AS(s.validate(), ValueError);
    }
    SUBCASE("quantized classifier") {
        s.layers.back().quantized = true;
        CHECK_THROWS_AS(s.validate(), ValueError);
    }
    SUBCASE("missing classifier") {
        s.layers.pop_back();
        CHECK_THROWS_AS(s.validate(), ValueError);
    }
    SUBCASE("channel mismatch") {
        s.layers[2].in += 1;
        CHECK_THROWS_AS(s.validate(), ShapeError);
    }
    SUBCASE("class count") {
        s.classes = 7;
        CHECK_THROWS_AS(s.validate(), ShapeError);
    }
}

TEST_CASE("spec JSON roundtrip") {
    const auto s = ModelSpec::bnn4(3, 15, 15, 10, 8);
    CHECK(ModelSpec::from_json(s.to_json()) == s);
    auto j = s.to_json();
    j["layers"][0]["kind"] = "pool";
    CHECK_THROWS_AS(ModelSpec::from_json(j), ValueError);
}

TEST_CASE("init and params") {
    std::mt19937_64 rng(1);
    auto m = Model<float>::init(ModelSpec::toy(1, 6, 6, 3), rng);
    const auto ps = m.params();
    // weight, gamma, beta per conv and weight, bias for the classifier
    CHECK(ps.size() == 3 * 3 + 2);
    CHECK(m.layers[0].gamma == Tensor(Shape{2}, 1.0f));
    CHECK_FALSE(m.has_mapping());
    const auto d = m.cast<double>();
    CHECK(d.layers[1].weight == m.layers[1].weight.cast<double>());

    std::mt19937_64 rng2(1);
    const auto again = Model<float>::init(ModelSpec::toy(1, 6, 6, 3), rng2);
    CHECK(again.layers[2].weight == m.layers[2].weight);
}

TEST_CASE("binary weights come from the requested source") {
    std::mt19937_64 rng(2);
    auto m = Model<float>::init(ModelSpec::toy(1, 6, 6, 3), rng);
    auto& layer = m.layers[1];
    CHECK(binary_weights(layer, WeightSource::sign) == sign(layer.weight));
    // without a mapping network both sources agree
    CHECK(binary_weights(layer, WeightSource::mapping) == sign(layer.weight));

    layer.mapping = MappingNet<float>::zeros(layer.weight.shape()[1]);
    // f(W) = tanh(0) = 0 everywhere, and sign(0) = +1
    CHECK(binary_weights(layer, WeightSource::mapping) == Tensor(layer.weight.shape(), 1.0f));
    CHECK(m.has_mapping());
}

TEST_CASE("eval-mode forward agrees with the bit-packed inference path") {
    std::mt19937_64 rng(3);
    auto m = Model<float>::init(ModelSpec::bnn4(1, 12, 12, 10, 8), rng);
    m.scale_mode = ScaleMode::layer_wise;
    std::normal_distribution<float> n(0.0f, 1.0f);
    for (auto& l : m.layers)
        if (!l.bn.running_mean.empty())
            for (std::size_t c = 0; c < l.bn.running_mean.size(); ++c) {
                l.bn.running_mean[c] = 0.1f * n(rng);
                l.bn.running_var[c] = 1.0f + 0.2f * std::abs(n(rng));
            }
    Tensor x(Shape{3, 1, 12, 12});
    for (auto& v : x.data()) v = n(rng);

    ag::Tape<float> t;
    const auto bound = BoundModel<float>::bind(t, m, false, false);
    ForwardOptions<float> o;
    o.mode = ag::Mode::eval;
    o.update_running_stats = false;
    const auto dense = forward(m, bound, t.constant(x), o).logits.value();
    const auto packed = InferenceModel::from_model(m, WeightSource::sign).logits(x);
    REQUIRE(packed.shape() == dense.shape());
    for (std::size_t i = 0; i < dense.size(); ++i) CHECK(packed[i] == doctest::Approx(dense[i]).epsilon(1e-4));
}
