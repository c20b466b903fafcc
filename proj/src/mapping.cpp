#include "lns/mapping.hpp"

#include <cmath>

#include "lns/functional.hpp"
#include "lns/optim.hpp"

namespace lns {

namespace {

constexpr std::size_t kTaps = 9;  // 3 x 3
constexpr std::size_t kCenter = 4;

template <typename T>
void add_uniform_noise(BasicTensor<T>& t, std::size_t fan_in, std::mt19937_64& rng) {
    const double amp = 0.01 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> u(-amp, amp);
    for (auto& v : t.data()) v += static_cast<T>(u(rng));
}

// Beta that cancels the batch-norm mean subtraction for unit gamma, so the
// normalized output is input / std rather than (input - mean) / std.
template <typename T>
BasicTensor<T> mean_compensating_beta(const BasicTensor<T>& x) {
    const std::size_t n = x.dim(0), c = x.dim(1), inner = x.size() / (n * c);
    BasicTensor<T> beta(Shape{c});
    for (std::size_t ch = 0; ch < c; ++ch) {
        double sum = 0, sq = 0;
        for (std::size_t a = 0; a < n; ++a)
            for (std::size_t i = 0; i < inner; ++i) sum += x[(a * c + ch) * inner + i];
        const double m = sum / static_cast<double>(n * inner);
        for (std::size_t a = 0; a < n; ++a)
            for (std::size_t i = 0; i < inner; ++i) {
                const double d = x[(a * c + ch) * inner + i] - m;
                sq += d * d;
            }
        const double var = sq / static_cast<double>(n * inner);
        beta[ch] = static_cast<T>(m / std::sqrt(var + fn::kBatchNormEps));
    }
    return beta;
}

template <typename T>
void check_latent(const BasicTensor<T>& latent, std::size_t channels) {
    if (latent.rank() != 4 || latent.dim(2) != latent.dim(3))
        throw ShapeError("mapping: latent weights must be [o, c, k, k], got " + latent.shape().str());
    if (latent.dim(1) != channels)
        throw ShapeError("mapping: latent " + latent.shape().str() + " does not match a network for " +
                         std::to_string(channels) + " channels");
}

}  // namespace

template <typename T>
MappingNet<T> MappingNet<T>::zeros(std::size_t c) {
    MappingNet net;
    net.channels = c;
    net.conv1 = BasicTensor<T>(Shape{2 * c, c, 3, 3});
    net.bn1_gamma = BasicTensor<T>(Shape{2 * c}, T{1});
    net.bn1_beta = BasicTensor<T>(Shape{2 * c});
    net.conv2 = BasicTensor<T>(Shape{2 * c, 2 * c, 3, 3});
    net.bn2_gamma = BasicTensor<T>(Shape{2 * c}, T{1});
    net.bn2_beta = BasicTensor<T>(Shape{2 * c});
    net.conv3 = BasicTensor<T>(Shape{c, 2 * c, 3, 3});
    return net;
}

template <typename T>
MappingNet<T> MappingNet<T>::passthrough(const BasicTensor<T>& latent, std::mt19937_64& rng) {
    if (latent.rank() != 4) throw ShapeError("mapping: latent weights must be rank 4, got " + latent.shape().str());
    const std::size_t c = latent.dim(1);
    MappingNet net = zeros(c);

    add_uniform_noise(net.conv1, c * kTaps, rng);
    for (std::size_t j = 0; j < c; ++j) {
        net.conv1[(j * c + j) * kTaps + kCenter] += T{1};
        net.conv1[((c + j) * c + j) * kTaps + kCenter] -= T{1};
    }
    const auto z1 = fn::conv2d(latent, net.conv1, 1, 1);
    net.bn1_beta = mean_compensating_beta(z1);
    const auto a1 =
        fn::activate(fn::batch_norm_train<T>(z1, net.bn1_gamma, net.bn1_beta, nullptr, nullptr), fn::Activation::relu);

    add_uniform_noise(net.conv2, 2 * c * kTaps, rng);
    for (std::size_t j = 0; j < 2 * c; ++j) net.conv2[(j * 2 * c + j) * kTaps + kCenter] += T{1};
    net.bn2_beta = mean_compensating_beta(fn::conv2d(a1, net.conv2, 1, 1));

    add_uniform_noise(net.conv3, 2 * c * kTaps, rng);
    for (std::size_t j = 0; j < c; ++j) {
        net.conv3[(j * 2 * c + j) * kTaps + kCenter] += T{1};
        net.conv3[(j * 2 * c + c + j) * kTaps + kCenter] -= T{1};
    }
    return net;
}

template <typename T>
ag::Var<T> mapping_forward(ag::Var<T> latent, const MappingVars<T>& net, ag::RegionFreeze<T>* freeze) {
    check_latent(latent.value(), net.p[0].value().dim(1));
    using ag::Mode;
    auto h = ag::conv2d(latent, net.p[0], 1, 1);
    h = ag::relu(ag::batch_norm<T>(h, net.p[1], net.p[2], nullptr, Mode::train), freeze);
    h = ag::conv2d(h, net.p[3], 1, 1);
    h = ag::relu(ag::batch_norm<T>(h, net.p[4], net.p[5], nullptr, Mode::train), freeze);
    h = ag::conv2d(h, net.p[6], 1, 1);
    return ag::tanh(h);
}

template <typename T>
BasicTensor<T> mapping_predict(const BasicTensor<T>& latent, const MappingNet<T>& net) {
    check_latent(latent, net.channels);
    auto h = fn::conv2d(latent, net.conv1, 1, 1);
    h = fn::activate(fn::batch_norm_train<T>(h, net.bn1_gamma, net.bn1_beta, nullptr, nullptr), fn::Activation::relu);
    h = fn::conv2d(h, net.conv2, 1, 1);
    h = fn::activate(fn::batch_norm_train<T>(h, net.bn2_gamma, net.bn2_beta, nullptr, nullptr), fn::Activation::relu);
    h = fn::conv2d(h, net.conv3, 1, 1);
    return fn::tanh(h);
}

template <typename T>
std::vector<double> warm_start(MappingNet<T>& net, const BasicTensor<T>& latent, const BasicTensor<T>& labels,
                               const WarmStartOptions& options) {
    if (options.epochs < 0) throw ValueError("warm_start: epochs must be >= 0");
    if (options.steps_per_epoch < 1) throw ValueError("warm_start: steps_per_epoch must be >= 1");
    options.rates.validate();
    require_same_shape(latent.shape(), labels.shape(), "warm_start labels");
    std::vector<double> history;
    std::array<BasicTensor<T>, MappingNet<T>::kParamCount> velocity;
    for (int epoch = 0; epoch < options.epochs; ++epoch) {
        for (int step = 0; step < options.steps_per_epoch; ++step) {
            ag::Tape<T> tape;
            const auto vars = MappingVars<T>::bind(tape, net, true);
            const auto w = tape.constant(latent);
            const auto loss =
                ag::corrected_layer_loss(mapping_forward(w, vars), labels, options.rates, options.reduction);
            if (step == 0) history.push_back(static_cast<double>(loss.value()[0]));
            tape.backward(loss);
            auto params = net.params();
            for (std::size_t i = 0; i < params.size(); ++i)
                sgd_step(*params[i], tape.grad(vars.p[i]), velocity[i], static_cast<T>(options.lr),
                         static_cast<T>(options.momentum), T{0});
        }
    }
    history.push_back(static_cast<double>(layer_loss(mapping_predict(latent, net), labels, options.rates,
                                                     options.reduction)));
    return history;
}

template struct MappingNet<float>;
template struct MappingNet<double>;
template ag::Var<float> mapping_forward(ag::Var<float>, const MappingVars<float>&, ag::RegionFreeze<float>*);
template ag::Var<double> mapping_forward(ag::Var<double>, const MappingVars<double>&, ag::RegionFreeze<double>*);
template BasicTensor<float> mapping_predict(const BasicTensor<float>&, const MappingNet<float>&);
template BasicTensor<double> mapping_predict(const BasicTensor<double>&, const MappingNet<double>&);
template std::vector<double> warm_start(MappingNet<float>&, const BasicTensor<float>&, const BasicTensor<float>&,
                                        const WarmStartOptions&);
template std::vector<double> warm_start(MappingNet<double>&, const BasicTensor<double>&, const BasicTensor<double>&,
                                        const WarmStartOptions&);

}  // namespace lns
