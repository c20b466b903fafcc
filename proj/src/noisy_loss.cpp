#include "lns/noisy_loss.hpp"

#include <cmath>
#include <random>
#include <string>

namespace lns {

void NoiseRates::validate() const {
    if (!(rho_pos >= 0.0) || !(rho_neg >= 0.0))
        throw ValueError("noise rates must be non-negative, got (" + std::to_string(rho_pos) + ", " +
                         std::to_string(rho_neg) + ")");
    if (!(rho_pos + rho_neg < 1.0))
        throw ValueError("noise rates must sum to less than 1, got " + std::to_string(rho_pos) + " + " +
                         std::to_string(rho_neg));
}

namespace {

template <typename T>
int checked_label(T label) {
    if (label == T{1}) return 1;
    if (label == T{-1}) return -1;
    throw ValueError("label must be +1 or -1, got " + std::to_string(double(label)));
}

}  // namespace

template <typename T>
T mse_label_loss(T prediction, T label) {
    checked_label(label);
    const T d = prediction - label;
    return d * d;
}

template <typename T>
T corrected_loss(T prediction, T noisy_label, const NoiseRates& rates) {
    rates.validate();
    const int t = checked_label(noisy_label);
    const T keep = static_cast<T>(1.0 - rates.rate(-t));
    const T flip = static_cast<T>(rates.rate(t));
    const T same = mse_label_loss(prediction, noisy_label);
    const T other = mse_label_loss(prediction, -noisy_label);
    return (keep * same - flip * other) / static_cast<T>(rates.denominator());
}

template <typename T>
T corrected_loss_grad(T prediction, T noisy_label, const NoiseRates& rates) {
    rates.validate();
    const int t = checked_label(noisy_label);
    const T flip = static_cast<T>(rates.rate(t));
    return T{2} * (prediction - noisy_label) - T{4} * flip * noisy_label / static_cast<T>(rates.denominator());
}

template <typename T>
T layer_loss(const BasicTensor<T>& predictions, const BasicTensor<T>& noisy_labels, const NoiseRates& rates,
             Reduction reduction) {
    require_same_shape(predictions.shape(), noisy_labels.shape(), "layer_loss");
    T total{};
    for (std::size_t i = 0; i < predictions.size(); ++i)
        total += corrected_loss(predictions[i], noisy_labels[i], rates);
    return reduction == Reduction::mean ? total / static_cast<T>(predictions.size()) : total;
}

template <typename T>
BasicTensor<T> flip_noise_simulate(const BasicTensor<T>& clean, const NoiseRates& rates, std::uint64_t seed) {
    rates.validate();
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    BasicTensor<T> out(clean.shape());
    for (std::size_t i = 0; i < clean.size(); ++i) {
        const int q = checked_label(clean[i]);
        out[i] = u(rng) < rates.rate(q) ? -clean[i] : clean[i];
    }
    return out;
}

namespace ag {

template <typename T>
Var<T> corrected_layer_loss(Var<T> predictions, const BasicTensor<T>& noisy_labels, const NoiseRates& rates,
                            Reduction reduction) {
    Tape<T>& tape = *predictions.tape;
    const T value = layer_loss(predictions.value(), noisy_labels, rates, reduction);
    return tape.record(BasicTensor<T>(Shape{1}, value), {predictions},
                       [&tape, predictions, noisy_labels, rates, reduction](const BasicTensor<T>& g) {
                           const auto& q = predictions.value();
                           const T norm = reduction == Reduction::mean ? static_cast<T>(q.size()) : T{1};
                           BasicTensor<T> gq(q.shape());
                           for (std::size_t i = 0; i < q.size(); ++i)
                               gq[i] = g[0] * corrected_loss_grad(q[i], noisy_labels[i], rates) / norm;
                           tape.accumulate(predictions, gq);
                       });
}

template Var<float> corrected_layer_loss(Var<float>, const BasicTensor<float>&, const NoiseRates&, Reduction);
template Var<double> corrected_layer_loss(Var<double>, const BasicTensor<double>&, const NoiseRates&, Reduction);

}  // namespace ag

#define LNS_INSTANTIATE(T)                                                                                \
    template T mse_label_loss(T, T);                                                                      \
    template T corrected_loss(T, T, const NoiseRates&);                                                   \
    template T corrected_loss_grad(T, T, const NoiseRates&);                                              \
    template T layer_loss(const BasicTensor<T>&, const BasicTensor<T>&, const NoiseRates&, Reduction);    \
    template BasicTensor<T> flip_noise_simulate(const BasicTensor<T>&, const NoiseRates&, std::uint64_t);

LNS_INSTANTIATE(float)
LNS_INSTANTIATE(double)

#undef LNS_INSTANTIATE

}  // namespace lns
