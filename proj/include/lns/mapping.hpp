#pragma once

// Per-layer mapping network: predicts binary weights from the whole latent
// weight tensor of one quantized convolution. The o filters of a [o, c, k, k]
// weight are a batch of c-channel k x k images:
//
//   conv(c -> 2c) -> BN -> ReLU -> conv(2c -> 2c) -> BN -> ReLU -> conv(2c -> c) -> tanh
//
// All convolutions are 3x3, stride 1, padding 1, without bias. Batch norm
// always normalizes over the filter batch; it keeps no running statistics.

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "lns/autograd.hpp"
#include "lns/binarize.hpp"
#include "lns/noisy_loss.hpp"
#include "lns/tensor.hpp"

namespace lns {

template <typename T>
struct MappingNet {
    std::size_t channels = 0;
    BasicTensor<T> conv1, bn1_gamma, bn1_beta;
    BasicTensor<T> conv2, bn2_gamma, bn2_beta;
    BasicTensor<T> conv3;

    static constexpr std::size_t kParamCount = 7;
    static constexpr std::array<const char*, kParamCount> kParamNames{"conv1", "bn1_gamma", "bn1_beta", "conv2",
                                                                      "bn2_gamma", "bn2_beta", "conv3"};

    /// All-zero convolutions, unit gammas, zero betas.
    static MappingNet zeros(std::size_t channels);

    /// Near-passthrough start for the given latent weights: sign(output)
    /// reproduces sign(latent) up to small init noise. The first layer splits
    /// each channel into +x and -x halves, the second passes them through,
    /// and the last recombines them as (+x) - (-x). Batch-norm offsets are set
    /// from the latent tensor so the mean shift does not move the zero
    /// crossing. Every convolution gets uniform noise of amplitude
    /// 0.01 / sqrt(fan_in).
    static MappingNet passthrough(const BasicTensor<T>& latent, std::mt19937_64& rng);

    std::array<BasicTensor<T>*, kParamCount> params() {
        return {&conv1, &bn1_gamma, &bn1_beta, &conv2, &bn2_gamma, &bn2_beta, &conv3};
    }
    std::array<const BasicTensor<T>*, kParamCount> params() const {
        return {&conv1, &bn1_gamma, &bn1_beta, &conv2, &bn2_gamma, &bn2_beta, &conv3};
    }

    template <typename U>
    MappingNet<U> cast() const {
        MappingNet<U> out;
        out.channels = channels;
        auto dst = out.params();
        auto src = params();
        for (std::size_t i = 0; i < kParamCount; ++i) *dst[i] = src[i]->template cast<U>();
        return out;
    }
};

/// Mapping-network parameters placed on a tape.
template <typename T>
struct MappingVars {
    std::array<ag::Var<T>, MappingNet<T>::kParamCount> p;

    static MappingVars bind(ag::Tape<T>& tape, const MappingNet<T>& net, bool requires_grad) {
        MappingVars v;
        auto src = net.params();
        for (std::size_t i = 0; i < src.size(); ++i) v.p[i] = tape.leaf(*src[i], requires_grad);
        return v;
    }
};

/// Real-valued prediction in (-1, 1) with the latent tensor's shape.
template <typename T>
ag::Var<T> mapping_forward(ag::Var<T> latent, const MappingVars<T>& net, ag::RegionFreeze<T>* freeze = nullptr);

/// Same computation outside autodiff; bit-identical to mapping_forward.
template <typename T>
BasicTensor<T> mapping_predict(const BasicTensor<T>& latent, const MappingNet<T>& net);

/// sign() forward with straight-through backward, applied to a prediction.
template <typename T>
ag::Var<T> mapping_binarize(ag::Var<T> prediction, SignLinearization<T>* lin = nullptr) {
    return ag::sign_ste(prediction, lin);
}

struct WarmStartOptions {
    int epochs = 5;
    int steps_per_epoch = 1;
    double lr = 0.01;
    double momentum = 0.9;
    NoiseRates rates;
    Reduction reduction = Reduction::mean;
};

/// Fits the mapping network alone to `labels` under the corrected loss.
/// `latent` and everything outside `net` stay untouched. Returns the
/// corrected loss measured before each epoch plus the final one.
template <typename T>
std::vector<double> warm_start(MappingNet<T>& net, const BasicTensor<T>& latent, const BasicTensor<T>& labels,
                               const WarmStartOptions& options);

}  // namespace lns
