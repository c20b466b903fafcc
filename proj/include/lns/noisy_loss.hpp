#pragma once

// Class-conditional label noise on binary weights and the corrected squared
// loss whose expectation over the noise equals the clean loss.
//
// For a prediction q and observed label t in {+1, -1}, with rho(t) the
// probability that a true t is observed flipped:
//
//   l(q, t)   = (q - t)^2
//   lc(q, t)  = [(1 - rho(-t)) l(q, t) - rho(t) l(q, -t)] / (1 - rho(+1) - rho(-1))
//   dlc/dq    = 2 (q - t) - 4 rho(t) t / (1 - rho(+1) - rho(-1))
//
// lc can be negative; that is inherent to the unbiased form.

#include <cstdint>

#include "lns/autograd.hpp"
#include "lns/tensor.hpp"

namespace lns {

struct NoiseRates {
    double rho_pos = 0.005;  // P(observed -1 | true +1)
    double rho_neg = 0.005;  // P(observed +1 | true -1)

    static NoiseRates symmetric(double rho) { return {rho, rho}; }

    /// Throws ValueError unless both rates are >= 0 and their sum is < 1.
    void validate() const;

    /// Flip probability of a true `label`.
    double rate(int label) const { return label > 0 ? rho_pos : rho_neg; }
    double denominator() const { return 1.0 - rho_pos - rho_neg; }
};

enum class Reduction { sum, mean };

/// (prediction - label)^2; label must be exactly +1 or -1.
template <typename T>
T mse_label_loss(T prediction, T label);

template <typename T>
T corrected_loss(T prediction, T noisy_label, const NoiseRates& rates);

template <typename T>
T corrected_loss_grad(T prediction, T noisy_label, const NoiseRates& rates);

/// Corrected loss reduced over a whole layer of predictions.
template <typename T>
T layer_loss(const BasicTensor<T>& predictions, const BasicTensor<T>& noisy_labels, const NoiseRates& rates,
             Reduction reduction = Reduction::mean);

/// Flips each +1 with probability rho_pos and each -1 with probability
/// rho_neg, independently. Deterministic given `seed`.
template <typename T>
BasicTensor<T> flip_noise_simulate(const BasicTensor<T>& clean, const NoiseRates& rates, std::uint64_t seed);

namespace ag {

/// Differentiable layer_loss. Labels are constants; the gradient with
/// respect to the predictions is the analytic corrected_loss_grad.
template <typename T>
Var<T> corrected_layer_loss(Var<T> predictions, const BasicTensor<T>& noisy_labels, const NoiseRates& rates,
                            Reduction reduction = Reduction::mean);

}  // namespace ag

}  // namespace lns
