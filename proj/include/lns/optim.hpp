#pragma once

#include "lns/tensor.hpp"

namespace lns {

/// One SGD step with momentum and L2 weight decay:
///   v <- momentum * v + grad + weight_decay * param
///   param <- param - lr * v
/// `velocity` is resized to zeros on first use.
template <typename T>
void sgd_step(BasicTensor<T>& param, const BasicTensor<T>& grad, BasicTensor<T>& velocity, T lr, T momentum,
              T weight_decay) {
    require_same_shape(param.shape(), grad.shape(), "sgd_step");
    if (!(lr > T{0})) throw ValueError("sgd_step: learning rate must be positive");
    if (velocity.empty()) velocity = BasicTensor<T>(param.shape());
    require_same_shape(param.shape(), velocity.shape(), "sgd_step velocity");
    for (std::size_t i = 0; i < param.size(); ++i) {
        velocity[i] = momentum * velocity[i] + grad[i] + weight_decay * param[i];
        param[i] -= lr * velocity[i];
    }
}

}  // namespace lns
