#pragma once

// Forward/backward numerics for the dense operations. These are plain
// functions over tensors; lns/autograd.hpp records them on a tape. Both the
// training graph and the exported inference model call the same forward
// routines, so their outputs agree bit for bit.

#include <cstddef>
#include <cstdint>
#include <span>

#include "lns/tensor.hpp"

namespace lns::fn {

/// Matrix products: float goes through the active SIMD kernel table, double
/// through the scalar reference.
template <typename T>
void gemm_nn(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C, bool accumulate);
template <typename T>
void gemm_nt(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C, bool accumulate);
template <typename T>
void gemm_tn(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C, bool accumulate);

struct ConvGeometry {
    std::size_t n, c, h, w;  // input
    std::size_t o, k;        // filters, square kernel
    std::size_t stride, padding;
    std::size_t oh, ow;      // output

    /// Validates shapes and derives the output extent. Throws ShapeError.
    static ConvGeometry make(const Shape& input, const Shape& weight, std::size_t stride, std::size_t padding);
};

/// Cross-correlation. Positions outside the input read as `pad_value`.
template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& weight, std::size_t stride,
                      std::size_t padding, T pad_value = T{});

/// Gradients of conv2d. Either output pointer may be null.
template <typename T>
void conv2d_backward(const BasicTensor<T>& input, const BasicTensor<T>& weight, const BasicTensor<T>& grad_out,
                     std::size_t stride, std::size_t padding, T pad_value, BasicTensor<T>* grad_input,
                     BasicTensor<T>* grad_weight);

/// input[n,d] * weight[m,d]^T + bias[m]
template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& input, const BasicTensor<T>& weight, const BasicTensor<T>& bias);

template <typename T>
void linear_backward(const BasicTensor<T>& input, const BasicTensor<T>& weight, const BasicTensor<T>& grad_out,
                     BasicTensor<T>* grad_input, BasicTensor<T>* grad_weight, BasicTensor<T>* grad_bias);

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormDecay = 0.9;

/// Running statistics for one batch-norm layer.
template <typename T>
struct BatchNormState {
    BasicTensor<T> running_mean;
    BasicTensor<T> running_var;

    explicit BatchNormState(std::size_t channels = 1)
        : running_mean(Shape{channels}, T{0}), running_var(Shape{channels}, T{1}) {}
};

/// Intermediate values of a training-mode batch-norm forward.
template <typename T>
struct BatchNormCache {
    BasicTensor<T> normalized;  // (x - mean) * inv_std
    std::vector<T> inv_std;
};

/// Normalizes by batch statistics over every axis except 1. Updates `state`
/// by exponential moving average when it is non-null.
template <typename T>
BasicTensor<T> batch_norm_train(const BasicTensor<T>& input, const BasicTensor<T>& gamma, const BasicTensor<T>& beta,
                                BatchNormState<T>* state, BatchNormCache<T>* cache, double eps = kBatchNormEps,
                                double decay = kBatchNormDecay);

template <typename T>
void batch_norm_train_backward(const BatchNormCache<T>& cache, const BasicTensor<T>& gamma,
                               const BasicTensor<T>& grad_out, BasicTensor<T>* grad_input,
                               BasicTensor<T>* grad_gamma, BasicTensor<T>* grad_beta);

template <typename T>
BasicTensor<T> batch_norm_eval(const BasicTensor<T>& input, const BasicTensor<T>& gamma, const BasicTensor<T>& beta,
                               const BatchNormState<T>& state, double eps = kBatchNormEps);

enum class Activation { none, relu, hardtanh, prelu };

/// Elementwise activation. `slope` is per channel (axis 1) and only read for prelu.
template <typename T>
BasicTensor<T> activate(const BasicTensor<T>& input, Activation act, const BasicTensor<T>* slope = nullptr);

template <typename T>
BasicTensor<T> tanh(const BasicTensor<T>& input);

/// Mean over the batch of -log softmax(logits)[label]. Fills `probs` with
/// the softmax when non-null.
template <typename T>
T cross_entropy(const BasicTensor<T>& logits, std::span<const std::int32_t> labels, BasicTensor<T>* probs = nullptr);

/// Index of the largest logit per row; the first maximum wins ties.
template <typename T>
std::vector<std::int32_t> argmax_rows(const BasicTensor<T>& logits);

}  // namespace lns::fn
