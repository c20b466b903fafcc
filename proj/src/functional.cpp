#include "lns/functional.hpp"

#include <cmath>
#include <limits>

#include "lns/simd/gemm_ref.hpp"
#include "lns/simd/kernels.hpp"

namespace lns::fn {

template <>
void gemm_nn<float>(std::size_t M, std::size_t N, std::size_t K, const float* A, const float* B, float* C,
                    bool accumulate) {
    simd::active().gemm_nn(M, N, K, A, B, C, accumulate);
}
template <>
void gemm_nt<float>(std::size_t M, std::size_t N, std::size_t K, const float* A, const float* B, float* C,
                    bool accumulate) {
    simd::active().gemm_nt(M, N, K, A, B, C, accumulate);
}
template <>
void gemm_tn<float>(std::size_t M, std::size_t N, std::size_t K, const float* A, const float* B, float* C,
                    bool accumulate) {
    simd::active().gemm_tn(M, N, K, A, B, C, accumulate);
}
template <>
void gemm_nn<double>(std::size_t M, std::size_t N, std::size_t K, const double* A, const double* B, double* C,
                     bool accumulate) {
    simd::ref_gemm_nn(M, N, K, A, B, C, accumulate);
}
template <>
void gemm_nt<double>(std::size_t M, std::size_t N, std::size_t K, const double* A, const double* B, double* C,
                     bool accumulate) {
    simd::ref_gemm_nt(M, N, K, A, B, C, accumulate);
}
template <>
void gemm_tn<double>(std::size_t M, std::size_t N, std::size_t K, const double* A, const double* B, double* C,
                     bool accumulate) {
    simd::ref_gemm_tn(M, N, K, A, B, C, accumulate);
}

ConvGeometry ConvGeometry::make(const Shape& input, const Shape& weight, std::size_t stride, std::size_t padding) {
    if (input.rank() != 4 || weight.rank() != 4)
        throw ShapeError("conv2d: expected rank-4 input and weight, got " + input.str() + " and " + weight.str());
    if (input[1] != weight[1])
        throw ShapeError("conv2d: channel mismatch between input " + input.str() + " and weight " + weight.str());
    if (weight[2] != weight[3])
        throw ShapeError("conv2d: kernel must be square, got weight " + weight.str());
    if (stride == 0) throw ValueError("conv2d: stride must be positive");
    ConvGeometry g{input[0], input[1], input[2], input[3], weight[0], weight[2], stride, padding, 0, 0};
    const std::size_t ph = g.h + 2 * padding;
    const std::size_t pw = g.w + 2 * padding;
    if (ph < g.k || pw < g.k || (ph - g.k) % stride != 0 || (pw - g.k) % stride != 0)
        throw ShapeError("conv2d: input " + input.str() + " incompatible with weight " + weight.str() +
                         " at stride " + std::to_string(stride) + ", padding " + std::to_string(padding));
    g.oh = (ph - g.k) / stride + 1;
    g.ow = (pw - g.k) / stride + 1;
    return g;
}

namespace {

// col[(ci * k + ky) * k + kx, oy * ow + ox] for one sample
template <typename T>
void im2col(const T* x, const ConvGeometry& g, T pad_value, T* col) {
    const std::size_t spatial = g.oh * g.ow;
    for (std::size_t ci = 0; ci < g.c; ++ci)
        for (std::size_t ky = 0; ky < g.k; ++ky)
            for (std::size_t kx = 0; kx < g.k; ++kx) {
                T* row = col + ((ci * g.k + ky) * g.k + kx) * spatial;
                for (std::size_t oy = 0; oy < g.oh; ++oy) {
                    const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.padding);
                    for (std::size_t ox = 0; ox < g.ow; ++ox) {
                        const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.padding);
                        const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<long>(g.h) &&
                                            ix < static_cast<long>(g.w);
                        row[oy * g.ow + ox] = inside ? x[(ci * g.h + iy) * g.w + ix] : pad_value;
                    }
                }
            }
}

template <typename T>
void col2im_add(const T* col, const ConvGeometry& g, T* dx) {
    const std::size_t spatial = g.oh * g.ow;
    for (std::size_t ci = 0; ci < g.c; ++ci)
        for (std::size_t ky = 0; ky < g.k; ++ky)
            for (std::size_t kx = 0; kx < g.k; ++kx) {
                const T* row = col + ((ci * g.k + ky) * g.k + kx) * spatial;
                for (std::size_t oy = 0; oy < g.oh; ++oy) {
                    const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.padding);
                    if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
                    for (std::size_t ox = 0; ox < g.ow; ++ox) {
                        const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.padding);
                        if (ix < 0 || ix >= static_cast<long>(g.w)) continue;
                        dx[(ci * g.h + iy) * g.w + ix] += row[oy * g.ow + ox];
                    }
                }
            }
}

}  // namespace

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& weight, std::size_t stride,
                      std::size_t padding, T pad_value) {
    const auto g = ConvGeometry::make(input.shape(), weight.shape(), stride, padding);
    const std::size_t ckk = g.c * g.k * g.k;
    const std::size_t spatial = g.oh * g.ow;
    BasicTensor<T> out(Shape{g.n, g.o, g.oh, g.ow});
    std::vector<T> col(ckk * spatial);
    for (std::size_t s = 0; s < g.n; ++s) {
        im2col(input.ptr() + s * g.c * g.h * g.w, g, pad_value, col.data());
        gemm_nn<T>(g.o, spatial, ckk, weight.ptr(), col.data(), out.ptr() + s * g.o * spatial, false);
    }
    return out;
}

template <typename T>
void conv2d_backward(const BasicTensor<T>& input, const BasicTensor<T>& weight, const BasicTensor<T>& grad_out,
                     std::size_t stride, std::size_t padding, T pad_value, BasicTensor<T>* grad_input,
                     BasicTensor<T>* grad_weight) {
    const auto g = ConvGeometry::make(input.shape(), weight.shape(), stride, padding);
    require_same_shape(grad_out.shape(), Shape{g.n, g.o, g.oh, g.ow}, "conv2d_backward");
    const std::size_t ckk = g.c * g.k * g.k;
    const std::size_t spatial = g.oh * g.ow;
    std::vector<T> col(ckk * spatial);
    if (grad_input) *grad_input = BasicTensor<T>(input.shape());
    if (grad_weight) *grad_weight = BasicTensor<T>(weight.shape());
    for (std::size_t s = 0; s < g.n; ++s) {
        const T* dy = grad_out.ptr() + s * g.o * spatial;
        if (grad_weight) {
            im2col(input.ptr() + s * g.c * g.h * g.w, g, pad_value, col.data());
            gemm_nt<T>(g.o, ckk, spatial, dy, col.data(), grad_weight->ptr(), true);
        }
        if (grad_input) {
            gemm_tn<T>(ckk, spatial, g.o, weight.ptr(), dy, col.data(), false);
            col2im_add(col.data(), g, grad_input->ptr() + s * g.c * g.h * g.w);
        }
    }
}

template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& input, const BasicTensor<T>& weight, const BasicTensor<T>& bias) {
    if (input.rank() != 2 || weight.rank() != 2 || bias.rank() != 1 || input.dim(1) != weight.dim(1) ||
        bias.dim(0) != weight.dim(0))
        throw ShapeError("linear: incompatible input " + input.shape().str() + ", weight " + weight.shape().str() +
                         ", bias " + bias.shape().str());
    const std::size_t n = input.dim(0), d = input.dim(1), m = weight.dim(0);
    BasicTensor<T> out(Shape{n, m});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) out.at(i, j) = bias[j];
    gemm_nt<T>(n, m, d, input.ptr(), weight.ptr(), out.ptr(), true);
    return out;
}

template <typename T>
void linear_backward(const BasicTensor<T>& input, const BasicTensor<T>& weight, const BasicTensor<T>& grad_out,
                     BasicTensor<T>* grad_input, BasicTensor<T>* grad_weight, BasicTensor<T>* grad_bias) {
    const std::size_t n = input.dim(0), d = input.dim(1), m = weight.dim(0);
    require_same_shape(grad_out.shape(), Shape{n, m}, "linear_backward");
    if (grad_input) {
        *grad_input = BasicTensor<T>(input.shape());
        gemm_nn<T>(n, d, m, grad_out.ptr(), weight.ptr(), grad_input->ptr(), false);
    }
    if (grad_weight) {
        *grad_weight = BasicTensor<T>(weight.shape());
        gemm_tn<T>(m, d, n, grad_out.ptr(), input.ptr(), grad_weight->ptr(), false);
    }
    if (grad_bias) {
        *grad_bias = BasicTensor<T>(Shape{m});
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < m; ++j) (*grad_bias)[j] += grad_out.at(i, j);
    }
}

namespace {

struct ChannelLayout {
    std::size_t outer, channels, inner;
};

template <typename T>
ChannelLayout channel_layout(const BasicTensor<T>& x, const BasicTensor<T>& gamma, const BasicTensor<T>& beta,
                             const char* op) {
    if (x.empty() || x.rank() < 2) throw ShapeError(std::string(op) + ": empty batch or rank < 2");
    const std::size_t c = x.dim(1);
    if (gamma.size() != c || beta.size() != c)
        throw ShapeError(std::string(op) + ": gamma/beta " + gamma.shape().str() + "/" + beta.shape().str() +
                         " do not match channels of " + x.shape().str());
    std::size_t inner = 1;
    for (std::size_t i = 2; i < x.rank(); ++i) inner *= x.dim(i);
    return {x.dim(0), c, inner};
}

}  // namespace

template <typename T>
BasicTensor<T> batch_norm_train(const BasicTensor<T>& input, const BasicTensor<T>& gamma, const BasicTensor<T>& beta,
                                BatchNormState<T>* state, BatchNormCache<T>* cache, double eps, double decay) {
    if (!(eps > 0)) throw ValueError("batch_norm: eps must be positive");
    const auto L = channel_layout(input, gamma, beta, "batch_norm");
    const double m = static_cast<double>(L.outer * L.inner);
    BasicTensor<T> out(input.shape());
    BasicTensor<T> normalized(input.shape());
    std::vector<T> inv_std(L.channels);
    for (std::size_t ch = 0; ch < L.channels; ++ch) {
        double sum = 0;
        for (std::size_t a = 0; a < L.outer; ++a) {
            const T* p = input.ptr() + (a * L.channels + ch) * L.inner;
            for (std::size_t i = 0; i < L.inner; ++i) sum += p[i];
        }
        const double mean = sum / m;
        double sq = 0;
        for (std::size_t a = 0; a < L.outer; ++a) {
            const T* p = input.ptr() + (a * L.channels + ch) * L.inner;
            for (std::size_t i = 0; i < L.inner; ++i) sq += (p[i] - mean) * (p[i] - mean);
        }
        const double var = sq / m;
        const double istd = 1.0 / std::sqrt(var + eps);
        inv_std[ch] = static_cast<T>(istd);
        for (std::size_t a = 0; a < L.outer; ++a) {
            const std::size_t base = (a * L.channels + ch) * L.inner;
            for (std::size_t i = 0; i < L.inner; ++i) {
                const T xhat = static_cast<T>((input[base + i] - mean) * istd);
                normalized[base + i] = xhat;
                out[base + i] = gamma[ch] * xhat + beta[ch];
            }
        }
        if (state) {
            const double unbiased = m > 1 ? var * m / (m - 1) : var;
            state->running_mean[ch] = static_cast<T>(decay * state->running_mean[ch] + (1 - decay) * mean);
            state->running_var[ch] = static_cast<T>(decay * state->running_var[ch] + (1 - decay) * unbiased);
        }
    }
    if (cache) {
        cache->normalized = std::move(normalized);
        cache->inv_std = std::move(inv_std);
    }
    return out;
}

template <typename T>
void batch_norm_train_backward(const BatchNormCache<T>& cache, const BasicTensor<T>& gamma,
                               const BasicTensor<T>& grad_out, BasicTensor<T>* grad_input,
                               BasicTensor<T>* grad_gamma, BasicTensor<T>* grad_beta) {
    const auto& xhat = cache.normalized;
    require_same_shape(xhat.shape(), grad_out.shape(), "batch_norm_backward");
    const auto L = channel_layout(xhat, gamma, gamma, "batch_norm_backward");
    const double m = static_cast<double>(L.outer * L.inner);
    if (grad_input) *grad_input = BasicTensor<T>(xhat.shape());
    if (grad_gamma) *grad_gamma = BasicTensor<T>(gamma.shape());
    if (grad_beta) *grad_beta = BasicTensor<T>(gamma.shape());
    for (std::size_t ch = 0; ch < L.channels; ++ch) {
        double sum_dy = 0, sum_dy_xhat = 0;
        for (std::size_t a = 0; a < L.outer; ++a) {
            const std::size_t base = (a * L.channels + ch) * L.inner;
            for (std::size_t i = 0; i < L.inner; ++i) {
                sum_dy += grad_out[base + i];
                sum_dy_xhat += grad_out[base + i] * xhat[base + i];
            }
        }
        if (grad_gamma) (*grad_gamma)[ch] = static_cast<T>(sum_dy_xhat);
        if (grad_beta) (*grad_beta)[ch] = static_cast<T>(sum_dy);
        if (!grad_input) continue;
        const double scale = static_cast<double>(gamma[ch]) * cache.inv_std[ch] / m;
        for (std::size_t a = 0; a < L.outer; ++a) {
            const std::size_t base = (a * L.channels + ch) * L.inner;
            for (std::size_t i = 0; i < L.inner; ++i)
                (*grad_input)[base + i] =
                    static_cast<T>(scale * (m * grad_out[base + i] - sum_dy - xhat[base + i] * sum_dy_xhat));
        }
    }
}

template <typename T>
BasicTensor<T> batch_norm_eval(const BasicTensor<T>& input, const BasicTensor<T>& gamma, const BasicTensor<T>& beta,
                               const BatchNormState<T>& state, double eps) {
    const auto L = channel_layout(input, gamma, beta, "batch_norm");
    BasicTensor<T> out(input.shape());
    for (std::size_t ch = 0; ch < L.channels; ++ch) {
        const T istd = static_cast<T>(1.0 / std::sqrt(static_cast<double>(state.running_var[ch]) + eps));
        const T mean = state.running_mean[ch];
        for (std::size_t a = 0; a < L.outer; ++a) {
            const std::size_t base = (a * L.channels + ch) * L.inner;
            for (std::size_t i = 0; i < L.inner; ++i)
                out[base + i] = gamma[ch] * ((input[base + i] - mean) * istd) + beta[ch];
        }
    }
    return out;
}

template <typename T>
BasicTensor<T> activate(const BasicTensor<T>& input, Activation act, const BasicTensor<T>* slope) {
    BasicTensor<T> out(input.shape());
    switch (act) {
        case Activation::none: return input;
        case Activation::relu:
            for (std::size_t i = 0; i < input.size(); ++i) out[i] = input[i] > T{0} ? input[i] : T{0};
            return out;
        case Activation::hardtanh:
            for (std::size_t i = 0; i < input.size(); ++i) out[i] = std::clamp(input[i], T{-1}, T{1});
            return out;
        case Activation::prelu: {
            if (!slope || input.rank() < 2 || slope->size() != input.dim(1))
                throw ShapeError("prelu: slope length must equal channel extent of " + input.shape().str());
            const std::size_t c = input.dim(1);
            const std::size_t inner = input.size() / (input.dim(0) * c);
            for (std::size_t i = 0; i < input.size(); ++i) {
                const T s = (*slope)[(i / inner) % c];
                out[i] = input[i] > T{0} ? input[i] : s * input[i];
            }
            return out;
        }
    }
    return out;
}

template <typename T>
BasicTensor<T> tanh(const BasicTensor<T>& input) {
    BasicTensor<T> out(input.shape());
    for (std::size_t i = 0; i < input.size(); ++i) out[i] = std::tanh(input[i]);
    return out;
}

template <typename T>
T cross_entropy(const BasicTensor<T>& logits, std::span<const std::int32_t> labels, BasicTensor<T>* probs) {
    if (logits.rank() != 2) throw ShapeError("cross_entropy: logits must be [n,K], got " + logits.shape().str());
    const std::size_t n = logits.dim(0), K = logits.dim(1);
    if (labels.size() != n)
        throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for logits " +
                         logits.shape().str());
    if (probs) *probs = BasicTensor<T>(logits.shape());
    double total = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= K)
            throw ValueError("cross_entropy: label " + std::to_string(labels[i]) + " at row " + std::to_string(i) +
                             " outside [0, " + std::to_string(K) + ")");
        const T* row = logits.ptr() + i * K;
        const T mx = *std::max_element(row, row + K);
        double z = 0;
        for (std::size_t j = 0; j < K; ++j) z += std::exp(static_cast<double>(row[j] - mx));
        total += std::log(z) - static_cast<double>(row[labels[i]] - mx);
        if (probs)
            for (std::size_t j = 0; j < K; ++j) probs->at(i, j) = static_cast<T>(std::exp(static_cast<double>(row[j] - mx)) / z);
    }
    return static_cast<T>(total / static_cast<double>(n));
}

template <typename T>
std::vector<std::int32_t> argmax_rows(const BasicTensor<T>& logits) {
    const std::size_t n = logits.dim(0), K = logits.dim(1);
    std::vector<std::int32_t> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        const T* row = logits.ptr() + i * K;
        out[i] = static_cast<std::int32_t>(std::max_element(row, row + K) - row);
    }
    return out;
}

#define LNS_INSTANTIATE(T)                                                                                        \
    template BasicTensor<T> conv2d(const BasicTensor<T>&, const BasicTensor<T>&, std::size_t, std::size_t, T);  \
    template void conv2d_backward(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&,          \
                                  std::size_t, std::size_t, T, BasicTensor<T>*, BasicTensor<T>*);              \
    template BasicTensor<T> linear(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&);         \
    template void linear_backward(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&,          \
                                  BasicTensor<T>*, BasicTensor<T>*, BasicTensor<T>*);                            \
    template BasicTensor<T> batch_norm_train(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&, \
                                             BatchNormState<T>*, BatchNormCache<T>*, double, double);            \
    template void batch_norm_train_backward(const BatchNormCache<T>&, const BasicTensor<T>&,                     \
                                            const BasicTensor<T>&, BasicTensor<T>*, BasicTensor<T>*,             \
                                            BasicTensor<T>*);                                                    \
    template BasicTensor<T> batch_norm_eval(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&,  \
                                            const BatchNormState<T>&, double);                                   \
    template BasicTensor<T> activate(const BasicTensor<T>&, Activation, const BasicTensor<T>*);                  \
    template BasicTensor<T> tanh(const BasicTensor<T>&);                                                         \
    template T cross_entropy(const BasicTensor<T>&, std::span<const std::int32_t>, BasicTensor<T>*);             \
    template std::vector<std::int32_t> argmax_rows(const BasicTensor<T>&);

LNS_INSTANTIATE(float)
LNS_INSTANTIATE(double)

#undef LNS_INSTANTIATE

}  // namespace lns::fn
