#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "lns/autograd.hpp"
#include "lns/simd/kernels.hpp"
#include "lns/tensor.hpp"

namespace lns {

/// Elementwise +1 for x >= 0, -1 otherwise. Zero maps to +1.
template <typename T>
BasicTensor<T> sign(const BasicTensor<T>& input) {
    BasicTensor<T> out(input.shape());
    for (std::size_t i = 0; i < input.size(); ++i) out[i] = input[i] >= T{0} ? T{1} : T{-1};
    return out;
}

/// Straight-through estimator: the upstream gradient clipped to [-1, 1].
template <typename T>
BasicTensor<T> ste_backward(const BasicTensor<T>& upstream) {
    BasicTensor<T> out(upstream.shape());
    for (std::size_t i = 0; i < upstream.size(); ++i) out[i] = std::clamp(upstream[i], T{-1}, T{1});
    return out;
}

/// Logical ±1 tensor packed 64 elements per word, row-major, bit 1 = +1,
/// bit 0 = -1. Bits past the logical length are always zero.
class BitTensor {
public:
    BitTensor() = default;
    /// Adopts packed words. Throws if the count is wrong or padding bits are set.
    BitTensor(Shape shape, std::vector<std::uint64_t> words);

    template <typename T>
    static BitTensor pack(const BasicTensor<T>& input);

    template <typename T>
    BasicTensor<T> unpack() const;

    const Shape& shape() const noexcept { return shape_; }
    std::size_t size() const noexcept { return shape_.numel(); }
    const std::vector<std::uint64_t>& words() const noexcept { return words_; }

    bool bit(std::size_t i) const { return (words_[i >> 6] >> (i & 63)) & 1u; }
    int value(std::size_t i) const { return bit(i) ? 1 : -1; }

    static std::size_t words_for(std::size_t elements) noexcept { return (elements + 63) / 64; }

    friend bool operator==(const BitTensor&, const BitTensor&) = default;

private:
    Shape shape_;
    std::vector<std::uint64_t> words_;
};

/// ±1 convolution over packed operands. Each output is the exact integer dot
/// product, accumulated per word as bits - 2 * popcount(a ^ b). Padding reads
/// as logical -1. Equal to fn::conv2d on the unpacked tensors with pad value -1.
BasicTensor<std::int32_t> binary_conv2d(const BitTensor& activations, const BitTensor& weights, std::size_t stride,
                                        std::size_t padding, const simd::Kernels& kernels = simd::active());

struct LayerScale {
    double value;
    bool degenerate;  // weights were all zero; value is the 1e-8 floor
};

/// Mean absolute value of the weights.
template <typename T>
LayerScale layer_scale(const BasicTensor<T>& weights);

enum class ScaleMode { none, layer_wise };

/// Freezes sign() at a recorded operating point so finite differences can
/// probe the straight-through path. In record mode sign_ste stores its input;
/// in replay mode it returns sign(x0) + (x - x0) for the stored x0, whose
/// derivative is the identity the STE assumes. Piecewise-linear activations
/// are pinned to their recorded branches the same way. Test instrumentation.
template <typename T>
struct SignLinearization {
    enum class Phase { record, replay } phase = Phase::record;
    std::vector<BasicTensor<T>> points;
    std::size_t cursor = 0;
    ag::RegionFreeze<T> regions;
    double max_abs_upstream = 0;  // largest |grad| seen by the STE backward

    /// Switches to replay and rewinds; call before every replayed pass.
    void start_replay() {
        phase = Phase::replay;
        cursor = 0;
        regions.replay = true;
        regions.cursor = 0;
    }
};

namespace ag {

/// Forward sign(); backward ste_backward(). The optional linearization hook
/// is only used by gradient checks.
template <typename T>
Var<T> sign_ste(Var<T> x, SignLinearization<T>* lin = nullptr) {
    Tape<T>& t = *x.tape;
    BasicTensor<T> out;
    if (lin && lin->phase == SignLinearization<T>::Phase::replay) {
        const auto& x0 = lin->points.at(lin->cursor++);
        require_same_shape(x0.shape(), x.shape(), "sign_ste replay");
        out = sign(x0);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += x.value()[i] - x0[i];
    } else {
        if (lin) lin->points.push_back(x.value());
        out = sign(x.value());
    }
    return t.record(std::move(out), {x}, [&t, x, lin](const BasicTensor<T>& g) {
        if (lin)
            for (T v : g.data()) lin->max_abs_upstream = std::max(lin->max_abs_upstream, std::abs(double(v)));
        t.accumulate(x, ste_backward(g));
    });
}

}  // namespace ag

}  // namespace lns
