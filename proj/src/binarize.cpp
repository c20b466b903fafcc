#include "lns/binarize.hpp"

#include <cmath>
#include <string>

#include "lns/functional.hpp"

namespace lns {

BitTensor::BitTensor(Shape shape, std::vector<std::uint64_t> words) : shape_(std::move(shape)), words_(std::move(words)) {
    const std::size_t n = shape_.numel();
    if (words_.size() != words_for(n))
        throw ShapeError("BitTensor: " + std::to_string(words_.size()) + " words for shape " + shape_.str());
    if (n % 64 != 0 && (words_.back() >> (n % 64)) != 0)
        throw ValueError("BitTensor: padding bits beyond element " + std::to_string(n) + " are not zero");
}

template <typename T>
BitTensor BitTensor::pack(const BasicTensor<T>& input) {
    std::vector<std::uint64_t> words(words_for(input.size()), 0);
    for (std::size_t i = 0; i < input.size(); ++i) {
        const T v = input[i];
        if (v == T{1})
            words[i >> 6] |= std::uint64_t{1} << (i & 63);
        else if (v != T{-1})
            throw ValueError("pack: element " + std::to_string(i) + " is " + std::to_string(double(v)) +
                             ", expected +1 or -1");
    }
    return BitTensor(input.shape(), std::move(words));
}

template <typename T>
BasicTensor<T> BitTensor::unpack() const {
    BasicTensor<T> out(shape_);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = bit(i) ? T{1} : T{-1};
    return out;
}

template BitTensor BitTensor::pack(const BasicTensor<float>&);
template BitTensor BitTensor::pack(const BasicTensor<double>&);
template BasicTensor<float> BitTensor::unpack() const;
template BasicTensor<double> BitTensor::unpack() const;

namespace {

// Re-packs an NCHW bit tensor channel-last: for every pixel of the
// zero-padded (logical -1) image, ceil(c / 64) words of channel bits.
std::vector<std::uint64_t> channel_pack(const BitTensor& src, std::size_t sample, std::size_t c, std::size_t h,
                                        std::size_t w, std::size_t pad, std::size_t cw) {
    const std::size_t ph = h + 2 * pad, pw = w + 2 * pad;
    std::vector<std::uint64_t> out(ph * pw * cw, 0);
    const std::size_t base = sample * c * h * w;
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x)
                if (src.bit(base + (ch * h + y) * w + x))
                    out[((y + pad) * pw + (x + pad)) * cw + (ch >> 6)] |= std::uint64_t{1} << (ch & 63);
    return out;
}

}  // namespace

BasicTensor<std::int32_t> binary_conv2d(const BitTensor& activations, const BitTensor& weights, std::size_t stride,
                                        std::size_t padding, const simd::Kernels& kernels) {
    const auto g = fn::ConvGeometry::make(activations.shape(), weights.shape(), stride, padding);
    const std::size_t cw = BitTensor::words_for(g.c);
    const std::size_t row_words = g.k * cw;
    const std::size_t pw = g.w + 2 * g.padding;
    const auto window_bits = static_cast<std::int64_t>(g.k * g.k * g.c);

    // Weights as [o][ky][kx][cw]: one filter row is contiguous, like an image row.
    std::vector<std::uint64_t> wp(g.o * g.k * row_words, 0);
    for (std::size_t o = 0; o < g.o; ++o)
        for (std::size_t ch = 0; ch < g.c; ++ch)
            for (std::size_t ky = 0; ky < g.k; ++ky)
                for (std::size_t kx = 0; kx < g.k; ++kx)
                    if (weights.bit(((o * g.c + ch) * g.k + ky) * g.k + kx))
                        wp[((o * g.k + ky) * g.k + kx) * cw + (ch >> 6)] |= std::uint64_t{1} << (ch & 63);

    BasicTensor<std::int32_t> out(Shape{g.n, g.o, g.oh, g.ow});
    for (std::size_t s = 0; s < g.n; ++s) {
        const auto img = channel_pack(activations, s, g.c, g.h, g.w, g.padding, cw);
        for (std::size_t o = 0; o < g.o; ++o) {
            const std::uint64_t* filt = wp.data() + o * g.k * row_words;
            std::int32_t* dst = out.ptr() + (s * g.o + o) * g.oh * g.ow;
            for (std::size_t oy = 0; oy < g.oh; ++oy)
                for (std::size_t ox = 0; ox < g.ow; ++ox) {
                    std::uint64_t mismatches = 0;
                    for (std::size_t ky = 0; ky < g.k; ++ky) {
                        const std::uint64_t* row = img.data() + ((oy * g.stride + ky) * pw + ox * g.stride) * cw;
                        mismatches += kernels.xor_popcount(row, filt + ky * row_words, row_words);
                    }
                    dst[oy * g.ow + ox] = static_cast<std::int32_t>(window_bits - 2 * static_cast<std::int64_t>(mismatches));
                }
        }
    }
    return out;
}

template <typename T>
LayerScale layer_scale(const BasicTensor<T>& weights) {
    if (weights.empty()) throw ValueError("layer_scale: empty weight tensor");
    double s = 0;
    for (T v : weights.data()) s += std::abs(static_cast<double>(v));
    s /= static_cast<double>(weights.size());
    if (s == 0.0) return {1e-8, true};
    return {s, false};
}

template LayerScale layer_scale(const BasicTensor<float>&);
template LayerScale layer_scale(const BasicTensor<double>&);

}  // namespace lns
