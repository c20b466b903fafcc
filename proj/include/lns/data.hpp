#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "lns/tensor.hpp"

namespace lns::data {

/// Labeled images, normalized per channel.
struct Dataset {
    Tensor images;  // [n, c, h, w]
    std::vector<std::int32_t> labels;
    std::string split;
    std::size_t classes = 10;

    std::size_t size() const noexcept { return labels.size(); }
    Shape image_shape() const { return Shape{images.dim(1), images.dim(2), images.dim(3)}; }

    /// Copy of the first `n` samples (all when n >= size()).
    Dataset head(std::size_t n) const;
};

struct Normalization {
    std::vector<float> mean{0.0f};  // one value per channel, or one shared value
    std::vector<float> std{1.0f};
};

/// Raw IDX payload before normalization.
struct IdxImages {
    std::size_t n = 0, channels = 1, rows = 0, cols = 0;
    std::vector<std::uint8_t> pixels;
};

/// Reads an unsigned-byte IDX image file (magic 0x00000803, or 0x00000804
/// for [n, c, h, w]). Throws FormatError with the failing byte offset.
IdxImages read_idx_images(const std::filesystem::path& path);
/// Reads an unsigned-byte IDX label file (magic 0x00000801).
std::vector<std::uint8_t> read_idx_labels(const std::filesystem::path& path);

void write_idx_images(const std::filesystem::path& path, const IdxImages& images);
void write_idx_labels(const std::filesystem::path& path, std::span<const std::uint8_t> labels);

/// Loads and normalizes an image/label pair: pixels / 255, then (x - mean) / std.
Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                 const Normalization& norm = {}, std::size_t classes = 10, std::string split = "train");

Dataset to_dataset(const IdxImages& images, std::span<const std::uint8_t> labels, const Normalization& norm,
                   std::size_t classes, std::string split);

struct AugmentSpec {
    std::size_t pad = 0;
    std::size_t crop = 0;  // 0 keeps the input size
    double hflip_prob = 0.0;

    /// Throws ValueError when the crop does not fit the padded image.
    void validate(std::size_t height, std::size_t width) const;
    bool is_identity(std::size_t height, std::size_t width) const {
        return pad == 0 && (crop == 0 || (crop == height && crop == width)) && hflip_prob == 0.0;
    }
};

/// Zero-pads by spec.pad, takes a uniformly random crop, and mirrors columns
/// with probability spec.hflip_prob. `image` is [c, h, w].
Tensor augment(const Tensor& image, const AugmentSpec& spec, std::mt19937_64& rng);

/// Sample order for one epoch: a permutation derived from (seed, epoch)
/// when shuffling, the identity otherwise.
std::vector<std::size_t> epoch_order(std::size_t n, bool shuffle, std::uint64_t seed, std::uint64_t epoch);

struct Batch {
    Tensor images;
    std::vector<std::int32_t> labels;
};

/// Batches of `batch_size` in epoch order; the last batch may be short.
std::vector<std::vector<std::size_t>> batch_indices(std::size_t n, std::size_t batch_size, bool shuffle,
                                                    std::uint64_t seed, std::uint64_t epoch);

/// Gathers samples, augmenting each when `spec` is non-null.
Batch gather(const Dataset& data, std::span<const std::size_t> indices, const AugmentSpec* spec = nullptr,
             std::mt19937_64* rng = nullptr);

/// Engine for a named stream of (seed, epoch). Distinct streams are independent.
std::mt19937_64 epoch_rng(std::uint64_t seed, std::uint64_t epoch, std::uint64_t stream);

/// Procedurally rendered digit glyphs (seven-segment strokes under random
/// affine jitter, stroke width, segment dropout and pixel noise), balanced
/// over 10 classes. Used as a self-contained IDX corpus.
struct SynthDigits {
    IdxImages images;
    std::vector<std::uint8_t> labels;
};
SynthDigits synth_digits(std::size_t n, std::size_t size, std::uint64_t seed);

}  // namespace lns::data
