#include "lns/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>

namespace lns::data {

namespace {

constexpr std::uint32_t kLabelMagic = 0x00000801;
constexpr std::uint32_t kImageMagic3 = 0x00000803;
constexpr std::uint32_t kImageMagic4 = 0x00000804;

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<std::uint8_t>& bytes, std::size_t offset, const std::string& what) {
    if (offset + 4 > bytes.size()) throw FormatError("truncated IDX header reading " + what, offset);
    return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
           (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

void put_be32(std::ofstream& out, std::uint32_t v) {
    const std::array<char, 4> b{static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8),
                                static_cast<char>(v)};
    out.write(b.data(), 4);
}

}  // namespace

Dataset Dataset::head(std::size_t n) const {
    if (n >= size()) return *this;
    const std::size_t per = images.size() / size();
    Dataset out;
    out.images = Tensor(Shape{n, images.dim(1), images.dim(2), images.dim(3)},
                        std::vector<float>(images.vec().begin(), images.vec().begin() + static_cast<long>(n * per)));
    out.labels.assign(labels.begin(), labels.begin() + static_cast<long>(n));
    out.split = split;
    out.classes = classes;
    return out;
}

IdxImages read_idx_images(const std::filesystem::path& path) {
    const auto bytes = read_file(path);
    if (bytes.empty()) throw FormatError("empty IDX image file '" + path.string() + "'", 0);
    const std::uint32_t magic = read_be32(bytes, 0, "magic");
    if (magic != kImageMagic3 && magic != kImageMagic4)
        throw FormatError("bad IDX image magic in '" + path.string() + "'", 0);
    IdxImages img;
    std::size_t off = 4;
    img.n = read_be32(bytes, off, "count");
    off += 4;
    if (magic == kImageMagic4) {
        img.channels = read_be32(bytes, off, "channels");
        off += 4;
    }
    img.rows = read_be32(bytes, off, "rows");
    off += 4;
    img.cols = read_be32(bytes, off, "cols");
    off += 4;
    if (img.n == 0 || img.channels == 0 || img.rows == 0 || img.cols == 0)
        throw FormatError("IDX image file '" + path.string() + "' has a zero dimension", 4);
    const std::size_t need = img.n * img.channels * img.rows * img.cols;
    if (bytes.size() - off < need)
        throw FormatError("truncated IDX image payload in '" + path.string() + "': expected " + std::to_string(need) +
                              " bytes",
                          bytes.size());
    img.pixels.assign(bytes.begin() + static_cast<long>(off), bytes.begin() + static_cast<long>(off + need));
    return img;
}

std::vector<std::uint8_t> read_idx_labels(const std::filesystem::path& path) {
    const auto bytes = read_file(path);
    if (bytes.empty()) throw FormatError("empty IDX label file '" + path.string() + "'", 0);
    if (read_be32(bytes, 0, "magic") != kLabelMagic)
        throw FormatError("bad IDX label magic in '" + path.string() + "'", 0);
    const std::size_t n = read_be32(bytes, 4, "count");
    if (bytes.size() - 8 < n)
        throw FormatError("truncated IDX label payload in '" + path.string() + "': expected " + std::to_string(n) +
                              " labels",
                          bytes.size());
    return {bytes.begin() + 8, bytes.begin() + 8 + static_cast<long>(n)};
}

void write_idx_images(const std::filesystem::path& path, const IdxImages& images) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write '" + path.string() + "'");
    const bool four = images.channels != 1;
    put_be32(out, four ? kImageMagic4 : kImageMagic3);
    put_be32(out, static_cast<std::uint32_t>(images.n));
    if (four) put_be32(out, static_cast<std::uint32_t>(images.channels));
    put_be32(out, static_cast<std::uint32_t>(images.rows));
    put_be32(out, static_cast<std::uint32_t>(images.cols));
    out.write(reinterpret_cast<const char*>(images.pixels.data()), static_cast<std::streamsize>(images.pixels.size()));
    if (!out) throw IoError("write failed for '" + path.string() + "'");
}

void write_idx_labels(const std::filesystem::path& path, std::span<const std::uint8_t> labels) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write '" + path.string() + "'");
    put_be32(out, kLabelMagic);
    put_be32(out, static_cast<std::uint32_t>(labels.size()));
    out.write(reinterpret_cast<const char*>(labels.data()), static_cast<std::streamsize>(labels.size()));
    if (!out) throw IoError("write failed for '" + path.string() + "'");
}

Dataset to_dataset(const IdxImages& images, std::span<const std::uint8_t> labels, const Normalization& norm,
                   std::size_t classes, std::string split) {
    if (labels.size() != images.n)
        throw ValueError("image/label count mismatch: " + std::to_string(images.n) + " images, " +
                         std::to_string(labels.size()) + " labels");
    auto per_channel = [&](const std::vector<float>& v, std::size_t ch, const char* name) {
        if (v.size() == 1) return v[0];
        if (v.size() != images.channels)
            throw ValueError(std::string("normalization ") + name + " needs 1 or " + std::to_string(images.channels) +
                             " values");
        return v[ch];
    };
    Dataset d;
    d.images = Tensor(Shape{images.n, images.channels, images.rows, images.cols});
    const std::size_t plane = images.rows * images.cols;
    for (std::size_t i = 0; i < images.pixels.size(); ++i) {
        const std::size_t ch = (i / plane) % images.channels;
        const float s = per_channel(norm.std, ch, "std");
        if (!(s > 0)) throw ValueError("normalization std must be positive");
        d.images[i] = (static_cast<float>(images.pixels[i]) / 255.0f - per_channel(norm.mean, ch, "mean")) / s;
    }
    d.labels.resize(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] >= classes)
            throw ValueError("label " + std::to_string(labels[i]) + " at index " + std::to_string(i) + " outside [0, " +
                             std::to_string(classes) + ")");
        d.labels[i] = labels[i];
    }
    d.split = std::move(split);
    d.classes = classes;
    return d;
}

Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                 const Normalization& norm, std::size_t classes, std::string split) {
    const auto images = read_idx_images(images_path);
    const auto labels = read_idx_labels(labels_path);
    return to_dataset(images, labels, norm, classes, std::move(split));
}

void AugmentSpec::validate(std::size_t height, std::size_t width) const {
    if (!(hflip_prob >= 0.0 && hflip_prob <= 1.0)) throw ValueError("augment: hflip_prob must lie in [0, 1]");
    const std::size_t c = crop == 0 ? std::min(height, width) : crop;
    if (c > height + 2 * pad || c > width + 2 * pad)
        throw ValueError("augment: crop " + std::to_string(c) + " exceeds padded size");
    if (crop == 0 && height != width && pad != 0) throw ValueError("augment: crop size required for non-square input");
}

Tensor augment(const Tensor& image, const AugmentSpec& spec, std::mt19937_64& rng) {
    const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
    spec.validate(h, w);
    const std::size_t ch = spec.crop == 0 ? h : spec.crop;
    const std::size_t cw = spec.crop == 0 ? w : spec.crop;
    std::uniform_int_distribution<std::size_t> dy(0, h + 2 * spec.pad - ch);
    std::uniform_int_distribution<std::size_t> dx(0, w + 2 * spec.pad - cw);
    const std::size_t oy = dy(rng), ox = dx(rng);
    bool flip = false;
    if (spec.hflip_prob > 0.0) flip = std::bernoulli_distribution(spec.hflip_prob)(rng);
    Tensor out(Shape{c, ch, cw});
    for (std::size_t k = 0; k < c; ++k)
        for (std::size_t y = 0; y < ch; ++y)
            for (std::size_t x = 0; x < cw; ++x) {
                const long sy = static_cast<long>(y + oy) - static_cast<long>(spec.pad);
                const long sx = static_cast<long>(x + ox) - static_cast<long>(spec.pad);
                const bool inside = sy >= 0 && sx >= 0 && sy < static_cast<long>(h) && sx < static_cast<long>(w);
                const std::size_t dst_x = flip ? cw - 1 - x : x;
                out[(k * ch + y) * cw + dst_x] = inside ? image[(k * h + sy) * w + sx] : 0.0f;
            }
    return out;
}

std::mt19937_64 epoch_rng(std::uint64_t seed, std::uint64_t epoch, std::uint64_t stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(epoch >> 32),
                      static_cast<std::uint32_t>(stream)};
    return std::mt19937_64(seq);
}

std::vector<std::size_t> epoch_order(std::size_t n, bool shuffle, std::uint64_t seed, std::uint64_t epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    if (shuffle) {
        auto rng = epoch_rng(seed, epoch, 0);
        std::shuffle(order.begin(), order.end(), rng);
    }
    return order;
}

std::vector<std::vector<std::size_t>> batch_indices(std::size_t n, std::size_t batch_size, bool shuffle,
                                                    std::uint64_t seed, std::uint64_t epoch) {
    if (batch_size == 0) throw ValueError("batch size must be >= 1");
    const auto order = epoch_order(n, shuffle, seed, epoch);
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t i = 0; i < n; i += batch_size)
        out.emplace_back(order.begin() + static_cast<long>(i),
                         order.begin() + static_cast<long>(std::min(n, i + batch_size)));
    return out;
}

Batch gather(const Dataset& data, std::span<const std::size_t> indices, const AugmentSpec* spec,
             std::mt19937_64* rng) {
    const std::size_t c = data.images.dim(1), h = data.images.dim(2), w = data.images.dim(3);
    const bool aug = spec && rng && !spec->is_identity(h, w);
    const std::size_t oh = aug && spec->crop ? spec->crop : h;
    const std::size_t ow = aug && spec->crop ? spec->crop : w;
    Batch b;
    b.images = Tensor(Shape{indices.size(), c, oh, ow});
    b.labels.reserve(indices.size());
    const std::size_t in_per = c * h * w, out_per = c * oh * ow;
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const std::size_t src = indices[i];
        if (src >= data.size()) throw ValueError("sample index " + std::to_string(src) + " out of range");
        const float* p = data.images.ptr() + src * in_per;
        if (aug) {
            const Tensor img(Shape{c, h, w}, std::vector<float>(p, p + in_per));
            const Tensor out = augment(img, *spec, *rng);
            std::copy(out.vec().begin(), out.vec().end(), b.images.ptr() + i * out_per);
        } else {
            std::copy(p, p + in_per, b.images.ptr() + i * out_per);
        }
        b.labels.push_back(data.labels[src]);
    }
    return b;
}

namespace {

struct Segment {
    double x0, y0, x1, y1;
};

// Seven-segment layout in a unit box, y pointing down.
constexpr std::array<Segment, 7> kSegments{{
    {0.25, 0.12, 0.75, 0.12},  // a: top
    {0.75, 0.12, 0.75, 0.50},  // b: upper right
    {0.75, 0.50, 0.75, 0.88},  // c: lower right
    {0.25, 0.88, 0.75, 0.88},  // d: bottom
    {0.25, 0.50, 0.25, 0.88},  // e: lower left
    {0.25, 0.12, 0.25, 0.50},  // f: upper left
    {0.25, 0.50, 0.75, 0.50},  // g: middle
}};

// Bit i set when segment i is lit.
constexpr std::array<std::uint8_t, 10> kDigitSegments{
    0b0111111,  // 0: abcdef
    0b0000110,  // 1: bc
    0b1011011,  // 2: abdeg
    0b1001111,  // 3: abcdg
    0b1100110,  // 4: bcfg
    0b1101101,  // 5: acdfg
    0b1111101,  // 6: acdefg
    0b0000111,  // 7: abc
    0b1111111,  // 8: all
    0b1101111,  // 9: abcdfg
};

double segment_distance(double px, double py, const Segment& s) {
    const double vx = s.x1 - s.x0, vy = s.y1 - s.y0;
    const double len2 = vx * vx + vy * vy;
    double t = len2 > 0 ? ((px - s.x0) * vx + (py - s.y0) * vy) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const double dx = px - (s.x0 + t * vx), dy = py - (s.y0 + t * vy);
    return std::sqrt(dx * dx + dy * dy);
}

}  // namespace

SynthDigits synth_digits(std::size_t n, std::size_t size, std::uint64_t seed) {
    if (n == 0 || size < 8) throw ValueError("synth_digits: need n >= 1 and size >= 8");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::normal_distribution<double> noise(0.0, 0.12);
    SynthDigits out;
    out.images.n = n;
    out.images.rows = out.images.cols = size;
    out.images.pixels.resize(n * size * size);
    out.labels.resize(n);
    const double px = static_cast<double>(size);
    for (std::size_t i = 0; i < n; ++i) {
        const auto label = static_cast<std::uint8_t>(i % 10);
        out.labels[i] = label;
        std::vector<Segment> strokes;
        for (std::size_t s = 0; s < kSegments.size(); ++s) {
            if (!((kDigitSegments[label] >> s) & 1u)) continue;
            if (u(rng) < 0.06) continue;  // occasional missing stroke
            Segment seg = kSegments[s];
            seg.x0 += 0.06 * (u(rng) - 0.5);
            seg.y0 += 0.06 * (u(rng) - 0.5);
            seg.x1 += 0.06 * (u(rng) - 0.5);
            seg.y1 += 0.06 * (u(rng) - 0.5);
            strokes.push_back(seg);
        }
        if (u(rng) < 0.08) {  // stray stroke
            strokes.push_back({u(rng), u(rng), u(rng), u(rng)});
        }
        const double angle = (u(rng) - 0.5) * 2.0 * 14.0 * std::numbers::pi / 180.0;
        const double scale = 0.78 + 0.3 * u(rng);
        const double shear = (u(rng) - 0.5) * 0.35;
        const double tx = (u(rng) - 0.5) * 0.16, ty = (u(rng) - 0.5) * 0.16;
        const double width = (0.75 + 0.9 * u(rng)) / px;
        const double ca = std::cos(angle), sa = std::sin(angle);
        for (std::size_t y = 0; y < size; ++y)
            for (std::size_t x = 0; x < size; ++x) {
                // Pixel center back into glyph space.
                double gx = (static_cast<double>(x) + 0.5) / px - 0.5 - tx;
                double gy = (static_cast<double>(y) + 0.5) / px - 0.5 - ty;
                const double rx = ca * gx + sa * gy, ry = -sa * gx + ca * gy;
                gx = (rx - shear * ry) / scale + 0.5;
                gy = ry / scale + 0.5;
                double d = 1e9;
                for (const auto& s : strokes) d = std::min(d, segment_distance(gx, gy, s));
                double v = std::clamp(1.0 - (d * scale - width) * px / 1.2, 0.0, 1.0) + noise(rng);
                out.images.pixels[(i * size + y) * size + x] =
                    static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
            }
    }
    return out;
}

}  // namespace lns::data
