#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "lns/data.hpp"

using namespace lns;
using namespace lns::data;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() : path(fs::temp_directory_path() / ("lns_data_" + std::to_string(std::random_device{}()))) {
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

void write_bytes(const fs::path& p, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(p, std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

// Four 2x3 images with pixel values 0..23, written byte by byte.
std::vector<std::uint8_t> fixture_images() {
    std::vector<std::uint8_t> b{0x00, 0x00, 0x08, 0x03, 0, 0, 0, 4, 0, 0, 0, 2, 0, 0, 0, 3};
    for (std::uint8_t v = 0; v < 24; ++v) b.push_back(static_cast<std::uint8_t>(v * 10));
    return b;
}

std::vector<std::uint8_t> fixture_labels(std::uint8_t n) {
    std::vector<std::uint8_t> b{0x00, 0x00, 0x08, 0x01, 0, 0, 0, n};
    for (std::uint8_t i = 0; i < n; ++i) b.push_back(static_cast<std::uint8_t>(i % 10));
    return b;
}

}  // namespace

TEST_CASE("handcrafted IDX fixture loads exactly") {
    TempDir d;
    write_bytes(d.path / "img", fixture_images());
    write_bytes(d.path / "lab", fixture_labels(4));
    const auto ds = load_idx(d.path / "img", d.path / "lab");
    REQUIRE(ds.size() == 4);
    CHECK(ds.images.shape() == Shape{4, 1, 2, 3});
    for (std::size_t i = 0; i < 24; ++i) CHECK(ds.images[i] == static_cast<float>(i * 10) / 255.0f);
    CHECK(ds.labels == std::vector<std::int32_t>{0, 1, 2, 3});

    const auto norm = load_idx(d.path / "img", d.path / "lab", Normalization{{0.5f}, {0.25f}});
    CHECK(norm.images[3] == doctest::Approx((30.0f / 255.0f - 0.5f) / 0.25f));
}

TEST_CASE("IDX errors") {
    TempDir d;
    write_bytes(d.path / "img", fixture_images());
    SUBCASE("label count mismatch") {
        write_bytes(d.path / "lab", fixture_labels(5));
        CHECK_THROWS_AS(load_idx(d.path / "img", d.path / "lab"), ValueError);
    }
    SUBCASE("empty file") {
        write_bytes(d.path / "empty", {});
        CHECK_THROWS_AS(read_idx_images(d.path / "empty"), FormatError);
        CHECK_THROWS_AS(read_idx_labels(d.path / "empty"), FormatError);
    }
    SUBCASE("bad magic reports offset 0") {
        auto b = fixture_images();
        b[2] = 0x09;
        write_bytes(d.path / "bad", b);
        try {
            read_idx_images(d.path / "bad");
            FAIL("expected FormatError");
        } catch (const FormatError& e) {
            CHECK(e.offset() == 0);
        }
    }
    SUBCASE("truncated payload and header") {
        auto b = fixture_images();
        b.resize(b.size() - 3);
        write_bytes(d.path / "short", b);
        CHECK_THROWS_AS(read_idx_images(d.path / "short"), FormatError);
        write_bytes(d.path / "hdr", {0x00, 0x00, 0x08, 0x03, 0, 0});
        try {
            read_idx_images(d.path / "hdr");
            FAIL("expected FormatError");
        } catch (const FormatError& e) {
            CHECK(e.offset() == 4);
        }
    }
    SUBCASE("missing file") { CHECK_THROWS_AS(read_idx_images(d.path / "nope"), IoError); }
    SUBCASE("label outside the class range") {
        auto b = fixture_labels(4);
        b.back() = 12;
        write_bytes(d.path / "lab", b);
        CHECK_THROWS_AS(load_idx(d.path / "img", d.path / "lab"), ValueError);
    }
}

TEST_CASE("IDX write/read roundtrip") {
    TempDir d;
    const auto s = synth_digits(30, 12, 5);
    write_idx_images(d.path / "i", s.images);
    write_idx_labels(d.path / "l", s.labels);
    const auto back = read_idx_images(d.path / "i");
    CHECK(back.n == 30);
    CHECK(back.rows == 12);
    CHECK(back.pixels == s.images.pixels);
    CHECK(read_idx_labels(d.path / "l") == s.labels);
}

TEST_CASE("synthetic digits are balanced and deterministic") {
    const auto a = synth_digits(200, 16, 9), b = synth_digits(200, 16, 9);
    CHECK(a.images.pixels == b.images.pixels);
    std::vector<int> counts(10);
    for (auto l : a.labels) ++counts.at(l);
    for (int c : counts) CHECK(c == 20);
    CHECK(synth_digits(200, 16, 10).images.pixels != a.images.pixels);
    CHECK_THROWS_AS(synth_digits(10, 4, 1), ValueError);
}

TEST_CASE("augment identity and flip") {
    std::mt19937_64 rng(1);
    Tensor img(Shape{2, 4, 4});
    for (std::size_t i = 0; i < img.size(); ++i) img[i] = static_cast<float>(i);
    AugmentSpec full;
    full.crop = 4;
    CHECK(augment(img, full, rng) == img);
    CHECK(augment(img, AugmentSpec{}, rng) == img);

    AugmentSpec too_big;
    too_big.crop = 5;
    CHECK_THROWS_AS(augment(img, too_big, rng), ValueError);

    AugmentSpec flip;
    flip.hflip_prob = 1.0;
    const auto f = augment(img, flip, rng);
    for (std::size_t c = 0; c < 2; ++c)
        for (std::size_t y = 0; y < 4; ++y)
            for (std::size_t x = 0; x < 4; ++x) CHECK(f[(c * 4 + y) * 4 + x] == img[(c * 4 + y) * 4 + (3 - x)]);
}

TEST_CASE("augmented crops are windows of the padded image") {
    std::mt19937_64 rng(2);
    const std::size_t c = 2, h = 5, w = 5, pad = 2, crop = 4;
    Tensor img(Shape{c, h, w});
    for (std::size_t i = 0; i < img.size(); ++i) img[i] = static_cast<float>(i + 1);
    auto padded = [&](std::size_t k, long y, long x) {
        return (y < 0 || x < 0 || y >= long(h) || x >= long(w)) ? 0.0f : img[(k * h + y) * w + x];
    };
    AugmentSpec spec{pad, crop, 0.5};
    std::set<std::tuple<std::size_t, std::size_t, bool>> seen;
    for (int trial = 0; trial < 300; ++trial) {
        const auto out = augment(img, spec, rng);
        REQUIRE(out.shape() == Shape{c, crop, crop});
        int matches = 0;
        for (std::size_t oy = 0; oy + crop <= h + 2 * pad; ++oy)
            for (std::size_t ox = 0; ox + crop <= w + 2 * pad; ++ox)
                for (bool flipped : {false, true}) {
                    bool same = true;
                    for (std::size_t k = 0; k < c && same; ++k)
                        for (std::size_t y = 0; y < crop && same; ++y)
                            for (std::size_t x = 0; x < crop && same; ++x) {
                                const std::size_t sx = flipped ? crop - 1 - x : x;
                                same = out[(k * crop + y) * crop + x] ==
                                       padded(k, long(oy + y) - long(pad), long(ox + sx) - long(pad));
                            }
                    if (same) {
                        ++matches;
                        seen.insert({oy, ox, flipped});
                    }
                }
        CHECK(matches >= 1);
    }
    // 6 x 6 offsets, both orientations
    CHECK(seen.size() == 72);
}

TEST_CASE("batching") {
    const auto b = batch_indices(10, 4, false, 0, 0);
    REQUIRE(b.size() == 3);
    CHECK(b[0].size() == 4);
    CHECK(b[1].size() == 4);
    CHECK(b[2].size() == 2);
    CHECK(b[0] == std::vector<std::size_t>{0, 1, 2, 3});
    CHECK(epoch_order(5, false, 3, 1) == std::vector<std::size_t>{0, 1, 2, 3, 4});
    CHECK(epoch_order(100, true, 3, 1) == epoch_order(100, true, 3, 1));
    CHECK(epoch_order(100, true, 3, 1) != epoch_order(100, true, 3, 2));
    CHECK(epoch_order(100, true, 3, 1) != epoch_order(100, true, 4, 1));
    auto perm = epoch_order(100, true, 3, 1);
    std::sort(perm.begin(), perm.end());
    CHECK(perm == epoch_order(100, false, 0, 0));
    CHECK_THROWS_AS(batch_indices(10, 0, false, 0, 0), ValueError);
}

TEST_CASE("gather copies samples in index order") {
    const auto s = synth_digits(20, 8, 3);
    const auto ds = to_dataset(s.images, s.labels, {}, 10, "train");
    const std::vector<std::size_t> idx{5, 2};
    const auto b = gather(ds, idx);
    CHECK(b.labels == std::vector<std::int32_t>{ds.labels[5], ds.labels[2]});
    for (std::size_t i = 0; i < 64; ++i) CHECK(b.images[i] == ds.images[5 * 64 + i]);
    const std::vector<std::size_t> bad{20};
    CHECK_THROWS_AS(gather(ds, bad), ValueError);
    CHECK(ds.head(7).size() == 7);
}
