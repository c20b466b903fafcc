#include <doctest.h>

#include <filesystem>
#include <random>

#include "lns/container.hpp"
#include "lns/error.hpp"

using namespace lns;
using namespace lns::io;

namespace {

Container sample() {
    Container c;
    c.magic = std::string(kCheckpointMagic);
    c.meta["note"] = "x";
    Tensor a(Shape{2, 3});
    for (std::size_t i = 0; i < a.size(); ++i) a[i] = 0.5f * static_cast<float>(i) - 1.0f;
    c.add("a", a);
    Tensor pm(Shape{70});
    for (std::size_t i = 0; i < pm.size(); ++i) pm[i] = i % 3 ? 1.0f : -1.0f;
    c.add("b", BitTensor::pack(pm));
    return c;
}

std::uint32_t header_length(const std::vector<std::uint8_t>& bytes) {
    return bytes[6] | bytes[7] << 8 | bytes[8] << 16 | static_cast<std::uint32_t>(bytes[9]) << 24;
}

}  // namespace

TEST_CASE("encode/decode roundtrip") {
    const auto c = sample();
    const auto bytes = encode(c);
    CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "LNS1");
    CHECK(bytes[4] == 1);
    CHECK(bytes[5] == 0);
    CHECK(bytes.size() == 10 + header_length(bytes) + 6 * 4 + 2 * 8);

    const auto back = decode(bytes, kCheckpointMagic);
    CHECK(back.meta == c.meta);
    CHECK(back.tensor("a") == c.tensor("a"));
    CHECK(back.bits("b") == c.bits("b"));
    CHECK(back.find("b").dtype == DType::bits);
    CHECK_FALSE(back.contains("c"));
    CHECK_THROWS_AS(back.tensor("b"), ValueError);
    CHECK_THROWS_AS(back.tensor("c"), ValueError);
}

TEST_CASE("float payloads are little-endian IEEE") {
    Container c;
    c.magic = std::string(kExportMagic);
    c.add("x", Tensor(Shape{1}, 1.0f));
    const auto bytes = encode(c);
    const std::vector<std::uint8_t> tail(bytes.end() - 4, bytes.end());
    CHECK(tail == std::vector<std::uint8_t>{0x00, 0x00, 0x80, 0x3f});
}

TEST_CASE("decode errors carry byte offsets") {
    const auto bytes = encode(sample());
    auto offset_of = [](std::vector<std::uint8_t> b, std::string_view magic = kCheckpointMagic) -> std::size_t {
        try {
            decode(b, magic);
        } catch (const FormatError& e) {
            return e.offset();
        }
        return static_cast<std::size_t>(-1);
    };
    CHECK(offset_of(bytes, kExportMagic) == 0);
    auto v = bytes;
    v[4] = 2;
    CHECK(offset_of(v) == 4);
    CHECK(offset_of(std::vector<std::uint8_t>(bytes.begin(), bytes.begin() + 7)) == 7);
    CHECK(offset_of(std::vector<std::uint8_t>(bytes.begin(), bytes.end() - 1)) == bytes.size() - 1);
    auto broken = bytes;
    broken[10] = '#';
    CHECK(offset_of(broken) == 10);
}

TEST_CASE("files") {
    const auto dir = std::filesystem::temp_directory_path() / ("lns_ct_" + std::to_string(std::random_device{}()));
    std::filesystem::create_directories(dir);
    const auto p = dir / "c.lns";
    write_file(p, sample());
    CHECK(peek_magic(p) == "LNS1");
    CHECK(read_file(p, kCheckpointMagic).tensor("a") == sample().tensor("a"));
    CHECK_THROWS_AS(read_file(p, kExportMagic), FormatError);
    CHECK_THROWS_AS(read_file(dir / "missing", kCheckpointMagic), IoError);
    CHECK_THROWS_AS(peek_magic(dir / "missing"), IoError);
    std::filesystem::remove_all(dir);
}

TEST_CASE("a 64x64x3x3 binary layer stores 4608 payload bytes") {
    Container c;
    c.magic = std::string(kExportMagic);
    c.add("w", BitTensor::pack(Tensor(Shape{64, 64, 3, 3}, -1.0f)));
    c.add("scale", Tensor(Shape{1}, 1.0f));
    const auto bytes = encode(c);
    CHECK(c.find("w").bytes.size() == 64 * 64 * 9 / 8);
    CHECK(bytes.size() == 10 + header_length(bytes) + 4608 + 4);
}
