#pragma once
// Binary container shared by checkpoints and exported models:
//
//   4 bytes   magic ("LNS1" checkpoint, "LNSB" exported model)
//   u16 LE    format version
//   u32 LE    header length in bytes
//   ...       UTF-8 JSON header
//   ...       raw little-endian payloads, in header order
//
// The header lists every payload as {name, shape, dtype, offset, nbytes},
// offsets counted from the first payload byte, plus a free-form "meta" object.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "lns/binarize.hpp"
#include "lns/tensor.hpp"

namespace lns::io {

inline constexpr std::string_view kCheckpointMagic = "LNS1";
inline constexpr std::string_view kExportMagic = "LNSB";
inline constexpr std::uint16_t kFormatVersion = 1;

enum class DType { f32, bits };

std::string to_string(DType d);

struct Entry {
    std::string name;
    Shape shape;
    DType dtype = DType::f32;
    std::vector<std::uint8_t> bytes;
};

struct Container {
    std::string magic;
    std::uint16_t version = kFormatVersion;
    nlohmann::json meta = nlohmann::json::object();
    std::vector<Entry> entries;

    void add(std::string name, const Tensor& t);
    void add(std::string name, const BitTensor& t);

    const Entry& find(const std::string& name) const;
    bool contains(const std::string& name) const;
    Tensor tensor(const std::string& name) const;
    BitTensor bits(const std::string& name) const;
};

std::vector<std::uint8_t> encode(const Container& c);
/// Throws FormatError (with byte offset) on bad magic, unknown version,
/// malformed header or truncated payloads.
Container decode(std::span<const std::uint8_t> bytes, std::string_view expected_magic);

void write_file(const std::filesystem::path& path, const Container& c);
Container read_file(const std::filesystem::path& path, std::string_view expected_magic);

/// The four magic bytes of a file, or "" when it is shorter than that.
std::string peek_magic(const std::filesystem::path& path);

}  // namespace lns::io
