#include "lns/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "lns/error.hpp"

namespace lns::io {

namespace {

constexpr std::size_t kPreamble = 4 + 2 + 4;

void put_le(std::vector<std::uint8_t>& out, std::uint64_t v, int bytes) {
    for (int i = 0; i < bytes; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_le(std::span<const std::uint8_t> in, std::size_t offset, int bytes) {
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) v |= std::uint64_t{in[offset + i]} << (8 * i);
    return v;
}

DType dtype_from_string(const std::string& s, std::size_t offset) {
    if (s == "f32") return DType::f32;
    if (s == "bits") return DType::bits;
    throw FormatError("unknown dtype '" + s + "'", offset);
}

std::size_t expected_bytes(const Shape& shape, DType d) {
    return d == DType::f32 ? shape.numel() * 4 : BitTensor::words_for(shape.numel()) * 8;
}

}  // namespace

std::string to_string(DType d) { return d == DType::f32 ? "f32" : "bits"; }

void Container::add(std::string name, const Tensor& t) {
    Entry e{std::move(name), t.shape(), DType::f32, {}};
    e.bytes.reserve(t.size() * 4);
    for (float v : t.data()) put_le(e.bytes, std::bit_cast<std::uint32_t>(v), 4);
    entries.push_back(std::move(e));
}

void Container::add(std::string name, const BitTensor& t) {
    Entry e{std::move(name), t.shape(), DType::bits, {}};
    e.bytes.reserve(t.words().size() * 8);
    for (std::uint64_t w : t.words()) put_le(e.bytes, w, 8);
    entries.push_back(std::move(e));
}

const Entry& Container::find(const std::string& name) const {
    for (const auto& e : entries)
        if (e.name == name) return e;
    throw ValueError("container has no tensor '" + name + "'");
}

bool Container::contains(const std::string& name) const {
    for (const auto& e : entries)
        if (e.name == name) return true;
    return false;
}

Tensor Container::tensor(const std::string& name) const {
    const auto& e = find(name);
    if (e.dtype != DType::f32) throw ValueError("tensor '" + name + "' is not f32");
    std::vector<float> data(e.shape.numel());
    for (std::size_t i = 0; i < data.size(); ++i)
        data[i] = std::bit_cast<float>(static_cast<std::uint32_t>(get_le(e.bytes, 4 * i, 4)));
    return Tensor(e.shape, std::move(data));
}

BitTensor Container::bits(const std::string& name) const {
    const auto& e = find(name);
    if (e.dtype != DType::bits) throw ValueError("tensor '" + name + "' is not bit-packed");
    std::vector<std::uint64_t> words(BitTensor::words_for(e.shape.numel()));
    for (std::size_t i = 0; i < words.size(); ++i) words[i] = get_le(e.bytes, 8 * i, 8);
    return BitTensor(e.shape, std::move(words));
}

std::vector<std::uint8_t> encode(const Container& c) {
    if (c.magic.size() != 4) throw ValueError("container magic must be 4 bytes");
    nlohmann::json header;
    header["tensors"] = nlohmann::json::array();
    std::size_t offset = 0;
    for (const auto& e : c.entries) {
        if (e.bytes.size() != expected_bytes(e.shape, e.dtype))
            throw ValueError("tensor '" + e.name + "' payload does not match its shape");
        header["tensors"].push_back({{"name", e.name},
                                     {"shape", e.shape.dims()},
                                     {"dtype", to_string(e.dtype)},
                                     {"offset", offset},
                                     {"nbytes", e.bytes.size()}});
        offset += e.bytes.size();
    }
    header["meta"] = c.meta;
    const std::string text = header.dump();

    std::vector<std::uint8_t> out(c.magic.begin(), c.magic.end());
    put_le(out, c.version, 2);
    put_le(out, text.size(), 4);
    out.insert(out.end(), text.begin(), text.end());
    for (const auto& e : c.entries) out.insert(out.end(), e.bytes.begin(), e.bytes.end());
    return out;
}

Container decode(std::span<const std::uint8_t> bytes, std::string_view expected_magic) {
    if (bytes.size() < kPreamble) throw FormatError("file too short for a container preamble", bytes.size());
    Container c;
    c.magic.assign(bytes.begin(), bytes.begin() + 4);
    if (c.magic != expected_magic)
        throw FormatError("bad magic '" + c.magic + "', expected '" + std::string(expected_magic) + "'", 0);
    c.version = static_cast<std::uint16_t>(get_le(bytes, 4, 2));
    if (c.version != kFormatVersion) throw FormatError("unsupported format version " + std::to_string(c.version), 4);
    const std::size_t header_len = get_le(bytes, 6, 4);
    if (kPreamble + header_len > bytes.size()) throw FormatError("truncated header", bytes.size());

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.begin() + kPreamble, bytes.begin() + kPreamble + header_len);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed JSON header: ") + e.what(), kPreamble);
    }
    const std::size_t base = kPreamble + header_len;
    try {
        c.meta = header.value("meta", nlohmann::json::object());
        for (const auto& t : header.at("tensors")) {
            Entry e;
            e.name = t.at("name").get<std::string>();
            e.shape = Shape(t.at("shape").get<std::vector<std::size_t>>());
            e.dtype = dtype_from_string(t.at("dtype").get<std::string>(), kPreamble);
            const std::size_t off = t.at("offset").get<std::size_t>();
            const std::size_t n = t.at("nbytes").get<std::size_t>();
            if (n != expected_bytes(e.shape, e.dtype))
                throw FormatError("tensor '" + e.name + "' byte count does not match its shape", kPreamble);
            if (base + off + n > bytes.size() || base + off + n < base)
                throw FormatError("truncated payload for tensor '" + e.name + "'", bytes.size());
            e.bytes.assign(bytes.begin() + base + off, bytes.begin() + base + off + n);
            c.entries.push_back(std::move(e));
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed container header: ") + e.what(), kPreamble);
    } catch (const ShapeError& e) {
        throw FormatError(std::string("malformed container header: ") + e.what(), kPreamble);
    }
    return c;
}

void write_file(const std::filesystem::path& path, const Container& c) {
    const auto bytes = encode(c);
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open '" + tmp.string() + "' for writing");
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw IoError("write failed for '" + tmp.string() + "'");
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("cannot move '" + tmp.string() + "' to '" + path.string() + "': " + ec.message());
}

Container read_file(const std::filesystem::path& path, std::string_view expected_magic) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode(bytes, expected_magic);
}

std::string peek_magic(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    char buf[4];
    in.read(buf, 4);
    return in.gcount() == 4 ? std::string(buf, 4) : std::string();
}

}  // namespace lns::io
