#include "semcodec/bitstream.hpp"

#include <zlib.h>

namespace semcodec {

namespace {
constexpr char kMagic[] = "EIDC";
constexpr std::uint8_t kVersion = 1;
constexpr std::uint8_t kFlagCrc = 0x01;
} // namespace

std::uint32_t crc32_ieee(std::span<const std::uint8_t> bytes)
{
    uLong crc = ::crc32(0L, Z_NULL, 0);
    // zlib takes uInt lengths; feed in chunks
    std::size_t pos = 0;
    while (pos < bytes.size()) {
        auto n = static_cast<uInt>(std::min<std::size_t>(bytes.size() - pos, 1u << 30));
        crc = ::crc32(crc, bytes.data() + pos, n);
        pos += n;
    }
    return static_cast<std::uint32_t>(crc);
}

void check_layer_set(const std::map<int, Bytes>& payloads)
{
    if (payloads.empty()) {
        throw std::invalid_argument("container needs at least layer 1");
    }
    int expect = 1;
    for (const auto& [id, bytes] : payloads) {
        if (id != expect) {
            throw std::invalid_argument("container layers must be a prefix 1..k; found layer " + std::to_string(id) +
                                        " where layer " + std::to_string(expect) + " was expected");
        }
        if (bytes.size() > UINT32_MAX) {
            throw std::invalid_argument("layer payload exceeds 4 GiB");
        }
        ++expect;
    }
    if (expect - 1 > 3) {
        throw std::invalid_argument("at most three layers");
    }
}

std::size_t container_size(const std::map<int, Bytes>& payloads, bool with_crc)
{
    std::size_t n = kContainerHeaderBytes + (with_crc ? kCrcBytes : 0);
    for (const auto& [id, bytes] : payloads) {
        n += kLayerHeaderBytes + bytes.size();
    }
    return n;
}

Bytes pack(const std::map<int, Bytes>& payloads, std::uint8_t subject_id, bool with_crc)
{
    check_layer_set(payloads);
    ByteWriter w;
    w.text(kMagic);
    w.u8(kVersion);
    w.u8(with_crc ? kFlagCrc : 0);
    w.u8(subject_id);
    w.u8(static_cast<std::uint8_t>(payloads.size()));
    for (const auto& [id, bytes] : payloads) {
        w.u8(static_cast<std::uint8_t>(id));
        w.u32(static_cast<std::uint32_t>(bytes.size()));
        w.raw(bytes);
    }
    if (with_crc) {
        const auto& b = w.bytes();
        w.u32(crc32_ieee(std::span(b).subspan(4)));
    }
    return std::move(w).take();
}

LayeredBitstream unpack(std::span<const std::uint8_t> stream)
{
    ByteReader r(stream, "container");
    r.expect_magic(kMagic);
    auto version = r.u8();
    if (version != kVersion) {
        throw FormatError("container: unsupported version " + std::to_string(version));
    }
    auto flags = r.u8();
    if ((flags & ~kFlagCrc) != 0) {
        throw FormatError("container: unknown flag bits");
    }
    LayeredBitstream s;
    s.with_crc = (flags & kFlagCrc) != 0;
    if (s.with_crc) {
        if (stream.size() < kContainerHeaderBytes + kCrcBytes) {
            throw FormatError("container: truncated before CRC");
        }
        std::size_t body_end = stream.size() - kCrcBytes;
        ByteReader tail(stream.subspan(body_end), "container crc");
        if (tail.u32() != crc32_ieee(stream.subspan(4, body_end - 4))) {
            throw FormatError("container: CRC mismatch");
        }
    }
    s.subject_id = r.u8();
    std::size_t count = r.u8();
    if (count == 0 || count > 3) {
        throw FormatError("container: layer count " + std::to_string(count) + " outside 1..3");
    }
    for (std::size_t i = 0; i < count; ++i) {
        int id = r.u8();
        if (id != static_cast<int>(i) + 1) {
            throw FormatError("container: layer ids must run 1..k in order");
        }
        std::uint32_t len = r.u32();
        auto payload = r.raw(len);
        s.layers[id] = Bytes(payload.begin(), payload.end());
    }
    if (s.with_crc) {
        r.u32();
    }
    r.expect_end();
    return s;
}

Bytes slice(std::span<const std::uint8_t> stream, int max_layer)
{
    if (max_layer < 1) {
        throw std::invalid_argument("slice: max_layer must be at least 1");
    }
    auto s = unpack(stream);
    std::map<int, Bytes> kept;
    for (auto& [id, bytes] : s.layers) {
        if (id <= max_layer) {
            kept.emplace(id, std::move(bytes));
        }
    }
    return pack(kept, s.subject_id, s.with_crc);
}

double compute_bps(double total_bits, double samples)
{
    if (!(samples > 0.0)) {
        throw std::invalid_argument("bps needs a positive sample count");
    }
    return total_bits / samples;
}

std::uint64_t payload_bits(const LayeredBitstream& s, int max_layer, bool include_headers)
{
    std::uint64_t bits = 0;
    for (const auto& [id, bytes] : s.layers) {
        if (id <= max_layer) {
            bits += 8 * bytes.size();
            if (include_headers) {
                bits += 8 * kLayerHeaderBytes;
            }
        }
    }
    if (include_headers) {
        bits += 8 * (kContainerHeaderBytes + (s.with_crc ? kCrcBytes : 0));
    }
    return bits;
}

} // namespace semcodec
