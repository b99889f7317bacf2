#pragma once

// Layered container ("EIDC"):
//   magic "EIDC" | version u8 = 1 | flags u8 (bit0: CRC present) |
//   subject_id u8 | layer_count u8 |
//   per layer: layer_id u8, payload_len u32 LE, payload |
//   CRC32 (IEEE) u32 LE over every byte after the magic, when flagged.
// Layer ids are strictly increasing and form a prefix {1..k}.

#include <cstdint>
#include <map>
#include <span>

#include "semcodec/byte_io.hpp"

namespace semcodec {

inline constexpr std::size_t kContainerHeaderBytes = 8;
inline constexpr std::size_t kLayerHeaderBytes = 5;
inline constexpr std::size_t kCrcBytes = 4;

struct LayeredBitstream {
    std::uint8_t subject_id = 0;
    bool with_crc = false;
    std::map<int, Bytes> layers; // layer_id -> payload

    int max_layer() const { return layers.empty() ? 0 : layers.rbegin()->first; }
};

// Throws std::invalid_argument unless the ids are exactly {1..k}, k <= 3.
void check_layer_set(const std::map<int, Bytes>& payloads);

Bytes pack(const std::map<int, Bytes>& payloads, std::uint8_t subject_id, bool with_crc);
inline Bytes pack(const LayeredBitstream& s) { return pack(s.layers, s.subject_id, s.with_crc); }

// Full validation: magic, version, flags, layer ordering, exact length, CRC.
LayeredBitstream unpack(std::span<const std::uint8_t> stream);

// Keeps layers <= max_layer and re-packs (the CRC, if any, is recomputed).
Bytes slice(std::span<const std::uint8_t> stream, int max_layer);

std::size_t container_size(const std::map<int, Bytes>& payloads, bool with_crc);

std::uint32_t crc32_ieee(std::span<const std::uint8_t> bytes);

// B / N. Throws on N = 0.
double compute_bps(double total_bits, double samples);

// Payload bits of the given layers; container headers are counted only
// when include_headers is set.
std::uint64_t payload_bits(const LayeredBitstream& s, int max_layer, bool include_headers = false);

} // namespace semcodec
