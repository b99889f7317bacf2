#pragma once

// Per-record training targets: label embeddings (layer 1), caption
// embeddings (layer 2) and 32x32x3 thumbnails (layer 3), plus deterministic
// synthetic stand-ins for all three.
//
// Thumbnail file ("THMB"): magic, version u8 = 1, count u32 LE, side u16 LE,
// planes u8 (= 3), then count x side x side x planes f32 LE in [0, 1],
// keyed by record index in file order.

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "semcodec/codec.hpp"
#include "semcodec/data_io.hpp"
#include "semcodec/retrieval.hpp"

namespace semcodec {

struct ThumbnailSet {
    std::vector<Thumbnail> images;
};

Bytes encode_thumbnails(const ThumbnailSet& set);
ThumbnailSet decode_thumbnails(std::span<const std::uint8_t> bytes);
ThumbnailSet load_thumbnails(const std::filesystem::path& path);
void save_thumbnails(const std::filesystem::path& path, const ThumbnailSet& set);

// One orthonormal embedding per label (requires labels.size() <= dim).
EmbeddingDatabase synthetic_label_db(const std::map<std::uint32_t, std::string>& labels, std::size_t dim,
                                     std::uint64_t seed);

// One entry per record index: a class direction plus per-record jitter,
// texted with the manifest caption.
EmbeddingDatabase synthetic_caption_db(const Dataset& dataset, std::size_t dim, std::uint64_t seed);

// Smooth class-specific colour fields with light per-record noise.
ThumbnailSet synthetic_thumbnails(const Dataset& dataset, std::uint64_t seed);

struct TargetSources {
    const EmbeddingDatabase* label_db = nullptr;   // keyed by class_id
    const EmbeddingDatabase* caption_db = nullptr; // keyed by record index
    const ThumbnailSet* thumbnails = nullptr;      // record order
};

// Target vector of every record for the given layer. Throws
// std::invalid_argument when the needed source is absent and FormatError
// when it does not cover every record.
std::vector<std::vector<double>> build_targets(int layer_id, const Dataset& dataset, const TargetSources& sources);

} // namespace semcodec
