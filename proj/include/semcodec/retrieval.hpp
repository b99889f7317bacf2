#pragma once

// Embedding database (EMBD files) and cosine-similarity retrieval.
//
// EMBD: magic "EMBD", version u8 = 1, dim u16 LE, count u32 LE; per entry
// class_id u32 LE, text_len u16 LE, UTF-8 text, dim x f32 LE.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "semcodec/byte_io.hpp"

namespace semcodec {

struct EmbeddingEntry {
    std::uint32_t class_id = 0;
    std::string text;
    std::vector<double> embedding;
};

class EmbeddingDatabase {
public:
    EmbeddingDatabase() = default;
    // Validates: uniform width, unique ids, no zero-norm embedding.
    EmbeddingDatabase(std::size_t dim, std::vector<EmbeddingEntry> entries);

    std::size_t dim() const { return dim_; }
    std::size_t size() const { return entries_.size(); }
    const std::vector<EmbeddingEntry>& entries() const { return entries_; }
    const EmbeddingEntry& by_id(std::uint32_t class_id) const;
    bool contains(std::uint32_t class_id) const;
    double inv_norm(std::size_t i) const { return inv_norms_.at(i); }

private:
    std::size_t dim_ = 0;
    std::vector<EmbeddingEntry> entries_;
    std::vector<double> inv_norms_;
};

Bytes encode_embedding_db(const EmbeddingDatabase& db);
EmbeddingDatabase decode_embedding_db(std::span<const std::uint8_t> bytes);
EmbeddingDatabase load_embedding_db(const std::filesystem::path& path);
void save_embedding_db(const std::filesystem::path& path, const EmbeddingDatabase& db);

struct RankedClass {
    std::uint32_t class_id = 0;
    double score = 0.0;
};

struct ClassPrediction {
    std::uint32_t class_id = 0;
    double score = 0.0;
    std::vector<RankedClass> top; // non-increasing score, ties by lower class_id
};

// Argmax of cosine similarity; k = 0 returns the full ranking.
ClassPrediction classify(const EmbeddingDatabase& db, std::span<const double> feature, std::size_t k = 1);

} // namespace semcodec
