#include "semcodec/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace semcodec {

namespace {
constexpr char kDbMagic[] = "EMBD";
constexpr std::uint8_t kDbVersion = 1;
} // namespace

EmbeddingDatabase::EmbeddingDatabase(std::size_t dim, std::vector<EmbeddingEntry> entries)
    : dim_(dim), entries_(std::move(entries))
{
    if (dim_ == 0) {
        throw std::invalid_argument("embedding dimension must be positive");
    }
    std::set<std::uint32_t> seen;
    for (const auto& e : entries_) {
        if (e.embedding.size() != dim_) {
            throw ShapeError("embedding for class " + std::to_string(e.class_id) + " has width " +
                             std::to_string(e.embedding.size()) + ", expected " + std::to_string(dim_));
        }
        if (!seen.insert(e.class_id).second) {
            throw FormatError("duplicate class_id " + std::to_string(e.class_id) + " in embedding database");
        }
        double sq = 0.0;
        for (double v : e.embedding) {
            if (!std::isfinite(v)) {
                throw FormatError("non-finite embedding for class " + std::to_string(e.class_id));
            }
            sq += v * v;
        }
        if (sq == 0.0) {
            throw FormatError("zero-norm embedding for class " + std::to_string(e.class_id));
        }
        inv_norms_.push_back(1.0 / std::sqrt(sq));
    }
}

bool EmbeddingDatabase::contains(std::uint32_t class_id) const
{
    return std::any_of(entries_.begin(), entries_.end(), [&](const auto& e) { return e.class_id == class_id; });
}

const EmbeddingEntry& EmbeddingDatabase::by_id(std::uint32_t class_id) const
{
    for (const auto& e : entries_) {
        if (e.class_id == class_id) {
            return e;
        }
    }
    throw std::out_of_range("no embedding for id " + std::to_string(class_id));
}

Bytes encode_embedding_db(const EmbeddingDatabase& db)
{
    if (db.dim() > 0xFFFF) {
        throw std::invalid_argument("embedding dimension does not fit u16");
    }
    ByteWriter w;
    w.text(kDbMagic);
    w.u8(kDbVersion);
    w.u16(static_cast<std::uint16_t>(db.dim()));
    w.u32(static_cast<std::uint32_t>(db.size()));
    for (const auto& e : db.entries()) {
        if (e.text.size() > 0xFFFF) {
            throw std::invalid_argument("embedding text longer than 65535 bytes");
        }
        w.u32(e.class_id);
        w.u16(static_cast<std::uint16_t>(e.text.size()));
        w.text(e.text);
        for (double v : e.embedding) {
            w.f32(static_cast<float>(v));
        }
    }
    return std::move(w).take();
}

EmbeddingDatabase decode_embedding_db(std::span<const std::uint8_t> bytes)
{
    ByteReader r(bytes, "embedding db");
    r.expect_magic(kDbMagic);
    auto version = r.u8();
    if (version != kDbVersion) {
        throw FormatError("embedding db: unsupported version " + std::to_string(version));
    }
    std::size_t dim = r.u16();
    std::uint32_t count = r.u32();
    if (dim == 0) {
        throw FormatError("embedding db: zero dimension");
    }
    std::vector<EmbeddingEntry> entries;
    for (std::uint32_t i = 0; i < count; ++i) {
        EmbeddingEntry e;
        e.class_id = r.u32();
        e.text = r.text(r.u16());
        e.embedding.resize(dim);
        for (auto& v : e.embedding) {
            v = static_cast<double>(r.f32());
        }
        entries.push_back(std::move(e));
    }
    r.expect_end();
    return EmbeddingDatabase(dim, std::move(entries));
}

EmbeddingDatabase load_embedding_db(const std::filesystem::path& path)
{
    return decode_embedding_db(read_file(path));
}

void save_embedding_db(const std::filesystem::path& path, const EmbeddingDatabase& db)
{
    write_file(path, encode_embedding_db(db));
}

ClassPrediction classify(const EmbeddingDatabase& db, std::span<const double> feature, std::size_t k)
{
    if (db.size() == 0) {
        throw std::invalid_argument("classify: empty database");
    }
    if (feature.size() != db.dim()) {
        throw ShapeError("classify: feature width " + std::to_string(feature.size()) + " does not match database " +
                         std::to_string(db.dim()));
    }
    double sq = 0.0;
    for (double v : feature) {
        sq += v * v;
    }
    if (!(sq > 0.0) || !std::isfinite(sq)) {
        throw std::invalid_argument("classify: zero-norm or non-finite query");
    }
    double inv_q = 1.0 / std::sqrt(sq);
    std::vector<RankedClass> ranking;
    ranking.reserve(db.size());
    for (std::size_t i = 0; i < db.size(); ++i) {
        const auto& e = db.entries()[i].embedding;
        double dot = 0.0;
        for (std::size_t d = 0; d < e.size(); ++d) {
            dot += feature[d] * e[d];
        }
        double score = std::clamp(dot * inv_q * db.inv_norm(i), -1.0, 1.0);
        ranking.push_back({db.entries()[i].class_id, score});
    }
    std::sort(ranking.begin(), ranking.end(), [](const RankedClass& a, const RankedClass& b) {
        if (a.score != b.score) {
            return a.score > b.score;
        }
        return a.class_id < b.class_id;
    });
    if (k != 0 && k < ranking.size()) {
        ranking.resize(k);
    }
    ClassPrediction p;
    p.class_id = ranking.front().class_id;
    p.score = ranking.front().score;
    p.top = std::move(ranking);
    return p;
}

} // namespace semcodec
