#include "semcodec/targets.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace semcodec {

namespace {
constexpr char kThumbMagic[] = "THMB";
constexpr std::uint8_t kThumbVersion = 1;

void normalize(std::vector<double>& v)
{
    double sq = 0.0;
    for (double x : v) {
        sq += x * x;
    }
    double inv = 1.0 / std::sqrt(sq);
    for (double& x : v) {
        x *= inv;
    }
}
} // namespace

Bytes encode_thumbnails(const ThumbnailSet& set)
{
    ByteWriter w;
    w.text(kThumbMagic);
    w.u8(kThumbVersion);
    w.u32(static_cast<std::uint32_t>(set.images.size()));
    w.u16(static_cast<std::uint16_t>(kThumbSide));
    w.u8(3);
    for (const auto& img : set.images) {
        if (img.pixels.size() != kThumbSize) {
            throw ShapeError("thumbnail must hold 32*32*3 values");
        }
        for (double v : img.pixels) {
            w.f32(static_cast<float>(v));
        }
    }
    return std::move(w).take();
}

ThumbnailSet decode_thumbnails(std::span<const std::uint8_t> bytes)
{
    ByteReader r(bytes, "thumbnails");
    r.expect_magic(kThumbMagic);
    auto version = r.u8();
    if (version != kThumbVersion) {
        throw FormatError("thumbnails: unsupported version " + std::to_string(version));
    }
    std::uint32_t count = r.u32();
    std::size_t side = r.u16();
    std::size_t planes = r.u8();
    if (side != kThumbSide || planes != 3) {
        throw FormatError("thumbnails: only 32x32x3 images are supported");
    }
    ThumbnailSet set;
    set.images.resize(count);
    for (auto& img : set.images) {
        img.pixels.resize(kThumbSize);
        for (double& v : img.pixels) {
            v = r.f32();
            if (!(v >= 0.0 && v <= 1.0)) {
                throw FormatError("thumbnails: pixel outside [0, 1]");
            }
        }
    }
    r.expect_end();
    return set;
}

ThumbnailSet load_thumbnails(const std::filesystem::path& path) { return decode_thumbnails(read_file(path)); }

void save_thumbnails(const std::filesystem::path& path, const ThumbnailSet& set)
{
    write_file(path, encode_thumbnails(set));
}

EmbeddingDatabase synthetic_label_db(const std::map<std::uint32_t, std::string>& labels, std::size_t dim,
                                     std::uint64_t seed)
{
    if (labels.size() > dim) {
        throw std::invalid_argument("cannot place " + std::to_string(labels.size()) + " orthogonal embeddings in " +
                                    std::to_string(dim) + " dimensions");
    }
    Rng rng(seed ^ 0x1abe1dbULL);
    std::vector<EmbeddingEntry> entries;
    for (const auto& [id, text] : labels) {
        std::vector<double> v(dim);
        // modified Gram-Schmidt against the earlier vectors, redrawing the
        // rare near-dependent sample
        for (;;) {
            for (double& x : v) {
                x = rng.normal();
            }
            for (const auto& e : entries) {
                double d = 0.0;
                for (std::size_t i = 0; i < dim; ++i) {
                    d += v[i] * e.embedding[i];
                }
                for (std::size_t i = 0; i < dim; ++i) {
                    v[i] -= d * e.embedding[i];
                }
            }
            double sq = 0.0;
            for (double x : v) {
                sq += x * x;
            }
            if (sq > 1e-6) {
                break;
            }
        }
        normalize(v);
        entries.push_back({id, text, v});
    }
    return EmbeddingDatabase(dim, std::move(entries));
}

EmbeddingDatabase synthetic_caption_db(const Dataset& dataset, std::size_t dim, std::uint64_t seed)
{
    Rng rng(seed ^ 0xca971011ULL);
    std::map<std::uint32_t, std::vector<double>> base;
    for (const auto& r : dataset.records) {
        if (!base.contains(r.class_id)) {
            std::vector<double> v(dim);
            for (double& x : v) {
                x = rng.normal();
            }
            normalize(v);
            base.emplace(r.class_id, std::move(v));
        }
    }
    std::vector<EmbeddingEntry> entries;
    for (std::size_t i = 0; i < dataset.records.size(); ++i) {
        std::vector<double> v = base.at(dataset.records[i].class_id);
        for (double& x : v) {
            x += 0.25 / std::sqrt(static_cast<double>(dim)) * rng.normal();
        }
        normalize(v);
        auto it = dataset.manifest.captions.find(static_cast<std::uint32_t>(i));
        std::string text = it != dataset.manifest.captions.end() ? it->second : "";
        entries.push_back({static_cast<std::uint32_t>(i), text, std::move(v)});
    }
    return EmbeddingDatabase(dim, std::move(entries));
}

ThumbnailSet synthetic_thumbnails(const Dataset& dataset, std::uint64_t seed)
{
    struct Wave {
        double fx, fy, phase, amp;
    };
    Rng rng(seed ^ 0x7b0b7b0bULL);
    std::map<std::uint32_t, std::vector<Wave>> patterns; // three waves per plane
    for (const auto& r : dataset.records) {
        if (!patterns.contains(r.class_id)) {
            std::vector<Wave> w(9);
            for (auto& x : w) {
                x = {rng.uniform(0.5, 3.0), rng.uniform(0.5, 3.0), rng.uniform(0.0, 2.0 * std::numbers::pi),
                     rng.uniform(0.05, 0.15)};
            }
            patterns.emplace(r.class_id, std::move(w));
        }
    }
    ThumbnailSet set;
    for (const auto& r : dataset.records) {
        const auto& w = patterns.at(r.class_id);
        Thumbnail t;
        t.pixels.resize(kThumbSize);
        for (std::size_t y = 0; y < kThumbSide; ++y) {
            for (std::size_t x = 0; x < kThumbSide; ++x) {
                for (std::size_t p = 0; p < 3; ++p) {
                    double v = 0.5;
                    for (std::size_t k = 0; k < 3; ++k) {
                        const Wave& q = w[p * 3 + k];
                        v += q.amp * std::sin(2.0 * std::numbers::pi * (q.fx * x + q.fy * y) / kThumbSide + q.phase);
                    }
                    v += 0.02 * rng.normal();
                    t.pixels[(y * kThumbSide + x) * 3 + p] =
                        static_cast<double>(static_cast<float>(std::clamp(v, 0.0, 1.0)));
                }
            }
        }
        set.images.push_back(std::move(t));
    }
    return set;
}

std::vector<std::vector<double>> build_targets(int layer_id, const Dataset& dataset, const TargetSources& sources)
{
    std::vector<std::vector<double>> out;
    out.reserve(dataset.records.size());
    switch (layer_id) {
    case 1:
        if (sources.label_db == nullptr) {
            throw std::invalid_argument("layer 1 targets need a label embedding database");
        }
        for (const auto& r : dataset.records) {
            if (!sources.label_db->contains(r.class_id)) {
                throw FormatError("label database has no embedding for class " + std::to_string(r.class_id));
            }
            out.push_back(sources.label_db->by_id(r.class_id).embedding);
        }
        break;
    case 2:
        if (sources.caption_db == nullptr) {
            throw std::invalid_argument("layer 2 targets need a caption embedding database");
        }
        for (std::size_t i = 0; i < dataset.records.size(); ++i) {
            auto id = static_cast<std::uint32_t>(i);
            if (!sources.caption_db->contains(id)) {
                throw FormatError("caption database has no embedding for record " + std::to_string(i));
            }
            out.push_back(sources.caption_db->by_id(id).embedding);
        }
        break;
    case 3:
        if (sources.thumbnails == nullptr) {
            throw std::invalid_argument("layer 3 targets need a thumbnail file");
        }
        if (sources.thumbnails->images.size() != dataset.records.size()) {
            throw FormatError("thumbnail count " + std::to_string(sources.thumbnails->images.size()) +
                              " does not match record count " + std::to_string(dataset.records.size()));
        }
        for (const auto& t : sources.thumbnails->images) {
            out.push_back(t.pixels);
        }
        break;
    default:
        throw std::invalid_argument("layer_id must be 1, 2 or 3");
    }
    return out;
}

} // namespace semcodec
