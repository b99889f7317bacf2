#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "semcodec/retrieval.hpp"
#include "semcodec/rng.hpp"
#include "semcodec/targets.hpp"

using namespace semcodec;

namespace {

EmbeddingDatabase random_db(Rng& rng, std::size_t n, std::size_t dim)
{
    std::vector<EmbeddingEntry> e;
    for (std::size_t i = 0; i < n; ++i) {
        EmbeddingEntry x;
        x.class_id = static_cast<std::uint32_t>(3 * i + 1);
        x.text = "class " + std::to_string(i);
        for (std::size_t d = 0; d < dim; ++d) {
            x.embedding.push_back(static_cast<float>(rng.normal()));
        }
        e.push_back(std::move(x));
    }
    return EmbeddingDatabase(dim, std::move(e));
}

} // namespace

TEST_CASE("EMBD round trip")
{
    std::vector<EmbeddingEntry> e = {{4, "piano", {0.5, -1.0, 2.0}}, {1, "h\xc3\xa9llo", {1.0, 0.0, 0.0}}};
    EmbeddingDatabase db(3, e);
    auto bytes = encode_embedding_db(db);
    // 4 + 1 + 2 + 4 header, then (4 + 2 + len + 12) per entry
    CHECK(bytes.size() == 11 + (18 + 5) + (18 + 6));
    auto back = decode_embedding_db(bytes);
    CHECK(back.dim() == 3);
    REQUIRE(back.size() == 2);
    CHECK(back.by_id(1).text == "h\xc3\xa9llo");
    CHECK(back.by_id(4).embedding == e[0].embedding);
    CHECK(encode_embedding_db(back) == bytes);
    CHECK_THROWS(back.by_id(2));

    auto cut = bytes;
    cut.pop_back();
    CHECK_THROWS_AS(decode_embedding_db(cut), FormatError);
    auto extra = bytes;
    extra.push_back(1);
    CHECK_THROWS_AS(decode_embedding_db(extra), FormatError);
}

TEST_CASE("invalid databases are rejected")
{
    CHECK_THROWS_AS(EmbeddingDatabase(2, {{1, "a", {1.0, 0.0}}, {1, "b", {0.0, 1.0}}}), FormatError);
    CHECK_THROWS_AS(EmbeddingDatabase(2, {{1, "a", {0.0, 0.0}}}), FormatError);
    CHECK_THROWS_AS(EmbeddingDatabase(2, {{1, "a", {1.0, 0.0, 0.0}}}), ShapeError);
}

TEST_CASE("classify agrees with a brute-force cosine ranking")
{
    Rng rng(7);
    auto db = random_db(rng, 12, 6);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> q(6);
        for (double& v : q) {
            v = rng.normal();
        }
        double qn = 0.0;
        for (double v : q) {
            qn += v * v;
        }
        std::vector<std::pair<double, std::uint32_t>> ref;
        for (const auto& e : db.entries()) {
            double dot = 0.0, en = 0.0;
            for (std::size_t d = 0; d < 6; ++d) {
                dot += q[d] * e.embedding[d];
                en += e.embedding[d] * e.embedding[d];
            }
            ref.push_back({dot / std::sqrt(qn * en), e.class_id});
        }
        std::sort(ref.begin(), ref.end(), [](auto& a, auto& b) { return a.first > b.first; });
        auto p = classify(db, q, 0);
        CHECK(p.class_id == ref[0].second);
        CHECK(p.score == doctest::Approx(ref[0].first).epsilon(1e-12));
        REQUIRE(p.top.size() == 12);
        for (std::size_t i = 0; i < 12; ++i) {
            CHECK(p.top[i].class_id == ref[i].second);
        }
        CHECK(classify(db, q, 3).top.size() == 3);
    }
}

TEST_CASE("ties go to the lower class id")
{
    EmbeddingDatabase db(2, {{9, "a", {1.0, 0.0}}, {2, "b", {2.0, 0.0}}, {5, "c", {0.0, 1.0}}});
    auto p = classify(db, std::vector<double>{3.0, 0.0}, 0);
    CHECK(p.class_id == 2);
    CHECK(p.top[1].class_id == 9);
    CHECK_THROWS_AS(classify(db, std::vector<double>{1.0}), ShapeError);
    CHECK_THROWS(classify(db, std::vector<double>{0.0, 0.0}));
}

TEST_CASE("synthetic label embeddings are orthonormal")
{
    std::map<std::uint32_t, std::string> labels;
    for (std::uint32_t c = 0; c < 8; ++c) {
        labels[c] = "class_" + std::to_string(c);
    }
    auto db = synthetic_label_db(labels, 64, 3);
    REQUIRE(db.size() == 8);
    for (std::uint32_t a = 0; a < 8; ++a) {
        for (std::uint32_t b = 0; b < 8; ++b) {
            double dot = 0.0;
            for (std::size_t d = 0; d < 64; ++d) {
                dot += db.by_id(a).embedding[d] * db.by_id(b).embedding[d];
            }
            // stored as f32
            CHECK(dot == doctest::Approx(a == b ? 1.0 : 0.0).epsilon(1e-6).scale(1.0));
        }
    }
    CHECK(db.by_id(3).text == "class_3");
    CHECK_THROWS_AS(synthetic_label_db(labels, 4, 3), std::invalid_argument);
}
