#include <doctest.h>

#include "semcodec/bitstream.hpp"
#include "semcodec/rng.hpp"

using namespace semcodec;

namespace {

Bytes bytes_of(std::initializer_list<int> v)
{
    Bytes b;
    for (int x : v) {
        b.push_back(static_cast<std::uint8_t>(x));
    }
    return b;
}

} // namespace

TEST_CASE("golden container bytes")
{
    std::map<int, Bytes> layers = {{1, bytes_of({0x00, 0x11, 0x22})}, {2, bytes_of({0xAB})}};
    // CRC from python's zlib.crc32 over the bytes after the magic
    Bytes expect = bytes_of({'E', 'I', 'D', 'C', 1, 1, 5, 2, 1, 3, 0, 0, 0, 0x00, 0x11, 0x22, 2, 1, 0, 0, 0, 0xAB,
                             0x0B, 0xB8, 0x6A, 0x24});
    CHECK(pack(layers, 5, true) == expect);

    auto s = unpack(expect);
    CHECK(s.subject_id == 5);
    CHECK(s.with_crc);
    CHECK(s.layers == layers);

    Bytes plain = pack(layers, 5, false);
    CHECK(plain.size() == expect.size() - kCrcBytes);
    CHECK(plain[5] == 0);
    CHECK(crc32_ieee(bytes_of({'1', '2', '3', '4', '5', '6', '7', '8', '9'})) == 0xCBF43926u);
}

TEST_CASE("container size arithmetic")
{
    std::map<int, Bytes> one = {{1, Bytes(123, 7)}};
    CHECK(container_size(one, false) == 8 + 5 + 123);
    CHECK(container_size(one, true) == 8 + 5 + 123 + 4);
    CHECK(pack(one, 0, true).size() == container_size(one, true));
    std::map<int, Bytes> three = {{1, Bytes(10)}, {2, Bytes(0)}, {3, Bytes(300)}};
    CHECK(pack(three, 1, false).size() == 8 + 3 * 5 + 310);
}

TEST_CASE("layer sets must be a prefix of 1..3")
{
    CHECK_THROWS_AS(check_layer_set({}), std::invalid_argument);
    CHECK_THROWS_AS(check_layer_set({{2, Bytes(1)}}), std::invalid_argument);
    CHECK_THROWS_AS(check_layer_set({{1, Bytes(1)}, {3, Bytes(1)}}), std::invalid_argument);
    CHECK_THROWS_AS(check_layer_set({{1, Bytes(1)}, {2, Bytes(1)}, {3, Bytes(1)}, {4, Bytes(1)}}),
                    std::invalid_argument);
    CHECK_NOTHROW(check_layer_set({{1, Bytes(1)}, {2, Bytes(1)}}));
}

TEST_CASE("unpack rejects malformed containers")
{
    auto good = pack({{1, bytes_of({1, 2, 3})}, {2, bytes_of({4})}}, 0, false);
    SUBCASE("magic")
    {
        good[1] = 'X';
        CHECK_THROWS_AS(unpack(good), FormatError);
    }
    SUBCASE("version")
    {
        good[4] = 2;
        CHECK_THROWS_AS(unpack(good), FormatError);
    }
    SUBCASE("unknown flag bits")
    {
        good[5] = 0x02;
        CHECK_THROWS_AS(unpack(good), FormatError);
    }
    SUBCASE("out-of-order ids")
    {
        good[8] = 2;
        CHECK_THROWS_AS(unpack(good), FormatError);
    }
    SUBCASE("zero layers")
    {
        good[7] = 0;
        CHECK_THROWS_AS(unpack(good), FormatError);
    }
    SUBCASE("trailing byte")
    {
        good.push_back(0);
        CHECK_THROWS_AS(unpack(good), FormatError);
    }
    SUBCASE("every truncation")
    {
        for (std::size_t n = 0; n < good.size(); ++n) {
            CHECK_THROWS_AS(unpack(std::span(good).first(n)), FormatError);
        }
    }
}

TEST_CASE("every single-byte corruption of a CRC container is caught")
{
    auto good = pack({{1, bytes_of({9, 8, 7, 6})}, {2, bytes_of({5, 4})}, {3, bytes_of({3})}}, 2, true);
    for (std::size_t i = 0; i < good.size(); ++i) {
        for (int delta : {1, 0x80, 0xFF}) {
            auto bad = good;
            bad[i] = static_cast<std::uint8_t>(bad[i] ^ delta);
            CHECK_THROWS_AS(unpack(bad), FormatError);
        }
    }
}

TEST_CASE("slicing keeps a valid prefix")
{
    Rng rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        std::map<int, Bytes> layers;
        int k = 1 + static_cast<int>(rng.below(3));
        for (int id = 1; id <= k; ++id) {
            Bytes p(rng.below(40));
            for (auto& b : p) {
                b = static_cast<std::uint8_t>(rng.below(256));
            }
            layers[id] = p;
        }
        bool crc = rng.below(2) == 1;
        auto full = pack(layers, static_cast<std::uint8_t>(trial), crc);
        for (int m = 1; m <= 3; ++m) {
            auto cut = slice(full, m);
            auto s = unpack(cut);
            CHECK(s.max_layer() == std::min(m, k));
            CHECK(s.with_crc == crc);
            CHECK(s.subject_id == trial);
            for (const auto& [id, p] : s.layers) {
                CHECK(p == layers.at(id));
            }
            CHECK(slice(cut, m) == cut);
        }
        CHECK(slice(full, k) == full);
        CHECK_THROWS_AS(slice(full, 0), std::invalid_argument);
    }
}

TEST_CASE("bits per sample")
{
    CHECK(compute_bps(980.0, 56320.0) == doctest::Approx(0.0174006).epsilon(1e-6));
    CHECK(compute_bps(0.0, 10.0) == 0.0);
    CHECK_THROWS_AS(compute_bps(1.0, 0.0), std::invalid_argument);
    // additive over layers
    CHECK(compute_bps(300.0, 56320.0) + compute_bps(680.0, 56320.0) == doctest::Approx(compute_bps(980.0, 56320.0)));

    LayeredBitstream s;
    s.layers = {{1, Bytes(10)}, {2, Bytes(3)}};
    CHECK(payload_bits(s, 1) == 80);
    CHECK(payload_bits(s, 2) == 104);
    CHECK(payload_bits(s, 3) == 104);
    CHECK(payload_bits(s, 2, true) == 8 * (8 + 10 + 3 + 2 * 5));
}
