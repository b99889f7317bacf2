#include <doctest.h>

#include "semcodec/link_sim.hpp"
#include "semcodec/rng.hpp"

using namespace semcodec;

namespace {

Bytes three_layer_stream(bool crc)
{
    return pack({{1, Bytes(10, 1)}, {2, Bytes(20, 2)}, {3, Bytes(100, 3)}}, 4, crc);
}

} // namespace

TEST_CASE("budget examples")
{
    auto s = three_layer_stream(false);
    // container sizes: 23, 48, 153 bytes
    ChannelModel ch;
    ch.budget_bits_per_signal = 8 * 48;
    auto d = simulate_one(s, ch);
    CHECK(d.log.delivered_layers == 2);
    CHECK(d.log.dropped == std::vector<int>{3});
    CHECK(d.log.delivered_bits == 8 * 48);
    CHECK(d.log.offered_bits == 8 * 153);
    CHECK(unpack(d.bytes).max_layer() == 2);

    ch.budget_bits_per_signal = 8 * 48 - 1;
    CHECK(simulate_one(s, ch).log.delivered_layers == 1);
    ch.budget_bits_per_signal = 8 * 153;
    CHECK(simulate_one(s, ch).bytes == s);
    ch.budget_bits_per_signal = 8 * 23 - 1;
    CHECK_THROWS_AS(simulate_one(s, ch), DeliveryFailure);

    // the CRC trailer counts against the budget
    auto c = three_layer_stream(true);
    ch.budget_bits_per_signal = 8 * 48;
    CHECK(simulate_one(c, ch).log.delivered_layers == 1);
}

TEST_CASE("delivered prefix is maximal")
{
    Rng rng(9);
    for (int trial = 0; trial < 300; ++trial) {
        std::map<int, Bytes> layers;
        int k = 1 + static_cast<int>(rng.below(3));
        for (int id = 1; id <= k; ++id) {
            layers[id] = Bytes(rng.below(200), static_cast<std::uint8_t>(id));
        }
        bool crc = rng.below(2) == 1;
        auto s = pack(layers, 0, crc);
        ChannelModel ch;
        ch.budget_bits_per_signal = 1 + rng.below(8 * (s.size() + 20));
        std::map<int, Bytes> prefix;
        int best = 0;
        for (const auto& [id, p] : layers) {
            prefix[id] = p;
            if (8 * container_size(prefix, crc) <= ch.budget_bits_per_signal) {
                best = id;
            }
        }
        if (best == 0) {
            CHECK_THROWS_AS(simulate_one(s, ch), DeliveryFailure);
            continue;
        }
        auto d = simulate_one(s, ch);
        CHECK(d.log.delivered_layers == best);
        CHECK(8 * d.bytes.size() <= ch.budget_bits_per_signal);
        CHECK(d.bytes == slice(s, best));
    }
}

TEST_CASE("batch report and channel config")
{
    std::vector<Bytes> streams = {three_layer_stream(false), pack({{1, Bytes(2)}}, 1, false)};
    ChannelModel ch;
    ch.budget_bits_per_signal = 8 * 60;
    auto b = simulate(streams, ch);
    REQUIRE(b.delivered.size() == 2);
    CHECK(b.report.signals[0].delivered_layers == 2);
    CHECK(b.report.signals[1].delivered_layers == 1);
    CHECK(b.report.delivered_bits == 8 * (48 + 15));
    CHECK(b.report.to_json().find("\"dropped_layers\"") != std::string::npos);

    auto back = ChannelModel::from_json(ch.to_json());
    CHECK(back.budget_bits_per_signal == 480);
    CHECK_THROWS_AS(ChannelModel::from_json(R"({"budget_bits_per_signal": 0})"), FormatError);
    CHECK_THROWS_AS(ChannelModel::from_json(R"({"budget_bits_per_signal": 10, "policy": "random"})"), FormatError);
    CHECK_THROWS_AS(ChannelModel::from_json("[]"), FormatError);
    ChannelModel zero;
    CHECK_THROWS_AS(simulate_one(streams[0], zero), std::invalid_argument);
}
