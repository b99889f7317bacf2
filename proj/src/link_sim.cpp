#include "semcodec/link_sim.hpp"

#include <json.hpp>

namespace semcodec {

void ChannelModel::validate() const
{
    if (budget_bits_per_signal == 0) {
        throw std::invalid_argument("channel budget must be positive");
    }
}

std::string ChannelModel::to_json() const
{
    nlohmann::ordered_json j;
    j["budget_bits_per_signal"] = budget_bits_per_signal;
    j["policy"] = "prefix_drop";
    return j.dump();
}

ChannelModel ChannelModel::from_json(const std::string& text)
{
    try {
        auto j = nlohmann::json::parse(text);
        ChannelModel c;
        c.budget_bits_per_signal = j.at("budget_bits_per_signal").get<std::uint64_t>();
        auto policy = j.value("policy", std::string("prefix_drop"));
        if (policy != "prefix_drop") {
            throw FormatError("channel: unknown policy '" + policy + "'");
        }
        c.validate();
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("channel config: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw FormatError(std::string("channel config: ") + e.what());
    }
}

Delivery simulate_one(std::span<const std::uint8_t> stream, const ChannelModel& channel, std::size_t index)
{
    channel.validate();
    auto s = unpack(stream);
    std::map<int, Bytes> prefix;
    int k = 0;
    std::uint64_t bits = 0;
    for (const auto& [id, payload] : s.layers) {
        prefix.emplace(id, payload);
        std::uint64_t size = 8 * container_size(prefix, s.with_crc);
        if (size > channel.budget_bits_per_signal) {
            break;
        }
        k = id;
        bits = size;
    }
    if (k == 0) {
        throw DeliveryFailure("signal " + std::to_string(index) + ": layer 1 needs " +
                              std::to_string(8 * container_size({{1, s.layers.at(1)}}, s.with_crc)) +
                              " bits, budget is " + std::to_string(channel.budget_bits_per_signal));
    }
    Delivery d;
    d.bytes = slice(stream, k);
    d.log.index = index;
    d.log.delivered_layers = k;
    d.log.delivered_bits = bits;
    d.log.offered_bits = 8 * stream.size();
    for (const auto& [id, payload] : s.layers) {
        if (id > k) {
            d.log.dropped.push_back(id);
        }
    }
    return d;
}

BatchDelivery simulate(std::span<const Bytes> streams, const ChannelModel& channel)
{
    BatchDelivery out;
    out.report.budget_bits = channel.budget_bits_per_signal;
    for (std::size_t i = 0; i < streams.size(); ++i) {
        auto d = simulate_one(streams[i], channel, i);
        out.report.delivered_bits += d.log.delivered_bits;
        out.report.signals.push_back(std::move(d.log));
        out.delivered.push_back(std::move(d.bytes));
    }
    return out;
}

std::string DeliveryReport::to_json() const
{
    nlohmann::ordered_json j;
    j["budget_bits_per_signal"] = budget_bits;
    j["delivered_bits"] = delivered_bits;
    nlohmann::ordered_json list = nlohmann::ordered_json::array();
    for (const auto& s : signals) {
        std::vector<int> layers;
        for (int id = 1; id <= s.delivered_layers; ++id) {
            layers.push_back(id);
        }
        list.push_back({{"index", s.index},
                        {"delivered_layers", layers},
                        {"dropped_layers", s.dropped},
                        {"delivered_bits", s.delivered_bits},
                        {"offered_bits", s.offered_bits}});
    }
    j["signals"] = list;
    return j.dump(2);
}

} // namespace semcodec
