#pragma once

// Lossless, bandwidth-limited link: each container is cut to the longest
// layer prefix whose re-packed size fits the per-signal bit budget.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "semcodec/bitstream.hpp"

namespace semcodec {

enum class DropPolicy { prefix_drop };

struct ChannelModel {
    std::uint64_t budget_bits_per_signal = 0;
    DropPolicy policy = DropPolicy::prefix_drop;

    void validate() const;
    std::string to_json() const;
    // {"budget_bits_per_signal": n, "policy": "prefix_drop"}
    static ChannelModel from_json(const std::string& text);
};

class DeliveryFailure : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct SignalDelivery {
    std::size_t index = 0;
    int delivered_layers = 0; // k: layers 1..k went through
    std::vector<int> dropped;
    std::uint64_t delivered_bits = 0; // whole re-packed container
    std::uint64_t offered_bits = 0;
};

struct DeliveryReport {
    std::uint64_t budget_bits = 0;
    std::uint64_t delivered_bits = 0;
    std::vector<SignalDelivery> signals;

    std::string to_json() const;
};

struct Delivery {
    Bytes bytes;
    SignalDelivery log;
};

// Throws DeliveryFailure when even the layer-1 container exceeds the budget.
Delivery simulate_one(std::span<const std::uint8_t> stream, const ChannelModel& channel, std::size_t index = 0);

struct BatchDelivery {
    std::vector<Bytes> delivered;
    DeliveryReport report;
};

BatchDelivery simulate(std::span<const Bytes> streams, const ChannelModel& channel);

} // namespace semcodec
