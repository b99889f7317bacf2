#pragma once

// Quantization, the uniform-noise training surrogate, a per-channel learned
// monotone CDF ("factorized" density), 16-bit PMF tables and a 32-bit range
// coder.
//
// Range coder layout (bit-exact):
//   * probabilities are integers summing to 2^16 per channel
//   * state: low (33 bits used), range (32 bits), carry-propagating cache
//   * encode(cum, freq): r = range >> 16; low += r * cum; range = r * freq;
//     while range < 2^24: range <<= 8, shift one byte out of low
//   * flush: five byte shifts. The first emitted byte is always 0x00.
//   * symbol i of a code uses table channel (i mod channel_count).
// The decoder reads exactly as many bytes as the encoder wrote; running out
// of input or leftover bytes both raise DecodeError.

#include <cstdint>
#include <span>
#include <vector>

#include "semcodec/byte_io.hpp"
#include "semcodec/network.hpp"
#include "semcodec/rng.hpp"

namespace semcodec {

// Round to nearest, ties away from zero.
std::vector<std::int32_t> quantize(std::span<const double> y);

// y + u, u ~ U(-0.5, 0.5) elementwise.
std::vector<double> add_uniform_noise(std::span<const double> y, Rng& rng);

inline constexpr double kLikelihoodBound = 0x1.0p-24;

// Per-channel CDF c(x) = sigmoid(f(x)), f a composition of four elementwise
// stages 1 -> 3 -> 3 -> 3 -> 1:
//   z = softplus(H_k) x + b_k,  x' = z + tanh(a_k) * tanh(z)  (k < 3)
// softplus keeps every slope positive and |tanh(a_k)| < 1 keeps the gate
// from reversing the slope, so c is strictly increasing. Initialised to the
// unit logistic CDF (slopes multiply to 1, biases and gates zero).
class FactorizedDensity {
public:
    static constexpr std::size_t kStages = 4;
    static constexpr std::size_t kWidth = 3;

    FactorizedDensity() = default;
    explicit FactorizedDensity(std::size_t channels);

    std::size_t channels() const { return channels_; }

    // density.h0..h3, density.b0..b3, density.a0..a2
    std::vector<Parameter>& parameters() { return params_; }
    const std::vector<Parameter>& parameters() const { return params_; }
    std::vector<Tensor> zero_grads() const;

    double logit(std::size_t ch, double x) const;
    double cdf(std::size_t ch, double x) const;

    // v: (rows, channels) or (channels). p = c(v + 1/2) - c(v - 1/2),
    // bounded below by 2^-24.
    Tensor likelihood(const Tensor& v) const;

    // Backward of likelihood. grad_p is dL/dp. Where the lower bound is
    // active the gradient only passes if it pushes p upwards.
    void likelihood_backward(const Tensor& v, const Tensor& grad_p, std::vector<Tensor>& param_grads,
                             Tensor* v_grad) const;

    // Sum of -log2 p over all entries; optionally accumulates
    // scale * gradients into param_grads / v_grad.
    double rate_bits(const Tensor& v, std::vector<Tensor>* param_grads = nullptr, Tensor* v_grad = nullptr,
                     double scale = 1.0) const;

private:
    struct Eval;
    void eval(std::size_t ch, double x, Eval& e) const;
    double backprop(std::size_t ch, const Eval& e, double g, std::vector<Tensor>& param_grads) const;
    void check_width(const Tensor& v) const;

    std::size_t channels_ = 0;
    std::vector<Parameter> params_;
};

double estimate_rate_bits(const FactorizedDensity& density, std::span<const double> v);

// -- PMF tables ------------------------------------------------------------

inline constexpr std::uint32_t kProbBits = 16;
inline constexpr std::uint32_t kProbTotal = 1u << kProbBits;
inline constexpr std::int32_t kSupportRadius = 64;

struct PmfChannel {
    std::int32_t offset = 0;           // symbol value of index 0
    std::vector<std::uint32_t> freq;   // each >= 1, sum == 2^16
    std::vector<std::uint32_t> cum;    // size freq.size() + 1, cum[0] = 0

    std::int32_t min_symbol() const { return offset; }
    std::int32_t max_symbol() const { return offset + static_cast<std::int32_t>(freq.size()) - 1; }
    double probability(std::int32_t symbol) const;
};

struct PmfTable {
    std::vector<PmfChannel> channels;

    // Checks freq >= 1, totals, cumulative arrays, and length >= 2.
    void validate() const;
    const PmfChannel& channel_for(std::size_t symbol_index) const
    {
        return channels[symbol_index % channels.size()];
    }
};

// Largest-remainder quantisation of real weights to integers >= 1 summing
// to 2^16: scale to the total, floor, raise zeros to 1, then hand out the
// deficit by descending fractional part (ties: lower index), or take back a
// surplus one unit at a time from the currently largest entry (ties: lower
// index).
std::vector<std::uint32_t> quantize_pmf(std::span<const double> weights);

PmfChannel make_pmf_channel(std::int32_t offset, std::vector<std::uint32_t> freq);

// Support [median - 64, median + 64] per channel.
PmfTable build_pmf_table(const FactorizedDensity& density, std::span<const std::int32_t> channel_medians);

void write_pmf_table(ByteWriter& w, const PmfTable& table);
PmfTable read_pmf_table(ByteReader& r);

// Exact table cost: sum of -log2(freq / 2^16).
double table_rate_bits(std::span<const std::int32_t> symbols, const PmfTable& table);

// -- codes and the range coder --------------------------------------------

struct QuantizedCode {
    std::vector<std::int32_t> symbols;
    int layer_id = 1;
};

// Clamps symbols into their channel support; returns the number clamped.
std::size_t clamp_to_support(QuantizedCode& code, const PmfTable& table);

Bytes range_encode(const QuantizedCode& code, const PmfTable& table);
QuantizedCode range_decode(std::span<const std::uint8_t> bytes, const PmfTable& table, std::size_t n_symbols,
                           int layer_id = 1);

} // namespace semcodec
