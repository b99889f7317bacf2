#pragma once

// The three layer codecs:
//   layer 1 (object/label level): x -> y1 -> label-space feature
//   layer 2 (caption level):      x -> y2, decoded under FiLM conditioning
//                                  on the layer-1 feature
//   layer 3 (stimulus level):     x -> y3 -> 32x32x3 thumbnail
// plus their distortions and rate-distortion losses.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "semcodec/data_io.hpp"
#include "semcodec/entropy.hpp"
#include "semcodec/network.hpp"

namespace semcodec {

inline constexpr std::size_t kThumbSide = 32;
inline constexpr std::size_t kThumbSize = kThumbSide * kThumbSide * 3;

// Encoder: stem -> [dropout, resblock1d(w)] for w in encoder_blocks.
//   stem is conv_resblocks over time + global average pooling when
//   conv_channels is non-empty, else a single linear map of width stem_linear.
// Decoder: resblock1d(w) for w in decoder_blocks, each preceded by a FiLM
//   layer when condition_width > 0. The FiLM context comes from a dense
//   extractor condition_width -> context_width -> context_width.
struct CodecArch {
    int layer_id = 1;
    std::size_t in_channels = 128;
    std::size_t in_samples = 440;
    std::vector<std::size_t> conv_channels;
    std::size_t conv_kernel = 3;
    std::size_t conv_stride = 2;
    std::size_t stem_linear = 0;
    std::vector<std::size_t> encoder_blocks;
    std::vector<std::size_t> decoder_blocks;
    std::size_t condition_width = 0;
    std::size_t context_width = 0;
    double dropout = 0.25;

    std::size_t latent_width() const { return encoder_blocks.back(); }
    std::size_t output_width() const { return decoder_blocks.back(); }
    std::size_t stem_width() const { return conv_channels.empty() ? stem_linear : conv_channels.back(); }

    void validate() const;
    std::string to_json() const;
    static CodecArch from_json(const std::string& text);

    // Full-size layouts for 128 x 440 inputs.
    static CodecArch paper(int layer_id);
    // Reduced widths for desk-scale experiments. `output` is the target
    // embedding width for layers 1-2 (ignored for layer 3, always 3072).
    static CodecArch compact(int layer_id, std::size_t channels, std::size_t samples, std::size_t latent,
                             std::size_t output, std::size_t condition_width = 0);
};

std::vector<LayerSpec> encoder_specs(const CodecArch& arch);
std::vector<LayerSpec> decoder_specs(const CodecArch& arch);
std::vector<LayerSpec> context_specs(const CodecArch& arch);

enum class FeatureLevel : std::uint8_t { label = 1, caption = 2 };

struct SemanticFeature {
    FeatureLevel level = FeatureLevel::label;
    std::vector<double> values;
};

struct Thumbnail {
    std::vector<double> pixels; // H x W x 3, row-major, in [0, 1]
};

// Decoded output of any layer.
struct LayerOutput {
    std::optional<SemanticFeature> feature;
    std::optional<Thumbnail> thumbnail;
};

class LayerCodec {
public:
    LayerCodec() = default;
    LayerCodec(CodecArch arch, std::uint64_t seed);

    const CodecArch& arch() const { return arch_; }
    int layer_id() const { return arch_.layer_id; }
    bool conditioned() const { return arch_.condition_width > 0; }

    Network& encoder() { return encoder_; }
    Network& decoder() { return decoder_; }
    Network& context() { return context_; }
    FactorizedDensity& density() { return density_; }
    const Network& encoder() const { return encoder_; }
    const Network& decoder() const { return decoder_; }
    const Network& context() const { return context_; }
    const FactorizedDensity& density() const { return density_; }

    bool has_table() const { return !table_.channels.empty(); }
    const PmfTable& table() const { return table_; }
    const std::vector<std::int32_t>& medians() const { return medians_; }
    void set_medians(std::vector<std::int32_t> medians); // rebuilds the PMF table
    void set_table(PmfTable table);

    // Every trainable tensor, in a fixed order.
    std::vector<ParamRef> parameter_refs();
    std::vector<Parameter> parameters() const;
    void load_parameters(std::span<const Parameter> params);

    // x: (batch, channels, samples). Eval mode.
    Tensor encode_batch(const Tensor& x) const;
    std::vector<double> encode(const BrainSignal& x) const;

    // Rounds, then clamps into the PMF support when a table is present.
    QuantizedCode quantize_latent(std::span<const double> latent, std::size_t* clamped = nullptr) const;

    // yhat: (batch, latent). condition: (batch, condition_width) for layer 2.
    // Raw (unclamped) decoder output.
    Tensor decode_batch(const Tensor& yhat, const Tensor* condition) const;

    // Layer 2 requires a label-level condition; layers 1 and 3 take none.
    LayerOutput decode(const QuantizedCode& code, const SemanticFeature* condition = nullptr) const;

    Bytes compress(const BrainSignal& x, std::size_t* clamped = nullptr) const;
    QuantizedCode decompress(std::span<const std::uint8_t> payload) const;

private:
    CodecArch arch_;
    Network encoder_;
    Network decoder_;
    Network context_;
    FactorizedDensity density_;
    PmfTable table_;
    std::vector<std::int32_t> medians_;
};

Tensor signal_batch(std::span<const BrainSignal* const> signals);

// Layers 1-2: MSE(z, zhat) + alpha (1 - cos(z, zhat)); layer 3: MSE.
// MSE averages over elements. Throws on zero-norm inputs to the cosine.
double distortion(int layer_id, std::span<const double> z, std::span<const double> zhat, double alpha,
                  std::vector<double>* grad_zhat = nullptr);

double cosine_similarity(std::span<const double> a, std::span<const double> b);

// R + lambda D.
double rd_loss(double rate_bits, double distortion_value, double lambda);

} // namespace semcodec
