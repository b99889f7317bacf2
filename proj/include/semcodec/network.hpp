#pragma once

// Small sequential network engine with a recorded tape for exact reverse-mode
// gradients. Layers are immutable descriptors; the parameters live in the
// Network so that a forward on a const Network is a pure function.

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "semcodec/rng.hpp"
#include "semcodec/tensor.hpp"

namespace semcodec {

enum class LayerKind : std::uint8_t {
    linear,
    resblock1d,
    conv_resblock,
    global_avg_pool,
    dropout,
    film,
    activation,
};

const char* to_string(LayerKind kind);

struct LayerSpec {
    LayerKind kind = LayerKind::linear;
    std::size_t in = 0;  // features (linear, resblock1d) or channels (conv_resblock)
    std::size_t out = 0;
    std::size_t kernel = 3;
    std::size_t stride = 1;
    double rate = 0.0;   // dropout
    std::size_t width = 0; // film

    static LayerSpec linear(std::size_t in, std::size_t out) { return {LayerKind::linear, in, out}; }
    static LayerSpec resblock1d(std::size_t in, std::size_t out) { return {LayerKind::resblock1d, in, out}; }
    static LayerSpec conv_resblock(std::size_t in_ch, std::size_t out_ch, std::size_t kernel, std::size_t stride)
    {
        return {LayerKind::conv_resblock, in_ch, out_ch, kernel, stride};
    }
    static LayerSpec global_avg_pool() { return {LayerKind::global_avg_pool}; }
    static LayerSpec dropout(double rate)
    {
        LayerSpec s{LayerKind::dropout};
        s.rate = rate;
        return s;
    }
    static LayerSpec film(std::size_t width)
    {
        LayerSpec s{LayerKind::film};
        s.width = width;
        return s;
    }
    static LayerSpec activation() { return {LayerKind::activation}; }
};

enum class Mode { train, eval };

struct Parameter {
    std::string name;
    Tensor value;
};

// Per-layer tensors saved by forward for use in backward.
struct Tape {
    std::vector<std::vector<Tensor>> saved;
    Shape input_shape;
    Shape output_shape;
    bool used_context = false;
};

class Layer;

class Network {
public:
    Network() = default;

    // sample_shape excludes the batch dimension. Film layers require
    // context_width > 0; their gamma/beta maps read a (batch, context_width)
    // context tensor supplied at forward time.
    Network(std::vector<LayerSpec> specs, Shape sample_shape, std::string prefix, Rng& init,
            std::size_t context_width = 0);

    // x: (batch, sample_shape...). Records into `tape` when non-null.
    // Train mode with active dropout requires rng.
    Tensor forward(const Tensor& x, Mode mode, Rng* rng = nullptr, Tape* tape = nullptr,
                   const Tensor* context = nullptr) const;

    // Accumulates parameter gradients into `grads` (same order as
    // parameters()) and, for conditioned networks, the context gradient.
    Tensor backward(const Tape& tape, const Tensor& output_grad, std::vector<Tensor>& grads,
                    Tensor* context_grad = nullptr) const;

    std::vector<Tensor> zero_grads() const;

    std::vector<Parameter>& parameters() { return params_; }
    const std::vector<Parameter>& parameters() const { return params_; }
    Parameter& parameter(const std::string& name);
    const Parameter& parameter(const std::string& name) const;

    const std::vector<LayerSpec>& specs() const { return specs_; }
    const Shape& input_shape() const { return input_shape_; }
    const Shape& output_shape() const { return output_shape_; }
    std::size_t context_width() const { return context_width_; }
    std::size_t parameter_count() const;

private:
    std::vector<LayerSpec> specs_;
    std::vector<std::shared_ptr<const Layer>> layers_;
    std::vector<std::size_t> param_offset_; // first parameter index of each layer
    std::vector<Parameter> params_;
    Shape input_shape_;
    Shape output_shape_;
    std::size_t context_width_ = 0;
};

// -- FiLM ------------------------------------------------------------------

// gamma (.) h + beta, rowwise over a batch. All three are (batch, width).
Tensor film_modulate(const Tensor& h, const Tensor& gamma, const Tensor& beta);

// -- optimizer -------------------------------------------------------------

struct ParamRef {
    std::string name;
    Tensor* value = nullptr;
};

struct OptimizerState {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.99;
    double eps = 1e-8;
    std::uint64_t step = 0;
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
};

// Bias-corrected Adam. Moments are created lazily on the first call.
void adam_step(std::span<const ParamRef> params, std::span<const Tensor> grads, OptimizerState& state);

// Scales grads in place so their global L2 norm is at most max_norm.
// Returns the norm before scaling.
double clip_global_norm(std::span<Tensor> grads, double max_norm);

} // namespace semcodec
