#include "semcodec/codec.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "semcodec/param_io.hpp"

namespace semcodec {

void CodecArch::validate() const
{
    if (layer_id < 1 || layer_id > 3) {
        throw std::invalid_argument("layer_id must be 1, 2 or 3");
    }
    if (in_channels == 0 || in_samples == 0) {
        throw std::invalid_argument("codec input shape must be positive");
    }
    if (conv_channels.empty() == (stem_linear == 0)) {
        throw std::invalid_argument("codec needs exactly one stem: conv_channels or stem_linear");
    }
    if (encoder_blocks.empty() || decoder_blocks.empty()) {
        throw std::invalid_argument("codec needs encoder and decoder blocks");
    }
    if ((layer_id == 2) != (condition_width > 0)) {
        throw std::invalid_argument("exactly layer 2 is conditioned");
    }
    if (layer_id == 2 && context_width == 0) {
        throw std::invalid_argument("layer 2 needs a context width");
    }
    if (layer_id == 3 && output_width() != kThumbSize) {
        throw std::invalid_argument("layer 3 decoder must end at 32*32*3");
    }
}

std::string CodecArch::to_json() const
{
    nlohmann::ordered_json j;
    j["layer_id"] = layer_id;
    j["in_channels"] = in_channels;
    j["in_samples"] = in_samples;
    j["conv_channels"] = conv_channels;
    j["conv_kernel"] = conv_kernel;
    j["conv_stride"] = conv_stride;
    j["stem_linear"] = stem_linear;
    j["encoder_blocks"] = encoder_blocks;
    j["decoder_blocks"] = decoder_blocks;
    j["condition_width"] = condition_width;
    j["context_width"] = context_width;
    j["dropout"] = dropout;
    return j.dump();
}

CodecArch CodecArch::from_json(const std::string& text)
{
    try {
        auto j = nlohmann::json::parse(text);
        CodecArch a;
        a.layer_id = j.at("layer_id").get<int>();
        a.in_channels = j.at("in_channels").get<std::size_t>();
        a.in_samples = j.at("in_samples").get<std::size_t>();
        a.conv_channels = j.at("conv_channels").get<std::vector<std::size_t>>();
        a.conv_kernel = j.at("conv_kernel").get<std::size_t>();
        a.conv_stride = j.at("conv_stride").get<std::size_t>();
        a.stem_linear = j.at("stem_linear").get<std::size_t>();
        a.encoder_blocks = j.at("encoder_blocks").get<std::vector<std::size_t>>();
        a.decoder_blocks = j.at("decoder_blocks").get<std::vector<std::size_t>>();
        a.condition_width = j.at("condition_width").get<std::size_t>();
        a.context_width = j.at("context_width").get<std::size_t>();
        a.dropout = j.at("dropout").get<double>();
        a.validate();
        return a;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("codec architecture: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw FormatError(std::string("codec architecture: ") + e.what());
    }
}

CodecArch CodecArch::paper(int layer_id)
{
    CodecArch a;
    a.layer_id = layer_id;
    switch (layer_id) {
    case 1:
        a.conv_channels = {256, 512, 768, 768};
        a.encoder_blocks = {1000, 512};
        a.decoder_blocks = {1000, 768, 768};
        break;
    case 2:
        a.conv_channels = {256, 512, 768, 768};
        a.encoder_blocks = {1000, 512};
        a.decoder_blocks = {1000, 768, 512};
        a.condition_width = 768;
        a.context_width = 512;
        break;
    case 3:
        a.stem_linear = 4096;
        a.encoder_blocks = {3072, 2048};
        a.decoder_blocks = {3072, 4096, 3072};
        break;
    default:
        throw std::invalid_argument("layer_id must be 1, 2 or 3");
    }
    a.validate();
    return a;
}

CodecArch CodecArch::compact(int layer_id, std::size_t channels, std::size_t samples, std::size_t latent,
                             std::size_t output, std::size_t condition_width)
{
    CodecArch a;
    a.layer_id = layer_id;
    a.in_channels = channels;
    a.in_samples = samples;
    switch (layer_id) {
    case 1:
    case 2:
        a.conv_channels = {32, 48, 64};
        a.encoder_blocks = {96, latent};
        a.decoder_blocks = {96, output};
        if (layer_id == 2) {
            a.condition_width = condition_width;
            a.context_width = 32;
            a.decoder_blocks = {96, 64, output};
        }
        break;
    case 3:
        a.stem_linear = 128;
        a.encoder_blocks = {128, latent};
        a.decoder_blocks = {256, kThumbSize};
        break;
    default:
        throw std::invalid_argument("layer_id must be 1, 2 or 3");
    }
    a.validate();
    return a;
}

std::vector<LayerSpec> encoder_specs(const CodecArch& arch)
{
    std::vector<LayerSpec> s;
    std::size_t width = 0;
    if (!arch.conv_channels.empty()) {
        std::size_t ch = arch.in_channels;
        for (auto out : arch.conv_channels) {
            s.push_back(LayerSpec::conv_resblock(ch, out, arch.conv_kernel, arch.conv_stride));
            ch = out;
        }
        s.push_back(LayerSpec::global_avg_pool());
        width = ch;
    } else {
        s.push_back(LayerSpec::linear(arch.in_channels * arch.in_samples, arch.stem_linear));
        width = arch.stem_linear;
    }
    for (auto w : arch.encoder_blocks) {
        s.push_back(LayerSpec::dropout(arch.dropout));
        s.push_back(LayerSpec::resblock1d(width, w));
        width = w;
    }
    return s;
}

std::vector<LayerSpec> decoder_specs(const CodecArch& arch)
{
    std::vector<LayerSpec> s;
    std::size_t width = arch.latent_width();
    for (auto w : arch.decoder_blocks) {
        if (arch.condition_width > 0) {
            s.push_back(LayerSpec::film(width));
        }
        s.push_back(LayerSpec::resblock1d(width, w));
        width = w;
    }
    return s;
}

std::vector<LayerSpec> context_specs(const CodecArch& arch)
{
    if (arch.condition_width == 0) {
        return {};
    }
    return {LayerSpec::linear(arch.condition_width, arch.context_width), LayerSpec::activation(),
            LayerSpec::linear(arch.context_width, arch.context_width)};
}

LayerCodec::LayerCodec(CodecArch arch, std::uint64_t seed) : arch_(std::move(arch))
{
    arch_.validate();
    Rng init(seed);
    encoder_ = Network(encoder_specs(arch_), {arch_.in_channels, arch_.in_samples}, "enc", init);
    decoder_ = Network(decoder_specs(arch_), {arch_.latent_width()}, "dec", init, arch_.context_width);
    if (conditioned()) {
        context_ = Network(context_specs(arch_), {arch_.condition_width}, "ctx", init);
    }
    density_ = FactorizedDensity(arch_.latent_width());
}

void LayerCodec::set_medians(std::vector<std::int32_t> medians)
{
    table_ = build_pmf_table(density_, medians);
    medians_ = std::move(medians);
}

void LayerCodec::set_table(PmfTable table)
{
    table.validate();
    if (table.channels.size() != arch_.latent_width()) {
        throw FormatError("pmf table channel count does not match the latent width");
    }
    medians_.clear();
    for (const auto& ch : table.channels) {
        medians_.push_back(ch.offset + kSupportRadius);
    }
    table_ = std::move(table);
}

std::vector<ParamRef> LayerCodec::parameter_refs()
{
    std::vector<ParamRef> refs;
    for (Network* net : {&encoder_, &decoder_, &context_}) {
        for (auto& p : net->parameters()) {
            refs.push_back({p.name, &p.value});
        }
    }
    for (auto& p : density_.parameters()) {
        refs.push_back({p.name, &p.value});
    }
    return refs;
}

std::vector<Parameter> LayerCodec::parameters() const
{
    std::vector<Parameter> out;
    for (const Network* net : {&encoder_, &decoder_, &context_}) {
        out.insert(out.end(), net->parameters().begin(), net->parameters().end());
    }
    out.insert(out.end(), density_.parameters().begin(), density_.parameters().end());
    return out;
}

void LayerCodec::load_parameters(std::span<const Parameter> params)
{
    assign_params(encoder_.parameters(), params);
    assign_params(decoder_.parameters(), params);
    assign_params(context_.parameters(), params);
    assign_params(density_.parameters(), params);
}

Tensor signal_batch(std::span<const BrainSignal* const> signals)
{
    if (signals.empty()) {
        throw ShapeError("empty signal batch");
    }
    std::size_t c = signals.front()->channels, t = signals.front()->samples;
    Tensor x({signals.size(), c, t});
    for (std::size_t b = 0; b < signals.size(); ++b) {
        if (signals[b]->channels != c || signals[b]->samples != t) {
            throw ShapeError("signals in a batch must share their shape");
        }
        std::copy(signals[b]->data.begin(), signals[b]->data.end(), x.data() + b * c * t);
    }
    return x;
}

Tensor LayerCodec::encode_batch(const Tensor& x) const { return encoder_.forward(x, Mode::eval); }

std::vector<double> LayerCodec::encode(const BrainSignal& x) const
{
    if (x.channels != arch_.in_channels || x.samples != arch_.in_samples) {
        throw ShapeError("layer " + std::to_string(arch_.layer_id) + " expects " + std::to_string(arch_.in_channels) +
                         "x" + std::to_string(arch_.in_samples) + " signals, got " + std::to_string(x.channels) + "x" +
                         std::to_string(x.samples));
    }
    const BrainSignal* one[] = {&x};
    return encode_batch(signal_batch(one)).values;
}

QuantizedCode LayerCodec::quantize_latent(std::span<const double> latent, std::size_t* clamped) const
{
    if (latent.size() != arch_.latent_width()) {
        throw ShapeError("latent width mismatch");
    }
    QuantizedCode code{quantize(latent), arch_.layer_id};
    std::size_t n = has_table() ? clamp_to_support(code, table_) : 0;
    if (clamped != nullptr) {
        *clamped = n;
    }
    return code;
}

Tensor LayerCodec::decode_batch(const Tensor& yhat, const Tensor* condition) const
{
    if (conditioned()) {
        if (condition == nullptr) {
            throw std::invalid_argument("layer 2 decoding requires the layer-1 feature as condition");
        }
        Tensor ctx = context_.forward(*condition, Mode::eval);
        return decoder_.forward(yhat, Mode::eval, nullptr, nullptr, &ctx);
    }
    if (condition != nullptr) {
        throw std::invalid_argument("layer " + std::to_string(arch_.layer_id) + " takes no condition");
    }
    return decoder_.forward(yhat, Mode::eval);
}

LayerOutput LayerCodec::decode(const QuantizedCode& code, const SemanticFeature* condition) const
{
    if (code.symbols.size() != arch_.latent_width()) {
        throw ShapeError("code length " + std::to_string(code.symbols.size()) + " does not match latent width " +
                         std::to_string(arch_.latent_width()));
    }
    Tensor yhat({1, code.symbols.size()});
    for (std::size_t i = 0; i < code.symbols.size(); ++i) {
        yhat[i] = code.symbols[i];
    }
    Tensor cond;
    if (conditioned()) {
        if (condition == nullptr) {
            throw std::invalid_argument("layer 2 decoding requires the layer-1 feature as condition");
        }
        if (condition->level != FeatureLevel::label || condition->values.size() != arch_.condition_width) {
            throw ShapeError("layer 2 condition must be a label-level feature of width " +
                             std::to_string(arch_.condition_width));
        }
        cond = Tensor({1, condition->values.size()}, condition->values);
    } else if (condition != nullptr) {
        throw std::invalid_argument("layer " + std::to_string(arch_.layer_id) + " takes no condition");
    }
    Tensor out = decode_batch(yhat, conditioned() ? &cond : nullptr);
    LayerOutput result;
    if (arch_.layer_id == 3) {
        Thumbnail t;
        t.pixels = out.values;
        for (double& v : t.pixels) {
            v = std::clamp(v, 0.0, 1.0);
        }
        result.thumbnail = std::move(t);
    } else {
        result.feature = SemanticFeature{arch_.layer_id == 1 ? FeatureLevel::label : FeatureLevel::caption,
                                         out.values};
    }
    return result;
}

Bytes LayerCodec::compress(const BrainSignal& x, std::size_t* clamped) const
{
    if (!has_table()) {
        throw std::logic_error("codec has no PMF table; train or load a checkpoint first");
    }
    return range_encode(quantize_latent(encode(x), clamped), table_);
}

QuantizedCode LayerCodec::decompress(std::span<const std::uint8_t> payload) const
{
    if (!has_table()) {
        throw std::logic_error("codec has no PMF table; train or load a checkpoint first");
    }
    return range_decode(payload, table_, arch_.latent_width(), arch_.layer_id);
}

// ---------------------------------------------------------------------------

double cosine_similarity(std::span<const double> a, std::span<const double> b)
{
    if (a.size() != b.size()) {
        throw ShapeError("cosine: length mismatch");
    }
    double ab = 0.0, aa = 0.0, bb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    if (aa == 0.0 || bb == 0.0) {
        throw std::invalid_argument("cosine similarity of a zero-norm vector");
    }
    return ab / (std::sqrt(aa) * std::sqrt(bb));
}

double distortion(int layer_id, std::span<const double> z, std::span<const double> zhat, double alpha,
                  std::vector<double>* grad_zhat)
{
    if (z.size() != zhat.size() || z.empty()) {
        throw ShapeError("distortion: target and prediction must have equal non-zero length");
    }
    auto n = static_cast<double>(z.size());
    double mse = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        double d = zhat[i] - z[i];
        mse += d * d;
    }
    mse /= n;
    if (grad_zhat != nullptr) {
        grad_zhat->assign(z.size(), 0.0);
        for (std::size_t i = 0; i < z.size(); ++i) {
            (*grad_zhat)[i] = 2.0 * (zhat[i] - z[i]) / n;
        }
    }
    if (layer_id == 3) {
        return mse;
    }
    if (layer_id != 1 && layer_id != 2) {
        throw std::invalid_argument("layer_id must be 1, 2 or 3");
    }
    double zz = 0.0, hh = 0.0, zh = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        zz += z[i] * z[i];
        hh += zhat[i] * zhat[i];
        zh += z[i] * zhat[i];
    }
    if (zz == 0.0 || hh == 0.0) {
        throw std::invalid_argument("distortion: cosine term undefined for a zero-norm vector");
    }
    double nz = std::sqrt(zz), nh = std::sqrt(hh);
    double cos = zh / (nz * nh);
    if (grad_zhat != nullptr) {
        for (std::size_t i = 0; i < z.size(); ++i) {
            double dcos = z[i] / (nz * nh) - cos * zhat[i] / hh;
            (*grad_zhat)[i] -= alpha * dcos;
        }
    }
    return mse + alpha * (1.0 - cos);
}

double rd_loss(double rate_bits, double distortion_value, double lambda)
{
    return rate_bits + lambda * distortion_value;
}

} // namespace semcodec
