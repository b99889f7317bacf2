#include "semcodec/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

#include <json.hpp>

#include "semcodec/param_io.hpp"

namespace semcodec {

namespace {
constexpr char kCkptMagic[] = "EIDW";
constexpr std::uint8_t kCkptVersion = 1;
constexpr std::size_t kEvalBatch = 32;

using ordered_json = nlohmann::ordered_json;

Tensor rows_tensor(std::span<const std::vector<double>> rows, std::size_t first, std::size_t count)
{
    std::size_t w = rows[first].size();
    Tensor t({count, w});
    for (std::size_t b = 0; b < count; ++b) {
        const auto& r = rows[first + b];
        if (r.size() != w) {
            throw ShapeError("rows of differing width");
        }
        std::copy(r.begin(), r.end(), t.data() + b * w);
    }
    return t;
}

std::size_t uniform_width(std::span<const std::vector<double>> rows, const char* what)
{
    if (rows.empty()) {
        throw std::invalid_argument(std::string("no ") + what);
    }
    std::size_t w = rows.front().size();
    for (const auto& r : rows) {
        if (r.size() != w || w == 0) {
            throw ShapeError(std::string(what) + " must share one non-zero width");
        }
    }
    return w;
}

std::int32_t lower_median(std::vector<std::int32_t>& v)
{
    auto mid = v.begin() + static_cast<std::ptrdiff_t>((v.size() - 1) / 2);
    std::nth_element(v.begin(), mid, v.end());
    return *mid;
}
} // namespace

const char* to_string(TargetSource s)
{
    switch (s) {
    case TargetSource::label_db:
        return "label_db";
    case TargetSource::caption_db:
        return "caption_db";
    case TargetSource::thumbnails:
        return "thumbnails";
    }
    return "?";
}

TargetSource parse_target_source(const std::string& s)
{
    if (s == "label_db") {
        return TargetSource::label_db;
    }
    if (s == "caption_db") {
        return TargetSource::caption_db;
    }
    if (s == "thumbnails") {
        return TargetSource::thumbnails;
    }
    throw std::invalid_argument("unknown target source '" + s + "'");
}

TargetSource default_target_source(int layer_id)
{
    switch (layer_id) {
    case 1:
        return TargetSource::label_db;
    case 2:
        return TargetSource::caption_db;
    case 3:
        return TargetSource::thumbnails;
    default:
        throw std::invalid_argument("layer_id must be 1, 2 or 3");
    }
}

TrainConfig TrainConfig::defaults(int layer_id)
{
    TrainConfig c;
    c.layer_id = layer_id;
    c.target = default_target_source(layer_id);
    c.lambda = layer_id == 2 ? 40.0 : 4.0e4;
    return c;
}

void TrainConfig::validate() const
{
    if (default_target_source(layer_id) != target) {
        throw std::invalid_argument(std::string("layer ") + std::to_string(layer_id) + " cannot train on " +
                                    to_string(target));
    }
    if (!(lambda > 0.0) || !std::isfinite(lambda)) {
        throw std::invalid_argument("lambda must be positive");
    }
    if (!(alpha >= 0.0) || !std::isfinite(alpha)) {
        throw std::invalid_argument("alpha must be non-negative");
    }
    if (epochs < 1) {
        throw std::invalid_argument("epochs must be at least 1");
    }
    if (batch_size < 1) {
        throw std::invalid_argument("batch_size must be at least 1");
    }
    if (!(lr > 0.0) || !(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
        throw std::invalid_argument("need lr > 0 and betas in [0, 1)");
    }
    if (!(clip_norm > 0.0)) {
        throw std::invalid_argument("clip_norm must be positive");
    }
    if (preset != "paper" && preset != "compact") {
        throw std::invalid_argument("preset must be 'paper' or 'compact'");
    }
}

std::string TrainConfig::to_json() const
{
    ordered_json j;
    j["layer_id"] = layer_id;
    j["lambda"] = lambda;
    j["alpha"] = alpha;
    j["epochs"] = epochs;
    j["batch_size"] = batch_size;
    j["lr"] = lr;
    j["beta1"] = beta1;
    j["beta2"] = beta2;
    j["seed"] = seed;
    j["target"] = to_string(target);
    j["clip_norm"] = clip_norm;
    j["preset"] = preset;
    j["latent_width"] = latent_width;
    j["preprocess"] = preprocess;
    j["preprocessing"] = {{"band_lo_hz", preprocessing.band_lo_hz},
                          {"band_hi_hz", preprocessing.band_hi_hz},
                          {"win_start_ms", preprocessing.win_start_ms},
                          {"win_end_ms", preprocessing.win_end_ms}};
    return j.dump();
}

TrainConfig TrainConfig::from_json(const std::string& text)
{
    try {
        auto j = nlohmann::json::parse(text);
        if (!j.is_object()) {
            throw FormatError("train config must be a JSON object");
        }
        TrainConfig c = defaults(j.value("layer_id", 1));
        for (const auto& [key, v] : j.items()) {
            if (key == "layer_id") {
            } else if (key == "lambda") {
                c.lambda = v.get<double>();
            } else if (key == "alpha") {
                c.alpha = v.get<double>();
            } else if (key == "epochs") {
                c.epochs = v.get<std::size_t>();
            } else if (key == "batch_size") {
                c.batch_size = v.get<std::size_t>();
            } else if (key == "lr") {
                c.lr = v.get<double>();
            } else if (key == "beta1") {
                c.beta1 = v.get<double>();
            } else if (key == "beta2") {
                c.beta2 = v.get<double>();
            } else if (key == "seed") {
                c.seed = v.get<std::uint64_t>();
            } else if (key == "target") {
                c.target = parse_target_source(v.get<std::string>());
            } else if (key == "clip_norm") {
                c.clip_norm = v.get<double>();
            } else if (key == "preset") {
                c.preset = v.get<std::string>();
            } else if (key == "latent_width") {
                c.latent_width = v.get<std::size_t>();
            } else if (key == "preprocess") {
                c.preprocess = v.get<bool>();
            } else if (key == "preprocessing") {
                auto& p = c.preprocessing;
                p.band_lo_hz = v.value("band_lo_hz", p.band_lo_hz);
                p.band_hi_hz = v.value("band_hi_hz", p.band_hi_hz);
                p.win_start_ms = v.value("win_start_ms", p.win_start_ms);
                p.win_end_ms = v.value("win_end_ms", p.win_end_ms);
            } else {
                throw FormatError("train config: unknown key '" + key + "'");
            }
        }
        c.validate();
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("train config: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw FormatError(std::string("train config: ") + e.what());
    }
}

std::string TrainConfig::hash() const
{
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : to_json()) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

CodecArch make_arch(const TrainConfig& cfg, std::size_t channels, std::size_t samples, std::size_t target_width,
                    std::size_t condition_width)
{
    int layer = cfg.layer_id;
    if (layer == 3 && target_width != kThumbSize) {
        throw ShapeError("layer 3 targets must be 32x32x3 thumbnails");
    }
    CodecArch a;
    if (cfg.preset == "paper") {
        a = CodecArch::paper(layer);
        a.in_channels = channels;
        a.in_samples = samples;
        if (layer != 3) {
            a.decoder_blocks.back() = target_width;
        }
        if (layer == 2) {
            a.condition_width = condition_width;
        }
        if (cfg.latent_width > 0) {
            a.encoder_blocks.back() = cfg.latent_width;
        }
    } else {
        std::size_t latent = cfg.latent_width > 0 ? cfg.latent_width : (layer == 3 ? 64 : 32);
        a = CodecArch::compact(layer, channels, samples, latent, target_width, condition_width);
    }
    a.validate();
    return a;
}

LayerCodec Checkpoint::codec() const
{
    LayerCodec c(arch, 0);
    c.load_parameters(params);
    c.set_table(table);
    return c;
}

Bytes encode_checkpoint(const Checkpoint& ckpt)
{
    ByteWriter w;
    w.text(kCkptMagic);
    w.u8(kCkptVersion);
    write_param_table(w, ckpt.params);
    write_pmf_table(w, ckpt.table);
    ordered_json meta;
    meta["arch"] = ordered_json::parse(ckpt.arch.to_json());
    meta["epoch"] = ckpt.epoch;
    meta["val_rate_bits"] = ckpt.val_rate_bits;
    meta["val_distortion"] = ckpt.val_distortion;
    meta["val_loss"] = ckpt.val_loss;
    meta["config_hash"] = ckpt.config_hash;
    meta["config"] = ordered_json::parse(ckpt.config.to_json());
    std::string text = meta.dump();
    w.u32(static_cast<std::uint32_t>(text.size()));
    w.text(text);
    return std::move(w).take();
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes)
{
    ByteReader r(bytes, "checkpoint");
    r.expect_magic(kCkptMagic);
    auto version = r.u8();
    if (version != kCkptVersion) {
        throw FormatError("checkpoint: unsupported version " + std::to_string(version));
    }
    Checkpoint c;
    c.params = read_param_table(r);
    c.table = read_pmf_table(r);
    std::string text = r.text(r.u32());
    r.expect_end();
    try {
        auto meta = nlohmann::json::parse(text);
        c.arch = CodecArch::from_json(meta.at("arch").dump());
        c.epoch = meta.at("epoch").get<std::size_t>();
        c.val_rate_bits = meta.at("val_rate_bits").get<double>();
        c.val_distortion = meta.at("val_distortion").get<double>();
        c.val_loss = meta.at("val_loss").get<double>();
        c.config_hash = meta.at("config_hash").get<std::string>();
        c.config = TrainConfig::from_json(meta.at("config").dump());
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("checkpoint metadata: ") + e.what());
    }
    if (c.arch.layer_id != c.config.layer_id) {
        throw FormatError("checkpoint: architecture and config disagree on the layer");
    }
    // surfaces missing or misshapen tensors now rather than at first use
    c.codec();
    return c;
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file(path)); }

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt)
{
    write_file(path, encode_checkpoint(ckpt));
}

std::vector<std::vector<double>> condition_features(const LayerCodec& ocl,
                                                    std::span<const BrainSignal* const> signals)
{
    if (ocl.layer_id() != 1) {
        throw std::invalid_argument("conditions come from a layer-1 codec");
    }
    std::vector<std::vector<double>> out;
    out.reserve(signals.size());
    for (std::size_t first = 0; first < signals.size(); first += kEvalBatch) {
        std::size_t n = std::min(kEvalBatch, signals.size() - first);
        Tensor y = ocl.encode_batch(signal_batch(signals.subspan(first, n)));
        std::size_t w = y.row_size();
        Tensor yhat(y.shape);
        for (std::size_t b = 0; b < n; ++b) {
            auto code = ocl.quantize_latent(std::span<const double>(y.data() + b * w, w));
            std::copy(code.symbols.begin(), code.symbols.end(), yhat.data() + b * w);
        }
        Tensor z = ocl.decode_batch(yhat, nullptr);
        std::size_t zw = z.row_size();
        for (std::size_t b = 0; b < n; ++b) {
            out.emplace_back(z.data() + b * zw, z.data() + (b + 1) * zw);
        }
    }
    return out;
}

ValidationResult validate(const LayerCodec& codec, std::span<const BrainSignal* const> signals,
                          std::span<const std::vector<double>> targets, double lambda, double alpha,
                          std::span<const std::vector<double>> conditions)
{
    if (signals.empty()) {
        throw std::invalid_argument("validation set is empty");
    }
    if (targets.size() != signals.size()) {
        throw std::invalid_argument("validation targets are not aligned with the signals");
    }
    if (codec.conditioned() != !conditions.empty()) {
        throw std::invalid_argument(codec.conditioned() ? "layer 2 validation needs conditions"
                                                        : "conditions given for an unconditioned layer");
    }
    if (codec.conditioned() && conditions.size() != signals.size()) {
        throw std::invalid_argument("conditions are not aligned with the signals");
    }
    double rate = 0.0, dist = 0.0;
    for (std::size_t first = 0; first < signals.size(); first += kEvalBatch) {
        std::size_t n = std::min(kEvalBatch, signals.size() - first);
        Tensor y = codec.encode_batch(signal_batch(signals.subspan(first, n)));
        std::size_t w = y.row_size();
        Tensor yhat(y.shape);
        for (std::size_t b = 0; b < n; ++b) {
            auto code = codec.quantize_latent(std::span<const double>(y.data() + b * w, w));
            std::copy(code.symbols.begin(), code.symbols.end(), yhat.data() + b * w);
            if (codec.has_table()) {
                rate += table_rate_bits(code.symbols, codec.table());
            }
        }
        if (!codec.has_table()) {
            rate += codec.density().rate_bits(yhat);
        }
        Tensor cond;
        if (codec.conditioned()) {
            cond = rows_tensor(conditions, first, n);
        }
        Tensor z = codec.decode_batch(yhat, codec.conditioned() ? &cond : nullptr);
        std::size_t zw = z.row_size();
        for (std::size_t b = 0; b < n; ++b) {
            std::span<double> zhat(z.data() + b * zw, zw);
            if (codec.layer_id() == 3) {
                for (double& v : zhat) {
                    v = std::clamp(v, 0.0, 1.0);
                }
            }
            dist += distortion(codec.layer_id(), targets[first + b], zhat, alpha);
        }
    }
    auto count = static_cast<double>(signals.size());
    ValidationResult v;
    v.rate_bits = rate / count;
    v.distortion = dist / count;
    v.loss = rd_loss(v.rate_bits, v.distortion, lambda);
    return v;
}

std::string format_epoch_log(const EpochLog& e)
{
    char buf[320];
    std::snprintf(buf, sizeof buf,
                  "epoch=%zu train_rate_bits=%.6g train_distortion=%.6g train_loss=%.6g val_rate_bits=%.6g "
                  "val_distortion=%.6g val_loss=%.6g clipped_steps=%zu best=%d",
                  e.epoch, e.train_rate_bits, e.train_distortion, e.train_loss, e.val.rate_bits, e.val.distortion,
                  e.val.loss, e.clipped_steps, e.best ? 1 : 0);
    return buf;
}

TrainInputs split_inputs(const Dataset& dataset, const std::vector<std::vector<double>>& targets)
{
    if (targets.size() != dataset.records.size()) {
        throw std::invalid_argument("targets are not aligned with the records");
    }
    TrainInputs in;
    for (auto i : dataset.manifest.records_in(SplitTag::train)) {
        in.train.push_back(&dataset.records.at(i));
        in.train_targets.push_back(targets[i]);
    }
    for (auto i : dataset.manifest.records_in(SplitTag::val)) {
        in.val.push_back(&dataset.records.at(i));
        in.val_targets.push_back(targets[i]);
    }
    if (in.train.empty() || in.val.empty()) {
        throw std::invalid_argument("training needs non-empty train and validation splits");
    }
    return in;
}

Checkpoint train_layer(const TrainConfig& config, const TrainInputs& inputs, const Checkpoint* condition,
                       const std::function<void(const EpochLog&)>& on_epoch)
{
    config.validate();
    const int layer = config.layer_id;
    if (inputs.train.empty() || inputs.val.empty()) {
        throw std::invalid_argument("training needs non-empty train and validation sets");
    }
    if (inputs.train_targets.size() != inputs.train.size() || inputs.val_targets.size() != inputs.val.size()) {
        throw std::invalid_argument("targets are not aligned with the records");
    }
    std::size_t target_width = uniform_width(inputs.train_targets, "train targets");
    if (uniform_width(inputs.val_targets, "validation targets") != target_width) {
        throw ShapeError("train and validation targets differ in width");
    }
    if (layer == 2 && condition == nullptr) {
        throw std::invalid_argument("layer 2 training requires the layer-1 checkpoint");
    }
    if (layer != 2 && condition != nullptr) {
        throw std::invalid_argument("only layer 2 takes a condition checkpoint");
    }
    if (condition != nullptr && condition->arch.layer_id != 1) {
        throw std::invalid_argument("the condition checkpoint must be a layer-1 checkpoint");
    }

    const std::size_t channels = inputs.train.front()->channels;
    const std::size_t samples = inputs.train.front()->samples;
    CodecArch arch = make_arch(config, channels, samples, target_width,
                               condition != nullptr ? condition->arch.output_width() : 0);
    LayerCodec codec(arch, config.seed);

    std::vector<std::vector<double>> train_conds, val_conds;
    if (condition != nullptr) {
        LayerCodec ocl = condition->codec();
        train_conds = condition_features(ocl, inputs.train);
        val_conds = condition_features(ocl, inputs.val);
    }

    Rng root(config.seed ^ 0x7a1e7a1eULL);
    Rng order_rng = root.fork();
    Rng noise_rng = root.fork();
    Rng dropout_rng = root.fork();

    OptimizerState opt;
    opt.lr = config.lr;
    opt.beta1 = config.beta1;
    opt.beta2 = config.beta2;
    auto refs = codec.parameter_refs();

    const std::size_t n_train = inputs.train.size();
    const std::size_t latent = arch.latent_width();
    const std::string config_hash = config.hash();
    const auto lambda_over = [&](std::size_t b) { return config.lambda / static_cast<double>(b); };

    Checkpoint best;
    double best_loss = std::numeric_limits<double>::infinity();
    std::vector<std::size_t> order(n_train);

    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        shuffle(order, order_rng);
        std::vector<std::vector<std::int32_t>> symbols(latent);
        for (auto& s : symbols) {
            s.reserve(n_train);
        }
        double sum_rate = 0.0, sum_dist = 0.0;
        std::size_t clipped = 0;

        for (std::size_t first = 0; first < n_train; first += config.batch_size) {
            std::size_t n = std::min(config.batch_size, n_train - first);
            std::vector<const BrainSignal*> batch(n);
            std::vector<std::vector<double>> batch_targets(n), batch_conds;
            for (std::size_t b = 0; b < n; ++b) {
                batch[b] = inputs.train[order[first + b]];
                batch_targets[b] = inputs.train_targets[order[first + b]];
                if (layer == 2) {
                    batch_conds.push_back(train_conds[order[first + b]]);
                }
            }

            auto enc_g = codec.encoder().zero_grads();
            auto dec_g = codec.decoder().zero_grads();
            auto ctx_g = codec.context().zero_grads();
            auto den_g = codec.density().zero_grads();

            Tape enc_tape;
            Tensor y = codec.encoder().forward(signal_batch(batch), Mode::train, &dropout_rng, &enc_tape);
            for (std::size_t b = 0; b < n; ++b) {
                auto q = quantize(std::span<const double>(y.data() + b * latent, latent));
                for (std::size_t c = 0; c < latent; ++c) {
                    symbols[c].push_back(q[c]);
                }
            }
            Tensor y_noisy(y.shape, add_uniform_noise(y.values, noise_rng));

            Tensor y_grad(y.shape);
            double rate = codec.density().rate_bits(y_noisy, &den_g, &y_grad, 1.0 / static_cast<double>(n));

            Tape ctx_tape, dec_tape;
            Tensor ctx;
            if (layer == 2) {
                ctx = codec.context().forward(rows_tensor(batch_conds, 0, n), Mode::train, &dropout_rng, &ctx_tape);
            }
            Tensor z = codec.decoder().forward(y_noisy, Mode::train, &dropout_rng, &dec_tape,
                                               layer == 2 ? &ctx : nullptr);
            std::size_t zw = z.row_size();
            Tensor z_grad(z.shape);
            double dist = 0.0;
            std::vector<double> g;
            for (std::size_t b = 0; b < n; ++b) {
                dist += distortion(layer, batch_targets[b], std::span<const double>(z.data() + b * zw, zw),
                                   config.alpha, &g);
                for (std::size_t i = 0; i < zw; ++i) {
                    z_grad[b * zw + i] = lambda_over(n) * g[i];
                }
            }

            Tensor ctx_grad;
            Tensor yn_grad = codec.decoder().backward(dec_tape, z_grad, dec_g, layer == 2 ? &ctx_grad : nullptr);
            if (layer == 2) {
                codec.context().backward(ctx_tape, ctx_grad, ctx_g);
            }
            for (std::size_t i = 0; i < y_grad.size(); ++i) {
                y_grad[i] += yn_grad[i];
            }
            codec.encoder().backward(enc_tape, y_grad, enc_g);

            std::vector<Tensor> grads;
            grads.reserve(refs.size());
            for (auto* part : {&enc_g, &dec_g, &ctx_g, &den_g}) {
                for (auto& t : *part) {
                    grads.push_back(std::move(t));
                }
            }
            if (clip_global_norm(grads, config.clip_norm) > config.clip_norm) {
                ++clipped;
            }
            adam_step(refs, grads, opt);

            sum_rate += rate;
            sum_dist += dist;
        }

        std::vector<std::int32_t> medians(latent);
        for (std::size_t c = 0; c < latent; ++c) {
            medians[c] = lower_median(symbols[c]);
        }

        Checkpoint cand;
        cand.arch = arch;
        cand.params = codec.parameters();
        round_to_f32(cand.params);
        LayerCodec snapshot(arch, 0);
        snapshot.load_parameters(cand.params);
        snapshot.set_medians(medians);
        cand.table = snapshot.table();

        EpochLog log;
        log.epoch = epoch;
        log.train_rate_bits = sum_rate / static_cast<double>(n_train);
        log.train_distortion = sum_dist / static_cast<double>(n_train);
        log.train_loss = rd_loss(log.train_rate_bits, log.train_distortion, config.lambda);
        log.val = validate(snapshot, inputs.val, inputs.val_targets, config.lambda, config.alpha, val_conds);
        log.clipped_steps = clipped;
        if (log.val.loss < best_loss) {
            best_loss = log.val.loss;
            log.best = true;
            cand.epoch = epoch;
            cand.val_rate_bits = log.val.rate_bits;
            cand.val_distortion = log.val.distortion;
            cand.val_loss = log.val.loss;
            cand.config_hash = config_hash;
            cand.config = config;
            best = std::move(cand);
        }
        if (on_epoch) {
            on_epoch(log);
        }
    }
    if (!std::isfinite(best_loss)) {
        throw NumericError("training never produced a finite validation loss");
    }
    return best;
}

} // namespace semcodec
