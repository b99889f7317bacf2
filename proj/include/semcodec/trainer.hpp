#pragma once

// Rate-distortion training of one layer codec, epoch-wise validation with
// best-checkpoint selection, and the checkpoint file.
//
// Checkpoint file ("EIDW"): magic, version u8 = 1, parameter table (see
// param_io.hpp), PMF table (see entropy.hpp), then a UTF-8 JSON metadata
// block prefixed by its u32 LE byte length:
//   {"arch": {...}, "epoch": n, "val_rate_bits": r, "val_distortion": d,
//    "val_loss": l, "config_hash": "<16 hex>", "config": {...}}

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "semcodec/codec.hpp"
#include "semcodec/data_io.hpp"

namespace semcodec {

enum class TargetSource { label_db, caption_db, thumbnails };

const char* to_string(TargetSource s);
TargetSource parse_target_source(const std::string& s);
TargetSource default_target_source(int layer_id);

struct TrainConfig {
    int layer_id = 1;
    double lambda = 4.0e4;
    double alpha = 4.0;
    std::size_t epochs = 150;
    std::size_t batch_size = 16;
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.99;
    std::uint64_t seed = 0;
    TargetSource target = TargetSource::label_db;
    double clip_norm = 10.0;

    // "paper" (full widths) or "compact" (reduced widths, latent_width sets
    // the code length). Input shape and output widths follow the data.
    std::string preset = "paper";
    std::size_t latent_width = 0; // 0: preset default

    bool preprocess = true;
    PreprocessConfig preprocessing;

    // Per-layer defaults: lambda 4e4 / 40 / 4e4, alpha 4.
    static TrainConfig defaults(int layer_id);

    void validate() const;
    std::string to_json() const;
    // Missing keys take the per-layer defaults; unknown keys are an error.
    static TrainConfig from_json(const std::string& text);
    // FNV-1a 64 over the canonical JSON, as 16 hex digits.
    std::string hash() const;
};

CodecArch make_arch(const TrainConfig& cfg, std::size_t channels, std::size_t samples, std::size_t target_width,
                    std::size_t condition_width);

struct Checkpoint {
    CodecArch arch;
    std::vector<Parameter> params;
    PmfTable table;
    std::size_t epoch = 0;
    double val_rate_bits = 0.0;
    double val_distortion = 0.0;
    double val_loss = 0.0;
    std::string config_hash;
    TrainConfig config;

    // Codec with these parameters and table, ready to encode/decode.
    LayerCodec codec() const;
};

Bytes encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);
Checkpoint load_checkpoint(const std::filesystem::path& path);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);

struct ValidationResult {
    double rate_bits = 0.0;  // mean table cost per record
    double distortion = 0.0; // mean
    double loss = 0.0;       // rate_bits + lambda * distortion
};

// Layer-2 conditions: the decoded layer-1 feature of each signal.
std::vector<std::vector<double>> condition_features(const LayerCodec& ocl,
                                                    std::span<const BrainSignal* const> signals);

// Eval-mode metrics: hard rounding into the PMF support, no noise, no
// dropout. `conditions` is required exactly for layer 2.
ValidationResult validate(const LayerCodec& codec, std::span<const BrainSignal* const> signals,
                          std::span<const std::vector<double>> targets, double lambda, double alpha,
                          std::span<const std::vector<double>> conditions = {});

struct EpochLog {
    std::size_t epoch = 0;
    double train_rate_bits = 0.0;
    double train_distortion = 0.0;
    double train_loss = 0.0;
    ValidationResult val;
    std::size_t clipped_steps = 0;
    bool best = false;
};

std::string format_epoch_log(const EpochLog& e);

struct TrainInputs {
    std::vector<const BrainSignal*> train;
    std::vector<std::vector<double>> train_targets;
    std::vector<const BrainSignal*> val;
    std::vector<std::vector<double>> val_targets;
};

// Splits records and per-record targets by the manifest split. Throws
// std::invalid_argument on an empty train or validation set.
TrainInputs split_inputs(const Dataset& dataset, const std::vector<std::vector<double>>& targets);

// Trains one layer. Layer 2 needs `condition` (the trained layer-1
// checkpoint), which stays frozen. `on_epoch`, when set, sees every epoch.
Checkpoint train_layer(const TrainConfig& config, const TrainInputs& inputs, const Checkpoint* condition = nullptr,
                       const std::function<void(const EpochLog&)>& on_epoch = {});

} // namespace semcodec
