#pragma once

// Brain-signal datasets: the EEGD record file, the JSON manifest, bandpass
// preprocessing, deterministic synthetic data, and stratified splitting.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "semcodec/byte_io.hpp"

namespace semcodec {

struct BrainSignal {
    std::size_t channels = 0;
    std::size_t samples = 0;
    std::vector<double> data; // channel-major, channels * samples
    std::uint32_t class_id = 0;
    std::uint32_t subject_id = 0;
    std::uint32_t sample_rate_hz = 1000;

    double at(std::size_t ch, std::size_t t) const { return data[ch * samples + t]; }
    double& at(std::size_t ch, std::size_t t) { return data[ch * samples + t]; }
    std::size_t size() const { return data.size(); }

    // Throws ShapeError/NumericError when the invariants do not hold.
    void validate() const;
};

enum class SplitTag { train, val, test };

const char* to_string(SplitTag tag);
SplitTag parse_split_tag(const std::string& s);

struct DatasetManifest {
    std::map<std::uint32_t, std::string> labels;   // class_id -> label text
    std::map<std::uint32_t, std::string> captions; // record index -> caption text
    std::map<std::uint32_t, SplitTag> split;       // record index -> split

    std::vector<std::size_t> records_in(SplitTag tag) const;
};

struct Dataset {
    std::vector<BrainSignal> records;
    DatasetManifest manifest;
};

// -- file formats ----------------------------------------------------------

Bytes encode_dataset(const std::vector<BrainSignal>& records);
std::vector<BrainSignal> decode_dataset(std::span<const std::uint8_t> bytes);

void save_dataset(const std::filesystem::path& path, const std::vector<BrainSignal>& records);
std::string manifest_to_json(const DatasetManifest& manifest);
DatasetManifest manifest_from_json(const std::string& text);
void save_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);

// Loads records in file order and checks that every class_id has a label.
// The manifest split, when non-empty, must cover exactly the loaded records.
Dataset load_dataset(const std::filesystem::path& path, const std::filesystem::path& manifest_path);
void check_manifest(const std::vector<BrainSignal>& records, const DatasetManifest& manifest);

// -- preprocessing ---------------------------------------------------------

struct PreprocessConfig {
    double band_lo_hz = 55.0;
    double band_hi_hz = 95.0;
    double win_start_ms = 20.0;
    double win_end_ms = 460.0;
};

inline constexpr std::size_t kBandpassTaps = 129;

// Windowed-sinc bandpass, Hamming window, unit-sum-free (raw) taps.
std::vector<double> design_bandpass(double band_lo_hz, double band_hi_hz, double sample_rate_hz,
                                    std::size_t taps = kBandpassTaps);

// Zero-phase (centred) FIR with reflection padding at both edges.
std::vector<double> filter_reflect(std::span<const double> signal, std::span<const double> taps);

BrainSignal preprocess(const BrainSignal& raw, double band_lo_hz, double band_hi_hz, double win_start_ms,
                       double win_end_ms);
inline BrainSignal preprocess(const BrainSignal& raw, const PreprocessConfig& cfg)
{
    return preprocess(raw, cfg.band_lo_hz, cfg.band_hi_hz, cfg.win_start_ms, cfg.win_end_ms);
}

// -- synthetic data --------------------------------------------------------

struct SyntheticSpec {
    std::size_t n_classes = 8;
    std::size_t records_per_class = 50;
    std::size_t channels = 128;
    std::size_t samples = 500;
    std::uint32_t sample_rate_hz = 1000;
    double noise_sigma = 1.0;
    std::uint64_t seed = 0;
    std::size_t n_subjects = 6;

    void validate() const;
};

// Records are ordered class-major. Manifest gets labels "class_<k>",
// one template caption per record and a default 0.8/0.1/0.1 split.
Dataset synthesize_dataset(const SyntheticSpec& spec);

// -- splitting -------------------------------------------------------------

struct SplitRatios {
    double train = 0.8;
    double val = 0.1;
    double test = 0.1;
};

// Per-class stratified split over the given record class ids.
DatasetManifest split_dataset(const DatasetManifest& manifest, const std::vector<std::uint32_t>& record_classes,
                              SplitRatios ratios, std::uint64_t seed);

std::vector<std::uint32_t> class_ids_of(const std::vector<BrainSignal>& records);

} // namespace semcodec
