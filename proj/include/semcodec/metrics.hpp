#pragma once

// Task metrics: top-1 accuracy and confusion matrix, BLEU-n, ROUGE-1, SSIM,
// label/caption prompt fusion, rate-accuracy sweeps and the JSON report.

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "semcodec/codec.hpp"

namespace semcodec {

// -- classification ----------------------------------------------------------

double top1_accuracy(std::span<const std::uint32_t> predictions, std::span<const std::uint32_t> truths);

struct ConfusionMatrix {
    std::vector<std::uint32_t> classes;            // sorted class ids
    std::vector<std::vector<std::uint64_t>> counts; // [true][predicted]

    std::uint64_t total() const;
    std::uint64_t trace() const;
    double accuracy() const;
};

// Classes are the sorted union of truths and predictions unless given.
ConfusionMatrix confusion_matrix(std::span<const std::uint32_t> predictions, std::span<const std::uint32_t> truths,
                                 std::span<const std::uint32_t> classes = {});

// -- text ------------------------------------------------------------------

// Lowercases (ASCII, Latin-1, Latin Extended-A, Greek, Cyrillic) and splits
// on runs of non-alphanumeric code points. Invalid UTF-8 is a FormatError.
std::vector<std::string> tokenize(std::string_view text);

// Single-reference, unsmoothed BLEU with clipped counts and brevity penalty
// exp(1 - r/c) for c <= r. Empty candidate gives 0.
double bleu_n(std::span<const std::string> candidate, std::span<const std::string> reference, int n);

struct RougeScore {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

RougeScore rouge1(std::span<const std::string> candidate, std::span<const std::string> reference);

// The 30 words ignored by fuse_prompt.
std::span<const std::string_view> fusion_stopwords();

// Caption when it shares a non-stopword token with the label, else the
// label. If one text has no tokens the other is returned; both empty throws.
std::string fuse_prompt(std::string_view label_text, std::string_view caption_text);

// -- images ----------------------------------------------------------------

inline constexpr std::size_t kSsimWindow = 8;

// Mean SSIM over all 8x8 windows (stride 1, no padding) of every plane,
// population statistics, K1 = 0.01, K2 = 0.03, L = 1. Images are
// height x width x planes, interleaved, values in [0, 1].
double ssim(std::span<const double> a, std::span<const double> b, std::size_t height, std::size_t width,
            std::size_t planes);
double ssim(const Thumbnail& a, const Thumbnail& b);

// -- caption pairs ----------------------------------------------------------

// JSON list of {"record_index": n, "candidate": "...", "reference": "..."}.
struct CaptionPair {
    std::uint32_t record_index = 0;
    std::string candidate;
    std::string reference;
};

std::vector<CaptionPair> caption_pairs_from_json(const std::string& text);
std::string caption_pairs_to_json(std::span<const CaptionPair> pairs);
std::vector<CaptionPair> load_caption_pairs(const std::filesystem::path& path);

struct CaptionScores {
    std::array<double, 4> bleu{}; // BLEU-1..4, means over pairs
    RougeScore rouge;              // means over pairs
    std::size_t count = 0;
};

CaptionScores score_captions(std::span<const CaptionPair> pairs);

// -- sweeps and reports ----------------------------------------------------

struct SweepPoint {
    double lambda = 0.0;
    double bps = 0.0;
    double accuracy = 0.0;
};

// Runs `train_and_eval(lambda) -> (bps, accuracy)` for each lambda in order
// and returns the points sorted by bps (stable). Needs at least two lambdas.
std::vector<SweepPoint> rate_accuracy_sweep(std::span<const double> lambdas,
                                            const std::function<std::pair<double, double>(double)>& train_and_eval);

std::string sweep_to_json(std::span<const SweepPoint> points);

struct SubjectBreakdown {
    std::size_t count = 0;
    std::size_t correct = 0;
    double bps_sum = 0.0; // summed over the subject's records
};

struct MetricReport {
    std::size_t records = 0;
    std::map<int, double> bps_per_layer; // mean over records, headers excluded
    double bps_total = 0.0;
    std::optional<double> top1;
    std::optional<ConfusionMatrix> confusion;
    std::optional<CaptionScores> captions;
    std::optional<double> mean_ssim;
    std::map<std::uint32_t, SubjectBreakdown> per_subject;

    // Checks the range invariants; throws std::logic_error on violation.
    void check() const;
    std::string to_json() const;
};

} // namespace semcodec
