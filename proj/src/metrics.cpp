#include "semcodec/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <json.hpp>

namespace semcodec {

// ---------------------------------------------------------------------------
// classification

double top1_accuracy(std::span<const std::uint32_t> predictions, std::span<const std::uint32_t> truths)
{
    if (predictions.size() != truths.size()) {
        throw std::invalid_argument("top-1: prediction and truth counts differ");
    }
    if (truths.empty()) {
        throw std::invalid_argument("top-1: no records");
    }
    std::size_t hits = 0;
    for (std::size_t i = 0; i < truths.size(); ++i) {
        hits += predictions[i] == truths[i] ? 1 : 0;
    }
    return static_cast<double>(hits) / static_cast<double>(truths.size());
}

std::uint64_t ConfusionMatrix::total() const
{
    std::uint64_t n = 0;
    for (const auto& row : counts) {
        for (auto c : row) {
            n += c;
        }
    }
    return n;
}

std::uint64_t ConfusionMatrix::trace() const
{
    std::uint64_t n = 0;
    for (std::size_t i = 0; i < counts.size(); ++i) {
        n += counts[i][i];
    }
    return n;
}

double ConfusionMatrix::accuracy() const
{
    auto n = total();
    if (n == 0) {
        throw std::logic_error("empty confusion matrix");
    }
    return static_cast<double>(trace()) / static_cast<double>(n);
}

ConfusionMatrix confusion_matrix(std::span<const std::uint32_t> predictions, std::span<const std::uint32_t> truths,
                                 std::span<const std::uint32_t> classes)
{
    if (predictions.size() != truths.size()) {
        throw std::invalid_argument("confusion: prediction and truth counts differ");
    }
    std::set<std::uint32_t> ids(classes.begin(), classes.end());
    if (classes.empty()) {
        ids.insert(truths.begin(), truths.end());
        ids.insert(predictions.begin(), predictions.end());
    }
    ConfusionMatrix m;
    m.classes.assign(ids.begin(), ids.end());
    m.counts.assign(m.classes.size(), std::vector<std::uint64_t>(m.classes.size(), 0));
    auto index = [&](std::uint32_t id) {
        auto it = std::lower_bound(m.classes.begin(), m.classes.end(), id);
        if (it == m.classes.end() || *it != id) {
            throw std::invalid_argument("confusion: class " + std::to_string(id) + " not in the class list");
        }
        return static_cast<std::size_t>(it - m.classes.begin());
    };
    for (std::size_t i = 0; i < truths.size(); ++i) {
        ++m.counts[index(truths[i])][index(predictions[i])];
    }
    return m;
}

// ---------------------------------------------------------------------------
// text

namespace {

std::vector<char32_t> decode_utf8(std::string_view s)
{
    std::vector<char32_t> out;
    std::size_t i = 0;
    auto cont = [&](std::size_t k) -> char32_t {
        if (i + k >= s.size()) {
            throw FormatError("invalid UTF-8: truncated sequence");
        }
        auto b = static_cast<unsigned char>(s[i + k]);
        if ((b & 0xC0) != 0x80) {
            throw FormatError("invalid UTF-8: bad continuation byte");
        }
        return b & 0x3F;
    };
    while (i < s.size()) {
        auto b = static_cast<unsigned char>(s[i]);
        char32_t cp = 0;
        std::size_t len = 0;
        if (b < 0x80) {
            cp = b;
            len = 1;
        } else if ((b & 0xE0) == 0xC0) {
            cp = (char32_t{b & 0x1Fu} << 6) | cont(1);
            len = 2;
            if (cp < 0x80) {
                throw FormatError("invalid UTF-8: overlong encoding");
            }
        } else if ((b & 0xF0) == 0xE0) {
            cp = (char32_t{b & 0x0Fu} << 12) | (cont(1) << 6) | cont(2);
            len = 3;
            if (cp < 0x800 || (cp >= 0xD800 && cp <= 0xDFFF)) {
                throw FormatError("invalid UTF-8: overlong encoding or surrogate");
            }
        } else if ((b & 0xF8) == 0xF0) {
            cp = (char32_t{b & 0x07u} << 18) | (cont(1) << 12) | (cont(2) << 6) | cont(3);
            len = 4;
            if (cp < 0x10000 || cp > 0x10FFFF) {
                throw FormatError("invalid UTF-8: code point out of range");
            }
        } else {
            throw FormatError("invalid UTF-8: bad lead byte");
        }
        out.push_back(cp);
        i += len;
    }
    return out;
}

void append_utf8(std::string& out, char32_t cp)
{
    if (cp < 0x80) {
        out.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
        out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else if (cp < 0x10000) {
        out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else {
        out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    }
}

char32_t to_lower(char32_t c)
{
    if (c >= U'A' && c <= U'Z') {
        return c + 32;
    }
    if (c < 0x80) {
        return c;
    }
    if (c >= 0xC0 && c <= 0xDE && c != 0xD7) {
        return c + 32;
    }
    if (c == 0x130) {
        return U'i';
    }
    if (c == 0x178) {
        return 0xFF;
    }
    if ((c >= 0x100 && c <= 0x137) || (c >= 0x14A && c <= 0x177)) {
        return c % 2 == 0 ? c + 1 : c;
    }
    if ((c >= 0x139 && c <= 0x148) || (c >= 0x179 && c <= 0x17E)) {
        return c % 2 == 1 ? c + 1 : c;
    }
    if (c >= 0x391 && c <= 0x3A9 && c != 0x3A2) {
        return c + 32;
    }
    if (c == 0x386) {
        return 0x3AC;
    }
    if (c >= 0x388 && c <= 0x38A) {
        return c + 37;
    }
    if (c == 0x38C) {
        return 0x3CC;
    }
    if (c == 0x38E || c == 0x38F) {
        return c + 63;
    }
    if (c >= 0x410 && c <= 0x42F) {
        return c + 32;
    }
    if (c >= 0x400 && c <= 0x40F) {
        return c + 80;
    }
    return c;
}

bool is_word_char(char32_t c)
{
    if (c < 0x80) {
        return (c >= U'0' && c <= U'9') || (c >= U'a' && c <= U'z') || (c >= U'A' && c <= U'Z');
    }
    if (c <= 0xBF) {
        return c == 0xAA || c == 0xB5 || c == 0xBA;
    }
    if (c == 0xD7 || c == 0xF7 || c == 0x37E || c == 0x387) {
        return false;
    }
    // general punctuation, CJK symbols and punctuation, fullwidth ASCII punctuation
    if ((c >= 0x2000 && c <= 0x206F) || (c >= 0x3000 && c <= 0x303F) || (c >= 0xFF00 && c <= 0xFF0F)) {
        return false;
    }
    return true;
}

template <typename Seq>
std::map<std::vector<std::string>, std::size_t> ngram_counts(const Seq& tokens, std::size_t k)
{
    std::map<std::vector<std::string>, std::size_t> counts;
    for (std::size_t i = 0; i + k <= tokens.size(); ++i) {
        ++counts[std::vector<std::string>(tokens.begin() + i, tokens.begin() + i + k)];
    }
    return counts;
}

constexpr std::string_view kStopwords[] = {
    "a",    "an",   "the",  "of",   "in",    "on",   "at",   "to",   "for",  "with",
    "by",   "from", "and",  "or",   "is",    "are",  "was",  "were", "be",   "it",
    "its",  "this", "that", "these", "those", "as",  "into", "over", "under", "near",
};

} // namespace

std::vector<std::string> tokenize(std::string_view text)
{
    std::vector<std::string> tokens;
    std::string cur;
    for (char32_t c : decode_utf8(text)) {
        if (is_word_char(c)) {
            append_utf8(cur, to_lower(c));
        } else if (!cur.empty()) {
            tokens.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) {
        tokens.push_back(std::move(cur));
    }
    return tokens;
}

double bleu_n(std::span<const std::string> candidate, std::span<const std::string> reference, int n)
{
    if (n < 1 || n > 4) {
        throw std::invalid_argument("BLEU order must be 1..4");
    }
    if (candidate.empty()) {
        return 0.0;
    }
    double log_sum = 0.0;
    for (int k = 1; k <= n; ++k) {
        auto cand = ngram_counts(candidate, static_cast<std::size_t>(k));
        auto ref = ngram_counts(reference, static_cast<std::size_t>(k));
        std::size_t total = 0, matched = 0;
        for (const auto& [gram, count] : cand) {
            total += count;
            auto it = ref.find(gram);
            if (it != ref.end()) {
                matched += std::min(count, it->second);
            }
        }
        if (matched == 0) {
            return 0.0;
        }
        log_sum += std::log(static_cast<double>(matched) / static_cast<double>(total));
    }
    auto c = static_cast<double>(candidate.size());
    auto r = static_cast<double>(reference.size());
    double bp = c > r ? 1.0 : std::exp(1.0 - r / c);
    return bp * std::exp(log_sum / n);
}

RougeScore rouge1(std::span<const std::string> candidate, std::span<const std::string> reference)
{
    RougeScore s;
    if (candidate.empty() || reference.empty()) {
        return s;
    }
    auto cand = ngram_counts(candidate, 1);
    auto ref = ngram_counts(reference, 1);
    std::size_t overlap = 0;
    for (const auto& [gram, count] : cand) {
        auto it = ref.find(gram);
        if (it != ref.end()) {
            overlap += std::min(count, it->second);
        }
    }
    s.precision = static_cast<double>(overlap) / static_cast<double>(candidate.size());
    s.recall = static_cast<double>(overlap) / static_cast<double>(reference.size());
    s.f1 = s.precision + s.recall > 0.0 ? 2.0 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
    return s;
}

std::span<const std::string_view> fusion_stopwords() { return kStopwords; }

std::string fuse_prompt(std::string_view label_text, std::string_view caption_text)
{
    auto label = tokenize(label_text);
    auto caption = tokenize(caption_text);
    if (label.empty() && caption.empty()) {
        throw std::invalid_argument("fuse_prompt: both texts are empty");
    }
    if (label.empty()) {
        return std::string(caption_text);
    }
    if (caption.empty()) {
        return std::string(label_text);
    }
    auto is_stop = [](const std::string& t) {
        return std::find(std::begin(kStopwords), std::end(kStopwords), t) != std::end(kStopwords);
    };
    std::set<std::string> label_words;
    for (auto& t : label) {
        if (!is_stop(t)) {
            label_words.insert(t);
        }
    }
    for (const auto& t : caption) {
        if (label_words.contains(t)) {
            return std::string(caption_text);
        }
    }
    return std::string(label_text);
}

// ---------------------------------------------------------------------------
// SSIM

double ssim(std::span<const double> a, std::span<const double> b, std::size_t height, std::size_t width,
            std::size_t planes)
{
    if (a.size() != b.size() || a.size() != height * width * planes) {
        throw ShapeError("ssim: images must both be " + std::to_string(height) + "x" + std::to_string(width) + "x" +
                         std::to_string(planes));
    }
    if (height < kSsimWindow || width < kSsimWindow || planes == 0) {
        throw ShapeError("ssim: images must be at least 8x8");
    }
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (!(a[i] >= 0.0 && a[i] <= 1.0 && b[i] >= 0.0 && b[i] <= 1.0)) {
            throw std::invalid_argument("ssim: pixel values must lie in [0, 1]");
        }
    }
    constexpr double c1 = (0.01 * 1.0) * (0.01 * 1.0);
    constexpr double c2 = (0.03 * 1.0) * (0.03 * 1.0);
    constexpr double n = kSsimWindow * kSsimWindow;
    double sum = 0.0;
    std::size_t windows = 0;
    for (std::size_t p = 0; p < planes; ++p) {
        for (std::size_t y0 = 0; y0 + kSsimWindow <= height; ++y0) {
            for (std::size_t x0 = 0; x0 + kSsimWindow <= width; ++x0) {
                double sa = 0.0, sb = 0.0;
                for (std::size_t y = y0; y < y0 + kSsimWindow; ++y) {
                    for (std::size_t x = x0; x < x0 + kSsimWindow; ++x) {
                        std::size_t i = (y * width + x) * planes + p;
                        sa += a[i];
                        sb += b[i];
                    }
                }
                double ma = sa / n, mb = sb / n;
                double vaa = 0.0, vbb = 0.0, vab = 0.0;
                for (std::size_t y = y0; y < y0 + kSsimWindow; ++y) {
                    for (std::size_t x = x0; x < x0 + kSsimWindow; ++x) {
                        std::size_t i = (y * width + x) * planes + p;
                        double da = a[i] - ma, db = b[i] - mb;
                        vaa += da * da;
                        vbb += db * db;
                        vab += da * db;
                    }
                }
                vaa /= n;
                vbb /= n;
                vab /= n;
                sum += ((2.0 * ma * mb + c1) * (2.0 * vab + c2)) / ((ma * ma + mb * mb + c1) * (vaa + vbb + c2));
                ++windows;
            }
        }
    }
    return sum / static_cast<double>(windows);
}

double ssim(const Thumbnail& a, const Thumbnail& b)
{
    return ssim(a.pixels, b.pixels, kThumbSide, kThumbSide, 3);
}

// ---------------------------------------------------------------------------
// caption pairs

std::vector<CaptionPair> caption_pairs_from_json(const std::string& text)
{
    try {
        auto j = nlohmann::json::parse(text);
        if (!j.is_array()) {
            throw FormatError("caption pairs: expected a JSON list");
        }
        std::vector<CaptionPair> pairs;
        std::set<std::uint32_t> seen;
        for (const auto& e : j) {
            CaptionPair p;
            p.record_index = e.at("record_index").get<std::uint32_t>();
            p.candidate = e.at("candidate").get<std::string>();
            p.reference = e.at("reference").get<std::string>();
            if (!seen.insert(p.record_index).second) {
                throw FormatError("caption pairs: duplicate record_index " + std::to_string(p.record_index));
            }
            pairs.push_back(std::move(p));
        }
        return pairs;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("caption pairs: ") + e.what());
    }
}

std::string caption_pairs_to_json(std::span<const CaptionPair> pairs)
{
    nlohmann::ordered_json j = nlohmann::ordered_json::array();
    for (const auto& p : pairs) {
        j.push_back({{"record_index", p.record_index}, {"candidate", p.candidate}, {"reference", p.reference}});
    }
    return j.dump(2);
}

std::vector<CaptionPair> load_caption_pairs(const std::filesystem::path& path)
{
    return caption_pairs_from_json(read_text_file(path));
}

CaptionScores score_captions(std::span<const CaptionPair> pairs)
{
    if (pairs.empty()) {
        throw std::invalid_argument("no caption pairs to score");
    }
    CaptionScores s;
    for (const auto& p : pairs) {
        auto cand = tokenize(p.candidate);
        auto ref = tokenize(p.reference);
        for (int k = 1; k <= 4; ++k) {
            s.bleu[k - 1] += bleu_n(cand, ref, k);
        }
        auto r = rouge1(cand, ref);
        s.rouge.precision += r.precision;
        s.rouge.recall += r.recall;
        s.rouge.f1 += r.f1;
    }
    auto n = static_cast<double>(pairs.size());
    for (double& b : s.bleu) {
        b /= n;
    }
    s.rouge.precision /= n;
    s.rouge.recall /= n;
    s.rouge.f1 /= n;
    s.count = pairs.size();
    return s;
}

// ---------------------------------------------------------------------------
// sweeps and reports

std::vector<SweepPoint> rate_accuracy_sweep(std::span<const double> lambdas,
                                            const std::function<std::pair<double, double>(double)>& train_and_eval)
{
    if (lambdas.size() < 2) {
        throw std::invalid_argument("a sweep needs at least two lambda values");
    }
    for (double l : lambdas) {
        if (!(l > 0.0) || !std::isfinite(l)) {
            throw std::invalid_argument("sweep lambdas must be positive");
        }
    }
    std::vector<SweepPoint> points;
    for (double l : lambdas) {
        auto [bps, acc] = train_and_eval(l);
        points.push_back({l, bps, acc});
    }
    std::stable_sort(points.begin(), points.end(), [](const auto& a, const auto& b) { return a.bps < b.bps; });
    return points;
}

std::string sweep_to_json(std::span<const SweepPoint> points)
{
    nlohmann::ordered_json j = nlohmann::ordered_json::array();
    for (const auto& p : points) {
        j.push_back({{"lambda", p.lambda}, {"bps", p.bps}, {"accuracy", p.accuracy}});
    }
    return j.dump(2);
}

void MetricReport::check() const
{
    auto unit = [](double v) { return v >= 0.0 && v <= 1.0; };
    if (top1 && !unit(*top1)) {
        throw std::logic_error("top-1 accuracy outside [0, 1]");
    }
    double layer_sum = 0.0;
    for (const auto& [layer, v] : bps_per_layer) {
        if (!(v >= 0.0)) {
            throw std::logic_error("negative bps for layer " + std::to_string(layer));
        }
        layer_sum += v;
    }
    if (std::abs(layer_sum - bps_total) > 1e-9 * std::max(1.0, bps_total)) {
        throw std::logic_error("total bps is not the sum of the per-layer bps");
    }
    if (confusion && top1 && confusion->total() > 0 && confusion->accuracy() != *top1) {
        throw std::logic_error("confusion trace/total disagrees with top-1 accuracy");
    }
    if (captions) {
        for (double b : captions->bleu) {
            if (!unit(b)) {
                throw std::logic_error("BLEU outside [0, 1]");
            }
        }
        if (!unit(captions->rouge.precision) || !unit(captions->rouge.recall) || !unit(captions->rouge.f1)) {
            throw std::logic_error("ROUGE outside [0, 1]");
        }
    }
    if (mean_ssim && !(*mean_ssim >= -1.0 && *mean_ssim <= 1.0)) {
        throw std::logic_error("SSIM outside [-1, 1]");
    }
}

std::string MetricReport::to_json() const
{
    check();
    nlohmann::ordered_json j;
    j["records"] = records;
    nlohmann::ordered_json bps;
    for (const auto& [layer, v] : bps_per_layer) {
        bps["layer" + std::to_string(layer)] = v;
    }
    bps["total"] = bps_total;
    j["bps"] = bps;
    if (top1) {
        j["top1"] = *top1;
    }
    if (confusion) {
        j["confusion"] = {{"classes", confusion->classes}, {"counts", confusion->counts}};
    }
    if (captions) {
        j["captions"] = {{"count", captions->count},
                         {"bleu1", captions->bleu[0]},
                         {"bleu2", captions->bleu[1]},
                         {"bleu3", captions->bleu[2]},
                         {"bleu4", captions->bleu[3]},
                         {"rouge1_p", captions->rouge.precision},
                         {"rouge1_r", captions->rouge.recall},
                         {"rouge1_f", captions->rouge.f1}};
    }
    if (mean_ssim) {
        j["mean_ssim"] = *mean_ssim;
    }
    nlohmann::ordered_json subjects = nlohmann::ordered_json::object();
    for (const auto& [id, s] : per_subject) {
        nlohmann::ordered_json e;
        e["count"] = s.count;
        if (top1) {
            e["top1"] = s.count > 0 ? static_cast<double>(s.correct) / static_cast<double>(s.count) : 0.0;
        }
        e["bps"] = s.count > 0 ? s.bps_sum / static_cast<double>(s.count) : 0.0;
        subjects[std::to_string(id)] = e;
    }
    j["per_subject"] = subjects;
    return j.dump(2);
}

} // namespace semcodec
