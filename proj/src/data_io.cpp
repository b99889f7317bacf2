#include "semcodec/data_io.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>

#include <json.hpp>

#include "semcodec/errors.hpp"
#include "semcodec/rng.hpp"

namespace semcodec {

namespace {

constexpr char kDatasetMagic[] = "EEGD";
constexpr std::uint8_t kDatasetVersion = 1;

double sinc(double x)
{
    if (x == 0.0) {
        return 1.0;
    }
    double px = std::numbers::pi * x;
    return std::sin(px) / px;
}

// Whole-sample symmetric reflection: index -1 maps to 1, n maps to n-2.
std::size_t reflect_index(std::ptrdiff_t i, std::size_t n)
{
    if (n == 1) {
        return 0;
    }
    auto period = static_cast<std::ptrdiff_t>(2 * (n - 1));
    i %= period;
    if (i < 0) {
        i += period;
    }
    if (i >= static_cast<std::ptrdiff_t>(n)) {
        i = period - i;
    }
    return static_cast<std::size_t>(i);
}

} // namespace

void BrainSignal::validate() const
{
    if (channels == 0 || samples == 0) {
        throw ShapeError("brain signal must have at least one channel and one sample");
    }
    if (data.size() != channels * samples) {
        throw ShapeError("brain signal payload size does not match channels x samples");
    }
    if (sample_rate_hz == 0) {
        throw std::invalid_argument("sample rate must be positive");
    }
    for (double v : data) {
        if (!std::isfinite(v)) {
            throw NumericError("brain signal contains a non-finite sample");
        }
    }
}

const char* to_string(SplitTag tag)
{
    switch (tag) {
    case SplitTag::train:
        return "train";
    case SplitTag::val:
        return "val";
    case SplitTag::test:
        return "test";
    }
    return "?";
}

SplitTag parse_split_tag(const std::string& s)
{
    if (s == "train") {
        return SplitTag::train;
    }
    if (s == "val") {
        return SplitTag::val;
    }
    if (s == "test") {
        return SplitTag::test;
    }
    throw FormatError("unknown split tag \"" + s + "\"");
}

std::vector<std::size_t> DatasetManifest::records_in(SplitTag tag) const
{
    std::vector<std::size_t> out;
    for (const auto& [idx, t] : split) {
        if (t == tag) {
            out.push_back(idx);
        }
    }
    return out;
}

Bytes encode_dataset(const std::vector<BrainSignal>& records)
{
    ByteWriter w;
    w.text(kDatasetMagic);
    w.u8(kDatasetVersion);
    std::size_t channels = records.empty() ? 0 : records.front().channels;
    std::size_t samples = records.empty() ? 0 : records.front().samples;
    std::uint32_t rate = records.empty() ? 0 : records.front().sample_rate_hz;
    for (const auto& r : records) {
        r.validate();
        if (r.channels != channels || r.samples != samples || r.sample_rate_hz != rate) {
            throw ShapeError("all records in a dataset file must share channels, samples and sample rate");
        }
        if (r.class_id > 0xFFFF || r.subject_id > 0xFF) {
            throw std::invalid_argument("class_id must fit u16 and subject_id u8");
        }
    }
    if (channels > 0xFFFF) {
        throw std::invalid_argument("channel count must fit u16");
    }
    w.u16(static_cast<std::uint16_t>(channels));
    w.u32(static_cast<std::uint32_t>(samples));
    w.u32(rate);
    w.u32(static_cast<std::uint32_t>(records.size()));
    for (const auto& r : records) {
        w.u16(static_cast<std::uint16_t>(r.class_id));
        w.u8(static_cast<std::uint8_t>(r.subject_id));
        for (double v : r.data) {
            w.f32(static_cast<float>(v));
        }
    }
    return std::move(w).take();
}

std::vector<BrainSignal> decode_dataset(std::span<const std::uint8_t> bytes)
{
    ByteReader r(bytes, "dataset");
    r.expect_magic(kDatasetMagic);
    auto version = r.u8();
    if (version != kDatasetVersion) {
        throw FormatError("dataset: unsupported version " + std::to_string(version));
    }
    std::size_t channels = r.u16();
    std::size_t samples = r.u32();
    std::uint32_t rate = r.u32();
    std::uint32_t count = r.u32();
    if (count > 0 && (channels == 0 || samples == 0 || rate == 0)) {
        throw FormatError("dataset: zero channels, samples or sample rate in header");
    }
    std::size_t record_bytes = 3 + 4 * channels * samples;
    if (count > 0 && r.remaining() / record_bytes < count) {
        throw FormatError("dataset: truncated payload (header declares " + std::to_string(count) +
                          " records, file holds " + std::to_string(r.remaining() / record_bytes) + ")");
    }
    std::vector<BrainSignal> out;
    out.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        BrainSignal s;
        s.channels = channels;
        s.samples = samples;
        s.sample_rate_hz = rate;
        s.class_id = r.u16();
        s.subject_id = r.u8();
        s.data.resize(channels * samples);
        for (auto& v : s.data) {
            v = static_cast<double>(r.f32());
        }
        for (double v : s.data) {
            if (!std::isfinite(v)) {
                throw FormatError("dataset: record " + std::to_string(i) + " has a non-finite sample");
            }
        }
        out.push_back(std::move(s));
    }
    r.expect_end();
    return out;
}

void save_dataset(const std::filesystem::path& path, const std::vector<BrainSignal>& records)
{
    write_file(path, encode_dataset(records));
}

std::string manifest_to_json(const DatasetManifest& manifest)
{
    nlohmann::ordered_json j;
    j["labels"] = nlohmann::ordered_json::object();
    j["captions"] = nlohmann::ordered_json::object();
    j["split"] = nlohmann::ordered_json::object();
    for (const auto& [k, v] : manifest.labels) {
        j["labels"][std::to_string(k)] = v;
    }
    for (const auto& [k, v] : manifest.captions) {
        j["captions"][std::to_string(k)] = v;
    }
    for (const auto& [k, v] : manifest.split) {
        j["split"][std::to_string(k)] = to_string(v);
    }
    return j.dump(2) + "\n";
}

DatasetManifest manifest_from_json(const std::string& text)
{
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("manifest: invalid JSON: ") + e.what());
    }
    auto parse_key = [](const std::string& key) -> std::uint32_t {
        try {
            std::size_t pos = 0;
            unsigned long v = std::stoul(key, &pos);
            if (pos != key.size() || v > UINT32_MAX) {
                throw FormatError("manifest: bad integer key \"" + key + "\"");
            }
            return static_cast<std::uint32_t>(v);
        } catch (const std::logic_error&) {
            throw FormatError("manifest: bad integer key \"" + key + "\"");
        }
    };
    DatasetManifest m;
    try {
        if (!j.contains("labels")) {
            throw FormatError("manifest: missing \"labels\"");
        }
        for (const auto& [k, v] : j.at("labels").items()) {
            m.labels[parse_key(k)] = v.get<std::string>();
        }
        if (j.contains("captions")) {
            for (const auto& [k, v] : j.at("captions").items()) {
                m.captions[parse_key(k)] = v.get<std::string>();
            }
        }
        if (j.contains("split")) {
            for (const auto& [k, v] : j.at("split").items()) {
                m.split[parse_key(k)] = parse_split_tag(v.get<std::string>());
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("manifest: ") + e.what());
    }
    return m;
}

void save_manifest(const std::filesystem::path& path, const DatasetManifest& manifest)
{
    write_text_file(path, manifest_to_json(manifest));
}

void check_manifest(const std::vector<BrainSignal>& records, const DatasetManifest& manifest)
{
    for (std::size_t i = 0; i < records.size(); ++i) {
        if (!manifest.labels.contains(records[i].class_id)) {
            throw FormatError("manifest: no label for class_id " + std::to_string(records[i].class_id) +
                              " (record " + std::to_string(i) + ")");
        }
    }
    if (!manifest.split.empty()) {
        if (manifest.split.size() != records.size() ||
            manifest.split.rbegin()->first >= records.size()) {
            throw FormatError("manifest: split does not cover exactly the dataset records");
        }
    }
}

Dataset load_dataset(const std::filesystem::path& path, const std::filesystem::path& manifest_path)
{
    Dataset ds;
    ds.records = decode_dataset(read_file(path));
    ds.manifest = manifest_from_json(read_text_file(manifest_path));
    check_manifest(ds.records, ds.manifest);
    return ds;
}

std::vector<double> design_bandpass(double band_lo_hz, double band_hi_hz, double sample_rate_hz, std::size_t taps)
{
    if (!(band_lo_hz > 0.0 && band_lo_hz < band_hi_hz && band_hi_hz < sample_rate_hz / 2.0)) {
        throw std::invalid_argument("bandpass needs 0 < lo < hi < sample_rate/2");
    }
    if (taps % 2 == 0) {
        throw std::invalid_argument("bandpass tap count must be odd");
    }
    double f1 = band_lo_hz / sample_rate_hz;
    double f2 = band_hi_hz / sample_rate_hz;
    auto m = static_cast<double>(taps - 1) / 2.0;
    std::vector<double> h(taps);
    for (std::size_t n = 0; n < taps; ++n) {
        double k = static_cast<double>(n) - m;
        double ideal = 2.0 * f2 * sinc(2.0 * f2 * k) - 2.0 * f1 * sinc(2.0 * f1 * k);
        double window = 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * static_cast<double>(n) /
                                               static_cast<double>(taps - 1));
        h[n] = ideal * window;
    }
    return h;
}

std::vector<double> filter_reflect(std::span<const double> signal, std::span<const double> taps)
{
    std::size_t n = signal.size();
    std::size_t half = taps.size() / 2;
    std::vector<double> padded(n + 2 * half);
    for (std::size_t i = 0; i < padded.size(); ++i) {
        padded[i] = signal[reflect_index(static_cast<std::ptrdiff_t>(i) - static_cast<std::ptrdiff_t>(half), n)];
    }
    // out[t] = sum_k taps[k] * x[t + half - k]
    std::vector<double> out(n, 0.0);
    std::size_t last = taps.size() - 1;
    for (std::size_t t = 0; t < n; ++t) {
        double acc = 0.0;
        const double* x = padded.data() + t + last;
        for (std::size_t k = 0; k < taps.size(); ++k) {
            acc += taps[k] * x[-static_cast<std::ptrdiff_t>(k)];
        }
        out[t] = acc;
    }
    return out;
}

BrainSignal preprocess(const BrainSignal& raw, double band_lo_hz, double band_hi_hz, double win_start_ms,
                       double win_end_ms)
{
    raw.validate();
    double fs = raw.sample_rate_hz;
    if (!(band_lo_hz > 0.0 && band_lo_hz < band_hi_hz && band_hi_hz < fs / 2.0)) {
        throw std::invalid_argument("invalid band: need 0 < lo < hi < sample_rate/2");
    }
    auto start = static_cast<long long>(std::llround(win_start_ms * fs / 1000.0));
    auto end = static_cast<long long>(std::llround(win_end_ms * fs / 1000.0));
    if (win_start_ms < 0.0 || start < 0 || end <= start || end > static_cast<long long>(raw.samples)) {
        throw std::invalid_argument("window [" + std::to_string(win_start_ms) + ", " + std::to_string(win_end_ms) +
                                    ") ms lies outside the record");
    }
    auto taps = design_bandpass(band_lo_hz, band_hi_hz, fs);
    BrainSignal out;
    out.channels = raw.channels;
    out.samples = static_cast<std::size_t>(end - start);
    out.class_id = raw.class_id;
    out.subject_id = raw.subject_id;
    out.sample_rate_hz = raw.sample_rate_hz;
    out.data.resize(out.channels * out.samples);
    for (std::size_t ch = 0; ch < raw.channels; ++ch) {
        std::span<const double> row(raw.data.data() + ch * raw.samples, raw.samples);
        auto filtered = filter_reflect(row, taps);
        std::copy(filtered.begin() + start, filtered.begin() + end, out.data.begin() + ch * out.samples);
    }
    return out;
}

void SyntheticSpec::validate() const
{
    if (n_classes == 0 || records_per_class == 0 || channels == 0 || samples == 0 || sample_rate_hz == 0 ||
        n_subjects == 0) {
        throw std::invalid_argument("synthetic spec counts must be positive");
    }
    if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) {
        throw std::invalid_argument("noise_sigma must be a finite non-negative number");
    }
    if (channels > 0xFFFF || n_classes > 0xFFFF || n_subjects > 0xFF) {
        throw std::invalid_argument("synthetic spec exceeds dataset file field widths");
    }
}

Dataset synthesize_dataset(const SyntheticSpec& spec)
{
    spec.validate();
    constexpr std::size_t kTones = 3;
    static const char* kAdjectives[] = {"small", "large", "bright", "dark", "old", "shiny", "wooden", "red"};
    static const char* kScenes[] = {"on a table", "in a room", "outside", "on the grass", "near a wall",
                                    "in the street"};

    Rng rng(spec.seed);
    Dataset ds;
    double fs = spec.sample_rate_hz;
    double nyquist = fs / 2.0;

    // Class templates: class-indexed tones inside the 55-95 Hz analysis band,
    // random per-channel gains and phases, scaled to unit overall RMS.
    std::vector<std::vector<double>> templates(spec.n_classes);
    for (std::size_t c = 0; c < spec.n_classes; ++c) {
        Rng crng = rng.fork();
        std::vector<double> freqs(kTones);
        for (std::size_t j = 0; j < kTones; ++j) {
            double f = 58.0 + std::fmod(static_cast<double>(c) * 4.7 + static_cast<double>(j) * 11.0, 34.0);
            freqs[j] = std::min(f, 0.45 * nyquist);
        }
        auto& tpl = templates[c];
        tpl.assign(spec.channels * spec.samples, 0.0);
        for (std::size_t ch = 0; ch < spec.channels; ++ch) {
            for (std::size_t j = 0; j < kTones; ++j) {
                double gain = crng.uniform(0.0, 1.0);
                gain *= gain;
                double phase = crng.uniform(0.0, 2.0 * std::numbers::pi);
                for (std::size_t t = 0; t < spec.samples; ++t) {
                    tpl[ch * spec.samples + t] +=
                        gain * std::sin(2.0 * std::numbers::pi * freqs[j] * static_cast<double>(t) / fs + phase);
                }
            }
        }
        double power = 0.0;
        for (double v : tpl) {
            power += v * v;
        }
        double rms = std::sqrt(power / static_cast<double>(tpl.size()));
        if (rms > 0.0) {
            for (double& v : tpl) {
                v /= rms;
            }
        }
    }

    Rng noise_rng = rng.fork();
    Rng text_rng = rng.fork();
    std::uint32_t index = 0;
    for (std::size_t c = 0; c < spec.n_classes; ++c) {
        ds.manifest.labels[static_cast<std::uint32_t>(c)] = "class_" + std::to_string(c);
        for (std::size_t r = 0; r < spec.records_per_class; ++r, ++index) {
            BrainSignal s;
            s.channels = spec.channels;
            s.samples = spec.samples;
            s.sample_rate_hz = spec.sample_rate_hz;
            s.class_id = static_cast<std::uint32_t>(c);
            s.subject_id = static_cast<std::uint32_t>(r % spec.n_subjects);
            s.data.resize(templates[c].size());
            for (std::size_t i = 0; i < s.data.size(); ++i) {
                double v = templates[c][i] + spec.noise_sigma * noise_rng.normal();
                // stored as f32 on disk; keep memory and file bit-identical
                s.data[i] = static_cast<double>(static_cast<float>(v));
            }
            ds.records.push_back(std::move(s));
            std::string caption = std::string("a ") + kAdjectives[text_rng.below(std::size(kAdjectives))] +
                                  " class_" + std::to_string(c) + " object " +
                                  kScenes[text_rng.below(std::size(kScenes))];
            ds.manifest.captions[index] = caption;
        }
    }
    ds.manifest = split_dataset(ds.manifest, class_ids_of(ds.records), SplitRatios{}, spec.seed);
    return ds;
}

std::vector<std::uint32_t> class_ids_of(const std::vector<BrainSignal>& records)
{
    std::vector<std::uint32_t> out;
    out.reserve(records.size());
    for (const auto& r : records) {
        out.push_back(r.class_id);
    }
    return out;
}

DatasetManifest split_dataset(const DatasetManifest& manifest, const std::vector<std::uint32_t>& record_classes,
                              SplitRatios ratios, std::uint64_t seed)
{
    if (!(ratios.train > 0.0 && ratios.val > 0.0 && ratios.test > 0.0)) {
        throw std::invalid_argument("split ratios must all be positive");
    }
    if (std::abs(ratios.train + ratios.val + ratios.test - 1.0) > 1e-9) {
        throw std::invalid_argument("split ratios must sum to 1");
    }
    std::map<std::uint32_t, std::vector<std::uint32_t>> by_class;
    for (std::size_t i = 0; i < record_classes.size(); ++i) {
        by_class[record_classes[i]].push_back(static_cast<std::uint32_t>(i));
    }
    DatasetManifest out = manifest;
    out.split.clear();
    Rng rng(seed ^ 0x5b1d5b1dULL);
    for (auto& [cls, members] : by_class) {
        auto n = static_cast<double>(members.size());
        auto n_val = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(n * ratios.val)));
        auto n_test = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(n * ratios.test)));
        if (members.size() < n_val + n_test + 1) {
            throw std::invalid_argument("class " + std::to_string(cls) + " has " + std::to_string(members.size()) +
                                        " records, too few for a train/val/test split");
        }
        shuffle(members, rng);
        for (std::size_t k = 0; k < members.size(); ++k) {
            SplitTag tag = k < n_val ? SplitTag::val : (k < n_val + n_test ? SplitTag::test : SplitTag::train);
            out.split[members[k]] = tag;
        }
    }
    return out;
}

} // namespace semcodec
