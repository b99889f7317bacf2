#include "semcodec/entropy.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace semcodec {

std::vector<std::int32_t> quantize(std::span<const double> y)
{
    std::vector<std::int32_t> out(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) {
        if (!std::isfinite(y[i])) {
            throw NumericError("quantize: non-finite input at index " + std::to_string(i));
        }
        double r = std::round(y[i]); // half away from zero
        if (r > INT32_MAX || r < INT32_MIN) {
            throw NumericError("quantize: value out of int32 range");
        }
        out[i] = static_cast<std::int32_t>(r);
    }
    return out;
}

std::vector<double> add_uniform_noise(std::span<const double> y, Rng& rng)
{
    std::vector<double> out(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) {
        out[i] = y[i] + rng.centered_unit();
    }
    return out;
}

// ---------------------------------------------------------------------------

namespace {

double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }
double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Stage k maps width_in[k] -> width_out[k].
constexpr std::size_t kIn[4] = {1, 3, 3, 3};
constexpr std::size_t kOut[4] = {3, 3, 3, 1};

} // namespace

struct FactorizedDensity::Eval {
    double in[4][3];  // input to stage k
    double z[4][3];   // affine output of stage k
    double out = 0.0; // logit
};

FactorizedDensity::FactorizedDensity(std::size_t channels) : channels_(channels)
{
    if (channels == 0) {
        throw std::invalid_argument("density needs at least one channel");
    }
    for (std::size_t k = 0; k < kStages; ++k) {
        // softplus(h) = 1 / fan_out, so the composed slope is exactly 1
        double target = 1.0 / static_cast<double>(kOut[k]);
        double raw = std::log(std::expm1(target));
        params_.push_back({"density.h" + std::to_string(k), Tensor({channels, kOut[k], kIn[k]}, raw)});
    }
    for (std::size_t k = 0; k < kStages; ++k) {
        params_.push_back({"density.b" + std::to_string(k), Tensor({channels, kOut[k]})});
    }
    for (std::size_t k = 0; k + 1 < kStages; ++k) {
        params_.push_back({"density.a" + std::to_string(k), Tensor({channels, kOut[k]})});
    }
}

std::vector<Tensor> FactorizedDensity::zero_grads() const
{
    std::vector<Tensor> g;
    for (const auto& p : params_) {
        g.emplace_back(p.value.shape);
    }
    return g;
}

void FactorizedDensity::eval(std::size_t ch, double x, Eval& e) const
{
    e.in[0][0] = x;
    for (std::size_t k = 0; k < kStages; ++k) {
        const double* h = params_[k].value.data() + ch * kOut[k] * kIn[k];
        const double* b = params_[kStages + k].value.data() + ch * kOut[k];
        for (std::size_t o = 0; o < kOut[k]; ++o) {
            double acc = b[o];
            for (std::size_t i = 0; i < kIn[k]; ++i) {
                acc += softplus(h[o * kIn[k] + i]) * e.in[k][i];
            }
            e.z[k][o] = acc;
        }
        if (k + 1 < kStages) {
            const double* a = params_[2 * kStages + k].value.data() + ch * kOut[k];
            for (std::size_t o = 0; o < kOut[k]; ++o) {
                e.in[k + 1][o] = e.z[k][o] + std::tanh(a[o]) * std::tanh(e.z[k][o]);
            }
        }
    }
    e.out = e.z[kStages - 1][0];
}

// Accumulates g * d logit / d params; returns g * d logit / d x.
double FactorizedDensity::backprop(std::size_t ch, const Eval& e, double g, std::vector<Tensor>& param_grads) const
{
    double gout[3] = {g, 0.0, 0.0};
    for (std::size_t k = kStages; k-- > 0;) {
        double gz[3];
        if (k + 1 < kStages) {
            const double* a = params_[2 * kStages + k].value.data() + ch * kOut[k];
            double* ga = param_grads[2 * kStages + k].data() + ch * kOut[k];
            for (std::size_t o = 0; o < kOut[k]; ++o) {
                double ta = std::tanh(a[o]);
                double tz = std::tanh(e.z[k][o]);
                gz[o] = gout[o] * (1.0 + ta * (1.0 - tz * tz));
                ga[o] += gout[o] * (1.0 - ta * ta) * tz;
            }
        } else {
            gz[0] = gout[0];
        }
        const double* h = params_[k].value.data() + ch * kOut[k] * kIn[k];
        double* gh = param_grads[k].data() + ch * kOut[k] * kIn[k];
        double* gb = param_grads[kStages + k].data() + ch * kOut[k];
        double gin[3] = {0.0, 0.0, 0.0};
        for (std::size_t o = 0; o < kOut[k]; ++o) {
            gb[o] += gz[o];
            for (std::size_t i = 0; i < kIn[k]; ++i) {
                double raw = h[o * kIn[k] + i];
                gh[o * kIn[k] + i] += gz[o] * sigmoid(raw) * e.in[k][i];
                gin[i] += gz[o] * softplus(raw);
            }
        }
        std::copy(gin, gin + 3, gout);
    }
    return gout[0];
}

double FactorizedDensity::logit(std::size_t ch, double x) const
{
    Eval e;
    eval(ch, x, e);
    return e.out;
}

double FactorizedDensity::cdf(std::size_t ch, double x) const { return sigmoid(logit(ch, x)); }

void FactorizedDensity::check_width(const Tensor& v) const
{
    if (v.shape.empty() || v.shape.back() != channels_ || v.size() % channels_ != 0) {
        throw ShapeError("density has " + std::to_string(channels_) + " channels, got values of shape " +
                         shape_string(v.shape));
    }
}

namespace {

// sigmoid(u) - sigmoid(l) evaluated on the side where both are small.
double interval_mass(double u, double l)
{
    double s = (u + l > 0.0) ? -1.0 : 1.0;
    return std::abs(sigmoid(s * u) - sigmoid(s * l));
}

} // namespace

Tensor FactorizedDensity::likelihood(const Tensor& v) const
{
    check_width(v);
    Tensor p(v.shape);
    Eval eu, el;
    for (std::size_t i = 0; i < v.size(); ++i) {
        std::size_t ch = i % channels_;
        eval(ch, v[i] + 0.5, eu);
        eval(ch, v[i] - 0.5, el);
        p[i] = std::max(interval_mass(eu.out, el.out), kLikelihoodBound);
    }
    return p;
}

void FactorizedDensity::likelihood_backward(const Tensor& v, const Tensor& grad_p, std::vector<Tensor>& param_grads,
                                            Tensor* v_grad) const
{
    check_width(v);
    if (grad_p.size() != v.size() || param_grads.size() != params_.size()) {
        throw ShapeError("likelihood_backward: gradient shapes do not match");
    }
    if (v_grad != nullptr && v_grad->size() != v.size()) {
        *v_grad = Tensor(v.shape);
    }
    Eval eu, el;
    for (std::size_t i = 0; i < v.size(); ++i) {
        std::size_t ch = i % channels_;
        eval(ch, v[i] + 0.5, eu);
        eval(ch, v[i] - 0.5, el);
        double p = interval_mass(eu.out, el.out);
        double g = grad_p[i];
        if (p < kLikelihoodBound && g >= 0.0) {
            continue;
        }
        double su = sigmoid(eu.out);
        double sl = sigmoid(el.out);
        double du = g * su * (1.0 - su);
        double dl = -g * sl * (1.0 - sl);
        double gx = backprop(ch, eu, du, param_grads) + backprop(ch, el, dl, param_grads);
        if (v_grad != nullptr) {
            (*v_grad)[i] += gx;
        }
    }
}

double FactorizedDensity::rate_bits(const Tensor& v, std::vector<Tensor>* param_grads, Tensor* v_grad,
                                    double scale) const
{
    Tensor p = likelihood(v);
    double bits = 0.0;
    for (double pi : p.values) {
        bits -= std::log2(pi);
    }
    if (param_grads != nullptr || v_grad != nullptr) {
        Tensor gp(p.shape);
        for (std::size_t i = 0; i < p.size(); ++i) {
            gp[i] = -scale / (p[i] * std::numbers::ln2);
        }
        std::vector<Tensor> scratch;
        if (param_grads == nullptr) {
            scratch = zero_grads();
        }
        likelihood_backward(v, gp, param_grads != nullptr ? *param_grads : scratch, v_grad);
    }
    return bits;
}

double estimate_rate_bits(const FactorizedDensity& density, std::span<const double> v)
{
    Tensor t({v.size()}, std::vector<double>(v.begin(), v.end()));
    return density.rate_bits(t);
}

// ---------------------------------------------------------------------------

double PmfChannel::probability(std::int32_t symbol) const
{
    if (symbol < min_symbol() || symbol > max_symbol()) {
        return 0.0;
    }
    return static_cast<double>(freq[static_cast<std::size_t>(symbol - offset)]) / kProbTotal;
}

void PmfTable::validate() const
{
    if (channels.empty()) {
        throw FormatError("pmf table has no channels");
    }
    for (std::size_t c = 0; c < channels.size(); ++c) {
        const auto& ch = channels[c];
        if (ch.freq.size() < 2 || ch.cum.size() != ch.freq.size() + 1 || ch.cum[0] != 0) {
            throw FormatError("pmf channel " + std::to_string(c) + " has an invalid layout");
        }
        for (std::size_t i = 0; i < ch.freq.size(); ++i) {
            if (ch.freq[i] < 1 || ch.cum[i + 1] != ch.cum[i] + ch.freq[i]) {
                throw FormatError("pmf channel " + std::to_string(c) + " has a zero or inconsistent entry");
            }
        }
        if (ch.cum.back() != kProbTotal) {
            throw FormatError("pmf channel " + std::to_string(c) + " does not sum to 2^16");
        }
    }
}

std::vector<std::uint32_t> quantize_pmf(std::span<const double> weights)
{
    std::size_t n = weights.size();
    if (n < 2 || n > kProbTotal) {
        throw std::invalid_argument("pmf needs between 2 and 2^16 entries");
    }
    double sum = 0.0;
    for (double w : weights) {
        if (!(w >= 0.0) || !std::isfinite(w)) {
            throw NumericError("pmf weights must be finite and non-negative");
        }
        sum += w;
    }
    std::vector<double> scaled(n);
    for (std::size_t i = 0; i < n; ++i) {
        scaled[i] = sum > 0.0 ? weights[i] / sum * kProbTotal : static_cast<double>(kProbTotal) / n;
    }
    std::vector<std::uint32_t> q(n);
    std::int64_t total = 0;
    for (std::size_t i = 0; i < n; ++i) {
        q[i] = std::max<std::uint32_t>(1, static_cast<std::uint32_t>(std::floor(scaled[i])));
        total += q[i];
    }
    std::int64_t deficit = static_cast<std::int64_t>(kProbTotal) - total;
    if (deficit > 0) {
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return (scaled[a] - std::floor(scaled[a])) > (scaled[b] - std::floor(scaled[b]));
        });
        for (std::size_t k = 0; deficit > 0; k = (k + 1) % n, --deficit) {
            q[order[k]] += 1;
        }
    }
    while (deficit < 0) {
        auto it = std::max_element(q.begin(), q.end()); // first maximum
        *it -= 1;
        ++deficit;
    }
    return q;
}

PmfChannel make_pmf_channel(std::int32_t offset, std::vector<std::uint32_t> freq)
{
    PmfChannel ch;
    ch.offset = offset;
    ch.freq = std::move(freq);
    ch.cum.assign(ch.freq.size() + 1, 0);
    for (std::size_t i = 0; i < ch.freq.size(); ++i) {
        ch.cum[i + 1] = ch.cum[i] + ch.freq[i];
    }
    return ch;
}

PmfTable build_pmf_table(const FactorizedDensity& density, std::span<const std::int32_t> channel_medians)
{
    if (channel_medians.size() != density.channels()) {
        throw ShapeError("need one median per density channel");
    }
    PmfTable table;
    constexpr std::size_t len = 2 * kSupportRadius + 1;
    for (std::size_t c = 0; c < density.channels(); ++c) {
        std::int32_t offset = channel_medians[c] - kSupportRadius;
        std::vector<double> w(len);
        for (std::size_t k = 0; k < len; ++k) {
            double x = static_cast<double>(offset + static_cast<std::int32_t>(k));
            double u = density.logit(c, x + 0.5);
            double l = density.logit(c, x - 0.5);
            w[k] = std::max(interval_mass(u, l), kLikelihoodBound);
        }
        table.channels.push_back(make_pmf_channel(offset, quantize_pmf(w)));
    }
    return table;
}

void write_pmf_table(ByteWriter& w, const PmfTable& table)
{
    table.validate();
    w.u32(static_cast<std::uint32_t>(table.channels.size()));
    for (const auto& ch : table.channels) {
        if (ch.offset < INT16_MIN || ch.offset > INT16_MAX || ch.freq.size() > 0xFFFF) {
            throw std::invalid_argument("pmf channel does not fit the i16 offset / u16 length fields");
        }
        w.i16(static_cast<std::int16_t>(ch.offset));
        w.u16(static_cast<std::uint16_t>(ch.freq.size()));
        for (auto f : ch.freq) {
            w.u16(static_cast<std::uint16_t>(f));
        }
    }
}

PmfTable read_pmf_table(ByteReader& r)
{
    PmfTable table;
    std::uint32_t n = r.u32();
    for (std::uint32_t c = 0; c < n; ++c) {
        std::int32_t offset = r.i16();
        std::size_t len = r.u16();
        std::vector<std::uint32_t> freq(len);
        for (auto& f : freq) {
            f = r.u16();
        }
        table.channels.push_back(make_pmf_channel(offset, std::move(freq)));
    }
    table.validate();
    return table;
}

double table_rate_bits(std::span<const std::int32_t> symbols, const PmfTable& table)
{
    double bits = 0.0;
    for (std::size_t i = 0; i < symbols.size(); ++i) {
        double p = table.channel_for(i).probability(symbols[i]);
        if (p <= 0.0) {
            throw std::out_of_range("symbol outside table support");
        }
        bits -= std::log2(p);
    }
    return bits;
}

std::size_t clamp_to_support(QuantizedCode& code, const PmfTable& table)
{
    std::size_t clamped = 0;
    for (std::size_t i = 0; i < code.symbols.size(); ++i) {
        const auto& ch = table.channel_for(i);
        std::int32_t s = std::clamp(code.symbols[i], ch.min_symbol(), ch.max_symbol());
        if (s != code.symbols[i]) {
            code.symbols[i] = s;
            ++clamped;
        }
    }
    return clamped;
}

// ---------------------------------------------------------------------------

namespace {

constexpr std::uint32_t kTop = 1u << 24;

class RangeEncoder {
public:
    void encode(std::uint32_t cum, std::uint32_t freq)
    {
        std::uint32_t r = range_ >> kProbBits;
        low_ += static_cast<std::uint64_t>(r) * cum;
        range_ = r * freq;
        while (range_ < kTop) {
            range_ <<= 8;
            shift_low();
        }
    }

    Bytes finish() &&
    {
        for (int i = 0; i < 5; ++i) {
            shift_low();
        }
        return std::move(out_);
    }

private:
    void shift_low()
    {
        if (static_cast<std::uint32_t>(low_) < 0xFF000000u || (low_ >> 32) != 0) {
            auto carry = static_cast<std::uint8_t>(low_ >> 32);
            std::uint8_t temp = cache_;
            do {
                out_.push_back(static_cast<std::uint8_t>(temp + carry));
                temp = 0xFF;
            } while (--cache_size_ != 0);
            cache_ = static_cast<std::uint8_t>(low_ >> 24);
        }
        ++cache_size_;
        low_ = (low_ & 0x00FFFFFFu) << 8;
    }

    std::uint64_t low_ = 0;
    std::uint32_t range_ = 0xFFFFFFFFu;
    std::uint8_t cache_ = 0;
    std::uint64_t cache_size_ = 1;
    Bytes out_;
};

class RangeDecoder {
public:
    explicit RangeDecoder(std::span<const std::uint8_t> in) : in_(in)
    {
        if (next() != 0) {
            throw DecodeError("range decoder: stream does not start with 0x00");
        }
        for (int i = 0; i < 4; ++i) {
            code_ = (code_ << 8) | next();
        }
    }

    std::size_t decode(const PmfChannel& ch)
    {
        std::uint32_t r = range_ >> kProbBits;
        std::uint32_t v = code_ / r;
        if (v >= kProbTotal) {
            throw DecodeError("range decoder: corrupt stream");
        }
        auto it = std::upper_bound(ch.cum.begin(), ch.cum.end(), v);
        auto s = static_cast<std::size_t>(it - ch.cum.begin()) - 1;
        code_ -= r * ch.cum[s];
        range_ = r * ch.freq[s];
        while (range_ < kTop) {
            code_ = (code_ << 8) | next();
            range_ <<= 8;
        }
        return s;
    }

    void finish() const
    {
        if (pos_ != in_.size()) {
            throw DecodeError("range decoder: " + std::to_string(in_.size() - pos_) + " unread trailing bytes");
        }
    }

private:
    std::uint32_t next()
    {
        if (pos_ >= in_.size()) {
            throw DecodeError("range decoder: truncated stream");
        }
        return in_[pos_++];
    }

    std::span<const std::uint8_t> in_;
    std::size_t pos_ = 0;
    std::uint32_t code_ = 0;
    std::uint32_t range_ = 0xFFFFFFFFu;
};

} // namespace

Bytes range_encode(const QuantizedCode& code, const PmfTable& table)
{
    if (table.channels.empty()) {
        throw std::invalid_argument("range_encode: empty table");
    }
    RangeEncoder enc;
    for (std::size_t i = 0; i < code.symbols.size(); ++i) {
        const auto& ch = table.channel_for(i);
        std::int32_t s = code.symbols[i];
        if (s < ch.min_symbol() || s > ch.max_symbol()) {
            throw std::logic_error("range_encode: symbol " + std::to_string(s) + " outside table support at index " +
                                   std::to_string(i));
        }
        auto idx = static_cast<std::size_t>(s - ch.offset);
        enc.encode(ch.cum[idx], ch.freq[idx]);
    }
    return std::move(enc).finish();
}

QuantizedCode range_decode(std::span<const std::uint8_t> bytes, const PmfTable& table, std::size_t n_symbols,
                           int layer_id)
{
    if (table.channels.empty()) {
        throw std::invalid_argument("range_decode: empty table");
    }
    RangeDecoder dec(bytes);
    QuantizedCode code;
    code.layer_id = layer_id;
    code.symbols.resize(n_symbols);
    for (std::size_t i = 0; i < n_symbols; ++i) {
        const auto& ch = table.channel_for(i);
        code.symbols[i] = ch.offset + static_cast<std::int32_t>(dec.decode(ch));
    }
    dec.finish();
    return code;
}

} // namespace semcodec
