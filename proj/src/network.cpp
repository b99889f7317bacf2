#include "semcodec/network.hpp"

#include <cmath>
#include <sstream>

#include <Eigen/Core>

namespace semcodec {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;
using VecMap = Eigen::Map<Eigen::VectorXd>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;

ConstMatMap as_mat(const Tensor& t, std::size_t rows, std::size_t cols)
{
    return ConstMatMap(t.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

MatMap as_mat(Tensor& t, std::size_t rows, std::size_t cols)
{
    return MatMap(t.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// SiLU: smooth, so central differences behave near zero.
double silu(double x) { return x * sigmoid(x); }

double silu_grad(double x)
{
    double s = sigmoid(x);
    return s * (1.0 + x * (1.0 - s));
}

Tensor silu_forward(const Tensor& a)
{
    Tensor h(a.shape);
    for (std::size_t i = 0; i < a.size(); ++i) {
        h[i] = silu(a[i]);
    }
    return h;
}

Tensor silu_backward(const Tensor& a, const Tensor& gh)
{
    Tensor ga(a.shape);
    for (std::size_t i = 0; i < a.size(); ++i) {
        ga[i] = gh[i] * silu_grad(a[i]);
    }
    return ga;
}

Shape with_batch(std::size_t batch, const Shape& sample)
{
    Shape s{batch};
    s.insert(s.end(), sample.begin(), sample.end());
    return s;
}

void init_uniform(Tensor& t, double bound, Rng& rng)
{
    for (auto& v : t.values) {
        v = rng.uniform(-bound, bound);
    }
}

// y = x W^T + b over rows; x (rows, in), W (out, in).
Tensor affine(const Tensor& x, std::size_t rows, std::size_t in, const Tensor& w, const Tensor& b, std::size_t out)
{
    Tensor y({rows, out});
    auto Y = as_mat(y, rows, out);
    Y.noalias() = as_mat(x, rows, in) * as_mat(w, out, in).transpose();
    Y.rowwise() += ConstVecMap(b.data(), static_cast<Eigen::Index>(out)).transpose();
    return y;
}

// Accumulates dW, db and returns dx.
Tensor affine_backward(const Tensor& x, std::size_t rows, std::size_t in, const Tensor& w, std::size_t out,
                       const Tensor& gy, Tensor& gw, Tensor& gb, bool need_dx = true)
{
    auto GY = as_mat(gy, rows, out);
    as_mat(gw, out, in).noalias() += GY.transpose() * as_mat(x, rows, in);
    VecMap(gb.data(), static_cast<Eigen::Index>(out)) += GY.colwise().sum().transpose();
    Tensor gx;
    if (need_dx) {
        gx = Tensor({rows, in});
        as_mat(gx, rows, in).noalias() = GY * as_mat(w, out, in);
    }
    return gx;
}

struct FwdCtx {
    Mode mode;
    Rng* rng;
    const Tensor* context;
};

} // namespace

// ---------------------------------------------------------------------------

class Layer {
public:
    virtual ~Layer() = default;
    virtual Shape out_shape() const = 0;
    virtual std::vector<Parameter> make_params(const std::string& prefix, Rng& init) const = 0;
    virtual Tensor forward(std::span<const Parameter> p, const Tensor& x, const FwdCtx& ctx,
                           std::vector<Tensor>& saved) const = 0;
    virtual Tensor backward(std::span<const Parameter> p, const std::vector<Tensor>& saved, const Tensor& gy,
                            std::span<Tensor> g, Tensor* context_grad) const = 0;
};

namespace {

class LinearLayer final : public Layer {
public:
    LinearLayer(std::size_t in, std::size_t out) : in_(in), out_(out) {}

    Shape out_shape() const override { return {out_}; }

    std::vector<Parameter> make_params(const std::string& prefix, Rng& init) const override
    {
        Parameter w{prefix + ".w", Tensor({out_, in_})};
        init_uniform(w.value, std::sqrt(3.0 / static_cast<double>(in_)), init);
        return {std::move(w), Parameter{prefix + ".b", Tensor({out_})}};
    }

    Tensor forward(std::span<const Parameter> p, const Tensor& x, const FwdCtx&,
                   std::vector<Tensor>& saved) const override
    {
        std::size_t rows = x.batch();
        Tensor y = affine(x, rows, in_, p[0].value, p[1].value, out_);
        saved = {x};
        return y;
    }

    Tensor backward(std::span<const Parameter> p, const std::vector<Tensor>& saved, const Tensor& gy,
                    std::span<Tensor> g, Tensor*) const override
    {
        const Tensor& x = saved[0];
        Tensor gx = affine_backward(x, x.batch(), in_, p[0].value, out_, gy, g[0], g[1]);
        gx.shape = x.shape;
        return gx;
    }

private:
    std::size_t in_, out_;
};

class ActivationLayer final : public Layer {
public:
    explicit ActivationLayer(Shape shape) : shape_(std::move(shape)) {}

    Shape out_shape() const override { return shape_; }
    std::vector<Parameter> make_params(const std::string&, Rng&) const override { return {}; }

    Tensor forward(std::span<const Parameter>, const Tensor& x, const FwdCtx&,
                   std::vector<Tensor>& saved) const override
    {
        saved = {x};
        return silu_forward(x);
    }

    Tensor backward(std::span<const Parameter>, const std::vector<Tensor>& saved, const Tensor& gy,
                    std::span<Tensor>, Tensor*) const override
    {
        return silu_backward(saved[0], gy);
    }

private:
    Shape shape_;
};

// skip(x) + W2 silu(W1 x + b1) + b2, skip is identity or a projection.
class Resblock1dLayer final : public Layer {
public:
    Resblock1dLayer(std::size_t in, std::size_t out) : in_(in), out_(out) {}

    Shape out_shape() const override { return {out_}; }

    std::vector<Parameter> make_params(const std::string& prefix, Rng& init) const override
    {
        std::vector<Parameter> ps;
        ps.push_back({prefix + ".w1", Tensor({out_, in_})});
        init_uniform(ps.back().value, std::sqrt(6.0 / static_cast<double>(in_)), init);
        ps.push_back({prefix + ".b1", Tensor({out_})});
        ps.push_back({prefix + ".w2", Tensor({out_, out_})});
        init_uniform(ps.back().value, 0.5 * std::sqrt(3.0 / static_cast<double>(out_)), init);
        ps.push_back({prefix + ".b2", Tensor({out_})});
        if (in_ != out_) {
            ps.push_back({prefix + ".ws", Tensor({out_, in_})});
            init_uniform(ps.back().value, std::sqrt(3.0 / static_cast<double>(in_)), init);
            ps.push_back({prefix + ".bs", Tensor({out_})});
        }
        return ps;
    }

    Tensor forward(std::span<const Parameter> p, const Tensor& x, const FwdCtx&,
                   std::vector<Tensor>& saved) const override
    {
        std::size_t rows = x.batch();
        Tensor a = affine(x, rows, in_, p[0].value, p[1].value, out_);
        Tensor h = silu_forward(a);
        Tensor y = affine(h, rows, out_, p[2].value, p[3].value, out_);
        if (in_ == out_) {
            for (std::size_t i = 0; i < y.size(); ++i) {
                y[i] += x[i];
            }
        } else {
            Tensor s = affine(x, rows, in_, p[4].value, p[5].value, out_);
            for (std::size_t i = 0; i < y.size(); ++i) {
                y[i] += s[i];
            }
        }
        saved = {x, std::move(a), std::move(h)};
        return y;
    }

    Tensor backward(std::span<const Parameter> p, const std::vector<Tensor>& saved, const Tensor& gy,
                    std::span<Tensor> g, Tensor*) const override
    {
        const Tensor& x = saved[0];
        const Tensor& a = saved[1];
        const Tensor& h = saved[2];
        std::size_t rows = x.batch();
        Tensor gh = affine_backward(h, rows, out_, p[2].value, out_, gy, g[2], g[3]);
        Tensor ga = silu_backward(a, gh);
        Tensor gx = affine_backward(x, rows, in_, p[0].value, out_, ga, g[0], g[1]);
        if (in_ == out_) {
            for (std::size_t i = 0; i < gx.size(); ++i) {
                gx[i] += gy[i];
            }
        } else {
            Tensor gs = affine_backward(x, rows, in_, p[4].value, out_, gy, g[4], g[5]);
            for (std::size_t i = 0; i < gx.size(); ++i) {
                gx[i] += gs[i];
            }
        }
        gx.shape = x.shape;
        return gx;
    }

private:
    std::size_t in_, out_;
};

// 1-D convolution over (batch, channels, time) via im2col. Zero padding
// kernel/2 on both sides, so out_len = (len - 1) / stride + 1.
struct Conv1d {
    std::size_t in_ch, out_ch, kernel, stride, in_len;

    std::size_t out_len() const { return (in_len - 1) / stride + 1; }
    std::size_t pad() const { return kernel / 2; }

    // cols: (in_ch*kernel, batch*out_len)
    Tensor im2col(const Tensor& x, std::size_t batch) const
    {
        std::size_t tout = out_len();
        std::size_t ncol = batch * tout;
        Tensor cols({in_ch * kernel, ncol});
        auto p = static_cast<std::ptrdiff_t>(pad());
        for (std::size_t c = 0; c < in_ch; ++c) {
            for (std::size_t j = 0; j < kernel; ++j) {
                double* row = cols.data() + (c * kernel + j) * ncol;
                for (std::size_t b = 0; b < batch; ++b) {
                    const double* src = x.data() + (b * in_ch + c) * in_len;
                    for (std::size_t t = 0; t < tout; ++t) {
                        auto pos = static_cast<std::ptrdiff_t>(t * stride + j) - p;
                        row[b * tout + t] =
                            (pos >= 0 && pos < static_cast<std::ptrdiff_t>(in_len)) ? src[pos] : 0.0;
                    }
                }
            }
        }
        return cols;
    }

    void col2im_add(const Tensor& gcols, std::size_t batch, Tensor& gx) const
    {
        std::size_t tout = out_len();
        std::size_t ncol = batch * tout;
        auto p = static_cast<std::ptrdiff_t>(pad());
        for (std::size_t c = 0; c < in_ch; ++c) {
            for (std::size_t j = 0; j < kernel; ++j) {
                const double* row = gcols.data() + (c * kernel + j) * ncol;
                for (std::size_t b = 0; b < batch; ++b) {
                    double* dst = gx.data() + (b * in_ch + c) * in_len;
                    for (std::size_t t = 0; t < tout; ++t) {
                        auto pos = static_cast<std::ptrdiff_t>(t * stride + j) - p;
                        if (pos >= 0 && pos < static_cast<std::ptrdiff_t>(in_len)) {
                            dst[pos] += row[b * tout + t];
                        }
                    }
                }
            }
        }
    }

    // (out_ch, batch*out_len) matrix -> (batch, out_ch, out_len) tensor
    Tensor to_bct(const RowMat& m, std::size_t batch) const
    {
        std::size_t tout = out_len();
        Tensor y({batch, out_ch, tout});
        for (std::size_t o = 0; o < out_ch; ++o) {
            for (std::size_t b = 0; b < batch; ++b) {
                const double* src = m.data() + o * batch * tout + b * tout;
                std::copy(src, src + tout, y.data() + (b * out_ch + o) * tout);
            }
        }
        return y;
    }

    RowMat from_bct(const Tensor& y, std::size_t batch) const
    {
        std::size_t tout = out_len();
        RowMat m(static_cast<Eigen::Index>(out_ch), static_cast<Eigen::Index>(batch * tout));
        for (std::size_t o = 0; o < out_ch; ++o) {
            for (std::size_t b = 0; b < batch; ++b) {
                const double* src = y.data() + (b * out_ch + o) * tout;
                std::copy(src, src + tout, m.data() + o * batch * tout + b * tout);
            }
        }
        return m;
    }

    Tensor forward(const Tensor& x, std::size_t batch, const Tensor& w, const Tensor& bias) const
    {
        Tensor cols = im2col(x, batch);
        RowMat ym = as_mat(w, out_ch, in_ch * kernel) * as_mat(cols, in_ch * kernel, batch * out_len());
        ym.colwise() += ConstVecMap(bias.data(), static_cast<Eigen::Index>(out_ch));
        return to_bct(ym, batch);
    }

    // Accumulates gw, gb; returns gx shaped (batch, in_ch, in_len).
    Tensor backward(const Tensor& x, std::size_t batch, const Tensor& w, const Tensor& gy, Tensor& gw,
                    Tensor& gb) const
    {
        Tensor cols = im2col(x, batch);
        RowMat gym = from_bct(gy, batch);
        std::size_t krows = in_ch * kernel;
        as_mat(gw, out_ch, krows).noalias() += gym * as_mat(cols, krows, batch * out_len()).transpose();
        VecMap(gb.data(), static_cast<Eigen::Index>(out_ch)) += gym.rowwise().sum();
        Tensor gcols({krows, batch * out_len()});
        as_mat(gcols, krows, batch * out_len()).noalias() = as_mat(w, out_ch, krows).transpose() * gym;
        Tensor gx({batch, in_ch, in_len});
        col2im_add(gcols, batch, gx);
        return gx;
    }
};

class ConvResblockLayer final : public Layer {
public:
    ConvResblockLayer(std::size_t in_ch, std::size_t out_ch, std::size_t kernel, std::size_t stride,
                      std::size_t in_len)
        : conv1_{in_ch, out_ch, kernel, stride, in_len},
          conv2_{out_ch, out_ch, kernel, 1, conv1_.out_len()},
          skip_{in_ch, out_ch, 1, stride, in_len}
    {
        if (kernel % 2 == 0 || kernel == 0 || stride == 0) {
            throw ShapeError("conv_resblock needs an odd kernel and a positive stride");
        }
    }

    bool projected() const { return conv1_.in_ch != conv1_.out_ch || conv1_.stride != 1; }

    Shape out_shape() const override { return {conv1_.out_ch, conv1_.out_len()}; }

    std::vector<Parameter> make_params(const std::string& prefix, Rng& init) const override
    {
        std::size_t in_ch = conv1_.in_ch, out_ch = conv1_.out_ch, k = conv1_.kernel;
        std::vector<Parameter> ps;
        ps.push_back({prefix + ".w1", Tensor({out_ch, in_ch * k})});
        init_uniform(ps.back().value, std::sqrt(6.0 / static_cast<double>(in_ch * k)), init);
        ps.push_back({prefix + ".b1", Tensor({out_ch})});
        ps.push_back({prefix + ".w2", Tensor({out_ch, out_ch * k})});
        init_uniform(ps.back().value, 0.5 * std::sqrt(3.0 / static_cast<double>(out_ch * k)), init);
        ps.push_back({prefix + ".b2", Tensor({out_ch})});
        if (projected()) {
            ps.push_back({prefix + ".ws", Tensor({out_ch, in_ch})});
            init_uniform(ps.back().value, std::sqrt(3.0 / static_cast<double>(in_ch)), init);
            ps.push_back({prefix + ".bs", Tensor({out_ch})});
        }
        return ps;
    }

    Tensor forward(std::span<const Parameter> p, const Tensor& x, const FwdCtx&,
                   std::vector<Tensor>& saved) const override
    {
        std::size_t batch = x.batch();
        Tensor a = conv1_.forward(x, batch, p[0].value, p[1].value);
        Tensor h = silu_forward(a);
        Tensor y = conv2_.forward(h, batch, p[2].value, p[3].value);
        if (projected()) {
            Tensor s = skip_.forward(x, batch, p[4].value, p[5].value);
            for (std::size_t i = 0; i < y.size(); ++i) {
                y[i] += s[i];
            }
        } else {
            for (std::size_t i = 0; i < y.size(); ++i) {
                y[i] += x[i];
            }
        }
        saved = {x, std::move(a), std::move(h)};
        return y;
    }

    Tensor backward(std::span<const Parameter> p, const std::vector<Tensor>& saved, const Tensor& gy,
                    std::span<Tensor> g, Tensor*) const override
    {
        const Tensor& x = saved[0];
        const Tensor& a = saved[1];
        const Tensor& h = saved[2];
        std::size_t batch = x.batch();
        Tensor gh = conv2_.backward(h, batch, p[2].value, gy, g[2], g[3]);
        Tensor ga = silu_backward(a, gh);
        Tensor gx = conv1_.backward(x, batch, p[0].value, ga, g[0], g[1]);
        if (projected()) {
            Tensor gs = skip_.backward(x, batch, p[4].value, gy, g[4], g[5]);
            for (std::size_t i = 0; i < gx.size(); ++i) {
                gx[i] += gs[i];
            }
        } else {
            for (std::size_t i = 0; i < gx.size(); ++i) {
                gx[i] += gy[i];
            }
        }
        return gx;
    }

private:
    Conv1d conv1_, conv2_, skip_;
};

class GlobalAvgPoolLayer final : public Layer {
public:
    GlobalAvgPoolLayer(std::size_t channels, std::size_t len) : channels_(channels), len_(len) {}

    Shape out_shape() const override { return {channels_}; }
    std::vector<Parameter> make_params(const std::string&, Rng&) const override { return {}; }

    Tensor forward(std::span<const Parameter>, const Tensor& x, const FwdCtx&,
                   std::vector<Tensor>& saved) const override
    {
        std::size_t batch = x.batch();
        Tensor y({batch, channels_});
        for (std::size_t r = 0; r < batch * channels_; ++r) {
            const double* src = x.data() + r * len_;
            double acc = 0.0;
            for (std::size_t t = 0; t < len_; ++t) {
                acc += src[t];
            }
            y[r] = acc / static_cast<double>(len_);
        }
        saved.clear();
        return y;
    }

    Tensor backward(std::span<const Parameter>, const std::vector<Tensor>&, const Tensor& gy, std::span<Tensor>,
                    Tensor*) const override
    {
        std::size_t batch = gy.batch();
        Tensor gx({batch, channels_, len_});
        double inv = 1.0 / static_cast<double>(len_);
        for (std::size_t r = 0; r < batch * channels_; ++r) {
            double v = gy[r] * inv;
            std::fill(gx.data() + r * len_, gx.data() + (r + 1) * len_, v);
        }
        return gx;
    }

private:
    std::size_t channels_, len_;
};

// Inverted dropout: train mode scales kept units by 1/(1-rate).
class DropoutLayer final : public Layer {
public:
    DropoutLayer(double rate, Shape shape) : rate_(rate), shape_(std::move(shape))
    {
        if (!(rate >= 0.0 && rate < 1.0)) {
            throw std::invalid_argument("dropout rate must be in [0, 1)");
        }
    }

    Shape out_shape() const override { return shape_; }
    std::vector<Parameter> make_params(const std::string&, Rng&) const override { return {}; }

    Tensor forward(std::span<const Parameter>, const Tensor& x, const FwdCtx& ctx,
                   std::vector<Tensor>& saved) const override
    {
        if (ctx.mode == Mode::eval || rate_ == 0.0) {
            saved.clear();
            return x;
        }
        if (ctx.rng == nullptr) {
            throw std::invalid_argument("train-mode dropout requires an rng");
        }
        Tensor mask(x.shape);
        double keep = 1.0 / (1.0 - rate_);
        Tensor y(x.shape);
        for (std::size_t i = 0; i < x.size(); ++i) {
            mask[i] = ctx.rng->uniform() < rate_ ? 0.0 : keep;
            y[i] = x[i] * mask[i];
        }
        saved = {std::move(mask)};
        return y;
    }

    Tensor backward(std::span<const Parameter>, const std::vector<Tensor>& saved, const Tensor& gy,
                    std::span<Tensor>, Tensor*) const override
    {
        if (saved.empty()) {
            return gy;
        }
        Tensor gx(gy.shape);
        for (std::size_t i = 0; i < gy.size(); ++i) {
            gx[i] = gy[i] * saved[0][i];
        }
        return gx;
    }

private:
    double rate_;
    Shape shape_;
};

// gamma = Wg c + bg, beta = Wb c + bb, y = gamma (.) h + beta.
class FilmLayer final : public Layer {
public:
    FilmLayer(std::size_t width, std::size_t context_width) : width_(width), cw_(context_width)
    {
        if (context_width == 0) {
            throw ShapeError("film layer needs a network context width");
        }
    }

    Shape out_shape() const override { return {width_}; }

    std::vector<Parameter> make_params(const std::string& prefix, Rng&) const override
    {
        return {Parameter{prefix + ".wg", Tensor({width_, cw_})}, Parameter{prefix + ".bg", Tensor({width_}, 1.0)},
                Parameter{prefix + ".wb", Tensor({width_, cw_})}, Parameter{prefix + ".bb", Tensor({width_})}};
    }

    Tensor forward(std::span<const Parameter> p, const Tensor& h, const FwdCtx& ctx,
                   std::vector<Tensor>& saved) const override
    {
        if (ctx.context == nullptr) {
            throw std::invalid_argument("film layer requires a conditioning context");
        }
        const Tensor& c = *ctx.context;
        std::size_t rows = h.batch();
        if (c.batch() != rows || c.row_size() != cw_) {
            throw ShapeError("context shape " + shape_string(c.shape) + " does not match film context width " +
                             std::to_string(cw_));
        }
        Tensor gamma = affine(c, rows, cw_, p[0].value, p[1].value, width_);
        Tensor beta = affine(c, rows, cw_, p[2].value, p[3].value, width_);
        Tensor y = film_modulate(h, gamma, beta);
        saved = {h, std::move(gamma), c};
        return y;
    }

    Tensor backward(std::span<const Parameter> p, const std::vector<Tensor>& saved, const Tensor& gy,
                    std::span<Tensor> g, Tensor* context_grad) const override
    {
        const Tensor& h = saved[0];
        const Tensor& gamma = saved[1];
        const Tensor& c = saved[2];
        std::size_t rows = h.batch();
        Tensor gh(h.shape), ggamma({rows, width_});
        for (std::size_t i = 0; i < h.size(); ++i) {
            gh[i] = gy[i] * gamma[i];
            ggamma[i] = gy[i] * h[i];
        }
        Tensor gbeta({rows, width_}, gy.values);
        bool need_dc = context_grad != nullptr;
        Tensor gc1 = affine_backward(c, rows, cw_, p[0].value, width_, ggamma, g[0], g[1], need_dc);
        Tensor gc2 = affine_backward(c, rows, cw_, p[2].value, width_, gbeta, g[2], g[3], need_dc);
        if (need_dc) {
            if (context_grad->size() != c.size()) {
                *context_grad = Tensor(c.shape);
            }
            for (std::size_t i = 0; i < c.size(); ++i) {
                (*context_grad)[i] += gc1[i] + gc2[i];
            }
        }
        return gh;
    }

private:
    std::size_t width_, cw_;
};

} // namespace

// ---------------------------------------------------------------------------

std::string shape_string(const Shape& s)
{
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < s.size(); ++i) {
        os << (i ? "," : "") << s[i];
    }
    os << ')';
    return os.str();
}

bool Tensor::all_finite() const
{
    for (double v : values) {
        if (!std::isfinite(v)) {
            return false;
        }
    }
    return true;
}

Tensor Tensor::reshaped(Shape s) const
{
    if (shape_size(s) != values.size()) {
        throw ShapeError("cannot reshape " + shape_string(shape) + " to " + shape_string(s));
    }
    return Tensor(std::move(s), values);
}

const char* to_string(LayerKind kind)
{
    switch (kind) {
    case LayerKind::linear:
        return "linear";
    case LayerKind::resblock1d:
        return "resblock1d";
    case LayerKind::conv_resblock:
        return "conv_resblock";
    case LayerKind::global_avg_pool:
        return "global_avg_pool";
    case LayerKind::dropout:
        return "dropout";
    case LayerKind::film:
        return "film";
    case LayerKind::activation:
        return "activation";
    }
    return "?";
}

Network::Network(std::vector<LayerSpec> specs, Shape sample_shape, std::string prefix, Rng& init,
                 std::size_t context_width)
    : specs_(std::move(specs)), input_shape_(sample_shape), context_width_(context_width)
{
    Shape cur = std::move(sample_shape);
    for (std::size_t i = 0; i < specs_.size(); ++i) {
        const LayerSpec& s = specs_[i];
        std::shared_ptr<const Layer> layer;
        auto mismatch = [&](const std::string& want) {
            return ShapeError("layer " + std::to_string(i) + " (" + to_string(s.kind) + ") expects " + want +
                              ", got " + shape_string(cur));
        };
        switch (s.kind) {
        case LayerKind::linear:
            if (shape_size(cur) != s.in) {
                throw mismatch(std::to_string(s.in) + " input features");
            }
            layer = std::make_shared<LinearLayer>(s.in, s.out);
            break;
        case LayerKind::resblock1d:
            if (cur.size() != 1 || cur[0] != s.in) {
                throw mismatch("(" + std::to_string(s.in) + ")");
            }
            layer = std::make_shared<Resblock1dLayer>(s.in, s.out);
            break;
        case LayerKind::conv_resblock:
            if (cur.size() != 2 || cur[0] != s.in) {
                throw mismatch("(" + std::to_string(s.in) + ", T)");
            }
            layer = std::make_shared<ConvResblockLayer>(s.in, s.out, s.kernel, s.stride, cur[1]);
            break;
        case LayerKind::global_avg_pool:
            if (cur.size() != 2) {
                throw mismatch("(C, T)");
            }
            layer = std::make_shared<GlobalAvgPoolLayer>(cur[0], cur[1]);
            break;
        case LayerKind::dropout:
            layer = std::make_shared<DropoutLayer>(s.rate, cur);
            break;
        case LayerKind::film:
            if (cur.size() != 1 || cur[0] != s.width) {
                throw mismatch("(" + std::to_string(s.width) + ")");
            }
            layer = std::make_shared<FilmLayer>(s.width, context_width_);
            break;
        case LayerKind::activation:
            layer = std::make_shared<ActivationLayer>(cur);
            break;
        }
        param_offset_.push_back(params_.size());
        for (auto& p : layer->make_params(prefix + "." + std::to_string(i), init)) {
            params_.push_back(std::move(p));
        }
        cur = layer->out_shape();
        layers_.push_back(std::move(layer));
    }
    param_offset_.push_back(params_.size());
    output_shape_ = cur;
}

Tensor Network::forward(const Tensor& x, Mode mode, Rng* rng, Tape* tape, const Tensor* context) const
{
    if (x.shape.size() != input_shape_.size() + 1 ||
        !std::equal(input_shape_.begin(), input_shape_.end(), x.shape.begin() + 1) || x.batch() == 0) {
        throw ShapeError("network input " + shape_string(x.shape) + " does not match (batch, " +
                         shape_string(input_shape_) + ")");
    }
    if (context != nullptr && context_width_ == 0) {
        throw ShapeError("network takes no context");
    }
    FwdCtx ctx{mode, rng, context};
    std::vector<Tensor> scratch;
    if (tape != nullptr) {
        tape->saved.assign(layers_.size(), {});
        tape->input_shape = x.shape;
        tape->used_context = context != nullptr;
    }
    Tensor cur = x;
    std::size_t batch = x.batch();
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        std::span<const Parameter> p(params_.data() + param_offset_[i], param_offset_[i + 1] - param_offset_[i]);
        auto& saved = tape != nullptr ? tape->saved[i] : scratch;
        cur = layers_[i]->forward(p, cur, ctx, saved);
        cur.shape = with_batch(batch, layers_[i]->out_shape());
        if (!cur.all_finite()) {
            throw NumericError("non-finite activation after layer " + std::to_string(i) + " (" +
                               to_string(specs_[i].kind) + ")");
        }
    }
    if (tape != nullptr) {
        tape->output_shape = cur.shape;
    }
    return cur;
}

Tensor Network::backward(const Tape& tape, const Tensor& output_grad, std::vector<Tensor>& grads,
                         Tensor* context_grad) const
{
    if (tape.saved.size() != layers_.size()) {
        throw ShapeError("tape was not recorded by this network");
    }
    if (output_grad.shape != tape.output_shape) {
        throw ShapeError("output grad " + shape_string(output_grad.shape) + " does not match recorded output " +
                         shape_string(tape.output_shape));
    }
    if (grads.size() != params_.size()) {
        throw ShapeError("gradient list does not match parameter list");
    }
    Tensor g = output_grad;
    for (std::size_t i = layers_.size(); i-- > 0;) {
        std::span<const Parameter> p(params_.data() + param_offset_[i], param_offset_[i + 1] - param_offset_[i]);
        std::span<Tensor> gp(grads.data() + param_offset_[i], param_offset_[i + 1] - param_offset_[i]);
        g = layers_[i]->backward(p, tape.saved[i], g, gp, context_grad);
    }
    g.shape = tape.input_shape;
    return g;
}

std::vector<Tensor> Network::zero_grads() const
{
    std::vector<Tensor> out;
    out.reserve(params_.size());
    for (const auto& p : params_) {
        out.emplace_back(p.value.shape);
    }
    return out;
}

Parameter& Network::parameter(const std::string& name)
{
    for (auto& p : params_) {
        if (p.name == name) {
            return p;
        }
    }
    throw std::out_of_range("no parameter named " + name);
}

const Parameter& Network::parameter(const std::string& name) const
{
    return const_cast<Network*>(this)->parameter(name);
}

std::size_t Network::parameter_count() const
{
    std::size_t n = 0;
    for (const auto& p : params_) {
        n += p.value.size();
    }
    return n;
}

Tensor film_modulate(const Tensor& h, const Tensor& gamma, const Tensor& beta)
{
    if (gamma.shape != h.shape || beta.shape != h.shape) {
        throw ShapeError("film: gamma/beta " + shape_string(gamma.shape) + "/" + shape_string(beta.shape) +
                         " do not match hidden " + shape_string(h.shape));
    }
    Tensor y(h.shape);
    for (std::size_t i = 0; i < h.size(); ++i) {
        y[i] = gamma[i] * h[i] + beta[i];
    }
    return y;
}

void adam_step(std::span<const ParamRef> params, std::span<const Tensor> grads, OptimizerState& state)
{
    if (params.size() != grads.size()) {
        throw ShapeError("adam: parameter and gradient lists differ in length");
    }
    if (!(state.lr > 0.0)) {
        throw std::invalid_argument("adam: learning rate must be positive");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (grads[i].size() != params[i].value->size()) {
            throw ShapeError("adam: gradient shape mismatch for " + params[i].name);
        }
        if (!grads[i].all_finite()) {
            throw NumericError("adam: non-finite gradient for " + params[i].name);
        }
    }
    if (state.m.empty()) {
        for (const auto& p : params) {
            state.m.emplace_back(p.value->size(), 0.0);
            state.v.emplace_back(p.value->size(), 0.0);
        }
    } else if (state.m.size() != params.size()) {
        throw ShapeError("adam: optimizer state does not match parameters");
    }
    state.step += 1;
    double t = static_cast<double>(state.step);
    double bc1 = 1.0 - std::pow(state.beta1, t);
    double bc2 = 1.0 - std::pow(state.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& m = state.m[i];
        auto& v = state.v[i];
        auto& p = params[i].value->values;
        const auto& g = grads[i].values;
        for (std::size_t k = 0; k < p.size(); ++k) {
            m[k] = state.beta1 * m[k] + (1.0 - state.beta1) * g[k];
            v[k] = state.beta2 * v[k] + (1.0 - state.beta2) * g[k] * g[k];
            double mhat = m[k] / bc1;
            double vhat = v[k] / bc2;
            p[k] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
        }
    }
}

double clip_global_norm(std::span<Tensor> grads, double max_norm)
{
    double sq = 0.0;
    for (const auto& g : grads) {
        for (double v : g.values) {
            sq += v * v;
        }
    }
    double norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0.0) {
        double scale = max_norm / norm;
        for (auto& g : grads) {
            for (double& v : g.values) {
                v *= scale;
            }
        }
    }
    return norm;
}

} // namespace semcodec
