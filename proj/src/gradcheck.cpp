#include "semcodec/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "semcodec/rng.hpp"

namespace semcodec {

double gradient_check(std::span<const ParamRef> params, std::span<const Tensor> analytic,
                      const std::function<double()>& loss, const GradCheckOptions& opts)
{
    if (params.size() != analytic.size()) {
        throw ShapeError("gradient_check: parameter and gradient lists differ");
    }
    Rng rng(opts.seed);
    double worst = 0.0;
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& value = *params[i].value;
        std::size_t n = value.size();
        std::vector<std::size_t> probes;
        if (n <= opts.samples_per_tensor) {
            for (std::size_t k = 0; k < n; ++k) {
                probes.push_back(k);
            }
        } else {
            for (std::size_t k = 0; k < opts.samples_per_tensor; ++k) {
                probes.push_back(static_cast<std::size_t>(rng.below(n)));
            }
        }
        for (std::size_t k : probes) {
            double saved = value[k];
            value[k] = saved + opts.step;
            double up = loss();
            value[k] = saved - opts.step;
            double down = loss();
            value[k] = saved;
            double numeric = (up - down) / (2.0 * opts.step);
            double a = analytic[i][k];
            double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
            worst = std::max(worst, std::abs(a - numeric) / denom);
        }
    }
    return worst;
}

double gradient_check(Network& net, const Tensor& input, const OutputLoss& loss_fn, const GradCheckOptions& opts,
                      const Tensor* context)
{
    Tensor x = input;
    Tensor c = context != nullptr ? *context : Tensor{};
    const Tensor* cptr = context != nullptr ? &c : nullptr;

    Tape tape;
    Tensor out = net.forward(x, Mode::eval, nullptr, &tape, cptr);
    auto [value, gout] = loss_fn(out);
    (void)value;
    auto grads = net.zero_grads();
    Tensor gctx;
    if (cptr != nullptr) {
        gctx = Tensor(c.shape);
    }
    Tensor gx = net.backward(tape, gout, grads, cptr != nullptr ? &gctx : nullptr);

    std::vector<ParamRef> refs;
    std::vector<Tensor> analytic;
    for (std::size_t i = 0; i < net.parameters().size(); ++i) {
        refs.push_back({net.parameters()[i].name, &net.parameters()[i].value});
        analytic.push_back(grads[i]);
    }
    refs.push_back({"input", &x});
    analytic.push_back(gx);
    if (cptr != nullptr) {
        refs.push_back({"context", &c});
        analytic.push_back(gctx);
    }
    auto eval = [&] { return loss_fn(net.forward(x, Mode::eval, nullptr, nullptr, cptr)).first; };
    return gradient_check(refs, analytic, eval, opts);
}

} // namespace semcodec
