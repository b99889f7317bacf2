#pragma once

#include <cstdint>
#include <functional>
#include <span>

#include "semcodec/network.hpp"

namespace semcodec {

struct GradCheckOptions {
    double step = 1e-3;
    std::size_t samples_per_tensor = 6; // probes per parameter tensor (all entries if smaller)
    std::uint64_t seed = 0;
};

// Central-difference comparison of precomputed analytic gradients.
// Error per probe: |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
// `loss` is re-evaluated twice per probe and must read the current values
// behind `params`. Returns the maximum error over probes.
double gradient_check(std::span<const ParamRef> params, std::span<const Tensor> analytic,
                      const std::function<double()>& loss, const GradCheckOptions& opts = {});

// Scalar loss on a network output: returns (value, d value / d output).
using OutputLoss = std::function<std::pair<double, Tensor>(const Tensor&)>;

// Checks every parameter tensor of `net` plus the input (and context when
// given) for an eval-mode forward followed by `loss_fn`.
double gradient_check(Network& net, const Tensor& input, const OutputLoss& loss_fn, const GradCheckOptions& opts = {},
                      const Tensor* context = nullptr);

} // namespace semcodec
