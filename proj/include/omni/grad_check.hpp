#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "omni/error.hpp"
#include "omni/rng.hpp"
#include "omni/tensor.hpp"

namespace omni {

// A differentiable op bundled with its hand-written backward pass.
// backward(inputs, dout) returns one gradient per input, shape-matched.
struct DifferentiableOp {
    std::string name;
    std::function<Tensor(const std::vector<Tensor>&)> forward;
    std::function<std::vector<Tensor>(const std::vector<Tensor>&, const Tensor&)> backward;
};

// Central-difference check of a hand-written backward pass.
//
// A random cotangent w turns the op into the scalar L(x) = sum(w * f(x)).
// The analytic gradient of L is backward(inputs, w); the reference gradient
// is the central difference of L, accumulated in float64 so the oracle stays
// trustworthy while the op itself runs in float32. Returns the max over all
// input coordinates of |analytic - reference| / max(1, |reference|).
inline double grad_check(const DifferentiableOp& op, std::vector<Tensor> inputs, double step,
                         std::uint64_t seed = 17) {
    if (!(step > 1e-5 && step < 1e-2)) {
        throw InputError("grad_check step " + std::to_string(step) +
                         " outside (1e-5, 1e-2)");
    }
    if (!op.forward || !op.backward) {
        throw ConfigError("op '" + op.name + "' has no registered forward/backward");
    }

    const Tensor out0 = op.forward(inputs);
    if (!out0.all_finite()) {
        throw NumericError("non-finite output from op '" + op.name + "'");
    }

    Rng rng(seed);
    Tensor cotangent(out0.shape);
    for (float& v : cotangent.data) v = static_cast<float>(rng.uniform(-1.0, 1.0));

    const std::vector<Tensor> analytic = op.backward(inputs, cotangent);
    if (analytic.size() != inputs.size()) {
        throw DimensionError("op '" + op.name + "' returned " + std::to_string(analytic.size()) +
                             " gradients for " + std::to_string(inputs.size()) + " inputs");
    }
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        if (analytic[i].shape != inputs[i].shape) {
            throw DimensionError("op '" + op.name + "' gradient " + std::to_string(i) +
                                 " shape " + Tensor::shape_str(analytic[i].shape) +
                                 " does not match input " + Tensor::shape_str(inputs[i].shape));
        }
    }

    auto weighted_sum = [&](const std::vector<Tensor>& xs) -> double {
        const Tensor y = op.forward(xs);
        double acc = 0.0;
        for (std::size_t i = 0; i < y.data.size(); ++i) {
            acc += static_cast<double>(y.data[i]) * static_cast<double>(cotangent.data[i]);
        }
        if (!std::isfinite(acc)) {
            throw NumericError("non-finite intermediate while checking op '" + op.name + "'");
        }
        return acc;
    };

    double max_rel = 0.0;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        for (std::size_t c = 0; c < inputs[i].data.size(); ++c) {
            const float saved = inputs[i].data[c];
            inputs[i].data[c] = static_cast<float>(saved + step);
            const double plus = weighted_sum(inputs);
            inputs[i].data[c] = static_cast<float>(saved - step);
            const double minus = weighted_sum(inputs);
            inputs[i].data[c] = saved;
            const double reference = (plus - minus) / (2.0 * step);
            const double a = analytic[i].data[c];
            const double rel = std::abs(a - reference) / std::max(1.0, std::abs(reference));
            max_rel = std::max(max_rel, rel);
        }
    }
    return max_rel;
}

}  // namespace omni
