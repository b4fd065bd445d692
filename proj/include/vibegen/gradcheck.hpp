#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "vibegen/kernels.hpp"
#include "vibegen/tensor.hpp"

namespace vibegen {

/// One block of coordinates to perturb, with the analytic gradient to compare.
struct GradCheckTarget {
    std::string name;
    std::span<double> values;
    std::span<const double> analytic;
};

struct GradCheckResult {
    std::string label;
    double max_rel_error = 0.0;
    std::string worst_target;
    std::size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    std::size_t coordinates = 0;
};

/// |a - b| / max(|a|, |b|, floor).
inline double relative_error(double a, double b, double floor = 1e-12) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// Central differences (f(x+h) - f(x-h)) / 2h for every coordinate of every
/// target, compared against the analytic gradient by relative_error with the
/// given denominator floor. Returns the worst coordinate.
inline GradCheckResult finite_difference_check(const std::function<double()>& loss,
                                               std::span<const GradCheckTarget> targets, double h = 1e-6,
                                               double floor = 1e-12) {
    GradCheckResult result;
    for (const auto& target : targets) {
        if (target.values.size() != target.analytic.size())
            throw DimensionError("gradcheck: target '" + target.name + "' has mismatched analytic size");
        for (std::size_t i = 0; i < target.values.size(); ++i) {
            const double saved = target.values[i];
            target.values[i] = saved + h;
            const double up = loss();
            target.values[i] = saved - h;
            const double down = loss();
            target.values[i] = saved;
            const double numeric = (up - down) / (2.0 * h);
            const double analytic = target.analytic[i];
            ++result.coordinates;
            const double err = relative_error(analytic, numeric, floor);
            if (err > result.max_rel_error || !std::isfinite(err)) {
                result.max_rel_error = err;
                result.worst_target = target.name;
                result.worst_index = i;
                result.worst_analytic = analytic;
                result.worst_numeric = numeric;
            }
        }
    }
    return result;
}

// ---------------------------------------------------------------------------
// Per-layer suites in 64-bit. Each uses loss = <layer(x), probe> so the
// analytic gradient is the layer backward applied to `probe`.

namespace gradcheck {

template <class Rng>
Tensor<double> random_tensor(Shape shape, Rng& rng, double stddev = 1.0) {
    Tensor<double> t(shape);
    fill_normal(t.span(), rng, 0.0, stddev);
    return t;
}

template <class Rng>
void randomize(std::vector<double>& v, Rng& rng, double stddev = 1.0) {
    fill_normal(std::span<double>(v), rng, 0.0, stddev);
}

template <class Rng>
GradCheckResult conv(Shape in_shape, ConvSpec spec, Rng& rng, double h = 1e-6) {
    ConvParams<double> p(spec);
    randomize(p.weight, rng, 0.5);
    randomize(p.bias, rng, 0.5);
    Tensor<double> x = random_tensor(in_shape, rng);
    auto forward = [&] {
        return spec.transposed ? conv_transpose1d_forward(x, p) : conv1d_forward(x, p);
    };
    Tensor<double> probe = random_tensor(forward().shape(), rng);
    p.zero_grad();
    Tensor<double> gx = spec.transposed ? conv_transpose1d_backward(x, probe, p) : conv1d_backward(x, probe, p);
    std::vector<GradCheckTarget> targets{
        {"input", x.span(), gx.span()},
        {"weight", p.weight, p.grad_weight},
        {"bias", p.bias, p.grad_bias},
    };
    auto r = finite_difference_check([&] { return dot(forward(), probe); }, targets, h);
    r.label = spec.transposed ? "conv_transpose1d" : "conv1d";
    return r;
}

template <class Rng>
GradCheckResult batchnorm(Shape shape, Rng& rng, double h = 1e-6) {
    NormParams<double> p(shape.channels);
    randomize(p.gain, rng, 1.0);
    randomize(p.shift, rng, 1.0);
    Tensor<double> x = random_tensor(shape, rng);
    // Running statistics change on every train-mode call but do not feed the output.
    auto forward = [&] {
        NormParams<double> scratch = p;
        return batchnorm1d_forward(x, scratch, Mode::train);
    };
    Tensor<double> probe = random_tensor(shape, rng);
    NormCache<double> cache;
    NormParams<double> scratch = p;
    batchnorm1d_forward(x, scratch, Mode::train, &cache);
    p.zero_grad();
    Tensor<double> gx = batchnorm1d_backward(probe, cache, p);
    std::vector<GradCheckTarget> targets{
        {"input", x.span(), gx.span()},
        {"gain", p.gain, p.grad_gain},
        {"shift", p.shift, p.grad_shift},
    };
    auto r = finite_difference_check([&] { return dot(forward(), probe); }, targets, h);
    r.label = "batchnorm1d";
    return r;
}

template <class Rng>
GradCheckResult instancenorm(Shape shape, Rng& rng, double h = 1e-6) {
    NormParams<double> p(shape.channels);
    randomize(p.gain, rng, 1.0);
    randomize(p.shift, rng, 1.0);
    Tensor<double> x = random_tensor(shape, rng);
    Tensor<double> probe = random_tensor(shape, rng);
    NormCache<double> cache;
    instancenorm1d_forward(x, p, &cache);
    p.zero_grad();
    Tensor<double> gx = instancenorm1d_backward(probe, cache, p);
    std::vector<GradCheckTarget> targets{
        {"input", x.span(), gx.span()},
        {"gain", p.gain, p.grad_gain},
        {"shift", p.shift, p.grad_shift},
    };
    auto r = finite_difference_check([&] { return dot(instancenorm1d_forward(x, p), probe); }, targets, h);
    r.label = "instancenorm1d";
    return r;
}

/// Inputs are kept at least 0.1 away from the kink at zero.
template <class Rng>
GradCheckResult activation(Shape shape, Activation act, Rng& rng, double h = 1e-6) {
    Tensor<double> x = random_tensor(shape, rng);
    for (auto& v : x.span()) v = v >= 0 ? v + 0.1 : v - 0.1;
    Tensor<double> probe = random_tensor(shape, rng);
    Tensor<double> gx = activation_backward(x, probe, act);
    std::vector<GradCheckTarget> targets{{"input", x.span(), gx.span()}};
    auto r = finite_difference_check([&] { return dot(activation_forward(x, act), probe); }, targets, h);
    r.label = act.kind == ActivationKind::relu ? "relu" : act.kind == ActivationKind::leaky_relu ? "leaky_relu" : "identity";
    return r;
}

/// Mask drawn once and replayed for every evaluation.
template <class Rng>
GradCheckResult dropout(Shape shape, double rate, Rng& rng, double h = 1e-6) {
    Tensor<double> x = random_tensor(shape, rng);
    Tensor<double> mask = dropout_mask<double>(shape, rate, rng);
    Tensor<double> probe = random_tensor(shape, rng);
    Tensor<double> gx = dropout_backward(probe, mask);
    std::vector<GradCheckTarget> targets{{"input", x.span(), gx.span()}};
    auto r = finite_difference_check([&] { return dot(dropout_apply(x, mask), probe); }, targets, h);
    r.label = "dropout";
    return r;
}

}  // namespace gradcheck

}  // namespace vibegen
