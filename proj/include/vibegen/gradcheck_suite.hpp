#pragma once

#include <string>
#include <vector>

#include "vibegen/gradcheck.hpp"
#include "vibegen/model.hpp"
#include "vibegen/training.hpp"

namespace vibegen {

/// Denominator floor for the end-to-end chains, scaled by max(1, largest
/// analytic gradient in the check). Central differences carry rounding noise
/// proportional to the activations' scale, so coordinates far below the
/// typical gradient are compared absolutely instead of relatively.
inline constexpr double kChainFloor = 1e-5;

namespace gradcheck {

/// Copies analytic gradients out of the model so later loss evaluations
/// (which re-accumulate into the live buffers) cannot disturb them. A conv
/// bias feeding a normalization layer is cancelled by the mean subtraction, so
/// its gradient is identically zero; those blocks are kept aside and checked
/// against zero rather than against a finite difference of pure noise.
struct FrozenTargets {
    std::vector<std::vector<double>> analytic;
    std::vector<GradCheckTarget> targets;
    std::vector<GradCheckTarget> structural_zeros;

    FrozenTargets(const std::vector<ParamRef<double>>& params, const Network<double>& net) {
        analytic.reserve(params.size());
        for (const auto& p : params) analytic.emplace_back(p.grad.begin(), p.grad.end());
        for (std::size_t k = 0; k < params.size(); ++k) {
            GradCheckTarget t{params[k].name, params[k].value, analytic[k]};
            (feeds_norm(params[k].name, net) ? structural_zeros : targets).push_back(t);
        }
    }

    static bool feeds_norm(const std::string& name, const Network<double>& net) {
        const std::string suffix = ".conv.bias";
        if (name.size() < suffix.size() || name.compare(name.size() - suffix.size(), suffix.size(), suffix) != 0)
            return false;
        const std::string head = name.substr(0, name.size() - suffix.size());
        const std::size_t index = std::stoul(head.substr(head.rfind('.') + 1));
        return net.layers().at(index).spec.norm != NormKind::none;
    }

    double max_abs() const {
        double m = 0.0;
        for (const auto& g : analytic)
            for (double v : g) m = std::max(m, std::abs(v));
        return m;
    }

    /// Finite differences on the ordinary targets, then |analytic| / scale on
    /// the structural zeros, folded into one worst case.
    GradCheckResult check(const std::function<double()>& loss, double h, double floor) const {
        const double scale = std::max(1.0, max_abs());
        GradCheckResult r = finite_difference_check(loss, targets, h, floor * scale);
        for (const auto& t : structural_zeros) {
            for (std::size_t i = 0; i < t.analytic.size(); ++i) {
                ++r.coordinates;
                const double err = std::abs(t.analytic[i]) / scale;
                if (err > r.max_rel_error) {
                    r.max_rel_error = err;
                    r.worst_target = t.name;
                    r.worst_index = i;
                    r.worst_analytic = t.analytic[i];
                    r.worst_numeric = 0.0;
                }
            }
        }
        return r;
    }
};

/// Shrunken model with random conv biases, so no pre-activation sits exactly
/// on an activation kink (zero biases over an all-zero receptive field would).
inline GanModel<double> chain_model(std::uint64_t seed) {
    GanModel<double> model(GanArch::tiny(), seed, 0.3);
    Rng rng(seed + 303);
    for (Network<double>* net : {&model.generator, &model.critic})
        for (auto& layer : net->layers()) randomize(layer.conv.bias, rng, 0.3);
    return model;
}

/// dL_C / d(critic parameters) on the shrunken model with fixed dropout masks.
inline GradCheckResult critic_chain(std::uint64_t seed, double h = 1e-6, double floor = 1e-12) {
    GanModel<double> model = chain_model(seed);
    Rng rng(seed + 101);
    Tensor<double> fake = generator_forward(model, sample_latent<double>(model.arch, 3, rng), Mode::train);
    Tensor<double> real = random_tensor(model.signal_shape(3), rng);
    CriticMasks<double> masks;
    model.critic.zero_grad();
    critic_loss_backward(model, fake, real, rng, &masks, false);
    FrozenTargets frozen(model.critic.params("critic"), model.critic);
    auto loss = [&] { return critic_loss_backward(model, fake, real, rng, &masks, true); };
    auto r = frozen.check(loss, h, floor);
    r.label = "critic_chain";
    return r;
}

/// dL_G / d(generator parameters) through the shrunken critic.
inline GradCheckResult generator_chain(std::uint64_t seed, double h = 1e-6, double floor = 1e-12) {
    GanModel<double> model = chain_model(seed);
    Rng rng(seed + 202);
    Tensor<double> z = sample_latent<double>(model.arch, 3, rng);
    std::vector<Tensor<double>> masks;
    model.generator.zero_grad();
    generator_loss_backward(model, z, rng, &masks, false);
    FrozenTargets frozen(model.generator.params("generator"), model.generator);
    auto loss = [&] { return generator_loss_backward(model, z, rng, &masks, true); };
    auto r = frozen.check(loss, h, floor);
    r.label = "generator_chain";
    return r;
}

}  // namespace gradcheck

/// Every layer kernel plus both end-to-end chains, 64-bit.
inline std::vector<GradCheckResult> run_gradcheck_suite(std::uint64_t seed = 7, double h = 1e-6) {
    Rng rng(seed);
    std::vector<GradCheckResult> out;
    out.push_back(gradcheck::conv({2, 3, 16}, ConvSpec{3, 4, 4, 2, 1, false}, rng, h));
    out.push_back(gradcheck::conv({2, 4, 8}, ConvSpec{4, 3, 4, 2, 1, true}, rng, h));
    out.push_back(gradcheck::batchnorm({4, 3, 16}, rng, h));
    out.push_back(gradcheck::instancenorm({2, 3, 32}, rng, h));
    out.push_back(gradcheck::activation({2, 3, 16}, Activation::relu(), rng, h));
    out.push_back(gradcheck::activation({2, 3, 16}, Activation::leaky_relu(0.2), rng, h));
    out.push_back(gradcheck::dropout({2, 3, 16}, 0.3, rng, h));
    out.push_back(gradcheck::critic_chain(seed, h, kChainFloor));
    out.push_back(gradcheck::generator_chain(seed, h, kChainFloor));
    return out;
}

}  // namespace vibegen
