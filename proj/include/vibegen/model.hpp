#pragma once

// Generator and critic of the 1-D W-DCGAN.
//
// Architecture derivation: the layer "filter" values (64 then 4) are kernel
// sizes, and the 256-wide latent is 256 channels at length 1. Under that
// reading the generator's transposed convolutions (k=64,s=2,p=0 then four
// k=4,s=2,p=1) trace lengths 1 -> 64 -> 128 -> 256 -> 512 -> 1024, and the
// critic's convolutions (four k=4,s=2,p=1 then k=64,s=2,p=0) trace
// 1024 -> 512 -> 256 -> 128 -> 64 -> 1. Channel widths halve/double per layer
// and can be changed through GanArch.

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "vibegen/errors.hpp"
#include "vibegen/kernels.hpp"
#include "vibegen/optim.hpp"
#include "vibegen/tensor.hpp"

namespace vibegen {

using Rng = std::mt19937_64;

struct LayerSpec {
    ConvSpec conv;
    NormKind norm = NormKind::none;
    Activation act = Activation::identity();
    bool dropout = false;

    bool operator==(const LayerSpec&) const = default;
};

struct NetworkArch {
    std::vector<LayerSpec> layers;

    bool operator==(const NetworkArch&) const = default;

    /// Lengths after each layer, starting with `input_length`.
    std::vector<std::size_t> length_trace(std::size_t input_length) const {
        std::vector<std::size_t> trace{input_length};
        for (const auto& l : layers) trace.push_back(l.conv.output_length(trace.back()));
        return trace;
    }
};

struct GanArch {
    std::size_t latent_channels = 256;
    std::size_t latent_length = 1;
    NetworkArch generator;
    NetworkArch critic;
    double dropout_rate = 0.3;

    bool operator==(const GanArch&) const = default;

    std::size_t signal_length() const { return generator.length_trace(latent_length).back(); }

    /// Generator: transposed convs over `gen_channels` (first entry is the
    /// latent width), batch norm + ReLU on every layer but the last.
    /// Critic: convs over `critic_channels`, LeakyReLU(0.2) + dropout on
    /// every layer but the last, instance norm on layers 2..n-1.
    static GanArch from_plan(const std::vector<std::size_t>& gen_channels, const std::vector<ConvSpec>& gen_geometry,
                             const std::vector<std::size_t>& critic_channels,
                             const std::vector<ConvSpec>& critic_geometry, double dropout_rate) {
        if (gen_channels.size() != gen_geometry.size() + 1 || critic_channels.size() != critic_geometry.size() + 1)
            throw ConfigError("arch: channel plan must have one more entry than the layer list");
        GanArch arch;
        arch.latent_channels = gen_channels.front();
        arch.latent_length = 1;
        arch.dropout_rate = dropout_rate;
        const std::size_t ng = gen_geometry.size();
        for (std::size_t i = 0; i < ng; ++i) {
            LayerSpec l;
            l.conv = gen_geometry[i];
            l.conv.in_channels = gen_channels[i];
            l.conv.out_channels = gen_channels[i + 1];
            l.conv.transposed = true;
            const bool last = i + 1 == ng;
            l.norm = last ? NormKind::none : NormKind::batch;
            l.act = last ? Activation::identity() : Activation::relu();
            arch.generator.layers.push_back(l);
        }
        const std::size_t nc = critic_geometry.size();
        for (std::size_t i = 0; i < nc; ++i) {
            LayerSpec l;
            l.conv = critic_geometry[i];
            l.conv.in_channels = critic_channels[i];
            l.conv.out_channels = critic_channels[i + 1];
            l.conv.transposed = false;
            const bool last = i + 1 == nc;
            l.norm = (i == 0 || last) ? NormKind::none : NormKind::instance;
            l.act = last ? Activation::identity() : Activation::leaky_relu(0.2);
            l.dropout = !last;
            arch.critic.layers.push_back(l);
        }
        arch.validate();
        return arch;
    }

    /// Full-size model: 256x1 latent -> 1x1024 signal -> 1x1 score.
    static GanArch standard(double dropout_rate = 0.3) {
        const ConvSpec wide{0, 0, 64, 2, 0, false};
        const ConvSpec narrow{0, 0, 4, 2, 1, false};
        return from_plan({256, 128, 64, 32, 16, 1}, {wide, narrow, narrow, narrow, narrow}, {1, 16, 32, 64, 128, 1},
                         {narrow, narrow, narrow, narrow, wide}, dropout_rate);
    }

    /// Shrunken model for end-to-end gradient checks: latent 8, lengths
    /// 1 -> 4 -> 8 in the generator and 8 -> 4 -> 2 -> 1 in the critic.
    static GanArch tiny(double dropout_rate = 0.3) {
        return from_plan({8, 4, 1}, {ConvSpec{0, 0, 4, 2, 0, true}, ConvSpec{0, 0, 4, 2, 1, true}}, {1, 4, 4, 1},
                         {ConvSpec{0, 0, 4, 2, 1, false}, ConvSpec{0, 0, 4, 2, 1, false}, ConvSpec{0, 0, 2, 2, 0, false}},
                         dropout_rate);
    }

    void validate() const {
        check_dropout_rate(dropout_rate);
        if (generator.layers.empty() || critic.layers.empty()) throw ConfigError("arch: empty network");
        if (latent_channels < 1 || latent_length < 1) throw ConfigError("arch: latent must be non-empty");
        std::size_t channels = latent_channels;
        for (const auto& l : generator.layers) {
            if (!l.conv.transposed) throw ConfigError("arch: generator layers must be transposed convolutions");
            if (l.conv.in_channels != channels) throw ConfigError("arch: generator channel chain is broken");
            channels = l.conv.out_channels;
        }
        const std::size_t signal_channels = channels;
        for (const auto& l : critic.layers) {
            if (l.conv.transposed) throw ConfigError("arch: critic layers must be forward convolutions");
            if (l.conv.in_channels != channels) throw ConfigError("arch: critic channel chain is broken");
            channels = l.conv.out_channels;
        }
        if (signal_channels != 1) throw ConfigError("arch: generator must emit one channel");
        if (channels != 1) throw ConfigError("arch: critic must emit one score channel");
        const auto trace = critic.length_trace(signal_length());
        if (trace.back() != 1) throw ConfigError("arch: critic must reduce the signal to length 1");
        if (critic.layers.back().act.kind != ActivationKind::identity)
            throw ConfigError("arch: critic score must be linear");
    }
};

template <class T>
struct Layer {
    LayerSpec spec;
    ConvParams<T> conv;
    NormParams<T> norm;  // channels == 0 when spec.norm == none

    Layer() = default;
    explicit Layer(const LayerSpec& s)
        : spec(s), conv(s.conv), norm(s.norm == NormKind::none ? 0 : s.conv.out_channels) {}
};

template <class T>
struct LayerCache {
    Tensor<T> input;
    NormCache<T> norm;
    Tensor<T> act_input;
    Tensor<T> mask;
};

template <class T>
struct ForwardCache {
    std::vector<LayerCache<T>> layers;

    /// Output length of each layer.
    std::vector<std::size_t> length_trace() const {
        std::vector<std::size_t> trace;
        for (const auto& l : layers) trace.push_back(l.act_input.length());
        return trace;
    }

    std::vector<Tensor<T>> masks() const {
        std::vector<Tensor<T>> out;
        for (const auto& l : layers) out.push_back(l.mask);
        return out;
    }
};

/// A fixed chain of conv -> [norm] -> activation -> [dropout] layers.
template <class T>
class Network {
public:
    Network() = default;
    explicit Network(const NetworkArch& arch) {
        for (const auto& s : arch.layers) layers_.emplace_back(s);
    }

    std::vector<Layer<T>>& layers() { return layers_; }
    const std::vector<Layer<T>>& layers() const { return layers_; }

    /// `fixed_masks`, when given, replays dropout masks instead of drawing
    /// new ones (train mode only); `rng` may then be null.
    Tensor<T> forward(const Tensor<T>& x, Mode mode, double dropout_rate, Rng* rng, ForwardCache<T>* cache = nullptr,
                      const std::vector<Tensor<T>>* fixed_masks = nullptr) {
        if (cache) cache->layers.assign(layers_.size(), {});
        Tensor<T> h = x;
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            Layer<T>& layer = layers_[i];
            LayerCache<T>* lc = cache ? &cache->layers[i] : nullptr;
            Tensor<T> y = layer.spec.conv.transposed ? conv_transpose1d_forward(h, layer.conv) : conv1d_forward(h, layer.conv);
            if (lc) lc->input = std::move(h);
            switch (layer.spec.norm) {
                case NormKind::batch:
                    y = batchnorm1d_forward(y, layer.norm, mode, lc ? &lc->norm : nullptr);
                    break;
                case NormKind::instance:
                    y = instancenorm1d_forward(y, layer.norm, lc ? &lc->norm : nullptr);
                    break;
                case NormKind::none:
                    break;
            }
            Tensor<T> a = activation_forward(y, layer.spec.act);
            if (lc) lc->act_input = std::move(y);
            if (layer.spec.dropout && mode == Mode::train && dropout_rate > 0.0) {
                Tensor<T> mask;
                if (fixed_masks) {
                    mask = fixed_masks->at(i);
                } else {
                    if (!rng) throw ConfigError("network: train-mode dropout needs an rng");
                    mask = dropout_mask<T>(a.shape(), dropout_rate, *rng);
                }
                a = dropout_apply(a, mask);
                if (lc) lc->mask = std::move(mask);
            }
            h = std::move(a);
        }
        return h;
    }

    /// Backpropagates `grad_out` through the cached forward pass. Parameter
    /// gradients accumulate unless `opts.param_grads` is false. Returns the
    /// gradient at the network input when `opts.input_grad` is set.
    Tensor<T> backward(const Tensor<T>& grad_out, const ForwardCache<T>& cache, BackwardOptions opts = {}) {
        if (cache.layers.size() != layers_.size()) throw DimensionError("network backward: cache does not match network");
        Tensor<T> g = grad_out;
        for (std::size_t k = layers_.size(); k-- > 0;) {
            Layer<T>& layer = layers_[k];
            const LayerCache<T>& lc = cache.layers[k];
            if (!lc.mask.empty()) g = dropout_backward(g, lc.mask);
            g = activation_backward(lc.act_input, g, layer.spec.act);
            const BackwardOptions inner{opts.param_grads, true};
            switch (layer.spec.norm) {
                case NormKind::batch:
                    g = batchnorm1d_backward(g, lc.norm, layer.norm, inner);
                    break;
                case NormKind::instance:
                    g = instancenorm1d_backward(g, lc.norm, layer.norm, inner);
                    break;
                case NormKind::none:
                    break;
            }
            const BackwardOptions conv_opts{opts.param_grads, k > 0 || opts.input_grad};
            g = layer.spec.conv.transposed ? conv_transpose1d_backward(lc.input, g, layer.conv, conv_opts)
                                           : conv1d_backward(lc.input, g, layer.conv, conv_opts);
        }
        return g;
    }

    void zero_grad() {
        for (auto& l : layers_) {
            l.conv.zero_grad();
            l.norm.zero_grad();
        }
    }

    /// Trainable buffers, in a fixed order.
    std::vector<ParamRef<T>> params(const std::string& prefix) {
        std::vector<ParamRef<T>> out;
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            auto& l = layers_[i];
            const std::string base = prefix + "." + std::to_string(i);
            out.push_back({base + ".conv.weight", l.conv.weight, l.conv.grad_weight});
            out.push_back({base + ".conv.bias", l.conv.bias, l.conv.grad_bias});
            if (l.spec.norm != NormKind::none) {
                out.push_back({base + ".norm.gain", l.norm.gain, l.norm.grad_gain});
                out.push_back({base + ".norm.shift", l.norm.shift, l.norm.grad_shift});
            }
        }
        return out;
    }

    /// Non-trainable state that still belongs in a checkpoint.
    std::vector<std::pair<std::string, std::span<T>>> buffers(const std::string& prefix) {
        std::vector<std::pair<std::string, std::span<T>>> out;
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            auto& l = layers_[i];
            if (l.spec.norm != NormKind::batch) continue;
            const std::string base = prefix + "." + std::to_string(i);
            out.emplace_back(base + ".norm.running_mean", l.norm.running_mean);
            out.emplace_back(base + ".norm.running_var", l.norm.running_var);
        }
        return out;
    }

    std::size_t parameter_count() {
        std::size_t n = 0;
        for (const auto& p : params("")) n += p.value.size();
        return n;
    }

    /// Conv weights ~ N(0, std), biases zero, norm gain 1 / shift 0.
    void init(Rng& rng, double stddev = 0.02) {
        for (auto& l : layers_) {
            fill_normal(std::span<T>(l.conv.weight), rng, 0.0, stddev);
            std::fill(l.conv.bias.begin(), l.conv.bias.end(), T(0));
            std::fill(l.norm.gain.begin(), l.norm.gain.end(), T(1));
            std::fill(l.norm.shift.begin(), l.norm.shift.end(), T(0));
            std::fill(l.norm.running_mean.begin(), l.norm.running_mean.end(), T(0));
            std::fill(l.norm.running_var.begin(), l.norm.running_var.end(), T(1));
        }
        zero_grad();
    }

private:
    std::vector<Layer<T>> layers_;
};

/// Generator, critic and everything needed to resume training exactly.
template <class T>
struct GanModel {
    GanArch arch;
    Network<T> generator;
    Network<T> critic;
    std::uint64_t seed = 0;
    std::uint64_t epoch = 0;  // completed epochs
    std::uint64_t step = 0;   // completed generator updates
    Rng rng;                  // training stream: latents, windows, noise, dropout
    std::optional<AdamWState<T>> generator_opt;
    std::optional<AdamWState<T>> critic_opt;

    GanModel() = default;
    explicit GanModel(const GanArch& a, std::uint64_t s = 0, double init_std = 0.02)
        : arch(a), generator(a.generator), critic(a.critic), seed(s) {
        arch.validate();
        std::seed_seq init_seq{std::uint64_t(s), std::uint64_t(0)};
        Rng init_rng(init_seq);
        generator.init(init_rng, init_std);
        critic.init(init_rng, init_std);
        std::seed_seq train_seq{std::uint64_t(s), std::uint64_t(1)};
        rng.seed(train_seq);
    }

    Shape latent_shape(std::size_t batch) const { return {batch, arch.latent_channels, arch.latent_length}; }
    Shape signal_shape(std::size_t batch) const { return {batch, 1, arch.signal_length()}; }
};

/// i.i.d. standard-normal latent batch of shape (batch, latent_channels, latent_length).
template <class T>
Tensor<T> sample_latent(const GanArch& arch, std::size_t batch, Rng& rng) {
    if (batch < 1) throw ConfigError("sample_latent: batch must be >= 1");
    Tensor<T> z(batch, arch.latent_channels, arch.latent_length);
    fill_normal(z.span(), rng);
    return z;
}

template <class T>
Tensor<T> sample_latent(std::size_t batch, Rng& rng) {
    return sample_latent<T>(GanArch::standard(), batch, rng);
}

template <class T>
Tensor<T> generator_forward(GanModel<T>& model, const Tensor<T>& z, Mode mode, ForwardCache<T>* cache = nullptr) {
    require_shape(z, model.latent_shape(z.batch()), "generator_forward latent");
    if (z.batch() < 1) throw DimensionError("generator_forward: empty batch");
    return model.generator.forward(z, mode, 0.0, nullptr, cache);
}

template <class T>
Tensor<T> critic_forward(GanModel<T>& model, const Tensor<T>& x, Mode mode, Rng& rng, ForwardCache<T>* cache = nullptr,
                         const std::vector<Tensor<T>>* fixed_masks = nullptr) {
    require_shape(x, model.signal_shape(x.batch()), "critic_forward input");
    if (x.batch() < 1) throw DimensionError("critic_forward: empty batch");
    return model.critic.forward(x, mode, model.arch.dropout_rate, &rng, cache, fixed_masks);
}

}  // namespace vibegen
