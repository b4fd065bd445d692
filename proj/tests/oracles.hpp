#pragma once

// Deliberately naive reference implementations. They follow the textbook
// definitions index by index and share no code with the production kernels.

#include <cmath>
#include <cstddef>
#include <vector>

#include "vibegen/kernels.hpp"
#include "vibegen/tensor.hpp"

namespace oracle {

using vibegen::ConvParams;
using vibegen::Tensor;

/// Zero-padded input read: x[b, c, pos] or 0 outside [0, L).
inline double padded(const Tensor<double>& x, std::size_t b, std::size_t c, long pos) {
    if (pos < 0 || pos >= long(x.length())) return 0.0;
    return x(b, c, std::size_t(pos));
}

/// out[b,o,t] = bias[o] + sum_{c,j} w[o,c,j] * x_pad[b, c, t*s + j - p]
inline Tensor<double> conv1d(const Tensor<double>& x, const ConvParams<double>& p) {
    const auto& s = p.spec;
    const long L_out = (long(x.length()) + 2 * long(s.padding) - long(s.kernel)) / long(s.stride) + 1;
    Tensor<double> out(x.batch(), s.out_channels, std::size_t(L_out));
    for (std::size_t b = 0; b < x.batch(); ++b)
        for (std::size_t o = 0; o < s.out_channels; ++o)
            for (long t = 0; t < L_out; ++t) {
                double acc = p.bias[o];
                for (std::size_t c = 0; c < s.in_channels; ++c)
                    for (std::size_t j = 0; j < s.kernel; ++j)
                        acc += p.weight[(o * s.in_channels + c) * s.kernel + j] *
                               padded(x, b, c, t * long(s.stride) + long(j) - long(s.padding));
                out(b, o, std::size_t(t)) = acc;
            }
    return out;
}

/// Scatter form: every input sample i adds w[c,o,j] * x[b,c,i] to position
/// i*s + j - p of the output, when that position exists.
inline Tensor<double> conv_transpose1d(const Tensor<double>& x, const ConvParams<double>& p) {
    const auto& s = p.spec;
    const long L_out = (long(x.length()) - 1) * long(s.stride) - 2 * long(s.padding) + long(s.kernel);
    Tensor<double> out(x.batch(), s.out_channels, std::size_t(L_out));
    for (std::size_t b = 0; b < x.batch(); ++b)
        for (std::size_t o = 0; o < s.out_channels; ++o)
            for (long t = 0; t < L_out; ++t) out(b, o, std::size_t(t)) = p.bias[o];
    for (std::size_t b = 0; b < x.batch(); ++b)
        for (std::size_t c = 0; c < s.in_channels; ++c)
            for (std::size_t i = 0; i < x.length(); ++i)
                for (std::size_t o = 0; o < s.out_channels; ++o)
                    for (std::size_t j = 0; j < s.kernel; ++j) {
                        const long t = long(i) * long(s.stride) + long(j) - long(s.padding);
                        if (t < 0 || t >= L_out) continue;
                        out(b, o, std::size_t(t)) += p.weight[(c * s.out_channels + o) * s.kernel + j] * x(b, c, i);
                    }
    return out;
}

/// Gradients of sum(g * conv1d(x)) by direct index bookkeeping.
struct ConvGrads {
    Tensor<double> input;
    std::vector<double> weight;
    std::vector<double> bias;
};

inline ConvGrads conv1d_grads(const Tensor<double>& x, const Tensor<double>& g, const ConvParams<double>& p) {
    const auto& s = p.spec;
    ConvGrads r{Tensor<double>(x.shape()), std::vector<double>(p.weight.size(), 0.0),
                std::vector<double>(p.bias.size(), 0.0)};
    for (std::size_t b = 0; b < x.batch(); ++b)
        for (std::size_t o = 0; o < s.out_channels; ++o)
            for (std::size_t t = 0; t < g.length(); ++t) {
                const double go = g(b, o, t);
                r.bias[o] += go;
                for (std::size_t c = 0; c < s.in_channels; ++c)
                    for (std::size_t j = 0; j < s.kernel; ++j) {
                        const long pos = long(t * s.stride + j) - long(s.padding);
                        if (pos < 0 || pos >= long(x.length())) continue;
                        r.weight[(o * s.in_channels + c) * s.kernel + j] += go * x(b, c, std::size_t(pos));
                        r.input(b, c, std::size_t(pos)) += go * p.weight[(o * s.in_channels + c) * s.kernel + j];
                    }
            }
    return r;
}

inline ConvGrads conv_transpose1d_grads(const Tensor<double>& x, const Tensor<double>& g, const ConvParams<double>& p) {
    const auto& s = p.spec;
    ConvGrads r{Tensor<double>(x.shape()), std::vector<double>(p.weight.size(), 0.0),
                std::vector<double>(p.bias.size(), 0.0)};
    for (std::size_t b = 0; b < g.batch(); ++b)
        for (std::size_t o = 0; o < s.out_channels; ++o)
            for (std::size_t t = 0; t < g.length(); ++t) r.bias[o] += g(b, o, t);
    for (std::size_t b = 0; b < x.batch(); ++b)
        for (std::size_t c = 0; c < s.in_channels; ++c)
            for (std::size_t i = 0; i < x.length(); ++i)
                for (std::size_t o = 0; o < s.out_channels; ++o)
                    for (std::size_t j = 0; j < s.kernel; ++j) {
                        const long t = long(i * s.stride + j) - long(s.padding);
                        if (t < 0 || t >= long(g.length())) continue;
                        const double go = g(b, o, std::size_t(t));
                        r.weight[(c * s.out_channels + o) * s.kernel + j] += go * x(b, c, i);
                        r.input(b, c, i) += go * p.weight[(c * s.out_channels + o) * s.kernel + j];
                    }
    return r;
}

inline double mean(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / double(v.size());
}

/// Two-pass population standard deviation.
inline double pop_std(const std::vector<double>& v) {
    const double m = mean(v);
    double ss = 0.0;
    for (double x : v) ss += (x - m) * (x - m);
    return std::sqrt(ss / double(v.size()));
}

/// (|mu_x - mu_y|)^2 + (sigma_x - sigma_y)^2 with population sigma.
inline double fid(const std::vector<double>& x, const std::vector<double>& y) {
    const double dm = std::fabs(mean(x) - mean(y));
    const double ds = pop_std(x) - pop_std(y);
    return dm * dm + ds * ds;
}

/// Scalar AdamW recurrence for one parameter.
struct ScalarAdamW {
    double lr, b1, b2, wd, eps;
    double m = 0.0, v = 0.0;
    int t = 0;

    double step(double theta, double g) {
        ++t;
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        const double m_hat = m / (1.0 - std::pow(b1, t));
        const double v_hat = v / (1.0 - std::pow(b2, t));
        theta = theta - lr * wd * theta;
        return theta - lr * m_hat / (std::sqrt(v_hat) + eps);
    }
};

inline std::vector<double> window(const Tensor<double>& t, std::size_t b) {
    return std::vector<double>(t.sample(b).begin(), t.sample(b).end());
}

}  // namespace oracle
