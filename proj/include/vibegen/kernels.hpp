#pragma once

// Forward and backward kernels for every layer type in the 1-D W-DCGAN:
// strided convolution, transposed convolution, batch and instance
// normalization, pointwise activations and inverted dropout.
//
// Backward kernels accumulate into the gradient buffers of their parameter
// set (they never overwrite), so several backward calls between two
// zero_grad() calls sum their contributions.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "vibegen/errors.hpp"
#include "vibegen/parallel.hpp"
#include "vibegen/tensor.hpp"

namespace vibegen {

enum class Mode { train, infer };

struct ConvSpec {
    std::size_t in_channels = 1;
    std::size_t out_channels = 1;
    std::size_t kernel = 1;
    std::size_t stride = 1;
    std::size_t padding = 0;
    bool transposed = false;

    bool operator==(const ConvSpec&) const = default;

    void validate() const {
        if (in_channels < 1 || out_channels < 1) throw ConfigError("conv spec: channel counts must be >= 1");
        if (kernel < 1) throw ConfigError("conv spec: kernel must be >= 1");
        if (stride < 1) throw ConfigError("conv spec: stride must be >= 1");
    }

    /// Output length for an input of `length`; throws ConfigError when it would be < 1.
    std::size_t output_length(std::size_t length) const {
        validate();
        if (length < 1) throw ConfigError("conv spec: input length must be >= 1");
        if (transposed) {
            const std::size_t full = (length - 1) * stride + kernel;
            if (full <= 2 * padding)
                throw ConfigError("transposed conv: non-positive output length for input length " +
                                  std::to_string(length));
            return full - 2 * padding;
        }
        if (length + 2 * padding < kernel)
            throw ConfigError("conv: non-positive output length for input length " + std::to_string(length) +
                              " (kernel " + std::to_string(kernel) + ", padding " + std::to_string(padding) + ")");
        return (length + 2 * padding - kernel) / stride + 1;
    }

    std::size_t weight_size() const { return in_channels * out_channels * kernel; }
};

/// Weights and gradients of one convolution. Weight layout is
/// (out, in, kernel) for a forward conv and (in, out, kernel) for a
/// transposed conv, so a conv and its transpose can share one buffer.
template <class T>
struct ConvParams {
    ConvSpec spec;
    std::vector<T> weight;
    std::vector<T> bias;
    std::vector<T> grad_weight;
    std::vector<T> grad_bias;

    ConvParams() = default;
    explicit ConvParams(const ConvSpec& s)
        : spec(s),
          weight(s.weight_size(), T(0)),
          bias(s.out_channels, T(0)),
          grad_weight(s.weight_size(), T(0)),
          grad_bias(s.out_channels, T(0)) {
        s.validate();
    }

    void zero_grad() {
        std::fill(grad_weight.begin(), grad_weight.end(), T(0));
        std::fill(grad_bias.begin(), grad_bias.end(), T(0));
    }
};

/// Affine gain/shift of a normalization layer, plus running statistics
/// (used by batch norm only).
template <class T>
struct NormParams {
    static constexpr double eps = 1e-5;
    static constexpr double momentum = 0.1;

    std::size_t channels = 0;
    std::vector<T> gain;
    std::vector<T> shift;
    std::vector<T> grad_gain;
    std::vector<T> grad_shift;
    std::vector<T> running_mean;
    std::vector<T> running_var;

    NormParams() = default;
    explicit NormParams(std::size_t c)
        : channels(c),
          gain(c, T(1)),
          shift(c, T(0)),
          grad_gain(c, T(0)),
          grad_shift(c, T(0)),
          running_mean(c, T(0)),
          running_var(c, T(1)) {}

    void zero_grad() {
        std::fill(grad_gain.begin(), grad_gain.end(), T(0));
        std::fill(grad_shift.begin(), grad_shift.end(), T(0));
    }
};

struct BackwardOptions {
    bool param_grads = true;
    bool input_grad = true;
};

namespace detail {

/// Half-open range of i in [0, n_i) with 0 <= i*stride + tap - padding < n_u.
inline std::pair<std::ptrdiff_t, std::ptrdiff_t> tap_range(std::size_t tap, std::size_t stride, std::size_t padding,
                                                           std::size_t n_i, std::size_t n_u) {
    const auto s = static_cast<std::ptrdiff_t>(stride);
    const auto off = static_cast<std::ptrdiff_t>(tap) - static_cast<std::ptrdiff_t>(padding);
    std::ptrdiff_t lo = 0;
    if (off < 0) lo = (-off + s - 1) / s;
    const std::ptrdiff_t top = static_cast<std::ptrdiff_t>(n_u) - 1 - off;
    std::ptrdiff_t hi = top < 0 ? 0 : top / s + 1;
    hi = std::min<std::ptrdiff_t>(hi, static_cast<std::ptrdiff_t>(n_i));
    if (hi < lo) hi = lo;
    return {lo, hi};
}

template <class T>
void check_conv_input(const Tensor<T>& input, const ConvSpec& spec, bool transposed, const char* op) {
    if (spec.transposed != transposed)
        throw ConfigError(std::string(op) + ": spec.transposed must be " + (transposed ? "true" : "false"));
    if (input.channels() != spec.in_channels)
        throw DimensionError(std::string(op) + ": channel axis is " + std::to_string(input.channels()) +
                             ", expected " + std::to_string(spec.in_channels));
    if (input.batch() < 1) throw DimensionError(std::string(op) + ": batch axis is empty");
}

inline constexpr std::size_t kTileRows = 4;
inline constexpr std::size_t kTileVectors = 2;
inline constexpr std::size_t kDepthBlock = 256;
inline constexpr std::size_t kRowBlock = 32;

#if defined(__AVX__)
inline constexpr std::size_t kVectorBytes = 32;
#else
inline constexpr std::size_t kVectorBytes = 16;
#endif

template <class T>
struct Simd {
    using type [[gnu::vector_size(kVectorBytes)]] = T;
    static constexpr std::size_t lanes = kVectorBytes / sizeof(T);
    static constexpr std::size_t tile_cols = kTileVectors * lanes;

    [[gnu::always_inline]] static type load(const T* p) {
        type v;
        std::memcpy(&v, p, sizeof(v));
        return v;
    }
    [[gnu::always_inline]] static void store(T* p, type v) { std::memcpy(p, &v, sizeof(v)); }
};

/// Full kTileRows x tile_cols register tile over depth [k0, k1), where
/// A(i, k) = A[i * si + k * sk].
template <class T>
void gemm_tile(std::size_t k0, std::size_t k1, const T* A, std::size_t si, std::size_t sk, const T* B,
               std::size_t N, T* C, std::size_t i0, std::size_t j0) {
    using V = Simd<T>;
    typename V::type acc[kTileRows][kTileVectors] = {};
    for (std::size_t k = k0; k < k1; ++k) {
        const T* b = B + k * N + j0;
        typename V::type bv[kTileVectors];
        for (std::size_t v = 0; v < kTileVectors; ++v) bv[v] = V::load(b + v * V::lanes);
        for (std::size_t r = 0; r < kTileRows; ++r) {
            const T a = A[(i0 + r) * si + k * sk];
            for (std::size_t v = 0; v < kTileVectors; ++v) acc[r][v] += a * bv[v];
        }
    }
    for (std::size_t r = 0; r < kTileRows; ++r) {
        T* c = C + (i0 + r) * N + j0;
        for (std::size_t v = 0; v < kTileVectors; ++v) V::store(c + v * V::lanes, V::load(c + v * V::lanes) + acc[r][v]);
    }
}

/// Runtime-sized edge tile (mr <= kTileRows, nr <= tile_cols).
template <class T>
void gemm_edge(std::size_t mr, std::size_t nr, std::size_t k0, std::size_t k1, const T* A, std::size_t si,
               std::size_t sk, const T* B, std::size_t N, T* C, std::size_t i0, std::size_t j0) {
    for (std::size_t r = 0; r < mr; ++r) {
        T* c = C + (i0 + r) * N + j0;
        for (std::size_t k = k0; k < k1; ++k) {
            const T a = A[(i0 + r) * si + k * sk];
            const T* b = B + k * N + j0;
            for (std::size_t j = 0; j < nr; ++j) c[j] += a * b[j];
        }
    }
}

/// C[M x N] += A * B with A(i, k) = A[i * si + k * sk]; B and C row-major.
/// Rows are split into blocks that own disjoint parts of C, and the summation
/// order inside a block is fixed, so the result is independent of threading.
template <class T>
void gemm_strided(std::size_t M, std::size_t N, std::size_t K, const T* A, std::size_t si, std::size_t sk,
                  const T* B, T* C) {
    const std::size_t row_blocks = (M + kRowBlock - 1) / kRowBlock;
    parallel_for(row_blocks, [&](std::size_t rb) {
        const std::size_t r0 = rb * kRowBlock, r1 = std::min(M, r0 + kRowBlock);
        constexpr std::size_t tile_cols = Simd<T>::tile_cols;
        for (std::size_t j0 = 0; j0 < N; j0 += tile_cols) {
            const std::size_t nr = std::min(tile_cols, N - j0);
            for (std::size_t k0 = 0; k0 < K; k0 += kDepthBlock) {
                const std::size_t k1 = std::min(K, k0 + kDepthBlock);
                for (std::size_t i0 = r0; i0 < r1; i0 += kTileRows) {
                    const std::size_t mr = std::min(kTileRows, r1 - i0);
                    if (mr == kTileRows && nr == tile_cols)
                        gemm_tile(k0, k1, A, si, sk, B, N, C, i0, j0);
                    else
                        gemm_edge(mr, nr, k0, k1, A, si, sk, B, N, C, i0, j0);
                }
            }
        }
    });
}

/// C[M x N] += A[M x K] * B[K x N], all row-major and dense.
template <class T>
void gemm_nn(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C) {
    gemm_strided(M, N, K, A, K, 1, B, C);
}

/// C[M x N] += A^T * B with A stored as [K x M] and B as [K x N].
template <class T>
void gemm_tn(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C) {
    gemm_strided(M, N, K, A, 1, M, B, C);
}

/// Unfolds a (B, C, L) tensor into columns for a kernel sliding with the given
/// stride and padding: cols[(c*K + j) * B*n + b*n + t] = x(b, c, t*S + j - P),
/// zero outside the signal. `transpose` stores the [B*n x C*K] transpose.
template <class T>
std::vector<T> im2col(const Tensor<T>& x, std::size_t K, std::size_t S, std::size_t P, std::size_t n,
                      bool transpose = false) {
    const std::size_t B = x.batch(), C = x.channels(), L = x.length();
    const std::size_t N = B * n, R = C * K;
    std::vector<T> cols(R * N, T(0));
    for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t j = 0; j < K; ++j) {
            const std::size_t r = c * K + j;
            const auto [lo, hi] = tap_range(j, S, P, n, L);
            const std::ptrdiff_t off = std::ptrdiff_t(j) - std::ptrdiff_t(P);
            for (std::size_t b = 0; b < B; ++b) {
                const T* src = x.row(b, c).data();
                for (std::ptrdiff_t t = lo; t < hi; ++t) {
                    const T v = src[t * std::ptrdiff_t(S) + off];
                    const std::size_t col = b * n + std::size_t(t);
                    if (transpose)
                        cols[col * R + r] = v;
                    else
                        cols[r * N + col] = v;
                }
            }
        }
    }
    return cols;
}

/// Adjoint of im2col: scatters cols [C*K x B*n] back onto a (B, C, L) tensor.
template <class T>
void col2im(const std::vector<T>& cols, Tensor<T>& x, std::size_t K, std::size_t S, std::size_t P, std::size_t n) {
    const std::size_t B = x.batch(), C = x.channels(), L = x.length();
    const std::size_t N = B * n;
    for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t j = 0; j < K; ++j) {
            const T* src = cols.data() + (c * K + j) * N;
            const auto [lo, hi] = tap_range(j, S, P, n, L);
            const std::ptrdiff_t off = std::ptrdiff_t(j) - std::ptrdiff_t(P);
            for (std::size_t b = 0; b < B; ++b) {
                T* dst = x.row(b, c).data();
                for (std::ptrdiff_t t = lo; t < hi; ++t) dst[t * std::ptrdiff_t(S) + off] += src[b * n + std::size_t(t)];
            }
        }
    }
}

/// (B, C, L) -> [C x B*L] with channel-major rows.
template <class T>
std::vector<T> channel_major(const Tensor<T>& x) {
    const std::size_t B = x.batch(), C = x.channels(), L = x.length();
    std::vector<T> m(C * B * L);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < C; ++c) std::copy_n(x.row(b, c).data(), L, m.data() + c * B * L + b * L);
    return m;
}

template <class T>
Tensor<T> from_channel_major(const std::vector<T>& m, std::size_t B, std::size_t C, std::size_t L) {
    Tensor<T> x(B, C, L);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < C; ++c) std::copy_n(m.data() + c * B * L + b * L, L, x.row(b, c).data());
    return x;
}

template <class T>
void accumulate_bias_grad(const Tensor<T>& grad_out, std::vector<T>& grad_bias) {
    for (std::size_t o = 0; o < grad_out.channels(); ++o) {
        T acc = T(0);
        for (std::size_t b = 0; b < grad_out.batch(); ++b)
            for (T v : grad_out.row(b, o)) acc += v;
        grad_bias[o] += acc;
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Strided convolution, lowered to one matrix product over the whole batch:
// Y[O x B*L_out] = W[O x C*K] * cols[C*K x B*L_out].

template <class T>
Tensor<T> conv1d_forward(const Tensor<T>& input, const ConvParams<T>& params) {
    const ConvSpec& spec = params.spec;
    detail::check_conv_input(input, spec, false, "conv1d_forward");
    const std::size_t L_out = spec.output_length(input.length());
    const std::size_t B = input.batch(), C = spec.in_channels, O = spec.out_channels, K = spec.kernel;
    const std::size_t N = B * L_out;

    const std::vector<T> cols = detail::im2col(input, K, spec.stride, spec.padding, L_out);
    std::vector<T> y(O * N);
    for (std::size_t o = 0; o < O; ++o) std::fill_n(y.data() + o * N, N, params.bias[o]);
    detail::gemm_nn(O, N, C * K, params.weight.data(), cols.data(), y.data());
    return detail::from_channel_major(y, B, O, L_out);
}

/// Accumulates weight/bias gradients into `params` and returns dL/dinput.
template <class T>
Tensor<T> conv1d_backward(const Tensor<T>& input, const Tensor<T>& grad_out, ConvParams<T>& params,
                          BackwardOptions opts = {}) {
    const ConvSpec& spec = params.spec;
    detail::check_conv_input(input, spec, false, "conv1d_backward");
    const std::size_t L_out = spec.output_length(input.length());
    require_shape(grad_out, {input.batch(), spec.out_channels, L_out}, "conv1d_backward grad_out");
    const std::size_t B = input.batch(), C = spec.in_channels, O = spec.out_channels, K = spec.kernel;
    const std::size_t N = B * L_out;
    const std::vector<T> g = detail::channel_major(grad_out);

    if (opts.param_grads) {
        detail::accumulate_bias_grad(grad_out, params.grad_bias);
        const std::vector<T> cols_t = detail::im2col(input, K, spec.stride, spec.padding, L_out, true);
        detail::gemm_nn(O, C * K, N, g.data(), cols_t.data(), params.grad_weight.data());
    }

    if (!opts.input_grad) return {};
    std::vector<T> dcols(C * K * N, T(0));
    detail::gemm_tn(C * K, N, O, params.weight.data(), g.data(), dcols.data());
    Tensor<T> grad_in(input.shape());
    detail::col2im(dcols, grad_in, K, spec.stride, spec.padding, L_out);
    return grad_in;
}

// ---------------------------------------------------------------------------
// Transposed convolution (adjoint of conv1d_forward's linear part). With the
// weight viewed as Wt[C x O*K]: cols = Wt^T * X, then cols fold onto the
// output positions i*S + j - P.

template <class T>
Tensor<T> conv_transpose1d_forward(const Tensor<T>& input, const ConvParams<T>& params) {
    const ConvSpec& spec = params.spec;
    detail::check_conv_input(input, spec, true, "conv_transpose1d_forward");
    const std::size_t L = input.length();
    const std::size_t L_out = spec.output_length(L);
    const std::size_t B = input.batch(), C = spec.in_channels, O = spec.out_channels, K = spec.kernel;
    const std::size_t N = B * L;

    const std::vector<T> x = detail::channel_major(input);
    std::vector<T> cols(O * K * N, T(0));
    detail::gemm_tn(O * K, N, C, params.weight.data(), x.data(), cols.data());
    Tensor<T> out(B, O, L_out);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t o = 0; o < O; ++o) std::ranges::fill(out.row(b, o), params.bias[o]);
    detail::col2im(cols, out, K, spec.stride, spec.padding, L);
    return out;
}

/// grad_input is a strided convolution of grad_out with the same weights.
template <class T>
Tensor<T> conv_transpose1d_backward(const Tensor<T>& input, const Tensor<T>& grad_out, ConvParams<T>& params,
                                    BackwardOptions opts = {}) {
    const ConvSpec& spec = params.spec;
    detail::check_conv_input(input, spec, true, "conv_transpose1d_backward");
    const std::size_t L = input.length();
    const std::size_t L_out = spec.output_length(L);
    require_shape(grad_out, {input.batch(), spec.out_channels, L_out}, "conv_transpose1d_backward grad_out");
    const std::size_t B = input.batch(), C = spec.in_channels, O = spec.out_channels, K = spec.kernel;
    const std::size_t N = B * L;

    if (opts.param_grads) {
        detail::accumulate_bias_grad(grad_out, params.grad_bias);
        const std::vector<T> x = detail::channel_major(input);
        const std::vector<T> gcols_t = detail::im2col(grad_out, K, spec.stride, spec.padding, L, true);
        detail::gemm_nn(C, O * K, N, x.data(), gcols_t.data(), params.grad_weight.data());
    }

    if (!opts.input_grad) return {};
    const std::vector<T> gcols = detail::im2col(grad_out, K, spec.stride, spec.padding, L);
    std::vector<T> dx(C * N, T(0));
    detail::gemm_nn(C, N, O * K, params.weight.data(), gcols.data(), dx.data());
    return detail::from_channel_major(dx, B, C, L);
}

// ---------------------------------------------------------------------------
// Normalization

enum class NormKind : std::uint32_t { none = 0, batch = 1, instance = 2 };

/// Saved forward state for a normalization backward pass. `inv_std` is per
/// channel (batch norm) or per (batch, channel) slice (instance norm).
template <class T>
struct NormCache {
    NormKind kind = NormKind::none;
    Mode mode = Mode::train;
    Tensor<T> x_hat;
    std::vector<double> inv_std;
};

namespace detail {

inline void check_norm_params(std::size_t channels, std::size_t expected, const char* op) {
    if (channels != expected)
        throw DimensionError(std::string(op) + ": channel axis is " + std::to_string(channels) + ", expected " +
                             std::to_string(expected));
}

}  // namespace detail

/// Per-channel normalization over (batch, length). Train mode uses the batch
/// statistics (population variance) and updates the running estimates with
/// momentum 0.1, storing the unbiased variance; infer mode uses the running
/// estimates.
template <class T>
Tensor<T> batchnorm1d_forward(const Tensor<T>& input, NormParams<T>& params, Mode mode, NormCache<T>* cache = nullptr) {
    detail::check_norm_params(input.channels(), params.channels, "batchnorm1d");
    const std::size_t B = input.batch(), C = input.channels(), L = input.length();
    const std::size_t n = B * L;
    if (mode == Mode::train && n <= 1)
        throw DegenerateStatisticsError("batchnorm1d: train mode needs more than one element per channel");

    Tensor<T> out(input.shape());
    Tensor<T> x_hat(input.shape());
    std::vector<double> inv_std(C);
    for (std::size_t c = 0; c < C; ++c) {
        double mean, var;
        if (mode == Mode::train) {
            double sum = 0.0;
            for (std::size_t b = 0; b < B; ++b)
                for (T v : input.row(b, c)) sum += double(v);
            mean = sum / double(n);
            double sq = 0.0;
            for (std::size_t b = 0; b < B; ++b)
                for (T v : input.row(b, c)) {
                    const double d = double(v) - mean;
                    sq += d * d;
                }
            var = sq / double(n);
            const double m = NormParams<T>::momentum;
            params.running_mean[c] = T((1.0 - m) * double(params.running_mean[c]) + m * mean);
            params.running_var[c] = T((1.0 - m) * double(params.running_var[c]) + m * sq / double(n - 1));
        } else {
            mean = double(params.running_mean[c]);
            var = double(params.running_var[c]);
        }
        const double is = 1.0 / std::sqrt(var + NormParams<T>::eps);
        inv_std[c] = is;
        const double g = double(params.gain[c]), sh = double(params.shift[c]);
        for (std::size_t b = 0; b < B; ++b) {
            auto x = input.row(b, c);
            auto xh = x_hat.row(b, c);
            auto y = out.row(b, c);
            for (std::size_t t = 0; t < L; ++t) {
                const double h = (double(x[t]) - mean) * is;
                xh[t] = T(h);
                y[t] = T(h * g + sh);
            }
        }
    }
    if (cache) *cache = NormCache<T>{NormKind::batch, mode, std::move(x_hat), std::move(inv_std)};
    return out;
}

template <class T>
Tensor<T> batchnorm1d_backward(const Tensor<T>& grad_out, const NormCache<T>& cache, NormParams<T>& params,
                               BackwardOptions opts = {}) {
    require_shape(grad_out, cache.x_hat.shape(), "batchnorm1d_backward grad_out");
    const std::size_t B = grad_out.batch(), C = grad_out.channels(), L = grad_out.length();
    const double n = double(B * L);
    Tensor<T> grad_in(grad_out.shape());
    for (std::size_t c = 0; c < C; ++c) {
        double sum_dy = 0.0, sum_dy_xh = 0.0;
        for (std::size_t b = 0; b < B; ++b) {
            auto g = grad_out.row(b, c);
            auto xh = cache.x_hat.row(b, c);
            for (std::size_t t = 0; t < L; ++t) {
                sum_dy += double(g[t]);
                sum_dy_xh += double(g[t]) * double(xh[t]);
            }
        }
        if (opts.param_grads) {
            params.grad_gain[c] += T(sum_dy_xh);
            params.grad_shift[c] += T(sum_dy);
        }
        if (!opts.input_grad) continue;
        const double scale = double(params.gain[c]) * cache.inv_std[c];
        for (std::size_t b = 0; b < B; ++b) {
            auto g = grad_out.row(b, c);
            auto xh = cache.x_hat.row(b, c);
            auto dx = grad_in.row(b, c);
            if (cache.mode == Mode::train) {
                for (std::size_t t = 0; t < L; ++t)
                    dx[t] = T(scale / n * (n * double(g[t]) - sum_dy - double(xh[t]) * sum_dy_xh));
            } else {
                for (std::size_t t = 0; t < L; ++t) dx[t] = T(scale * double(g[t]));
            }
        }
    }
    if (!opts.input_grad) return {};
    return grad_in;
}

/// Per-(batch, channel) normalization over the length axis; always uses the
/// current statistics.
template <class T>
Tensor<T> instancenorm1d_forward(const Tensor<T>& input, const NormParams<T>& params, NormCache<T>* cache = nullptr) {
    detail::check_norm_params(input.channels(), params.channels, "instancenorm1d");
    const std::size_t B = input.batch(), C = input.channels(), L = input.length();
    if (L <= 1) throw DegenerateStatisticsError("instancenorm1d: length must be > 1");

    Tensor<T> out(input.shape());
    Tensor<T> x_hat(input.shape());
    std::vector<double> inv_std(B * C);
    parallel_for(B, [&](std::size_t b) {
        for (std::size_t c = 0; c < C; ++c) {
            auto x = input.row(b, c);
            double sum = 0.0;
            for (T v : x) sum += double(v);
            const double mean = sum / double(L);
            double sq = 0.0;
            for (T v : x) {
                const double d = double(v) - mean;
                sq += d * d;
            }
            const double is = 1.0 / std::sqrt(sq / double(L) + NormParams<T>::eps);
            inv_std[b * C + c] = is;
            const double g = double(params.gain[c]), sh = double(params.shift[c]);
            auto xh = x_hat.row(b, c);
            auto y = out.row(b, c);
            for (std::size_t t = 0; t < L; ++t) {
                const double h = (double(x[t]) - mean) * is;
                xh[t] = T(h);
                y[t] = T(h * g + sh);
            }
        }
    });
    if (cache) *cache = NormCache<T>{NormKind::instance, Mode::train, std::move(x_hat), std::move(inv_std)};
    return out;
}

template <class T>
Tensor<T> instancenorm1d_backward(const Tensor<T>& grad_out, const NormCache<T>& cache, NormParams<T>& params,
                                  BackwardOptions opts = {}) {
    require_shape(grad_out, cache.x_hat.shape(), "instancenorm1d_backward grad_out");
    const std::size_t B = grad_out.batch(), C = grad_out.channels(), L = grad_out.length();
    const double n = double(L);
    Tensor<T> grad_in(grad_out.shape());
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t c = 0; c < C; ++c) {
            auto g = grad_out.row(b, c);
            auto xh = cache.x_hat.row(b, c);
            double sum_dy = 0.0, sum_dy_xh = 0.0;
            for (std::size_t t = 0; t < L; ++t) {
                sum_dy += double(g[t]);
                sum_dy_xh += double(g[t]) * double(xh[t]);
            }
            if (opts.param_grads) {
                params.grad_gain[c] += T(sum_dy_xh);
                params.grad_shift[c] += T(sum_dy);
            }
            if (!opts.input_grad) continue;
            const double scale = double(params.gain[c]) * cache.inv_std[b * C + c] / n;
            auto dx = grad_in.row(b, c);
            for (std::size_t t = 0; t < L; ++t)
                dx[t] = T(scale * (n * double(g[t]) - sum_dy - double(xh[t]) * sum_dy_xh));
        }
    }
    if (!opts.input_grad) return {};
    return grad_in;
}

// ---------------------------------------------------------------------------
// Activations

enum class ActivationKind : std::uint32_t { identity = 0, relu = 1, leaky_relu = 2 };

struct Activation {
    ActivationKind kind = ActivationKind::identity;
    double alpha = 0.0;  // negative slope, leaky_relu only

    static Activation identity() { return {ActivationKind::identity, 0.0}; }
    static Activation relu() { return {ActivationKind::relu, 0.0}; }
    static Activation leaky_relu(double a) { return {ActivationKind::leaky_relu, a}; }

    double negative_slope() const { return kind == ActivationKind::leaky_relu ? alpha : 0.0; }
    bool operator==(const Activation&) const = default;
};

template <class T>
Tensor<T> activation_forward(const Tensor<T>& input, Activation act) {
    if (act.kind == ActivationKind::identity) return input;
    Tensor<T> out(input.shape());
    const T slope = T(act.negative_slope());
    const T* x = input.data();
    T* y = out.data();
    const std::size_t n = input.size();
    for (std::size_t i = 0; i < n; ++i) {
        const T v = x[i], scaled = slope * v;
        y[i] = v >= T(0) ? v : scaled;
    }
    return out;
}

/// `input` is the forward-pass input; its sign selects the slope.
template <class T>
Tensor<T> activation_backward(const Tensor<T>& input, const Tensor<T>& grad_out, Activation act) {
    require_shape(grad_out, input.shape(), "activation_backward grad_out");
    if (act.kind == ActivationKind::identity) return grad_out;
    Tensor<T> grad_in(input.shape());
    const T slope = T(act.negative_slope());
    const T* x = input.data();
    const T* g = grad_out.data();
    T* dx = grad_in.data();
    const std::size_t n = input.size();
    for (std::size_t i = 0; i < n; ++i) {
        const T scaled = slope * g[i];
        dx[i] = x[i] >= T(0) ? g[i] : scaled;
    }
    return grad_in;
}

// ---------------------------------------------------------------------------
// Inverted dropout

inline void check_dropout_rate(double rate) {
    if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("dropout rate must lie in [0, 1), got " + std::to_string(rate));
}

/// Draws a mask of per-element multipliers: 0 with probability `rate`,
/// 1/(1-rate) otherwise.
template <class T, class Rng>
Tensor<T> dropout_mask(const Shape& shape, double rate, Rng& rng) {
    check_dropout_rate(rate);
    Tensor<T> mask(shape, T(1));
    if (rate == 0.0) return mask;
    const T keep_scale = T(1.0 / (1.0 - rate));
    std::bernoulli_distribution drop(rate);
    for (auto& m : mask.span()) m = drop(rng) ? T(0) : keep_scale;
    return mask;
}

template <class T>
Tensor<T> dropout_apply(const Tensor<T>& input, const Tensor<T>& mask) {
    require_shape(mask, input.shape(), "dropout mask");
    Tensor<T> out(input.shape());
    for (std::size_t i = 0; i < input.size(); ++i) out.data()[i] = input.data()[i] * mask.data()[i];
    return out;
}

/// Train mode draws a fresh mask (returned through `mask_out` when given);
/// infer mode is the identity and leaves `mask_out` empty.
template <class T, class Rng>
Tensor<T> dropout_forward(const Tensor<T>& input, double rate, Rng& rng, Mode mode, Tensor<T>* mask_out = nullptr) {
    check_dropout_rate(rate);
    if (mode == Mode::infer || rate == 0.0) {
        if (mask_out) *mask_out = Tensor<T>{};
        return input;
    }
    Tensor<T> mask = dropout_mask<T>(input.shape(), rate, rng);
    Tensor<T> out = dropout_apply(input, mask);
    if (mask_out) *mask_out = std::move(mask);
    return out;
}

/// An empty mask means the forward pass was the identity.
template <class T>
Tensor<T> dropout_backward(const Tensor<T>& grad_out, const Tensor<T>& mask) {
    if (mask.empty()) return grad_out;
    return dropout_apply(grad_out, mask);
}

}  // namespace vibegen
