#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "vibegen/gradcheck.hpp"
#include "vibegen/kernels.hpp"

using namespace vibegen;

namespace {

using Rng = std::mt19937_64;

ConvParams<double> random_conv(const ConvSpec& spec, Rng& rng, double stddev = 0.5) {
    ConvParams<double> p(spec);
    fill_normal(std::span<double>(p.weight), rng, 0.0, stddev);
    fill_normal(std::span<double>(p.bias), rng, 0.0, stddev);
    return p;
}

Tensor<double> random_tensor(Shape s, Rng& rng) { return gradcheck::random_tensor(s, rng); }

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
    EXPECT_EQ(a.size(), b.size());
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

ConvParams<double> identity_conv(bool transposed) {
    ConvParams<double> p(ConvSpec{1, 1, 1, 1, 0, transposed});
    p.weight[0] = 1.0;
    return p;
}

}  // namespace

// --- length arithmetic ------------------------------------------------------

TEST(ConvLength, StridedExamples) {
    EXPECT_EQ((ConvSpec{1, 1, 4, 2, 1, false}.output_length(1024)), 512u);
    EXPECT_EQ((ConvSpec{128, 1, 64, 2, 0, false}.output_length(64)), 1u);
    EXPECT_EQ((ConvSpec{256, 128, 64, 2, 0, true}.output_length(1)), 64u);
    EXPECT_EQ((ConvSpec{16, 1, 4, 2, 1, true}.output_length(512)), 1024u);
}

TEST(ConvLength, ForwardShapesMatchFormula) {
    Rng rng(1);
    auto p = random_conv({1, 1, 4, 2, 1, false}, rng);
    EXPECT_EQ(conv1d_forward(Tensor<double>(1, 1, 1024), p).length(), 512u);
    auto last = random_conv({128, 1, 64, 2, 0, false}, rng);
    EXPECT_EQ(conv1d_forward(Tensor<double>(1, 128, 64), last).length(), 1u);
    auto first = random_conv({256, 128, 64, 2, 0, true}, rng);
    EXPECT_EQ(conv_transpose1d_forward(Tensor<double>(1, 256, 1), first).shape(), (Shape{1, 128, 64}));
    auto out = random_conv({16, 1, 4, 2, 1, true}, rng);
    EXPECT_EQ(conv_transpose1d_forward(Tensor<double>(1, 16, 512), out).shape(), (Shape{1, 1, 1024}));
}

TEST(ConvLength, ConvThenTransposeRestoresLength) {
    for (std::size_t L : {64u, 128u, 256u, 512u, 1024u}) {
        ConvSpec s{1, 1, 4, 2, 1, false};
        ConvSpec t = s;
        t.transposed = true;
        EXPECT_EQ(t.output_length(s.output_length(L)), L);
    }
    ConvSpec s{1, 1, 64, 2, 0, false};
    ConvSpec t = s;
    t.transposed = true;
    EXPECT_EQ(s.output_length(t.output_length(1)), 1u);
}

TEST(ConvLength, NonPositiveOutputIsConfigError) {
    ConvParams<double> p(ConvSpec{1, 1, 8, 1, 0, false});
    EXPECT_THROW(conv1d_forward(Tensor<double>(1, 1, 4), p), ConfigError);
}

TEST(ConvLength, InvalidSpecRejected) {
    EXPECT_THROW((ConvSpec{1, 1, 0, 1, 0, false}.validate()), ConfigError);
    EXPECT_THROW((ConvSpec{1, 1, 3, 0, 0, false}.validate()), ConfigError);
}

// --- identity and zero cases -----------------------------------------------

TEST(Conv1d, IdentityKernelIsIdentity) {
    Rng rng(2);
    auto x = random_tensor({2, 1, 17}, rng);
    auto p = identity_conv(false);
    EXPECT_EQ(conv1d_forward(x, p), x);
    auto g = random_tensor(x.shape(), rng);
    EXPECT_EQ(conv1d_backward(x, g, p), g);
}

TEST(ConvTranspose1d, IdentityKernelIsIdentity) {
    Rng rng(3);
    auto x = random_tensor({2, 1, 17}, rng);
    auto p = identity_conv(true);
    EXPECT_EQ(conv_transpose1d_forward(x, p), x);
    auto g = random_tensor(x.shape(), rng);
    EXPECT_EQ(conv_transpose1d_backward(x, g, p), g);
}

TEST(Conv1d, ZeroGradOutGivesZeroGradients) {
    Rng rng(4);
    auto p = random_conv({3, 4, 4, 2, 1, false}, rng);
    auto x = random_tensor({2, 3, 16}, rng);
    p.zero_grad();
    auto gx = conv1d_backward(x, Tensor<double>(2, 4, 8), p);
    for (double v : gx.span()) EXPECT_EQ(v, 0.0);
    for (double v : p.grad_weight) EXPECT_EQ(v, 0.0);
    for (double v : p.grad_bias) EXPECT_EQ(v, 0.0);
}

TEST(ConvTranspose1d, ZeroGradOutGivesZeroGradients) {
    Rng rng(5);
    auto p = random_conv({4, 3, 4, 2, 1, true}, rng);
    auto x = random_tensor({2, 4, 8}, rng);
    p.zero_grad();
    auto gx = conv_transpose1d_backward(x, Tensor<double>(2, 3, 16), p);
    for (double v : gx.span()) EXPECT_EQ(v, 0.0);
    for (double v : p.grad_weight) EXPECT_EQ(v, 0.0);
}

TEST(Conv1d, ShapeMismatchNamesAxis) {
    ConvParams<double> p(ConvSpec{3, 4, 4, 2, 1, false});
    try {
        conv1d_forward(Tensor<double>(1, 2, 16), p);
        FAIL() << "expected DimensionError";
    } catch (const DimensionError& e) {
        EXPECT_NE(std::string(e.what()).find("channel"), std::string::npos);
    }
    EXPECT_THROW(conv1d_backward(Tensor<double>(1, 3, 16), Tensor<double>(1, 4, 7), p), DimensionError);
}

TEST(Conv1d, WrongDirectionIsConfigError) {
    ConvParams<double> p(ConvSpec{1, 1, 4, 2, 1, true});
    EXPECT_THROW(conv1d_forward(Tensor<double>(1, 1, 16), p), ConfigError);
}

// --- oracle equivalence ------------------------------------------------------

TEST(ConvOracle, RandomShapesMatchNaiveLoops) {
    Rng rng(6);
    std::uniform_int_distribution<std::size_t> pick(1, 8);
    for (int trial = 0; trial < 60; ++trial) {
        const std::size_t B = 1 + pick(rng) % 4, C = pick(rng), O = pick(rng);
        const std::size_t K = pick(rng), S = 1 + pick(rng) % 3, P = pick(rng) % 3;
        std::size_t L = 8 + pick(rng) * 7;
        if (L + 2 * P < K) L = K;
        for (bool transposed : {false, true}) {
            ConvSpec spec{C, O, K, S, P, transposed};
            if (transposed && (L - 1) * S + K <= 2 * P) continue;
            auto p = random_conv(spec, rng);
            auto x = random_tensor({B, C, L}, rng);
            auto y = transposed ? conv_transpose1d_forward(x, p) : conv1d_forward(x, p);
            auto ref = transposed ? oracle::conv_transpose1d(x, p) : oracle::conv1d(x, p);
            ASSERT_EQ(y.shape(), ref.shape());
            EXPECT_LT(max_abs_diff(y.span(), ref.span()), 1e-12);

            auto g = random_tensor(y.shape(), rng);
            p.zero_grad();
            auto gx = transposed ? conv_transpose1d_backward(x, g, p) : conv1d_backward(x, g, p);
            auto grads = transposed ? oracle::conv_transpose1d_grads(x, g, p) : oracle::conv1d_grads(x, g, p);
            EXPECT_LT(max_abs_diff(gx.span(), grads.input.span()), 1e-12);
            EXPECT_LT(max_abs_diff(p.grad_weight, grads.weight), 1e-12);
            EXPECT_LT(max_abs_diff(p.grad_bias, grads.bias), 1e-12);
        }
    }
}

TEST(ConvOracle, AdjointIdentity) {
    Rng rng(7);
    for (auto [C, O, K, S, P, L] : std::vector<std::array<std::size_t, 6>>{
             {1, 1, 4, 2, 1, 1024}, {3, 5, 4, 2, 1, 32}, {8, 4, 64, 2, 0, 64}, {2, 3, 5, 3, 2, 28}}) {
        ConvSpec fwd{C, O, K, S, P, false};
        ConvSpec adj{O, C, K, S, P, true};
        ConvParams<double> pf(fwd), pa(adj);
        fill_normal(std::span<double>(pf.weight), rng);
        // Shared weights: conv layout (O, C, K) equals the transposed layout (in=O, out=C, K).
        pa.weight = pf.weight;
        auto x = random_tensor({2, C, L}, rng);
        auto y = conv1d_forward(x, pf);
        auto g = random_tensor(y.shape(), rng);
        auto xt = conv_transpose1d_forward(g, pa);
        ASSERT_EQ(xt.shape(), x.shape());
        const double lhs = dot(y, g), rhs = dot(x, xt);
        EXPECT_LE(std::abs(lhs - rhs), 1e-10 * std::max(std::abs(lhs), std::abs(rhs)));
    }
}

TEST(ConvBackward, AccumulatesAcrossCalls) {
    Rng rng(8);
    for (bool transposed : {false, true}) {
        ConvSpec spec = transposed ? ConvSpec{4, 3, 4, 2, 1, true} : ConvSpec{3, 4, 4, 2, 1, false};
        auto p = random_conv(spec, rng);
        auto x = random_tensor({2, spec.in_channels, transposed ? 8u : 16u}, rng);
        auto y = transposed ? conv_transpose1d_forward(x, p) : conv1d_forward(x, p);
        auto g1 = random_tensor(y.shape(), rng), g2 = random_tensor(y.shape(), rng);
        auto back = [&](const Tensor<double>& g) {
            return transposed ? conv_transpose1d_backward(x, g, p) : conv1d_backward(x, g, p);
        };
        p.zero_grad();
        back(g1);
        const auto w1 = p.grad_weight;
        const auto b1 = p.grad_bias;
        p.zero_grad();
        back(g2);
        const auto w2 = p.grad_weight;
        const auto b2 = p.grad_bias;
        p.zero_grad();
        back(g1);
        back(g2);
        for (std::size_t i = 0; i < w1.size(); ++i) EXPECT_NEAR(p.grad_weight[i], w1[i] + w2[i], 1e-12);
        for (std::size_t i = 0; i < b1.size(); ++i) EXPECT_NEAR(p.grad_bias[i], b1[i] + b2[i], 1e-12);
        p.zero_grad();
        for (double v : p.grad_weight) EXPECT_EQ(v, 0.0);
    }
}

// --- finite differences -----------------------------------------------------

TEST(GradCheck, Conv1d) {
    Rng rng(9);
    auto r = gradcheck::conv({2, 3, 16}, ConvSpec{3, 4, 4, 2, 1, false}, rng, 1e-6);
    EXPECT_LT(r.max_rel_error, 1e-5) << r.worst_target << "[" << r.worst_index << "]";
}

TEST(GradCheck, ConvTranspose1d) {
    Rng rng(10);
    auto r = gradcheck::conv({2, 4, 8}, ConvSpec{4, 3, 4, 2, 1, true}, rng, 1e-6);
    EXPECT_LT(r.max_rel_error, 1e-5) << r.worst_target << "[" << r.worst_index << "]";
}

TEST(GradCheck, BatchNorm) {
    Rng rng(11);
    auto r = gradcheck::batchnorm({4, 3, 16}, rng, 1e-5);
    EXPECT_LT(r.max_rel_error, 1e-5) << r.worst_target << "[" << r.worst_index << "]";
}

TEST(GradCheck, InstanceNorm) {
    Rng rng(12);
    auto r = gradcheck::instancenorm({2, 3, 32}, rng, 1e-5);
    EXPECT_LT(r.max_rel_error, 1e-5) << r.worst_target << "[" << r.worst_index << "]";
}

TEST(GradCheck, Activations) {
    Rng rng(13);
    for (auto act : {Activation::relu(), Activation::leaky_relu(0.2)}) {
        auto r = gradcheck::activation({2, 3, 16}, act, rng, 1e-6);
        EXPECT_LT(r.max_rel_error, 1e-6) << r.label;
    }
}

TEST(GradCheck, DropoutWithFixedMask) {
    Rng rng(14);
    auto r = gradcheck::dropout({2, 3, 16}, 0.3, rng, 1e-6);
    EXPECT_LT(r.max_rel_error, 1e-6);
}

TEST(GradCheck, AllLayersUpToSmallShapes) {
    Rng rng(15);
    for (std::size_t C : {1u, 2u, 4u})
        for (std::size_t L : {8u, 16u, 32u}) {
            auto rc = gradcheck::conv({4, C, L}, ConvSpec{C, 4, 4, 2, 1, false}, rng, 1e-5);
            EXPECT_LT(rc.max_rel_error, 1e-5) << "conv C=" << C << " L=" << L;
            auto rt = gradcheck::conv({4, C, L}, ConvSpec{C, 4, 4, 2, 1, true}, rng, 1e-5);
            EXPECT_LT(rt.max_rel_error, 1e-5) << "convT C=" << C << " L=" << L;
            auto rb = gradcheck::batchnorm({4, C, L}, rng, 1e-5);
            EXPECT_LT(rb.max_rel_error, 1e-5) << "bn C=" << C << " L=" << L;
            auto ri = gradcheck::instancenorm({4, C, L}, rng, 1e-5);
            EXPECT_LT(ri.max_rel_error, 1e-5) << "in C=" << C << " L=" << L;
        }
}

TEST(GradCheck, RelativeErrorFloor) {
    EXPECT_EQ(relative_error(0.0, 0.0), 0.0);
    EXPECT_DOUBLE_EQ(relative_error(1.0, 2.0), 0.5);
    EXPECT_DOUBLE_EQ(relative_error(0.0, 1e-13), 1e-13 / 1e-12);
}

TEST(GradCheck, DetectsWrongGradient) {
    std::vector<double> x{1.0, 2.0};
    std::vector<double> wrong{2.0, 5.0};  // true gradient of x0^2 + x1^2 is (2, 4)
    std::vector<GradCheckTarget> t{{"x", x, wrong}};
    auto r = finite_difference_check([&] { return x[0] * x[0] + x[1] * x[1]; }, t);
    EXPECT_NEAR(r.max_rel_error, 0.2, 1e-6);
    EXPECT_EQ(r.worst_index, 1u);
}

// --- batch norm ---------------------------------------------------------------

TEST(BatchNorm, TrainModeNormalizesPerChannel) {
    Rng rng(16);
    auto x = random_tensor({4, 3, 16}, rng);
    for (auto& v : x.span()) v = 3.0 * v + 5.0;
    NormParams<double> p(3);
    auto y = batchnorm1d_forward(x, p, Mode::train);
    for (std::size_t c = 0; c < 3; ++c) {
        double s = 0.0, ss = 0.0;
        for (std::size_t b = 0; b < 4; ++b)
            for (double v : y.row(b, c)) s += v;
        const double m = s / 64.0;
        for (std::size_t b = 0; b < 4; ++b)
            for (double v : y.row(b, c)) ss += (v - m) * (v - m);
        EXPECT_NEAR(m, 0.0, 1e-6);
        EXPECT_NEAR(ss / 64.0, 1.0, 1e-5 * 2);  // eps = 1e-5 shrinks the variance slightly
    }
}

TEST(BatchNorm, ConstantChannelGivesShift) {
    Tensor<double> x(2, 2, 8, 4.0);
    NormParams<double> p(2);
    p.shift = {0.5, -1.5};
    auto y = batchnorm1d_forward(x, p, Mode::train);
    for (std::size_t b = 0; b < 2; ++b) {
        for (double v : y.row(b, 0)) EXPECT_DOUBLE_EQ(v, 0.5);
        for (double v : y.row(b, 1)) EXPECT_DOUBLE_EQ(v, -1.5);
    }
}

TEST(BatchNorm, RunningStatisticsAndInferMode) {
    Rng rng(17);
    auto x = random_tensor({4, 2, 8}, rng);
    NormParams<double> p(2);
    batchnorm1d_forward(x, p, Mode::train);
    double s = 0.0;
    for (std::size_t b = 0; b < 4; ++b)
        for (double v : x.row(b, 0)) s += v;
    const double mean0 = s / 32.0;
    double ss = 0.0;
    for (std::size_t b = 0; b < 4; ++b)
        for (double v : x.row(b, 0)) ss += (v - mean0) * (v - mean0);
    EXPECT_NEAR(p.running_mean[0], 0.1 * mean0, 1e-12);
    EXPECT_NEAR(p.running_var[0], 0.9 + 0.1 * ss / 31.0, 1e-12);

    NormParams<double> q(1);
    q.running_mean = {2.0};
    q.running_var = {4.0};
    Tensor<double> in(1, 1, 3);
    in.vec() = {2.0, 4.0, 0.0};
    auto y = batchnorm1d_forward(in, q, Mode::infer);
    const double d = std::sqrt(4.0 + 1e-5);
    EXPECT_NEAR(y(0, 0, 0), 0.0, 1e-15);
    EXPECT_NEAR(y(0, 0, 1), 2.0 / d, 1e-15);
    EXPECT_NEAR(y(0, 0, 2), -2.0 / d, 1e-15);
    EXPECT_EQ(q.running_mean[0], 2.0);
}

TEST(BatchNorm, SingleElementPerChannelIsDegenerate) {
    NormParams<double> p(2);
    EXPECT_THROW(batchnorm1d_forward(Tensor<double>(1, 2, 1), p, Mode::train), DegenerateStatisticsError);
    EXPECT_NO_THROW(batchnorm1d_forward(Tensor<double>(1, 2, 1), p, Mode::infer));
}

// --- instance norm ------------------------------------------------------------

TEST(InstanceNorm, EverySliceNormalized) {
    Rng rng(18);
    auto x = random_tensor({3, 2, 32}, rng);
    for (auto& v : x.span()) v = 2.0 * v - 7.0;
    NormParams<double> p(2);
    auto y = instancenorm1d_forward(x, p);
    for (std::size_t b = 0; b < 3; ++b)
        for (std::size_t c = 0; c < 2; ++c) {
            std::vector<double> r(y.row(b, c).begin(), y.row(b, c).end());
            EXPECT_NEAR(oracle::mean(r), 0.0, 1e-6);
            EXPECT_NEAR(oracle::pop_std(r) * oracle::pop_std(r), 1.0, 1e-5);
        }
}

TEST(InstanceNorm, IdenticalSamplesGiveIdenticalOutputs) {
    Rng rng(19);
    auto one = random_tensor({1, 3, 16}, rng);
    Tensor<double> x(4, 3, 16);
    for (std::size_t b = 0; b < 4; ++b)
        for (std::size_t c = 0; c < 3; ++c) std::ranges::copy(one.row(0, c), x.row(b, c).begin());
    NormParams<double> p(3);
    auto y = instancenorm1d_forward(x, p);
    for (std::size_t b = 1; b < 4; ++b)
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t t = 0; t < 16; ++t) EXPECT_EQ(y(b, c, t), y(0, c, t));
}

TEST(InstanceNorm, LengthOneIsDegenerate) {
    NormParams<double> p(1);
    EXPECT_THROW(instancenorm1d_forward(Tensor<double>(4, 1, 1), p), DegenerateStatisticsError);
}

// --- activations ----------------------------------------------------------------

TEST(Activation, ReluValues) {
    Tensor<double> x(1, 1, 3);
    x.vec() = {-1.0, 0.0, 2.0};
    auto y = activation_forward(x, Activation::relu());
    EXPECT_EQ(y.vec(), (std::vector<double>{0.0, 0.0, 2.0}));
}

TEST(Activation, LeakyReluValues) {
    Tensor<double> x(1, 1, 2);
    x.vec() = {-1.0, 3.0};
    auto y = activation_forward(x, Activation::leaky_relu(0.2));
    EXPECT_DOUBLE_EQ(y(0, 0, 0), -0.2);
    EXPECT_DOUBLE_EQ(y(0, 0, 1), 3.0);
    Tensor<double> g(1, 1, 2, 1.0);
    auto gx = activation_backward(x, g, Activation::leaky_relu(0.2));
    EXPECT_DOUBLE_EQ(gx(0, 0, 0), 0.2);
    EXPECT_DOUBLE_EQ(gx(0, 0, 1), 1.0);
}

TEST(Activation, IdentityPassesThrough) {
    Rng rng(20);
    auto x = random_tensor({2, 2, 5}, rng);
    EXPECT_EQ(activation_forward(x, Activation::identity()), x);
}

// --- dropout ----------------------------------------------------------------------

TEST(Dropout, RateZeroAndInferAreIdentity) {
    Rng rng(21);
    auto x = random_tensor({2, 3, 8}, rng);
    EXPECT_EQ(dropout_forward(x, 0.0, rng, Mode::train), x);
    EXPECT_EQ(dropout_forward(x, 0.7, rng, Mode::infer), x);
}

TEST(Dropout, LawOfLargeNumbers) {
    Rng rng(22);
    Tensor<double> x(1, 1, 1000000, 1.0);
    Tensor<double> mask;
    auto y = dropout_forward(x, 0.3, rng, Mode::train, &mask);
    double sum = 0.0;
    std::size_t zeros = 0;
    for (double v : y.span()) {
        sum += v;
        zeros += v == 0.0;
    }
    EXPECT_NEAR(sum / 1e6, 1.0, 0.01);
    EXPECT_NEAR(double(zeros) / 1e6, 0.3, 0.01 * 0.3);
    auto g = dropout_backward(x, mask);
    EXPECT_EQ(g, y);
}

TEST(Dropout, InvalidRateIsConfigError) {
    Rng rng(23);
    Tensor<double> x(1, 1, 4, 1.0);
    EXPECT_THROW(dropout_forward(x, 1.0, rng, Mode::train), ConfigError);
    EXPECT_THROW(dropout_forward(x, -0.1, rng, Mode::train), ConfigError);
}

// --- tensor -----------------------------------------------------------------------

TEST(Tensor, NonFiniteDetection) {
    Tensor<float> t(1, 2, 3);
    EXPECT_FALSE(t.first_non_finite().has_value());
    t(0, 1, 2) = std::numeric_limits<float>::quiet_NaN();
    EXPECT_EQ(t.first_non_finite(), 5u);
    EXPECT_THROW(t.check_finite("t"), DataError);
}

TEST(Tensor, DataSizeMustMatchShape) {
    EXPECT_THROW(Tensor<double>(Shape{1, 2, 3}, std::vector<double>(5)), DimensionError);
}

TEST(Parallel, ThreadedKernelsAreBitIdentical) {
    Rng rng(24);
    auto p = random_conv({8, 16, 4, 2, 1, false}, rng);
    auto x = random_tensor({6, 8, 64}, rng);
    auto g = random_tensor({6, 16, 32}, rng);
    const std::size_t saved = thread_count();
    thread_count() = 0;
    auto y0 = conv1d_forward(x, p);
    p.zero_grad();
    auto gx0 = conv1d_backward(x, g, p);
    auto gw0 = p.grad_weight;
    thread_count() = 3;
    auto y1 = conv1d_forward(x, p);
    p.zero_grad();
    auto gx1 = conv1d_backward(x, g, p);
    thread_count() = saved;
    EXPECT_EQ(y0, y1);
    EXPECT_EQ(gx0, gx1);
    EXPECT_EQ(gw0, p.grad_weight);
}
