#include <cmath>

#include "test_support.hpp"
#include "wsmt/gradcheck.hpp"
#include "wsmt/tcn.hpp"

using namespace wsmt;
using wsmt::testing::expect_values;

namespace {

// [1, 1, T] series
Tensor64 series(std::vector<double> v) {
    const std::size_t n = v.size();
    return Tensor64({1, 1, n}, std::move(v));
}

Conv1dParams<double> kernel3(std::vector<double> w, std::size_t dilation) {
    const std::size_t k = w.size();
    auto p = make_conv<double>(1, 1, k, dilation);
    p.weight.value = Tensor64({1, 1, k}, std::move(w));
    return p;
}

}  // namespace

TEST(DilatedConv, CenteredDifference) {
    // taps ordered i = -1, 0, 1 read x[t+1], x[t], x[t-1]
    auto p = kernel3({1, 0, -1}, 1);
    expect_values(dilated_conv_forward(series({1, 2, 3, 4, 5}), p), {2, 2, 2, 2, -4});
}

TEST(DilatedConv, DilationTwo) {
    auto p = kernel3({1, 0, -1}, 2);
    expect_values(dilated_conv_forward(series({1, 2, 3, 4, 5}), p), {3, 4, 4, -2, -3});
}

TEST(DilatedConv, DeltaKernelIsIdentity) {
    auto p = kernel3({0, 1, 0}, 3);
    expect_values(dilated_conv_forward(series({1, -2, 3, 7}), p), {1, -2, 3, 7});
}

TEST(DilatedConv, BiasIsAdded) {
    auto p = kernel3({0, 1, 0}, 1);
    p.bias.value[0] = 0.5;
    expect_values(dilated_conv_forward(series({1, 2}), p), {1.5, 2.5});
}

TEST(DilatedConv, Errors) {
    EXPECT_THROW(make_conv<double>(1, 1, 4, 1), std::invalid_argument);
    EXPECT_THROW(make_conv<double>(1, 1, 3, 0), std::invalid_argument);
    auto p = make_conv<double>(2, 1, 3, 1);
    EXPECT_THROW(dilated_conv_forward(series({1, 2, 3}), p), ShapeError);
    EXPECT_THROW(dilated_conv_backward(ConvCache<double>{}, p, Tensor64({1, 1, 3})), MissingCacheError);
}

TEST(DilatedConv, ZeroUpstreamGivesZeroGrads) {
    std::mt19937_64 rng(1);
    auto p = make_conv<double>(2, 3, 5, 2);
    p.weight.value = wsmt::testing::random64(p.weight.value.shape(), rng);
    ConvCache<double> cache;
    dilated_conv_forward(wsmt::testing::random64({2, 2, 7}, rng), p, &cache);
    const auto g = dilated_conv_backward(cache, p, Tensor64({2, 3, 7}));
    for (const auto* t : {&g.input, &g.weight, &g.bias}) {
        for (double v : t->values()) EXPECT_EQ(v, 0.0);
    }
}

TEST(DilatedConv, DeltaKernelPassesGradient) {
    auto p = kernel3({0, 1, 0}, 2);
    ConvCache<double> cache;
    dilated_conv_forward(series({1, 2, 3, 4}), p, &cache);
    const auto g = dilated_conv_backward(cache, p, series({0.5, -1, 2, 3}));
    expect_values(g.input, {0.5, -1, 2, 3});
}

TEST(BatchNorm, NormalizesWithPopulationVariance) {
    auto s = make_batchnorm<double>(1);
    const auto y = batchnorm_forward(series({1, 2, 3}), s, Mode::train);
    // mean 2, biased variance 2/3, eps 1e-5
    const double z = 1.0 / std::sqrt(2.0 / 3.0 + 1e-5);
    expect_values(y, {-z, 0, z}, 1e-12);
    EXPECT_NEAR(y[2], 1.2247, 1e-4);
}

TEST(BatchNorm, ConstantInputMapsToZero) {
    auto s = make_batchnorm<double>(1);
    expect_values(batchnorm_forward(series({5, 5, 5}), s, Mode::train), {0, 0, 0});
}

TEST(BatchNorm, ZeroGammaYieldsBeta) {
    auto s = make_batchnorm<double>(1);
    s.gamma.value[0] = 0;
    s.beta.value[0] = 0.7;
    expect_values(batchnorm_forward(series({1, 4, -2}), s, Mode::train), {0.7, 0.7, 0.7});
}

TEST(BatchNorm, RunningStatisticsUseMomentum) {
    auto s = make_batchnorm<double>(1);
    batchnorm_forward(series({1, 2, 3}), s, Mode::train);
    EXPECT_NEAR(s.running_mean[0], 0.1 * 2.0, 1e-15);
    EXPECT_NEAR(s.running_var[0], 0.9 * 1.0 + 0.1 * (2.0 / 3.0), 1e-15);
    EXPECT_GE(s.running_var[0], 0.0);
}

TEST(BatchNorm, EvalUsesRunningStatisticsOnly) {
    auto s = make_batchnorm<double>(1);
    s.running_mean[0] = 1.0;
    s.running_var[0] = 4.0;
    const auto before = s.running_mean;
    const auto y = batchnorm_forward(series({1, 3, 5}), s, Mode::eval);
    const double inv = 1.0 / std::sqrt(4.0 + 1e-5);
    expect_values(y, {0, 2 * inv, 4 * inv}, 1e-12);
    EXPECT_TRUE(s.running_mean == before);
}

TEST(BatchNorm, NormalizesPerChannelOverBatchAndTime) {
    auto s = make_batchnorm<double>(2);
    // batch 2, channels 2, time 2; channel 1 is channel 0 scaled by 10
    Tensor64 x({2, 2, 2}, std::vector<double>{1, 2, 10, 20, 3, 4, 30, 40});
    const auto y = batchnorm_forward(x, s, Mode::train);
    for (std::size_t b = 0; b < 2; ++b) {
        for (std::size_t t = 0; t < 2; ++t) EXPECT_NEAR(y.series(b, 0)[t], y.series(b, 1)[t], 1e-5);
    }
}

TEST(BatchNorm, EmptyInputIsAnError) {
    auto s = make_batchnorm<double>(1);
    EXPECT_THROW(batchnorm_forward(Tensor64({0, 1, 3}), s, Mode::train), ShapeError);
}

TEST(Relu, Examples) {
    expect_values(relu_forward(series({-1, 0, 2})), {0, 0, 2});
    expect_values(relu_forward(series({-3, -0.5})), {0, 0});
    expect_values(relu_forward(series({0, 1.5, 4})), {0, 1.5, 4});
}

TEST(Residual, IdentityAdds) {
    Tensor64 h({1, 1, 2}, std::vector<double>{1, 2});
    Tensor64 p({1, 1, 2}, std::vector<double>{3, 4});
    expect_values(residual_combine<double>(h, p, nullptr), {4, 6});
}

TEST(Residual, ZeroBranchWithIdentityProjection) {
    auto proj = make_conv<double>(2, 2, 1, 1);
    proj.weight.value = Tensor64({2, 2, 1}, std::vector<double>{1, 0, 0, 1});
    Tensor64 x({1, 2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6});
    expect_values(residual_combine(Tensor64({1, 2, 3}), x, &proj), {1, 2, 3, 4, 5, 6});
}

TEST(Residual, OneByOneProjectionWidensChannels) {
    auto proj = make_conv<double>(1, 2, 1, 1);
    proj.weight.value = Tensor64({2, 1, 1}, std::vector<double>{2, 3});
    const auto out = residual_combine(Tensor64({1, 2, 2}), series({1, 1}), &proj);
    expect_values(out, {2, 2, 3, 3});
}

TEST(Residual, TimeMismatchIsAnError) {
    EXPECT_THROW(residual_combine<double>(Tensor64({1, 1, 3}), Tensor64({1, 1, 4}), nullptr), ShapeError);
}

TEST(MaxPool, Examples) {
    expect_values(temporal_max_pool(series({1, 3, 2, 5})), {3, 5});
    expect_values(temporal_max_pool(series({1, 3, 2})), {3});
    expect_values(temporal_max_pool(series({7, 7, 7, 7})), {7, 7});
    EXPECT_THROW(temporal_max_pool(series({1})), ShapeError);
}

TEST(MaxPool, InvariantToShiftsWithinAPoolWindow) {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        auto x = wsmt::testing::random64({2, 3, 10}, rng);
        auto swapped = x;
        for (std::size_t s = 0; s < 6; ++s) {
            for (std::size_t t = 0; t + 1 < 10; t += 2) std::swap(swapped[s * 10 + t], swapped[s * 10 + t + 1]);
        }
        EXPECT_TRUE(temporal_max_pool(x) == temporal_max_pool(swapped));
    }
}

TEST(MaxPool, OutputLengthLaw) {
    for (std::size_t len = 2; len < 20; ++len) {
        EXPECT_EQ(temporal_max_pool(Tensor64({1, 2, len})).dim(2), len / 2);
        EXPECT_EQ(temporal_max_pool(temporal_max_pool(Tensor64({1, 2, std::max<std::size_t>(len, 4)}))).dim(2),
                  std::max<std::size_t>(len, 4) / 2 / 2);
    }
}

TEST(TcnBlock, ProjectionPresentIffChannelsDiffer) {
    EXPECT_FALSE(make_tcn_block<double>(4, 4, 5, {1, 2}).residual_projection.has_value());
    EXPECT_TRUE(make_tcn_block<double>(3, 4, 5, {1, 2}).residual_projection.has_value());
    EXPECT_EQ(make_tcn_block<double>(3, 4, 5, {1, 2, 4}).layers.size(), 3u);
}

TEST(TcnBlock, ZeroBranchReturnsInput) {
    auto block = make_tcn_block<double>(2, 2, 5, {1, 2});
    std::mt19937_64 rng(2);
    const auto x = wsmt::testing::random64({2, 2, 9}, rng);
    const auto y = tcn_block_forward(x, block, Mode::train);
    EXPECT_TRUE(y == x);
}

TEST(TcnBlock, DeltaKernelWithNeutralNormDoublesInput) {
    auto block = make_tcn_block<double>(1, 1, 3, {1});
    block.layers[0].conv.weight.value = Tensor64({1, 1, 3}, std::vector<double>{0, 1, 0});
    const auto x = series({0, 0.5, 2, 3.5, 1});
    const auto y = tcn_block_forward(x, block, Mode::eval);  // running stats are mean 0, var 1
    for (std::size_t t = 0; t < x.size(); ++t) EXPECT_NEAR(y[t], 2 * x[t], 1e-5 * std::max(1.0, x[t]));
}

TEST(TcnBlock, TimeLengthPreserved) {
    auto block = make_tcn_block<double>(3, 5, 5, {1, 2});
    EXPECT_EQ(tcn_block_forward(Tensor64({2, 3, 11}), block, Mode::train).shape(), (Shape{2, 5, 11}));
}

TEST(TcnBlock, BackwardRequiresCache) {
    auto block = make_tcn_block<double>(1, 1, 3, {1});
    EXPECT_THROW(tcn_block_backward(TcnBlockCache<double>{}, block, series({1, 2})), MissingCacheError);
}

// Unit impulse through a conv stack with positive weights: the nonzero span
// of the response is the receptive field.
TEST(ReceptiveField, MatchesImpulseResponse) {
    struct Case {
        std::size_t k;
        std::vector<std::size_t> dilations;
    };
    std::mt19937_64 rng(4);
    for (const auto& c : {Case{5, {1, 2}}, Case{3, {1, 2, 4}}, Case{3, {1}}, Case{7, {2, 3}}}) {
        const std::size_t rf = receptive_field(c.k, c.dilations);
        const std::size_t len = 2 * rf + 9;
        Tensor64 x({1, 1, len});
        x[len / 2] = 1.0;
        auto h = x;
        std::size_t ch = 1;
        for (std::size_t d : c.dilations) {
            auto p = make_conv<double>(ch, 2, c.k, d);
            p.weight.value = wsmt::testing::random64(p.weight.value.shape(), rng, 0.1, 1.0);
            h = dilated_conv_forward(h, p);
            ch = 2;
        }
        std::size_t first = len, last = 0;
        for (std::size_t t = 0; t < len; ++t) {
            if (h.series(0, 0)[t] != 0.0) {
                first = std::min(first, t);
                last = t;
            }
        }
        EXPECT_EQ(last - first + 1, rf) << "k=" << c.k;
    }
    EXPECT_EQ(receptive_field(5, {1, 2}), 13u);
}

TEST(GradCheck, TcnLayerChecksPass) {
    for (const char* name :
         {"conv", "batchnorm_train", "batchnorm_eval", "relu", "max_pool", "residual_1x1", "tcn_block"}) {
        const auto r = run_gradcheck(name, 100, 11);
        EXPECT_TRUE(r.passed()) << name << " " << r.max_relative_error;
        EXPECT_EQ(r.instances, 100u);
    }
}

TEST(GradCheck, UnknownNameIsRejected) { EXPECT_THROW(run_gradcheck("nope", 1, 0), std::invalid_argument); }
