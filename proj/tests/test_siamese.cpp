#include <cmath>
#include <cstring>

#include "test_support.hpp"
#include "wsmt/gradcheck.hpp"
#include "wsmt/loss.hpp"
#include "wsmt/siamese.hpp"

using namespace wsmt;

namespace {

NetworkConfig small_config() {
    NetworkConfig c;
    c.input_channels = 2;
    c.blocks = 2;
    c.feature_maps = 4;
    c.kernel_size = 3;
    c.heads = {{Task::activity, 3}, {Task::person, 5}};
    return c;
}

std::uint64_t checksum(BasicNetwork<double>& net) {
    std::uint64_t h = 1469598103934665603ULL;
    net.for_each_param([&](const std::string&, BasicParam<double>& p) {
        for (double v : p.value.values()) {
            std::uint64_t bits;
            std::memcpy(&bits, &v, sizeof bits);
            h = (h ^ bits) * 1099511628211ULL;
        }
    });
    return h;
}

bool same_params(BasicNetwork<double>& a, BasicNetwork<double>& b) {
    auto pa = a.parameters();
    auto pb = b.parameters();
    if (pa.size() != pb.size()) return false;
    for (std::size_t i = 0; i < pa.size(); ++i) {
        if (!(pa[i]->value == pb[i]->value)) return false;
    }
    return true;
}

}  // namespace

TEST(BuildNetwork, SameSeedIsBitIdentical) {
    auto a = build_network<double>(small_config(), 42);
    auto b = build_network<double>(small_config(), 42);
    auto c = build_network<double>(small_config(), 43);
    EXPECT_TRUE(same_params(a, b));
    EXPECT_FALSE(same_params(a, c));
}

TEST(BuildNetwork, DefaultParameterCountIsFrozen) {
    const NetworkConfig cfg;
    EXPECT_EQ(cfg.parameter_count(), 480384u);
    EXPECT_EQ(build_network<float>(cfg, 0).parameter_count(), 480384u);
}

TEST(BuildNetwork, ParameterCountMatchesClosedFormOnOtherConfigs) {
    auto cfg = small_config();
    EXPECT_EQ(build_network<double>(cfg, 0).parameter_count(), cfg.parameter_count());
    cfg.dilations = {1, 2, 4};
    cfg.heads.push_back({Task::attribute, 2});
    EXPECT_EQ(build_network<double>(cfg, 0).parameter_count(), cfg.parameter_count());
}

TEST(BuildNetwork, InvalidConfigs) {
    auto cfg = small_config();
    cfg.heads[0].embedding_dim = 0;
    EXPECT_THROW(build_network<double>(cfg, 0), std::invalid_argument);
    cfg = small_config();
    cfg.blocks = 0;
    EXPECT_THROW(build_network<double>(cfg, 0), std::invalid_argument);
    cfg = small_config();
    cfg.heads.clear();
    EXPECT_THROW(build_network<double>(cfg, 0), std::invalid_argument);
    cfg = small_config();
    cfg.kernel_size = 4;
    EXPECT_THROW(build_network<double>(cfg, 0), std::invalid_argument);
}

TEST(BuildNetwork, SmallUniformInitAndNeutralNorm) {
    auto net = build_network<double>(small_config(), 7);
    for (auto& block : net.blocks) {
        for (auto& layer : block.layers) {
            const double bound = 1.0 / std::sqrt(double(layer.conv.in_channels() * layer.conv.kernel_size()));
            for (double v : layer.conv.weight.value.values()) EXPECT_LE(std::abs(v), bound);
            for (double v : layer.norm.gamma.value.values()) EXPECT_EQ(v, 1.0);
            for (double v : layer.norm.beta.value.values()) EXPECT_EQ(v, 0.0);
        }
    }
    for (auto& h : net.heads) {
        for (double v : h.weight.value.values()) EXPECT_LE(std::abs(v), 1.0 / std::sqrt(4.0));
    }
}

TEST(Encode, ZeroEncoderAveragesInputOverTime) {
    NetworkConfig cfg;
    cfg.input_channels = 3;
    cfg.feature_maps = 3;
    cfg.blocks = 2;
    cfg.pool_between_blocks = false;
    cfg.heads = {{Task::activity, 2}};
    auto net = build_network<double>(cfg, 1);
    for (auto& block : net.blocks) {
        for (auto& layer : block.layers) {
            layer.conv.weight.value.fill(0);
            layer.conv.bias.value.fill(0);
        }
    }
    std::mt19937_64 rng(3);
    const auto x = wsmt::testing::random64({2, 3, 10}, rng);
    const auto g = encode(net, x, Mode::train);
    ASSERT_EQ(g.shape(), (Shape{2, 3}));
    for (std::size_t b = 0; b < 2; ++b) {
        for (std::size_t c = 0; c < 3; ++c) {
            double mean = 0;
            for (double v : x.series(b, c)) mean += v;
            EXPECT_NEAR(g[b * 3 + c], mean / 10, 1e-12);
        }
    }
}

TEST(Encode, FinalTimeLengthLaw) {
    NetworkConfig cfg;
    cfg.input_channels = 2;
    cfg.feature_maps = 4;
    cfg.heads = {{Task::activity, 2}};
    auto net = build_network<double>(cfg, 1);
    for (std::size_t len : {4u, 7u, 13u, 64u}) {
        EncodeCache<double> cache;
        encode(net, Tensor64({1, 2, len}, 0.5), Mode::eval, &cache);
        EXPECT_EQ(cache.final_shape.back(), len / 2 / 2);
    }
    EXPECT_EQ(cfg.min_length(), 4u);
    EXPECT_THROW(encode(net, Tensor64({1, 2, 3}), Mode::eval), ShapeError);
}

TEST(Encode, IdenticalWindowsGiveIdenticalRows) {
    auto net = build_network<double>(small_config(), 2);
    std::mt19937_64 rng(8);
    const auto w = wsmt::testing::random64({1, 2, 12}, rng);
    Tensor64 x({3, 2, 12});
    for (std::size_t b = 0; b < 3; ++b) std::copy(w.values().begin(), w.values().end(), x.row(b).begin());
    const auto g = encode(net, x, Mode::train);
    for (std::size_t b = 1; b < 3; ++b) {
        for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(g[b * 4 + c], g[c]);
    }
}

TEST(Encode, BatchPermutationPermutesRowsInEvalMode) {
    auto net = build_network<double>(small_config(), 2);
    std::mt19937_64 rng(8);
    const auto x = wsmt::testing::random64({3, 2, 12}, rng);
    Tensor64 perm({3, 2, 12});
    const std::size_t order[] = {2, 0, 1};
    for (std::size_t b = 0; b < 3; ++b) {
        auto src = x.row(order[b]);
        std::copy(src.begin(), src.end(), perm.row(b).begin());
    }
    const auto g = encode(net, x, Mode::eval);
    const auto gp = encode(net, perm, Mode::eval);
    for (std::size_t b = 0; b < 3; ++b) {
        for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(gp[b * 4 + c], g[order[b] * 4 + c]);
    }
}

TEST(ForwardPair, SameInputGivesZeroDistance) {
    auto net = build_network<double>(small_config(), 5);
    std::mt19937_64 rng(1);
    const auto x = wsmt::testing::random64({2, 2, 16}, rng);
    auto fwd = forward_pair(net, x, x, Mode::eval);
    for (const auto& [task, ha] : fwd.a) {
        for (std::size_t r = 0; r < 2; ++r) EXPECT_EQ(pair_distance(ha.row(r), fwd.b.at(task).row(r)), 0.0);
    }
}

TEST(ForwardPair, DistinctInputsGiveDistinctEmbeddings) {
    auto cfg = small_config();
    cfg.heads = {{Task::activity, 4}};
    auto net = build_network<double>(cfg, 5);
    net.heads[0].weight.value = Tensor64({4, 4}, std::vector<double>{1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1});
    std::mt19937_64 rng(1);
    const auto xa = wsmt::testing::random64({1, 2, 16}, rng);
    const auto xb = wsmt::testing::random64({1, 2, 16}, rng);
    auto fwd = forward_pair(net, xa, xb, Mode::eval);
    EXPECT_GT(pair_distance(fwd.a.at(Task::activity).row(0), fwd.b.at(Task::activity).row(0)), 0.0);
}

TEST(ForwardPair, BranchLengthsMayDifferButChannelsMustMatch) {
    auto net = build_network<double>(small_config(), 5);
    EXPECT_NO_THROW(forward_pair(net, Tensor64({1, 2, 8}, 1.0), Tensor64({1, 2, 20}, 1.0), Mode::eval));
    EXPECT_THROW(forward_pair(net, Tensor64({1, 2, 8}), Tensor64({1, 3, 8}), Mode::eval), ShapeError);
}

TEST(BackwardPair, ZeroUpstreamGivesZeroGrads) {
    auto net = build_network<double>(small_config(), 5);
    std::mt19937_64 rng(1);
    auto fwd = forward_pair(net, wsmt::testing::random64({2, 2, 8}, rng), wsmt::testing::random64({2, 2, 8}, rng),
                            Mode::train);
    BasicEmbeddingSet<double> zeros;
    for (const auto& [task, h] : fwd.a) zeros.emplace(task, Tensor64(h.shape()));
    backward_pair(net, fwd.cache, zeros, zeros);
    net.for_each_param([](const std::string& name, BasicParam<double>& p) {
        for (double v : p.grad.values()) EXPECT_EQ(v, 0.0) << name;
    });
}

TEST(BackwardPair, ActivityOnlyGradientsLeavePersonHeadUntouched) {
    auto net = build_network<double>(small_config(), 5);
    std::mt19937_64 rng(1);
    auto fwd = forward_pair(net, wsmt::testing::random64({2, 2, 8}, rng), wsmt::testing::random64({2, 2, 8}, rng),
                            Mode::train);
    BasicEmbeddingSet<double> ga, gb;
    ga.emplace(Task::activity, wsmt::testing::random64(fwd.a.at(Task::activity).shape(), rng));
    gb.emplace(Task::activity, wsmt::testing::random64(fwd.b.at(Task::activity).shape(), rng));
    backward_pair(net, fwd.cache, ga, gb);
    for (double v : net.head(Task::person)->weight.grad.values()) EXPECT_EQ(v, 0.0);
    double encoder_norm = 0;
    for (double v : net.blocks[0].layers[0].conv.weight.grad.values()) encoder_norm += v * v;
    EXPECT_GT(encoder_norm, 0.0);
}

TEST(BackwardPair, RequiresCache) {
    auto net = build_network<double>(small_config(), 5);
    EXPECT_THROW(backward_pair(net, PairCache<double>{}, {}, {}), MissingCacheError);
}

TEST(Heads, PerturbingOneHeadChangesOnlyItsEmbedding) {
    auto net = build_network<double>(small_config(), 5);
    std::mt19937_64 rng(1);
    const auto x = wsmt::testing::random64({2, 2, 8}, rng);
    const auto before = embed(net, x, Mode::eval);
    net.head(Task::activity)->weight.value[0] += 0.25;
    const auto after = embed(net, x, Mode::eval);
    EXPECT_FALSE(before.at(Task::activity) == after.at(Task::activity));
    EXPECT_TRUE(before.at(Task::person) == after.at(Task::person));
}

TEST(WeightSharing, BranchesShareOneParameterSet) {
    auto net = build_network<double>(small_config(), 5);
    std::mt19937_64 rng(1);
    const auto xa = wsmt::testing::random64({3, 2, 8}, rng);
    const auto xb = wsmt::testing::random64({3, 2, 8}, rng);
    // Structurally there is one encoder and one head per task.
    EXPECT_EQ(net.blocks.size(), 2u);
    EXPECT_EQ(net.heads.size(), 2u);

    // A training step moves the shared storage; both branches then see the same weights.
    auto fwd = forward_pair(net, xa, xb, Mode::train);
    std::vector<SimilarityLabel> labels(3);
    for (auto& l : labels) {
        l.set(Task::activity, false);
        l.set(Task::person, true);
    }
    BasicEmbeddingSet<double> ga, gb;
    multitask_loss<double>(fwd.a, fwd.b, labels, LossConfig{}, &ga, &gb);
    backward_pair(net, fwd.cache, ga, gb);
    for (auto* p : net.parameters()) {
        for (std::size_t i = 0; i < p->value.size(); ++i) p->value[i] -= 0.01 * p->grad[i];
    }
    const auto sum = checksum(net);
    auto again = forward_pair(net, xa, xa, Mode::eval);
    for (const auto& [task, h] : again.a) EXPECT_TRUE(h == again.b.at(task));
    EXPECT_EQ(checksum(net), sum);
    EXPECT_TRUE(embed(net, xa, Mode::eval).at(Task::person) == again.a.at(Task::person));
}

TEST(Network, CastPreservesOutputs) {
    auto net = build_network<double>(small_config(), 9);
    auto f = net.cast<float>();
    std::mt19937_64 rng(1);
    const auto x = wsmt::testing::random64({2, 2, 8}, rng);
    const auto a = embed(net, x, Mode::eval).at(Task::activity);
    const auto b = embed(f, x.cast<float>(), Mode::eval).at(Task::activity);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-5);
}

TEST(GradCheck, PipelineMatchesFiniteDifferences) {
    const auto r = run_gradcheck("siamese_pipeline", 100, 3);
    EXPECT_TRUE(r.passed()) << r.max_relative_error;
    const auto fc = run_gradcheck("fc_head", 100, 3);
    EXPECT_TRUE(fc.passed()) << fc.max_relative_error;
}
