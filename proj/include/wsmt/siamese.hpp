#pragma once

// Multi-output siamese network. One TCN encoder and one FC head per task
// are stored once; both inputs of a pair run through the same storage, so
// the two branches are shared by construction rather than by copying.

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "wsmt/task.hpp"
#include "wsmt/tcn.hpp"
#include "wsmt/tensor.hpp"

namespace wsmt {

struct HeadSpec {
    Task task = Task::activity;
    std::size_t embedding_dim = 256;

    friend bool operator==(const HeadSpec&, const HeadSpec&) = default;
};

struct NetworkConfig {
    std::size_t input_channels = 3;
    std::size_t blocks = 3;
    std::size_t feature_maps = 128;
    std::size_t kernel_size = 5;
    std::vector<std::size_t> dilations{1, 2};  // one conv layer per entry
    bool pool_between_blocks = true;
    std::vector<HeadSpec> heads{{Task::activity, 256}, {Task::person, 256}};

    void validate() const;
    // Shortest input that survives every pooling stage.
    std::size_t min_length() const;
    bool has_head(Task t) const;
    // Closed-form trainable parameter count.
    std::size_t parameter_count() const;

    friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

template <typename Scalar>
struct Head {
    Task task = Task::activity;
    BasicParam<Scalar> weight;  // [dim, feature_maps]
    BasicParam<Scalar> bias;    // [dim]

    template <typename Other>
    Head<Other> cast() const {
        return {task, weight.template cast<Other>(), bias.template cast<Other>()};
    }
};

template <typename Scalar>
using BasicEmbeddingSet = std::map<Task, BasicTensor<Scalar>>;
using EmbeddingSet = BasicEmbeddingSet<float>;

template <typename Scalar>
class BasicNetwork {
public:
    NetworkConfig config;
    std::vector<TcnBlockParams<Scalar>> blocks;
    std::vector<Head<Scalar>> heads;

    Head<Scalar>* head(Task t) {
        for (auto& h : heads)
            if (h.task == t) return &h;
        return nullptr;
    }
    const Head<Scalar>* head(Task t) const { return const_cast<BasicNetwork*>(this)->head(t); }

    // Visits every trainable parameter in a fixed order with a stable name.
    template <typename F>
    void for_each_param(F&& f) {
        for (std::size_t b = 0; b < blocks.size(); ++b) {
            const std::string prefix = "encoder." + std::to_string(b);
            auto& block = blocks[b];
            for (std::size_t l = 0; l < block.layers.size(); ++l) {
                const std::string lp = prefix + ".layer" + std::to_string(l);
                f(lp + ".conv.weight", block.layers[l].conv.weight);
                f(lp + ".conv.bias", block.layers[l].conv.bias);
                f(lp + ".bn.gamma", block.layers[l].norm.gamma);
                f(lp + ".bn.beta", block.layers[l].norm.beta);
            }
            if (block.residual_projection) {
                f(prefix + ".residual.weight", block.residual_projection->weight);
                f(prefix + ".residual.bias", block.residual_projection->bias);
            }
        }
        for (auto& h : heads) {
            const std::string hp = "head." + std::string(task_name(h.task));
            f(hp + ".weight", h.weight);
            f(hp + ".bias", h.bias);
        }
    }

    template <typename F>
    void for_each_param(F&& f) const {
        const_cast<BasicNetwork*>(this)->for_each_param(
            [&](const std::string& name, BasicParam<Scalar>& p) { f(name, static_cast<const BasicParam<Scalar>&>(p)); });
    }

    // Non-trainable state (batch-norm running statistics).
    template <typename F>
    void for_each_buffer(F&& f) {
        for (std::size_t b = 0; b < blocks.size(); ++b) {
            for (std::size_t l = 0; l < blocks[b].layers.size(); ++l) {
                const std::string lp = "encoder." + std::to_string(b) + ".layer" + std::to_string(l);
                f(lp + ".bn.running_mean", blocks[b].layers[l].norm.running_mean);
                f(lp + ".bn.running_var", blocks[b].layers[l].norm.running_var);
            }
        }
    }

    std::vector<BasicParam<Scalar>*> parameters() {
        std::vector<BasicParam<Scalar>*> out;
        for_each_param([&](const std::string&, BasicParam<Scalar>& p) { out.push_back(&p); });
        return out;
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for_each_param([&](const std::string&, const BasicParam<Scalar>& p) { n += p.value.size(); });
        return n;
    }

    void zero_grads() {
        for_each_param([](const std::string&, BasicParam<Scalar>& p) { p.zero_grad(); });
    }

    template <typename Other>
    BasicNetwork<Other> cast() const {
        BasicNetwork<Other> out;
        out.config = config;
        for (const auto& b : blocks) out.blocks.push_back(b.template cast<Other>());
        for (const auto& h : heads) out.heads.push_back(h.template cast<Other>());
        return out;
    }
};

using Network = BasicNetwork<float>;

namespace detail {

template <typename Scalar>
void fill_uniform(BasicTensor<Scalar>& t, double bound, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (auto& v : t.values()) v = Scalar(dist(rng));
}

template <typename Scalar>
void init_conv(Conv1dParams<Scalar>& c, std::mt19937_64& rng) {
    const double bound = 1.0 / std::sqrt(double(c.in_channels() * c.kernel_size()));
    fill_uniform(c.weight.value, bound, rng);
    fill_uniform(c.bias.value, bound, rng);
}

}  // namespace detail

// Deterministic from (cfg, seed): conv and FC weights and biases are uniform
// in +-1/sqrt(fan_in); batch-norm gamma = 1, beta = 0.
template <typename Scalar>
BasicNetwork<Scalar> build_network(const NetworkConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    std::mt19937_64 rng(seed);
    BasicNetwork<Scalar> net;
    net.config = cfg;
    std::size_t ch = cfg.input_channels;
    for (std::size_t b = 0; b < cfg.blocks; ++b) {
        auto block = make_tcn_block<Scalar>(ch, cfg.feature_maps, cfg.kernel_size, cfg.dilations);
        for (auto& layer : block.layers) detail::init_conv(layer.conv, rng);
        if (block.residual_projection) detail::init_conv(*block.residual_projection, rng);
        net.blocks.push_back(std::move(block));
        ch = cfg.feature_maps;
    }
    for (const auto& spec : cfg.heads) {
        Head<Scalar> h{spec.task, BasicParam<Scalar>(BasicTensor<Scalar>({spec.embedding_dim, cfg.feature_maps})),
                       BasicParam<Scalar>(BasicTensor<Scalar>({spec.embedding_dim}))};
        const double bound = 1.0 / std::sqrt(double(cfg.feature_maps));
        detail::fill_uniform(h.weight.value, bound, rng);
        detail::fill_uniform(h.bias.value, bound, rng);
        net.heads.push_back(std::move(h));
    }
    return net;
}

// ---------------------------------------------------------------------------
// Encoder: blocks (with pooling between them) then a global temporal average
// ---------------------------------------------------------------------------

template <typename Scalar>
struct EncodeCache {
    std::vector<TcnBlockCache<Scalar>> blocks;
    std::vector<PoolCache> pools;
    Shape final_shape;
    bool filled = false;
};

template <typename Scalar>
BasicTensor<Scalar> encode(BasicNetwork<Scalar>& net, const BasicTensor<Scalar>& x, Mode mode,
                           EncodeCache<Scalar>* cache = nullptr) {
    const auto& cfg = net.config;
    if (x.rank() != 3 || x.dim(1) != cfg.input_channels) {
        throw ShapeError("encoder expects [batch, " + std::to_string(cfg.input_channels) + ", time], got " +
                         shape_string(x.shape()));
    }
    if (x.dim(2) < cfg.min_length()) {
        throw ShapeError("input length " + std::to_string(x.dim(2)) + " is shorter than the encoder minimum " +
                         std::to_string(cfg.min_length()));
    }
    if (cache) {
        cache->blocks.assign(net.blocks.size(), {});
        cache->pools.assign(net.blocks.size(), {});
        cache->filled = true;
    }
    BasicTensor<Scalar> h = x;
    for (std::size_t b = 0; b < net.blocks.size(); ++b) {
        if (b > 0 && cfg.pool_between_blocks) h = temporal_max_pool(h, cache ? &cache->pools[b] : nullptr);
        h = tcn_block_forward(h, net.blocks[b], mode, cache ? &cache->blocks[b] : nullptr);
    }
    const std::size_t batch = h.dim(0), ch = h.dim(1), len = h.dim(2);
    if (cache) cache->final_shape = h.shape();
    BasicTensor<Scalar> general({batch, ch});
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t c = 0; c < ch; ++c) {
            Scalar sum = 0;
            for (Scalar v : h.series(b, c)) sum += v;
            general[b * ch + c] = sum / Scalar(len);
        }
    }
    return general;
}

template <typename Scalar>
BasicTensor<Scalar> encode_backward(BasicNetwork<Scalar>& net, const EncodeCache<Scalar>& cache,
                                    const BasicTensor<Scalar>& grad_general) {
    if (!cache.filled) throw MissingCacheError("encode_backward called without a forward cache");
    const std::size_t batch = cache.final_shape[0], ch = cache.final_shape[1], len = cache.final_shape[2];
    if (grad_general.shape() != Shape{batch, ch}) throw ShapeError("encode backward: gradient shape mismatch");
    BasicTensor<Scalar> g(cache.final_shape);
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t c = 0; c < ch; ++c) {
            const Scalar v = grad_general[b * ch + c] / Scalar(len);
            for (auto& e : g.series(b, c)) e = v;
        }
    }
    for (std::size_t b = net.blocks.size(); b-- > 0;) {
        g = tcn_block_backward(cache.blocks[b], net.blocks[b], g);
        if (b > 0 && net.config.pool_between_blocks) g = temporal_max_pool_backward(cache.pools[b], g);
    }
    return g;
}

// ---------------------------------------------------------------------------
// Single branch and pair evaluation
// ---------------------------------------------------------------------------

template <typename Scalar>
struct BranchCache {
    EncodeCache<Scalar> encoder;
    BasicTensor<Scalar> general;
    bool filled = false;
};

template <typename Scalar>
BasicEmbeddingSet<Scalar> embed(BasicNetwork<Scalar>& net, const BasicTensor<Scalar>& x, Mode mode,
                                BranchCache<Scalar>* cache = nullptr, BasicTensor<Scalar>* general_out = nullptr) {
    auto general = encode(net, x, mode, cache ? &cache->encoder : nullptr);
    BasicEmbeddingSet<Scalar> out;
    for (const auto& h : net.heads) out.emplace(h.task, linear_forward(h.weight, general, h.bias));
    if (general_out) *general_out = general;
    if (cache) {
        cache->general = std::move(general);
        cache->filled = true;
    }
    return out;
}

// Accumulates parameter grads for one branch; tasks missing from `grads` contribute nothing.
template <typename Scalar>
BasicTensor<Scalar> embed_backward(BasicNetwork<Scalar>& net, const BranchCache<Scalar>& cache,
                                   const BasicEmbeddingSet<Scalar>& grads) {
    if (!cache.filled) throw MissingCacheError("embed_backward called without a forward cache");
    BasicTensor<Scalar> g_general(cache.general.shape());
    for (const auto& [task, g] : grads) {
        auto* h = net.head(task);
        if (!h) throw std::invalid_argument("gradient supplied for missing head '" + std::string(task_name(task)) + "'");
        auto gx = linear_backward(h->weight, cache.general, h->bias, g);
        for (std::size_t i = 0; i < gx.size(); ++i) g_general[i] += gx[i];
    }
    return encode_backward(net, cache.encoder, g_general);
}

template <typename Scalar>
struct PairCache {
    BranchCache<Scalar> a;
    BranchCache<Scalar> b;
};

template <typename Scalar>
struct PairForward {
    BasicEmbeddingSet<Scalar> a;
    BasicEmbeddingSet<Scalar> b;
    PairCache<Scalar> cache;
};

// Both inputs pass through the same parameters. Time lengths may differ.
template <typename Scalar>
PairForward<Scalar> forward_pair(BasicNetwork<Scalar>& net, const BasicTensor<Scalar>& x_a,
                                 const BasicTensor<Scalar>& x_b, Mode mode) {
    if (x_a.rank() != 3 || x_b.rank() != 3 || x_a.dim(1) != x_b.dim(1)) {
        throw ShapeError("pair inputs must share the channel count: " + shape_string(x_a.shape()) + " vs " +
                         shape_string(x_b.shape()));
    }
    PairForward<Scalar> out;
    out.a = embed(net, x_a, mode, &out.cache.a);
    out.b = embed(net, x_b, mode, &out.cache.b);
    return out;
}

template <typename Scalar>
void backward_pair(BasicNetwork<Scalar>& net, const PairCache<Scalar>& cache, const BasicEmbeddingSet<Scalar>& grads_a,
                   const BasicEmbeddingSet<Scalar>& grads_b) {
    embed_backward(net, cache.a, grads_a);
    embed_backward(net, cache.b, grads_b);
}

}  // namespace wsmt
