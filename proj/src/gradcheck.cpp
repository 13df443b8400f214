#include "wsmt/gradcheck.hpp"

#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <stdexcept>

#include "wsmt/loss.hpp"
#include "wsmt/siamese.hpp"
#include "wsmt/tcn.hpp"

namespace wsmt {

namespace {

using Rng = std::mt19937_64;

std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

Tensor64 random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor64 t(std::move(shape));
    std::uniform_real_distribution<double> u(lo, hi);
    for (auto& v : t.values()) v = u(rng);
    return t;
}

// Random values bounded away from zero (keeps ReLU off its kink).
Tensor64 random_nonzero(Shape shape, Rng& rng) {
    Tensor64 t = random_tensor(std::move(shape), rng);
    for (auto& v : t.values()) v = v < 0 ? v - 0.05 : v + 0.05;
    return t;
}

double dot(const Tensor64& a, const Tensor64& b) {
    if (a.shape() != b.shape()) throw ShapeError("dot: shape mismatch");
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

// Instances closer than this to a ReLU, max-pool or hinge kink are redrawn;
// a central difference straddling a kink measures neither one-sided slope.
constexpr double kKinkMargin = 1e-3;
constexpr int kMaxRedraws = 1000;

// Smallest |ReLU input| over every layer of a cached block forward.
double relu_margin(const TcnBlockCache<double>& cache, const TcnBlockParams<double>& block) {
    double m = std::numeric_limits<double>::infinity();
    for (std::size_t l = 0; l < block.layers.size(); ++l) {
        const auto& xhat = cache.layers[l].norm.normalized;
        const auto& norm = block.layers[l].norm;
        const std::size_t ch = xhat.dim(1), len = xhat.dim(2);
        for (std::size_t i = 0; i < xhat.size(); ++i) {
            const std::size_t c = (i / len) % ch;
            m = std::min(m, std::abs(norm.gamma.value[c] * xhat[i] + norm.beta.value[c]));
        }
    }
    return m;
}

// Smallest gap between the two candidates of any pooling window.
double pool_margin(const Tensor64& x) {
    double m = std::numeric_limits<double>::infinity();
    const std::size_t len = x.dim(2);
    for (std::size_t s = 0; s < x.dim(0) * x.dim(1); ++s) {
        for (std::size_t t = 0; t + 1 < len; t += 2) m = std::min(m, std::abs(x[s * len + t] - x[s * len + t + 1]));
    }
    return m;
}

double encoder_margin(BasicNetwork<double> net, const Tensor64& x) {
    double m = std::numeric_limits<double>::infinity();
    Tensor64 h = x;
    for (std::size_t b = 0; b < net.blocks.size(); ++b) {
        TcnBlockCache<double> cache;
        h = tcn_block_forward(h, net.blocks[b], Mode::train, &cache);
        m = std::min(m, relu_margin(cache, net.blocks[b]));
        if (net.config.pool_between_blocks && b + 1 < net.blocks.size()) {
            m = std::min(m, pool_margin(h));
            h = temporal_max_pool(h);
        }
    }
    return m;
}

double compare(const std::function<double(const Tensor64&)>& f, const Tensor64& at, const Tensor64& analytic) {
    return max_relative_error(analytic, finite_diff_grad(f, at, kGradCheckEps));
}

void randomize(Conv1dParams<double>& p, Rng& rng) {
    p.weight.value = random_tensor(p.weight.value.shape(), rng);
    p.bias.value = random_tensor(p.bias.value.shape(), rng);
}

double check_conv(Rng& rng) {
    const std::size_t batch = pick(rng, 1, 2), in = pick(rng, 1, 3), out = pick(rng, 1, 3), len = pick(rng, 3, 9);
    const std::size_t k = 2 * pick(rng, 0, 2) + 1, d = pick(rng, 1, 3);
    auto p = make_conv<double>(in, out, k, d);
    randomize(p, rng);
    const auto x = random_tensor({batch, in, len}, rng);
    const auto r = random_tensor({batch, out, len}, rng);

    ConvCache<double> cache;
    dilated_conv_forward(x, p, &cache);
    const auto g = dilated_conv_backward(cache, p, r);

    double err = compare([&](const Tensor64& xx) { return dot(r, dilated_conv_forward(xx, p)); }, x, g.input);
    err = std::max(err, compare(
                            [&](const Tensor64& w) {
                                auto q = p;
                                q.weight.value = w;
                                return dot(r, dilated_conv_forward(x, q));
                            },
                            p.weight.value, g.weight));
    err = std::max(err, compare(
                            [&](const Tensor64& b) {
                                auto q = p;
                                q.bias.value = b;
                                return dot(r, dilated_conv_forward(x, q));
                            },
                            p.bias.value, g.bias));
    return err;
}

double check_batchnorm(Rng& rng, Mode mode) {
    const std::size_t batch = pick(rng, 1, 3), ch = pick(rng, 1, 3), len = pick(rng, 2, 6);
    auto s = make_batchnorm<double>(ch);
    s.gamma.value = random_tensor({ch}, rng, 0.5, 1.5);
    s.beta.value = random_tensor({ch}, rng);
    s.running_mean = random_tensor({ch}, rng);
    s.running_var = random_tensor({ch}, rng, 0.5, 2.0);
    const auto x = random_tensor({batch, ch, len}, rng, -2.0, 2.0);
    const auto r = random_tensor({batch, ch, len}, rng);

    auto eval_with = [&](const BatchNormState<double>& st, const Tensor64& xx) {
        auto copy = st;
        return dot(r, batchnorm_forward(xx, copy, mode));
    };
    auto work = s;
    BatchNormCache<double> cache;
    batchnorm_forward(x, work, mode, &cache);
    work.gamma.zero_grad();
    work.beta.zero_grad();
    const auto gx = batchnorm_backward(cache, work, r);

    double err = compare([&](const Tensor64& xx) { return eval_with(s, xx); }, x, gx);
    err = std::max(err, compare(
                            [&](const Tensor64& g) {
                                auto q = s;
                                q.gamma.value = g;
                                return eval_with(q, x);
                            },
                            s.gamma.value, work.gamma.grad));
    err = std::max(err, compare(
                            [&](const Tensor64& b) {
                                auto q = s;
                                q.beta.value = b;
                                return eval_with(q, x);
                            },
                            s.beta.value, work.beta.grad));
    return err;
}

double check_relu(Rng& rng) {
    const auto x = random_nonzero({pick(rng, 1, 3), pick(rng, 1, 3), pick(rng, 1, 8)}, rng);
    const auto r = random_tensor(x.shape(), rng);
    const auto gx = relu_backward(relu_forward(x), r);
    return compare([&](const Tensor64& xx) { return dot(r, relu_forward(xx)); }, x, gx);
}

double check_max_pool(Rng& rng) {
    const std::size_t batch = pick(rng, 1, 3), ch = pick(rng, 1, 3), len = pick(rng, 2, 9);
    // A permutation of well-separated levels rules out ties.
    Tensor64 x({batch, ch, len});
    std::vector<double> levels(x.size());
    for (std::size_t i = 0; i < levels.size(); ++i) levels[i] = 0.1 * double(i);
    std::shuffle(levels.begin(), levels.end(), rng);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = levels[i];
    const auto r = random_tensor({batch, ch, len / 2}, rng);
    PoolCache cache;
    temporal_max_pool(x, &cache);
    const auto gx = temporal_max_pool_backward(cache, r);
    return compare([&](const Tensor64& xx) { return dot(r, temporal_max_pool(xx)); }, x, gx);
}

double check_residual(Rng& rng) {
    const std::size_t batch = pick(rng, 1, 2), in = pick(rng, 1, 3), out = in + pick(rng, 1, 2), len = pick(rng, 1, 6);
    auto proj = make_conv<double>(in, out, 1, 1);
    randomize(proj, rng);
    const auto h = random_tensor({batch, out, len}, rng);
    const auto p = random_tensor({batch, in, len}, rng);
    const auto r = random_tensor({batch, out, len}, rng);

    ConvCache<double> cache;
    residual_combine(h, p, &proj, &cache);
    const auto g = dilated_conv_backward(cache, proj, r);

    double err = compare([&](const Tensor64& hh) { return dot(r, residual_combine(hh, p, &proj)); }, h, r);
    err = std::max(err, compare([&](const Tensor64& pp) { return dot(r, residual_combine(h, pp, &proj)); }, p, g.input));
    err = std::max(err, compare(
                            [&](const Tensor64& w) {
                                auto q = proj;
                                q.weight.value = w;
                                return dot(r, residual_combine(h, p, &q));
                            },
                            proj.weight.value, g.weight));
    return err;
}

double check_fc(Rng& rng) {
    const std::size_t batch = pick(rng, 1, 3), in = pick(rng, 1, 5), out = pick(rng, 1, 5);
    BasicParam<double> w(random_tensor({out, in}, rng));
    BasicParam<double> b(random_tensor({out}, rng));
    const auto x = random_tensor({batch, in}, rng);
    const auto r = random_tensor({batch, out}, rng);
    const auto gx = linear_backward(w, x, b, r);

    double err = compare([&](const Tensor64& xx) { return dot(r, linear_forward(w, xx, b)); }, x, gx);
    err = std::max(err, compare(
                            [&](const Tensor64& ww) {
                                BasicParam<double> q(ww);
                                return dot(r, linear_forward(q, x, b));
                            },
                            w.value, w.grad));
    err = std::max(err, compare(
                            [&](const Tensor64& bb) {
                                BasicParam<double> q(bb);
                                return dot(r, linear_forward(w, x, q));
                            },
                            b.value, b.grad));
    return err;
}

double check_contrastive(Rng& rng) {
    const std::size_t dim = pick(rng, 1, 6);
    const double margin = std::uniform_real_distribution<double>(0.5, 3.0)(rng);
    const bool similar = std::bernoulli_distribution(0.5)(rng);
    Tensor64 a, b;
    do {  // stay off the kinks at D = 0 and D = margin
        a = random_tensor({dim}, rng);
        b = random_tensor({dim}, rng);
    } while (std::abs(pair_distance(a.values(), b.values()) - margin) < 1e-3 ||
             pair_distance(a.values(), b.values()) < 1e-3);
    Tensor64 ga({dim}), gb({dim});
    contrastive_grad(a.values(), b.values(), similar, margin, ga.values(), gb.values());
    auto f_a = [&](const Tensor64& aa) { return contrastive(pair_distance(aa.values(), b.values()), similar, margin); };
    auto f_b = [&](const Tensor64& bb) { return contrastive(pair_distance(a.values(), bb.values()), similar, margin); };
    return std::max(compare(f_a, a, ga), compare(f_b, b, gb));
}

std::vector<SimilarityLabel> random_labels(Rng& rng, std::size_t n, const std::vector<Task>& tasks) {
    std::bernoulli_distribution coin(0.5);
    std::vector<SimilarityLabel> out(n);
    for (auto& l : out) {
        for (Task t : tasks) {
            if (coin(rng)) l.set(t, coin(rng));
        }
        l.set(tasks.front(), coin(rng));
    }
    return out;
}

double check_multitask(Rng& rng) {
    const std::size_t batch = pick(rng, 1, 4), dim = pick(rng, 1, 4);
    const std::vector<Task> tasks{Task::activity, Task::person};
    LossConfig cfg;
    cfg.margin = std::uniform_real_distribution<double>(1.0, 3.0)(rng);
    cfg.weights = {std::uniform_real_distribution<double>(0.1, 2.0)(rng),
                   std::uniform_real_distribution<double>(0.0, 2.0)(rng), 0.0};
    BasicEmbeddingSet<double> a, b;
    for (Task t : tasks) {
        a[t] = random_tensor({batch, dim}, rng);
        b[t] = random_tensor({batch, dim}, rng);
        for (std::size_t r = 0; r < batch; ++r) {
            const double d = pair_distance(a[t].row(r), b[t].row(r));
            if (std::abs(d - cfg.margin) < 1e-3) b[t].row(r)[0] += 0.1;
        }
    }
    const auto labels = random_labels(rng, batch, tasks);
    BasicEmbeddingSet<double> ga, gb;
    multitask_loss<double>(a, b, labels, cfg, &ga, &gb);

    double err = 0;
    for (Task t : tasks) {
        err = std::max(err, compare(
                                [&](const Tensor64& v) {
                                    auto aa = a;
                                    aa[t] = v;
                                    return multitask_loss<double>(aa, b, labels, cfg).total;
                                },
                                a[t], ga[t]));
        err = std::max(err, compare(
                                [&](const Tensor64& v) {
                                    auto bb = b;
                                    bb[t] = v;
                                    return multitask_loss<double>(a, bb, labels, cfg).total;
                                },
                                b[t], gb[t]));
    }
    return err;
}

double check_tcn_block(Rng& rng) {
    TcnBlockParams<double> block;
    Tensor64 x, r;
    TcnBlockCache<double> cache;
    for (int attempt = 0;; ++attempt) {
        if (attempt == kMaxRedraws) throw std::runtime_error("tcn_block gradient check: no kink-free instance");
        const std::size_t batch = pick(rng, 2, 3), in = pick(rng, 1, 3), out = pick(rng, 2, 3), len = pick(rng, 4, 8);
        block = make_tcn_block<double>(in, out, 3, {1, 2});
        for (auto& l : block.layers) {
            randomize(l.conv, rng);
            l.norm.gamma.value = random_tensor({out}, rng, 0.5, 1.5);
            l.norm.beta.value = random_tensor({out}, rng, -0.5, 0.5);
        }
        if (block.residual_projection) randomize(*block.residual_projection, rng);
        x = random_tensor({batch, in, len}, rng);
        r = random_tensor({batch, out, len}, rng);
        auto probe = block;
        tcn_block_forward(x, probe, Mode::train, &cache);
        if (relu_margin(cache, probe) > kKinkMargin) break;
    }

    auto loss_of = [&](TcnBlockParams<double> b, const Tensor64& xx) {
        return dot(r, tcn_block_forward(xx, b, Mode::train));
    };
    auto work = block;
    tcn_block_forward(x, work, Mode::train, &cache);
    const auto gx = tcn_block_backward(cache, work, r);

    double err = compare([&](const Tensor64& xx) { return loss_of(block, xx); }, x, gx);
    for (std::size_t l = 0; l < block.layers.size(); ++l) {
        err = std::max(err, compare(
                                [&](const Tensor64& w) {
                                    auto b = block;
                                    b.layers[l].conv.weight.value = w;
                                    return loss_of(b, x);
                                },
                                block.layers[l].conv.weight.value, work.layers[l].conv.weight.grad));
        err = std::max(err, compare(
                                [&](const Tensor64& g) {
                                    auto b = block;
                                    b.layers[l].norm.gamma.value = g;
                                    return loss_of(b, x);
                                },
                                block.layers[l].norm.gamma.value, work.layers[l].norm.gamma.grad));
    }
    if (block.residual_projection) {
        err = std::max(err, compare(
                                [&](const Tensor64& w) {
                                    auto b = block;
                                    b.residual_projection->weight.value = w;
                                    return loss_of(b, x);
                                },
                                block.residual_projection->weight.value, work.residual_projection->weight.grad));
    }
    return err;
}

double check_pipeline(Rng& rng) {
    NetworkConfig cfg;
    cfg.input_channels = 2;
    cfg.blocks = 2;
    cfg.feature_maps = 3;
    cfg.kernel_size = 3;
    cfg.dilations = {1, 2};
    cfg.heads = {{Task::activity, 3}, {Task::person, 3}};
    LossConfig loss;
    loss.margin = 2.0;
    BasicNetwork<double> net;
    Tensor64 xa, xb;
    std::vector<SimilarityLabel> labels;
    for (int attempt = 0;; ++attempt) {
        if (attempt == kMaxRedraws) throw std::runtime_error("siamese_pipeline gradient check: no kink-free instance");
        const std::size_t batch = pick(rng, 2, 3);
        net = build_network<double>(cfg, rng());
        xa = random_tensor({batch, 2, 8}, rng, -2.0, 2.0);
        xb = random_tensor({batch, 2, 8}, rng, -2.0, 2.0);
        labels = random_labels(rng, batch, {Task::activity, Task::person});
        if (std::min(encoder_margin(net, xa), encoder_margin(net, xb)) <= kKinkMargin) continue;
        auto probe = net;
        auto fwd = forward_pair(probe, xa, xb, Mode::train);
        double hinge = std::numeric_limits<double>::infinity();
        for (const auto& [task, ha] : fwd.a) {
            for (std::size_t row = 0; row < batch; ++row) {
                if (!labels[row].has(task) || labels[row].y(task)) continue;
                const double d = pair_distance(ha.row(row), fwd.b.at(task).row(row));
                hinge = std::min({hinge, std::abs(loss.margin - d), d});
            }
        }
        if (hinge > kKinkMargin) break;
    }

    auto total = [&](BasicNetwork<double> n) {
        auto fwd = forward_pair(n, xa, xb, Mode::train);
        return multitask_loss<double>(fwd.a, fwd.b, labels, loss).total;
    };
    auto work = net;
    auto fwd = forward_pair(work, xa, xb, Mode::train);
    BasicEmbeddingSet<double> ga, gb;
    multitask_loss<double>(fwd.a, fwd.b, labels, loss, &ga, &gb);
    backward_pair(work, fwd.cache, ga, gb);

    const auto analytic = work.parameters();
    const auto originals = net.parameters();
    double err = 0;
    for (std::size_t i = 0; i < originals.size(); ++i) {
        err = std::max(err, compare(
                                [&](const Tensor64& v) {
                                    auto n = net;
                                    n.parameters()[i]->value = v;
                                    return total(std::move(n));
                                },
                                originals[i]->value, analytic[i]->grad));
    }
    return err;
}

}  // namespace

std::vector<std::string> gradcheck_names() {
    return {"conv",  "batchnorm_train", "batchnorm_eval", "relu",      "max_pool",        "residual_1x1",
            "fc_head", "contrastive",   "multitask",      "tcn_block", "siamese_pipeline"};
}

GradCheckResult run_gradcheck(const std::string& name, std::size_t instances, std::uint64_t seed) {
    std::function<double(Rng&)> check;
    if (name == "conv") check = check_conv;
    else if (name == "batchnorm_train") check = [](Rng& r) { return check_batchnorm(r, Mode::train); };
    else if (name == "batchnorm_eval") check = [](Rng& r) { return check_batchnorm(r, Mode::eval); };
    else if (name == "relu") check = check_relu;
    else if (name == "max_pool") check = check_max_pool;
    else if (name == "residual_1x1") check = check_residual;
    else if (name == "fc_head") check = check_fc;
    else if (name == "contrastive") check = check_contrastive;
    else if (name == "multitask") check = check_multitask;
    else if (name == "tcn_block") check = check_tcn_block;
    else if (name == "siamese_pipeline") check = check_pipeline;
    else throw std::invalid_argument("unknown gradient check '" + name + "'");

    GradCheckResult res;
    res.name = name;
    res.instances = instances;
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng(seed);
    for (std::size_t i = 0; i < instances; ++i) res.max_relative_error = std::max(res.max_relative_error, check(rng));
    res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return res;
}

std::vector<GradCheckResult> run_gradcheck_suite(std::size_t instances, std::uint64_t seed) {
    std::vector<GradCheckResult> out;
    for (const auto& name : gradcheck_names()) out.push_back(run_gradcheck(name, instances, seed));
    return out;
}

}  // namespace wsmt
