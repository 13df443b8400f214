#include "wsmt/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>

namespace wsmt {

std::string mode_name(TrainMode m) {
    switch (m) {
    case TrainMode::multi: return "multi";
    case TrainMode::single_activity: return "single:act";
    case TrainMode::single_person: return "single:pers";
    case TrainMode::partial: return "partial";
    case TrainMode::tri: return "tri";
    }
    return "?";
}

TrainMode parse_mode(const std::string& name) {
    if (name == "multi") return TrainMode::multi;
    if (name == "single:act") return TrainMode::single_activity;
    if (name == "single:pers") return TrainMode::single_person;
    if (name == "partial") return TrainMode::partial;
    if (name == "tri") return TrainMode::tri;
    throw std::invalid_argument("unknown training mode '" + name + "'");
}

void TrainConfig::validate() const {
    if (!(lr0 > 0)) throw std::invalid_argument("lr0 must be positive");
    if (!(decay_rate > 0 && decay_rate <= 1)) throw std::invalid_argument("decay_rate must be in (0, 1]");
    if (decay_every < 1) throw std::invalid_argument("decay_every must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    if (patience < 1) throw std::invalid_argument("patience must be >= 1");
    if (max_epochs < 1) throw std::invalid_argument("max_epochs must be >= 1");
    loss.validate();
}

TaskSet mode_tasks(TrainMode mode) {
    switch (mode) {
    case TrainMode::multi:
    case TrainMode::partial: return {Task::activity, Task::person};
    case TrainMode::single_activity: return {Task::activity};
    case TrainMode::single_person: return {Task::person};
    case TrainMode::tri: return {Task::activity, Task::person, Task::attribute};
    }
    return {};
}

void apply_mode(TrainMode mode, NetworkConfig& net, LossConfig& loss) {
    const std::size_t dim = net.heads.empty() ? 256 : net.heads.front().embedding_dim;
    net.heads = {{Task::activity, dim}, {Task::person, dim}};
    if (mode == TrainMode::tri) net.heads.push_back({Task::attribute, dim});
    if (mode == TrainMode::single_activity) loss.weights[task_index(Task::person)] = 0.0;
    if (mode == TrainMode::single_person) loss.weights[task_index(Task::activity)] = 0.0;
}

double lr_at(std::size_t step, const TrainConfig& cfg) {
    const auto stage = step / cfg.decay_every;
    return cfg.lr0 * std::pow(cfg.decay_rate, double(stage));
}

void sgd_step(Network& net, double lr) {
    net.for_each_param([&](const std::string& name, Param& p) {
        if (!p.grad.all_finite()) throw NumericError("non-finite gradient in " + name);
    });
    const float step = float(lr);
    net.for_each_param([&](const std::string&, Param& p) {
        for (std::size_t i = 0; i < p.value.size(); ++i) p.value[i] -= step * p.grad[i];
        p.zero_grad();
    });
}

EarlyStopping::EarlyStopping(std::size_t patience) : patience_(patience) {
    if (patience < 1) throw std::invalid_argument("patience must be >= 1");
}

bool EarlyStopping::observe(std::size_t epoch, double validation_loss) {
    if (validation_loss < best_) {
        best_ = validation_loss;
        best_epoch_ = epoch;
        stale_ = 0;
        return true;
    }
    ++stale_;
    return false;
}

namespace {

struct PairBatch {
    Tensor a;
    Tensor b;
    std::vector<SimilarityLabel> labels;
};

PairBatch make_batch(const std::vector<Window>& windows, std::span<const PairItem> pairs) {
    std::vector<std::size_t> ia, ib;
    PairBatch out;
    for (const auto& p : pairs) {
        ia.push_back(p.a);
        ib.push_back(p.b);
        out.labels.push_back(p.label);
    }
    out.a = stack_windows(windows, ia);
    out.b = stack_windows(windows, ib);
    return out;
}

}  // namespace

std::vector<PairItem> epoch_pairs(const std::vector<Window>& windows, TrainMode mode, std::size_t count,
                                  std::uint64_t seed, std::uint64_t epoch) {
    const std::uint64_t s = seed * 0x9E3779B97F4A7C15ULL + epoch;
    if (mode != TrainMode::partial) return sample_pairs(windows, count, s, mode_tasks(mode));
    // Partial mode: the half/half split is fixed for the run; pairs stay inside
    // their half, carry one task each, and are resampled per epoch.
    const auto split = partial_split(windows.size(), seed);
    std::vector<PairItem> out;
    auto take = [&](const std::vector<std::size_t>& half, Task task, std::size_t n, std::uint64_t sub) {
        std::vector<Window> subset;
        for (std::size_t i : half) subset.push_back(windows[i]);
        for (auto p : sample_pairs(subset, n, sub, {task})) {
            p.a = half[p.a];
            p.b = half[p.b];
            out.push_back(p);
        }
    };
    take(split.activity_half, Task::activity, count / 2, s ^ 0x5a5a5a5aULL);
    take(split.person_half, Task::person, count - count / 2, s ^ 0xa5a5a5a5ULL);
    std::mt19937_64 rng(s);
    std::shuffle(out.begin(), out.end(), rng);
    return out;
}

LossBreakdown train_batch(Network& net, const std::vector<Window>& windows, std::span<const PairItem> pairs,
                          const LossConfig& loss, double lr) {
    auto batch = make_batch(windows, pairs);
    auto fwd = forward_pair(net, batch.a, batch.b, Mode::train);
    EmbeddingSet ga, gb;
    auto out = multitask_loss<float>(fwd.a, fwd.b, batch.labels, loss, &ga, &gb);
    backward_pair(net, fwd.cache, ga, gb);
    sgd_step(net, lr);
    return out;
}

LossBreakdown evaluate_pairs(Network& net, const std::vector<Window>& windows, const std::vector<PairItem>& pairs,
                             const LossConfig& loss, std::size_t batch_size) {
    LossBreakdown sum;
    for (std::size_t start = 0; start < pairs.size(); start += batch_size) {
        const std::size_t n = std::min(batch_size, pairs.size() - start);
        auto batch = make_batch(windows, std::span<const PairItem>(pairs).subspan(start, n));
        auto ea = embed(net, batch.a, Mode::eval);
        auto eb = embed(net, batch.b, Mode::eval);
        auto part = multitask_loss<float>(ea, eb, batch.labels, loss);
        sum.total += part.total;
        for (std::size_t t = 0; t < kTaskCount; ++t) {
            sum.per_task[t] += part.per_task[t];
            sum.pairs[t] += part.pairs[t];
        }
    }
    if (!pairs.empty()) {
        const double n = double(pairs.size());
        sum.total /= n;
        for (std::size_t t = 0; t < kTaskCount; ++t)
            if (sum.pairs[t]) sum.per_task[t] /= double(sum.pairs[t]);
    }
    return sum;
}

TrainResult train(Network& net, const TrainData& data, const TrainConfig& cfg, const EpochCallback& on_epoch) {
    cfg.validate();
    if (data.train.size() < 2 || data.validation.size() < 2) {
        throw DataError("training needs at least two training and two validation windows");
    }
    for (Task t : mode_tasks(cfg.mode)) {
        if (!net.head(t)) throw std::invalid_argument("network has no head for task " + std::string(task_name(t)));
    }
    net.zero_grads();

    const std::size_t per_epoch = cfg.pairs_per_epoch ? cfg.pairs_per_epoch : 20 * data.train.size();
    const std::size_t val_count = cfg.validation_pairs ? cfg.validation_pairs : 5 * data.validation.size();
    // A fixed validation pair set keeps epoch losses comparable.
    const auto val_pairs = epoch_pairs(data.validation, cfg.mode, val_count, cfg.seed ^ 0xC0FFEEULL, 0);

    TrainResult result;
    result.best = {kCheckpointVersion, net, 0, cfg.seed, 0};
    EarlyStopping stopper(cfg.patience);
    std::size_t step = 0;

    for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        const auto pairs = epoch_pairs(data.train, cfg.mode, per_epoch, cfg.seed, epoch);
        double train_total = 0;
        for (std::size_t start = 0; start < pairs.size(); start += cfg.batch_size) {
            const std::size_t n = std::min(cfg.batch_size, pairs.size() - start);
            auto part = train_batch(net, data.train, std::span<const PairItem>(pairs).subspan(start, n), cfg.loss,
                                    lr_at(step, cfg));
            if (!std::isfinite(part.total)) throw NumericError("training loss became non-finite");
            train_total += part.total;
            ++step;
        }
        const auto val = evaluate_pairs(net, data.validation, val_pairs, cfg.loss, cfg.batch_size);

        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = train_total / double(pairs.size());
        rec.validation_loss = val.total;
        rec.validation_task_loss = val.per_task;
        rec.lr = lr_at(step, cfg);
        rec.steps = step;
        rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        result.history.epochs.push_back(rec);
        if (on_epoch) on_epoch(rec);

        if (!std::isfinite(val.total)) throw NumericError("validation loss became non-finite");
        if (stopper.observe(epoch, val.total)) result.best = {kCheckpointVersion, net, step, cfg.seed, epoch};
        if (stopper.should_stop()) {
            result.history.early_stopped = true;
            break;
        }
    }
    result.history.best_epoch = stopper.best_epoch();
    result.history.best_validation_loss = stopper.best_loss();
    return result;
}

}  // namespace wsmt
