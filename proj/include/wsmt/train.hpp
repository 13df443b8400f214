#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "wsmt/data.hpp"
#include "wsmt/loss.hpp"
#include "wsmt/siamese.hpp"

namespace wsmt {

enum class TrainMode { multi, single_activity, single_person, partial, tri };

std::string mode_name(TrainMode m);
TrainMode parse_mode(const std::string& name);

struct TrainConfig {
    double lr0 = 0.05;
    double decay_rate = 0.95;
    std::size_t decay_every = 10000;
    std::size_t batch_size = 64;
    std::size_t max_epochs = 100;
    std::size_t patience = 10;
    std::size_t pairs_per_epoch = 0;   // 0: 20 x training windows
    std::size_t validation_pairs = 0;  // 0: 5 x validation windows
    LossConfig loss;
    TrainMode mode = TrainMode::multi;
    std::uint64_t seed = 0;

    void validate() const;
};

// Tasks whose similarity labels are sampled for training in `mode`.
TaskSet mode_tasks(TrainMode mode);

// Sets heads and task weights for `mode`: single-task modes keep both heads
// but zero the other task's weight; tri adds an attribute head.
void apply_mode(TrainMode mode, NetworkConfig& net, LossConfig& loss);

// Staircase decay: lr0 * decay_rate ^ floor(step / decay_every).
double lr_at(std::size_t step, const TrainConfig& cfg);

// value -= lr * grad for every parameter, then grads are zeroed. Throws
// NumericError naming the first parameter with a non-finite gradient.
void sgd_step(Network& net, double lr);

struct EpochRecord {
    std::size_t epoch = 0;
    double train_loss = 0;  // mean per pair
    double validation_loss = 0;
    std::array<double, kTaskCount> validation_task_loss{};
    double lr = 0;
    std::size_t steps = 0;
    double seconds = 0;
};

struct TrainHistory {
    std::vector<EpochRecord> epochs;
    std::size_t best_epoch = 0;
    double best_validation_loss = std::numeric_limits<double>::infinity();
    bool early_stopped = false;
};

// Tracks the lowest validation loss; signals stop after `patience`
// consecutive epochs without strict improvement.
class EarlyStopping {
public:
    explicit EarlyStopping(std::size_t patience);

    // Returns true when this epoch is the new best.
    bool observe(std::size_t epoch, double validation_loss);
    bool should_stop() const { return stale_ >= patience_; }
    std::size_t best_epoch() const { return best_epoch_; }
    double best_loss() const { return best_; }

private:
    std::size_t patience_;
    std::size_t stale_ = 0;
    std::size_t best_epoch_ = 0;
    double best_ = std::numeric_limits<double>::infinity();
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    std::uint32_t version = kCheckpointVersion;
    Network network;
    std::uint64_t step = 0;
    std::uint64_t seed = 0;
    std::uint64_t epoch = 0;  // pair streams are reseeded from (seed, epoch)
};

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class CheckpointVersionError : public CheckpointError {
public:
    using CheckpointError::CheckpointError;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

struct TrainData {
    std::vector<Window> train;
    std::vector<Window> validation;
};

struct TrainResult {
    Checkpoint best;
    TrainHistory history;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

// Mean-per-pair loss of `pairs` in eval mode.
LossBreakdown evaluate_pairs(Network& net, const std::vector<Window>& windows, const std::vector<PairItem>& pairs,
                             const LossConfig& loss, std::size_t batch_size);

// Runs one SGD step on a batch and returns its summed loss.
LossBreakdown train_batch(Network& net, const std::vector<Window>& windows, std::span<const PairItem> pairs,
                          const LossConfig& loss, double lr);

// Pairs used for epoch `epoch` of a run.
std::vector<PairItem> epoch_pairs(const std::vector<Window>& windows, TrainMode mode, std::size_t count,
                                  std::uint64_t seed, std::uint64_t epoch);

TrainResult train(Network& net, const TrainData& data, const TrainConfig& cfg, const EpochCallback& on_epoch = {});

}  // namespace wsmt
