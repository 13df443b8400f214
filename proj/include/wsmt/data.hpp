#pragma once

// Sensor stream ingestion, sliding-window segmentation, similarity pair
// sampling and a synthetic generator with known activity/person factors.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "wsmt/task.hpp"
#include "wsmt/tensor.hpp"

namespace wsmt {

class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Channel-major multichannel recording with per-sample labels.
struct SensorStream {
    double sample_rate_hz = 0;
    std::vector<std::string> channel_names;
    std::vector<std::vector<float>> channels;
    std::vector<double> timestamps;
    std::vector<int> activity;
    std::vector<int> person;
    std::vector<int> attribute;  // empty when the stream has no attribute labels

    std::size_t length() const { return activity.size(); }
    std::size_t channel_count() const { return channels.size(); }
    bool has_attribute() const { return !attribute.empty(); }
    void validate() const;
};

// Column layout of a delimiter-separated stream file. The header row names
// every column; the first column is the timestamp.
struct StreamSchema {
    char delimiter = ',';
    double sample_rate_hz = 50.0;
    std::string activity_column = "activity_id";
    std::string person_column = "person_id";
    std::string attribute_column = "attribute_id";  // optional in the file
    std::vector<std::string> channels;              // subset to keep; empty keeps all
    std::string missing_token = "NaN";
};

struct LoadedStream {
    SensorStream stream;
    std::size_t dropped_rows = 0;
};

LoadedStream load_stream(const std::filesystem::path& path, const StreamSchema& schema);
void write_stream(const std::filesystem::path& path, const SensorStream& stream, char delimiter = ',');

SensorStream downsample(const SensorStream& s, std::size_t factor);

// Replaces activity ids through `mapping`; ids not in the map are kept.
void remap_activities(SensorStream& s, const std::map<int, int>& mapping);

struct Window {
    Tensor data;  // [channels, length]
    int activity = -1;
    int person = -1;
    int attribute = -1;  // -1 when unknown
    std::size_t stream_id = 0;
    std::size_t start = 0;

    int label(Task t) const {
        switch (t) {
        case Task::activity: return activity;
        case Task::person: return person;
        case Task::attribute: return attribute;
        }
        return -1;
    }
};

// Number of samples covered by `seconds` at `rate`; tolerant to float error
// in products such as 1.28 s * 50 Hz.
std::size_t seconds_to_samples(double seconds, double rate);

// Windows at offsets 0, step, 2*step, ... fully inside the stream. Windows
// whose samples carry more than one label combination are discarded.
std::vector<Window> segment(const SensorStream& s, double window_seconds, double step_seconds,
                            std::size_t stream_id = 0);
std::vector<Window> segment_samples(const SensorStream& s, std::size_t window, std::size_t step,
                                    std::size_t stream_id = 0);

// Closed-form window count before label discards.
inline std::size_t segment_count(std::size_t length, std::size_t window, std::size_t step) {
    return length < window ? 0 : (length - window) / step + 1;
}

struct PairItem {
    std::size_t a = 0;
    std::size_t b = 0;
    SimilarityLabel label;
};

using TaskSet = std::vector<Task>;

// Draws `count` pairs (a != b). For every task in `tasks` the label is drawn
// positive with probability 1/2 and the partner is chosen uniformly among the
// windows satisfying all drawn relations; infeasible draws are redrawn. Tasks
// outside `tasks` are masked absent.
std::vector<PairItem> sample_pairs(const std::vector<Window>& windows, std::size_t count, std::uint64_t seed,
                                   const TaskSet& tasks);

// Ground-truth label for a pair under one task.
inline bool same_class(const Window& a, const Window& b, Task t) { return a.label(t) == b.label(t); }

struct PartialSplit {
    std::vector<std::size_t> activity_half;  // pairs here carry only activity similarity
    std::vector<std::size_t> person_half;    // pairs here carry only person similarity
};

PartialSplit partial_split(std::size_t window_count, std::uint64_t seed);

struct SynthConfig {
    std::size_t persons = 4;
    std::size_t activities = 3;
    std::size_t attribute_classes = 2;
    std::size_t windows_per_cell = 50;
    std::size_t channels = 3;
    std::size_t length = 64;
    double noise = 0.3;
    std::uint64_t seed = 0;

    void validate() const;
};

// Channel c of a (person p, activity a) window is
//   sin(2 pi f_a t / T + phi_{p,c}) * s_p + b_p + noise
// with f_a an activity frequency (cycles per window), (phi, s, b) drawn once
// per person and attribute = person mod attribute_classes.
std::vector<Window> synth_generate(const SynthConfig& cfg);

// Cycles per window used for activity `a`.
double synth_frequency(std::size_t activity);

// Concatenates windows into one stream so that segmentation with
// window = step = T reproduces them.
SensorStream windows_to_stream(const std::vector<Window>& windows, double sample_rate_hz);

struct DataSplit {
    std::vector<Window> train;
    std::vector<Window> validation;
    std::vector<Window> test;
};

// Stratified by (activity, person): each cell is shuffled and cut with
// rounded cumulative fractions.
DataSplit split_train_val_test(const std::vector<Window>& windows, std::array<double, 3> fractions,
                               std::uint64_t seed);

// Stacks windows[indices] into a [batch, channels, length] tensor.
Tensor stack_windows(const std::vector<Window>& windows, std::span<const std::size_t> indices);
Tensor stack_windows(const std::vector<Window>& windows);

// Distinct labels of a task in ascending order.
std::vector<int> task_classes(const std::vector<Window>& windows, Task t);

// Declarative dataset description.
struct DatasetConfig {
    std::string name = "custom";
    std::vector<std::filesystem::path> paths;
    StreamSchema schema;
    std::size_t downsample = 1;
    double window_seconds = 5.12;
    double step_seconds = 1.0;
    std::map<int, int> activity_map;  // e.g. collapse postural transitions
    std::array<double, 3> split{0.6, 0.2, 0.2};

    double effective_rate() const { return schema.sample_rate_hz / double(downsample); }
};

DatasetConfig dataset_preset(const std::string& name);

// Loads every path, resamples, remaps and segments. Stream ids follow path order.
struct LoadedDataset {
    std::vector<Window> windows;
    std::size_t dropped_rows = 0;
};
LoadedDataset load_dataset(const DatasetConfig& cfg);

}  // namespace wsmt
