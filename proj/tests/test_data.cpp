#include <algorithm>
#include <cmath>
#include <complex>
#include <fstream>
#include <numbers>
#include <set>

#include <json.hpp>

#include "test_support.hpp"
#include "wsmt/data.hpp"
#include "wsmt/json_io.hpp"
#include "wsmt/train.hpp"

using namespace wsmt;
using wsmt::testing::TempDir;

namespace {

void write_text(const std::filesystem::path& p, const std::string& text) {
    std::ofstream out(p);
    out << text;
}

// One channel whose value equals the sample index.
SensorStream ramp(std::size_t n, double rate, std::vector<int> activity = {}) {
    SensorStream s;
    s.sample_rate_hz = rate;
    s.channel_names = {"x"};
    s.channels.assign(1, {});
    for (std::size_t i = 0; i < n; ++i) {
        s.channels[0].push_back(float(i));
        s.timestamps.push_back(double(i) / rate);
        s.activity.push_back(activity.empty() ? 1 : activity[i]);
        s.person.push_back(1);
    }
    return s;
}

std::vector<Window> labelled(std::vector<std::array<int, 3>> labels) {
    std::vector<Window> out;
    for (const auto& l : labels) {
        Window w;
        w.data = Tensor({1, 4});
        w.activity = l[0];
        w.person = l[1];
        w.attribute = l[2];
        out.push_back(w);
    }
    return out;
}

SynthConfig clean_synth() {
    SynthConfig cfg;
    cfg.noise = 0;
    cfg.windows_per_cell = 5;
    cfg.seed = 11;
    return cfg;
}

}  // namespace

TEST(LoadStream, ReadsRowsAndLabels) {
    TempDir dir("load");
    write_text(dir / "s.csv", "t,x,y,activity_id,person_id\n0,1.5,2,1,7\n0.02,1.6,2.1,1,7\n0.04,1.7,2.2,2,7\n");
    const auto loaded = load_stream(dir / "s.csv", StreamSchema{});
    const auto& s = loaded.stream;
    EXPECT_EQ(loaded.dropped_rows, 0u);
    EXPECT_EQ(s.length(), 3u);
    EXPECT_EQ(s.channel_names, (std::vector<std::string>{"x", "y"}));
    EXPECT_FLOAT_EQ(s.channels[1][2], 2.2f);
    EXPECT_EQ(s.activity, (std::vector<int>{1, 1, 2}));
    EXPECT_EQ(s.person, (std::vector<int>{7, 7, 7}));
    EXPECT_FALSE(s.has_attribute());
}

TEST(LoadStream, DropsRowsWithMissingValues) {
    TempDir dir("missing");
    write_text(dir / "s.csv", "t,x,activity_id,person_id\n0,1,1,1\n1,NaN,1,1\n2,3,1,1\n");
    const auto loaded = load_stream(dir / "s.csv", StreamSchema{});
    EXPECT_EQ(loaded.dropped_rows, 1u);
    EXPECT_EQ(loaded.stream.length(), 2u);
    EXPECT_EQ(loaded.stream.channels[0], (std::vector<float>{1, 3}));
}

TEST(LoadStream, RejectsMalformedInput) {
    TempDir dir("bad");
    write_text(dir / "cols.csv", "t,x,activity_id,person_id\n0,1,1\n");
    EXPECT_THROW(load_stream(dir / "cols.csv", StreamSchema{}), DataError);
    write_text(dir / "empty.csv", "");
    EXPECT_THROW(load_stream(dir / "empty.csv", StreamSchema{}), DataError);
    write_text(dir / "nolabel.csv", "t,x,person_id\n0,1,1\n");
    EXPECT_THROW(load_stream(dir / "nolabel.csv", StreamSchema{}), DataError);
    write_text(dir / "text.csv", "t,x,activity_id,person_id\n0,abc,1,1\n");
    EXPECT_THROW(load_stream(dir / "text.csv", StreamSchema{}), DataError);
    EXPECT_THROW(load_stream(dir / "absent.csv", StreamSchema{}), DataError);

    write_text(dir / "ok.csv", "t,x,activity_id,person_id\n0,1,1,1\n");
    StreamSchema schema;
    schema.channels = {"gyro"};
    EXPECT_THROW(load_stream(dir / "ok.csv", schema), DataError);
}

TEST(LoadStream, WriteReadRoundTrip) {
    TempDir dir("roundtrip");
    auto s = synth_generate(clean_synth());
    const auto stream = windows_to_stream(s, 50.0);
    write_stream(dir / "s.csv", stream);
    StreamSchema schema;
    schema.sample_rate_hz = 50.0;
    const auto back = load_stream(dir / "s.csv", schema).stream;
    EXPECT_EQ(back.channel_names, stream.channel_names);
    EXPECT_EQ(back.activity, stream.activity);
    EXPECT_EQ(back.person, stream.person);
    EXPECT_EQ(back.attribute, stream.attribute);
    ASSERT_EQ(back.channels.size(), stream.channels.size());
    for (std::size_t c = 0; c < back.channels.size(); ++c) EXPECT_EQ(back.channels[c], stream.channels[c]);
}

TEST(Downsample, KeepsEveryNthSample) {
    const auto s = downsample(ramp(10, 100.0), 3);
    EXPECT_EQ(s.channels[0], (std::vector<float>{0, 3, 6, 9}));
    EXPECT_NEAR(s.sample_rate_hz, 100.0 / 3.0, 1e-12);
    EXPECT_EQ(downsample(ramp(5, 50.0), 1).channels[0], ramp(5, 50.0).channels[0]);
    EXPECT_THROW(downsample(ramp(5, 50.0), 0), std::invalid_argument);
}

TEST(Segment, OverlappingWindows) {
    const auto w = segment_samples(ramp(10, 1.0), 4, 2);
    ASSERT_EQ(w.size(), 4u);
    for (std::size_t i = 0; i < 4; ++i) {
        EXPECT_EQ(w[i].start, 2 * i);
        EXPECT_EQ(w[i].data[0], float(2 * i));
        EXPECT_EQ(w[i].data.shape(), (Shape{1, 4}));
    }
}

TEST(Segment, ExactFitAndTooShort) {
    EXPECT_EQ(segment_samples(ramp(4, 1.0), 4, 2).size(), 1u);
    EXPECT_TRUE(segment_samples(ramp(3, 1.0), 4, 2).empty());
}

TEST(Segment, NonOverlappingWhenStepEqualsWindow) {
    // 10 s windows at 20 Hz without overlap
    const auto w = segment(ramp(1000, 20.0), 10.0, 10.0);
    ASSERT_EQ(w.size(), 5u);
    for (std::size_t i = 0; i < w.size(); ++i) EXPECT_EQ(w[i].start, 200 * i);
}

TEST(Segment, ZeroStepIsRejected) {
    EXPECT_THROW(segment_samples(ramp(10, 1.0), 4, 0), std::invalid_argument);
    EXPECT_THROW(segment(ramp(10, 50.0), 1.0, 0.0), std::invalid_argument);
}

TEST(Segment, MixedLabelWindowsAreDiscarded) {
    const auto w = segment_samples(ramp(8, 1.0, {1, 1, 1, 1, 2, 2, 2, 2}), 4, 2);
    ASSERT_EQ(w.size(), 2u);
    EXPECT_EQ(w[0].activity, 1);
    EXPECT_EQ(w[1].activity, 2);
    EXPECT_EQ(w[1].start, 4u);
}

TEST(Segment, SecondsToSamplesToleratesRounding) {
    EXPECT_EQ(seconds_to_samples(1.28, 50.0), 64u);
    EXPECT_EQ(seconds_to_samples(2.56, 50.0), 128u);
    EXPECT_EQ(seconds_to_samples(5.12, 100.0 / 3.0), 170u);
    EXPECT_THROW(seconds_to_samples(-1.0, 50.0), std::invalid_argument);
}

TEST(Segment, CountMatchesClosedForm) {
    std::mt19937_64 rng(1);
    std::uniform_int_distribution<std::size_t> len(1, 400), win(1, 60), step(1, 40);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t l = len(rng), w = win(rng), s = step(rng);
        const auto got = segment_samples(ramp(l, 1.0), w, s);
        const std::size_t expected = l >= w ? (l - w) / s + 1 : 0;
        ASSERT_EQ(got.size(), expected) << l << " " << w << " " << s;
        EXPECT_EQ(segment_count(l, w, s), expected);
        for (const auto& x : got) EXPECT_LE(x.start + w, l);
    }
}

TEST(SamplePairs, LabelsFollowTheClassRule) {
    const auto w = labelled({{1, 1, 0}, {1, 2, 0}, {2, 1, 0}, {2, 2, 0}});
    const auto pairs = sample_pairs(w, 500, 3, {Task::activity, Task::person});
    for (const auto& p : pairs) {
        EXPECT_NE(p.a, p.b);
        EXPECT_EQ(p.label.y(Task::activity), w[p.a].activity == w[p.b].activity);
        EXPECT_EQ(p.label.y(Task::person), w[p.a].person == w[p.b].person);
        EXPECT_FALSE(p.label.has(Task::attribute));
    }
}

TEST(SamplePairs, PositiveFractionIsAboutHalf) {
    const auto w = synth_generate(clean_synth());
    const auto pairs = sample_pairs(w, 10000, 4, {Task::activity, Task::person});
    for (Task t : {Task::activity, Task::person}) {
        std::size_t pos = 0;
        for (const auto& p : pairs) pos += p.label.y(t);
        const double frac = double(pos) / double(pairs.size());
        EXPECT_GE(frac, 0.45) << task_name(t);
        EXPECT_LE(frac, 0.55) << task_name(t);
    }
}

TEST(SamplePairs, DeterministicPerSeed) {
    const auto w = synth_generate(clean_synth());
    const auto a = sample_pairs(w, 200, 9, {Task::activity, Task::person});
    const auto b = sample_pairs(w, 200, 9, {Task::activity, Task::person});
    const auto c = sample_pairs(w, 200, 10, {Task::activity, Task::person});
    auto same = [](const std::vector<PairItem>& x, const std::vector<PairItem>& y) {
        for (std::size_t i = 0; i < x.size(); ++i) {
            if (x[i].a != y[i].a || x[i].b != y[i].b || !(x[i].label == y[i].label)) return false;
        }
        return x.size() == y.size();
    };
    EXPECT_TRUE(same(a, b));
    EXPECT_FALSE(same(a, c));
}

TEST(SamplePairs, SingleClassTaskIsRejected) {
    const auto w = labelled({{1, 1, 0}, {1, 2, 0}, {1, 1, 0}});
    EXPECT_THROW(sample_pairs(w, 10, 0, {Task::activity}), DataError);
    EXPECT_THROW(sample_pairs(labelled({{1, 1, 0}}), 1, 0, {Task::person}), DataError);
    EXPECT_THROW(sample_pairs(labelled({{1, 1, -1}, {2, 2, -1}}), 1, 0, {Task::attribute}), DataError);
}

TEST(PartialSplit, HalvesPartitionTheWindows) {
    const auto split = partial_split(101, 5);
    EXPECT_EQ(split.activity_half.size(), 50u);
    EXPECT_EQ(split.person_half.size(), 51u);
    std::set<std::size_t> all(split.activity_half.begin(), split.activity_half.end());
    all.insert(split.person_half.begin(), split.person_half.end());
    EXPECT_EQ(all.size(), 101u);
    EXPECT_EQ(*all.rbegin(), 100u);
}

TEST(PartialSplit, EpochPairsStayInsideOneHalfWithOneTask) {
    const auto w = synth_generate(clean_synth());
    const auto split = partial_split(w.size(), 8);
    const std::set<std::size_t> act(split.activity_half.begin(), split.activity_half.end());
    const auto pairs = epoch_pairs(w, TrainMode::partial, 1000, 8, 1);
    ASSERT_EQ(pairs.size(), 1000u);
    std::size_t act_pairs = 0;
    for (const auto& p : pairs) {
        EXPECT_NE(p.label.has(Task::activity), p.label.has(Task::person));
        const bool in_act = act.count(p.a) > 0;
        EXPECT_EQ(in_act, act.count(p.b) > 0);
        EXPECT_EQ(in_act, p.label.has(Task::activity));
        act_pairs += p.label.has(Task::activity);
    }
    EXPECT_EQ(act_pairs, 500u);
}

TEST(Synth, NoiselessWindowsRepeatWithinACell) {
    const auto cfg = clean_synth();
    const auto w = synth_generate(cfg);
    ASSERT_EQ(w.size(), cfg.persons * cfg.activities * cfg.windows_per_cell);
    for (std::size_t i = 1; i < w.size(); ++i) {
        if (w[i].activity == w[i - 1].activity && w[i].person == w[i - 1].person) {
            EXPECT_TRUE(w[i].data == w[i - 1].data);
        }
    }
}

TEST(Synth, ActivitySetsTheDominantFrequency) {
    const auto cfg = clean_synth();
    const auto w = synth_generate(cfg);
    const std::size_t T = cfg.length;
    for (const auto& win : w) {
        auto x = win.data.row(0);
        std::size_t best = 0;
        double best_mag = -1;
        for (std::size_t f = 1; f <= T / 2; ++f) {
            std::complex<double> acc = 0;
            for (std::size_t t = 0; t < T; ++t)
                acc += double(x[t]) * std::polar(1.0, -2.0 * std::numbers::pi * double(f * t) / double(T));
            if (std::abs(acc) > best_mag) {
                best_mag = std::abs(acc);
                best = f;
            }
        }
        EXPECT_EQ(double(best), synth_frequency(std::size_t(win.activity)));
    }
}

TEST(Synth, PersonSetsTheOffset) {
    const auto cfg = clean_synth();
    const auto w = synth_generate(cfg);
    std::map<int, double> offset;
    for (const auto& win : w) {
        // integer cycles per window, so the sinusoid averages to zero
        double mean = 0;
        for (float v : win.data.row(0)) mean += v;
        mean /= double(cfg.length);
        if (offset.count(win.person)) {
            EXPECT_NEAR(offset[win.person], mean, 1e-5);
        } else {
            offset[win.person] = mean;
        }
    }
    std::set<long> distinct;
    for (const auto& [p, m] : offset) distinct.insert(std::lround(m * 1000));
    EXPECT_EQ(distinct.size(), cfg.persons);
}

TEST(Synth, AttributeIsPersonModuloClasses) {
    auto cfg = clean_synth();
    cfg.attribute_classes = 3;
    cfg.persons = 5;
    for (const auto& win : synth_generate(cfg)) EXPECT_EQ(win.attribute, win.person % 3);
}

TEST(Synth, NearestCentroidSeparatesTheCells) {
    const auto w = synth_generate(clean_synth());
    std::map<std::pair<int, int>, const Window*> centroid;
    for (const auto& win : w) centroid.emplace(std::pair{win.activity, win.person}, &win);
    std::size_t correct = 0;
    for (const auto& win : w) {
        double best = INFINITY;
        std::pair<int, int> who;
        for (const auto& [key, c] : centroid) {
            double d = 0;
            for (std::size_t i = 0; i < win.data.size(); ++i) d += std::pow(win.data[i] - c->data[i], 2);
            if (d < best) {
                best = d;
                who = key;
            }
        }
        correct += who == std::pair{win.activity, win.person};
    }
    EXPECT_EQ(correct, w.size());
}

TEST(Synth, DeterministicPerSeed) {
    auto cfg = clean_synth();
    cfg.noise = 0.3;
    const auto a = synth_generate(cfg);
    const auto b = synth_generate(cfg);
    for (std::size_t i = 0; i < a.size(); ++i) ASSERT_TRUE(a[i].data == b[i].data);
}

TEST(Synth, StreamSegmentsBackIntoTheSameWindows) {
    const auto w = synth_generate(clean_synth());
    const auto s = windows_to_stream(w, 50.0);
    const auto back = segment_samples(s, 64, 64);
    ASSERT_EQ(back.size(), w.size());
    for (std::size_t i = 0; i < w.size(); ++i) {
        EXPECT_TRUE(back[i].data == w[i].data);
        EXPECT_EQ(back[i].person, w[i].person);
        EXPECT_EQ(back[i].attribute, w[i].attribute);
    }
}

TEST(Split, AllTrainFraction) {
    const auto w = synth_generate(clean_synth());
    const auto s = split_train_val_test(w, {1, 0, 0}, 0);
    EXPECT_EQ(s.train.size(), w.size());
    EXPECT_TRUE(s.validation.empty());
    EXPECT_TRUE(s.test.empty());
}

TEST(Split, DisjointCoveringAndStratified) {
    auto cfg = clean_synth();
    cfg.noise = 0.3;  // distinct windows so identity can be checked by content
    cfg.windows_per_cell = 50;
    const auto w = synth_generate(cfg);
    const auto s = split_train_val_test(w, {0.6, 0.2, 0.2}, 3);
    EXPECT_EQ(s.train.size() + s.validation.size() + s.test.size(), w.size());
    std::set<std::size_t> starts;
    for (const auto* part : {&s.train, &s.validation, &s.test}) {
        for (const auto& x : *part) starts.insert(x.start);
    }
    EXPECT_EQ(starts.size(), w.size());
    std::map<std::pair<int, int>, std::array<std::size_t, 3>> per_cell;
    for (const auto& x : s.train) ++per_cell[{x.activity, x.person}][0];
    for (const auto& x : s.validation) ++per_cell[{x.activity, x.person}][1];
    for (const auto& x : s.test) ++per_cell[{x.activity, x.person}][2];
    for (const auto& [cell, n] : per_cell) EXPECT_EQ(n, (std::array<std::size_t, 3>{30, 10, 10}));
    EXPECT_THROW(split_train_val_test(w, {0.5, 0.2, 0.2}, 0), std::invalid_argument);
}

TEST(Presets, KnownDatasets) {
    const auto pamap = dataset_preset("pamap2");
    EXPECT_NEAR(pamap.effective_rate(), 33.333333, 1e-5);
    EXPECT_EQ(pamap.downsample, 3u);
    const auto wisdm = dataset_preset("wisdm");
    EXPECT_EQ(wisdm.step_seconds, wisdm.window_seconds);
    const auto sbhar = dataset_preset("sbhar");
    for (int id = 7; id <= 12; ++id) EXPECT_EQ(sbhar.activity_map.at(id), 7);
    EXPECT_EQ(sbhar.activity_map.count(6), 0u);
    EXPECT_NO_THROW(dataset_preset("mhealth"));
    EXPECT_THROW(dataset_preset("ucihar"), std::invalid_argument);
}

TEST(Presets, ActivityRemapCollapsesTransitions) {
    auto s = ramp(6, 1.0, {1, 7, 9, 12, 6, 13});
    remap_activities(s, dataset_preset("sbhar").activity_map);
    EXPECT_EQ(s.activity, (std::vector<int>{1, 7, 7, 7, 6, 13}));
}

TEST(LoadDataset, FromJsonDescription) {
    TempDir dir("dataset");
    const auto w = synth_generate(clean_synth());
    write_stream(dir / "a.csv", windows_to_stream(w, 50.0));
    const nlohmann::json j = {{"name", "toy"},
                              {"paths", {"a.csv"}},
                              {"sample_rate_hz", 50.0},
                              {"window_seconds", 1.28},
                              {"step_seconds", 1.28}};
    const auto cfg = dataset_config_from_json(j, dir.path());
    EXPECT_EQ(cfg.paths.front(), dir / "a.csv");
    const auto loaded = load_dataset(cfg);
    EXPECT_EQ(loaded.windows.size(), w.size());
    EXPECT_EQ(loaded.dropped_rows, 0u);
    const auto again = dataset_config_from_json(dataset_config_to_json(cfg), dir.path());
    EXPECT_EQ(again.paths, cfg.paths);
    EXPECT_EQ(again.window_seconds, cfg.window_seconds);
}

TEST(Batching, StackPreservesOrder) {
    const auto w = synth_generate(clean_synth());
    const std::vector<std::size_t> idx{7, 2};
    const auto t = stack_windows(w, idx);
    EXPECT_EQ(t.shape(), (Shape{2, 3, 64}));
    EXPECT_EQ(t[0], w[7].data[0]);
    EXPECT_EQ(t[3 * 64], w[2].data[0]);
    EXPECT_EQ(task_classes(w, Task::activity), (std::vector<int>{0, 1, 2}));
}
