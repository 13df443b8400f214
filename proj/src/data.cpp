#include "wsmt/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

namespace wsmt {

namespace {

std::vector<std::string_view> split_line(std::string_view line, char delim) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t pos = line.find(delim, start);
        std::string_view field = line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start);
        while (!field.empty() && (field.front() == ' ' || field.front() == '\t')) field.remove_prefix(1);
        while (!field.empty() && (field.back() == ' ' || field.back() == '\t' || field.back() == '\r'))
            field.remove_suffix(1);
        out.push_back(field);
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

// nullopt for the missing-value token; throws on anything unparsable.
std::optional<double> parse_number(std::string_view field, const std::string& missing, std::size_t line_no) {
    if (field == missing || field == "nan" || field == "NaN") return std::nullopt;
    double v = 0;
    auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
    if (ec != std::errc() || ptr != field.data() + field.size()) {
        throw DataError("line " + std::to_string(line_no) + ": cannot parse '" + std::string(field) + "'");
    }
    if (std::isnan(v)) return std::nullopt;
    return v;
}

}  // namespace

void SensorStream::validate() const {
    const std::size_t n = length();
    if (person.size() != n || timestamps.size() != n) throw DataError("stream label columns differ in length");
    if (!attribute.empty() && attribute.size() != n) throw DataError("attribute labels differ in length");
    if (channel_names.size() != channels.size()) throw DataError("channel names do not match channel data");
    for (const auto& c : channels)
        if (c.size() != n) throw DataError("stream channels differ in length");
}

LoadedStream load_stream(const std::filesystem::path& path, const StreamSchema& schema) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open stream file " + path.string());

    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line != "\r") break;
    }
    if (line.empty()) throw DataError("stream file " + path.string() + " is empty");

    const auto header = split_line(line, schema.delimiter);
    auto find_col = [&](const std::string& name) -> std::optional<std::size_t> {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return i;
        return std::nullopt;
    };
    const auto act_col = find_col(schema.activity_column);
    const auto pers_col = find_col(schema.person_column);
    const auto attr_col = find_col(schema.attribute_column);
    if (!act_col || !pers_col) {
        throw DataError("stream header lacks label columns '" + schema.activity_column + "' / '" +
                        schema.person_column + "'");
    }

    std::vector<std::size_t> channel_cols;
    std::vector<std::string> channel_names;
    if (schema.channels.empty()) {
        for (std::size_t i = 1; i < header.size(); ++i) {
            if (i == *act_col || i == *pers_col || (attr_col && i == *attr_col)) continue;
            channel_cols.push_back(i);
            channel_names.emplace_back(header[i]);
        }
    } else {
        for (const auto& name : schema.channels) {
            const auto col = find_col(name);
            if (!col) throw DataError("unknown channel column '" + name + "' in " + path.string());
            channel_cols.push_back(*col);
            channel_names.push_back(name);
        }
    }
    if (channel_cols.empty()) throw DataError("stream has no channel columns");

    LoadedStream out;
    auto& s = out.stream;
    s.sample_rate_hz = schema.sample_rate_hz;
    s.channel_names = channel_names;
    s.channels.assign(channel_cols.size(), {});

    std::vector<double> row;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        const auto fields = split_line(line, schema.delimiter);
        if (fields.size() != header.size()) {
            throw DataError("line " + std::to_string(line_no) + ": expected " + std::to_string(header.size()) +
                            " columns, found " + std::to_string(fields.size()));
        }
        bool missing = false;
        row.assign(fields.size(), 0.0);
        for (std::size_t i = 0; i < fields.size(); ++i) {
            const auto v = parse_number(fields[i], schema.missing_token, line_no);
            if (!v) {
                missing = true;
                break;
            }
            row[i] = *v;
        }
        if (missing) {
            ++out.dropped_rows;
            continue;
        }
        s.timestamps.push_back(row[0]);
        for (std::size_t c = 0; c < channel_cols.size(); ++c) s.channels[c].push_back(float(row[channel_cols[c]]));
        s.activity.push_back(int(std::lround(row[*act_col])));
        s.person.push_back(int(std::lround(row[*pers_col])));
        if (attr_col) s.attribute.push_back(int(std::lround(row[*attr_col])));
    }
    if (s.length() == 0) throw DataError("stream file " + path.string() + " has no usable rows");
    s.validate();
    return out;
}

void write_stream(const std::filesystem::path& path, const SensorStream& s, char delim) {
    s.validate();
    std::ofstream out(path);
    if (!out) throw DataError("cannot write stream file " + path.string());
    out << "timestamp";
    for (const auto& n : s.channel_names) out << delim << n;
    out << delim << "activity_id" << delim << "person_id";
    if (s.has_attribute()) out << delim << "attribute_id";
    out << '\n';
    out.precision(9);
    for (std::size_t i = 0; i < s.length(); ++i) {
        out << s.timestamps[i];
        for (const auto& c : s.channels) out << delim << c[i];
        out << delim << s.activity[i] << delim << s.person[i];
        if (s.has_attribute()) out << delim << s.attribute[i];
        out << '\n';
    }
    if (!out) throw DataError("failed writing stream file " + path.string());
}

SensorStream downsample(const SensorStream& s, std::size_t factor) {
    if (factor < 1) throw std::invalid_argument("downsample factor must be >= 1");
    SensorStream out;
    out.sample_rate_hz = s.sample_rate_hz / double(factor);
    out.channel_names = s.channel_names;
    out.channels.assign(s.channels.size(), {});
    for (std::size_t i = 0; i < s.length(); i += factor) {
        for (std::size_t c = 0; c < s.channels.size(); ++c) out.channels[c].push_back(s.channels[c][i]);
        out.timestamps.push_back(s.timestamps[i]);
        out.activity.push_back(s.activity[i]);
        out.person.push_back(s.person[i]);
        if (s.has_attribute()) out.attribute.push_back(s.attribute[i]);
    }
    return out;
}

void remap_activities(SensorStream& s, const std::map<int, int>& mapping) {
    for (auto& a : s.activity) {
        auto it = mapping.find(a);
        if (it != mapping.end()) a = it->second;
    }
}

std::size_t seconds_to_samples(double seconds, double rate) {
    const double x = seconds * rate;
    if (!(x >= 0)) throw std::invalid_argument("window duration must be non-negative");
    return std::size_t(std::floor(x + 1e-6));
}

std::vector<Window> segment_samples(const SensorStream& s, std::size_t window, std::size_t step,
                                    std::size_t stream_id) {
    if (window < 1) throw std::invalid_argument("window must cover at least one sample");
    if (step < 1) throw std::invalid_argument("segmentation step must be at least one sample");
    std::vector<Window> out;
    const std::size_t n = s.length();
    const std::size_t count = segment_count(n, window, step);
    const std::size_t ch = s.channel_count();
    for (std::size_t w = 0; w < count; ++w) {
        const std::size_t start = w * step;
        bool mixed = false;
        for (std::size_t i = start + 1; i < start + window && !mixed; ++i) {
            mixed = s.activity[i] != s.activity[start] || s.person[i] != s.person[start] ||
                    (s.has_attribute() && s.attribute[i] != s.attribute[start]);
        }
        if (mixed) continue;
        Window win;
        win.data = Tensor({ch, window});
        for (std::size_t c = 0; c < ch; ++c)
            std::copy_n(s.channels[c].begin() + long(start), window, win.data.data() + c * window);
        win.activity = s.activity[start];
        win.person = s.person[start];
        win.attribute = s.has_attribute() ? s.attribute[start] : -1;
        win.stream_id = stream_id;
        win.start = start;
        out.push_back(std::move(win));
    }
    return out;
}

std::vector<Window> segment(const SensorStream& s, double window_seconds, double step_seconds,
                            std::size_t stream_id) {
    const std::size_t window = seconds_to_samples(window_seconds, s.sample_rate_hz);
    const std::size_t step = seconds_to_samples(step_seconds, s.sample_rate_hz);
    if (window < 1) throw std::invalid_argument("window_seconds * rate must be >= 1 sample");
    if (step < 1) throw std::invalid_argument("segmentation step rounds to zero samples");
    return segment_samples(s, window, step, stream_id);
}

// ---------------------------------------------------------------------------
// Pair sampling
// ---------------------------------------------------------------------------

namespace {

struct Cell {
    std::array<int, kTaskCount> labels{};
    std::vector<std::size_t> members;
};

std::vector<Cell> group_cells(const std::vector<Window>& windows, std::vector<std::size_t>& cell_of) {
    std::map<std::array<int, kTaskCount>, std::size_t> index;
    std::vector<Cell> cells;
    cell_of.resize(windows.size());
    for (std::size_t i = 0; i < windows.size(); ++i) {
        const std::array<int, kTaskCount> key{windows[i].activity, windows[i].person, windows[i].attribute};
        auto [it, inserted] = index.emplace(key, cells.size());
        if (inserted) cells.push_back({key, {}});
        cells[it->second].members.push_back(i);
        cell_of[i] = it->second;
    }
    return cells;
}

}  // namespace

std::vector<PairItem> sample_pairs(const std::vector<Window>& windows, std::size_t count, std::uint64_t seed,
                                   const TaskSet& tasks) {
    if (windows.size() < 2) throw DataError("pair sampling needs at least two windows");
    if (tasks.empty()) throw DataError("pair sampling needs at least one task");
    for (Task t : tasks) {
        std::set<int> classes;
        for (const auto& w : windows) classes.insert(w.label(t));
        if (classes.count(-1)) throw DataError("windows lack labels for task '" + std::string(task_name(t)) + "'");
        if (classes.size() < 2) {
            throw DataError("task '" + std::string(task_name(t)) + "' has a single class; no negative pairs exist");
        }
    }

    std::vector<std::size_t> cell_of;
    const auto cells = group_cells(windows, cell_of);
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> pick_anchor(0, windows.size() - 1);
    std::bernoulli_distribution coin(0.5);

    std::vector<PairItem> out;
    out.reserve(count);
    std::vector<std::size_t> avail(cells.size());
    constexpr int kMaxAttempts = 1000;
    for (std::size_t n = 0; n < count; ++n) {
        bool placed = false;
        for (int attempt = 0; attempt < kMaxAttempts && !placed; ++attempt) {
            const std::size_t a = pick_anchor(rng);
            const auto& anchor = cells[cell_of[a]].labels;
            std::array<bool, kTaskCount> want{};
            for (Task t : tasks) want[task_index(t)] = coin(rng);

            std::size_t total = 0;
            for (std::size_t c = 0; c < cells.size(); ++c) {
                bool ok = true;
                for (Task t : tasks) {
                    const std::size_t ti = task_index(t);
                    ok = ok && ((cells[c].labels[ti] == anchor[ti]) == want[ti]);
                }
                avail[c] = ok ? cells[c].members.size() - (c == cell_of[a] ? 1 : 0) : 0;
                total += avail[c];
            }
            if (total == 0) continue;

            std::size_t r = std::uniform_int_distribution<std::size_t>(0, total - 1)(rng);
            std::size_t b = 0;
            for (std::size_t c = 0; c < cells.size(); ++c) {
                if (r >= avail[c]) {
                    r -= avail[c];
                    continue;
                }
                for (std::size_t m : cells[c].members) {
                    if (m == a) continue;
                    if (r == 0) {
                        b = m;
                        break;
                    }
                    --r;
                }
                break;
            }
            PairItem item{a, b, {}};
            for (Task t : tasks) item.label.set(t, same_class(windows[a], windows[b], t));
            out.push_back(item);
            placed = true;
        }
        if (!placed) throw DataError("pair sampling could not find a valid partner");
    }
    return out;
}

PartialSplit partial_split(std::size_t window_count, std::uint64_t seed) {
    if (window_count < 2) throw DataError("partial split needs at least two windows");
    std::vector<std::size_t> order(window_count);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    const std::size_t half = window_count / 2;
    PartialSplit out;
    out.activity_half.assign(order.begin(), order.begin() + long(half));
    out.person_half.assign(order.begin() + long(half), order.end());
    std::sort(out.activity_half.begin(), out.activity_half.end());
    std::sort(out.person_half.begin(), out.person_half.end());
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic data
// ---------------------------------------------------------------------------

void SynthConfig::validate() const {
    if (persons < 2 || activities < 2) throw std::invalid_argument("synthetic data needs >= 2 persons and activities");
    if (attribute_classes < 1) throw std::invalid_argument("attribute_classes must be >= 1");
    if (windows_per_cell < 1 || channels < 1 || length < 4) throw std::invalid_argument("invalid synthetic geometry");
    if (!(noise >= 0)) throw std::invalid_argument("noise level must be >= 0");
    if (2.0 * synth_frequency(activities - 1) >= double(length)) {
        throw std::invalid_argument("window too short to hold " + std::to_string(activities) + " distinct frequencies");
    }
}

double synth_frequency(std::size_t activity) { return 2.0 + 3.0 * double(activity); }

std::vector<Window> synth_generate(const SynthConfig& cfg) {
    cfg.validate();
    std::mt19937_64 rng(cfg.seed);
    std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
    std::uniform_real_distribution<double> scale(0.6, 1.4);
    std::uniform_real_distribution<double> jitter(-0.1, 0.1);

    // Person offsets sit on a shuffled grid so no two persons coincide.
    std::vector<std::size_t> level(cfg.persons);
    std::iota(level.begin(), level.end(), std::size_t{0});
    std::shuffle(level.begin(), level.end(), rng);

    struct Person {
        std::vector<double> phi;
        double scale = 1, offset = 0;
    };
    std::vector<Person> people(cfg.persons);
    const double spread = 1.5;
    for (std::size_t p = 0; p < cfg.persons; ++p) {
        auto& who = people[p];
        for (std::size_t c = 0; c < cfg.channels; ++c) who.phi.push_back(phase(rng));
        who.scale = scale(rng);
        who.offset = -spread + 2.0 * spread * double(level[p]) / double(cfg.persons - 1) + jitter(rng);
    }

    std::normal_distribution<double> noise(0.0, 1.0);
    std::vector<Window> out;
    out.reserve(cfg.persons * cfg.activities * cfg.windows_per_cell);
    const double T = double(cfg.length);
    for (std::size_t p = 0; p < cfg.persons; ++p) {
        for (std::size_t a = 0; a < cfg.activities; ++a) {
            const double f = synth_frequency(a);
            for (std::size_t w = 0; w < cfg.windows_per_cell; ++w) {
                Window win;
                win.data = Tensor({cfg.channels, cfg.length});
                for (std::size_t c = 0; c < cfg.channels; ++c) {
                    for (std::size_t t = 0; t < cfg.length; ++t) {
                        double v = std::sin(2.0 * std::numbers::pi * f * double(t) / T + people[p].phi[c]) *
                                       people[p].scale +
                                   people[p].offset;
                        if (cfg.noise > 0) v += cfg.noise * noise(rng);
                        win.data[c * cfg.length + t] = float(v);
                    }
                }
                win.activity = int(a);
                win.person = int(p);
                win.attribute = int(p % cfg.attribute_classes);
                win.start = out.size() * cfg.length;
                out.push_back(std::move(win));
            }
        }
    }
    return out;
}

SensorStream windows_to_stream(const std::vector<Window>& windows, double sample_rate_hz) {
    if (windows.empty()) throw DataError("no windows to convert");
    const std::size_t ch = windows.front().data.dim(0);
    SensorStream s;
    s.sample_rate_hz = sample_rate_hz;
    for (std::size_t c = 0; c < ch; ++c) s.channel_names.push_back("ch" + std::to_string(c + 1));
    s.channels.assign(ch, {});
    const bool attr = windows.front().attribute >= 0;
    for (const auto& w : windows) {
        const std::size_t len = w.data.dim(1);
        for (std::size_t c = 0; c < ch; ++c) {
            auto series = w.data.row(c);
            s.channels[c].insert(s.channels[c].end(), series.begin(), series.end());
        }
        for (std::size_t t = 0; t < len; ++t) {
            s.timestamps.push_back(double(s.timestamps.size()) / sample_rate_hz);
            s.activity.push_back(w.activity);
            s.person.push_back(w.person);
            if (attr) s.attribute.push_back(w.attribute);
        }
    }
    s.validate();
    return s;
}

// ---------------------------------------------------------------------------
// Splits and batching
// ---------------------------------------------------------------------------

DataSplit split_train_val_test(const std::vector<Window>& windows, std::array<double, 3> fractions,
                               std::uint64_t seed) {
    if (windows.empty()) throw DataError("cannot split an empty window set");
    double sum = 0;
    for (double f : fractions) {
        if (f < 0) throw std::invalid_argument("split fractions must be non-negative");
        sum += f;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw std::invalid_argument("split fractions must sum to 1");

    std::map<std::pair<int, int>, std::vector<std::size_t>> strata;
    for (std::size_t i = 0; i < windows.size(); ++i) strata[{windows[i].activity, windows[i].person}].push_back(i);

    std::mt19937_64 rng(seed);
    DataSplit out;
    for (auto& [key, idx] : strata) {
        std::shuffle(idx.begin(), idx.end(), rng);
        const double n = double(idx.size());
        const auto cut1 = std::size_t(std::llround(fractions[0] * n));
        const auto cut2 = std::min(idx.size(), std::size_t(std::llround((fractions[0] + fractions[1]) * n)));
        for (std::size_t j = 0; j < idx.size(); ++j) {
            auto& dst = j < cut1 ? out.train : (j < cut2 ? out.validation : out.test);
            dst.push_back(windows[idx[j]]);
        }
    }
    return out;
}

Tensor stack_windows(const std::vector<Window>& windows, std::span<const std::size_t> indices) {
    if (indices.empty()) throw DataError("cannot stack an empty batch");
    const auto& first = windows.at(indices[0]).data;
    const std::size_t ch = first.dim(0), len = first.dim(1), per = ch * len;
    Tensor out({indices.size(), ch, len});
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const auto& d = windows.at(indices[i]).data;
        if (d.shape() != first.shape()) throw ShapeError("windows in a batch must share [channels, length]");
        std::copy_n(d.data(), per, out.data() + i * per);
    }
    return out;
}

Tensor stack_windows(const std::vector<Window>& windows) {
    std::vector<std::size_t> idx(windows.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    return stack_windows(windows, idx);
}

std::vector<int> task_classes(const std::vector<Window>& windows, Task t) {
    std::set<int> s;
    for (const auto& w : windows) s.insert(w.label(t));
    return {s.begin(), s.end()};
}

// ---------------------------------------------------------------------------
// Dataset configs
// ---------------------------------------------------------------------------

DatasetConfig dataset_preset(const std::string& name) {
    DatasetConfig cfg;
    cfg.name = name;
    if (name == "pamap2") {
        cfg.schema.sample_rate_hz = 100.0;
        cfg.downsample = 3;
        cfg.window_seconds = 5.12;
        cfg.step_seconds = 1.0;
    } else if (name == "mhealth") {
        cfg.schema.sample_rate_hz = 50.0;
        cfg.window_seconds = 5.0;
        cfg.step_seconds = 2.5;
    } else if (name == "sbhar") {
        cfg.schema.sample_rate_hz = 50.0;
        cfg.window_seconds = 2.56;
        cfg.step_seconds = 1.28;
        // Postural transitions 7..12 collapse into one transition class.
        for (int id = 7; id <= 12; ++id) cfg.activity_map[id] = 7;
    } else if (name == "wisdm") {
        cfg.schema.sample_rate_hz = 20.0;
        cfg.window_seconds = 10.0;
        cfg.step_seconds = 10.0;
    } else {
        throw std::invalid_argument("unknown dataset preset '" + name + "'");
    }
    return cfg;
}

LoadedDataset load_dataset(const DatasetConfig& cfg) {
    if (cfg.paths.empty()) throw DataError("dataset config lists no stream files");
    if (cfg.downsample < 1) throw std::invalid_argument("downsample factor must be >= 1");
    LoadedDataset out;
    for (std::size_t i = 0; i < cfg.paths.size(); ++i) {
        auto loaded = load_stream(cfg.paths[i], cfg.schema);
        out.dropped_rows += loaded.dropped_rows;
        auto s = downsample(loaded.stream, cfg.downsample);
        remap_activities(s, cfg.activity_map);
        auto windows = segment(s, cfg.window_seconds, cfg.step_seconds, i);
        for (auto& w : windows) out.windows.push_back(std::move(w));
    }
    if (out.windows.empty()) throw DataError("dataset produced no windows");
    return out;
}

}  // namespace wsmt
