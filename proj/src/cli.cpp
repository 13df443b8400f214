#include "wsmt/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>

#include "wsmt/eval.hpp"
#include "wsmt/gradcheck.hpp"
#include "wsmt/json_io.hpp"
#include "wsmt/train.hpp"

namespace wsmt {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

class InputError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class BusyError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class CheckFailed : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

constexpr const char* kManifest = "manifest.json";
constexpr const char* kCheckpoint = "checkpoint.wsmt";
constexpr const char* kTrainLog = "train_log.jsonl";
constexpr const char* kLockName = ".wsmt.lock";

json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw InputError("missing file " + path.string());
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw std::invalid_argument("malformed JSON in " + path.string() + ": " + e.what());
    }
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
    if (!out) throw InputError("cannot write " + path.string());
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

// Holds <dir>/.wsmt.lock for the lifetime of a run.
class OutputLock {
public:
    explicit OutputLock(const fs::path& dir) : path_(dir / kLockName) {
        fs::create_directories(dir);
        std::FILE* f = std::fopen(path_.c_str(), "wx");
        if (!f) throw BusyError("output directory " + dir.string() + " is in use (remove " + path_.string() +
                                " if no run is active)");
        std::fclose(f);
    }
    ~OutputLock() {
        std::error_code ec;
        fs::remove(path_, ec);
    }
    OutputLock(const OutputLock&) = delete;
    OutputLock& operator=(const OutputLock&) = delete;

private:
    fs::path path_;
};

fs::path out_root() {
    const char* env = std::getenv(kOutRootEnv);
    return env && *env ? fs::path(env) : fs::path("runs");
}

fs::path resolve_out(const std::string& flag, const std::string& default_name) {
    if (!flag.empty()) return flag;
    return out_root() / default_name;
}

std::string slug(std::string s) {
    std::replace(s.begin(), s.end(), ':', '_');
    return s;
}

// ---------------------------------------------------------------------------
// Run configuration: file < flags
// ---------------------------------------------------------------------------

struct RunConfig {
    std::optional<DatasetConfig> dataset;
    NetworkConfig network;
    TrainConfig train;
    std::uint64_t split_seed = 0;
    KMeansOptions kmeans;
};

json run_config_to_json(const RunConfig& rc) {
    return json{{"dataset", rc.dataset ? dataset_config_to_json(*rc.dataset) : json()},
                {"network", rc.network},
                {"train", rc.train},
                {"split_seed", rc.split_seed},
                {"kmeans", rc.kmeans}};
}

DatasetConfig dataset_from_value(const json& v, const fs::path& base) {
    if (v.is_string()) {
        fs::path p = v.get<std::string>();
        if (p.is_relative()) p = base / p;
        return dataset_config_from_json(read_json(p), p.parent_path());
    }
    return dataset_config_from_json(v, base);
}

// A run file has any of the keys dataset/network/train/split_seed/kmeans; any
// other object is read as a bare dataset description.
RunConfig run_config_from_json(const json& j, const fs::path& base) {
    RunConfig rc;
    const bool is_run = j.contains("dataset") || j.contains("network") || j.contains("train") ||
                        j.contains("split_seed") || j.contains("kmeans");
    if (!is_run) {
        rc.dataset = dataset_config_from_json(j, base);
        return rc;
    }
    if (auto it = j.find("dataset"); it != j.end() && !it->is_null()) rc.dataset = dataset_from_value(*it, base);
    if (auto it = j.find("network"); it != j.end()) it->get_to(rc.network);
    if (auto it = j.find("train"); it != j.end()) it->get_to(rc.train);
    if (auto it = j.find("split_seed"); it != j.end()) it->get_to(rc.split_seed);
    if (auto it = j.find("kmeans"); it != j.end()) it->get_to(rc.kmeans);
    return rc;
}

RunConfig load_run_config(const std::string& path) {
    if (path.empty()) return {};
    const fs::path p = fs::absolute(path);
    return run_config_from_json(read_json(p), p.parent_path());
}

struct TrainFlags {
    std::string config, dataset, out, mode;
    std::optional<std::uint64_t> seed, split_seed;
    std::optional<std::size_t> epochs, batch_size, pairs_per_epoch, patience, feature_maps, blocks, embedding_dim;
    std::optional<double> lr, margin;
};

void apply_flags(RunConfig& rc, const TrainFlags& f) {
    if (!f.dataset.empty()) {
        const fs::path p = fs::absolute(f.dataset);
        rc.dataset = dataset_config_from_json(read_json(p), p.parent_path());
    }
    if (!f.mode.empty()) rc.train.mode = parse_mode(f.mode);
    if (f.seed) rc.train.seed = *f.seed;
    if (f.split_seed) rc.split_seed = *f.split_seed;
    if (f.epochs) rc.train.max_epochs = *f.epochs;
    if (f.batch_size) rc.train.batch_size = *f.batch_size;
    if (f.pairs_per_epoch) rc.train.pairs_per_epoch = *f.pairs_per_epoch;
    if (f.patience) rc.train.patience = *f.patience;
    if (f.lr) rc.train.lr0 = *f.lr;
    if (f.margin) rc.train.loss.margin = *f.margin;
    if (f.feature_maps) rc.network.feature_maps = *f.feature_maps;
    if (f.blocks) rc.network.blocks = *f.blocks;
    if (f.embedding_dim) {
        for (auto& h : rc.network.heads) h.embedding_dim = *f.embedding_dim;
    }
}

// Absolute stream paths keep the frozen config usable from any directory.
void absolutize(DatasetConfig& d) {
    for (auto& p : d.paths) p = fs::absolute(p).lexically_normal();
}

// ---------------------------------------------------------------------------
// Evaluation helpers
// ---------------------------------------------------------------------------

bool attribute_known(const std::vector<Window>& windows) {
    return std::all_of(windows.begin(), windows.end(), [](const Window& w) { return w.attribute >= 0; });
}

std::vector<Task> scorable_tasks(const Network& net, const std::vector<Window>& windows) {
    std::vector<Task> out;
    for (const auto& h : net.config.heads) {
        if (h.task == Task::attribute && !attribute_known(windows)) continue;
        out.push_back(h.task);
    }
    return out;
}

json score_network(Network& net, const std::vector<Window>& windows, std::uint64_t seed, const KMeansOptions& km) {
    json out = json::object();
    for (Task t : scorable_tasks(net, windows)) {
        out[std::string(task_name(t))] = evaluate_task(net, windows, t, 0, seed, km);
    }
    return out;
}

json score_raw(const Network& net, const std::vector<Window>& windows, std::uint64_t seed, const KMeansOptions& km) {
    json out = json::object();
    for (Task t : scorable_tasks(net, windows)) {
        out[std::string(task_name(t))] = evaluate_raw(windows, t, 0, seed, km);
    }
    return out;
}

void print_metrics(std::ostream& out, const std::string& title, const json& metrics) {
    out << title << "\n";
    out << "  task   k   samples  accuracy  mean_f1\n";
    for (const auto& [task, m] : metrics.items()) {
        out << "  " << std::left << std::setw(6) << task << std::right << std::setw(2) << m["k"].get<std::size_t>()
            << std::setw(10) << m["samples"].get<std::size_t>() << std::fixed << std::setprecision(4)
            << std::setw(10) << m["accuracy"].get<double>() << std::setw(9) << m["mean_f1"].get<double>() << "\n";
        out.unsetf(std::ios::fixed);
    }
    out << "  (accuracy uses a Hungarian one-to-one cluster/class matching)\n";
}

// Canonical form so freshly computed and re-read manifests compare equal.
json normalized(const json& j) { return json::parse(j.dump()); }

struct LoadedRun {
    fs::path dir;
    json manifest;
    RunConfig config;
};

LoadedRun load_run(const std::string& dir) {
    LoadedRun r;
    r.dir = fs::absolute(dir).lexically_normal();
    r.manifest = read_json(r.dir / kManifest);
    if (r.manifest.value("subcommand", "") != "train") {
        throw std::invalid_argument(r.dir.string() + " is not a training run directory");
    }
    r.config = run_config_from_json(r.manifest.at("config"), r.dir);
    return r;
}

std::vector<Window> select_split(const RunConfig& rc, const std::string& split) {
    if (!rc.dataset) throw std::invalid_argument("no dataset configured (pass --config or --dataset)");
    auto windows = load_dataset(*rc.dataset).windows;
    if (split == "all") return windows;
    auto parts = split_train_val_test(windows, rc.dataset->split, rc.split_seed);
    if (split == "train") return parts.train;
    if (split == "validation") return parts.validation;
    if (split == "test") return parts.test;
    throw std::invalid_argument("unknown split '" + split + "' (train, validation, test, all)");
}

void ensure_distinct(const fs::path& out, const fs::path& input) {
    std::error_code ec;
    if (fs::exists(out) && fs::equivalent(out, input, ec)) {
        throw std::invalid_argument("output directory must differ from the input run " + input.string());
    }
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

struct SynthFlags {
    std::string config, out;
    std::optional<std::size_t> persons, activities, attributes, windows_per_cell, channels, length;
    std::optional<double> noise;
    std::optional<std::uint64_t> seed;
    double rate = 50.0;
};

int run_synth(const SynthFlags& f, std::ostream& out) {
    SynthConfig sc;
    if (!f.config.empty()) read_json(f.config).get_to(sc);
    if (f.persons) sc.persons = *f.persons;
    if (f.activities) sc.activities = *f.activities;
    if (f.attributes) sc.attribute_classes = *f.attributes;
    if (f.windows_per_cell) sc.windows_per_cell = *f.windows_per_cell;
    if (f.channels) sc.channels = *f.channels;
    if (f.length) sc.length = *f.length;
    if (f.noise) sc.noise = *f.noise;
    if (f.seed) sc.seed = *f.seed;
    sc.validate();
    if (!(f.rate > 0)) throw std::invalid_argument("--rate must be positive");

    const fs::path dir = resolve_out(f.out, "synth-" + std::to_string(sc.seed));
    OutputLock lock(dir);
    const auto windows = synth_generate(sc);
    write_stream(dir / "stream.csv", windows_to_stream(windows, f.rate));

    DatasetConfig dc;
    dc.name = "synthetic";
    dc.paths = {"stream.csv"};
    dc.schema.sample_rate_hz = f.rate;
    dc.window_seconds = double(sc.length) / f.rate;
    dc.step_seconds = dc.window_seconds;
    write_json(dir / "dataset.json", dataset_config_to_json(dc));
    write_json(dir / kManifest, json{{"subcommand", "synth"},
                                     {"config", {{"synth", sc}, {"sample_rate_hz", f.rate}}},
                                     {"outputs", {"stream.csv", "dataset.json"}},
                                     {"windows", windows.size()}});
    out << "wrote " << windows.size() << " windows to " << (dir / "stream.csv").string() << "\n";
    return 0;
}

int run_train(const TrainFlags& f, std::ostream& out) {
    RunConfig rc = load_run_config(f.config);
    apply_flags(rc, f);
    if (!rc.dataset) throw std::invalid_argument("train needs a dataset (pass --config or --dataset)");
    absolutize(*rc.dataset);

    const auto loaded = load_dataset(*rc.dataset);
    const auto split = split_train_val_test(loaded.windows, rc.dataset->split, rc.split_seed);
    if (split.test.empty()) throw DataError("test split is empty");
    rc.network.input_channels = loaded.windows.front().data.dim(0);
    apply_mode(rc.train.mode, rc.network, rc.train.loss);
    rc.network.validate();
    rc.train.validate();

    const fs::path dir = resolve_out(f.out, "train-" + slug(mode_name(rc.train.mode)) + "-" +
                                                std::to_string(rc.train.seed));
    OutputLock lock(dir);

    std::ofstream log(dir / kTrainLog, std::ios::trunc);
    if (!log) throw InputError("cannot write " + (dir / kTrainLog).string());
    out << "training " << mode_name(rc.train.mode) << " on " << split.train.size() << " windows ("
        << split.validation.size() << " validation, " << split.test.size() << " test)\n";

    auto net = build_network<float>(rc.network, rc.train.seed);
    const auto result = train(net, {split.train, split.validation}, rc.train, [&](const EpochRecord& r) {
        log << json(r).dump() << "\n" << std::flush;
        out << "epoch " << r.epoch << "  train " << r.train_loss << "  validation " << r.validation_loss << "  lr "
            << r.lr << "\n";
    });

    save_checkpoint(dir / kCheckpoint, result.best);
    // Scores come from the file on disk so `eval` reproduces them exactly.
    auto best = load_checkpoint(dir / kCheckpoint);
    const json metrics = score_network(best.network, split.test, rc.train.seed, rc.kmeans);
    const json raw = score_raw(best.network, split.test, rc.train.seed, rc.kmeans);

    const auto& h = result.history;
    json manifest{{"subcommand", "train"},
                  {"config", run_config_to_json(rc)},
                  {"data",
                   {{"windows", loaded.windows.size()},
                    {"dropped_rows", loaded.dropped_rows},
                    {"train", split.train.size()},
                    {"validation", split.validation.size()},
                    {"test", split.test.size()}}},
                  {"training",
                   {{"epochs_run", h.epochs.size()},
                    {"best_epoch", h.best_epoch},
                    {"best_validation_loss", h.best_validation_loss},
                    {"early_stopped", h.early_stopped},
                    {"steps", h.epochs.empty() ? 0 : h.epochs.back().steps},
                    {"parameters", best.network.parameter_count()}}},
                  {"checkpoint", kCheckpoint},
                  {"log", kTrainLog},
                  {"evaluation", {{"split", "test"}, {"seed", rc.train.seed}, {"matching", "hungarian"}}},
                  {"metrics", metrics},
                  {"raw_baseline", raw}};
    write_json(dir / kManifest, manifest);
    print_metrics(out, "test metrics (best epoch " + std::to_string(h.best_epoch) + ")", metrics);
    print_metrics(out, "raw-input k-means baseline", raw);
    out << "run written to " << dir.string() << "\n";
    return 0;
}

struct EvalFlags {
    std::string run, checkpoint, config, dataset, out, split;
    std::optional<std::uint64_t> seed;
};

int run_eval(const EvalFlags& f, std::ostream& out) {
    std::optional<LoadedRun> run;
    RunConfig rc;
    fs::path ckpt_path;
    if (!f.run.empty()) {
        run = load_run(f.run);
        rc = run->config;
        ckpt_path = run->dir / run->manifest.value("checkpoint", kCheckpoint);
    }
    if (!f.config.empty()) {
        auto other = load_run_config(f.config);
        if (other.dataset) rc.dataset = other.dataset;
    }
    if (!f.dataset.empty()) {
        TrainFlags tf;
        tf.dataset = f.dataset;
        apply_flags(rc, tf);
    }
    if (!f.checkpoint.empty()) ckpt_path = fs::absolute(f.checkpoint);
    if (ckpt_path.empty()) throw std::invalid_argument("eval needs --run or --checkpoint");
    const std::string split = f.split.empty() ? (run ? "test" : "all") : f.split;
    const std::uint64_t seed = f.seed ? *f.seed : rc.train.seed;

    auto ckpt = load_checkpoint(ckpt_path);
    const auto windows = select_split(rc, split);
    const json metrics = normalized(score_network(ckpt.network, windows, seed, rc.kmeans));

    const fs::path dir = resolve_out(f.out, "eval-" + std::to_string(seed));
    if (run) ensure_distinct(dir, run->dir);
    OutputLock lock(dir);

    // Same checkpoint, data, split and seed as the run: scores must agree.
    const bool comparable = run && f.checkpoint.empty() && f.config.empty() && f.dataset.empty() &&
                            split == "test" && seed == rc.train.seed;
    json manifest{{"subcommand", "eval"},
                  {"checkpoint", ckpt_path.string()},
                  {"config", run_config_to_json(rc)},
                  {"split", split},
                  {"seed", seed},
                  {"metrics", metrics}};
    if (run) manifest["run"] = run->dir.string();
    bool reproduced = true;
    if (comparable) {
        reproduced = metrics == normalized(run->manifest.at("metrics"));
        manifest["matches_run_manifest"] = reproduced;
    }
    write_json(dir / kManifest, manifest);
    print_metrics(out, "metrics on " + split + " split", metrics);
    if (comparable) out << (reproduced ? "matches the run manifest\n" : "DIFFERS from the run manifest\n");
    if (!reproduced) throw CheckFailed("evaluation does not reproduce the metrics in " + run->dir.string());
    return 0;
}

int run_embed(const EvalFlags& f, std::ostream& out) {
    std::optional<LoadedRun> run;
    RunConfig rc;
    fs::path ckpt_path;
    if (!f.run.empty()) {
        run = load_run(f.run);
        rc = run->config;
        ckpt_path = run->dir / run->manifest.value("checkpoint", kCheckpoint);
    }
    if (!f.config.empty()) {
        auto other = load_run_config(f.config);
        if (other.dataset) rc.dataset = other.dataset;
    }
    if (!f.dataset.empty()) {
        TrainFlags tf;
        tf.dataset = f.dataset;
        apply_flags(rc, tf);
    }
    if (!f.checkpoint.empty()) ckpt_path = fs::absolute(f.checkpoint);
    if (ckpt_path.empty()) throw std::invalid_argument("embed needs --run or --checkpoint");
    const std::string split = f.split.empty() ? "all" : f.split;

    auto ckpt = load_checkpoint(ckpt_path);
    const auto windows = select_split(rc, split);
    const fs::path dir = resolve_out(f.out, "embed");
    if (run) ensure_distinct(dir, run->dir);
    OutputLock lock(dir);
    export_embeddings(ckpt.network, windows, dir / "embeddings.csv");
    write_json(dir / kManifest, json{{"subcommand", "embed"},
                                     {"checkpoint", ckpt_path.string()},
                                     {"config", run_config_to_json(rc)},
                                     {"split", split},
                                     {"rows", windows.size()},
                                     {"outputs", {"embeddings.csv"}}});
    out << "wrote " << windows.size() << " embeddings to " << (dir / "embeddings.csv").string() << "\n";
    return 0;
}

struct GradcheckFlags {
    std::string out;
    std::size_t instances = 100;
    std::uint64_t seed = 0;
    std::vector<std::string> only;
};

int run_gradcheck_cmd(const GradcheckFlags& f, std::ostream& out) {
    std::vector<std::string> names = f.only.empty() ? gradcheck_names() : f.only;
    const fs::path dir = resolve_out(f.out, "gradcheck-" + std::to_string(f.seed));
    OutputLock lock(dir);

    json results = json::array();
    double worst = 0, seconds = 0;
    bool ok = true;
    out << "check               instances  max_rel_error\n";
    for (const auto& name : names) {
        const auto r = run_gradcheck(name, f.instances, f.seed);
        worst = std::max(worst, r.max_relative_error);
        seconds += r.seconds;
        ok = ok && r.passed();
        out << std::left << std::setw(20) << r.name << std::right << std::setw(9) << r.instances << "  "
            << std::scientific << std::setprecision(3) << r.max_relative_error << (r.passed() ? "" : "  FAIL")
            << "\n";
        out.unsetf(std::ios::scientific);
        results.push_back({{"name", r.name},
                           {"instances", r.instances},
                           {"max_relative_error", r.max_relative_error},
                           {"passed", r.passed()}});
    }
    out << "worst " << std::scientific << std::setprecision(3) << worst << " (tolerance " << kGradCheckTolerance
        << ")  " << (ok ? "PASS" : "FAIL") << "\n";
    out.unsetf(std::ios::scientific);
    write_json(dir / kManifest, json{{"subcommand", "gradcheck"},
                                     {"config",
                                      {{"instances", f.instances},
                                       {"seed", f.seed},
                                       {"eps", kGradCheckEps},
                                       {"tolerance", kGradCheckTolerance}}},
                                     {"results", results},
                                     {"max_relative_error", worst},
                                     {"passed", ok}});
    if (!ok) throw CheckFailed("gradient check exceeded tolerance");
    return 0;
}

struct ReportFlags {
    std::string out;
    std::vector<std::string> runs;
};

std::string cell(const json& metrics, const char* task, const char* key) {
    if (!metrics.contains(task)) return "-";
    std::ostringstream os;
    os << std::fixed << std::setprecision(4) << metrics[task][key].get<double>();
    return os.str();
}

int run_report(const ReportFlags& f, std::ostream& out) {
    if (f.runs.empty()) throw std::invalid_argument("report needs at least one run directory");
    std::vector<LoadedRun> runs;
    for (const auto& r : f.runs) runs.push_back(load_run(r));

    const char* tasks[] = {"act", "pers", "attr"};
    std::ostringstream md;
    md << "| run | mode | seed | act acc | act F_m | pers acc | pers F_m | attr acc | attr F_m | raw act acc | raw pers "
          "acc |\n";
    md << "|---|---|---|---|---|---|---|---|---|---|---|\n";
    // mode -> task -> accuracies over seeds
    std::map<std::string, std::map<std::string, std::vector<double>>> by_mode;
    json rows = json::array();
    for (const auto& r : runs) {
        const auto& m = r.manifest.at("metrics");
        const auto& raw = r.manifest.value("raw_baseline", json::object());
        const std::string mode = mode_name(r.config.train.mode);
        md << "| " << r.dir.filename().string() << " | " << mode << " | " << r.config.train.seed;
        for (const char* t : tasks) md << " | " << cell(m, t, "accuracy") << " | " << cell(m, t, "mean_f1");
        md << " | " << cell(raw, "act", "accuracy") << " | " << cell(raw, "pers", "accuracy") << " |\n";
        for (const char* t : tasks) {
            if (m.contains(t)) by_mode[mode][t].push_back(m[t]["accuracy"].get<double>());
        }
        rows.push_back({{"run", r.dir.string()}, {"mode", mode}, {"seed", r.config.train.seed}, {"metrics", m}});
    }

    md << "\nMean clustering accuracy by mode\n\n| mode | runs | act | pers | attr |\n|---|---|---|---|---|\n";
    json summary = json::object();
    for (const auto& [mode, per_task] : by_mode) {
        std::size_t n = 0;
        for (const auto& [t, v] : per_task) n = std::max(n, v.size());
        md << "| " << mode << " | " << n;
        for (const char* t : tasks) {
            auto it = per_task.find(t);
            if (it == per_task.end()) {
                md << " | -";
                continue;
            }
            double mean = 0;
            for (double v : it->second) mean += v;
            mean /= double(it->second.size());
            summary[mode][t] = mean;
            std::ostringstream os;
            os << std::fixed << std::setprecision(4) << mean;
            md << " | " << os.str();
        }
        md << " |\n";
    }

    const fs::path dir = resolve_out(f.out, "report");
    for (const auto& r : runs) ensure_distinct(dir, r.dir);
    OutputLock lock(dir);
    write_text(dir / "report.md", md.str());
    write_json(dir / kManifest, json{{"subcommand", "report"},
                                     {"config", {{"runs", f.runs}}},
                                     {"runs", rows},
                                     {"mean_accuracy_by_mode", summary}});
    out << md.str();
    return 0;
}

int fail(std::ostream& err, ExitCode code, const std::string& category, const std::string& what) {
    err << "wsmt: " << category << ": " << what << "\n";
    return int(code);
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Weakly supervised multi-output siamese TCN"};
    app.require_subcommand(1);

    SynthFlags sf;
    auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset (stream.csv + dataset.json)");
    synth->add_option("--config", sf.config, "JSON file with synthetic generator settings");
    synth->add_option("--persons", sf.persons);
    synth->add_option("--activities", sf.activities);
    synth->add_option("--attributes", sf.attributes, "Attribute classes (attribute = person mod this)");
    synth->add_option("--windows-per-cell", sf.windows_per_cell, "Windows per (person, activity)");
    synth->add_option("--channels", sf.channels);
    synth->add_option("--length", sf.length, "Samples per window");
    synth->add_option("--noise", sf.noise, "Gaussian noise standard deviation");
    synth->add_option("--seed", sf.seed);
    synth->add_option("--rate", sf.rate, "Sample rate written to dataset.json (Hz)");
    synth->add_option("--out", sf.out, "Output directory");

    TrainFlags tf;
    auto* trn = app.add_subcommand("train", "Train a model and score it on the test split");
    trn->add_option("--config", tf.config, "Run config (dataset/network/train sections) or a dataset file");
    trn->add_option("--dataset", tf.dataset, "Dataset description, overrides the config's dataset");
    trn->add_option("--mode", tf.mode, "multi, single:act, single:pers, partial or tri");
    trn->add_option("--seed", tf.seed, "Seed for initialization, pairs and clustering");
    trn->add_option("--split-seed", tf.split_seed, "Seed of the train/validation/test split");
    trn->add_option("--epochs", tf.epochs, "Maximum epochs");
    trn->add_option("--batch-size", tf.batch_size);
    trn->add_option("--pairs-per-epoch", tf.pairs_per_epoch, "0 means 20 x training windows");
    trn->add_option("--patience", tf.patience);
    trn->add_option("--lr", tf.lr, "Initial learning rate");
    trn->add_option("--margin", tf.margin, "Contrastive margin");
    trn->add_option("--feature-maps", tf.feature_maps);
    trn->add_option("--blocks", tf.blocks);
    trn->add_option("--embedding-dim", tf.embedding_dim);
    trn->add_option("--out", tf.out, "Output directory");

    EvalFlags ef;
    auto* evl = app.add_subcommand("eval", "Score a checkpoint (defaults reproduce the run manifest)");
    EvalFlags mf;
    auto* emb = app.add_subcommand("embed", "Export per-window embeddings to CSV");
    for (auto [cmd, flags] : {std::pair{evl, &ef}, std::pair{emb, &mf}}) {
        cmd->add_option("--run", flags->run, "Training run directory");
        cmd->add_option("--checkpoint", flags->checkpoint, "Checkpoint file, overrides the run's");
        cmd->add_option("--config", flags->config, "Run config or dataset file to score instead");
        cmd->add_option("--dataset", flags->dataset, "Dataset description to score instead");
        cmd->add_option("--split", flags->split, "train, validation, test or all");
        cmd->add_option("--out", flags->out, "Output directory");
    }
    evl->add_option("--seed", ef.seed, "Clustering seed (defaults to the run seed)");

    GradcheckFlags gf;
    auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of every backward pass");
    gc->add_option("--instances", gf.instances, "Random instances per check");
    gc->add_option("--seed", gf.seed);
    gc->add_option("--only", gf.only, "Restrict to these checks")->check(CLI::IsMember(gradcheck_names()));
    gc->add_option("--out", gf.out, "Output directory");

    ReportFlags rf;
    auto* rep = app.add_subcommand("report", "Tabulate metrics across training runs");
    rep->add_option("runs", rf.runs, "Training run directories")->required();
    rep->add_option("--out", rf.out, "Output directory");

    if (!args.empty() && !args[0].starts_with("-") && !app.get_subcommand_no_throw(args[0])) {
        return fail(err, ExitCode::usage, "usage", "unknown subcommand '" + args[0] + "' (see --help)");
    }

    std::vector<std::string> argv_store{"wsmt"};
    argv_store.insert(argv_store.end(), args.begin(), args.end());
    std::vector<const char*> argv;
    for (const auto& a : argv_store) argv.push_back(a.c_str());

    try {
        app.parse(int(argv.size()), argv.data());
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        return fail(err, ExitCode::usage, "usage", e.what());
    }

    try {
        if (synth->parsed()) return run_synth(sf, out);
        if (trn->parsed()) return run_train(tf, out);
        if (evl->parsed()) return run_eval(ef, out);
        if (emb->parsed()) return run_embed(mf, out);
        if (gc->parsed()) return run_gradcheck_cmd(gf, out);
        if (rep->parsed()) return run_report(rf, out);
        return fail(err, ExitCode::usage, "usage", "no subcommand given");
    } catch (const CheckFailed& e) {
        return fail(err, ExitCode::check_failed, "check failed", e.what());
    } catch (const BusyError& e) {
        return fail(err, ExitCode::busy, "busy", e.what());
    } catch (const NumericError& e) {
        return fail(err, ExitCode::numeric, "numeric error",
                    std::string(e.what()) + " (try a smaller --lr or --batch-size)");
    } catch (const InputError& e) {
        return fail(err, ExitCode::input, "input error", e.what());
    } catch (const DataError& e) {
        return fail(err, ExitCode::input, "input error", e.what());
    } catch (const CheckpointError& e) {
        return fail(err, ExitCode::input, "input error", e.what());
    } catch (const fs::filesystem_error& e) {
        return fail(err, ExitCode::input, "input error", e.what());
    } catch (const nlohmann::json::exception& e) {
        return fail(err, ExitCode::config, "invalid config", e.what());
    } catch (const std::invalid_argument& e) {
        return fail(err, ExitCode::config, "invalid config", e.what());
    } catch (const std::exception& e) {
        return fail(err, ExitCode::internal, "internal error", e.what());
    }
}

}  // namespace wsmt
