#include "wsmt/json_io.hpp"

namespace wsmt {

using nlohmann::json;

namespace {

template <typename T>
void read_opt(const json& j, const char* key, T& out) {
    if (auto it = j.find(key); it != j.end()) it->get_to(out);
}

}  // namespace

void to_json(json& j, const HeadSpec& h) {
    j = json{{"task", std::string(task_name(h.task))}, {"embedding_dim", h.embedding_dim}};
}

void from_json(const json& j, HeadSpec& h) {
    h.task = parse_task(j.at("task").get<std::string>());
    read_opt(j, "embedding_dim", h.embedding_dim);
}

void to_json(json& j, const NetworkConfig& c) {
    j = json{{"input_channels", c.input_channels},
             {"blocks", c.blocks},
             {"feature_maps", c.feature_maps},
             {"kernel_size", c.kernel_size},
             {"dilations", c.dilations},
             {"pool_between_blocks", c.pool_between_blocks},
             {"heads", c.heads}};
}

void from_json(const json& j, NetworkConfig& c) {
    read_opt(j, "input_channels", c.input_channels);
    read_opt(j, "blocks", c.blocks);
    read_opt(j, "feature_maps", c.feature_maps);
    read_opt(j, "kernel_size", c.kernel_size);
    read_opt(j, "dilations", c.dilations);
    read_opt(j, "pool_between_blocks", c.pool_between_blocks);
    read_opt(j, "heads", c.heads);
}

void to_json(json& j, const LossConfig& c) {
    j = json{{"margin", c.margin},
             {"weights",
              {{"act", c.weights[0]}, {"pers", c.weights[1]}, {"attr", c.weights[2]}}}};
}

void from_json(const json& j, LossConfig& c) {
    read_opt(j, "margin", c.margin);
    if (auto it = j.find("weights"); it != j.end()) {
        for (auto& [name, value] : it->items()) c.weights[task_index(parse_task(name))] = value.get<double>();
    }
}

void to_json(json& j, const TrainConfig& c) {
    j = json{{"lr0", c.lr0},
             {"decay_rate", c.decay_rate},
             {"decay_every", c.decay_every},
             {"batch_size", c.batch_size},
             {"max_epochs", c.max_epochs},
             {"patience", c.patience},
             {"pairs_per_epoch", c.pairs_per_epoch},
             {"validation_pairs", c.validation_pairs},
             {"loss", c.loss},
             {"mode", mode_name(c.mode)},
             {"seed", c.seed}};
}

void from_json(const json& j, TrainConfig& c) {
    read_opt(j, "lr0", c.lr0);
    read_opt(j, "decay_rate", c.decay_rate);
    read_opt(j, "decay_every", c.decay_every);
    read_opt(j, "batch_size", c.batch_size);
    read_opt(j, "max_epochs", c.max_epochs);
    read_opt(j, "patience", c.patience);
    read_opt(j, "pairs_per_epoch", c.pairs_per_epoch);
    read_opt(j, "validation_pairs", c.validation_pairs);
    read_opt(j, "loss", c.loss);
    if (auto it = j.find("mode"); it != j.end()) c.mode = parse_mode(it->get<std::string>());
    read_opt(j, "seed", c.seed);
}

void to_json(json& j, const SynthConfig& c) {
    j = json{{"persons", c.persons},   {"activities", c.activities}, {"attribute_classes", c.attribute_classes},
             {"windows_per_cell", c.windows_per_cell}, {"channels", c.channels},
             {"length", c.length},     {"noise", c.noise},           {"seed", c.seed}};
}

void from_json(const json& j, SynthConfig& c) {
    read_opt(j, "persons", c.persons);
    read_opt(j, "activities", c.activities);
    read_opt(j, "attribute_classes", c.attribute_classes);
    read_opt(j, "windows_per_cell", c.windows_per_cell);
    read_opt(j, "channels", c.channels);
    read_opt(j, "length", c.length);
    read_opt(j, "noise", c.noise);
    read_opt(j, "seed", c.seed);
}

void to_json(json& j, const EpochRecord& r) {
    j = json{{"epoch", r.epoch},
             {"train_loss", r.train_loss},
             {"validation_loss", r.validation_loss},
             {"validation_task_loss",
              {{"act", r.validation_task_loss[0]},
               {"pers", r.validation_task_loss[1]},
               {"attr", r.validation_task_loss[2]}}},
             {"lr", r.lr},
             {"steps", r.steps},
             {"seconds", r.seconds}};
}

void to_json(json& j, const KMeansOptions& o) {
    j = json{{"max_iters", o.max_iters}, {"restarts", o.restarts}, {"tolerance", o.tolerance}};
}

void from_json(const json& j, KMeansOptions& o) {
    read_opt(j, "max_iters", o.max_iters);
    read_opt(j, "restarts", o.restarts);
    read_opt(j, "tolerance", o.tolerance);
}

void to_json(json& j, const ClassScore& c) {
    j = json{{"class", c.cls},         {"tp", c.tp},         {"fp", c.fp}, {"fn", c.fn},
             {"precision", c.precision}, {"recall", c.recall}, {"f1", c.f1}};
}

void to_json(json& j, const Metrics& m) {
    json matching = json::object();
    for (const auto& [cluster, cls] : m.matching) matching[std::to_string(cluster)] = cls;
    j = json{{"task", std::string(task_name(m.task))},
             {"k", m.k},
             {"samples", m.samples},
             {"accuracy", m.accuracy},
             {"mean_f1", m.mean_f1},
             {"matching", matching},
             {"classes", m.classes}};
}

DatasetConfig dataset_config_from_json(const json& j, const std::filesystem::path& base_dir) {
    DatasetConfig c;
    if (auto it = j.find("preset"); it != j.end()) c = dataset_preset(it->get<std::string>());
    read_opt(j, "name", c.name);
    if (auto it = j.find("paths"); it != j.end()) {
        c.paths.clear();
        for (const auto& p : *it) {
            std::filesystem::path path = p.get<std::string>();
            c.paths.push_back(path.is_relative() ? base_dir / path : path);
        }
    }
    read_opt(j, "sample_rate_hz", c.schema.sample_rate_hz);
    read_opt(j, "downsample", c.downsample);
    read_opt(j, "window_seconds", c.window_seconds);
    read_opt(j, "step_seconds", c.step_seconds);
    read_opt(j, "channels", c.schema.channels);
    if (auto it = j.find("delimiter"); it != j.end()) {
        const auto d = it->get<std::string>();
        if (d.size() != 1) throw std::invalid_argument("delimiter must be a single character");
        c.schema.delimiter = d[0];
    }
    if (auto it = j.find("label_columns"); it != j.end()) {
        read_opt(*it, "activity", c.schema.activity_column);
        read_opt(*it, "person", c.schema.person_column);
        read_opt(*it, "attribute", c.schema.attribute_column);
    }
    if (auto it = j.find("activity_map"); it != j.end()) {
        c.activity_map.clear();
        for (auto& [from, to] : it->items()) c.activity_map[std::stoi(from)] = to.get<int>();
    }
    read_opt(j, "split", c.split);
    return c;
}

json dataset_config_to_json(const DatasetConfig& c) {
    json paths = json::array();
    for (const auto& p : c.paths) paths.push_back(p.string());
    json amap = json::object();
    for (const auto& [from, to] : c.activity_map) amap[std::to_string(from)] = to;
    return json{{"name", c.name},
                {"paths", paths},
                {"sample_rate_hz", c.schema.sample_rate_hz},
                {"downsample", c.downsample},
                {"window_seconds", c.window_seconds},
                {"step_seconds", c.step_seconds},
                {"channels", c.schema.channels},
                {"delimiter", std::string(1, c.schema.delimiter)},
                {"label_columns",
                 {{"activity", c.schema.activity_column},
                  {"person", c.schema.person_column},
                  {"attribute", c.schema.attribute_column}}},
                {"activity_map", amap},
                {"split", c.split}};
}

}  // namespace wsmt
