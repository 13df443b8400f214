#pragma once

// JSON mappings for configs and run records (checkpoint headers, manifests,
// dataset files). Missing keys keep their defaults.

#include <json.hpp>

#include "wsmt/data.hpp"
#include "wsmt/eval.hpp"
#include "wsmt/siamese.hpp"
#include "wsmt/train.hpp"

namespace wsmt {

void to_json(nlohmann::json& j, const HeadSpec& h);
void from_json(const nlohmann::json& j, HeadSpec& h);

void to_json(nlohmann::json& j, const NetworkConfig& c);
void from_json(const nlohmann::json& j, NetworkConfig& c);

void to_json(nlohmann::json& j, const LossConfig& c);
void from_json(const nlohmann::json& j, LossConfig& c);

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

void to_json(nlohmann::json& j, const SynthConfig& c);
void from_json(const nlohmann::json& j, SynthConfig& c);

void to_json(nlohmann::json& j, const EpochRecord& r);

void to_json(nlohmann::json& j, const KMeansOptions& o);
void from_json(const nlohmann::json& j, KMeansOptions& o);

void to_json(nlohmann::json& j, const ClassScore& c);
void to_json(nlohmann::json& j, const Metrics& m);

// Relative paths in `j` resolve against `base_dir`. A "preset" key seeds the
// config from a named preset before the remaining keys apply.
DatasetConfig dataset_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
nlohmann::json dataset_config_to_json(const DatasetConfig& c);

}  // namespace wsmt
