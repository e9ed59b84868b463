#pragma once

// JSON mapping of configuration and report types. Readers accept partial
// objects: missing keys keep the C++ defaults, unknown keys are rejected.

#include <json.hpp>

#include "ka/eval.hpp"
#include "ka/experiments.hpp"
#include "ka/losses.hpp"
#include "ka/model.hpp"
#include "ka/trainer.hpp"

namespace ka {

using json = nlohmann::json;

void to_json(json& j, const ImageSize& v);
void from_json(const json& j, ImageSize& v);
void to_json(json& j, const ArchConfig& v);
void from_json(const json& j, ArchConfig& v);
void to_json(json& j, const LossConfig& v);
void from_json(const json& j, LossConfig& v);
void to_json(json& j, const AugmentConfig& v);
void from_json(const json& j, AugmentConfig& v);
void to_json(json& j, const EvalOptions& v);
void from_json(const json& j, EvalOptions& v);
void to_json(json& j, const TrainConfig& v);
void from_json(const json& j, TrainConfig& v);

void to_json(json& j, const LossReport& v);
void from_json(const json& j, LossReport& v);
void to_json(json& j, const StepRecord& v);
void from_json(const json& j, StepRecord& v);
void to_json(json& j, const ReidMetrics& v);
void from_json(const json& j, ReidMetrics& v);
void to_json(json& j, const ParMetrics& v);
void from_json(const json& j, ParMetrics& v);
void to_json(json& j, const MetricsReport& v);
void from_json(const json& j, MetricsReport& v);
void to_json(json& j, const ValRecord& v);
void from_json(const json& j, ValRecord& v);

void to_json(json& j, const SyntheticOptions& v);
void from_json(const json& j, SyntheticOptions& v);
void to_json(json& j, const SyntheticSource& v);
void from_json(const json& j, SyntheticSource& v);
void to_json(json& j, const ManifestSource& v);
void from_json(const json& j, ManifestSource& v);
void to_json(json& j, const ExperimentSpec& v);
void from_json(const json& j, ExperimentSpec& v);

}  // namespace ka
