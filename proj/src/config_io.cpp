#include "ka/config_io.hpp"

#include <optional>
#include <set>
#include <string>

#include "ka/error.hpp"

namespace ka {

namespace {

class Reader {
 public:
  Reader(const json& j, std::string context) : j_(j), context_(std::move(context)) {
    require(j.is_object(), context_ + ": expected a JSON object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw Error(context_ + "." + key + ": " + e.what());
    }
  }

  template <typename T>
  void get(const char* key, std::optional<T>& out) {
    T value{};
    seen_.insert(key);
    if (!j_.contains(key) || j_.at(key).is_null()) return;
    get(key, value);
    out = std::move(value);
  }

  template <typename E, typename Parse>
  void get_enum(const char* key, E& out, Parse&& parse) {
    std::string s;
    seen_.insert(key);
    if (!j_.contains(key)) return;
    require(j_.at(key).is_string(), context_ + "." + key + ": expected a string");
    out = parse(j_.at(key).get<std::string>());
  }

  void finish() const {
    for (const auto& [k, _] : j_.items())
      require(seen_.count(k) > 0, context_ + ": unknown key '" + k + "'");
  }

 private:
  const json& j_;
  std::string context_;
  std::set<std::string> seen_;
};

template <typename E>
E parse_enum(const std::string& s, std::initializer_list<std::pair<const char*, E>> table, const char* what) {
  for (const auto& [name, value] : table)
    if (s == name) return value;
  throw Error(std::string("unknown ") + what + " '" + s + "'");
}

const char* name_of(ConsistencyDirection d) { return d == ConsistencyDirection::both ? "both" : "left_from_right"; }
const char* name_of(SupervisedSides s) {
  switch (s) {
    case SupervisedSides::left:
      return "left";
    case SupervisedSides::right:
      return "right";
    default:
      return "both";
  }
}
const char* name_of(TrainMode m) {
  switch (m) {
    case TrainMode::single:
      return "single";
    case TrainMode::image_augmentation:
      return "image_augmentation";
    default:
      return "dual";
  }
}
const char* name_of(DataUse d) {
  switch (d) {
    case DataUse::a_only:
      return "a_only";
    case DataUse::b_only:
      return "b_only";
    default:
      return "both";
  }
}
const char* name_of(SelectionRule r) { return r == SelectionRule::left ? "left" : "best_of_two"; }

}  // namespace

void to_json(json& j, const ImageSize& v) { j = json{{"height", v.height}, {"width", v.width}}; }
void from_json(const json& j, ImageSize& v) {
  Reader r(j, "image_size");
  r.get("height", v.height);
  r.get("width", v.width);
  r.finish();
}

void to_json(json& j, const ArchConfig& v) {
  j = json{{"trunk", to_string(v.trunk)},
           {"feature_dim", v.feature_dim},
           {"num_ids", v.num_ids},
           {"num_attributes", v.num_attributes},
           {"dataset_head", v.dataset_head},
           {"pretrained", v.pretrained},
           {"pretrained_path", v.pretrained_path},
           {"reid_enabled", v.reid_enabled},
           {"par_enabled", v.par_enabled},
           {"in_channels", v.in_channels},
           {"input_size", v.input_size},
           {"trunk_width", v.trunk_width},
           {"head_channels", v.head_channels},
           {"head_hidden", v.head_hidden},
           {"normalize_features", v.normalize_features}};
}

void from_json(const json& j, ArchConfig& v) {
  Reader r(j, "arch");
  r.get_enum("trunk", v.trunk, parse_trunk);
  r.get("feature_dim", v.feature_dim);
  r.get("num_ids", v.num_ids);
  r.get("num_attributes", v.num_attributes);
  r.get("dataset_head", v.dataset_head);
  r.get("pretrained", v.pretrained);
  r.get("pretrained_path", v.pretrained_path);
  r.get("reid_enabled", v.reid_enabled);
  r.get("par_enabled", v.par_enabled);
  r.get("in_channels", v.in_channels);
  r.get("input_size", v.input_size);
  r.get("trunk_width", v.trunk_width);
  r.get("head_channels", v.head_channels);
  r.get("head_hidden", v.head_hidden);
  r.get("normalize_features", v.normalize_features);
  r.finish();
}

void to_json(json& j, const LossConfig& v) {
  j = json{{"lambda", v.lambda},
           {"triplet_margin", v.triplet_margin},
           {"dice_smooth", v.dice_smooth},
           {"include_labeled_consistency", v.include_labeled_consistency},
           {"stop_gradient_pseudo", v.stop_gradient_pseudo},
           {"use_triplet", v.use_triplet},
           {"direction", name_of(v.direction)},
           {"supervised", name_of(v.supervised)}};
}

void from_json(const json& j, LossConfig& v) {
  Reader r(j, "loss");
  r.get("lambda", v.lambda);
  r.get("triplet_margin", v.triplet_margin);
  r.get("dice_smooth", v.dice_smooth);
  r.get("include_labeled_consistency", v.include_labeled_consistency);
  r.get("stop_gradient_pseudo", v.stop_gradient_pseudo);
  r.get("use_triplet", v.use_triplet);
  r.get_enum("direction", v.direction, [](const std::string& s) {
    return parse_enum<ConsistencyDirection>(
        s, {{"both", ConsistencyDirection::both}, {"left_from_right", ConsistencyDirection::left_from_right}},
        "consistency direction");
  });
  r.get_enum("supervised", v.supervised, [](const std::string& s) {
    return parse_enum<SupervisedSides>(
        s, {{"both", SupervisedSides::both}, {"left", SupervisedSides::left}, {"right", SupervisedSides::right}},
        "supervised sides");
  });
  r.finish();
}

void to_json(json& j, const AugmentConfig& v) {
  j = json{{"flip_prob", v.flip_prob},         {"crop_pad", v.crop_pad},
           {"brightness", v.brightness},       {"contrast", v.contrast},
           {"erase_prob", v.erase_prob},       {"erase_min_area", v.erase_min_area},
           {"erase_max_area", v.erase_max_area}};
}

void from_json(const json& j, AugmentConfig& v) {
  Reader r(j, "augment");
  r.get("flip_prob", v.flip_prob);
  r.get("crop_pad", v.crop_pad);
  r.get("brightness", v.brightness);
  r.get("contrast", v.contrast);
  r.get("erase_prob", v.erase_prob);
  r.get("erase_min_area", v.erase_min_area);
  r.get("erase_max_area", v.erase_max_area);
  r.finish();
}

void to_json(json& j, const EvalOptions& v) {
  j = json{{"par_threshold", v.par_threshold}, {"batch_size", v.batch_size}};
}

void from_json(const json& j, EvalOptions& v) {
  Reader r(j, "eval");
  r.get("par_threshold", v.par_threshold);
  r.get("batch_size", v.batch_size);
  r.finish();
}

void to_json(json& j, const TrainConfig& v) {
  j = json{{"epochs", v.epochs},
           {"batch_size", v.batch_size},
           {"lr0", v.lr0},
           {"optimizer", "adam"},
           {"seed", v.seed},
           {"loss", v.loss},
           {"arch", v.arch},
           {"eval_every", v.eval_every},
           {"ratio_a", v.ratio_a},
           {"mode", name_of(v.mode)},
           {"data", name_of(v.data)},
           {"compute_consistency", v.compute_consistency},
           {"selection", name_of(v.selection)},
           {"val_fraction", v.val_fraction},
           {"adam_beta1", v.adam_beta1},
           {"adam_beta2", v.adam_beta2},
           {"adam_eps", v.adam_eps},
           {"augment", v.augment},
           {"eval", v.eval}};
}

void from_json(const json& j, TrainConfig& v) {
  Reader r(j, "train");
  r.get("epochs", v.epochs);
  r.get("batch_size", v.batch_size);
  r.get("lr0", v.lr0);
  r.get_enum("optimizer", v.optimizer, [](const std::string& s) {
    return parse_enum<OptimizerKind>(s, {{"adam", OptimizerKind::adam}}, "optimizer");
  });
  r.get("seed", v.seed);
  r.get("loss", v.loss);
  r.get("arch", v.arch);
  r.get("eval_every", v.eval_every);
  r.get("ratio_a", v.ratio_a);
  r.get_enum("mode", v.mode, [](const std::string& s) {
    return parse_enum<TrainMode>(
        s, {{"dual", TrainMode::dual}, {"single", TrainMode::single}, {"image_augmentation", TrainMode::image_augmentation}},
        "train mode");
  });
  r.get_enum("data", v.data, [](const std::string& s) {
    return parse_enum<DataUse>(s, {{"both", DataUse::both}, {"a_only", DataUse::a_only}, {"b_only", DataUse::b_only}},
                               "data use");
  });
  r.get("compute_consistency", v.compute_consistency);
  r.get_enum("selection", v.selection, [](const std::string& s) {
    return parse_enum<SelectionRule>(s, {{"best_of_two", SelectionRule::best_of_two}, {"left", SelectionRule::left}},
                                     "selection rule");
  });
  r.get("val_fraction", v.val_fraction);
  r.get("adam_beta1", v.adam_beta1);
  r.get("adam_beta2", v.adam_beta2);
  r.get("adam_eps", v.adam_eps);
  r.get("augment", v.augment);
  r.get("eval", v.eval);
  r.finish();
}

void to_json(json& j, const LossReport& v) {
  j = json{{"sup_reid", v.sup_reid},         {"sup_par", v.sup_par},
           {"semi_reid", v.semi_reid},       {"semi_par", v.semi_par},
           {"semi_unlabeled", v.semi_unlabeled}, {"semi_labeled", v.semi_labeled},
           {"total", v.total}};
}

void from_json(const json& j, LossReport& v) {
  Reader r(j, "loss_report");
  r.get("sup_reid", v.sup_reid);
  r.get("sup_par", v.sup_par);
  r.get("semi_reid", v.semi_reid);
  r.get("semi_par", v.semi_par);
  r.get("semi_unlabeled", v.semi_unlabeled);
  r.get("semi_labeled", v.semi_labeled);
  r.get("total", v.total);
  r.finish();
}

void to_json(json& j, const StepRecord& v) {
  j = json{{"step", v.step}, {"epoch", v.epoch}, {"lr", v.lr}, {"loss", v.loss}};
}

void from_json(const json& j, StepRecord& v) {
  Reader r(j, "step_record");
  r.get("step", v.step);
  r.get("epoch", v.epoch);
  r.get("lr", v.lr);
  r.get("loss", v.loss);
  r.finish();
}

void to_json(json& j, const ReidMetrics& v) {
  json cmc = json::object();
  for (const auto& [k, val] : v.cmc) cmc[std::to_string(k)] = val;
  j = json{{"map", v.map}, {"cmc", cmc}, {"num_queries", v.num_queries}};
}

void from_json(const json& j, ReidMetrics& v) {
  Reader r(j, "reid_metrics");
  r.get("map", v.map);
  r.get("num_queries", v.num_queries);
  json cmc = json::object();
  r.get("cmc", cmc);
  v.cmc.clear();
  for (const auto& [k, val] : cmc.items()) v.cmc[std::stoi(k)] = val.get<double>();
  r.finish();
}

void to_json(json& j, const ParMetrics& v) {
  j = json{{"ma", v.ma}, {"precision", v.precision}, {"recall", v.recall}, {"f1", v.f1}};
}

void from_json(const json& j, ParMetrics& v) {
  Reader r(j, "par_metrics");
  r.get("ma", v.ma);
  r.get("precision", v.precision);
  r.get("recall", v.recall);
  r.get("f1", v.f1);
  r.finish();
}

void to_json(json& j, const MetricsReport& v) {
  j = json::object();
  if (v.reid) j["reid"] = *v.reid;
  if (v.par) j["par"] = *v.par;
}

void from_json(const json& j, MetricsReport& v) {
  Reader r(j, "metrics");
  v = {};
  if (j.contains("reid")) v.reid = j.at("reid").get<ReidMetrics>();
  if (j.contains("par")) v.par = j.at("par").get<ParMetrics>();
  json unused;
  r.get("reid", unused);
  r.get("par", unused);
  r.finish();
}

void to_json(json& j, const ValRecord& v) {
  j = json{{"epoch", v.epoch}, {"left", v.left}};
  if (v.right) j["right"] = *v.right;
}

void from_json(const json& j, ValRecord& v) {
  Reader r(j, "val_record");
  v = {};
  r.get("epoch", v.epoch);
  r.get("left", v.left);
  if (j.contains("right")) v.right = j.at("right").get<MetricsReport>();
  json unused;
  r.get("right", unused);
  r.finish();
}

void to_json(json& j, const SyntheticOptions& v) {
  j = json{{"num_cameras", v.num_cameras},
           {"palette_size", v.palette_size},
           {"noise_stddev", v.noise_stddev},
           {"marker_contrast", v.marker_contrast},
           {"max_shift", v.max_shift}};
}

void from_json(const json& j, SyntheticOptions& v) {
  Reader r(j, "synthetic options");
  r.get("num_cameras", v.num_cameras);
  r.get("palette_size", v.palette_size);
  r.get("noise_stddev", v.noise_stddev);
  r.get("marker_contrast", v.marker_contrast);
  r.get("max_shift", v.max_shift);
  r.finish();
}

void to_json(json& j, const SyntheticSource& v) {
  j = json{{"kind", "synthetic"},
           {"num_ids", v.num_ids},
           {"num_attributes", v.num_attributes},
           {"samples_per_dataset", v.samples_per_dataset},
           {"image_size", v.image_size},
           {"seed", v.seed},
           {"test_fraction", v.test_fraction},
           {"options", v.options}};
}

void from_json(const json& j, SyntheticSource& v) {
  Reader r(j, "synthetic");
  std::string kind;
  r.get("kind", kind);
  r.get("num_ids", v.num_ids);
  r.get("num_attributes", v.num_attributes);
  r.get("samples_per_dataset", v.samples_per_dataset);
  r.get("image_size", v.image_size);
  r.get("seed", v.seed);
  r.get("test_fraction", v.test_fraction);
  r.get("options", v.options);
  r.finish();
}

void to_json(json& j, const ManifestSource& v) {
  j = json{{"kind", "manifests"},
           {"a_train", v.a_train.string()},
           {"b_train", v.b_train.string()},
           {"a_test", v.a_test.string()},
           {"b_test", v.b_test.string()}};
  if (v.resize) j["resize"] = *v.resize;
}

void from_json(const json& j, ManifestSource& v) {
  Reader r(j, "manifests");
  std::string kind, a_train, b_train, a_test, b_test;
  r.get("kind", kind);
  r.get("a_train", a_train);
  r.get("b_train", b_train);
  r.get("a_test", a_test);
  r.get("b_test", b_test);
  r.get("resize", v.resize);
  r.finish();
  require(!a_train.empty() && !b_train.empty() && !a_test.empty() && !b_test.empty(),
          "manifests: a_train, b_train, a_test and b_test are required");
  v.a_train = a_train;
  v.b_train = b_train;
  v.a_test = a_test;
  v.b_test = b_test;
}

void to_json(json& j, const ExperimentSpec& v) {
  j = json{{"name", to_string(v.name)}, {"train", v.train}, {"output_dir", v.output_dir.string()}};
  std::visit([&](const auto& src) { j["data"] = src; }, v.data);
}

void from_json(const json& j, ExperimentSpec& v) {
  Reader r(j, "spec");
  r.get_enum("name", v.name, parse_experiment);
  r.get("train", v.train);
  std::string out = v.output_dir.string();
  r.get("output_dir", out);
  v.output_dir = out;
  json data;
  r.get("data", data);
  r.finish();
  require(!data.is_null(), "spec: missing data source");
  require(data.is_object() && data.contains("kind") && data["kind"].is_string(),
          "spec.data: expected an object with \"kind\": \"synthetic\" or \"manifests\"");
  const auto kind = data["kind"].get<std::string>();
  if (kind == "synthetic")
    v.data = data.get<SyntheticSource>();
  else if (kind == "manifests")
    v.data = data.get<ManifestSource>();
  else
    throw Error("spec.data: unknown kind '" + kind + "'");
}

}  // namespace ka
