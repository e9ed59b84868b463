#include "ka/experiments.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "ka/config_io.hpp"
#include "ka/serialize.hpp"

namespace ka {

namespace {

struct NameEntry {
  ExperimentName name;
  const char* text;
};

constexpr NameEntry kNames[] = {
    {ExperimentName::reid_only, "reid_only"},         {ExperimentName::par_only, "par_only"},
    {ExperimentName::reid_ssl, "reid_ssl"},           {ExperimentName::par_ssl, "par_ssl"},
    {ExperimentName::mtl_baseline, "mtl_baseline"},   {ExperimentName::ka, "ka"},
    {ExperimentName::ka_imgaug, "ka_imgaug"},         {ExperimentName::ka_netaug, "ka_netaug"},
    {ExperimentName::ka_netaug_tri, "ka_netaug_tri"},
};

}  // namespace

const char* to_string(ExperimentName name) {
  for (const auto& e : kNames)
    if (e.name == name) return e.text;
  return "?";
}

ExperimentName parse_experiment(const std::string& name) {
  for (const auto& e : kNames)
    if (name == e.text) return e.name;
  throw Error("unknown experiment name '" + name + "'");
}

const std::vector<ExperimentName>& all_experiments() {
  static const std::vector<ExperimentName> names = [] {
    std::vector<ExperimentName> v;
    for (const auto& e : kNames) v.push_back(e.name);
    return v;
  }();
  return names;
}

// ---------------------------------------------------------------------------
// Data
// ---------------------------------------------------------------------------

ExperimentData load_experiment_data(const DataSource& source) {
  ExperimentData out;
  if (const auto* syn = std::get_if<SyntheticSource>(&source)) {
    require(syn->test_fraction > 0.0 && syn->test_fraction < 1.0, "synthetic: test_fraction must lie in (0, 1)");
    auto [a, b] = make_synthetic_pair(syn->num_ids, syn->num_attributes, syn->samples_per_dataset, syn->image_size,
                                      syn->seed, syn->options);
    const auto n_test = static_cast<std::size_t>(
        std::lround(syn->test_fraction * static_cast<double>(syn->samples_per_dataset)));
    require(n_test >= 2 && n_test < syn->samples_per_dataset, "synthetic: test split must leave both halves non-trivial");
    std::tie(out.train_a, out.test_a) = split_tail(a, n_test);
    std::tie(out.train_b, out.test_b) = split_tail(b, n_test);
    return out;
  }
  const auto& man = std::get<ManifestSource>(source);
  LoadOptions opts;
  opts.resize = man.resize;
  out.train_a = load_dataset(man.a_train, opts);
  out.train_b = load_dataset(man.b_train, opts);
  out.test_a = load_dataset(man.a_test, opts);
  out.test_b = load_dataset(man.b_test, opts);
  require(out.train_a.task_labeled == Task::T1 && out.test_a.task_labeled == Task::T1,
          "manifests: a_train and a_test must be reID manifests");
  require(out.train_b.task_labeled == Task::T2 && out.test_b.task_labeled == Task::T2,
          "manifests: b_train and b_test must be attribute manifests");
  require(out.test_b.num_attributes == out.train_b.num_attributes, "manifests: attribute count differs between splits");
  return out;
}

// ---------------------------------------------------------------------------
// Name -> trainer configuration
// ---------------------------------------------------------------------------

TrainConfig configure(const ExperimentSpec& spec, const ExperimentData& data) {
  TrainConfig cfg = spec.train;
  const Image& probe = !data.train_a.empty() ? data.train_a.samples.front().image : data.train_b.samples.front().image;
  cfg.arch.input_size = {probe.height, probe.width};
  cfg.arch.in_channels = probe.channels;
  cfg.arch.num_ids = data.train_a.num_ids;
  cfg.arch.num_attributes = data.train_b.num_attributes;
  cfg.arch.reid_enabled = true;
  cfg.arch.par_enabled = true;
  cfg.mode = TrainMode::dual;
  cfg.data = DataUse::both;
  cfg.compute_consistency = true;
  cfg.selection = SelectionRule::best_of_two;

  switch (spec.name) {
    case ExperimentName::reid_only:
      cfg.mode = TrainMode::single;
      cfg.data = DataUse::a_only;
      cfg.arch.par_enabled = false;
      cfg.arch.num_attributes = 0;
      cfg.compute_consistency = false;
      cfg.selection = SelectionRule::left;
      break;
    case ExperimentName::par_only:
      cfg.mode = TrainMode::single;
      cfg.data = DataUse::b_only;
      cfg.arch.reid_enabled = false;
      cfg.arch.num_ids = 0;
      cfg.compute_consistency = false;
      cfg.selection = SelectionRule::left;
      break;
    case ExperimentName::reid_ssl:
      cfg.arch.par_enabled = false;
      cfg.arch.num_attributes = 0;
      cfg.loss.include_labeled_consistency = false;
      break;
    case ExperimentName::par_ssl:
      cfg.arch.reid_enabled = false;
      cfg.arch.num_ids = 0;
      cfg.loss.include_labeled_consistency = false;
      break;
    case ExperimentName::mtl_baseline:
      cfg.mode = TrainMode::single;
      cfg.compute_consistency = false;
      cfg.selection = SelectionRule::left;
      break;
    case ExperimentName::ka:
    case ExperimentName::ka_netaug_tri:
      break;
    case ExperimentName::ka_netaug:
      cfg.loss.use_triplet = false;
      break;
    case ExperimentName::ka_imgaug:
      cfg.mode = TrainMode::image_augmentation;
      cfg.loss.supervised = SupervisedSides::right;
      cfg.loss.direction = ConsistencyDirection::left_from_right;
      cfg.selection = SelectionRule::left;
      break;
  }
  if (!cfg.arch.reid_enabled) cfg.arch.dataset_head = false;
  cfg.validate();
  return cfg;
}

// ---------------------------------------------------------------------------
// Running
// ---------------------------------------------------------------------------

std::string ReportRow::digest() const {
  json j{{"name", name}, {"config_digest", config_digest}};
  if (reid) j["reid"] = *reid;
  if (par) j["par"] = *par;
  if (seed) j["seed"] = *seed;
  return fnv1a_hex(j.dump());
}

ReportRow run_experiment(const ExperimentSpec& spec) { return run_experiment(spec, load_experiment_data(spec.data)); }

ReportRow run_experiment(const ExperimentSpec& spec, const ExperimentData& data) {
  const TrainConfig cfg = configure(spec, data);
  Trainer trainer(data.train_a, data.train_b, cfg);

  std::ofstream log;
  if (!spec.output_dir.empty()) {
    std::filesystem::create_directories(spec.output_dir);
    log.open(spec.output_dir / "metrics.jsonl");
    require(log.good(), "cannot write " + (spec.output_dir / "metrics.jsonl").string());
    trainer.set_step_callback([&log](const StepRecord& r) { log << json(r).dump() << '\n'; });
  }
  TrainedRun run = trainer.finish();

  const MetricsReport metrics = evaluate_model(run.best_model, &data.test_a, nullptr, &data.test_b, cfg.eval);
  ExperimentSpec resolved = spec;
  resolved.train = cfg;
  ReportRow row;
  row.name = to_string(spec.name);
  row.reid = metrics.reid;
  row.par = metrics.par;
  row.config_json = json(resolved).dump();
  row.config_digest = fnv1a_hex(json(cfg).dump());
  row.seed = cfg.seed;

  if (!spec.output_dir.empty()) {
    trainer.save_checkpoint(spec.output_dir / "checkpoint.bin", run.best_side);
    json val = run.val_history;
    std::ofstream(spec.output_dir / "validation.json") << val.dump(2) << '\n';
    emit_report({row}, spec.output_dir / "report.csv");
  }
  return row;
}

ExperimentSpec desk_scale_spec() {
  ExperimentSpec spec;
  spec.name = ExperimentName::ka;
  SyntheticSource syn;
  syn.options.marker_contrast = 0.9;
  spec.data = syn;
  TrainConfig& t = spec.train;
  t.epochs = 24;
  t.batch_size = 32;
  t.lr0 = 1e-3;
  t.eval_every = 8;
  t.arch.trunk = TrunkKind::tiny_conv;
  // synthetic attribute markers sit in left/right columns, so a flip would swap labels
  t.augment.flip_prob = 0.0;
  return spec;
}

std::vector<ReportRow> run_grid(const GridOptions& options) {
  require(!options.names.empty(), "grid: no experiments");
  require(!options.seeds.empty(), "grid: no seeds");
  const ExperimentData data = load_experiment_data(options.base.data);
  std::vector<ReportRow> rows;
  for (const auto name : options.names) {
    for (const auto seed : options.seeds) {
      ExperimentSpec spec = options.base;
      spec.name = name;
      spec.train.seed = seed;
      if (!options.base.output_dir.empty())
        spec.output_dir = options.base.output_dir / to_string(name) / ("seed_" + std::to_string(seed));
      rows.push_back(run_experiment(spec, data));
      if (options.on_row) options.on_row(rows.back());
    }
  }
  return rows;
}

std::vector<ReportRow> mean_rows(const std::vector<ReportRow>& rows) {
  std::vector<std::string> order;
  std::map<std::string, std::vector<const ReportRow*>> groups;
  for (const auto& r : rows) {
    if (!groups.count(r.name)) order.push_back(r.name);
    groups[r.name].push_back(&r);
  }
  std::vector<ReportRow> out;
  for (const auto& name : order) {
    const auto& g = groups[name];
    const double n = static_cast<double>(g.size());
    ReportRow m;
    m.name = name;
    m.config_json = g.front()->config_json;
    std::string digests;
    for (const auto* r : g) digests += r->config_digest;
    m.config_digest = fnv1a_hex(digests);
    if (g.front()->reid) {
      ReidMetrics acc;
      for (const auto* r : g) {
        require(r->reid.has_value(), "mean_rows: inconsistent reID blocks for " + name);
        acc.map += r->reid->map / n;
        for (const auto& [k, v] : r->reid->cmc) acc.cmc[k] += v / n;
        acc.num_queries += r->reid->num_queries;
      }
      acc.num_queries /= g.size();
      m.reid = acc;
    }
    if (g.front()->par) {
      ParMetrics acc;
      for (const auto* r : g) {
        require(r->par.has_value(), "mean_rows: inconsistent PAR blocks for " + name);
        acc.ma += r->par->ma / n;
        acc.precision += r->par->precision / n;
        acc.recall += r->par->recall / n;
        acc.f1 += r->par->f1 / n;
      }
      m.par = acc;
    }
    out.push_back(std::move(m));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

namespace {

const char* const kHeader = "name,seed,mAP,rank1,rank5,rank10,ma,F1,Prec,Rec,config_digest";

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_cell(const std::string& s, std::size_t line) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  require(used == s.size() && used > 0, "report line " + std::to_string(line) + ": bad number '" + s + "'");
  return v;
}

}  // namespace

void emit_report(const std::vector<ReportRow>& rows, const std::filesystem::path& path) {
  require(!rows.empty(), "emit_report: no rows");
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream csv(path);
  require(csv.good(), "emit_report: cannot write " + path.string());
  csv << kHeader << '\n';
  json sidecar = json::array();
  for (const auto& r : rows) {
    require(r.reid || r.par, "emit_report: row '" + r.name + "' has no metrics");
    require(r.name.find(',') == std::string::npos, "emit_report: name contains a comma");
    csv << r.name << ',' << (r.seed ? std::to_string(*r.seed) : std::string("mean"));
    if (r.reid) {
      const auto rank = [&](int k) {
        const auto it = r.reid->cmc.find(k);
        return it == r.reid->cmc.end() ? std::string() : fmt(it->second);
      };
      csv << ',' << fmt(r.reid->map) << ',' << rank(1) << ',' << rank(5) << ',' << rank(10);
    } else {
      csv << ",,,,";
    }
    if (r.par)
      csv << ',' << fmt(r.par->ma) << ',' << fmt(r.par->f1) << ',' << fmt(r.par->precision) << ','
          << fmt(r.par->recall);
    else
      csv << ",,,,";
    csv << ',' << r.config_digest << '\n';

    json e{{"name", r.name}, {"config_digest", r.config_digest}, {"digest", r.digest()}};
    e["seed"] = r.seed ? json(*r.seed) : json(nullptr);
    if (r.reid) e["reid"] = *r.reid;
    if (r.par) e["par"] = *r.par;
    e["config"] = r.config_json.empty() ? json(nullptr) : json::parse(r.config_json);
    sidecar.push_back(std::move(e));
  }
  require(csv.good(), "emit_report: failed writing " + path.string());
  std::ofstream side(path.string() + ".json");
  require(side.good(), "emit_report: cannot write " + path.string() + ".json");
  side << sidecar.dump(2) << '\n';
}

std::vector<ReportRow> read_report(const std::filesystem::path& csv_path) {
  std::ifstream in(csv_path);
  require(in.good(), "report not found: " + csv_path.string());
  std::string line;
  require(std::getline(in, line) && line == kHeader, "report: unexpected header in " + csv_path.string());
  std::vector<ReportRow> rows;
  std::size_t n = 1;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    require(cells.size() == 11, "report line " + std::to_string(n) + ": expected 11 columns");
    ReportRow r;
    r.name = cells[0];
    if (cells[1] != "mean") r.seed = static_cast<std::uint64_t>(parse_cell(cells[1], n));
    if (!cells[2].empty()) {
      ReidMetrics m;
      m.map = parse_cell(cells[2], n);
      const int ranks[] = {1, 5, 10};
      for (int i = 0; i < 3; ++i)
        if (!cells[3 + i].empty()) m.cmc[ranks[i]] = parse_cell(cells[3 + i], n);
      r.reid = m;
    }
    if (!cells[6].empty()) {
      ParMetrics m;
      m.ma = parse_cell(cells[6], n);
      m.f1 = parse_cell(cells[7], n);
      m.precision = parse_cell(cells[8], n);
      m.recall = parse_cell(cells[9], n);
      r.par = m;
    }
    r.config_digest = cells[10];
    rows.push_back(std::move(r));
  }
  require(!rows.empty(), "report: no rows in " + csv_path.string());

  const std::filesystem::path side = csv_path.string() + ".json";
  if (std::filesystem::exists(side)) {
    std::ifstream s(side);
    const json j = json::parse(s);
    if (j.is_array() && j.size() == rows.size())
      for (std::size_t i = 0; i < rows.size(); ++i)
        if (j[i].contains("config") && !j[i]["config"].is_null()) rows[i].config_json = j[i]["config"].dump();
  }
  return rows;
}

ExperimentSpec read_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), "spec not found: " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw Error("spec " + path.string() + ": " + e.what());
  }
  return j.get<ExperimentSpec>();
}

void write_spec(const ExperimentSpec& spec, const std::filesystem::path& path) {
  std::ofstream out(path);
  require(out.good(), "cannot write " + path.string());
  out << json(spec).dump(2) << '\n';
}

}  // namespace ka
