#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "ka/data.hpp"
#include "ka/eval.hpp"
#include "ka/trainer.hpp"

namespace ka {

enum class ExperimentName {
  reid_only,
  par_only,
  reid_ssl,
  par_ssl,
  mtl_baseline,
  ka,
  ka_imgaug,
  ka_netaug,
  ka_netaug_tri,
};

const char* to_string(ExperimentName name);
ExperimentName parse_experiment(const std::string& name);
const std::vector<ExperimentName>& all_experiments();

struct SyntheticSource {
  std::size_t num_ids = 16;
  std::size_t num_attributes = 4;
  // Per dataset, before the test split.
  std::size_t samples_per_dataset = 320;
  ImageSize image_size{32, 16};
  std::uint64_t seed = 7;
  // Tail fraction of each dataset kept for testing.
  double test_fraction = 0.25;
  SyntheticOptions options;
};

// Manifest CSVs. The reID test is all-vs-all over a_test (person ids are
// remapped per manifest, so query and gallery must share one file).
struct ManifestSource {
  std::filesystem::path a_train;
  std::filesystem::path b_train;
  std::filesystem::path a_test;
  std::filesystem::path b_test;
  std::optional<ImageSize> resize;
};

using DataSource = std::variant<SyntheticSource, ManifestSource>;

struct ExperimentSpec {
  ExperimentName name = ExperimentName::ka;
  TrainConfig train;
  DataSource data = SyntheticSource{};
  // Empty: nothing is written besides the returned row.
  std::filesystem::path output_dir;
};

struct ReportRow {
  std::string name;
  std::optional<ReidMetrics> reid;
  std::optional<ParMetrics> par;
  std::string config_digest;
  std::optional<std::uint64_t> seed;  // empty for a mean-over-seeds row
  std::string config_json;

  // Hash over every reported value plus the config digest.
  std::string digest() const;
};

struct ExperimentData {
  PartialDataset train_a, train_b;
  PartialDataset test_a;
  PartialDataset test_b;
};

ExperimentData load_experiment_data(const DataSource& source);

// The trainer configuration a name implies, derived from spec.train.
TrainConfig configure(const ExperimentSpec& spec, const ExperimentData& data);

ReportRow run_experiment(const ExperimentSpec& spec);
// Same, on data already loaded.
ReportRow run_experiment(const ExperimentSpec& spec, const ExperimentData& data);

// Desk-scale defaults used by the grid: tiny_conv on the synthetic pair.
ExperimentSpec desk_scale_spec();

struct GridOptions {
  ExperimentSpec base = desk_scale_spec();
  std::vector<ExperimentName> names = all_experiments();
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::function<void(const ReportRow&)> on_row;
};

// Per-seed rows in (name, seed) order. Seeds vary training only; data is fixed.
std::vector<ReportRow> run_grid(const GridOptions& options);
// One mean row per name, in first-appearance order.
std::vector<ReportRow> mean_rows(const std::vector<ReportRow>& rows);

// CSV (one line per row) plus `<path>.json` with the full configs.
void emit_report(const std::vector<ReportRow>& rows, const std::filesystem::path& path);
std::vector<ReportRow> read_report(const std::filesystem::path& csv_path);

ExperimentSpec read_spec(const std::filesystem::path& path);
void write_spec(const ExperimentSpec& spec, const std::filesystem::path& path);

}  // namespace ka
