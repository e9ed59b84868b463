#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <sstream>

#include "ka/config_io.hpp"
#include "ka/experiments.hpp"
#include "ka/trainer.hpp"

namespace {

void print_row(const ka::ReportRow& r) {
  std::ostringstream os;
  os << r.name << " seed=" << (r.seed ? std::to_string(*r.seed) : std::string("mean"));
  char buf[64];
  if (r.reid) {
    std::snprintf(buf, sizeof buf, " mAP=%.4f r1=%.4f", r.reid->map, r.reid->cmc.count(1) ? r.reid->cmc.at(1) : 0.0);
    os << buf;
  }
  if (r.par) {
    std::snprintf(buf, sizeof buf, " ma=%.4f F1=%.4f", r.par->ma, r.par->f1);
    os << buf;
  }
  std::cout << os.str() << std::endl;
}

std::vector<std::uint64_t> parse_seeds(const std::string& s) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    ka::require(!item.empty() && item.find_first_not_of("0123456789") == std::string::npos,
                "--seeds: expected comma-separated integers, got '" + s + "'");
    out.push_back(std::stoull(item));
  }
  ka::require(!out.empty(), "--seeds: empty list");
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Knowledge-amalgamation style multi-task training on disjointly labeled datasets"};
  app.require_subcommand(1);

  std::string spec_path;
  auto* run = app.add_subcommand("run", "Train and evaluate one experiment spec (JSON)");
  run->add_option("--spec", spec_path, "Experiment spec file")->required()->check(CLI::ExistingFile);

  std::string grid_data = "synthetic", grid_out, grid_seeds = "1,2,3", grid_base, grid_names;
  auto* grid = app.add_subcommand("grid", "Run every experiment over several seeds");
  grid->add_option("--data", grid_data, "'synthetic' or a spec file whose data source is used");
  grid->add_option("--out", grid_out, "Output directory")->required();
  grid->add_option("--seeds", grid_seeds, "Comma-separated training seeds");
  grid->add_option("--base", grid_base, "Spec file providing the base training config");
  grid->add_option("--only", grid_names, "Comma-separated subset of experiment names");

  std::string ckpt_path, manifest_path;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a manifest");
  eval->add_option("--checkpoint", ckpt_path, "Checkpoint written by run/grid")->required()->check(CLI::ExistingFile);
  eval->add_option("--manifest", manifest_path, "Manifest CSV (reID: all-vs-all; attributes: PAR metrics)")
      ->required()
      ->check(CLI::ExistingFile);

  std::string report_in, report_out;
  auto* report = app.add_subcommand("report", "Collect per-run reports into one table");
  report->add_option("--in", report_in, "Directory searched recursively for report.csv")->required();
  report->add_option("--out", report_out, "Output CSV")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      const ka::ExperimentSpec spec = ka::read_spec(spec_path);
      print_row(ka::run_experiment(spec));
    } else if (*grid) {
      ka::GridOptions opts;
      if (!grid_base.empty()) opts.base = ka::read_spec(grid_base);
      if (grid_data != "synthetic") opts.base.data = ka::read_spec(grid_data).data;
      opts.base.output_dir = grid_out;
      opts.seeds = parse_seeds(grid_seeds);
      if (!grid_names.empty()) {
        opts.names.clear();
        std::stringstream ss(grid_names);
        std::string n;
        while (std::getline(ss, n, ',')) opts.names.push_back(ka::parse_experiment(n));
      }
      opts.on_row = print_row;
      auto rows = ka::run_grid(opts);
      const auto means = ka::mean_rows(rows);
      for (const auto& m : means) print_row(m);
      rows.insert(rows.end(), means.begin(), means.end());
      ka::emit_report(rows, std::filesystem::path(grid_out) / "table.csv");
      std::cout << "wrote " << (std::filesystem::path(grid_out) / "table.csv").string() << std::endl;
    } else if (*eval) {
      const ka::CheckpointInfo info = ka::read_checkpoint_info(ckpt_path);
      const ka::Model model = ka::load_checkpoint_model(ckpt_path);
      ka::LoadOptions lo;
      lo.resize = info.config.arch.input_size;
      const ka::PartialDataset ds = ka::load_dataset(manifest_path, lo);
      const bool is_reid = ds.task_labeled == ka::Task::T1;
      const ka::MetricsReport m =
          ka::evaluate_model(model, is_reid ? &ds : nullptr, nullptr, is_reid ? nullptr : &ds, info.config.eval);
      std::cout << ka::json(m).dump(2) << std::endl;
    } else if (*report) {
      std::vector<ka::ReportRow> rows;
      std::vector<std::filesystem::path> files;
      for (const auto& e : std::filesystem::recursive_directory_iterator(report_in))
        if (e.is_regular_file() && e.path().filename() == "report.csv") files.push_back(e.path());
      std::sort(files.begin(), files.end());
      ka::require(!files.empty(), "report: no report.csv under " + report_in);
      for (const auto& f : files) {
        auto part = ka::read_report(f);
        rows.insert(rows.end(), part.begin(), part.end());
      }
      const auto means = ka::mean_rows(rows);
      rows.insert(rows.end(), means.begin(), means.end());
      ka::emit_report(rows, report_out);
      for (const auto& m : means) print_row(m);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 1;
  }
  return 0;
}
