#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "ka/data.hpp"
#include "ka/model.hpp"

namespace ka {

struct ReidMetrics {
  double map = 0.0;
  std::map<int, double> cmc;  // rank -> fraction
  std::size_t num_queries = 0;  // evaluable queries

  friend bool operator==(const ReidMetrics&, const ReidMetrics&) = default;
};

struct ParMetrics {
  double ma = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;

  friend bool operator==(const ParMetrics&, const ParMetrics&) = default;
};

struct MetricsReport {
  std::optional<ReidMetrics> reid;
  std::optional<ParMetrics> par;

  // mean(reID mAP, PAR F1) over the blocks present.
  double primary_score() const;
  friend bool operator==(const MetricsReport&, const MetricsReport&) = default;
};

// Row-major feature block with per-row identity and camera.
struct ReidSet {
  std::vector<double> features;  // count × dim
  std::size_t dim = 0;
  std::vector<int> ids;
  std::vector<int> cams;

  std::size_t size() const { return ids.size(); }
};

inline const std::vector<int> kDefaultRanks{1, 5, 10};

// Cosine similarity ranking with the Market1501 junk rule (same id and same
// camera as the query is ignored). Ties rank non-matches first. Throws when no
// query has a valid positive.
ReidMetrics reid_map_cmc(const ReidSet& query, const ReidSet& gallery, std::span<const int> ranks = kDefaultRanks);

// pred: N×M probabilities, gt: N×M binary, row-major.
ParMetrics par_metrics(std::span<const double> pred, std::span<const double> gt, std::size_t num_attributes,
                       double threshold = 0.5);

// ---------------------------------------------------------------------------
// Model-level evaluation
// ---------------------------------------------------------------------------

struct EvalOptions {
  double par_threshold = 0.5;
  std::size_t batch_size = 128;
};

// reID features of every sample, camera 0 when absent.
ReidSet extract_reid(const Model& model, const PartialDataset& ds, std::size_t batch_size = 128);
// Sigmoid attribute probabilities, N×M.
std::vector<double> predict_attributes(const Model& model, const PartialDataset& ds, std::size_t batch_size = 128);

// reid_query: queries (and gallery for all_vs_all); reid_gallery: separate
// gallery or nullptr. par_set: attribute-labeled set or nullptr. Blocks for
// tasks the model lacks are left empty.
MetricsReport evaluate_model(const Model& model, const PartialDataset* reid_query, const PartialDataset* reid_gallery,
                             const PartialDataset* par_set, const EvalOptions& options = {});

}  // namespace ka
