#include "ka/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "ka/error.hpp"
#include "ka/ops.hpp"

namespace ka {

void LossConfig::validate() const {
  require(lambda >= 0.0, "LossConfig: lambda must be >= 0");
  require(triplet_margin >= 0.0, "LossConfig: triplet margin must be >= 0");
  require(dice_smooth > 0.0, "LossConfig: dice smoothing must be > 0");
}

bool LossReport::finite() const {
  for (double v : {sup_reid, sup_par, semi_reid, semi_par, semi_unlabeled, semi_labeled, total})
    if (!std::isfinite(v)) return false;
  return true;
}

namespace {

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }
double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  require(a.defined() && b.defined(), std::string(op) + ": undefined input");
  require(a.shape() == b.shape(),
          std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
}

}  // namespace

// ---------------------------------------------------------------------------
// Primitives
// ---------------------------------------------------------------------------

Tensor id_ce_loss(const Tensor& logits, std::span<const int> ids) {
  require(logits.rank() == 2, "id_ce_loss: logits must be N×K");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  require(n >= 1, "id_ce_loss: empty batch");
  require(ids.size() == n, "id_ce_loss: one id per row required");
  for (int id : ids)
    require(id >= 0 && static_cast<std::size_t>(id) < k,
            "id_ce_loss: id " + std::to_string(id) + " outside [0, " + std::to_string(k) + ")");
  const auto x = logits.data();
  std::vector<double> prob(n * k);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = x.data() + i * k;
    const double mx = *std::max_element(row, row + k);
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(row[j] - mx);
    const double log_z = mx + std::log(z);
    for (std::size_t j = 0; j < k; ++j) prob[i * k + j] = std::exp(row[j] - log_z);
    total += log_z - row[static_cast<std::size_t>(ids[i])];
  }
  std::vector<int> labels(ids.begin(), ids.end());
  return Tensor::make_result({}, {total / static_cast<double>(n)}, {logits},
                             [logits, prob = std::move(prob), labels = std::move(labels), n, k](
                                 std::span<const double> g) mutable {
                               auto d = logits.mutable_grad();
                               const double s = g[0] / static_cast<double>(n);
                               for (std::size_t i = 0; i < n; ++i) {
                                 for (std::size_t j = 0; j < k; ++j) d[i * k + j] += s * prob[i * k + j];
                                 d[i * k + static_cast<std::size_t>(labels[i])] -= s;
                               }
                             });
}

Tensor attr_bce_loss(const Tensor& logits, std::span<const double> targets) {
  require(logits.numel() >= 1, "attr_bce_loss: empty input");
  require(targets.size() == logits.numel(), "attr_bce_loss: target size mismatch");
  for (double t : targets) require(t == 0.0 || t == 1.0, "attr_bce_loss: targets must be binary");
  const auto x = logits.data();
  const std::size_t n = x.size();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) total += softplus(x[i]) - targets[i] * x[i];
  std::vector<double> t(targets.begin(), targets.end());
  return Tensor::make_result({}, {total / static_cast<double>(n)}, {logits},
                             [logits, t = std::move(t), n](std::span<const double> g) mutable {
                               auto d = logits.mutable_grad();
                               const auto x = logits.data();
                               const double s = g[0] / static_cast<double>(n);
                               for (std::size_t i = 0; i < n; ++i) d[i] += s * (sigmoid(x[i]) - t[i]);
                             });
}

Tensor dice_consistency(const Tensor& pred_logits, const Tensor& pseudo_logits, double smooth) {
  require_same_shape(pred_logits, pseudo_logits, "dice_consistency");
  require(smooth > 0.0, "dice_consistency: smoothing must be > 0");
  const std::size_t n = pred_logits.numel();
  std::vector<double> p(n), q(n);
  double spq = 0.0, spp = 0.0, sqq = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    p[i] = sigmoid(pred_logits.data()[i]);
    q[i] = sigmoid(pseudo_logits.data()[i]);
    spq += p[i] * q[i];
    spp += p[i] * p[i];
    sqq += q[i] * q[i];
  }
  const double num = 2.0 * spq + smooth, den = spp + sqq + smooth;
  return Tensor::make_result(
      {}, {1.0 - num / den}, {pred_logits, pseudo_logits},
      [pred_logits, pseudo_logits, p = std::move(p), q = std::move(q), num, den, n](std::span<const double> g) mutable {
        const double den2 = den * den;
        if (pred_logits.requires_grad()) {
          auto d = pred_logits.mutable_grad();
          for (std::size_t i = 0; i < n; ++i)
            d[i] += g[0] * -(2.0 * q[i] * den - num * 2.0 * p[i]) / den2 * p[i] * (1.0 - p[i]);
        }
        if (pseudo_logits.requires_grad()) {
          auto d = pseudo_logits.mutable_grad();
          for (std::size_t i = 0; i < n; ++i)
            d[i] += g[0] * -(2.0 * p[i] * den - num * 2.0 * q[i]) / den2 * q[i] * (1.0 - q[i]);
        }
      });
}

Tensor bce_consistency(const Tensor& pred_logit, const Tensor& pseudo_logit) {
  require_same_shape(pred_logit, pseudo_logit, "bce_consistency");
  const std::size_t n = pred_logit.numel();
  require(n >= 1, "bce_consistency: empty input");
  // BCE(σ(x), t) = softplus(x) - t·x
  std::vector<double> t(n);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    t[i] = sigmoid(pseudo_logit.data()[i]);
    const double x = pred_logit.data()[i];
    total += softplus(x) - t[i] * x;
  }
  return Tensor::make_result({}, {total / static_cast<double>(n)}, {pred_logit, pseudo_logit},
                             [pred_logit, pseudo_logit, t = std::move(t), n](std::span<const double> g) mutable {
                               const double s = g[0] / static_cast<double>(n);
                               const auto x = pred_logit.data();
                               if (pred_logit.requires_grad()) {
                                 auto d = pred_logit.mutable_grad();
                                 for (std::size_t i = 0; i < n; ++i) d[i] += s * (sigmoid(x[i]) - t[i]);
                               }
                               if (pseudo_logit.requires_grad()) {
                                 auto d = pseudo_logit.mutable_grad();
                                 for (std::size_t i = 0; i < n; ++i) d[i] += s * -x[i] * t[i] * (1.0 - t[i]);
                               }
                             });
}

Tensor triplet_consistency(const Tensor& anchor_feats, const Tensor& ref_feats, double margin) {
  require_same_shape(anchor_feats, ref_feats, "triplet_consistency");
  require(anchor_feats.rank() == 2, "triplet_consistency: features must be N×D");
  const std::size_t n = anchor_feats.dim(0), dim = anchor_feats.dim(1);
  require(n >= 2, "triplet_consistency: need at least 2 rows for a negative");
  const auto a = anchor_feats.data(), r = ref_feats.data();
  auto dist = [&](std::size_t i, std::size_t j) {
    double s = 0.0;
    for (std::size_t k = 0; k < dim; ++k) {
      const double d = a[i * dim + k] - r[j * dim + k];
      s += d * d;
    }
    return std::sqrt(s);
  };
  struct Active {
    std::size_t anchor, negative;
    double d_pos, d_neg;
  };
  std::vector<Active> active;
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d_pos = dist(i, i);
    double d_neg = std::numeric_limits<double>::infinity();
    std::size_t neg = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const double dj = dist(i, j);
      if (dj < d_neg) {
        d_neg = dj;
        neg = j;
      }
    }
    const double hinge = margin + d_pos - d_neg;
    if (hinge > 0.0) {
      total += hinge;
      active.push_back({i, neg, d_pos, d_neg});
    }
  }
  return Tensor::make_result(
      {}, {total / static_cast<double>(n)}, {anchor_feats, ref_feats},
      [anchor_feats, ref_feats, active = std::move(active), n, dim](std::span<const double> g) mutable {
        const double s = g[0] / static_cast<double>(n);
        const auto a = anchor_feats.data(), r = ref_feats.data();
        const bool ga = anchor_feats.requires_grad(), gr = ref_feats.requires_grad();
        std::span<double> da = ga ? anchor_feats.mutable_grad() : std::span<double>{};
        std::span<double> dr = gr ? ref_feats.mutable_grad() : std::span<double>{};
        for (const auto& t : active) {
          const std::size_t i = t.anchor, j = t.negative;
          for (std::size_t k = 0; k < dim; ++k) {
            // zero-length differences contribute the zero subgradient
            const double up = t.d_pos > 0.0 ? (a[i * dim + k] - r[i * dim + k]) / t.d_pos : 0.0;
            const double un = t.d_neg > 0.0 ? (a[i * dim + k] - r[j * dim + k]) / t.d_neg : 0.0;
            if (ga) da[i * dim + k] += s * (up - un);
            if (gr) {
              dr[i * dim + k] -= s * up;
              dr[j * dim + k] += s * un;
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Aggregates
// ---------------------------------------------------------------------------

namespace {

struct Rows {
  std::size_t begin, end;
  std::size_t size() const { return end - begin; }
};

Rows a_rows(const BatchLabels& l) { return {0, l.n_a}; }
Rows b_rows(const BatchLabels& l) { return {l.n_a, l.n_a + l.n_b}; }

Tensor rows_of(const Tensor& t, Rows r) { return ops::slice_rows(t, r.begin, r.end); }

bool has_task(const TaskOutputs& o, Task task) {
  return task == Task::T1 ? o.reid_features.defined() : o.par_features.defined();
}

std::vector<const TaskOutputs*> supervised_sides(const DualOutputs& d, const LossConfig& cfg) {
  switch (cfg.supervised) {
    case SupervisedSides::left:
      return {&d.left};
    case SupervisedSides::right:
      require(d.right.has_value(), "supervised loss on the right side requires right outputs");
      return {&*d.right};
    case SupervisedSides::both:
      break;
  }
  if (d.right) return {&d.left, &*d.right};
  return {&d.left};
}

Tensor sup_reid_term(const DualOutputs& d, const LossConfig& cfg) {
  if (!has_task(d.left, Task::T1)) return {};
  require(d.labels.n_a >= 1, "supervised_total: empty sub-batch A");
  std::vector<Tensor> terms;
  for (const TaskOutputs* side : supervised_sides(d, cfg))
    terms.push_back(id_ce_loss(rows_of(side->reid_logits, a_rows(d.labels)), d.labels.person_ids));
  return ops::sum_scalars(terms);
}

Tensor sup_par_term(const DualOutputs& d, const LossConfig& cfg) {
  if (!has_task(d.left, Task::T2)) return {};
  require(d.labels.n_b >= 1, "supervised_total: empty sub-batch B");
  std::vector<Tensor> terms;
  for (const TaskOutputs* side : supervised_sides(d, cfg))
    terms.push_back(attr_bce_loss(rows_of(side->par_logits, b_rows(d.labels)), d.labels.attributes));
  return ops::sum_scalars(terms);
}

Tensor consistency_pair(Task task, const DualOutputs& d, Rows rows, const LossConfig& cfg) {
  require(d.right.has_value(), "consistency losses need two output sets");
  std::vector<Tensor> terms{directed_consistency(task, d.left, *d.right, rows.begin, rows.end, cfg)};
  if (cfg.direction == ConsistencyDirection::both)
    terms.push_back(directed_consistency(task, *d.right, d.left, rows.begin, rows.end, cfg));
  if (!terms.front().defined()) return {};
  return ops::sum_scalars(terms);
}

// Unlabeled: reID consistency on B rows, PAR consistency on A rows.
std::pair<Tensor, Tensor> unlabeled_parts(const DualOutputs& d, const LossConfig& cfg) {
  Tensor reid, par;
  if (has_task(d.left, Task::T1)) {
    require(d.labels.n_b >= 1, "semi_unlabeled_total: empty sub-batch B");
    reid = consistency_pair(Task::T1, d, b_rows(d.labels), cfg);
  }
  if (has_task(d.left, Task::T2)) {
    require(d.labels.n_a >= 1, "semi_unlabeled_total: empty sub-batch A");
    par = consistency_pair(Task::T2, d, a_rows(d.labels), cfg);
  }
  return {reid, par};
}

// Labeled: reID consistency on A rows, PAR consistency on B rows.
std::pair<Tensor, Tensor> labeled_parts(const DualOutputs& d, const LossConfig& cfg) {
  if (!cfg.include_labeled_consistency) return {};
  Tensor reid, par;
  if (has_task(d.left, Task::T1)) {
    require(d.labels.n_a >= 1, "semi_labeled_total: empty sub-batch A");
    reid = consistency_pair(Task::T1, d, a_rows(d.labels), cfg);
  }
  if (has_task(d.left, Task::T2)) {
    require(d.labels.n_b >= 1, "semi_labeled_total: empty sub-batch B");
    par = consistency_pair(Task::T2, d, b_rows(d.labels), cfg);
  }
  return {reid, par};
}

double value_or_zero(const Tensor& t) { return t.defined() ? t.item() : 0.0; }

}  // namespace

Tensor directed_consistency(Task task, const TaskOutputs& pred, const TaskOutputs& pseudo, std::size_t begin,
                            std::size_t end, const LossConfig& cfg) {
  require(begin <= end && end <= pred.rows() && end <= pseudo.rows(), "directed_consistency: row range out of bounds");
  const Rows rows{begin, end};
  auto target = [&](const Tensor& t) {
    Tensor sliced = rows_of(t, rows);
    return cfg.stop_gradient_pseudo ? sliced.detach() : sliced;
  };
  std::vector<Tensor> terms;
  if (task == Task::T1) {
    require(has_task(pred, Task::T1) && has_task(pseudo, Task::T1), "directed_consistency: reID outputs missing");
    if (cfg.use_triplet) {
      require(rows.size() >= 2, "reID consistency: triplet needs at least 2 samples in the sub-batch");
      terms.push_back(triplet_consistency(rows_of(pred.reid_features, rows), target(pseudo.reid_features),
                                          cfg.triplet_margin));
    }
    if (pred.dataset_logit.defined()) {
      require(rows.size() >= 1, "reID consistency: empty sub-batch");
      terms.push_back(bce_consistency(rows_of(pred.dataset_logit, rows), target(pseudo.dataset_logit)));
    }
  } else {
    require(has_task(pred, Task::T2) && has_task(pseudo, Task::T2), "directed_consistency: PAR outputs missing");
    require(rows.size() >= 1, "PAR consistency: empty sub-batch");
    terms.push_back(dice_consistency(rows_of(pred.par_logits, rows), target(pseudo.par_logits), cfg.dice_smooth));
    if (cfg.use_triplet) {
      require(rows.size() >= 2, "PAR consistency: triplet needs at least 2 samples in the sub-batch");
      terms.push_back(triplet_consistency(rows_of(pred.par_features, rows), target(pseudo.par_features),
                                          cfg.triplet_margin));
    }
  }
  if (terms.empty()) return {};
  return ops::sum_scalars(terms);
}

Tensor supervised_total(const DualOutputs& d, const LossConfig& cfg) {
  return ops::sum_scalars({sup_reid_term(d, cfg), sup_par_term(d, cfg)});
}

Tensor semi_unlabeled_total(const DualOutputs& d, const LossConfig& cfg) {
  auto [reid, par] = unlabeled_parts(d, cfg);
  return ops::sum_scalars({reid, par});
}

Tensor semi_labeled_total(const DualOutputs& d, const LossConfig& cfg) {
  auto [reid, par] = labeled_parts(d, cfg);
  return ops::sum_scalars({reid, par});
}

LossTerms total_objective(const DualOutputs& d, const LossConfig& cfg, bool compute_consistency) {
  cfg.validate();
  LossTerms out;
  out.sup_reid = sup_reid_term(d, cfg);
  out.sup_par = sup_par_term(d, cfg);
  std::vector<Tensor> parts{out.sup_reid, out.sup_par};
  if (compute_consistency && d.right) {
    auto [u_reid, u_par] = unlabeled_parts(d, cfg);
    auto [l_reid, l_par] = labeled_parts(d, cfg);
    out.semi_unlabeled = ops::sum_scalars({u_reid, u_par});
    out.semi_labeled = ops::sum_scalars({l_reid, l_par});
    out.semi_reid = ops::sum_scalars({u_reid, l_reid});
    out.semi_par = ops::sum_scalars({u_par, l_par});
    parts.push_back(ops::scale(ops::sum_scalars({out.semi_unlabeled, out.semi_labeled}), cfg.lambda));
  }
  out.total = ops::sum_scalars(parts);

  LossReport& r = out.report;
  r.sup_reid = value_or_zero(out.sup_reid);
  r.sup_par = value_or_zero(out.sup_par);
  r.semi_reid = value_or_zero(out.semi_reid);
  r.semi_par = value_or_zero(out.semi_par);
  r.semi_unlabeled = value_or_zero(out.semi_unlabeled);
  r.semi_labeled = value_or_zero(out.semi_labeled);
  r.total = out.total.item();
  return out;
}

}  // namespace ka
