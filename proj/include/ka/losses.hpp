#pragma once

#include <cstddef>
#include <span>
#include <string>

#include "ka/model.hpp"
#include "ka/tensor.hpp"

namespace ka {

// Which directed consistency terms are formed between the two output sets.
enum class ConsistencyDirection {
  both,             // left<-right and right<-left
  left_from_right,  // left is the prediction, right the pseudo-label
};

// Which output sets receive the supervised loss.
enum class SupervisedSides { both, left, right };

struct LossConfig {
  double lambda = 1.0;
  double triplet_margin = 0.3;
  double dice_smooth = 1.0;
  bool include_labeled_consistency = true;
  bool stop_gradient_pseudo = true;
  // Triplet feature terms inside the consistency losses.
  bool use_triplet = true;
  ConsistencyDirection direction = ConsistencyDirection::both;
  SupervisedSides supervised = SupervisedSides::both;

  void validate() const;
};

struct LossReport {
  double sup_reid = 0.0;        // L^GT_1 terms
  double sup_par = 0.0;         // L^GT_2 terms
  double semi_reid = 0.0;       // every reID consistency term (unlabeled + labeled)
  double semi_par = 0.0;        // every PAR consistency term (unlabeled + labeled)
  double semi_unlabeled = 0.0;
  double semi_labeled = 0.0;
  double total = 0.0;

  bool finite() const;
  friend bool operator==(const LossReport&, const LossReport&) = default;
};

// Differentiable scalars behind a LossReport. Undefined tensors are inactive terms.
struct LossTerms {
  Tensor sup_reid, sup_par, semi_reid, semi_par, semi_unlabeled, semi_labeled, total;
  LossReport report;
};

// ---------------------------------------------------------------------------
// Primitive losses. Each returns a scalar tensor.
// ---------------------------------------------------------------------------

// mean_i -log softmax(logits_i)[ids_i]
Tensor id_ce_loss(const Tensor& logits, std::span<const int> ids);

// Mean over all N·M entries of BCE(sigmoid(logit), target); targets must be 0/1.
Tensor attr_bce_loss(const Tensor& logits, std::span<const double> targets);

// 1 - (2·Σpq + ε) / (Σp² + Σq² + ε) with p = σ(pred), q = σ(pseudo), sums over every entry.
Tensor dice_consistency(const Tensor& pred_logits, const Tensor& pseudo_logits, double smooth);

// mean BCE between σ(pred) and the soft target σ(pseudo).
Tensor bce_consistency(const Tensor& pred_logit, const Tensor& pseudo_logit);

// Positive for anchor i is ref i; negative is the closest ref j != i.
Tensor triplet_consistency(const Tensor& anchor_feats, const Tensor& ref_feats, double margin);

// ---------------------------------------------------------------------------
// Aggregates.
// ---------------------------------------------------------------------------

// One directed consistency term for `task` on rows [begin, end): `pred`'s
// outputs are supervised by `pseudo`'s (detached when stop_gradient_pseudo).
// Returns an undefined tensor when the task has no active components.
Tensor directed_consistency(Task task, const TaskOutputs& pred, const TaskOutputs& pseudo, std::size_t begin,
                            std::size_t end, const LossConfig& cfg);

// L^GT summed over the configured sides.
Tensor supervised_total(const DualOutputs& d, const LossConfig& cfg);
// Consistency of each sub-batch on the task it has no labels for.
Tensor semi_unlabeled_total(const DualOutputs& d, const LossConfig& cfg);
// Consistency of each sub-batch on its own labeled task; 0 when disabled.
Tensor semi_labeled_total(const DualOutputs& d, const LossConfig& cfg);

// total = L^GT + λ (L^semi_u + L^semi_l). With compute_consistency false (or no
// right outputs) the consistency terms are never formed.
LossTerms total_objective(const DualOutputs& d, const LossConfig& cfg, bool compute_consistency = true);

}  // namespace ka
