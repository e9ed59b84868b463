#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <utility>
#include <vector>

#include "ka/augment.hpp"
#include "ka/data.hpp"
#include "ka/error.hpp"
#include "ka/eval.hpp"
#include "ka/losses.hpp"
#include "ka/model.hpp"
#include "ka/rng.hpp"

namespace ka {

double cosine_lr(std::size_t step, std::size_t total_steps, double lr0);

enum class OptimizerKind { adam };

enum class TrainMode {
  dual,                // two models, cross pseudo-supervision
  single,              // one model, supervised losses only
  image_augmentation,  // one model, weak view pseudo-labels the strong view
};

enum class DataUse { both, a_only, b_only };

enum class SelectionRule { best_of_two, left };

enum class Side { L, R };
const char* to_string(Side side);

struct TrainConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 64;
  double lr0 = 3e-4;
  OptimizerKind optimizer = OptimizerKind::adam;
  std::uint64_t seed = 0;
  LossConfig loss;
  ArchConfig arch;
  std::size_t eval_every = 1;
  double ratio_a = 0.5;

  TrainMode mode = TrainMode::dual;
  DataUse data = DataUse::both;
  // False skips forming consistency terms entirely (reference trainer).
  bool compute_consistency = true;
  SelectionRule selection = SelectionRule::best_of_two;
  double val_fraction = 0.1;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  AugmentConfig augment;
  EvalOptions eval;

  void validate() const;
};

struct StepRecord {
  std::size_t step = 0;
  std::size_t epoch = 0;  // 1-based epoch the step belongs to
  double lr = 0.0;
  LossReport loss;

  friend bool operator==(const StepRecord&, const StepRecord&) = default;
};

struct ValRecord {
  std::size_t epoch = 0;
  MetricsReport left;
  std::optional<MetricsReport> right;

  friend bool operator==(const ValRecord&, const ValRecord&) = default;
};

// The better of the two models under mean(reID mAP, PAR F1); ties go to L.
Side select_best(const MetricsReport& left, const MetricsReport& right);
std::pair<const Model*, Side> select_best(const Model& left, const Model& right, const MetricsReport& metrics_left,
                                          const MetricsReport& metrics_right);

struct TrainedRun {
  Model best_model;
  Side best_side = Side::L;
  std::vector<StepRecord> history;
  std::vector<ValRecord> val_history;
};

class TrainingDiverged : public Error {
 public:
  TrainingDiverged(std::size_t step, LossReport report);
  std::size_t step;
  LossReport report;
};

// Adam over a flat list of parameter tensors (both models share one instance).
class Adam {
 public:
  Adam(std::vector<Tensor> params, double beta1, double beta2, double eps);

  void zero_grad();
  void step(double lr);

  std::uint64_t steps_taken() const { return t_; }
  std::vector<NamedTensor> state() const;
  void load_state(const std::vector<NamedTensor>& state, std::uint64_t steps_taken);

 private:
  std::vector<Tensor> params_;
  std::vector<Tensor> m_, v_;
  double beta1_, beta2_, eps_;
  std::uint64_t t_ = 0;
};

// Stateful loop over mixed batches. The held-out validation split is carved
// from the inputs by seed at construction.
class Trainer {
 public:
  Trainer(const PartialDataset& ds_a, const PartialDataset& ds_b, const TrainConfig& cfg);
  ~Trainer();
  Trainer(Trainer&&) noexcept;
  Trainer& operator=(Trainer&&) noexcept;

  static Trainer resume(const std::filesystem::path& checkpoint, const PartialDataset& ds_a,
                        const PartialDataset& ds_b);

  const TrainConfig& config() const;
  std::size_t steps_per_epoch() const;
  std::size_t total_steps() const;
  std::size_t global_step() const;
  std::size_t epochs_done() const;
  bool finished() const;

  void set_step_callback(std::function<void(const StepRecord&)> cb);

  // One optimizer step; returns the step's losses.
  const StepRecord& step();
  // Completes the current epoch (and its validation, when due).
  void run_epoch();
  // Runs the remaining epochs and selects the kept model.
  TrainedRun finish();

  const Model& left() const;
  const Model* right() const;  // nullptr for single-model modes
  const std::vector<StepRecord>& history() const;
  const std::vector<ValRecord>& val_history() const;
  MetricsReport validate(const Model& model) const;

  const PartialDataset& train_a() const;
  const PartialDataset& train_b() const;
  const PartialDataset& val_a() const;
  const PartialDataset& val_b() const;

  void save_checkpoint(const std::filesystem::path& path, std::optional<Side> best_side = std::nullopt) const;

 private:
  struct State;
  std::unique_ptr<State> s_;
};

TrainedRun train(const PartialDataset& ds_a, const PartialDataset& ds_b, const TrainConfig& cfg);

// A trained-model archive as written by Trainer::save_checkpoint.
struct CheckpointInfo {
  TrainConfig config;
  std::size_t epoch = 0;
  std::size_t step = 0;
  std::optional<Side> best_side;
};

CheckpointInfo read_checkpoint_info(const std::filesystem::path& path);
// The kept model (best side if recorded, else L).
Model load_checkpoint_model(const std::filesystem::path& path, std::optional<Side> side = std::nullopt);

}  // namespace ka
