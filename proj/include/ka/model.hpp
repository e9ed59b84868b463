#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ka/data.hpp"
#include "ka/serialize.hpp"
#include "ka/tensor.hpp"

namespace ka {

enum class TrunkKind { resnet18, tiny_conv };

const char* to_string(TrunkKind kind);
TrunkKind parse_trunk(const std::string& name);

struct ArchConfig {
  TrunkKind trunk = TrunkKind::tiny_conv;
  std::size_t feature_dim = 32;
  std::size_t num_ids = 0;
  std::size_t num_attributes = 0;
  // Appends one dataset-prediction logit to the reID classifier.
  bool dataset_head = true;
  bool pretrained = false;
  std::string pretrained_path;
  bool reid_enabled = true;
  bool par_enabled = true;
  std::size_t in_channels = 3;
  ImageSize input_size{32, 16};
  // tiny_conv channel widths are (w, 2w, 2w).
  std::size_t trunk_width = 16;
  std::size_t head_channels = 16;
  std::size_t head_hidden = 64;
  // Exported task features are L2-normalized rows; the classifier still sees the raw feature.
  bool normalize_features = true;

  void validate() const;
};

// All arrays share the leading dimension N. Blocks of a disabled task are
// undefined tensors; dataset_logit is defined iff dataset_head.
struct TaskOutputs {
  Tensor reid_features;  // N×feature_dim
  Tensor reid_logits;    // N×num_ids
  Tensor dataset_logit;  // N×1
  Tensor par_features;   // N×feature_dim
  Tensor par_logits;     // N×M

  std::size_t rows() const;
};

// Ground truth carried along with a forward pass. Rows [0, n_a) of every output
// array belong to the A sub-batch, rows [n_a, n_a + n_b) to the B sub-batch.
struct BatchLabels {
  std::size_t n_a = 0;
  std::size_t n_b = 0;
  std::vector<int> person_ids;       // n_a
  std::size_t num_attributes = 0;
  std::vector<double> attributes;    // n_b × num_attributes, 0/1

  static BatchLabels from(const MixedBatch& batch);
};

// `right` is empty for single-model training.
struct DualOutputs {
  TaskOutputs left;
  std::optional<TaskOutputs> right;
  BatchLabels labels;
};

// Shared trunk plus one head per enabled task:
// 1×1 conv -> (flatten | global pool) -> fc -> fc (feature) -> classifier.
class Model {
 public:
  Model(const ArchConfig& cfg, std::uint64_t seed);
  ~Model();
  Model(Model&&) noexcept;
  Model& operator=(Model&&) noexcept;
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  Model clone() const;

  // images: N×C×H×W. `training` selects batch statistics in normalization layers.
  TaskOutputs forward(const Tensor& images, bool training) const;

  const ArchConfig& config() const { return cfg_; }
  std::vector<NamedTensor>& parameters() { return params_; }
  const std::vector<NamedTensor>& parameters() const { return params_; }
  std::vector<NamedTensor>& buffers() { return buffers_; }
  const std::vector<NamedTensor>& buffers() const { return buffers_; }
  // Parameters and buffers whose names start with "trunk.".
  std::vector<NamedTensor> trunk_state() const;

  void copy_state_from(const Model& other);
  std::size_t parameter_count() const;

 private:
  struct Impl;
  ArchConfig cfg_;
  std::vector<NamedTensor> params_;
  std::vector<NamedTensor> buffers_;
  std::unique_ptr<Impl> impl_;
};

Model build_model(const ArchConfig& cfg, std::uint64_t seed);

// Two architecturally identical models; the perturbation is the differing
// initialization seed.
std::pair<Model, Model> init_dual(const ArchConfig& cfg, std::uint64_t seed_left, std::uint64_t seed_right);

// Stacks A then B images into N×C×H×W.
Tensor batch_images(const MixedBatch& batch);
Tensor images_to_tensor(const std::vector<const Image*>& images);

DualOutputs forward_dual(const Model& left, const Model& right, const MixedBatch& batch, bool training);
DualOutputs forward_single(const Model& model, const MixedBatch& batch, bool training);

}  // namespace ka
