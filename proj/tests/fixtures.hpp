#pragma once

#include <utility>

#include "ka/data.hpp"
#include "ka/model.hpp"
#include "ka/trainer.hpp"

namespace fixture {

inline std::pair<ka::PartialDataset, ka::PartialDataset> tiny_pair(std::uint64_t seed = 5, std::size_t n = 48) {
  ka::SyntheticOptions opt;
  opt.marker_contrast = 0.9;
  return ka::make_synthetic_pair(6, 3, n, {16, 8}, seed, opt);
}

inline ka::TrainConfig tiny_config(std::uint64_t seed = 1) {
  ka::TrainConfig c;
  c.epochs = 2;
  c.batch_size = 8;
  c.lr0 = 1e-3;
  c.seed = seed;
  c.eval_every = 1;
  c.val_fraction = 0.25;
  c.arch.num_ids = 6;
  c.arch.num_attributes = 3;
  c.arch.input_size = {16, 8};
  c.arch.trunk_width = 4;
  c.arch.head_channels = 8;
  c.arch.head_hidden = 16;
  c.arch.feature_dim = 8;
  return c;
}

inline bool same_parameters(const ka::Model& a, const ka::Model& b) {
  const auto& pa = a.parameters();
  const auto& pb = b.parameters();
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (pa[i].name != pb[i].name || pa[i].tensor.shape() != pb[i].tensor.shape()) return false;
    for (std::size_t k = 0; k < pa[i].tensor.numel(); ++k)
      if (pa[i].tensor.data()[k] != pb[i].tensor.data()[k]) return false;
  }
  const auto& ba = a.buffers();
  const auto& bb = b.buffers();
  if (ba.size() != bb.size()) return false;
  for (std::size_t i = 0; i < ba.size(); ++i)
    for (std::size_t k = 0; k < ba[i].tensor.numel(); ++k)
      if (ba[i].tensor.data()[k] != bb[i].tensor.data()[k]) return false;
  return true;
}

// Trajectory equality for a consistency-free reference: same lr and the
// supervised part of every step's loss.
inline bool same_supervised_history(const std::vector<ka::StepRecord>& a, const std::vector<ka::StepRecord>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].step != b[i].step || a[i].lr != b[i].lr || a[i].loss.total != b[i].loss.total ||
        a[i].loss.sup_reid != b[i].loss.sup_reid || a[i].loss.sup_par != b[i].loss.sup_par)
      return false;
  }
  return true;
}

}  // namespace fixture
