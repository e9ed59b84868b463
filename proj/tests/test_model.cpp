#include <gtest/gtest.h>

#include "ka/model.hpp"
#include "ka/ops.hpp"

#include <cmath>
#include <filesystem>

using namespace ka;

namespace {

ArchConfig small_arch() {
  ArchConfig a;
  a.num_ids = 5;
  a.num_attributes = 3;
  a.input_size = {16, 8};
  a.trunk_width = 4;
  a.head_channels = 4;
  a.head_hidden = 8;
  a.feature_dim = 6;
  return a;
}

MixedBatch small_batch(std::size_t n_a, std::size_t n_b) {
  auto [a, b] = make_synthetic_pair(5, 3, 20, {16, 8}, 1);
  Rng rng(2);
  return sample_batch(a, b, n_a + n_b, static_cast<double>(n_a) / static_cast<double>(n_a + n_b), rng);
}

bool same_values(const Tensor& x, const Tensor& y) {
  if (x.shape() != y.shape()) return false;
  for (std::size_t i = 0; i < x.numel(); ++i)
    if (x.data()[i] != y.data()[i]) return false;
  return true;
}

}  // namespace

TEST(Model, OutputShapes) {
  const Model m(small_arch(), 1);
  const MixedBatch batch = small_batch(3, 2);
  const TaskOutputs o = m.forward(batch_images(batch), true);
  EXPECT_EQ(o.rows(), 5u);
  EXPECT_EQ(o.reid_features.shape(), (Shape{5, 6}));
  EXPECT_EQ(o.reid_logits.shape(), (Shape{5, 5}));
  EXPECT_EQ(o.dataset_logit.shape(), (Shape{5, 1}));
  EXPECT_EQ(o.par_features.shape(), (Shape{5, 6}));
  EXPECT_EQ(o.par_logits.shape(), (Shape{5, 3}));
}

TEST(Model, DisabledHeadsLeaveBlocksUndefined) {
  ArchConfig a = small_arch();
  a.par_enabled = false;
  a.dataset_head = false;
  const TaskOutputs o = Model(a, 1).forward(batch_images(small_batch(2, 2)), false);
  EXPECT_TRUE(o.reid_features.defined());
  EXPECT_FALSE(o.dataset_logit.defined());
  EXPECT_FALSE(o.par_logits.defined());
  EXPECT_FALSE(o.par_features.defined());

  ArchConfig b = small_arch();
  b.reid_enabled = false;
  b.dataset_head = false;
  const TaskOutputs p = Model(b, 1).forward(batch_images(small_batch(2, 2)), false);
  EXPECT_FALSE(p.reid_logits.defined());
  EXPECT_TRUE(p.par_logits.defined());
}

TEST(Model, ConfigValidation) {
  ArchConfig a = small_arch();
  a.reid_enabled = a.par_enabled = false;
  EXPECT_THROW(Model(a, 1), Error);
  a = small_arch();
  a.num_ids = 1;
  EXPECT_THROW(Model(a, 1), Error);
  a = small_arch();
  a.pretrained = true;
  EXPECT_THROW(Model(a, 1), Error);
  a = small_arch();
  a.trunk = TrunkKind::resnet18;
  EXPECT_THROW(Model(a, 1), Error);
  EXPECT_EQ(parse_trunk("resnet18"), TrunkKind::resnet18);
  EXPECT_THROW(parse_trunk("vgg"), Error);
}

TEST(Model, ForwardRejectsWrongInput) {
  const Model m(small_arch(), 1);
  EXPECT_THROW(m.forward(Tensor::zeros({1, 3, 8, 8}), false), Error);
  EXPECT_THROW(m.forward(Tensor::zeros({3, 16, 8}), false), Error);
}

TEST(Model, FeaturesAreUnitRows) {
  ArchConfig a = small_arch();
  a.head_channels = 16;
  a.head_hidden = 64;
  const TaskOutputs o = Model(a, 3).forward(batch_images(small_batch(3, 3)), true);
  for (const Tensor* t : {&o.reid_features, &o.par_features})
    for (std::size_t i = 0; i < t->dim(0); ++i) {
      double s = 0;
      for (std::size_t j = 0; j < t->dim(1); ++j) s += t->at(i, j) * t->at(i, j);
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
}

TEST(Model, SeedDeterminesInitialization) {
  const Model a(small_arch(), 4), b(small_arch(), 4), c(small_arch(), 5);
  ASSERT_EQ(a.parameters().size(), c.parameters().size());
  bool differs = false;
  for (std::size_t i = 0; i < a.parameters().size(); ++i) {
    EXPECT_TRUE(same_values(a.parameters()[i].tensor, b.parameters()[i].tensor));
    differs |= !same_values(a.parameters()[i].tensor, c.parameters()[i].tensor);
  }
  EXPECT_TRUE(differs);
}

TEST(Model, InitDualNeedsDistinctSeeds) {
  EXPECT_THROW(init_dual(small_arch(), 3, 3), Error);
  auto [l, r] = init_dual(small_arch(), 3, 4);
  const auto o = forward_dual(l, r, small_batch(2, 2), false);
  ASSERT_TRUE(o.right.has_value());
  EXPECT_FALSE(same_values(o.left.reid_logits, o.right->reid_logits));
}

TEST(Model, CloneIsDeepAndEqual) {
  Model a(small_arch(), 6);
  Model b = a.clone();
  const MixedBatch batch = small_batch(2, 2);
  EXPECT_TRUE(same_values(a.forward(batch_images(batch), false).par_logits,
                          b.forward(batch_images(batch), false).par_logits));
  b.parameters()[0].tensor.mutable_data()[0] += 1.0;
  EXPECT_NE(a.parameters()[0].tensor.data()[0], b.parameters()[0].tensor.data()[0]);
  a.copy_state_from(b);
  EXPECT_EQ(a.parameters()[0].tensor.data()[0], b.parameters()[0].tensor.data()[0]);
}

TEST(Model, PretrainedTrunkIsLoaded) {
  const Model donor(small_arch(), 11);
  const auto path = std::filesystem::temp_directory_path() / "ka_test_trunk.bin";
  save_weights(path, donor.trunk_state());
  ArchConfig a = small_arch();
  a.pretrained = true;
  a.pretrained_path = path.string();
  const Model m(a, 12);
  const auto mine = m.trunk_state(), theirs = donor.trunk_state();
  ASSERT_FALSE(mine.empty());
  ASSERT_EQ(mine.size(), theirs.size());
  for (std::size_t i = 0; i < mine.size(); ++i) {
    EXPECT_EQ(mine[i].name.rfind("trunk.", 0), 0u);
    EXPECT_TRUE(same_values(mine[i].tensor, theirs[i].tensor)) << mine[i].name;
  }
  // heads keep their own seed
  const Model plain(small_arch(), 12);
  bool head_same = true;
  for (std::size_t i = 0; i < m.parameters().size(); ++i)
    if (m.parameters()[i].name.rfind("trunk.", 0) != 0)
      head_same &= same_values(m.parameters()[i].tensor, plain.parameters()[i].tensor);
  EXPECT_TRUE(head_same);

  ArchConfig wider = a;
  wider.trunk_width = 5;
  EXPECT_THROW(Model(wider, 1), Error);
  std::filesystem::remove(path);
}

TEST(Model, GradientReachesEveryParameter) {
  Model m(small_arch(), 7);
  const TaskOutputs o = m.forward(batch_images(small_batch(3, 3)), true);
  ops::sum_scalars({ops::sum(o.reid_logits), ops::sum(ops::sigmoid(o.par_logits)), ops::sum(o.dataset_logit),
                    ops::sum(ops::scale(o.reid_features, 0.3)), ops::sum(ops::scale(o.par_features, 0.7))})
      .backward();
  for (const auto& p : m.parameters()) {
    ASSERT_FALSE(p.tensor.grad().empty()) << p.name;
    bool nonzero = false;
    for (double g : p.tensor.grad()) nonzero |= g != 0.0;
    EXPECT_TRUE(nonzero) << p.name;
  }
}

TEST(Model, EvalModeIsBatchIndependent) {
  const Model m(small_arch(), 8);
  const MixedBatch batch = small_batch(3, 3);
  const Tensor all = m.forward(batch_images(batch), false).par_logits;
  MixedBatch one;
  one.b_samples = {batch.b_samples[0]};
  const Tensor single = m.forward(batch_images(one), false).par_logits;
  for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(single.at(0, j), all.at(3, j), 1e-12);
}

TEST(Model, Resnet18Forward) {
  ArchConfig a;
  a.trunk = TrunkKind::resnet18;
  a.num_ids = 4;
  a.num_attributes = 2;
  a.input_size = {32, 32};
  const Model m(a, 1);
  EXPECT_GT(m.parameter_count(), 11'000'000u);
  const TaskOutputs o = m.forward(Tensor::full({2, 3, 32, 32}, 0.5), true);
  EXPECT_EQ(o.reid_logits.shape(), (Shape{2, 4}));
  EXPECT_EQ(o.par_logits.shape(), (Shape{2, 2}));
  for (double v : o.par_logits.data()) EXPECT_TRUE(std::isfinite(v));
}

TEST(Model, BatchLabelsFollowSubBatches) {
  const MixedBatch batch = small_batch(3, 2);
  const BatchLabels l = BatchLabels::from(batch);
  EXPECT_EQ(l.n_a, 3u);
  EXPECT_EQ(l.n_b, 2u);
  EXPECT_EQ(l.person_ids.size(), 3u);
  EXPECT_EQ(l.attributes.size(), 2u * 3u);
  EXPECT_EQ(l.person_ids[1], *batch.a_samples[1].person_id);
}
