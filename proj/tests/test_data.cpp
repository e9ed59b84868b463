#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>

#include "ka/data.hpp"
#include "ka/error.hpp"

using namespace ka;
namespace fs = std::filesystem;

namespace {

class TempDir {
 public:
  TempDir() {
    path_ = fs::temp_directory_path() / ("ka_data_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) +
                                         "_" + ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

Image gradient_image(std::size_t h, std::size_t w, std::size_t c, float base) {
  Image img = make_image(h, w, c);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t k = 0; k < c; ++k) img.at(y, x, k) = std::fmod(base + 0.1f * y + 0.05f * x + 0.3f * k, 1.0f);
  return img;
}

void write_manifest(const fs::path& p, const std::string& body) {
  std::ofstream(p) << "path,person_id,camera_id,attributes\n" << body;
}

}  // namespace

// --- manifests ----------------------------------------------------------------

TEST(LoadDataset, ReidManifestWithThreeRows) {
  TempDir dir;
  for (int i = 0; i < 3; ++i) write_pnm(dir.path() / ("img" + std::to_string(i) + ".ppm"), gradient_image(4, 3, 3, 0.1f * i));
  write_manifest(dir.path() / "a.csv", "img0.ppm,17,0,\nimg1.ppm,5,1,\nimg2.ppm,17,2,\n");
  const auto ds = load_dataset(dir.path() / "a.csv");
  EXPECT_EQ(ds.size(), 3u);
  EXPECT_EQ(ds.task_labeled, Task::T1);
  EXPECT_EQ(ds.num_ids, 2u);
  // dense remap in sorted order: 5 -> 0, 17 -> 1; order follows the manifest
  EXPECT_EQ(*ds.samples[0].person_id, 1);
  EXPECT_EQ(*ds.samples[1].person_id, 0);
  EXPECT_EQ(*ds.samples[2].camera_id, 2);
  EXPECT_FALSE(ds.samples[0].attributes.has_value());
}

TEST(LoadDataset, AttributeManifest) {
  TempDir dir;
  write_pnm(dir.path() / "x.pgm", gradient_image(4, 3, 1, 0.2f));
  write_manifest(dir.path() / "b.csv", "x.pgm,,,101\nx.pgm,,,001\n");
  const auto ds = load_dataset(dir.path() / "b.csv");
  EXPECT_EQ(ds.task_labeled, Task::T2);
  EXPECT_EQ(ds.num_attributes, 3u);
  EXPECT_EQ(*ds.samples[0].attributes, (std::vector<std::uint8_t>{1, 0, 1}));
  EXPECT_EQ(ds.samples[0].dataset_id, DatasetId::B);
}

TEST(LoadDataset, EmptyManifestIsError) {
  TempDir dir;
  write_manifest(dir.path() / "e.csv", "");
  try {
    load_dataset(dir.path() / "e.csv");
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("empty dataset"), std::string::npos);
  }
}

TEST(LoadDataset, MixedLabelsNameTheRow) {
  TempDir dir;
  write_pnm(dir.path() / "x.pgm", gradient_image(4, 3, 1, 0.2f));
  write_manifest(dir.path() / "m.csv", "x.pgm,1,0,\nx.pgm,2,0,01\n");
  try {
    load_dataset(dir.path() / "m.csv");
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("row 2"), std::string::npos);
  }
}

TEST(LoadDataset, SchemaViolations) {
  TempDir dir;
  write_pnm(dir.path() / "x.pgm", gradient_image(4, 3, 1, 0.2f));
  std::ofstream(dir.path() / "h.csv") << "path,id\nx.pgm,1\n";
  EXPECT_THROW(load_dataset(dir.path() / "h.csv"), Error);
  write_manifest(dir.path() / "t.csv", "x.pgm,1,0,\nx.pgm,,,01\n");
  EXPECT_THROW(load_dataset(dir.path() / "t.csv"), Error);
  write_manifest(dir.path() / "b.csv", "x.pgm,,,012\n");
  EXPECT_THROW(load_dataset(dir.path() / "b.csv"), Error);
  write_manifest(dir.path() / "n.csv", "x.pgm,-3,0,\n");
  EXPECT_THROW(load_dataset(dir.path() / "n.csv"), Error);
  EXPECT_THROW(load_dataset(dir.path() / "missing.csv"), Error);
}

TEST(LoadDataset, DataRootFromEnvironmentAndResize) {
  TempDir dir;
  fs::create_directories(dir.path() / "imgs");
  fs::create_directories(dir.path() / "lists");
  write_pnm(dir.path() / "imgs" / "x.ppm", gradient_image(8, 6, 3, 0.0f));
  write_pnm(dir.path() / "imgs" / "y.ppm", gradient_image(5, 4, 3, 0.5f));
  write_manifest(dir.path() / "lists" / "a.csv", "x.ppm,0,0,\ny.ppm,1,1,\n");
  EXPECT_THROW(load_dataset(dir.path() / "lists" / "a.csv"), Error);
  ::setenv("KA_DATA_ROOT", (dir.path() / "imgs").c_str(), 1);
  EXPECT_THROW(load_dataset(dir.path() / "lists" / "a.csv"), Error);  // sizes differ
  LoadOptions opts;
  opts.resize = ImageSize{4, 2};
  const auto ds = load_dataset(dir.path() / "lists" / "a.csv", opts);
  ::unsetenv("KA_DATA_ROOT");
  EXPECT_EQ(ds.samples[1].image.height, 4u);
  EXPECT_EQ(ds.samples[1].image.width, 2u);
}

TEST(Pnm, RoundTripIsWithinQuantization) {
  TempDir dir;
  const Image img = gradient_image(5, 7, 3, 0.3f);
  write_pnm(dir.path() / "r.ppm", img);
  const Image back = read_pnm(dir.path() / "r.ppm");
  ASSERT_EQ(back.pixels.size(), img.pixels.size());
  for (std::size_t i = 0; i < img.pixels.size(); ++i) EXPECT_NEAR(back.pixels[i], img.pixels[i], 0.5 / 255 + 1e-6);
}

TEST(Resize, IdentityAndConstant) {
  const Image img = gradient_image(6, 4, 3, 0.1f);
  EXPECT_EQ(resize_bilinear(img, {6, 4}), img);
  const Image flat = make_image(5, 5, 1, 0.25f);
  for (float v : resize_bilinear(flat, {3, 7}).pixels) EXPECT_FLOAT_EQ(v, 0.25f);
}

// --- synthetic pair -----------------------------------------------------------

TEST(Synthetic, Deterministic) {
  const auto p1 = make_synthetic_pair(4, 3, 40, {32, 16}, 7);
  const auto p2 = make_synthetic_pair(4, 3, 40, {32, 16}, 7);
  EXPECT_EQ(p1.first, p2.first);
  EXPECT_EQ(p1.second, p2.second);
  const auto p3 = make_synthetic_pair(4, 3, 40, {32, 16}, 8);
  EXPECT_NE(p1.first, p3.first);
}

TEST(Synthetic, Invariants) {
  const auto [a, b] = make_synthetic_pair(4, 3, 40, {32, 16}, 7);
  a.validate();
  b.validate();
  EXPECT_EQ(a.task_labeled, Task::T1);
  EXPECT_EQ(b.task_labeled, Task::T2);
  std::set<int> ids;
  for (const auto& s : a.samples) {
    ASSERT_TRUE(s.person_id.has_value());
    EXPECT_FALSE(s.attributes.has_value());
    EXPECT_GE(*s.person_id, 0);
    EXPECT_LT(*s.person_id, 4);
    ids.insert(*s.person_id);
    for (float v : s.image.pixels) {
      EXPECT_GE(v, 0.0f);
      EXPECT_LE(v, 1.0f);
    }
  }
  EXPECT_EQ(ids.size(), 4u);
  for (const auto& s : b.samples) {
    ASSERT_TRUE(s.attributes.has_value());
    EXPECT_FALSE(s.person_id.has_value());
    EXPECT_EQ(s.attributes->size(), 3u);
    for (auto v : *s.attributes) EXPECT_TRUE(v == 0 || v == 1);
  }
}

TEST(Synthetic, BadCounts) {
  EXPECT_THROW(make_synthetic_pair(1, 3, 40, {32, 16}, 7), Error);
  EXPECT_THROW(make_synthetic_pair(4, 0, 40, {32, 16}, 7), Error);
  EXPECT_THROW(make_synthetic_pair(4, 3, 0, {32, 16}, 7), Error);
}

TEST(Synthetic, SameIdentitySharesAppearanceAcrossSamples) {
  // Mean image distance within an identity is below the mean across identities.
  const auto [a, b] = make_synthetic_pair(6, 3, 120, {32, 16}, 11);
  auto d2 = [](const Image& x, const Image& y) {
    double s = 0;
    for (std::size_t i = 0; i < x.pixels.size(); ++i) s += (x.pixels[i] - y.pixels[i]) * (x.pixels[i] - y.pixels[i]);
    return s;
  };
  double same = 0, diff = 0;
  int ns = 0, nd = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = i + 1; j < a.size(); ++j) {
      const double v = d2(a.samples[i].image, a.samples[j].image);
      if (*a.samples[i].person_id == *a.samples[j].person_id)
        same += v, ++ns;
      else
        diff += v, ++nd;
    }
  EXPECT_LT(same / ns, diff / nd);
}

// --- sampling -----------------------------------------------------------------

TEST(SampleBatch, SplitsByRatio) {
  const auto [a, b] = make_synthetic_pair(4, 3, 40, {16, 8}, 7);
  Rng rng(1);
  auto m = sample_batch(a, b, 64, 0.5, rng);
  EXPECT_EQ(m.a_samples.size(), 32u);
  EXPECT_EQ(m.b_samples.size(), 32u);
  m = sample_batch(a, b, 4, 0.75, rng);
  EXPECT_EQ(m.a_samples.size(), 3u);
  EXPECT_EQ(m.b_samples.size(), 1u);
  for (const auto& s : m.a_samples) EXPECT_TRUE(s.person_id && !s.attributes);
  for (const auto& s : m.b_samples) EXPECT_TRUE(s.attributes && !s.person_id);
}

TEST(SampleBatch, EmptySubBatchRejected) {
  const auto [a, b] = make_synthetic_pair(4, 3, 40, {16, 8}, 7);
  Rng rng(1);
  try {
    sample_batch(a, b, 4, 0.05, rng);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("empty sub-batch"), std::string::npos);
  }
  EXPECT_THROW(sample_batch(a, PartialDataset{{}, Task::T2, 0, 3}, 8, 0.5, rng), Error);
}

TEST(SampleBatch, DeterministicGivenRngState) {
  const auto [a, b] = make_synthetic_pair(4, 3, 40, {16, 8}, 7);
  Rng r1(9), r2(9);
  for (int i = 0; i < 5; ++i) {
    const auto x = sample_batch(a, b, 8, 0.5, r1), y = sample_batch(a, b, 8, 0.5, r2);
    EXPECT_EQ(x.a_samples, y.a_samples);
    EXPECT_EQ(x.b_samples, y.b_samples);
  }
  EXPECT_EQ(r1, r2);
}

TEST(SampleBatch, SelectionFrequencyIsUniform) {
  // Tag samples through their camera ids so draws can be counted.
  PartialDataset a;
  a.task_labeled = Task::T1;
  a.num_ids = 1;
  const std::size_t n = 10;
  for (std::size_t i = 0; i < n; ++i) {
    Sample s;
    s.image = make_image(1, 1, 1);
    s.person_id = 0;
    s.camera_id = static_cast<int>(i);
    a.samples.push_back(s);
  }
  PartialDataset b;
  b.task_labeled = Task::T2;
  b.num_attributes = 1;
  Sample sb;
  sb.image = make_image(1, 1, 1);
  sb.dataset_id = DatasetId::B;
  sb.attributes = std::vector<std::uint8_t>{1};
  b.samples.push_back(sb);

  Rng rng(5);
  std::vector<double> counts(n, 0.0);
  const int batches = 10000;
  const std::size_t per = 4;
  for (int t = 0; t < batches; ++t)
    for (const auto& s : sample_batch(a, b, 2 * per, 0.5, rng).a_samples) counts[static_cast<std::size_t>(*s.camera_id)] += 1;
  const double draws = static_cast<double>(batches) * per, p = 1.0 / n;
  const double mean = draws * p, sigma = std::sqrt(draws * p * (1 - p));
  for (double c : counts) EXPECT_LE(std::fabs(c - mean), 3 * sigma);
}

TEST(StepsPerEpoch, Ceil) {
  EXPECT_EQ(steps_per_epoch(100, 32), 4u);
  EXPECT_EQ(steps_per_epoch(96, 32), 3u);
  EXPECT_EQ(steps_per_epoch(1, 32), 1u);
}

TEST(Split, HoldoutKeepsOrderAndLabelSpace) {
  const auto [a, b] = make_synthetic_pair(8, 3, 50, {16, 8}, 7);
  const auto [train, val] = split_holdout(a, 0.1, 3);
  EXPECT_EQ(val.size(), 5u);
  EXPECT_EQ(train.size() + val.size(), a.size());
  EXPECT_EQ(train.num_ids, a.num_ids);
  EXPECT_EQ(val.num_ids, a.num_ids);
  const auto again = split_holdout(a, 0.1, 3);
  EXPECT_EQ(again.second, val);
  const auto tail = split_tail(b, 10);
  EXPECT_EQ(tail.second.size(), 10u);
  EXPECT_EQ(tail.second.samples.front(), b.samples[40]);
}
