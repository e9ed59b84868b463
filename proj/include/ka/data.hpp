#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ka/rng.hpp"

namespace ka {

enum class DatasetId { A, B };
// T1 is person re-identification, T2 is pedestrian attribute recognition.
enum class Task { T1, T2 };

const char* to_string(DatasetId id);
const char* to_string(Task task);

// H×W×C, values in [0, 1].
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::vector<float> pixels;

  float at(std::size_t y, std::size_t x, std::size_t c) const { return pixels[(y * width + x) * channels + c]; }
  float& at(std::size_t y, std::size_t x, std::size_t c) { return pixels[(y * width + x) * channels + c]; }

  friend bool operator==(const Image&, const Image&) = default;
};

Image make_image(std::size_t height, std::size_t width, std::size_t channels, float fill = 0.0f);

struct Sample {
  Image image;
  DatasetId dataset_id = DatasetId::A;
  std::optional<int> person_id;
  std::optional<std::vector<std::uint8_t>> attributes;
  std::optional<int> camera_id;

  friend bool operator==(const Sample&, const Sample&) = default;
};

struct PartialDataset {
  std::vector<Sample> samples;
  Task task_labeled = Task::T1;
  std::size_t num_ids = 0;
  std::size_t num_attributes = 0;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
  DatasetId dataset_id() const { return task_labeled == Task::T1 ? DatasetId::A : DatasetId::B; }

  // Throws ka::Error naming the first violated invariant.
  void validate() const;

  friend bool operator==(const PartialDataset&, const PartialDataset&) = default;
};

// One training batch: the A sub-batch always precedes the B sub-batch when the
// two are stacked into a tensor.
struct MixedBatch {
  std::vector<Sample> a_samples;
  std::vector<Sample> b_samples;

  std::size_t size() const { return a_samples.size() + b_samples.size(); }
};

struct ImageSize {
  std::size_t height = 0;
  std::size_t width = 0;
};

// ---------------------------------------------------------------------------
// Manifests: CSV with header `path,person_id,camera_id,attributes`.
// ---------------------------------------------------------------------------
struct LoadOptions {
  // Resize every image to this size (bilinear). Unset keeps native size, which
  // then must be uniform across the manifest.
  std::optional<ImageSize> resize;
  // Root for relative image paths; defaults to $KA_DATA_ROOT, else the manifest's directory.
  std::optional<std::filesystem::path> data_root;
};

PartialDataset load_dataset(const std::filesystem::path& manifest_path, const LoadOptions& options = {});

// Binary PGM (P5) / PPM (P6), 8-bit.
Image read_pnm(const std::filesystem::path& path);
void write_pnm(const std::filesystem::path& path, const Image& image);
Image resize_bilinear(const Image& image, ImageSize size);

// ---------------------------------------------------------------------------
// Synthetic disjoint-label pair.
// ---------------------------------------------------------------------------
struct SyntheticOptions {
  std::size_t num_cameras = 3;
  std::size_t palette_size = 4;
  double noise_stddev = 0.08;
  // Blend factor of an attribute marker toward white.
  double marker_contrast = 0.6;
  // Maximum whole-pixel jitter of the figure.
  int max_shift = 1;
};

// Dataset A: identities with a fixed latent appearance (upper color, lower
// color, attribute markers); labels person_id + camera_id. Dataset B: fresh
// random appearance per sample; labels attributes only.
std::pair<PartialDataset, PartialDataset> make_synthetic_pair(std::size_t num_ids, std::size_t num_attributes,
                                                              std::size_t samples_per_dataset, ImageSize image_size,
                                                              std::uint64_t seed, const SyntheticOptions& options = {});

// ---------------------------------------------------------------------------
// Sampling.
// ---------------------------------------------------------------------------

// round(batch_size * ratio_a) uniform draws with replacement from A, the rest from B.
MixedBatch sample_batch(const PartialDataset& ds_a, const PartialDataset& ds_b, std::size_t batch_size,
                        double ratio_a, Rng& rng);

// Whole batch from one dataset; lands in a_samples or b_samples by dataset id.
MixedBatch sample_single(const PartialDataset& ds, std::size_t batch_size, Rng& rng);

// ceil(total_samples / batch_size)
std::size_t steps_per_epoch(std::size_t total_samples, std::size_t batch_size);

// Seeded random hold-out of round(fraction * n) samples. Both halves keep the
// source order and the source label space (num_ids / num_attributes).
std::pair<PartialDataset, PartialDataset> split_holdout(const PartialDataset& ds, double fraction, std::uint64_t seed);

// Take the last `count` samples off as a separate dataset.
std::pair<PartialDataset, PartialDataset> split_tail(const PartialDataset& ds, std::size_t count);

}  // namespace ka
