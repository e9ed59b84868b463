#pragma once

#include "ka/data.hpp"
#include "ka/rng.hpp"

namespace ka {

struct AugmentConfig {
  double flip_prob = 0.5;
  int crop_pad = 2;
  // Strong view only.
  double brightness = 0.4;  // factor drawn from [1 - b, 1 + b]
  double contrast = 0.4;
  double erase_prob = 0.5;
  double erase_min_area = 0.02;
  double erase_max_area = 0.2;
};

// Horizontal flip + pad-and-crop translation (edge replicated).
Image weak_augment(const Image& img, const AugmentConfig& cfg, Rng& rng);
// Weak augmentation followed by brightness/contrast jitter and random erasing.
Image strong_augment(const Image& img, const AugmentConfig& cfg, Rng& rng);

MixedBatch weak_augment(const MixedBatch& batch, const AugmentConfig& cfg, Rng& rng);
MixedBatch strong_augment(const MixedBatch& batch, const AugmentConfig& cfg, Rng& rng);

}  // namespace ka
