#include "ka/augment.hpp"

#include <algorithm>
#include <cmath>

namespace ka {

Image weak_augment(const Image& img, const AugmentConfig& cfg, Rng& rng) {
  const bool flip = rng.uniform() < cfg.flip_prob;
  const int span = 2 * cfg.crop_pad + 1;
  const int dy = static_cast<int>(rng.index(static_cast<std::uint64_t>(span))) - cfg.crop_pad;
  const int dx = static_cast<int>(rng.index(static_cast<std::uint64_t>(span))) - cfg.crop_pad;
  Image out = make_image(img.height, img.width, img.channels);
  const int h = static_cast<int>(img.height), w = static_cast<int>(img.width);
  for (int y = 0; y < h; ++y) {
    const int sy = std::clamp(y + dy, 0, h - 1);
    for (int x = 0; x < w; ++x) {
      int sx = std::clamp(x + dx, 0, w - 1);
      if (flip) sx = w - 1 - sx;
      for (std::size_t c = 0; c < img.channels; ++c)
        out.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x), c) =
            img.at(static_cast<std::size_t>(sy), static_cast<std::size_t>(sx), c);
    }
  }
  return out;
}

Image strong_augment(const Image& img, const AugmentConfig& cfg, Rng& rng) {
  Image out = weak_augment(img, cfg, rng);
  const double b = rng.uniform(1.0 - cfg.brightness, 1.0 + cfg.brightness);
  const double k = rng.uniform(1.0 - cfg.contrast, 1.0 + cfg.contrast);
  double mean = 0.0;
  for (float p : out.pixels) mean += p;
  mean /= static_cast<double>(out.pixels.size());
  for (auto& p : out.pixels) p = static_cast<float>(std::clamp(((p - mean) * k + mean) * b, 0.0, 1.0));

  if (rng.uniform() < cfg.erase_prob) {
    const double area = rng.uniform(cfg.erase_min_area, cfg.erase_max_area) * static_cast<double>(img.height * img.width);
    const double aspect = std::exp(rng.uniform(std::log(0.3), std::log(3.3)));
    const auto eh = std::clamp<std::size_t>(static_cast<std::size_t>(std::sqrt(area * aspect)), 1, img.height);
    const auto ew = std::clamp<std::size_t>(static_cast<std::size_t>(std::sqrt(area / aspect)), 1, img.width);
    const std::size_t y0 = rng.index(img.height - eh + 1), x0 = rng.index(img.width - ew + 1);
    for (std::size_t y = y0; y < y0 + eh; ++y)
      for (std::size_t x = x0; x < x0 + ew; ++x)
        for (std::size_t c = 0; c < img.channels; ++c) out.at(y, x, c) = static_cast<float>(rng.uniform());
  }
  return out;
}

namespace {

template <typename Fn>
MixedBatch map_images(const MixedBatch& batch, Fn&& fn) {
  MixedBatch out = batch;
  for (auto* group : {&out.a_samples, &out.b_samples})
    for (auto& s : *group) s.image = fn(s.image);
  return out;
}

}  // namespace

MixedBatch weak_augment(const MixedBatch& batch, const AugmentConfig& cfg, Rng& rng) {
  return map_images(batch, [&](const Image& im) { return weak_augment(im, cfg, rng); });
}

MixedBatch strong_augment(const MixedBatch& batch, const AugmentConfig& cfg, Rng& rng) {
  return map_images(batch, [&](const Image& im) { return strong_augment(im, cfg, rng); });
}

}  // namespace ka
