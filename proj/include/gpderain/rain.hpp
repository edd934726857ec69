#pragma once

// Synthetic rainy/clean pairs under the additive model rainy = clean + residual,
// procedural clean images, cropping and labeled/unlabeled splitting.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numbers>
#include <string>
#include <vector>

#include "gpderain/error.hpp"
#include "gpderain/image.hpp"
#include "gpderain/rng.hpp"

namespace gpderain::rain {

using image::ImagePatch;

template <typename T>
struct Range {
  T lo{};
  T hi{};
  bool operator==(const Range&) const = default;
};

struct RainParams {
  Range<int> streak_count{6, 12};
  Range<double> length{5.0, 12.0};
  /// Degrees from vertical.
  Range<double> angle{-10.0, 10.0};
  Range<double> intensity{0.2, 0.5};
  double thickness = 1.0;
  int blur_taps = 3;
  std::uint64_t seed = 0;

  void validate() const {
    if (streak_count.lo < 0 || streak_count.lo > streak_count.hi) fail(ErrorKind::Config, "bad streak_count range");
    if (length.lo < 0.0 || length.lo > length.hi) fail(ErrorKind::Config, "bad length range");
    if (angle.lo > angle.hi) fail(ErrorKind::Config, "bad angle range");
    if (intensity.lo < 0.0 || intensity.hi > 1.0 || intensity.lo > intensity.hi)
      fail(ErrorKind::Config, "intensity range must be ordered within [0, 1]");
    if (!(thickness > 0.0)) fail(ErrorKind::Config, "thickness must be > 0");
    if (blur_taps < 1 || blur_taps % 2 == 0) fail(ErrorKind::Config, "blur_taps must be a positive odd integer");
  }
};

/// Light, near-vertical streaks; used for labeled pairs.
inline RainParams labeled_regime() { return RainParams{}; }

/// Denser, longer, more slanted and blurrier streaks; emulates the synthetic-to-real gap.
inline RainParams shifted_regime() {
  RainParams p;
  p.streak_count = {10, 20};
  p.length = {8.0, 18.0};
  p.angle = {-30.0, 30.0};
  p.intensity = {0.25, 0.55};
  p.thickness = 1.5;
  p.blur_taps = 5;
  return p;
}

inline RainParams regime_by_name(const std::string& name) {
  if (name == "labeled") return labeled_regime();
  if (name == "shifted") return shifted_regime();
  fail(ErrorKind::Config, "unknown rain regime '" + name + "'");
}

struct RainyPair {
  ImagePatch rainy;
  /// Before clipping; always >= 0.
  ImagePatch residual;
};

namespace detail {

inline double segment_distance(double px, double py, double ax, double ay, double bx, double by) {
  const double vx = bx - ax, vy = by - ay;
  const double len2 = vx * vx + vy * vy;
  double t = len2 > 0.0 ? ((px - ax) * vx + (py - ay) * vy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double dx = px - (ax + t * vx), dy = py - (ay + t * vy);
  return std::sqrt(dx * dx + dy * dy);
}

inline double sample_bilinear(const std::vector<double>& img, int h, int w, double y, double x) {
  const int x0 = static_cast<int>(std::floor(x)), y0 = static_cast<int>(std::floor(y));
  const double fx = x - x0, fy = y - y0;
  auto at = [&](int yy, int xx) {
    return (yy < 0 || yy >= h || xx < 0 || xx >= w) ? 0.0 : img[static_cast<std::size_t>(yy) * w + xx];
  };
  return (1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x0 + 1)) + fy * ((1 - fx) * at(y0 + 1, x0) + fx * at(y0 + 1, x0 + 1));
}

}  // namespace detail

/// Renders anti-aliased streak segments, blurs them along the streak direction
/// with `blur_taps` taps, and adds the result to `clean`.
inline RainyPair generate_streaks(const ImagePatch& clean, const RainParams& p) {
  p.validate();
  const int h = clean.shape.h, w = clean.shape.w;
  Rng rng(derive_seed(p.seed, 0x5241494eULL));
  const int count = uniform_int(rng, p.streak_count.lo, p.streak_count.hi);
  std::vector<double> layer(static_cast<std::size_t>(h) * w, 0.0);
  const double deg = std::numbers::pi / 180.0;
  // All streaks in one image share a dominant direction with small jitter.
  const double base_angle = uniform(rng, p.angle.lo, p.angle.hi);
  for (int s = 0; s < count; ++s) {
    const double cx = uniform(rng, 0.0, w), cy = uniform(rng, 0.0, h);
    const double len = uniform(rng, p.length.lo, p.length.hi);
    const double theta = std::clamp(base_angle + uniform(rng, -3.0, 3.0), p.angle.lo, p.angle.hi) * deg;
    const double amp = uniform(rng, p.intensity.lo, p.intensity.hi);
    const double dx = std::sin(theta) * len / 2, dy = std::cos(theta) * len / 2;
    const double ax = cx - dx, ay = cy - dy, bx = cx + dx, by = cy + dy;
    const double reach = p.thickness / 2 + 1.0;
    const int x0 = std::max(0, static_cast<int>(std::floor(std::min(ax, bx) - reach)));
    const int x1 = std::min(w - 1, static_cast<int>(std::ceil(std::max(ax, bx) + reach)));
    const int y0 = std::max(0, static_cast<int>(std::floor(std::min(ay, by) - reach)));
    const int y1 = std::min(h - 1, static_cast<int>(std::ceil(std::max(ay, by) + reach)));
    for (int yy = y0; yy <= y1; ++yy)
      for (int xx = x0; xx <= x1; ++xx) {
        const double d = detail::segment_distance(xx + 0.5, yy + 0.5, ax, ay, bx, by);
        const double coverage = std::clamp(p.thickness / 2 + 0.5 - d, 0.0, 1.0);
        layer[static_cast<std::size_t>(yy) * w + xx] += amp * coverage;
      }
  }

  RainyPair out{clean, ImagePatch(clean.shape, 0.0)};
  const double ux = std::sin(base_angle * deg), uy = std::cos(base_angle * deg);
  const int half = p.blur_taps / 2;
  for (int yy = 0; yy < h; ++yy)
    for (int xx = 0; xx < w; ++xx) {
      double acc = 0.0;
      for (int t = -half; t <= half; ++t) acc += detail::sample_bilinear(layer, h, w, yy + t * uy, xx + t * ux);
      const double r = acc / p.blur_taps;
      for (int c = 0; c < clean.shape.c; ++c) {
        out.residual.at(c, yy, xx) = r;
        out.rainy.at(c, yy, xx) = std::clamp(clean.at(c, yy, xx) + r, 0.0, 1.0);
      }
    }
  return out;
}

/// Procedural stand-ins for natural clean images: a smooth random field plus a
/// few flat shapes at varied contrast. Image i depends only on (seed, i).
inline ImagePatch make_base_image(int h, int w, std::uint64_t seed, std::uint64_t index) {
  Rng rng(derive_seed(seed, 0x42415345ULL, index));
  ImagePatch img = image::make_patch(h, w);
  const int grid = uniform_int(rng, 3, 6);
  std::vector<double> coarse(static_cast<std::size_t>(grid + 1) * (grid + 1));
  const double base = uniform(rng, 0.2, 0.6);
  const double contrast = uniform(rng, 0.05, 0.3);
  for (double& v : coarse) v = base + contrast * (uniform01(rng) - 0.5);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double gy = static_cast<double>(y) * grid / std::max(1, h - 1);
      const double gx = static_cast<double>(x) * grid / std::max(1, w - 1);
      const int iy = std::min(grid - 1, static_cast<int>(gy)), ix = std::min(grid - 1, static_cast<int>(gx));
      const double fy = gy - iy, fx = gx - ix;
      auto c = [&](int a, int b) { return coarse[static_cast<std::size_t>(a) * (grid + 1) + b]; };
      img.at(0, y, x) = (1 - fy) * ((1 - fx) * c(iy, ix) + fx * c(iy, ix + 1)) +
                        fy * ((1 - fx) * c(iy + 1, ix) + fx * c(iy + 1, ix + 1));
    }
  const int shapes = uniform_int(rng, 1, 4);
  for (int s = 0; s < shapes; ++s) {
    const bool disc = uniform01(rng) < 0.5;
    const double cx = uniform(rng, 0.0, w), cy = uniform(rng, 0.0, h);
    const double rx = uniform(rng, 2.0, w / 3.0), ry = uniform(rng, 2.0, h / 3.0);
    const double delta = uniform(rng, -0.3, 0.3);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double nx = (x + 0.5 - cx) / rx, ny = (y + 0.5 - cy) / ry;
        const bool inside = disc ? (nx * nx + ny * ny <= 1.0) : (std::abs(nx) <= 1.0 && std::abs(ny) <= 1.0);
        if (inside) img.at(0, y, x) += delta;
      }
  }
  for (double& v : img.values) v = std::clamp(v, 0.0, 1.0);
  return img;
}

inline std::vector<ImagePatch> make_base_images(int count, int h, int w, std::uint64_t seed) {
  if (count < 1) fail(ErrorKind::Config, "make_base_images needs count >= 1");
  if (h < 1 || w < 1) fail(ErrorKind::Config, "image size must be positive");
  std::vector<ImagePatch> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) out.push_back(make_base_image(h, w, seed, static_cast<std::uint64_t>(i)));
  return out;
}

struct ImagePair {
  ImagePatch rainy;
  ImagePatch clean;
  std::string id;
};

struct UnlabeledImage {
  ImagePatch rainy;
  std::string id;
};

struct DatasetSplit {
  std::vector<ImagePair> labeled;
  std::vector<UnlabeledImage> unlabeled;
  double fraction_labeled = 1.0;
};

/// Offsets drawn uniformly; the same window is cut from both images.
inline ImagePair random_crop(const ImagePair& pair, int size, Rng& rng) {
  require_same_shape(pair.rainy, pair.clean, "random_crop");
  const Shape s = pair.rainy.shape;
  if (size > s.h || size > s.w || size < 1)
    fail(ErrorKind::Size, "crop " + std::to_string(size) + " does not fit image " + s.str());
  const int oy = uniform_int(rng, 0, s.h - size);
  const int ox = uniform_int(rng, 0, s.w - size);
  ImagePair out{Tensor(Shape{s.c, size, size}), Tensor(Shape{s.c, size, size}), pair.id};
  for (int c = 0; c < s.c; ++c)
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        out.rainy.at(c, y, x) = pair.rainy.at(c, oy + y, ox + x);
        out.clean.at(c, y, x) = pair.clean.at(c, oy + y, ox + x);
      }
  return out;
}

inline ImagePatch random_crop(const ImagePatch& img, int size, Rng& rng) {
  return random_crop(ImagePair{img, img, {}}, size, rng).rainy;
}

/// Window at the image centre (rounded towards the top-left).
inline ImagePatch center_crop(const ImagePatch& img, int size) {
  const Shape s = img.shape;
  if (size > s.h || size > s.w || size < 1)
    fail(ErrorKind::Size, "crop " + std::to_string(size) + " does not fit image " + s.str());
  const int oy = (s.h - size) / 2, ox = (s.w - size) / 2;
  ImagePatch out(Shape{s.c, size, size});
  for (int c = 0; c < s.c; ++c)
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) out.at(c, y, x) = img.at(c, oy + y, ox + x);
  return out;
}

inline std::size_t labeled_count(std::size_t n, double fraction) {
  if (!(fraction > 0.0 && fraction <= 1.0)) fail(ErrorKind::Config, "fraction_labeled must lie in (0, 1]");
  const auto k = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  return std::clamp<std::size_t>(k, 1, n);
}

struct SplitIndices {
  std::vector<std::size_t> labeled;
  std::vector<std::size_t> unlabeled;
};

/// Seeded shuffle, then a prefix of round(fraction * n) (at least one) is labeled.
inline SplitIndices split_indices(std::size_t n, double fraction, std::uint64_t seed) {
  if (n == 0) fail(ErrorKind::Config, "cannot split an empty dataset");
  const std::size_t k = labeled_count(n, fraction);
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(derive_seed(seed, 0x53504c54ULL));
  shuffle(order, rng);
  SplitIndices out;
  out.labeled.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
  out.unlabeled.assign(order.begin() + static_cast<std::ptrdiff_t>(k), order.end());
  return out;
}

inline DatasetSplit split(const std::vector<ImagePair>& dataset, double fraction, std::uint64_t seed) {
  const auto idx = split_indices(dataset.size(), fraction, seed);
  DatasetSplit out;
  out.fraction_labeled = fraction;
  for (auto i : idx.labeled) out.labeled.push_back(dataset[i]);
  for (auto i : idx.unlabeled) out.unlabeled.push_back({dataset[i].rainy, dataset[i].id});
  return out;
}

struct GenerationConfig {
  int count = 200;
  int height = 32;
  int width = 32;
  double fraction_labeled = 0.1;
  std::uint64_t seed = 0;
  std::string unlabeled_regime = "shifted";
  int test_count = 0;
};

struct GeneratedData {
  DatasetSplit split;
  /// Held-out pairs rendered with the unlabeled regime.
  std::vector<ImagePair> test;
};

inline std::string image_id(const char* prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s%04zu", prefix, i);
  return buf;
}

/// Labeled members get the labeled regime; unlabeled members (and the test set)
/// get `unlabeled_regime`. Pure function of the config.
inline GeneratedData generate_dataset(const GenerationConfig& cfg) {
  const auto bases = make_base_images(cfg.count, cfg.height, cfg.width, cfg.seed);
  const auto idx = split_indices(bases.size(), cfg.fraction_labeled, cfg.seed);
  const RainParams lab = labeled_regime();
  const RainParams unl = regime_by_name(cfg.unlabeled_regime);
  GeneratedData out;
  out.split.fraction_labeled = cfg.fraction_labeled;
  for (std::size_t j = 0; j < idx.labeled.size(); ++j) {
    const auto i = idx.labeled[j];
    RainParams p = lab;
    p.seed = derive_seed(cfg.seed, 0x4c414231ULL, i);
    out.split.labeled.push_back({generate_streaks(bases[i], p).rainy, bases[i], image_id("", j)});
  }
  for (std::size_t j = 0; j < idx.unlabeled.size(); ++j) {
    const auto i = idx.unlabeled[j];
    RainParams p = unl;
    p.seed = derive_seed(cfg.seed, 0x554e4c31ULL, i);
    out.split.unlabeled.push_back({generate_streaks(bases[i], p).rainy, image_id("", j)});
  }
  if (cfg.test_count > 0) {
    const auto test_bases = make_base_images(cfg.test_count, cfg.height, cfg.width, derive_seed(cfg.seed, 0x54455354ULL));
    for (std::size_t i = 0; i < test_bases.size(); ++i) {
      RainParams p = unl;
      p.seed = derive_seed(cfg.seed, 0x54535431ULL, i);
      out.test.push_back({generate_streaks(test_bases[i], p).rainy, test_bases[i], image_id("", i)});
    }
  }
  return out;
}

}  // namespace gpderain::rain
