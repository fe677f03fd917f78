#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "lcnn/image.hpp"
#include "lcnn/rng.hpp"

namespace lcnn {

inline constexpr std::size_t kModelImageSize = 100;

struct Range {
  double lo = 0.0;
  double hi = 0.0;
};

/// Magnitude ranges for the random augmentation pipeline. Hue is not modelled;
/// images are single-channel so brightness and contrast carry the photometric jitter.
struct AugmentConfig {
  Range blur_sigma{0.0, 1.5};
  double brightness_delta = 0.1;
  Range contrast{0.8, 1.2};
  double rotation_max_deg = 15.0;
  double translate_max_frac = 0.1;
  Range zoom{0.9, 1.15};
  double crop_threshold = 0.02;
  std::size_t out_size = kModelImageSize;

  void validate() const {
    auto check = [](const Range& r, const char* name, bool positive) {
      if (!(r.lo <= r.hi)) throw std::invalid_argument(std::string("augment: empty range for ") + name);
      if (positive ? !(r.lo > 0) : !(r.lo >= 0)) throw std::invalid_argument(std::string("augment: bad lower bound for ") + name);
    };
    check(blur_sigma, "blur sigma", false);
    check(contrast, "contrast", true);
    check(zoom, "zoom", true);
    if (!(brightness_delta >= 0)) throw std::invalid_argument("augment: brightness delta must be >= 0");
    if (!(rotation_max_deg >= 0)) throw std::invalid_argument("augment: rotation max must be >= 0");
    if (!(translate_max_frac >= 0 && translate_max_frac < 1))
      throw std::invalid_argument("augment: translate fraction must be in [0,1)");
    if (!(crop_threshold >= 0 && crop_threshold < 1)) throw std::invalid_argument("augment: crop threshold must be in [0,1)");
    if (out_size == 0) throw std::invalid_argument("augment: output size must be positive");
  }

  /// Every stage at its neutral value.
  static AugmentConfig identity() {
    AugmentConfig c;
    c.blur_sigma = {0.0, 0.0};
    c.brightness_delta = 0.0;
    c.contrast = {1.0, 1.0};
    c.rotation_max_deg = 0.0;
    c.translate_max_frac = 0.0;
    c.zoom = {1.0, 1.0};
    return c;
  }
};

/// Normalized 1-D Gaussian taps of radius ceil(2 sigma).
inline std::vector<double> gaussian_kernel(double sigma) {
  const auto radius = static_cast<std::size_t>(std::ceil(2.0 * sigma));
  std::vector<double> k(2 * radius + 1);
  double sum = 0.0;
  for (std::size_t i = 0; i < k.size(); ++i) {
    const double d = static_cast<double>(i) - static_cast<double>(radius);
    k[i] = std::exp(-d * d / (2.0 * sigma * sigma));
    sum += k[i];
  }
  for (auto& v : k) v /= sum;
  return k;
}

/// Separable Gaussian blur with edge replication. sigma == 0 is the identity.
inline ImageBuffer gaussian_blur(const ImageBuffer& img, double sigma) {
  if (!(sigma >= 0)) throw std::invalid_argument("gaussian_blur: sigma must be >= 0");
  if (sigma == 0.0) return img;
  const auto k = gaussian_kernel(sigma);
  const auto r = static_cast<std::ptrdiff_t>(k.size() / 2);
  const auto h = static_cast<std::ptrdiff_t>(img.height), w = static_cast<std::ptrdiff_t>(img.width);
  auto clampi = [](std::ptrdiff_t v, std::ptrdiff_t n) { return std::clamp<std::ptrdiff_t>(v, 0, n - 1); };

  std::vector<double> tmp(img.size());
  for (std::ptrdiff_t y = 0; y < h; ++y)
    for (std::ptrdiff_t x = 0; x < w; ++x) {
      double s = 0.0;
      for (std::ptrdiff_t t = -r; t <= r; ++t) s += k[t + r] * img.pixels[y * w + clampi(x + t, w)];
      tmp[y * w + x] = s;
    }
  ImageBuffer out(img.height, img.width);
  for (std::ptrdiff_t y = 0; y < h; ++y)
    for (std::ptrdiff_t x = 0; x < w; ++x) {
      double s = 0.0;
      for (std::ptrdiff_t t = -r; t <= r; ++t) s += k[t + r] * tmp[clampi(y + t, h) * w + x];
      out.pixels[y * w + x] = static_cast<float>(s);
    }
  out.clamp();
  return out;
}

/// pixel <- clamp(contrast * (pixel - mean) + mean + brightness).
inline ImageBuffer color_jitter(const ImageBuffer& img, double brightness, double contrast) {
  if (!(contrast > 0)) throw std::invalid_argument("color_jitter: contrast must be positive");
  const double mean = img.mean();
  ImageBuffer out(img.height, img.width);
  for (std::size_t i = 0; i < img.size(); ++i)
    out.pixels[i] = static_cast<float>(contrast * (img.pixels[i] - mean) + mean + brightness);
  out.clamp();
  return out;
}

namespace detail {

// Bilinear sample at (y, x) in pixel-centre coordinates; neighbours outside the frame read as 0.
inline double sample_zero(const ImageBuffer& img, double y, double x) {
  const double fy = std::floor(y), fx = std::floor(x);
  const auto y0 = static_cast<std::ptrdiff_t>(fy), x0 = static_cast<std::ptrdiff_t>(fx);
  const double ty = y - fy, tx = x - fx;
  const auto h = static_cast<std::ptrdiff_t>(img.height), w = static_cast<std::ptrdiff_t>(img.width);
  auto px = [&](std::ptrdiff_t yy, std::ptrdiff_t xx) -> double {
    if (yy < 0 || xx < 0 || yy >= h || xx >= w) return 0.0;
    return img.pixels[static_cast<std::size_t>(yy * w + xx)];
  };
  return (1 - ty) * ((1 - tx) * px(y0, x0) + tx * px(y0, x0 + 1)) + ty * ((1 - tx) * px(y0 + 1, x0) + tx * px(y0 + 1, x0 + 1));
}

// Bilinear sample with coordinates clamped to the frame (edge replication).
inline double sample_clamped(const ImageBuffer& img, double y, double x) {
  y = std::clamp(y, 0.0, static_cast<double>(img.height - 1));
  x = std::clamp(x, 0.0, static_cast<double>(img.width - 1));
  const auto y0 = static_cast<std::size_t>(y), x0 = static_cast<std::size_t>(x);
  const std::size_t y1 = std::min(y0 + 1, img.height - 1), x1 = std::min(x0 + 1, img.width - 1);
  const double ty = y - static_cast<double>(y0), tx = x - static_cast<double>(x0);
  return (1 - ty) * ((1 - tx) * img.at(y0, x0) + tx * img.at(y0, x1)) + ty * ((1 - tx) * img.at(y1, x0) + tx * img.at(y1, x1));
}

}  // namespace detail

/// Rotation about the image centre, counter-clockwise as displayed (rows grow
/// downward). Bilinear; samples from outside the frame are black.
inline ImageBuffer rotate(const ImageBuffer& img, double degrees) {
  if (degrees == 0.0) return img;
  const double theta = degrees * std::numbers::pi / 180.0;
  const double c = std::cos(theta), s = std::sin(theta);
  const double cy = (static_cast<double>(img.height) - 1) / 2.0, cx = (static_cast<double>(img.width) - 1) / 2.0;
  ImageBuffer out(img.height, img.width);
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x) {
      const double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
      const double sx = cx + c * dx - s * dy;
      const double sy = cy + s * dx + c * dy;
      out.at(y, x) = static_cast<float>(detail::sample_zero(img, sy, sx));
    }
  out.clamp();
  return out;
}

/// Moves content right by dx and down by dy; vacated pixels are black.
inline ImageBuffer translate(const ImageBuffer& img, std::ptrdiff_t dx, std::ptrdiff_t dy) {
  const auto h = static_cast<std::ptrdiff_t>(img.height), w = static_cast<std::ptrdiff_t>(img.width);
  if (std::abs(dx) >= w || std::abs(dy) >= h) throw std::invalid_argument("translate: shift must be smaller than the image");
  ImageBuffer out(img.height, img.width);
  for (std::ptrdiff_t y = 0; y < h; ++y)
    for (std::ptrdiff_t x = 0; x < w; ++x) {
      const auto sy = y - dy, sx = x - dx;
      if (sy >= 0 && sx >= 0 && sy < h && sx < w) out.pixels[y * w + x] = img.pixels[sy * w + sx];
    }
  return out;
}

/// Views a centred window of (h/scale) x (w/scale) pixels and resamples it to
/// out_h x out_w. scale > 1 zooms in; scale < 1 zooms out, padding by edge replication.
inline ImageBuffer zoom_resize(const ImageBuffer& img, double scale, std::size_t out_h, std::size_t out_w) {
  if (!(scale > 0)) throw std::invalid_argument("zoom_resize: scale must be positive");
  if (out_h == 0 || out_w == 0) throw std::invalid_argument("zoom_resize: output size must be positive");
  const double view_h = static_cast<double>(img.height) / scale, view_w = static_cast<double>(img.width) / scale;
  const double y0 = (static_cast<double>(img.height) - view_h) / 2.0, x0 = (static_cast<double>(img.width) - view_w) / 2.0;
  ImageBuffer out(out_h, out_w);
  for (std::size_t y = 0; y < out_h; ++y) {
    const double sy = y0 + (static_cast<double>(y) + 0.5) * view_h / static_cast<double>(out_h) - 0.5;
    for (std::size_t x = 0; x < out_w; ++x) {
      const double sx = x0 + (static_cast<double>(x) + 0.5) * view_w / static_cast<double>(out_w) - 0.5;
      out.at(y, x) = static_cast<float>(detail::sample_clamped(img, sy, sx));
    }
  }
  out.clamp();
  return out;
}

inline ImageBuffer resize(const ImageBuffer& img, std::size_t out_h, std::size_t out_w) {
  if (img.height == out_h && img.width == out_w) return img;
  return zoom_resize(img, 1.0, out_h, out_w);
}

struct CropResult {
  ImageBuffer image;
  bool all_dark = false;  // nothing exceeded the threshold; image returned unchanged
};

/// Tight bounding box of pixels brighter than `threshold`.
inline CropResult autocrop_black(const ImageBuffer& img, double threshold) {
  if (!(threshold >= 0 && threshold < 1)) throw std::invalid_argument("autocrop_black: threshold must be in [0,1)");
  std::size_t top = img.height, bottom = 0, left = img.width, right = 0;
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x)
      if (img.at(y, x) > threshold) {
        top = std::min(top, y);
        bottom = std::max(bottom, y);
        left = std::min(left, x);
        right = std::max(right, x);
      }
  if (top == img.height) return {img, true};
  ImageBuffer out(bottom - top + 1, right - left + 1);
  for (std::size_t y = top; y <= bottom; ++y)
    for (std::size_t x = left; x <= right; ++x) out.at(y - top, x - left) = img.at(y, x);
  return {std::move(out), false};
}

/// Magnitudes drawn for one augmented sample.
struct AugmentParams {
  double sigma = 0.0;
  double brightness = 0.0;
  double contrast = 1.0;
  double degrees = 0.0;
  std::ptrdiff_t dx = 0;
  std::ptrdiff_t dy = 0;
  double scale = 1.0;
};

inline AugmentParams sample_augment_params(const AugmentConfig& cfg, std::size_t height, std::size_t width, Rng& rng) {
  cfg.validate();
  AugmentParams p;
  p.sigma = rng.uniform_closed(cfg.blur_sigma.lo, cfg.blur_sigma.hi);
  p.brightness = rng.uniform_closed(-cfg.brightness_delta, cfg.brightness_delta);
  p.contrast = rng.uniform_closed(cfg.contrast.lo, cfg.contrast.hi);
  p.degrees = rng.uniform_closed(-cfg.rotation_max_deg, cfg.rotation_max_deg);
  const double fx = rng.uniform_closed(-cfg.translate_max_frac, cfg.translate_max_frac);
  const double fy = rng.uniform_closed(-cfg.translate_max_frac, cfg.translate_max_frac);
  p.dx = static_cast<std::ptrdiff_t>(std::lround(fx * static_cast<double>(width)));
  p.dy = static_cast<std::ptrdiff_t>(std::lround(fy * static_cast<double>(height)));
  p.scale = rng.uniform_closed(cfg.zoom.lo, cfg.zoom.hi);
  return p;
}

/// blur -> jitter -> rotate -> translate -> zoom -> autocrop -> resize to out_size.
inline ImageBuffer apply_augment(const ImageBuffer& img, const AugmentParams& p, const AugmentConfig& cfg,
                                 bool* all_dark = nullptr) {
  ImageBuffer x = gaussian_blur(img, p.sigma);
  x = color_jitter(x, p.brightness, p.contrast);
  x = rotate(x, p.degrees);
  x = translate(x, p.dx, p.dy);
  x = zoom_resize(x, p.scale, x.height, x.width);
  auto cropped = autocrop_black(x, cfg.crop_threshold);
  if (all_dark) *all_dark = cropped.all_dark;
  return resize(cropped.image, cfg.out_size, cfg.out_size);
}

inline ImageBuffer augment_sample(const ImageBuffer& img, const AugmentConfig& cfg, Rng& rng) {
  return apply_augment(img, sample_augment_params(cfg, img.height, img.width, rng), cfg);
}

}  // namespace lcnn
