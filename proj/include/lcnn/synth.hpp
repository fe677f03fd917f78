#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <string>

#include "lcnn/augment.hpp"
#include "lcnn/error.hpp"
#include "lcnn/image.hpp"
#include "lcnn/rng.hpp"

namespace lcnn {

/// Parameters of the synthetic scan generator. The background (textured body
/// on black) never exceeds kSynthBackgroundMax, so with lesion_intensity.lo
/// above it every positive image is brighter than any negative.
struct SynthOptions {
  std::size_t size = 100;
  Range lesion_intensity{0.8, 1.0};
  Range lesion_radius{4.0, 10.0};
};

inline constexpr double kSynthBackgroundMax = 0.6;

/// Textured elliptical "body" on a black frame.
inline ImageBuffer synth_background(std::size_t size, Rng& rng) {
  const double n = static_cast<double>(size);
  ImageBuffer noise(size, size);
  for (auto& p : noise.pixels) p = static_cast<float>(rng.uniform());
  // coarse texture: heavily blurred noise, rescaled around zero
  const ImageBuffer coarse = gaussian_blur(noise, n / 25.0);
  const double base = rng.uniform(0.25, 0.4);
  const double ry = n * rng.uniform(0.38, 0.47), rx = n * rng.uniform(0.38, 0.47);
  const double cy = (n - 1) / 2 + rng.uniform(-0.03, 0.03) * n, cx = (n - 1) / 2 + rng.uniform(-0.03, 0.03) * n;
  ImageBuffer img(size, size);
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) {
      const double dy = (static_cast<double>(y) - cy) / ry, dx = (static_cast<double>(x) - cx) / rx;
      if (dx * dx + dy * dy > 1.0) continue;
      const double texture = 2.5 * (coarse.at(y, x) - 0.5);
      const double grain = rng.uniform(-0.04, 0.04);
      img.at(y, x) = static_cast<float>(std::clamp(base + texture + grain, 0.05, kSynthBackgroundMax));
    }
  return img;
}

/// Paints a bright, softly edged, randomly oriented ellipse inside the body.
inline void synth_lesion(ImageBuffer& img, const SynthOptions& opt, Rng& rng) {
  const double n = static_cast<double>(img.height);
  const double a = rng.uniform_closed(opt.lesion_radius.lo, opt.lesion_radius.hi);
  const double b = a * rng.uniform(0.6, 1.0);
  const double phi = rng.uniform(0.0, std::numbers::pi);
  const double intensity = rng.uniform_closed(opt.lesion_intensity.lo, opt.lesion_intensity.hi);
  // keep the centre well inside the body ellipse
  const double reach = 0.3 * n;
  const double t = rng.uniform(0.0, 2 * std::numbers::pi), r = reach * std::sqrt(rng.uniform());
  const double cy = (n - 1) / 2 + r * std::sin(t), cx = (n - 1) / 2 + r * std::cos(t);
  const double c = std::cos(phi), s = std::sin(phi);
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x) {
      const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
      const double u = (c * dx + s * dy) / a, v = (-s * dx + c * dy) / b;
      const double rho = std::sqrt(u * u + v * v);
      if (rho >= 1.0) continue;
      const double alpha = std::clamp((1.0 - rho) * 3.0, 0.0, 1.0);
      img.at(y, x) = static_cast<float>(std::clamp((1 - alpha) * img.at(y, x) + alpha * intensity, 0.0, 1.0));
    }
}

struct SynthPair {
  ImageBuffer normal;
  ImageBuffer tumor;
};

/// Pair i of a synthetic dataset; deterministic in (seed, i).
inline SynthPair synth_pair(std::uint64_t seed, std::size_t index, const SynthOptions& opt = {}) {
  Rng rng(derive_seed(derive_seed(seed, "synth"), index));
  SynthPair p;
  p.normal = synth_background(opt.size, rng);
  p.tumor = synth_background(opt.size, rng);
  synth_lesion(p.tumor, opt, rng);
  return p;
}

/// Writes count/2 normal and count - count/2 tumor PNGs under out/normal and out/tumor.
inline void generate_synthetic_dataset(std::size_t count, const std::filesystem::path& out, std::uint64_t seed,
                                       const SynthOptions& opt = {}) {
  namespace fs = std::filesystem;
  if (count < 2) throw InputError("synth: count must be >= 2");
  std::error_code ec;
  fs::create_directories(out / "normal", ec);
  fs::create_directories(out / "tumor", ec);
  if (!fs::is_directory(out / "normal") || !fs::is_directory(out / "tumor"))
    throw InputError("synth: cannot create output directories under " + out.string());
  const std::size_t normals = count / 2, tumors = count - normals;
  char name[32];
  for (std::size_t i = 0; i < tumors; ++i) {
    const auto pair = synth_pair(seed, i, opt);
    std::snprintf(name, sizeof name, "img_%05zu.png", i);
    if (i < normals) write_png(pair.normal, out / "normal" / name);
    write_png(pair.tumor, out / "tumor" / name);
  }
}

}  // namespace lcnn
