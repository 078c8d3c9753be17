#pragma once

// 12-parameter color enhancement used for gallery thumbnails.
//
// Parameter layout (each in [0,1], 0.5 = no change):
//   [0] brightness  [1] contrast  [2] saturation
//   [3..5] shadows RGB  [6..8] midtones RGB  [9..11] highlights RGB
//
// Per pixel, on channels linearized with v = (byte/255)^2.2:
//   1. brightness   v += 2(b - 0.5) * kBrightnessGain
//   2. contrast     v = (v - 0.5) * tan((c*0.9 + 0.05) pi/2) / tan(pi/4) + 0.5
//   3. tonal        v_ch += 2(t_ch - 0.5) * kToneGain * w_region(L0)
//                   L0 = luminance before step 1; w_shadow = (1-L0)^2,
//                   w_mid = 2 L0 (1-L0), w_high = L0^2
//   4. saturation   v = L + 2s (v - L), L = current luminance
//   clamp to [0,1], byte = floor(255 v^(1/2.2) + 0.5)

#include "metapo/plane.hpp"

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

namespace metapo {

inline constexpr int kEnhancementParams = 12;
inline constexpr double kGamma = 2.2;
inline constexpr double kBrightnessGain = 0.5;
inline constexpr double kContrastSpan = 0.9;
inline constexpr double kContrastFloor = 0.05;
inline constexpr double kToneGain = 0.3;
inline constexpr std::array<double, 3> kLumaWeights{0.2126, 0.7152, 0.0722};
inline constexpr int kThumbnailSide = 256;

struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // row-major RGB

  RgbImage() = default;
  RgbImage(int w, int h, std::uint8_t fill = 0)
      : width(w), height(h), pixels(static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * 3, fill) {}

  bool empty() const noexcept { return width <= 0 || height <= 0; }
  std::uint8_t* at(int x, int y) { return &pixels[(static_cast<std::size_t>(y) * width + x) * 3]; }
  const std::uint8_t* at(int x, int y) const { return &pixels[(static_cast<std::size_t>(y) * width + x) * 3]; }
  bool operator==(const RgbImage&) const = default;
};

struct EnhancementParams {
  double brightness = 0.5;
  double contrast = 0.5;
  double saturation = 0.5;
  std::array<double, 3> shadows{0.5, 0.5, 0.5};
  std::array<double, 3> midtones{0.5, 0.5, 0.5};
  std::array<double, 3> highlights{0.5, 0.5, 0.5};

  static EnhancementParams from_vector(const ParamVector& p) {
    if (p.size() != kEnhancementParams) throw InvalidInput("enhancement parameters need exactly 12 values");
    if (!in_unit_cube(p)) throw InvalidInput("enhancement parameters must lie in [0,1]");
    EnhancementParams e;
    e.brightness = p[0];
    e.contrast = p[1];
    e.saturation = p[2];
    for (int c = 0; c < 3; ++c) {
      e.shadows[static_cast<std::size_t>(c)] = p[3 + c];
      e.midtones[static_cast<std::size_t>(c)] = p[6 + c];
      e.highlights[static_cast<std::size_t>(c)] = p[9 + c];
    }
    return e;
  }
  ParamVector to_vector() const {
    ParamVector p(kEnhancementParams);
    p << brightness, contrast, saturation, shadows[0], shadows[1], shadows[2], midtones[0], midtones[1], midtones[2],
        highlights[0], highlights[1], highlights[2];
    return p;
  }
};

namespace detail {

inline const std::array<double, 256>& linear_table() {
  static const std::array<double, 256> t = [] {
    std::array<double, 256> a{};
    for (int i = 0; i < 256; ++i) a[static_cast<std::size_t>(i)] = std::pow(i / 255.0, kGamma);
    return a;
  }();
  return t;
}

inline std::uint8_t encode_channel(double v) {
  v = std::clamp(v, 0.0, 1.0);
  const double s = std::floor(255.0 * std::pow(v, 1.0 / kGamma) + 0.5);
  return static_cast<std::uint8_t>(std::clamp(s, 0.0, 255.0));
}

inline double luma(const std::array<double, 3>& v) {
  return kLumaWeights[0] * v[0] + kLumaWeights[1] * v[1] + kLumaWeights[2] * v[2];
}

}  // namespace detail

/// Linear-space channel values after steps 1-4, before clamping.
inline std::array<double, 3> enhance_linear(const std::array<double, 3>& in, const EnhancementParams& p) {
  std::array<double, 3> v = in;
  const double l0 = detail::luma(in);
  const double brightness = 2.0 * (p.brightness - 0.5) * kBrightnessGain;
  const double slope = std::tan((p.contrast * kContrastSpan + kContrastFloor) * M_PI / 2.0) / std::tan(M_PI / 4.0);
  const double ws = (1.0 - l0) * (1.0 - l0), wm = 2.0 * l0 * (1.0 - l0), wh = l0 * l0;
  for (std::size_t c = 0; c < 3; ++c) {
    v[c] += brightness;
    v[c] = (v[c] - 0.5) * slope + 0.5;
    v[c] += 2.0 * kToneGain *
            ((p.shadows[c] - 0.5) * ws + (p.midtones[c] - 0.5) * wm + (p.highlights[c] - 0.5) * wh);
  }
  const double l = detail::luma(v);
  const double sat = 2.0 * p.saturation;
  for (auto& x : v) x = l + sat * (x - l);
  return v;
}

inline RgbImage render(const RgbImage& image, const EnhancementParams& p) {
  if (image.empty()) throw InvalidInput("render: empty image");
  if (image.pixels.size() != static_cast<std::size_t>(image.width) * image.height * 3)
    throw InvalidInput("render: pixel buffer does not match dimensions");
  const auto& lin = detail::linear_table();
  RgbImage out(image.width, image.height);
  for (std::size_t i = 0; i < image.pixels.size(); i += 3) {
    const std::array<double, 3> in{lin[image.pixels[i]], lin[image.pixels[i + 1]], lin[image.pixels[i + 2]]};
    const auto v = enhance_linear(in, p);
    for (std::size_t c = 0; c < 3; ++c) out.pixels[i + c] = detail::encode_channel(v[c]);
  }
  return out;
}

inline RgbImage render(const RgbImage& image, const ParamVector& p) {
  return render(image, EnhancementParams::from_vector(p));
}

/// Area-average resample so the longest side is at most `max_side`.
inline RgbImage downscale(const RgbImage& image, int max_side = kThumbnailSide) {
  if (image.empty()) throw InvalidInput("downscale: empty image");
  const int longest = std::max(image.width, image.height);
  if (longest <= max_side) return image;
  const double scale = static_cast<double>(longest) / max_side;
  const int w = std::max(1, static_cast<int>(std::lround(image.width / scale)));
  const int h = std::max(1, static_cast<int>(std::lround(image.height / scale)));
  const double sx = static_cast<double>(image.width) / w, sy = static_cast<double>(image.height) / h;

  // Coverage of source pixel range [k, k+1) by destination cell [i*s, (i+1)*s).
  auto spans = [](int n_dst, double s, int n_src) {
    std::vector<std::vector<std::pair<int, double>>> out(static_cast<std::size_t>(n_dst));
    for (int i = 0; i < n_dst; ++i) {
      const double lo = i * s, hi = std::min<double>(n_src, (i + 1) * s);
      for (int k = static_cast<int>(std::floor(lo)); k < n_src && k < hi; ++k) {
        const double wgt = std::min<double>(k + 1, hi) - std::max<double>(k, lo);
        if (wgt > 0) out[static_cast<std::size_t>(i)].push_back({k, wgt});
      }
    }
    return out;
  };
  const auto xs = spans(w, sx, image.width), ys = spans(h, sy, image.height);
  RgbImage out(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc[3] = {0, 0, 0}, total = 0.0;
      for (const auto& [py, wy] : ys[static_cast<std::size_t>(y)]) {
        for (const auto& [px, wx] : xs[static_cast<std::size_t>(x)]) {
          const double wgt = wx * wy;
          const std::uint8_t* s = image.at(px, py);
          for (int c = 0; c < 3; ++c) acc[c] += wgt * s[c];
          total += wgt;
        }
      }
      std::uint8_t* d = out.at(x, y);
      for (int c = 0; c < 3; ++c) d[c] = static_cast<std::uint8_t>(std::clamp(std::floor(acc[c] / total + 0.5), 0.0, 255.0));
    }
  }
  return out;
}

/// 25 renders of the downscaled image, one per grid cell in row-major order.
inline std::vector<RgbImage> thumbnail_grid(const RgbImage& image, const SearchPlane& plane) {
  if (plane.dimension() != kEnhancementParams) throw InvalidInput("thumbnail_grid: plane dimension must be 12");
  const RgbImage small = downscale(image);
  std::vector<RgbImage> out;
  out.reserve(plane.grid.size());
  for (const auto& p : plane.grid) out.push_back(render(small, p));
  return out;
}

/// Smooth synthetic test picture: hue sweep horizontally, value ramp vertically, soft disc.
inline RgbImage demo_image(int width = 320, int height = 240) {
  RgbImage img(width, height);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const double u = (x + 0.5) / width, v = (y + 0.5) / height;
      const double dx = u - 0.62, dy = v - 0.45;
      const double disc = std::exp(-(dx * dx + dy * dy) / 0.02);
      const double r = 0.55 + 0.35 * std::sin(2 * M_PI * u) * (1 - v) + 0.2 * disc;
      const double g = 0.35 + 0.45 * v + 0.1 * std::cos(3 * M_PI * u);
      const double b = 0.25 + 0.5 * (1 - v) * u + 0.25 * disc;
      std::uint8_t* d = img.at(x, y);
      d[0] = static_cast<std::uint8_t>(std::clamp(std::floor(255 * r + 0.5), 0.0, 255.0));
      d[1] = static_cast<std::uint8_t>(std::clamp(std::floor(255 * g + 0.5), 0.0, 255.0));
      d[2] = static_cast<std::uint8_t>(std::clamp(std::floor(255 * b + 0.5), 0.0, 255.0));
    }
  }
  return img;
}

}  // namespace metapo
