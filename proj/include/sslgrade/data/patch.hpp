#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "sslgrade/data/image.hpp"
#include "sslgrade/error.hpp"

namespace sslgrade {

struct PatchParams {
  std::size_t patch_size = 512;
  double overlap = 0.5;
  std::size_t target_size = 128;

  std::size_t stride() const {
    if (!(overlap >= 0.0 && overlap < 1.0)) throw ShapeError("overlap must be in [0, 1)");
    const auto s = static_cast<long>(std::lround(static_cast<double>(patch_size) * (1.0 - overlap)));
    if (s < 1) throw ShapeError("patch stride must be at least 1");
    return static_cast<std::size_t>(s);
  }
};

// Window origins along one axis: 0, stride, ... while the window fits.
inline std::vector<std::size_t> window_origins(std::size_t extent, std::size_t patch, std::size_t stride) {
  std::vector<std::size_t> out;
  if (patch == 0 || stride == 0 || extent < patch) return out;
  for (std::size_t o = 0; o + patch <= extent; o += stride) out.push_back(o);
  return out;
}

// Bilinear resampling with half-pixel centres: output pixel i samples source
// coordinate (i + 0.5) * in / out - 0.5, clamped to the image.
inline Image resize_bilinear(const Image& src, std::size_t out_w, std::size_t out_h) {
  if (src.width == 0 || src.height == 0 || out_w == 0 || out_h == 0)
    throw ShapeError("resize_bilinear: sizes must be positive");
  if (out_w == src.width && out_h == src.height) return src;
  Image out(out_w, out_h, src.channels);
  struct Tap {
    std::size_t i0, i1;
    float t;
  };
  auto taps = [](std::size_t in, std::size_t outn) {
    std::vector<Tap> v(outn);
    const double scale = static_cast<double>(in) / static_cast<double>(outn);
    for (std::size_t i = 0; i < outn; ++i) {
      double s = (static_cast<double>(i) + 0.5) * scale - 0.5;
      s = std::clamp(s, 0.0, static_cast<double>(in - 1));
      const auto i0 = static_cast<std::size_t>(std::floor(s));
      const std::size_t i1 = std::min(i0 + 1, in - 1);
      v[i] = {i0, i1, static_cast<float>(s - static_cast<double>(i0))};
    }
    return v;
  };
  const auto tx = taps(src.width, out_w);
  const auto ty = taps(src.height, out_h);
  for (std::size_t y = 0; y < out_h; ++y)
    for (std::size_t x = 0; x < out_w; ++x)
      for (std::size_t c = 0; c < src.channels; ++c) {
        const float top = src.at(tx[x].i0, ty[y].i0, c) * (1.0f - tx[x].t) + src.at(tx[x].i1, ty[y].i0, c) * tx[x].t;
        const float bot = src.at(tx[x].i0, ty[y].i1, c) * (1.0f - tx[x].t) + src.at(tx[x].i1, ty[y].i1, c) * tx[x].t;
        out.at(x, y, c) = top * (1.0f - ty[y].t) + bot * ty[y].t;
      }
  return out;
}

inline Image resize_bilinear(const Image& src, std::size_t size) { return resize_bilinear(src, size, size); }

struct Patch {
  std::size_t x = 0;
  std::size_t y = 0;
  Image pixels;  // resized to target_size
};

// Sliding-window extraction. Windows lie fully inside the image; an image
// smaller than one window yields no patches.
inline std::vector<Patch> patchify(const Image& img, const PatchParams& p) {
  const std::size_t stride = p.stride();
  if (p.target_size == 0) throw ShapeError("target size must be positive");
  std::vector<Patch> out;
  const auto xs = window_origins(img.width, p.patch_size, stride);
  const auto ys = window_origins(img.height, p.patch_size, stride);
  out.reserve(xs.size() * ys.size());
  for (auto y : ys)
    for (auto x : xs)
      out.push_back({x, y, resize_bilinear(crop(img, x, y, p.patch_size, p.patch_size), p.target_size)});
  return out;
}

}  // namespace sslgrade
