#pragma once

// Procedural H&E-like textures with grade-dependent statistics, used in place
// of real slides for desk-scale runs. Higher grades get more, smaller and
// darker nuclei and fewer lumen spaces.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sslgrade/data/image.hpp"
#include "sslgrade/data/manifest.hpp"
#include "sslgrade/error.hpp"
#include "sslgrade/random.hpp"

namespace sslgrade {

inline constexpr std::size_t kSynthPatchSize = 128;

struct GradeTexture {
  std::size_t nuclei;
  double radius_lo, radius_hi;
  std::array<float, 3> nucleus_rgb;
  std::size_t lumens;
  double lumen_radius_lo, lumen_radius_hi;
  std::array<float, 3> stroma_rgb;
};

inline const GradeTexture& grade_texture(Grade g) {
  static const std::array<GradeTexture, kGradeCount> table{{
      {14, 5.0, 7.5, {160.f, 110.f, 185.f}, 3, 12.0, 18.0, {238.f, 186.f, 210.f}},
      {36, 3.8, 5.2, {128.f, 78.f, 165.f}, 2, 8.0, 12.0, {232.f, 176.f, 206.f}},
      {72, 2.8, 3.8, {100.f, 55.f, 145.f}, 1, 4.0, 6.0, {222.f, 164.f, 200.f}},
      {140, 1.8, 2.8, {72.f, 38.f, 128.f}, 0, 0.0, 0.0, {206.f, 150.f, 196.f}},
  }};
  return table.at(static_cast<std::size_t>(g));
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

inline Image synth_patch(Grade grade, std::uint64_t seed, std::size_t index, std::size_t size = kSynthPatchSize) {
  const auto& tex = grade_texture(grade);
  Rng rng(splitmix64(seed ^ splitmix64((static_cast<std::uint64_t>(grade) << 32) | index)));
  Image img(size, size, 3);

  // Stroma with a smooth low-frequency tint plus pixel noise.
  const double fx = rng.uniform(0.02, 0.08), fy = rng.uniform(0.02, 0.08), phase = rng.uniform(0.0, 6.283);
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) {
      const double wave = 6.0 * std::sin(fx * static_cast<double>(x) + fy * static_cast<double>(y) + phase);
      for (std::size_t c = 0; c < 3; ++c)
        img.at(x, y, c) = static_cast<float>(tex.stroma_rgb[c] + wave + rng.uniform(-6.0, 6.0));
    }

  auto disc = [&](double cx, double cy, double r, const std::array<float, 3>& rgb, double jitter) {
    const auto x0 = static_cast<long>(std::floor(cx - r)), x1 = static_cast<long>(std::ceil(cx + r));
    const auto y0 = static_cast<long>(std::floor(cy - r)), y1 = static_cast<long>(std::ceil(cy + r));
    for (long y = std::max(0L, y0); y <= std::min(static_cast<long>(size) - 1, y1); ++y)
      for (long x = std::max(0L, x0); x <= std::min(static_cast<long>(size) - 1, x1); ++x) {
        const double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
        if (dx * dx + dy * dy > r * r) continue;
        for (std::size_t c = 0; c < 3; ++c)
          img.at(static_cast<std::size_t>(x), static_cast<std::size_t>(y), c) =
              static_cast<float>(rgb[c] + rng.uniform(-jitter, jitter));
      }
  };

  const std::array<float, 3> lumen{248.f, 244.f, 248.f};
  for (std::size_t i = 0; i < tex.lumens; ++i)
    disc(rng.uniform(0.0, static_cast<double>(size)), rng.uniform(0.0, static_cast<double>(size)),
         rng.uniform(tex.lumen_radius_lo, tex.lumen_radius_hi), lumen, 3.0);
  for (std::size_t i = 0; i < tex.nuclei; ++i)
    disc(rng.uniform(0.0, static_cast<double>(size)), rng.uniform(0.0, static_cast<double>(size)),
         rng.uniform(tex.radius_lo, tex.radius_hi), tex.nucleus_rgb, 10.0);

  for (auto& v : img.pixels) v = std::clamp(v, 0.0f, 255.0f);
  return img;
}

// Writes PNG patches under out_dir/patches and a synth.json description.
// Returned record paths are relative to out_dir.
inline std::vector<PatchRecord> synth_generate(const std::array<std::size_t, kGradeCount>& per_class,
                                               std::uint64_t seed, const std::filesystem::path& out_dir) {
  std::vector<PatchRecord> records;
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "patches", ec);
  if (ec) throw DataError("cannot create " + (out_dir / "patches").string() + ": " + ec.message());
  for (std::size_t g = 0; g < kGradeCount; ++g)
    for (std::size_t i = 0; i < per_class[g]; ++i) {
      const auto grade = static_cast<Grade>(g);
      char name[64];
      std::snprintf(name, sizeof name, "%s_%05zu.png", std::string(grade_name(grade)).c_str(), i);
      const auto rel = std::filesystem::path("patches") / name;
      write_image(synth_patch(grade, seed, i), out_dir / rel);
      records.push_back({rel.generic_string(), "synth", 0, 0, grade, Split::unassigned});
    }
  nlohmann::json meta{{"seed", seed},
                      {"per_class", {{"NC", per_class[0]}, {"G3", per_class[1]}, {"G4", per_class[2]}, {"G5", per_class[3]}}},
                      {"patch_size", kSynthPatchSize}};
  std::ofstream out(out_dir / "synth.json", std::ios::trunc);
  if (!out) throw DataError("cannot write " + (out_dir / "synth.json").string());
  out << meta.dump(2) << '\n';
  return records;
}

}  // namespace sslgrade
