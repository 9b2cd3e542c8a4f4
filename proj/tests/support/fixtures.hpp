#pragma once

#include <cmath>
#include <filesystem>
#include <random>
#include <string>

#include "drscreen/grading.hpp"
#include "drscreen/imaging.hpp"
#include "drscreen/model/checkpoint.hpp"
#include "drscreen/model/densenet.hpp"
#include "drscreen/random.hpp"

namespace drscreen::testing {

/// Fundus-like synthetic: a bright disk on black, tinted by grade so a small
/// network can separate the classes. Raw 0..255 intensities.
inline ImageTensor synthetic_fundus(int height, int width, Grade g, std::uint64_t seed) {
  Rng rng(seed);
  ImageTensor img(height, width);
  const double cy = (height - 1) / 2.0, cx = (width - 1) / 2.0;
  const double radius = 0.45 * std::min(height, width);
  const double base[3] = {70.0 + 40.0 * g.value(), 190.0 - 35.0 * g.value(), 60.0 + 25.0 * (g.value() % 3)};
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const bool inside = std::hypot(y - cy, x - cx) <= radius;
      for (int c = 0; c < 3; ++c) {
        const double v = inside ? base[c] + rng.uniform(-12.0, 12.0) : rng.uniform(0.0, 6.0);
        img.at(y, x, c) = static_cast<float>(std::clamp(std::round(v), 0.0, 255.0));
      }
    }
  }
  return img;
}

inline ImageTensor synthetic_input(int side, Grade g, std::uint64_t seed) {
  return normalize(synthetic_fundus(side, side, g, seed));
}

inline model::Checkpoint tiny_checkpoint(std::uint64_t seed) {
  const auto cfg = model::ModelConfig::tiny();
  return {cfg, model::build(cfg, seed), {{"seed", seed}}};
}

/// Unique scratch directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("drscreen-test-" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace drscreen::testing
