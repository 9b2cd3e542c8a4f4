#include "drscreen/imaging.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "drscreen/error.hpp"

namespace drscreen {

ImageTensor::ImageTensor(int height, int width) : height_(height), width_(width) {
  if (height <= 0 || width <= 0) {
    throw ShapeError("image dimensions must be positive, got " + std::to_string(height) + "x" +
                     std::to_string(width));
  }
  data_.assign(static_cast<std::size_t>(height) * width * kChannels, 0.0f);
}

ImageTensor::ImageTensor(int height, int width, std::vector<float> data)
    : height_(height), width_(width), data_(std::move(data)) {
  if (height <= 0 || width <= 0) throw ShapeError("image dimensions must be positive");
  if (data_.size() != static_cast<std::size_t>(height) * width * kChannels) {
    throw ShapeError("image buffer size does not match " + std::to_string(height) + "x" +
                     std::to_string(width) + "x3");
  }
}

void AugmentConfig::validate() const {
  auto check_p = [](double p, const char* name) {
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError(std::string(name) + " must lie in [0, 1]");
  };
  check_p(p_zoom, "p_zoom");
  check_p(p_hflip, "p_hflip");
  check_p(p_vflip, "p_vflip");
  if (!(zoom_min > 0.0) || !(zoom_max >= zoom_min) || !std::isfinite(zoom_max)) {
    throw ConfigError("zoom_range must be a non-empty interval inside (0, inf)");
  }
}

ImageTensor normalize(const ImageTensor& img) {
  ImageTensor out = img;
  for (float& v : out.values()) {
    if (!(v >= 0.0f && v <= 255.0f)) {
      throw RangeError("pixel intensity " + std::to_string(v) + " outside [0, 255]");
    }
    v = v / 255.0f;
  }
  return out;
}

CropRect centered_square(int height, int width) noexcept {
  const int side = std::min(height, width);
  return {(width - side) / 2, (height - side) / 2, side};
}

void check_crop(const CropRect& r, int height, int width) {
  if (r.side <= 0 || r.x < 0 || r.y < 0 || r.x > width - r.side || r.y > height - r.side) {
    throw BoundsError("crop {x=" + std::to_string(r.x) + ", y=" + std::to_string(r.y) +
                      ", side=" + std::to_string(r.side) + "} does not fit a " +
                      std::to_string(width) + "x" + std::to_string(height) + " image");
  }
}

ImageTensor square_crop(const ImageTensor& img, std::optional<CropRect> rect) {
  const CropRect r = rect.value_or(centered_square(img.height(), img.width()));
  check_crop(r, img.height(), img.width());
  ImageTensor out(r.side, r.side);
  const std::size_t row_len = static_cast<std::size_t>(r.side) * ImageTensor::kChannels;
  for (int row = 0; row < r.side; ++row) {
    const float* src = &img.values()[(static_cast<std::size_t>(r.y + row) * img.width() + r.x) *
                                     ImageTensor::kChannels];
    std::copy_n(src, row_len, &out.values()[static_cast<std::size_t>(row) * row_len]);
  }
  return out;
}

namespace {

struct Tap {
  int lo;
  int hi;
  float frac;
};

// Source taps for half-pixel-center sampling, clamped to the valid range.
std::vector<Tap> bilinear_taps(int in, int out) {
  std::vector<Tap> taps(out);
  const double scale = static_cast<double>(in) / out;
  for (int i = 0; i < out; ++i) {
    double src = (i + 0.5) * scale - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const int lo = static_cast<int>(std::floor(src));
    const int hi = std::min(lo + 1, in - 1);
    taps[i] = {lo, hi, static_cast<float>(src - lo)};
  }
  return taps;
}

}  // namespace

ImageTensor resize_bilinear(const ImageTensor& img, int target) {
  if (target <= 0) throw ShapeError("resize target must be positive");
  if (!img.is_square()) {
    throw ShapeError("resize_bilinear expects a square image, got " +
                     std::to_string(img.width()) + "x" + std::to_string(img.height()));
  }
  if (target == img.height()) return img;
  const auto taps = bilinear_taps(img.height(), target);
  ImageTensor out(target, target);
  for (int r = 0; r < target; ++r) {
    const Tap& ty = taps[r];
    for (int c = 0; c < target; ++c) {
      const Tap& tx = taps[c];
      for (int ch = 0; ch < ImageTensor::kChannels; ++ch) {
        const float p00 = img.at(ty.lo, tx.lo, ch), p01 = img.at(ty.lo, tx.hi, ch);
        const float p10 = img.at(ty.hi, tx.lo, ch), p11 = img.at(ty.hi, tx.hi, ch);
        // Lerp form keeps constant regions exact; the clamp absorbs rounding
        // so the output never leaves the range of its four taps.
        const float top = p00 + (p01 - p00) * tx.frac;
        const float bottom = p10 + (p11 - p10) * tx.frac;
        const float v = top + (bottom - top) * ty.frac;
        out.at(r, c, ch) = std::clamp(v, std::min({p00, p01, p10, p11}),
                                      std::max({p00, p01, p10, p11}));
      }
    }
  }
  return out;
}

ImageTensor flip(const ImageTensor& img, FlipAxis axis) {
  ImageTensor out(img.height(), img.width());
  for (int r = 0; r < img.height(); ++r) {
    for (int c = 0; c < img.width(); ++c) {
      const int sr = axis == FlipAxis::kVertical ? img.height() - 1 - r : r;
      const int sc = axis == FlipAxis::kHorizontal ? img.width() - 1 - c : c;
      for (int ch = 0; ch < ImageTensor::kChannels; ++ch) out.at(r, c, ch) = img.at(sr, sc, ch);
    }
  }
  return out;
}

ImageTensor random_zoom(const ImageTensor& img, double factor) {
  if (!(factor > 0.0) || !std::isfinite(factor)) {
    throw ParameterError("zoom factor must be a positive finite number");
  }
  if (!img.is_square()) throw ShapeError("random_zoom expects a square image");
  const int side = img.height();
  if (factor == 1.0) return img;
  if (factor > 1.0) {
    const int crop = std::max(1, static_cast<int>(std::lround(side / factor)));
    const int offset = (side - crop) / 2;
    return resize_bilinear(square_crop(img, CropRect{offset, offset, crop}), side);
  }
  const int inner = std::max(1, static_cast<int>(std::lround(side * factor)));
  const ImageTensor shrunk = resize_bilinear(img, inner);
  ImageTensor out(side, side);
  const int offset = (side - inner) / 2;
  for (int r = 0; r < inner; ++r) {
    for (int c = 0; c < inner; ++c) {
      for (int ch = 0; ch < ImageTensor::kChannels; ++ch) {
        out.at(r + offset, c + offset, ch) = shrunk.at(r, c, ch);
      }
    }
  }
  return out;
}

ImageTensor augment(const ImageTensor& img, const AugmentConfig& cfg, Rng& rng) {
  const double zoom_gate = rng.uniform();
  const double zoom_factor = rng.uniform(cfg.zoom_min, cfg.zoom_max);
  const double hflip_gate = rng.uniform();
  const double vflip_gate = rng.uniform();

  ImageTensor out = img;
  if (zoom_gate < cfg.p_zoom) out = random_zoom(out, zoom_factor);
  if (hflip_gate < cfg.p_hflip) out = flip(out, FlipAxis::kHorizontal);
  if (vflip_gate < cfg.p_vflip) out = flip(out, FlipAxis::kVertical);
  return out;
}

ImageTensor preprocess_decoded(const ImageTensor& raw, std::optional<CropRect> rect, int side) {
  return normalize(resize_bilinear(square_crop(raw, rect), side));
}

ImageTensor preprocess_for_inference(std::span<const std::uint8_t> bytes,
                                     std::optional<CropRect> rect, int side) {
  return preprocess_decoded(decode_image(bytes), rect, side);
}

}  // namespace drscreen
