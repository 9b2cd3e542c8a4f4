#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "drscreen/random.hpp"

namespace drscreen {

/// Square region of interest. Serialized as integers {x, y, side}.
struct CropRect {
  int x = 0;
  int y = 0;
  int side = 0;

  friend bool operator==(const CropRect&, const CropRect&) = default;
};

/// Height x width x 3 image, RGB, row-major with interleaved channels.
/// Holds raw 0..255 intensities straight out of the decoder and [0, 1]
/// values after normalize().
class ImageTensor {
 public:
  static constexpr int kChannels = 3;

  ImageTensor() = default;
  /// Zero-filled image. Throws ShapeError for non-positive sizes.
  ImageTensor(int height, int width);
  ImageTensor(int height, int width, std::vector<float> data);

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  bool empty() const noexcept { return data_.empty(); }
  bool is_square() const noexcept { return height_ == width_; }

  float& at(int row, int col, int channel) {
    return data_[(static_cast<std::size_t>(row) * width_ + col) * kChannels + channel];
  }
  float at(int row, int col, int channel) const {
    return data_[(static_cast<std::size_t>(row) * width_ + col) * kChannels + channel];
  }

  std::span<float> values() noexcept { return data_; }
  std::span<const float> values() const noexcept { return data_; }

  friend bool operator==(const ImageTensor&, const ImageTensor&) = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<float> data_;
};

enum class FlipAxis { kHorizontal, kVertical };

struct AugmentConfig {
  double p_zoom = 0.15;
  double zoom_min = 1.0;
  double zoom_max = 1.3;
  double p_hflip = 0.5;
  double p_vflip = 0.5;
  std::uint64_t seed = 0;

  /// Throws ConfigError when a probability leaves [0, 1] or the zoom range
  /// is empty or not strictly positive.
  void validate() const;

  static AugmentConfig disabled() { return {0.0, 1.0, 1.0, 0.0, 0.0, 0}; }
};

// --- codecs ---------------------------------------------------------------

/// Decodes PNG or JPEG bytes into a 0..255 RGB tensor. Grayscale is
/// replicated across channels; alpha is dropped. Throws DecodeError.
ImageTensor decode_image(std::span<const std::uint8_t> bytes);

/// 8-bit PNG of the image; values are rounded and clamped to 0..255, so pass
/// a 0..255 tensor (denormalize first if needed).
std::vector<std::uint8_t> encode_png(const ImageTensor& img);

/// Baseline JPEG at the given quality, same value convention as encode_png.
std::vector<std::uint8_t> encode_jpeg(const ImageTensor& img, int quality = 95);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

// --- transforms -----------------------------------------------------------

/// Divides by 255. Throws RangeError if any value is outside [0, 255].
ImageTensor normalize(const ImageTensor& img);

/// Centered maximal square inside a height x width frame.
CropRect centered_square(int height, int width) noexcept;

/// Throws BoundsError unless the rect lies inside the frame with side > 0.
void check_crop(const CropRect& rect, int height, int width);

/// Copies the square region verbatim; the centered maximal square when rect
/// is absent.
ImageTensor square_crop(const ImageTensor& img, std::optional<CropRect> rect = std::nullopt);

/// Half-pixel-center bilinear resize of a square image to target x target.
/// Throws ShapeError for non-square input or target <= 0.
ImageTensor resize_bilinear(const ImageTensor& img, int target);

ImageTensor flip(const ImageTensor& img, FlipAxis axis);

/// Factor > 1 zooms in (crop the centered side/z square, resize back);
/// factor < 1 zooms out onto a zero border; 1 is the identity. Throws
/// ParameterError for factor <= 0 or non-finite factors.
ImageTensor random_zoom(const ImageTensor& img, double factor);

/// Seeded augmentation: zoom (p_zoom, factor uniform in the zoom range),
/// then horizontal flip (p_hflip), then vertical flip (p_vflip). Exactly four
/// uniforms are drawn per call, whatever fires.
ImageTensor augment(const ImageTensor& img, const AugmentConfig& cfg, Rng& rng);

inline constexpr int kInputSide = 224;

/// decode -> square_crop -> resize_bilinear(side) -> normalize.
ImageTensor preprocess_for_inference(std::span<const std::uint8_t> bytes,
                                     std::optional<CropRect> rect = std::nullopt,
                                     int side = kInputSide);

/// Same pipeline on an already decoded 0..255 image.
ImageTensor preprocess_decoded(const ImageTensor& raw, std::optional<CropRect> rect = std::nullopt,
                               int side = kInputSide);

}  // namespace drscreen
