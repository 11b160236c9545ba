#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "free360/sphere_geom.hpp"

namespace free360 {

struct Rgb {
  std::uint8_t r = 0;
  std::uint8_t g = 0;
  std::uint8_t b = 0;
  bool operator==(const Rgb&) const = default;
};

/// Row-major 8-bit RGB raster.
class RgbImage {
 public:
  RgbImage() = default;
  RgbImage(int width, int height, Rgb fill = {});
  RgbImage(int width, int height, std::vector<std::uint8_t> data);

  int width() const { return width_; }
  int height() const { return height_; }
  bool empty() const { return width_ == 0 || height_ == 0; }

  Rgb at(int x, int y) const {
    const std::uint8_t* p = &data_[index(x, y)];
    return Rgb{p[0], p[1], p[2]};
  }
  void set(int x, int y, Rgb c) {
    std::uint8_t* p = &data_[index(x, y)];
    p[0] = c.r;
    p[1] = c.g;
    p[2] = c.b;
  }
  std::uint8_t* row(int y) { return data_.data() + static_cast<std::size_t>(y) * width_ * 3; }
  const std::uint8_t* row(int y) const {
    return data_.data() + static_cast<std::size_t>(y) * width_ * 3;
  }

  std::span<const std::uint8_t> bytes() const { return data_; }
  std::span<std::uint8_t> bytes() { return data_; }

  bool operator==(const RgbImage&) const = default;

 private:
  std::size_t index(int x, int y) const {
    return (static_cast<std::size_t>(y) * width_ + x) * 3;
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> data_;
};

/// Equirectangular panorama: width = 2 * height.
class ErpImage {
 public:
  /// Throws InvalidGeometry unless width = 2 * height > 0.
  explicit ErpImage(RgbImage pixels);

  int width() const { return pixels_.width(); }
  int height() const { return pixels_.height(); }
  const RgbImage& pixels() const { return pixels_; }

  bool operator==(const ErpImage&) const = default;

 private:
  RgbImage pixels_;
};

/// Cubemap in a 4x3 grid; unoccupied cells are zero.
class CmpImage {
 public:
  /// Throws InvalidGeometry if the raster does not match the layout canvas.
  CmpImage(geom::CmpLayout layout, RgbImage pixels);

  const geom::CmpLayout& layout() const { return layout_; }
  const RgbImage& pixels() const { return pixels_; }
  int width() const { return pixels_.width(); }
  int height() const { return pixels_.height(); }

 private:
  geom::CmpLayout layout_;
  RgbImage pixels_;
};

// File and memory codecs. Formats are chosen by extension (png, jpg, jpeg,
// bmp, ...); alpha channels are dropped on load.

RgbImage load_image(const std::filesystem::path& path);
void save_image(const std::filesystem::path& path, const RgbImage& image);
std::vector<std::uint8_t> encode_png(const RgbImage& image);
RgbImage decode_image(std::span<const std::uint8_t> encoded);

/// Area-averaged downscale so that max(width, height) <= max_dim. Returns the
/// input unchanged when it already fits.
RgbImage downscale_to_fit(const RgbImage& image, int max_dim);

/// PSNR in dB over pixels where `mask(x, y)` is true; +inf for identical
/// inputs.
double psnr(const RgbImage& a, const RgbImage& b, const std::vector<bool>& mask = {});

}  // namespace free360
