#include "free360/image.hpp"

#include <cmath>
#include <limits>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "free360/errors.hpp"

namespace free360 {

namespace {

cv::Mat to_bgr_mat(const RgbImage& image) {
  cv::Mat rgb(image.height(), image.width(), CV_8UC3,
              const_cast<std::uint8_t*>(image.bytes().data()));
  cv::Mat bgr;
  cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
  return bgr;
}

RgbImage from_cv_mat(const cv::Mat& mat) {
  cv::Mat rgb;
  switch (mat.channels()) {
    case 1: cv::cvtColor(mat, rgb, cv::COLOR_GRAY2RGB); break;
    case 3: cv::cvtColor(mat, rgb, cv::COLOR_BGR2RGB); break;
    case 4: cv::cvtColor(mat, rgb, cv::COLOR_BGRA2RGB); break;
    default: throw IoError("unsupported channel count " + std::to_string(mat.channels()));
  }
  if (rgb.depth() != CV_8U) rgb.convertTo(rgb, CV_8UC3);
  std::vector<std::uint8_t> data(rgb.total() * 3);
  for (int y = 0; y < rgb.rows; ++y) {
    std::copy_n(rgb.ptr<std::uint8_t>(y), rgb.cols * 3, data.data() + std::size_t(y) * rgb.cols * 3);
  }
  return RgbImage(rgb.cols, rgb.rows, std::move(data));
}

}  // namespace

RgbImage::RgbImage(int width, int height, Rgb fill) : width_(width), height_(height) {
  if (width < 0 || height < 0) throw InvalidGeometry("negative image size");
  data_.resize(static_cast<std::size_t>(width) * height * 3);
  for (std::size_t i = 0; i < data_.size(); i += 3) {
    data_[i] = fill.r;
    data_[i + 1] = fill.g;
    data_[i + 2] = fill.b;
  }
}

RgbImage::RgbImage(int width, int height, std::vector<std::uint8_t> data)
    : width_(width), height_(height), data_(std::move(data)) {
  if (width < 0 || height < 0 ||
      data_.size() != static_cast<std::size_t>(width) * height * 3) {
    throw InvalidGeometry("pixel buffer does not match image size");
  }
}

ErpImage::ErpImage(RgbImage pixels) : pixels_(std::move(pixels)) {
  if (pixels_.height() <= 0 || pixels_.width() != 2 * pixels_.height()) {
    throw InvalidGeometry("ERP image must satisfy width = 2 * height > 0, got " +
                          std::to_string(pixels_.width()) + "x" +
                          std::to_string(pixels_.height()));
  }
}

CmpImage::CmpImage(geom::CmpLayout layout, RgbImage pixels)
    : layout_(layout), pixels_(std::move(pixels)) {
  if (pixels_.width() != layout_.canvas_width() || pixels_.height() != layout_.canvas_height()) {
    throw InvalidGeometry("CMP raster does not match its layout canvas");
  }
}

RgbImage load_image(const std::filesystem::path& path) {
  cv::Mat mat = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (mat.empty()) throw IoError("cannot read image: " + path.string());
  return from_cv_mat(mat);
}

void save_image(const std::filesystem::path& path, const RgbImage& image) {
  bool ok = false;
  try {
    ok = cv::imwrite(path.string(), to_bgr_mat(image));
  } catch (const cv::Exception& e) {
    throw IoError("cannot write image " + path.string() + ": " + e.what());
  }
  if (!ok) throw IoError("cannot write image: " + path.string());
}

std::vector<std::uint8_t> encode_png(const RgbImage& image) {
  std::vector<std::uint8_t> out;
  if (!cv::imencode(".png", to_bgr_mat(image), out)) throw IoError("PNG encoding failed");
  return out;
}

RgbImage decode_image(std::span<const std::uint8_t> encoded) {
  cv::Mat buf(1, static_cast<int>(encoded.size()), CV_8UC1,
              const_cast<std::uint8_t*>(encoded.data()));
  cv::Mat mat = cv::imdecode(buf, cv::IMREAD_UNCHANGED);
  if (mat.empty()) throw IoError("cannot decode image bytes");
  return from_cv_mat(mat);
}

RgbImage downscale_to_fit(const RgbImage& image, int max_dim) {
  const int longest = std::max(image.width(), image.height());
  if (max_dim <= 0 || longest <= max_dim) return image;
  const double s = static_cast<double>(max_dim) / longest;
  const int w = std::max(1, static_cast<int>(std::lround(image.width() * s)));
  const int h = std::max(1, static_cast<int>(std::lround(image.height() * s)));
  cv::Mat src(image.height(), image.width(), CV_8UC3,
              const_cast<std::uint8_t*>(image.bytes().data()));
  cv::Mat dst;
  cv::resize(src, dst, cv::Size(w, h), 0, 0, cv::INTER_AREA);
  std::vector<std::uint8_t> data(dst.total() * 3);
  for (int y = 0; y < dst.rows; ++y) {
    std::copy_n(dst.ptr<std::uint8_t>(y), dst.cols * 3, data.data() + std::size_t(y) * dst.cols * 3);
  }
  return RgbImage(w, h, std::move(data));
}

double psnr(const RgbImage& a, const RgbImage& b, const std::vector<bool>& mask) {
  if (a.width() != b.width() || a.height() != b.height()) {
    throw InvalidGeometry("psnr: image sizes differ");
  }
  const std::size_t pixels = static_cast<std::size_t>(a.width()) * a.height();
  if (!mask.empty() && mask.size() != pixels) throw InvalidGeometry("psnr: mask size mismatch");
  double sse = 0.0;
  std::size_t n = 0;
  const auto da = a.bytes();
  const auto db = b.bytes();
  for (std::size_t p = 0; p < pixels; ++p) {
    if (!mask.empty() && !mask[p]) continue;
    for (int c = 0; c < 3; ++c) {
      const double d = double(da[p * 3 + c]) - double(db[p * 3 + c]);
      sse += d * d;
    }
    n += 3;
  }
  if (n == 0) throw InvalidGeometry("psnr: empty mask");
  if (sse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(255.0 * 255.0 / (sse / n));
}

}  // namespace free360
