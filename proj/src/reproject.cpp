#include "free360/reproject.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <thread>

#include <opencv2/core.hpp>
#include <opencv2/imgproc.hpp>

#include "free360/errors.hpp"

namespace free360 {

using geom::CmpLayout;
using geom::Face;
using geom::kHalfPi;
using geom::kPi;
using geom::kTwoPi;
using geom::Mat3;
using geom::PixelBox;
using geom::SphereCoord;
using geom::UnitVec3;

namespace {

// Rows are independent, so the split does not affect the output bytes.
void for_each_row(int rows, const std::function<void(int)>& body) {
  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  const int workers = static_cast<int>(std::min<unsigned>(hw, rows > 0 ? rows : 1));
  if (workers <= 1) {
    for (int y = 0; y < rows; ++y) body(y);
    return;
  }
  std::vector<std::jthread> pool;
  pool.reserve(workers);
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (int y = w; y < rows; y += workers) body(y);
    });
  }
}

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

Rgb blend(const Rgb& p00, const Rgb& p10, const Rgb& p01, const Rgb& p11, double t, double s) {
  const double w00 = (1 - t) * (1 - s), w10 = t * (1 - s), w01 = (1 - t) * s, w11 = t * s;
  return Rgb{to_byte(w00 * p00.r + w10 * p10.r + w01 * p01.r + w11 * p11.r),
             to_byte(w00 * p00.g + w10 * p10.g + w01 * p01.g + w11 * p11.g),
             to_byte(w00 * p00.b + w10 * p10.b + w01 * p01.b + w11 * p11.b)};
}

// fx, fy are pixel-center coordinates.
Rgb sample_erp(const RgbImage& img, double fx, double fy) {
  const int w = img.width(), h = img.height();
  const double x0f = std::floor(fx);
  const double t = fx - x0f;
  int x0 = static_cast<int>(x0f) % w;
  if (x0 < 0) x0 += w;
  const int x1 = (x0 + 1) % w;
  const double cy = std::clamp(fy, 0.0, static_cast<double>(h - 1));
  const int y0 = static_cast<int>(std::floor(cy));
  const int y1 = std::min(y0 + 1, h - 1);
  const double s = cy - y0;
  return blend(img.at(x0, y0), img.at(x1, y0), img.at(x0, y1), img.at(x1, y1), t, s);
}

Rgb sample_erp_dir(const RgbImage& img, const UnitVec3& dir) {
  const SphereCoord c = geom::unit_vec_to_sphere(dir);
  const auto [fx, fy] = geom::sphere_to_erp_pixel(c, img.width(), img.height());
  return sample_erp(img, fx, fy);
}

// Bilinear lookup inside one face, clamped to its borders. fx, fy are
// pixel-center coordinates local to the face.
Rgb sample_face(const RgbImage& img, int ox, int oy, int fs, double fx, double fy) {
  const double cx = std::clamp(fx, 0.0, static_cast<double>(fs - 1));
  const double cy = std::clamp(fy, 0.0, static_cast<double>(fs - 1));
  const int x0 = static_cast<int>(std::floor(cx));
  const int y0 = static_cast<int>(std::floor(cy));
  const int x1 = std::min(x0 + 1, fs - 1);
  const int y1 = std::min(y0 + 1, fs - 1);
  return blend(img.at(ox + x0, oy + y0), img.at(ox + x1, oy + y0), img.at(ox + x0, oy + y1),
               img.at(ox + x1, oy + y1), cx - x0, cy - y0);
}

// Smallest ERP box covering a set of directions, with circular longitude.
struct CoverResult {
  PixelBox box;
  bool full_circle = false;
};

CoverResult cover_directions(const std::vector<UnitVec3>& dirs, bool north_inside,
                             bool south_inside, int width, int height) {
  std::vector<double> lons;
  lons.reserve(dirs.size());
  double lat_min = kHalfPi, lat_max = -kHalfPi;
  for (const UnitVec3& d : dirs) {
    const SphereCoord c = geom::unit_vec_to_sphere(d);
    lat_min = std::min(lat_min, c.lat);
    lat_max = std::max(lat_max, c.lat);
    // Pole samples carry no longitude information.
    if (std::abs(c.lat) < kHalfPi - 1e-12) lons.push_back(c.lon);
  }
  if (north_inside) lat_max = kHalfPi;
  if (south_inside) lat_min = -kHalfPi;

  CoverResult out;
  out.box.y1 = geom::lat_to_erp_edge_y(lat_max, height);
  out.box.y2 = geom::lat_to_erp_edge_y(lat_min, height);

  if (north_inside || south_inside || lons.empty()) {
    out.full_circle = north_inside || south_inside;
    out.box.x1 = 0.0;
    out.box.x2 = width;
    return out;
  }
  std::sort(lons.begin(), lons.end());
  // The covering arc is the complement of the largest gap between samples.
  double best_gap = lons.front() + kTwoPi - lons.back();
  double arc_start = lons.front();
  for (std::size_t i = 1; i < lons.size(); ++i) {
    const double gap = lons[i] - lons[i - 1];
    if (gap > best_gap) {
      best_gap = gap;
      arc_start = lons[i];
    }
  }
  const double arc_width = kTwoPi - best_gap;
  out.full_circle = best_gap <= 1e-9;
  out.box.x1 = geom::lon_to_erp_edge_x(geom::wrap_lon(arc_start), width);
  out.box.x2 = out.box.x1 + arc_width / kTwoPi * width;
  return out;
}

bool lon_in_arc(double lon, const geom::LonArc& arc) {
  double d = std::fmod(lon - arc.start, kTwoPi);
  if (d < 0) d += kTwoPi;
  return d <= arc.width;
}

constexpr int kEdgeSamples = 64;

// Points on the boundary of a box plus a coarse interior grid.
template <typename Fn>
void sample_box(const PixelBox& b, Fn&& visit) {
  for (int i = 0; i <= kEdgeSamples; ++i) {
    const double t = static_cast<double>(i) / kEdgeSamples;
    const double x = b.x1 + t * (b.x2 - b.x1);
    const double y = b.y1 + t * (b.y2 - b.y1);
    visit(x, b.y1);
    visit(x, b.y2);
    visit(b.x1, y);
    visit(b.x2, y);
  }
  constexpr int kInterior = 8;
  for (int j = 1; j < kInterior; ++j) {
    for (int i = 1; i < kInterior; ++i) {
      visit(b.x1 + (b.x2 - b.x1) * i / kInterior, b.y1 + (b.y2 - b.y1) * j / kInterior);
    }
  }
}

}  // namespace

CmpImage erp_to_cmp(const ErpImage& src, const CmpLayout& layout) {
  const int fs = layout.face_size();
  RgbImage out(layout.canvas_width(), layout.canvas_height());
  const RgbImage& in = src.pixels();
  for_each_row(out.height(), [&](int y) {
    const int row = y / fs;
    const int ly = y - row * fs;
    const double v = 2.0 * (ly + 0.5) / fs - 1.0;
    for (int col = 0; col < 4; ++col) {
      const Face* face = layout.face_at(col, row);
      if (face == nullptr) continue;
      for (int lx = 0; lx < fs; ++lx) {
        const double u = 2.0 * (lx + 0.5) / fs - 1.0;
        out.set(col * fs + lx, y, sample_erp_dir(in, geom::face_uv_to_unit_vec(*face, u, v)));
      }
    }
  });
  return CmpImage(layout, std::move(out));
}

ErpImage cmp_to_erp(const CmpImage& src, int width) {
  if (width <= 0 || width % 2 != 0) throw InvalidGeometry("ERP width must be positive and even");
  const int height = width / 2;
  const CmpLayout& layout = src.layout();
  const int fs = layout.face_size();
  RgbImage out(width, height);
  for_each_row(height, [&](int y) {
    for (int x = 0; x < width; ++x) {
      const UnitVec3 d = geom::sphere_to_unit_vec(geom::erp_pixel_to_sphere(x, y, width, height));
      const geom::FaceUv fuv = geom::unit_vec_to_face_uv(d);
      const geom::GridCell cell = layout.cell(fuv.face);
      const double fx = (fuv.u + 1.0) * 0.5 * fs - 0.5;
      const double fy = (fuv.v + 1.0) * 0.5 * fs - 0.5;
      out.set(x, y, sample_face(src.pixels(), cell.col * fs, cell.row * fs, fs, fx, fy));
    }
  });
  return ErpImage(std::move(out));
}

namespace {

constexpr int kMaxTapsPerAxis = 64;

struct SourceSample {
  double fx, fy;
  int kx, ky;
};

SourceSample to_pixel(const UnitVec3& s, int w, int h) {
  const double horiz = std::sqrt(s.x * s.x + s.z * s.z);
  const double lon = horiz == 0.0 ? 0.0 : std::atan2(-s.z, s.x);
  const double lat = std::atan2(s.y, horiz);
  return {(lon + kPi) / kTwoPi * w - 0.5, (kHalfPi - lat) / kPi * h - 0.5, 1, 1};
}

// Source pixel coordinates of a direction given by its output-frame sines and
// cosines. Longitude is left unwrapped because sampling wraps anyway.
SourceSample project(const Mat3& m, double cl, double sl, double cL, double sL, int w, int h) {
  return to_pixel(geom::apply(m, UnitVec3{cL * cl, sL, -cL * sl}), w, h);
}

int taps_for(double extent) {
  if (!std::isfinite(extent)) return kMaxTapsPerAxis;
  return std::clamp(static_cast<int>(std::ceil(extent - 1e-6)), 1, kMaxTapsPerAxis);
}

// Also reports how many taps per output axis keep neighbouring taps within
// one source pixel, from the Jacobian of the output-to-source pixel mapping.
SourceSample locate(const Mat3& m, double cl, double sl, double cL, double sL, int w, int h) {
  const UnitVec3 s = geom::apply(m, UnitVec3{cL * cl, sL, -cL * sl});
  SourceSample out = to_pixel(s, w, h);
  const double dlon = kTwoPi / w, dlat = kPi / h;
  const UnitVec3 tx = geom::apply(m, UnitVec3{-cL * sl * dlon, 0.0, -cL * cl * dlon});
  const UnitVec3 ty = geom::apply(m, UnitVec3{sL * cl * dlat, -cL * dlat, -sL * sl * dlat});
  const double rho2 = s.x * s.x + s.z * s.z;
  const double rho = std::sqrt(rho2);
  const auto extent = [&](const UnitVec3& t) {
    const double px = std::abs(s.z * t.x - s.x * t.z) / rho2 * (w / kTwoPi);
    const double py = std::abs(t.y) / rho * (h / kPi);
    return std::max(px, py);
  };
  out.kx = taps_for(extent(tx));
  out.ky = taps_for(extent(ty));
  return out;
}

}  // namespace

// Each output pixel averages a grid of bilinear taps sized to its footprint in
// the source. Near the source poles one output pixel can span many source
// columns, and a single tap would skip narrow features entirely.
ErpImage rotate_erp(const ErpImage& src, const Mat3& m) {
  const int w = src.width(), h = src.height();
  const RgbImage& in = src.pixels();
  std::vector<double> col_cos(w), col_sin(w);
  for (int x = 0; x < w; ++x) {
    const double lon = ((x + 0.5) / w) * kTwoPi - kPi;
    col_cos[x] = std::cos(lon);
    col_sin[x] = std::sin(lon);
  }
  RgbImage out(w, h);
  for_each_row(h, [&](int y) {
    const double row_lat = kHalfPi - ((y + 0.5) / h) * kPi;
    const double cL = std::cos(row_lat), sL = std::sin(row_lat);
    for (int x = 0; x < w; ++x) {
      const SourceSample p = locate(m, col_cos[x], col_sin[x], cL, sL, w, h);
      if (p.kx == 1 && p.ky == 1) {
        out.set(x, y, sample_erp(in, p.fx, p.fy));
        continue;
      }
      double r = 0, g = 0, b = 0;
      for (int j = 0; j < p.ky; ++j) {
        const double lat = kHalfPi - ((y + (j + 0.5) / p.ky) / h) * kPi;
        const double tcL = std::cos(lat), tsL = std::sin(lat);
        for (int i = 0; i < p.kx; ++i) {
          const double lon = ((x + (i + 0.5) / p.kx) / w) * kTwoPi - kPi;
          const SourceSample q = project(m, std::cos(lon), std::sin(lon), tcL, tsL, w, h);
          const Rgb c = sample_erp(in, q.fx, q.fy);
          r += c.r;
          g += c.g;
          b += c.b;
        }
      }
      const double n = static_cast<double>(p.kx) * p.ky;
      out.set(x, y, Rgb{to_byte(r / n), to_byte(g / n), to_byte(b / n)});
    }
  });
  return ErpImage(std::move(out));
}

PixelBox transform_box_erp(const PixelBox& box, const Mat3& m, int width, int height) {
  const PixelBox b = box.ordered();
  const Mat3 inv = geom::transpose(m);
  std::vector<UnitVec3> dirs;
  sample_box(b, [&](double x, double y) {
    const double lat =
        geom::erp_edge_y_to_lat(std::clamp(y, 0.0, static_cast<double>(height)), height);
    const SphereCoord c = SphereCoord::normalized(geom::erp_edge_x_to_lon(x, width), lat);
    dirs.push_back(geom::apply(inv, geom::sphere_to_unit_vec(c)));
  });

  // Poles of the rotated frame expressed in the source frame.
  const geom::LonArc arc = geom::erp_box_lon_arc(b, width);
  const double lat_top = geom::erp_edge_y_to_lat(std::max(b.y1, 0.0), height);
  const double lat_bottom = geom::erp_edge_y_to_lat(std::min(b.y2, double(height)), height);
  const auto inside = [&](const UnitVec3& v) {
    const SphereCoord c = geom::unit_vec_to_sphere(v);
    return c.lat > lat_bottom && c.lat < lat_top && lon_in_arc(c.lon, arc);
  };
  const UnitVec3 north = geom::apply(m, UnitVec3{0, 1, 0});
  const UnitVec3 south = geom::apply(m, UnitVec3{0, -1, 0});

  const CoverResult cover = cover_directions(dirs, inside(north), inside(south), width, height);
  if (cover.full_circle) {
    throw DegenerateBox("transported box covers the full longitude circle");
  }
  return cover.box;
}

PixelBox cmp_box_to_erp_box(const PixelBox& box, const CmpLayout& layout, int erp_width,
                            int erp_height) {
  const PixelBox b = box.ordered();
  const double cw = layout.canvas_width(), ch = layout.canvas_height();
  if (b.x1 < 0.0 || b.y1 < 0.0 || b.x2 > cw || b.y2 > ch) {
    throw InvalidBox("CMP box leaves the canvas");
  }
  const int fs = layout.face_size();
  const auto cell_index = [fs](double v, int max) {
    return std::clamp(static_cast<int>(std::floor(v / fs)), 0, max);
  };
  // Half-open coverage: a box ending exactly on a cell edge does not enter
  // the next cell.
  const int c0 = cell_index(b.x1, 3), r0 = cell_index(b.y1, 2);
  const int c1 = b.x2 > b.x1 ? cell_index(std::nextafter(b.x2, -1.0), 3) : c0;
  const int r1 = b.y2 > b.y1 ? cell_index(std::nextafter(b.y2, -1.0), 2) : r0;
  for (int r = r0; r <= r1; ++r) {
    for (int c = c0; c <= c1; ++c) {
      if (layout.face_at(c, r) == nullptr) {
        throw InvalidBox("CMP box touches an unoccupied cell");
      }
    }
  }

  const auto direction_at = [&](double x, double y) {
    const int col = cell_index(x, 3), row = cell_index(y, 2);
    // Clamp edge points into the nearest occupied cell of the box.
    const int cc = std::clamp(col, c0, c1), rr = std::clamp(row, r0, r1);
    const Face face = *layout.face_at(cc, rr);
    const double u = std::clamp(2.0 * (x - cc * fs) / fs - 1.0, -1.0, 1.0);
    const double v = std::clamp(2.0 * (y - rr * fs) / fs - 1.0, -1.0, 1.0);
    return geom::face_uv_to_unit_vec(face, u, v);
  };
  std::vector<UnitVec3> dirs;
  sample_box(b, [&](double x, double y) { dirs.push_back(direction_at(x, y)); });

  const auto pole_inside = [&](Face face) {
    const geom::GridCell cell = layout.cell(face);
    const double px = (cell.col + 0.5) * fs, py = (cell.row + 0.5) * fs;
    return px > b.x1 && px < b.x2 && py > b.y1 && py < b.y2;
  };
  const CoverResult cover =
      cover_directions(dirs, pole_inside(Face::Top), pole_inside(Face::Bottom), erp_width,
                       erp_height);
  return cover.box;
}

RgbImage crop(const RgbImage& image, const PixelBox& box) {
  const PixelBox b = box.ordered();
  const double w = image.width(), h = image.height();
  if (b.x1 > w || b.y1 > h || b.x2 < 0.0 || b.y2 < 0.0 || image.empty()) {
    throw InvalidBox("crop box does not intersect the image");
  }
  const PixelBox c = b.clamped(w, h);
  int x0 = static_cast<int>(std::floor(c.x1));
  int y0 = static_cast<int>(std::floor(c.y1));
  int x1 = static_cast<int>(std::ceil(c.x2));
  int y1 = static_cast<int>(std::ceil(c.y2));
  x0 = std::min(x0, image.width() - 1);
  y0 = std::min(y0, image.height() - 1);
  x1 = std::max(x1, x0 + 1);
  y1 = std::max(y1, y0 + 1);
  RgbImage out(x1 - x0, y1 - y0);
  for (int y = y0; y < y1; ++y) {
    std::copy_n(image.row(y) + std::size_t(x0) * 3, std::size_t(x1 - x0) * 3, out.row(y - y0));
  }
  return out;
}

std::string_view color_name(PaletteColor c) {
  switch (c) {
    case PaletteColor::Blue: return "blue";
    case PaletteColor::Red: return "red";
    case PaletteColor::Green: return "green";
    case PaletteColor::Orange: return "orange";
    case PaletteColor::Purple: return "purple";
    case PaletteColor::Cyan: return "cyan";
  }
  return "?";
}

Rgb color_rgb(PaletteColor c) {
  switch (c) {
    case PaletteColor::Blue: return {0, 0, 255};
    case PaletteColor::Red: return {255, 0, 0};
    case PaletteColor::Green: return {0, 200, 0};
    case PaletteColor::Orange: return {255, 165, 0};
    case PaletteColor::Purple: return {128, 0, 128};
    case PaletteColor::Cyan: return {0, 255, 255};
  }
  return {};
}

PaletteColor palette_color(std::size_t i) { return static_cast<PaletteColor>(i % 6); }

Overlay Overlay::from_labeled_boxes(
    const std::vector<std::pair<std::string, PixelBox>>& boxes) {
  Overlay o;
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    o.items.push_back(OverlayItem{boxes[i].second, palette_color(i), boxes[i].first});
  }
  return o;
}

std::string Overlay::legend() const {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i > 0) out += ", ";
    out += items[i].label;
    out += ':';
    out += color_name(items[i].color);
    out += " line";
  }
  return out;
}

namespace {

double legend_font_scale(int image_width) { return std::max(0.5, image_width / 1600.0); }

struct Segment {
  int x0, y0, x1, y1;  // inclusive pixel range
  bool left, right;    // whether to draw the vertical edges
};

void draw_outline(RgbImage& img, const Segment& s, int stroke, Rgb color) {
  const int x0 = std::max(s.x0, 0), x1 = std::min(s.x1, img.width() - 1);
  const int y0 = std::max(s.y0, 0), y1 = std::min(s.y1, img.height() - 1);
  if (x0 > x1 || y0 > y1) return;
  for (int y = y0; y <= y1; ++y) {
    const bool horizontal_band = (y - s.y0) < stroke || (s.y1 - y) < stroke;
    for (int x = x0; x <= x1; ++x) {
      const bool on_left = s.left && (x - s.x0) < stroke;
      const bool on_right = s.right && (s.x1 - x) < stroke;
      if (horizontal_band || on_left || on_right) img.set(x, y, color);
    }
  }
}

}  // namespace

int legend_strip_height(int image_width) {
  return static_cast<int>(std::ceil(36.0 * legend_font_scale(image_width)));
}

RgbImage annotate(const RgbImage& image, const Overlay& overlay, int stroke,
                  bool wrap_horizontal) {
  if (overlay.items.empty()) return image;
  stroke = std::max(stroke, 1);
  const int w = image.width(), h = image.height();
  const int strip = legend_strip_height(w);
  RgbImage out(w, h + strip, Rgb{255, 255, 255});
  for (int y = 0; y < h; ++y) std::copy_n(image.row(y), std::size_t(w) * 3, out.row(y));

  RgbImage canvas(w, h);
  for (int y = 0; y < h; ++y) std::copy_n(image.row(y), std::size_t(w) * 3, canvas.row(y));

  for (const OverlayItem& item : overlay.items) {
    const PixelBox b = item.box.ordered();
    std::vector<Segment> segments;
    const auto to_segment = [](const PixelBox& p, bool left, bool right) {
      const int x0 = static_cast<int>(std::floor(p.x1));
      const int y0 = static_cast<int>(std::floor(p.y1));
      const int x1 = std::max(x0, static_cast<int>(std::ceil(p.x2)) - 1);
      const int y1 = std::max(y0, static_cast<int>(std::ceil(p.y2)) - 1);
      return Segment{x0, y0, x1, y1, left, right};
    };
    if (wrap_horizontal) {
      const auto parts = geom::split_at_seam(b, w);
      if (parts.size() == 2) {
        segments.push_back(to_segment(parts[0], true, false));
        segments.push_back(to_segment(parts[1], false, true));
      } else {
        segments.push_back(to_segment(parts[0], true, true));
      }
    } else {
      segments.push_back(to_segment(b.clamped(w, h), true, true));
    }
    for (const Segment& s : segments) draw_outline(canvas, s, stroke, color_rgb(item.color));
  }
  for (int y = 0; y < h; ++y) std::copy_n(canvas.row(y), std::size_t(w) * 3, out.row(y));

  // Legend text, each entry in its own color.
  cv::Mat mat(out.height(), out.width(), CV_8UC3, out.bytes().data());
  const double scale = legend_font_scale(w);
  const int thickness = std::max(1, static_cast<int>(std::lround(scale * 1.5)));
  const int font = cv::FONT_HERSHEY_SIMPLEX;
  int baseline = 0;
  const cv::Size probe = cv::getTextSize("Ag", font, scale, thickness, &baseline);
  int x = std::max(4, static_cast<int>(8 * scale));
  const int y = h + (strip + probe.height) / 2;
  for (std::size_t i = 0; i < overlay.items.size(); ++i) {
    const OverlayItem& item = overlay.items[i];
    std::string text = item.label + ":" + std::string(color_name(item.color)) + " line";
    if (i + 1 < overlay.items.size()) text += ",";
    const Rgb c = color_rgb(item.color);
    cv::putText(mat, text, cv::Point(x, y), font, scale, cv::Scalar(c.r, c.g, c.b), thickness,
                cv::LINE_8);
    x += cv::getTextSize(text + " ", font, scale, thickness, &baseline).width;
  }
  return out;
}

}  // namespace free360
