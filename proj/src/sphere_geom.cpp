#include "free360/sphere_geom.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "free360/errors.hpp"

namespace free360::geom {

namespace {

void require_erp_shape(int width, int height) {
  if (width <= 0 || height <= 0 || width != 2 * height) {
    throw InvalidGeometry("ERP frame must satisfy width = 2 * height > 0, got " +
                          std::to_string(width) + "x" + std::to_string(height));
  }
}

// Angle in [0, 2pi).
double wrap_positive(double a) {
  double r = std::fmod(a, kTwoPi);
  if (r < 0.0) r += kTwoPi;
  if (r >= kTwoPi) r = 0.0;
  return r;
}

}  // namespace

double wrap_lon(double lon) {
  double r = wrap_positive(lon + kPi) - kPi;
  if (r >= kPi) r -= kTwoPi;
  return r;
}

SphereCoord SphereCoord::normalized(double lon, double lat) {
  return SphereCoord{wrap_lon(lon), std::clamp(lat, -kHalfPi, kHalfPi)};
}

UnitVec3 UnitVec3::normalized(double x, double y, double z) {
  const double n = std::sqrt(x * x + y * y + z * z);
  if (!(n > 0.0) || !std::isfinite(n)) {
    throw InvalidGeometry("cannot normalize a zero or non-finite vector");
  }
  return UnitVec3{x / n, y / n, z / n};
}

double UnitVec3::norm() const { return std::sqrt(x * x + y * y + z * z); }

Mat3 identity_matrix() { return Mat3{{{1.0, 0.0, 0.0}, {0.0, 1.0, 0.0}, {0.0, 0.0, 1.0}}}; }

Mat3 transpose(const Mat3& m) {
  Mat3 t{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) t[i][j] = m[j][i];
  return t;
}

Mat3 multiply(const Mat3& a, const Mat3& b) {
  Mat3 r{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 3; ++k) r[i][j] += a[i][k] * b[k][j];
  return r;
}

double determinant(const Mat3& m) {
  return m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
         m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
         m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
}

UnitVec3 apply(const Mat3& m, const UnitVec3& v) {
  return UnitVec3{m[0][0] * v.x + m[0][1] * v.y + m[0][2] * v.z,
                  m[1][0] * v.x + m[1][1] * v.y + m[1][2] * v.z,
                  m[2][0] * v.x + m[2][1] * v.y + m[2][2] * v.z};
}

PixelBox PixelBox::ordered() const {
  return PixelBox{std::min(x1, x2), std::min(y1, y2), std::max(x1, x2), std::max(y1, y2)};
}

PixelBox PixelBox::clamped(double width, double height) const {
  const PixelBox o = ordered();
  return PixelBox{std::clamp(o.x1, 0.0, width), std::clamp(o.y1, 0.0, height),
                  std::clamp(o.x2, 0.0, width), std::clamp(o.y2, 0.0, height)};
}

std::string_view face_name(Face face) {
  switch (face) {
    case Face::Front: return "front";
    case Face::Back: return "back";
    case Face::Left: return "left";
    case Face::Right: return "right";
    case Face::Top: return "top";
    case Face::Bottom: return "bottom";
  }
  return "?";
}

CmpLayout CmpLayout::cross(int face_size) {
  std::array<GridCell, 6> placement{};
  placement[static_cast<int>(Face::Back)] = {0, 1};
  placement[static_cast<int>(Face::Left)] = {1, 1};
  placement[static_cast<int>(Face::Front)] = {2, 1};
  placement[static_cast<int>(Face::Right)] = {3, 1};
  placement[static_cast<int>(Face::Top)] = {2, 0};
  placement[static_cast<int>(Face::Bottom)] = {2, 2};
  return CmpLayout(face_size, placement);
}

CmpLayout::CmpLayout(int face_size, const std::array<GridCell, 6>& placement)
    : face_size_(face_size), placement_(placement) {
  if (face_size <= 0) throw InvalidGeometry("face_size must be positive");
  for (int f = 0; f < 6; ++f) {
    const GridCell c = placement[f];
    if (c.col < 0 || c.col > 3 || c.row < 0 || c.row > 2) {
      throw InvalidGeometry("face cell outside the 4x3 grid");
    }
    if (grid_[c.row][c.col] != 0) throw InvalidGeometry("two faces share a grid cell");
    grid_[c.row][c.col] = f + 1;
  }
}

const Face* CmpLayout::face_at(int col, int row) const {
  if (col < 0 || col > 3 || row < 0 || row > 2) return nullptr;
  const int idx = grid_[row][col];
  return idx == 0 ? nullptr : &kAllFaces[idx - 1];
}

SphereCoord erp_pixel_to_sphere(double x, double y, int width, int height) {
  require_erp_shape(width, height);
  if (!(x >= 0.0 && x < width && y >= 0.0 && y < height)) {
    throw InvalidGeometry("ERP pixel outside the image");
  }
  const double lon = ((x + 0.5) / width) * kTwoPi - kPi;
  const double lat = kHalfPi - ((y + 0.5) / height) * kPi;
  return SphereCoord::normalized(lon, lat);
}

std::pair<double, double> sphere_to_erp_pixel(const SphereCoord& c, int width, int height) {
  require_erp_shape(width, height);
  const SphereCoord n = SphereCoord::normalized(c.lon, c.lat);
  return {(n.lon + kPi) / kTwoPi * width - 0.5, (kHalfPi - n.lat) / kPi * height - 0.5};
}

double erp_edge_x_to_lon(double x, int width) { return x / width * kTwoPi - kPi; }
double erp_edge_y_to_lat(double y, int height) { return kHalfPi - y / height * kPi; }
double lon_to_erp_edge_x(double lon, int width) { return (lon + kPi) / kTwoPi * width; }
double lat_to_erp_edge_y(double lat, int height) { return (kHalfPi - lat) / kPi * height; }

UnitVec3 sphere_to_unit_vec(const SphereCoord& c) {
  const double cl = std::cos(c.lat);
  return UnitVec3{cl * std::cos(c.lon), std::sin(c.lat), -cl * std::sin(c.lon)};
}

SphereCoord unit_vec_to_sphere(const UnitVec3& v) {
  const double n = v.norm();
  if (!(std::abs(n - 1.0) <= 1e-6)) {
    throw InvalidGeometry("unit_vec_to_sphere expects a unit vector, got norm " +
                          std::to_string(n));
  }
  const double horiz = std::hypot(v.x, v.z);
  const double lat = std::atan2(v.y, horiz);
  if (horiz == 0.0) return SphereCoord{0.0, lat > 0 ? kHalfPi : -kHalfPi};
  return SphereCoord::normalized(std::atan2(-v.z, v.x), lat);
}

RotationSpec rotation_matrix(double phi, double theta) {
  const double cp = std::cos(phi), sp = std::sin(phi);
  const double ct = std::cos(theta), st = std::sin(theta);
  RotationSpec r;
  r.phi = phi;
  r.theta = theta;
  r.matrix = Mat3{{{cp * ct, -cp * st, sp}, {st, ct, 0.0}, {-sp * ct, sp * st, cp}}};
  return r;
}

LonArc erp_box_lon_arc(const PixelBox& box, int width) {
  const PixelBox o = box.ordered();
  const double span = std::min(o.x2 - o.x1, static_cast<double>(width));
  return LonArc{wrap_lon(erp_edge_x_to_lon(o.x1, width)), span / width * kTwoPi};
}

LonArc shortest_covering_arc(const LonArc& a, const LonArc& b, double eps) {
  // The minimal cover starts at the start of one of the two arcs.
  const double from_a = std::max(a.width, wrap_positive(b.start - a.start) + b.width);
  const double from_b = std::max(b.width, wrap_positive(a.start - b.start) + a.width);
  const double best = std::min(from_a, from_b);
  if (best >= kTwoPi - eps) {
    throw DegeneratePair("longitude extents of the pair cover the full circle");
  }
  const LonArc cand_a{a.start, from_a};
  const LonArc cand_b{b.start, from_b};
  if (std::abs(from_a - from_b) <= 1e-12) {
    const double mid_a = wrap_lon(a.start + 0.5 * from_a);
    const double mid_b = wrap_lon(b.start + 0.5 * from_b);
    return mid_a <= mid_b ? cand_a : cand_b;
  }
  return from_a < from_b ? cand_a : cand_b;
}

PairCenter pair_center(const PixelBox& box_a, const PixelBox& box_b, int width, int height) {
  require_erp_shape(width, height);
  const PixelBox a = box_a.ordered();
  const PixelBox b = box_b.ordered();
  const LonArc cover =
      shortest_covering_arc(erp_box_lon_arc(a, width), erp_box_lon_arc(b, width));
  const double lon = wrap_lon(cover.start + 0.5 * cover.width);

  const auto lat_of = [height](double y) {
    return erp_edge_y_to_lat(std::clamp(y, 0.0, static_cast<double>(height)), height);
  };
  const double lat_max = std::max(lat_of(a.y1), lat_of(b.y1));
  const double lat_min = std::min(lat_of(a.y2), lat_of(b.y2));
  const SphereCoord c = SphereCoord::normalized(lon, 0.5 * (lat_min + lat_max));
  return PairCenter{c, rotation_matrix(c.lon, c.lat)};
}

// Face frames: direction = normal + u * right + v * down, with u to the right
// and v downward in the CMP canvas.
UnitVec3 face_uv_to_unit_vec(Face face, double u, double v) {
  switch (face) {
    case Face::Front: return UnitVec3::normalized(1.0, -v, -u);
    case Face::Back: return UnitVec3::normalized(-1.0, -v, u);
    case Face::Left: return UnitVec3::normalized(u, -v, 1.0);
    case Face::Right: return UnitVec3::normalized(-u, -v, -1.0);
    case Face::Top: return UnitVec3::normalized(v, 1.0, -u);
    case Face::Bottom: return UnitVec3::normalized(-v, -1.0, -u);
  }
  throw InvalidGeometry("unknown face");
}

FaceUv unit_vec_to_face_uv(const UnitVec3& v) {
  const std::array<double, 6> major = {v.x, -v.x, v.z, -v.z, v.y, -v.y};
  int best = 0;
  for (int f = 1; f < 6; ++f) {
    if (major[f] > major[best]) best = f;
  }
  const double m = major[best];
  const Face face = kAllFaces[best];
  switch (face) {
    case Face::Front: return {face, -v.z / m, -v.y / m};
    case Face::Back: return {face, v.z / m, -v.y / m};
    case Face::Left: return {face, v.x / m, -v.y / m};
    case Face::Right: return {face, -v.x / m, -v.y / m};
    case Face::Top: return {face, -v.z / m, v.x / m};
    case Face::Bottom: return {face, -v.z / m, -v.x / m};
  }
  return {};
}

Face view_of_pixel(double x, double y, const CmpLayout& layout) {
  const double w = layout.canvas_width();
  const double h = layout.canvas_height();
  if (!(x >= 0.0 && x < w && y >= 0.0 && y < h)) {
    throw InvalidGeometry("point outside the CMP canvas");
  }
  const int fs = layout.face_size();
  const int col = static_cast<int>(std::floor(x / fs));
  const int row = static_cast<int>(std::floor(y / fs));
  const Face* face = layout.face_at(col, row);
  if (face == nullptr) {
    throw OutsideFace("CMP point (" + std::to_string(x) + ", " + std::to_string(y) +
                      ") lies in an unoccupied cell");
  }
  return *face;
}

std::vector<PixelBox> split_at_seam(const PixelBox& box, int width) {
  PixelBox o = box.ordered();
  const double w = width;
  if (o.x2 - o.x1 >= w) return {PixelBox{0.0, o.y1, w, o.y2}};
  const double shift = std::floor(o.x1 / w) * w;
  o.x1 -= shift;
  o.x2 -= shift;
  if (o.x2 <= w) return {o};
  return {PixelBox{o.x1, o.y1, w, o.y2}, PixelBox{0.0, o.y1, o.x2 - w, o.y2}};
}

}  // namespace free360::geom
