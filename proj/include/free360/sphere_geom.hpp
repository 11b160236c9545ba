#pragma once

// Coordinate mathematics on the unit sphere shared by the projections, the
// pair-centering rotation and the cubemap view lookup.
//
// Conventions:
//   * y is up, +x is the viewer's forward direction.
//   * v(lon, lat) = (cos lat cos lon, sin lat, -cos lat sin lon).
//   * ERP pixel (x, y) covers [x, x+1) x [y, y+1); its center has
//     lon = ((x + 0.5) / W) * 2pi - pi and lat = pi/2 - ((y + 0.5) / H) * pi.
//   * PixelBox coordinates are continuous edge coordinates in the same frame.

#include <array>
#include <numbers>
#include <string_view>
#include <utility>
#include <vector>

namespace free360::geom {

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kTwoPi = 2.0 * std::numbers::pi;
inline constexpr double kHalfPi = 0.5 * std::numbers::pi;

/// Wraps an angle into [-pi, pi).
double wrap_lon(double lon);

struct SphereCoord {
  double lon = 0.0;
  double lat = 0.0;

  /// Normalizes lon into [-pi, pi) and clamps lat into [-pi/2, pi/2].
  static SphereCoord normalized(double lon, double lat);
};

struct UnitVec3 {
  double x = 1.0;
  double y = 0.0;
  double z = 0.0;

  /// Scales (x, y, z) to unit length. Throws InvalidGeometry on a zero or
  /// non-finite vector.
  static UnitVec3 normalized(double x, double y, double z);
  double norm() const;
};

using Mat3 = std::array<std::array<double, 3>, 3>;

Mat3 transpose(const Mat3& m);
Mat3 multiply(const Mat3& a, const Mat3& b);
double determinant(const Mat3& m);
/// m * v without renormalization.
UnitVec3 apply(const Mat3& m, const UnitVec3& v);
Mat3 identity_matrix();

struct RotationSpec {
  double phi = 0.0;    // about the y-axis; longitude of the target center
  double theta = 0.0;  // about the z-axis; latitude of the target center
  Mat3 matrix = identity_matrix();
};

struct PixelBox {
  double x1 = 0.0;
  double y1 = 0.0;
  double x2 = 0.0;
  double y2 = 0.0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double center_x() const { return 0.5 * (x1 + x2); }
  double center_y() const { return 0.5 * (y1 + y2); }
  /// Swaps reversed corners so that x1 <= x2 and y1 <= y2.
  PixelBox ordered() const;
  PixelBox clamped(double width, double height) const;
  bool operator==(const PixelBox&) const = default;
};

enum class Face { Front = 0, Back = 1, Left = 2, Right = 3, Top = 4, Bottom = 5 };

/// Faces in tie-break priority order.
inline constexpr std::array<Face, 6> kAllFaces = {Face::Front, Face::Back,  Face::Left,
                                                  Face::Right, Face::Top,   Face::Bottom};

std::string_view face_name(Face face);

struct GridCell {
  int col = 0;
  int row = 0;
  bool operator==(const GridCell&) const = default;
};

/// Placement of the six faces in a 4x3 grid of square cells.
class CmpLayout {
 public:
  /// Cross layout: middle row [Back, Left, Front, Right], Top above Front,
  /// Bottom below Front.
  static CmpLayout cross(int face_size);
  /// Custom placement indexed by Face. Throws InvalidGeometry if two faces
  /// share a cell, a cell lies outside the 4x3 grid, or face_size <= 0.
  CmpLayout(int face_size, const std::array<GridCell, 6>& placement);

  int face_size() const { return face_size_; }
  int canvas_width() const { return 4 * face_size_; }
  int canvas_height() const { return 3 * face_size_; }
  GridCell cell(Face face) const { return placement_[static_cast<int>(face)]; }
  /// Face occupying a grid cell, if any.
  const Face* face_at(int col, int row) const;

  bool operator==(const CmpLayout& other) const {
    return face_size_ == other.face_size_ && placement_ == other.placement_;
  }

 private:
  int face_size_;
  std::array<GridCell, 6> placement_;
  std::array<std::array<int, 4>, 3> grid_{};  // face index + 1, 0 for empty
};

// ERP pixel <-> sphere

SphereCoord erp_pixel_to_sphere(double x, double y, int width, int height);
/// Inverse of erp_pixel_to_sphere: pixel-center coordinates, continuous.
std::pair<double, double> sphere_to_erp_pixel(const SphereCoord& c, int width, int height);

/// Edge-coordinate conversions used for boxes (x = 0 is the left image edge).
double erp_edge_x_to_lon(double x, int width);
double erp_edge_y_to_lat(double y, int height);
double lon_to_erp_edge_x(double lon, int width);
double lat_to_erp_edge_y(double lat, int height);

// Sphere <-> vector

UnitVec3 sphere_to_unit_vec(const SphereCoord& c);
/// Throws InvalidGeometry if |v| deviates from 1 by more than 1e-6.
SphereCoord unit_vec_to_sphere(const UnitVec3& v);

// Rotation

/// R_y(phi) * R_z(theta); sends the forward axis to (lon phi, lat theta).
RotationSpec rotation_matrix(double phi, double theta);

// Longitude arcs and the pair center

/// Counter-clockwise arc [start, start + width] on the longitude circle.
struct LonArc {
  double start = 0.0;  // wrapped into [-pi, pi)
  double width = 0.0;  // in [0, 2pi]
};

/// Longitude arc of an ERP box; boxes whose x2 exceeds the image width wrap
/// through the seam.
LonArc erp_box_lon_arc(const PixelBox& box, int width);

/// Shortest arc covering both arcs. Ties pick the smaller wrapped midpoint.
/// Throws DegeneratePair when the cover is within `eps` of the full circle.
LonArc shortest_covering_arc(const LonArc& a, const LonArc& b, double eps = 1e-9);

struct PairCenter {
  SphereCoord c_star;
  RotationSpec rot;
};

/// Midpoint of the minimal spherical bounding box enclosing both ERP boxes.
PairCenter pair_center(const PixelBox& box_a, const PixelBox& box_b, int width, int height);

// Cube faces

UnitVec3 face_uv_to_unit_vec(Face face, double u, double v);

struct FaceUv {
  Face face = Face::Front;
  double u = 0.0;
  double v = 0.0;
};

FaceUv unit_vec_to_face_uv(const UnitVec3& v);

/// The view lookup f: owning face of a CMP canvas point. Throws OutsideFace
/// for points in unoccupied cells and InvalidGeometry outside the canvas.
Face view_of_pixel(double x, double y, const CmpLayout& layout);

/// Splits an ERP box whose x-range exceeds [0, width) into at most two boxes
/// inside the image.
std::vector<PixelBox> split_at_seam(const PixelBox& box, int width);

}  // namespace free360::geom
