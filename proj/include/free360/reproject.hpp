#pragma once

// Resampling between ERP and CMP, spherical rotation of ERP images, box
// transport between frames, crops and annotated overlays. All resampling is
// bilinear: ERP lookups wrap in longitude and clamp in latitude, CMP lookups
// clamp to the face borders.

#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "free360/image.hpp"
#include "free360/sphere_geom.hpp"

namespace free360 {

CmpImage erp_to_cmp(const ErpImage& src, const geom::CmpLayout& layout);
/// Output is width x width/2. Throws InvalidGeometry for odd or non-positive
/// widths.
ErpImage cmp_to_erp(const CmpImage& src, int width);

/// Output pixel with direction v samples the source at m * v.
ErpImage rotate_erp(const ErpImage& src, const geom::Mat3& m);
inline ErpImage rotate_erp(const ErpImage& src, const geom::RotationSpec& rot) {
  return rotate_erp(src, rot.matrix);
}

/// Bounding box, in the frame produced by rotate_erp(src, m), of an ERP box of
/// the source frame. The result may extend past the right image edge when it
/// wraps the seam (see geom::split_at_seam). Throws DegenerateBox when the
/// transported box covers the full longitude circle.
geom::PixelBox transform_box_erp(const geom::PixelBox& box, const geom::Mat3& m, int width,
                                 int height);
inline geom::PixelBox transform_box_erp(const geom::PixelBox& box,
                                        const geom::RotationSpec& rot, int width, int height) {
  return transform_box_erp(box, rot.matrix, width, height);
}

/// ERP bounding box of a CMP box. Boxes containing a pole span the full width.
/// Throws InvalidBox when the box touches an unoccupied cell or leaves the
/// canvas.
geom::PixelBox cmp_box_to_erp_box(const geom::PixelBox& box, const geom::CmpLayout& layout,
                                  int erp_width, int erp_height);

/// Sub-image under the box clamped to the image; at least 1x1. Throws
/// InvalidBox for an empty intersection.
RgbImage crop(const RgbImage& image, const geom::PixelBox& box);

enum class PaletteColor { Blue, Red, Green, Orange, Purple, Cyan };

std::string_view color_name(PaletteColor c);
Rgb color_rgb(PaletteColor c);
/// i-th palette color, cycling after the sixth.
PaletteColor palette_color(std::size_t i);

struct OverlayItem {
  geom::PixelBox box;
  PaletteColor color = PaletteColor::Blue;
  std::string label;
};

struct Overlay {
  std::vector<OverlayItem> items;

  /// Assigns palette colors in item order.
  static Overlay from_labeled_boxes(const std::vector<std::pair<std::string, geom::PixelBox>>& boxes);
  /// "label:color line" entries joined by ", ".
  std::string legend() const;
};

/// Draws box outlines (stroke pixels inward from each edge) and appends a
/// legend strip below the image. With wrap_horizontal, boxes crossing the
/// right edge continue from the left edge. An empty overlay returns the
/// image unchanged.
RgbImage annotate(const RgbImage& image, const Overlay& overlay, int stroke,
                  bool wrap_horizontal = false);

/// Height in pixels of the legend strip appended for an image of this width.
int legend_strip_height(int image_width);

}  // namespace free360
