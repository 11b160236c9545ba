#include <cstring>

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "free360/backend.hpp"
#include "free360/errors.hpp"
#include "free360/image.hpp"
#include "free360/pipeline.hpp"
#include "free360/reproject.hpp"
#include "free360/scene_graph.hpp"
#include "free360/sphere_geom.hpp"

namespace py = pybind11;
using namespace free360;

namespace {

using Array = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

RgbImage to_image(const Array& a) {
  if (a.ndim() != 3 || a.shape(2) != 3) throw InvalidGeometry("expected an (H, W, 3) uint8 array");
  const auto h = static_cast<int>(a.shape(0)), w = static_cast<int>(a.shape(1));
  std::vector<std::uint8_t> data(a.data(), a.data() + a.size());
  return RgbImage(w, h, std::move(data));
}

Array to_array(const RgbImage& img) {
  Array out({img.height(), img.width(), 3});
  const auto bytes = img.bytes();
  std::memcpy(out.mutable_data(), bytes.data(), bytes.size());
  return out;
}

geom::PixelBox to_box(const std::array<double, 4>& b) { return {b[0], b[1], b[2], b[3]}; }
std::array<double, 4> from_box(const geom::PixelBox& b) { return {b.x1, b.y1, b.x2, b.y2}; }

}  // namespace

PYBIND11_MODULE(_free360, m) {
  m.doc() = "Spherical geometry, reprojection and scene-graph QA pipeline";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<InvalidGeometry>(m, "InvalidGeometry", base.ptr());
  py::register_exception<DegeneratePair>(m, "DegeneratePair", base.ptr());
  py::register_exception<DegenerateBox>(m, "DegenerateBox", base.ptr());
  py::register_exception<OutsideFace>(m, "OutsideFace", base.ptr());
  py::register_exception<InvalidBox>(m, "InvalidBox", base.ptr());
  auto validation = py::register_exception<ValidationError>(m, "ValidationError", base.ptr());
  py::register_exception<SanitizationError>(m, "SanitizationError", validation.ptr());
  py::register_exception<ParseError>(m, "ParseError", base.ptr());
  py::register_exception<ScriptMismatch>(m, "ScriptMismatch", base.ptr());
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());

  m.def(
      "rotation_matrix",
      [](double phi, double theta) { return geom::rotation_matrix(phi, theta).matrix; },
      py::arg("phi"), py::arg("theta"), "3x3 matrix that sends the forward axis to (phi, theta).");

  m.def(
      "pair_center",
      [](const std::array<double, 4>& a, const std::array<double, 4>& b, int width, int height) {
        const auto pc = geom::pair_center(to_box(a), to_box(b), width, height);
        return py::make_tuple(pc.c_star.lon, pc.c_star.lat);
      },
      py::arg("box_a"), py::arg("box_b"), py::arg("width"), py::arg("height"),
      "(lon, lat) of the midpoint of the spherical box enclosing both ERP boxes.");

  m.def(
      "view_of_pixel",
      [](double x, double y, int face_size) {
        return std::string(geom::face_name(geom::view_of_pixel(x, y, geom::CmpLayout::cross(face_size))));
      },
      py::arg("x"), py::arg("y"), py::arg("face_size"));

  m.def(
      "erp_to_cmp",
      [](const Array& erp) {
        const ErpImage src(to_image(erp));
        return to_array(erp_to_cmp(src, geom::CmpLayout::cross(src.width() / 4)).pixels());
      },
      py::arg("erp"));

  m.def(
      "cmp_to_erp",
      [](const Array& cmp, int width) {
        RgbImage px = to_image(cmp);
        const auto layout = geom::CmpLayout::cross(px.width() / 4);
        return to_array(cmp_to_erp(CmpImage(layout, std::move(px)), width).pixels());
      },
      py::arg("cmp"), py::arg("width"));

  m.def(
      "rotate_erp",
      [](const Array& erp, double phi, double theta) {
        return to_array(rotate_erp(ErpImage(to_image(erp)), geom::rotation_matrix(phi, theta)).pixels());
      },
      py::arg("erp"), py::arg("phi"), py::arg("theta"),
      "Rotates the panorama so that direction (phi, theta) lands at the image center.");

  m.def(
      "transform_box_erp",
      [](const std::array<double, 4>& box, double phi, double theta, int width, int height) {
        return from_box(transform_box_erp(to_box(box), geom::rotation_matrix(phi, theta), width, height));
      },
      py::arg("box"), py::arg("phi"), py::arg("theta"), py::arg("width"), py::arg("height"));

  m.def("sanitize_text", [](const std::string& s) { return graph::sanitize_text(s); }, py::arg("text"));

  m.def(
      "run_mock",
      [](const Array& erp, const std::string& question, const std::array<std::string, 4>& options,
         const std::string& script_json, bool use_crop, bool use_rotate, bool use_evr) {
        backend::MockBackend mock(backend::mock_script_from_json(nlohmann::json::parse(script_json)));
        pipeline::PipelineConfig cfg;
        cfg.use_crop = use_crop;
        cfg.use_rotate = use_rotate;
        cfg.use_evr = use_evr;
        pipeline::Free360Pipeline p(mock, cfg);
        const auto r = p.run(ErpImage(to_image(erp)), question, options);
        py::dict out;
        out["answer_index"] = r.answer_index ? py::object(py::int_(*r.answer_index)) : py::none();
        out["used_fallback"] = r.used_fallback;
        out["graph"] = r.serialized_graph;
        return out;
      },
      py::arg("erp"), py::arg("question"), py::arg("options"), py::arg("script_json"),
      py::arg("use_crop") = true, py::arg("use_rotate") = true, py::arg("use_evr") = true,
      "Runs the full question-answering pipeline against a scripted backend.");
}
