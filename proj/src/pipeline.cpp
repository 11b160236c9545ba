#include "free360/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <functional>
#include <sstream>
#include <thread>

#include "free360/errors.hpp"
#include "free360/reproject.hpp"

namespace free360::pipeline {

using backend::BackendRequest;
using backend::ImagePart;
using geom::PixelBox;
using graph::EntityId;
using graph::SceneGraph;
using nlohmann::json;

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Runs task(i) for i in [0, n) with at most `limit` in flight and returns the
// results in index order.
template <typename R>
std::vector<R> run_bounded(std::size_t n, int limit, const std::function<R(std::size_t)>& task) {
  std::vector<R> results(n);
  if (limit <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) results[i] = task(i);
    return results;
  }
  std::atomic<std::size_t> next{0};
  {
    std::vector<std::jthread> workers;
    const std::size_t count = std::min<std::size_t>(static_cast<std::size_t>(limit), n);
    for (std::size_t w = 0; w < count; ++w) {
      workers.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) results[i] = task(i);
      });
    }
  }
  return results;
}

bool is_option_letter(char c) { return c >= 'A' && c <= 'D'; }

bool standalone_at(std::string_view s, std::size_t i) {
  const auto word = [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) != 0 || c == '_';
  };
  if (!is_option_letter(s[i])) return false;
  if (i > 0 && word(s[i - 1])) return false;
  if (i + 1 < s.size() && word(s[i + 1])) return false;
  return true;
}

std::string options_text(const std::array<std::string, 4>& options) {
  return format_options(options);
}

}  // namespace

// Templates ------------------------------------------------------------------

PromptTemplates PromptTemplates::defaults() {
  PromptTemplates t;
  t.system =
      "You are a careful visual assistant analysing a 360-degree panorama. Follow the output "
      "format exactly.";
  t.step1 =
      "The image is a cubemap rendering of a 360-degree panorama ({image_width}x{image_height} "
      "pixels; six faces in a 4x3 cross, blank cells are unused).\n"
      "Question: {question}\n"
      "List every visible entity that is relevant to answering the question. Reply with a JSON "
      "array only, one object per entity: {\"label\": <short noun>, \"box\": [x1, y1, x2, y2]} "
      "where (x1, y1) is the top-left and (x2, y2) the bottom-right corner in pixels.\n"
      "Example: [{\"label\": \"person\", \"box\": [120, 340, 180, 520]}]";
  t.step1_retry =
      "Your previous reply could not be parsed:\n{response}\n"
      "Rewrite it as a JSON array of {\"label\": ..., \"box\": [x1, y1, x2, y2]} objects and "
      "output nothing else.";
  t.step2 =
      "The image shows a {label} cropped from a 360-degree panorama.\n"
      "Question: {question}\n"
      "Describe the {label} in one short phrase, focusing on details that help answer the "
      "question (colour, text, patterns, logos, state). Reply with the phrase only.";
  t.step3 =
      "The image is a 360-degree equirectangular panorama. Two entities are outlined: {legend}.\n"
      "Describe the spatial relation of the first entity to the second in a few words (for "
      "example: \"to the left of\", \"behind\", \"on top of\"). Reply with the relation only.";
  t.qa =
      "Scene graph of a 360-degree image:\n{graph}\n"
      "Question: {question}\n"
      "Options:\n{options}\n"
      "Reason over the scene graph and select the most plausible option. If the graph does not "
      "contain enough information, reply exactly CANNOT ANSWER. Otherwise end with "
      "\"Answer: <letter>\".";
  t.fallback =
      "The image is a cubemap rendering of a 360-degree panorama.\n"
      "Question: {question}\n"
      "Options:\n{options}\n"
      "Explain your reasoning briefly and end with \"Answer: <letter>\".";
  return t;
}

PromptTemplates PromptTemplates::from_directory(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) {
    throw ConfigError("template directory not found: " + dir.string());
  }
  PromptTemplates t = defaults();
  const std::pair<const char*, std::string*> slots[] = {
      {"system.txt", &t.system}, {"step1.txt", &t.step1}, {"step1_retry.txt", &t.step1_retry},
      {"step2.txt", &t.step2},   {"step3.txt", &t.step3}, {"qa.txt", &t.qa},
      {"fallback.txt", &t.fallback}};
  for (const auto& [name, slot] : slots) {
    const auto p = dir / name;
    if (std::filesystem::exists(p)) *slot = read_file(p);
  }
  return t;
}

std::string render_template(std::string_view tmpl, const std::map<std::string, std::string>& vars) {
  std::string out;
  out.reserve(tmpl.size());
  std::size_t i = 0;
  while (i < tmpl.size()) {
    if (tmpl[i] == '{') {
      const std::size_t close = tmpl.find('}', i + 1);
      if (close != std::string_view::npos) {
        const auto it = vars.find(std::string(tmpl.substr(i + 1, close - i - 1)));
        if (it != vars.end()) {
          out += it->second;
          i = close + 1;
          continue;
        }
      }
    }
    out += tmpl[i++];
  }
  return out;
}

void PipelineConfig::validate() const {
  const std::pair<const char*, const std::string*> required[] = {
      {"step1", &templates.step1}, {"step2", &templates.step2}, {"step3", &templates.step3},
      {"qa", &templates.qa}, {"fallback", &templates.fallback}};
  for (const auto& [name, text] : required) {
    if (text->empty()) throw ConfigError(std::string("prompt template \"") + name + "\" is empty");
  }
  if (concurrency < 1) throw ConfigError("concurrency must be >= 1");
  if (max_output_tokens < 1) throw ConfigError("max_output_tokens must be >= 1");
  if (image_downscale_for_prompting && *image_downscale_for_prompting < 1) {
    throw ConfigError("image_downscale_for_prompting must be >= 1");
  }
}

// Run log ---------------------------------------------------------------------

RunLog::RunLog(const std::filesystem::path& path) {
  file_.emplace(path, std::ios::out | std::ios::trunc);
  if (!*file_) throw IoError("cannot open run log: " + path.string());
}

void RunLog::event(json e) {
  std::lock_guard lock(mu_);
  if (file_) {
    *file_ << e.dump() << '\n';
    file_->flush();
  }
  events_.push_back(std::move(e));
}

std::vector<json> RunLog::events() const {
  std::lock_guard lock(mu_);
  return events_;
}

// Parsing ---------------------------------------------------------------------

std::vector<Detection> parse_detections(std::string_view response) {
  const std::size_t open = response.find('[');
  const std::size_t close = response.rfind(']');
  if (open == std::string_view::npos || close == std::string_view::npos || close < open) {
    throw ProtocolError("no JSON array in entity response");
  }
  json arr;
  try {
    arr = json::parse(response.substr(open, close - open + 1));
  } catch (const json::parse_error& e) {
    throw ProtocolError(std::string("entity response is not valid JSON: ") + e.what());
  }
  if (!arr.is_array()) throw ProtocolError("entity response is not an array");
  std::vector<Detection> out;
  for (const json& item : arr) {
    if (!item.is_object() || !item.contains("label") || !item["label"].is_string() ||
        !item.contains("box") || !item["box"].is_array() || item["box"].size() != 4) {
      throw ProtocolError("entity entries need a string label and a 4-number box");
    }
    std::array<double, 4> v{};
    for (int k = 0; k < 4; ++k) {
      if (!item["box"][k].is_number()) throw ProtocolError("box coordinates must be numbers");
      v[k] = item["box"][k].get<double>();
    }
    out.push_back(Detection{item["label"].get<std::string>(), PixelBox{v[0], v[1], v[2], v[3]}});
  }
  return out;
}

std::optional<int> parse_answer_letter(std::string_view response) {
  const std::size_t tag = response.find("Answer");
  if (tag != std::string_view::npos) {
    for (std::size_t i = tag + 6; i < response.size(); ++i) {
      if (standalone_at(response, i)) return response[i] - 'A';
    }
  }
  for (std::size_t i = response.size(); i-- > 0;) {
    if (standalone_at(response, i)) return response[i] - 'A';
  }
  return std::nullopt;
}

std::string format_options(const std::array<std::string, 4>& options) {
  std::string out;
  for (int i = 0; i < 4; ++i) {
    out += static_cast<char>('A' + i);
    out += ". ";
    out += options[i];
    if (i < 3) out += '\n';
  }
  return out;
}

// Pipeline --------------------------------------------------------------------

Free360Pipeline::Free360Pipeline(backend::Backend& backend, PipelineConfig config, RunLog* log)
    : backend_(backend), config_(std::move(config)), log_(log) {
  config_.validate();
}

void Free360Pipeline::log(json e) {
  if (log_ != nullptr) log_->event(std::move(e));
}

BackendRequest Free360Pipeline::make_request(std::string step, std::string text,
                                             std::vector<ImagePart> images) const {
  backend::Turn turn;
  turn.role = backend::Role::User;
  turn.parts.emplace_back(backend::TextPart{std::move(text)});
  for (ImagePart& img : images) turn.parts.emplace_back(std::move(img));
  backend::Decoding dec;
  dec.max_output_tokens = config_.max_output_tokens;
  return BackendRequest(std::move(step), config_.templates.system, {std::move(turn)}, dec);
}

ImagePart Free360Pipeline::prompt_image(const RgbImage& image, std::string source) const {
  if (config_.image_downscale_for_prompting) {
    return ImagePart::from_image(downscale_to_fit(image, *config_.image_downscale_for_prompting),
                                 std::move(source));
  }
  return ImagePart::from_image(image, std::move(source));
}

std::vector<Detection> Free360Pipeline::step1_identify(const CmpImage& cmp,
                                                       const std::string& question) {
  ImagePart img = prompt_image(cmp.pixels(), "cmp");
  const double sx = static_cast<double>(cmp.width()) / img.width;
  const double sy = static_cast<double>(cmp.height()) / img.height;
  const std::map<std::string, std::string> vars{{"question", question},
                                                {"image_width", std::to_string(img.width)},
                                                {"image_height", std::to_string(img.height)}};
  const std::string text = render_template(config_.templates.step1, vars);
  const auto first = backend_.complete(make_request("step1", text, {img}));

  std::vector<Detection> raw;
  try {
    raw = parse_detections(first.text);
  } catch (const ProtocolError& e) {
    log({{"event", "step1.reformat_retry"}, {"error", e.what()}});
    std::map<std::string, std::string> retry_vars = vars;
    retry_vars["response"] = first.text;
    const auto second = backend_.complete(
        make_request("step1_retry", render_template(config_.templates.step1_retry, retry_vars), {}));
    raw = parse_detections(second.text);
  }

  const geom::CmpLayout& layout = cmp.layout();
  const int fs = layout.face_size();
  std::vector<Detection> out;
  for (Detection d : raw) {
    d.label = graph::sanitize_text(d.label);
    const PixelBox o = d.box.ordered();
    d.box = PixelBox{o.x1 * sx, o.y1 * sy, o.x2 * sx, o.y2 * sy}.clamped(cmp.width(), cmp.height());
    bool occupied = false;
    for (int r = 0; r < 3 && !occupied; ++r) {
      for (int c = 0; c < 4 && !occupied; ++c) {
        if (layout.face_at(c, r) == nullptr) continue;
        const double ix = std::min(d.box.x2, double((c + 1) * fs)) - std::max(d.box.x1, double(c * fs));
        const double iy = std::min(d.box.y2, double((r + 1) * fs)) - std::max(d.box.y1, double(r * fs));
        occupied = ix >= 0.0 && iy >= 0.0;
      }
    }
    if (d.label.empty() || !occupied) {
      log({{"event", "step1.dropped"}, {"label", d.label}});
      continue;
    }
    out.push_back(std::move(d));
  }
  log({{"event", "step1.detections"}, {"count", out.size()}});
  return out;
}

SceneGraph Free360Pipeline::build_graph(const std::vector<Detection>& detections) const {
  SceneGraph g(config_.inter_view);
  for (const Detection& d : detections) g.add_entity(d.label, d.box);
  return g;
}

void Free360Pipeline::step2_attributes(SceneGraph& g, const CmpImage& cmp,
                                       const std::string& question) {
  const std::size_t n = g.entity_count();
  const auto results = run_bounded<std::optional<std::string>>(
      n, config_.concurrency, [&](std::size_t i) -> std::optional<std::string> {
        const graph::EntityNode& e = g.entity(i);
        ImagePart img = config_.use_crop ? prompt_image(crop(cmp.pixels(), e.box_cmp), "crop")
                                         : prompt_image(cmp.pixels(), "cmp");
        const std::string text = render_template(
            config_.templates.step2, {{"label", e.display_name()}, {"question", question}});
        try {
          return backend_.complete(make_request("step2", text, {std::move(img)})).text;
        } catch (const Error& err) {
          log({{"event", "step2.backend_error"}, {"entity", e.display_name()}, {"error", err.what()}});
          return std::nullopt;
        }
      });
  for (std::size_t i = 0; i < n; ++i) {
    g.set_attribute(i, results[i] ? graph::sanitize_text(*results[i]) : std::string());
  }
}

void Free360Pipeline::transport_boxes(SceneGraph& g, const geom::CmpLayout& layout,
                                      int erp_width, int erp_height) {
  const int fs = layout.face_size();
  for (EntityId i = 0; i < g.entity_count(); ++i) {
    const PixelBox& b = g.entity(i).box_cmp;
    try {
      g.set_entity_erp_box(i, cmp_box_to_erp_box(b, layout, erp_width, erp_height));
      continue;
    } catch (const InvalidBox&) {
    }
    // Boxes reaching into blank cells are cut down to the cell of their center.
    try {
      const int col = std::clamp(static_cast<int>(std::floor(b.center_x() / fs)), 0, 3);
      const int row = std::clamp(static_cast<int>(std::floor(b.center_y() / fs)), 0, 2);
      if (layout.face_at(col, row) == nullptr) throw InvalidBox("center in a blank cell");
      const PixelBox cell{double(col * fs), double(row * fs), double((col + 1) * fs),
                          double((row + 1) * fs)};
      const PixelBox clipped{std::max(b.x1, cell.x1), std::max(b.y1, cell.y1),
                             std::min(b.x2, cell.x2), std::min(b.y2, cell.y2)};
      g.set_entity_erp_box(i, cmp_box_to_erp_box(clipped, layout, erp_width, erp_height));
      log({{"event", "step3.box_clipped"}, {"entity", g.entity(i).display_name()}});
    } catch (const Error& err) {
      log({{"event", "step3.box_untransportable"},
           {"entity", g.entity(i).display_name()},
           {"error", err.what()}});
    }
  }
}

void Free360Pipeline::step3_inter_entity(SceneGraph& g, const ErpImage& erp,
                                         const std::string& question) {
  std::vector<std::pair<EntityId, EntityId>> pairs;
  for (EntityId i = 0; i < g.entity_count(); ++i)
    for (EntityId j = i + 1; j < g.entity_count(); ++j) pairs.emplace_back(i, j);
  if (config_.max_entity_pairs && pairs.size() > *config_.max_entity_pairs) {
    pairs.resize(*config_.max_entity_pairs);
  }
  const int stroke =
      config_.overlay_stroke > 0 ? config_.overlay_stroke : std::max(2, erp.width() / 512);

  const auto results = run_bounded<std::optional<std::string>>(
      pairs.size(), config_.concurrency, [&](std::size_t k) -> std::optional<std::string> {
        const auto [i, j] = pairs[k];
        const graph::EntityNode& a = g.entity(i);
        const graph::EntityNode& b = g.entity(j);
        const json pair_tag = {a.display_name(), b.display_name()};
        if (!a.box_erp || !b.box_erp) {
          log({{"event", "step3.pair_skipped"}, {"pair", pair_tag}, {"reason", "no ERP box"}});
          return std::nullopt;
        }
        try {
          const geom::PairCenter pc = geom::pair_center(*a.box_erp, *b.box_erp, erp.width(), erp.height());
          std::optional<ErpImage> rotated;
          PixelBox box_a = *a.box_erp, box_b = *b.box_erp;
          if (config_.use_rotate) {
            rotated = rotate_erp(erp, pc.rot);
            box_a = transform_box_erp(box_a, pc.rot, erp.width(), erp.height());
            box_b = transform_box_erp(box_b, pc.rot, erp.width(), erp.height());
          }
          const ErpImage& base = rotated ? *rotated : erp;
          const Overlay overlay =
              Overlay::from_labeled_boxes({{a.display_name(), box_a}, {b.display_name(), box_b}});
          const RgbImage drawn = annotate(base.pixels(), overlay, stroke, true);
          const std::string text = render_template(
              config_.templates.step3,
              {{"legend", overlay.legend()}, {"question", question}, {"label", a.display_name()}});
          ImagePart img = prompt_image(drawn, config_.use_rotate ? "erp_rotated" : "erp");
          log({{"event", "step3.pair"},
               {"pair", pair_tag},
               {"c_star", {pc.c_star.lon, pc.c_star.lat}},
               {"rotated", config_.use_rotate}});
          return backend_.complete(make_request("step3", text, {std::move(img)})).text;
        } catch (const Error& err) {
          log({{"event", "step3.pair_skipped"}, {"pair", pair_tag}, {"reason", err.what()}});
          return std::nullopt;
        }
      });
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    if (!results[k]) continue;
    const std::string rel = graph::sanitize_text(*results[k]);
    if (rel.empty()) {
      log({{"event", "step3.empty_relation"}, {"pair", k}});
      continue;
    }
    g.add_inter_entity_relation(pairs[k].first, rel, pairs[k].second);
  }
}

void Free360Pipeline::step4_entity_view(SceneGraph& g, const geom::CmpLayout& layout) {
  if (!config_.use_evr) return;
  const int fs = layout.face_size();
  for (EntityId i = 0; i < g.entity_count(); ++i) {
    const PixelBox& b = g.entity(i).box_cmp;
    const double cx = b.center_x(), cy = b.center_y();
    try {
      g.add_entity_view_relation(i, geom::view_of_pixel(cx, cy, layout));
      continue;
    } catch (const OutsideFace&) {
    }
    // Snap to the nearest occupied point of the box.
    std::optional<geom::Face> best;
    double best_d2 = 0.0;
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 4; ++c) {
        const geom::Face* face = layout.face_at(c, r);
        if (face == nullptr) continue;
        const double x0 = std::max(b.x1, double(c * fs)), x1 = std::min(b.x2, double((c + 1) * fs));
        const double y0 = std::max(b.y1, double(r * fs)), y1 = std::min(b.y2, double((r + 1) * fs));
        if (x0 > x1 || y0 > y1) continue;
        const double dx = std::clamp(cx, x0, x1) - cx, dy = std::clamp(cy, y0, y1) - cy;
        const double d2 = dx * dx + dy * dy;
        if (!best || d2 < best_d2) {
          best = *face;
          best_d2 = d2;
        }
      }
    }
    if (best) {
      g.add_entity_view_relation(i, *best);
      log({{"event", "step4.snapped"}, {"entity", g.entity(i).display_name()}});
    } else {
      log({{"event", "step4.no_view"}, {"entity", g.entity(i).display_name()}});
    }
  }
}

QaResult Free360Pipeline::answer_on_image(const RgbImage& image, std::string source,
                                          const std::string& question,
                                          const std::array<std::string, 4>& options,
                                          std::string step) {
  const std::string text = render_template(
      config_.templates.fallback, {{"question", question}, {"options", options_text(options)}});
  const auto r =
      backend_.complete(make_request(std::move(step), text, {prompt_image(image, std::move(source))}));
  QaResult out;
  out.answer_index = parse_answer_letter(r.text);
  out.reasoning = r.text;
  out.used_fallback = true;
  return out;
}

QaResult Free360Pipeline::answer(const SceneGraph& g, const std::string& question,
                                 const std::array<std::string, 4>& options, const CmpImage& cmp) {
  QaResult out;
  out.graph = g;
  out.serialized_graph = g.serialize();
  const std::string text = render_template(
      config_.templates.qa,
      {{"graph", out.serialized_graph}, {"question", question}, {"options", options_text(options)}});
  const auto r = backend_.complete(make_request("qa", text, {}));
  if (config_.fallback_on_cannot_answer && r.text.find(kCannotAnswer) != std::string::npos) {
    log({{"event", "qa.cannot_answer"}});
    QaResult fb = answer_on_image(cmp.pixels(), "cmp", question, options, "qa_fallback");
    out.answer_index = fb.answer_index;
    out.reasoning = fb.reasoning;
    out.used_fallback = true;
    return out;
  }
  out.answer_index = parse_answer_letter(r.text);
  out.reasoning = r.text;
  return out;
}

QaResult Free360Pipeline::run(const ErpImage& erp, const std::string& question,
                              const std::array<std::string, 4>& options) {
  std::vector<std::pair<std::string, double>> timings;
  auto t0 = std::chrono::steady_clock::now();
  const auto lap = [&](const char* name) {
    timings.emplace_back(name, seconds_since(t0));
    t0 = std::chrono::steady_clock::now();
  };

  const geom::CmpLayout layout = geom::CmpLayout::cross(erp.width() / 4);
  const CmpImage cmp = erp_to_cmp(erp, layout);
  lap("erp_to_cmp");

  const auto direct = [&](const std::string& reason, const SceneGraph* built = nullptr) {
    log({{"event", "pipeline.direct_fallback"}, {"reason", reason}});
    QaResult r = answer_on_image(cmp.pixels(), "cmp", question, options, "direct_fallback");
    lap("answer");
    r.pipeline_failed = true;
    r.graph = built != nullptr ? *built : SceneGraph(config_.inter_view);
    r.serialized_graph = r.graph.serialize();
    r.step_timings = timings;
    return r;
  };

  std::vector<Detection> detections;
  try {
    detections = step1_identify(cmp, question);
  } catch (const Error& e) {
    lap("step1");
    return direct(std::string("step 1 failed: ") + e.what());
  }
  lap("step1");
  if (detections.empty()) return direct("no entities detected");

  SceneGraph g = build_graph(detections);
  step2_attributes(g, cmp, question);
  lap("step2");
  transport_boxes(g, layout, erp.width(), erp.height());
  step3_inter_entity(g, erp, question);
  lap("step3");
  step4_entity_view(g, layout);
  lap("step4");

  QaResult r;
  try {
    r = answer(g, question, options, cmp);
  } catch (const Error& e) {
    lap("answer");
    return direct(std::string("graph QA failed: ") + e.what(), &g);
  }
  lap("answer");
  r.step_timings = timings;
  return r;
}

}  // namespace free360::pipeline
