#pragma once

// Training-free scene-graph question answering over a single 360-degree
// image. Four graph-building steps run in order:
//   1. entity identification on the CMP rendering,
//   2. attribute extraction from per-entity crops,
//   3. inter-entity relations on ERP images rotated to center each pair,
//   4. entity-view relations from the cube face under each box center,
// after which the serialized graph is used to answer the question, with a
// direct image fallback when the model reports the graph is insufficient.

#include <array>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "free360/backend.hpp"
#include "free360/image.hpp"
#include "free360/scene_graph.hpp"
#include "free360/sphere_geom.hpp"

namespace free360::pipeline {

inline constexpr std::string_view kCannotAnswer = "CANNOT ANSWER";

/// Prompt texts with {name} placeholders. Recognized names: question,
/// options, label, legend, graph, image_width, image_height, response.
struct PromptTemplates {
  std::string system;
  std::string step1;
  std::string step1_retry;
  std::string step2;
  std::string step3;
  std::string qa;
  std::string fallback;

  static PromptTemplates defaults();
  /// Defaults overridden by <name>.txt files found in `dir` (system.txt,
  /// step1.txt, step1_retry.txt, step2.txt, step3.txt, qa.txt, fallback.txt).
  static PromptTemplates from_directory(const std::filesystem::path& dir);
};

/// Substitutes {name} placeholders; unknown placeholders are left as is.
std::string render_template(std::string_view tmpl,
                            const std::map<std::string, std::string>& vars);

struct PipelineConfig {
  bool use_crop = true;
  bool use_rotate = true;
  bool use_evr = true;
  std::optional<std::size_t> max_entity_pairs;  // unset: all pairs
  PromptTemplates templates = PromptTemplates::defaults();
  bool fallback_on_cannot_answer = true;
  std::optional<int> image_downscale_for_prompting;  // max dimension
  graph::InterViewTable inter_view = graph::InterViewTable::Full;
  int overlay_stroke = 0;  // 0: derived from the image width
  int concurrency = 1;     // parallel step-2 / step-3 backend calls
  int max_output_tokens = 1024;

  /// Throws ConfigError when a required template is empty or limits are
  /// out of range.
  void validate() const;
};

/// JSON-lines log of pipeline events, kept in memory and optionally on disk.
class RunLog {
 public:
  RunLog() = default;
  explicit RunLog(const std::filesystem::path& path);

  void event(nlohmann::json e);
  std::vector<nlohmann::json> events() const;

 private:
  mutable std::mutex mu_;
  std::vector<nlohmann::json> events_;
  std::optional<std::ofstream> file_;
};

struct Detection {
  std::string label;
  geom::PixelBox box;
};

/// Parses the step-1 JSON array of {"label", "box": [x1, y1, x2, y2]}. Text
/// around the array (e.g. code fences) is ignored. Throws ProtocolError.
std::vector<Detection> parse_detections(std::string_view response);

/// First standalone A-D after the token "Answer", otherwise the last
/// standalone A-D anywhere; none when there is no such letter.
std::optional<int> parse_answer_letter(std::string_view response);

/// "A. first\nB. second\n..." for the four options.
std::string format_options(const std::array<std::string, 4>& options);

struct QaResult {
  std::optional<int> answer_index;
  std::string reasoning;
  bool used_fallback = false;
  /// Graph construction failed and the question was answered on the image.
  bool pipeline_failed = false;
  std::vector<std::pair<std::string, double>> step_timings;
  graph::SceneGraph graph;
  std::string serialized_graph;
};

class Free360Pipeline {
 public:
  Free360Pipeline(backend::Backend& backend, PipelineConfig config, RunLog* log = nullptr);

  const PipelineConfig& config() const { return config_; }

  /// Step 1. Boxes are returned in CMP canvas coordinates, clamped to the
  /// canvas; boxes lying only in unoccupied cells are dropped. Throws
  /// ProtocolError when the response is unparsable after one reformat retry.
  std::vector<Detection> step1_identify(const CmpImage& cmp, const std::string& question);

  /// Fresh graph holding the detections in order.
  graph::SceneGraph build_graph(const std::vector<Detection>& detections) const;

  /// Step 2: one attribute request per entity.
  void step2_attributes(graph::SceneGraph& g, const CmpImage& cmp, const std::string& question);

  /// Transports every entity box from the CMP canvas to the ERP frame.
  void transport_boxes(graph::SceneGraph& g, const geom::CmpLayout& layout, int erp_width,
                       int erp_height);

  /// Step 3: one relation request per unordered pair, in insertion order.
  void step3_inter_entity(graph::SceneGraph& g, const ErpImage& erp, const std::string& question);

  /// Step 4: no backend calls.
  void step4_entity_view(graph::SceneGraph& g, const geom::CmpLayout& layout);

  /// Graph-based answer with the CANNOT ANSWER fallback on the CMP image.
  QaResult answer(const graph::SceneGraph& g, const std::string& question,
                  const std::array<std::string, 4>& options, const CmpImage& cmp);

  /// Answers directly on an image, bypassing the graph.
  QaResult answer_on_image(const RgbImage& image, std::string source, const std::string& question,
                           const std::array<std::string, 4>& options, std::string step);

  QaResult run(const ErpImage& erp, const std::string& question,
               const std::array<std::string, 4>& options);

 private:
  backend::BackendRequest make_request(std::string step, std::string text,
                                       std::vector<backend::ImagePart> images) const;
  backend::ImagePart prompt_image(const RgbImage& image, std::string source) const;
  void log(nlohmann::json e);

  backend::Backend& backend_;
  PipelineConfig config_;
  RunLog* log_;
};

}  // namespace free360::pipeline
