#pragma once

// Multiple-choice VQA evaluation: manifest loading, cyclic option
// permutation, a bounded-concurrency evaluation loop and Table-3-shaped
// reports.

#include <array>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "free360/sphere_geom.hpp"

namespace free360::bench {

enum class Subtask { FP_IR, FP_IC, PP_IR, PP_IC, SR_Os, SR_OV, DG };

inline constexpr std::array<Subtask, 7> kAllSubtasks = {
    Subtask::FP_IR, Subtask::FP_IC, Subtask::PP_IR, Subtask::PP_IC,
    Subtask::SR_Os, Subtask::SR_OV, Subtask::DG};

std::string_view subtask_tag(Subtask s);
std::optional<Subtask> parse_subtask(std::string_view tag);

struct VqaSample {
  std::string id;
  std::filesystem::path image_path;  // resolved against the manifest directory
  std::string question;
  std::array<std::string, 4> options;
  int answer_index = 0;
  Subtask subtask = Subtask::FP_IR;
  std::vector<std::pair<std::string, geom::PixelBox>> boxes;
};

struct PermutedSample {
  std::string base_id;
  int rotation = 0;
  std::array<std::string, 4> options;
  int answer_index = 0;
  std::filesystem::path image_path;
  std::string question;
  Subtask subtask = Subtask::FP_IR;
};

/// Validates a manifest JSON array. Relative image paths are joined to
/// `base_dir`. Throws LoadError naming the sample id and field.
std::vector<VqaSample> parse_dataset(const nlohmann::json& manifest,
                                     const std::filesystem::path& base_dir);
std::vector<VqaSample> load_dataset(const std::filesystem::path& manifest_path);

/// Rotation r moves option i to position (i + r) mod 4.
std::array<PermutedSample, 4> cyclic_permute(const VqaSample& sample);
std::vector<PermutedSample> expand_all(const std::vector<VqaSample>& samples);

struct AnswerOutcome {
  std::optional<int> answer_index;
  bool used_fallback = false;
  /// Replaces the wall-clock measurement when set. Scripted backends report
  /// their own latency so that reports stay reproducible.
  std::optional<double> latency_s;
};

using Answerer = std::function<AnswerOutcome(const PermutedSample&)>;

struct Row {
  std::string name;
  std::size_t n = 0;
  std::size_t correct = 0;
  std::optional<double> accuracy;  // percent; unset when n = 0
  std::optional<double> mean_inference_s;
};

struct BenchReport {
  std::string strategy;
  std::array<Row, 7> subtasks;  // in kAllSubtasks order
  Row fp, pp, sr;               // accuracy = mean of the two subtask accuracies
  Row overall;                  // accuracy = correct / total

  std::string csv() const;
  std::string markdown() const;
};

struct ItemResult {
  PermutedSample sample;
  std::optional<int> predicted;
  bool correct = false;
  double latency_s = 0.0;
  bool used_fallback = false;
  std::string error;
};

struct EvalOptions {
  std::string strategy = "free360";
  int jobs = 1;
  /// When set, report.csv, report.md and run_log.jsonl are written here.
  std::optional<std::filesystem::path> report_dir;
};

/// Aggregates per-item results; independent of item order.
BenchReport aggregate(const std::vector<ItemResult>& items, const std::string& strategy);

/// Expands every sample with cyclic_permute, answers each permuted sample
/// (failures and missing answers score 0) and aggregates. Throws IoError when
/// the report directory cannot be written.
BenchReport evaluate(const std::vector<VqaSample>& samples, const Answerer& answerer,
                     const EvalOptions& options, std::vector<ItemResult>* items_out = nullptr);

}  // namespace free360::bench
