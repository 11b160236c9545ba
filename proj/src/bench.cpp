#include "free360/bench.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <set>
#include <thread>

#include <fmt/format.h>

#include "free360/errors.hpp"

namespace free360::bench {

using nlohmann::json;

namespace {

struct Tag {
  Subtask subtask;
  std::string_view tag;
};

constexpr std::array<Tag, 7> kTags = {{{Subtask::FP_IR, "FP-IR"},
                                       {Subtask::FP_IC, "FP-IC"},
                                       {Subtask::PP_IR, "PP-IR"},
                                       {Subtask::PP_IC, "PP-IC"},
                                       {Subtask::SR_Os, "SR-Os"},
                                       {Subtask::SR_OV, "SR-OV"},
                                       {Subtask::DG, "DG"}}};

std::string fmt_opt(const std::optional<double>& v, int decimals) {
  return v ? fmt::format("{:.{}f}", *v, decimals) : std::string();
}

Row category(const char* name, const Row& a, const Row& b, double latency_sum) {
  Row r;
  r.name = name;
  r.n = a.n + b.n;
  r.correct = a.correct + b.correct;
  if (a.accuracy && b.accuracy) r.accuracy = 0.5 * (*a.accuracy + *b.accuracy);
  if (r.n > 0) r.mean_inference_s = latency_sum / r.n;
  return r;
}

}  // namespace

std::string_view subtask_tag(Subtask s) { return kTags[static_cast<int>(s)].tag; }

std::optional<Subtask> parse_subtask(std::string_view tag) {
  for (const Tag& t : kTags)
    if (t.tag == tag) return t.subtask;
  return std::nullopt;
}

std::vector<VqaSample> parse_dataset(const json& manifest, const std::filesystem::path& base_dir) {
  if (!manifest.is_array()) throw LoadError("manifest must be a JSON array of samples");
  std::vector<VqaSample> out;
  std::set<std::string> seen;
  for (std::size_t k = 0; k < manifest.size(); ++k) {
    const json& s = manifest[k];
    std::string id = "#" + std::to_string(k);
    const auto bad = [&](const std::string& field, const std::string& why) {
      return LoadError("sample " + id + ": field \"" + field + "\" " + why);
    };
    if (!s.is_object()) throw bad("<sample>", "must be an object");
    if (!s.contains("id") || !s["id"].is_string() || s["id"].get<std::string>().empty()) {
      throw bad("id", "must be a non-empty string");
    }
    id = s["id"].get<std::string>();
    if (!seen.insert(id).second) throw bad("id", "is duplicated");

    VqaSample v;
    v.id = id;
    for (const char* f : {"image_path", "question", "subtask"}) {
      if (!s.contains(f) || !s[f].is_string()) throw bad(f, "must be a string");
    }
    const std::filesystem::path img = s["image_path"].get<std::string>();
    v.image_path = img.is_absolute() ? img : base_dir / img;
    v.question = s["question"].get<std::string>();

    if (!s.contains("options") || !s["options"].is_array() || s["options"].size() != 4) {
      throw bad("options", "must hold exactly 4 strings");
    }
    std::set<std::string> distinct;
    for (int i = 0; i < 4; ++i) {
      if (!s["options"][i].is_string()) throw bad("options", "must hold exactly 4 strings");
      v.options[i] = s["options"][i].get<std::string>();
      distinct.insert(v.options[i]);
    }
    if (distinct.size() != 4) throw bad("options", "must be distinct");

    if (!s.contains("answer_index") || !s["answer_index"].is_number_integer() ||
        s["answer_index"].get<int>() < 0 || s["answer_index"].get<int>() > 3) {
      throw bad("answer_index", "must be an integer in 0..3");
    }
    v.answer_index = s["answer_index"].get<int>();

    const auto sub = parse_subtask(s["subtask"].get<std::string>());
    if (!sub) throw bad("subtask", "is not one of FP-IR, FP-IC, PP-IR, PP-IC, SR-Os, SR-OV, DG");
    v.subtask = *sub;

    if (s.contains("boxes") && !s["boxes"].is_null()) {
      if (!s["boxes"].is_array()) throw bad("boxes", "must be an array");
      for (const json& b : s["boxes"]) {
        if (!b.is_object() || !b.contains("label") || !b["label"].is_string() ||
            !b.contains("box") || !b["box"].is_array() || b["box"].size() != 4) {
          throw bad("boxes", "entries need a label and a 4-number box");
        }
        std::array<double, 4> c{};
        for (int i = 0; i < 4; ++i) {
          if (!b["box"][i].is_number()) throw bad("boxes", "coordinates must be numbers");
          c[i] = b["box"][i].get<double>();
        }
        v.boxes.emplace_back(b["label"].get<std::string>(), geom::PixelBox{c[0], c[1], c[2], c[3]});
      }
    }
    out.push_back(std::move(v));
  }
  return out;
}

std::vector<VqaSample> load_dataset(const std::filesystem::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw LoadError("cannot open manifest: " + manifest_path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw LoadError("manifest " + manifest_path.string() + " is not valid JSON: " + e.what());
  }
  return parse_dataset(j, manifest_path.parent_path());
}

std::array<PermutedSample, 4> cyclic_permute(const VqaSample& sample) {
  std::array<PermutedSample, 4> out;
  for (int r = 0; r < 4; ++r) {
    PermutedSample& p = out[r];
    p.base_id = sample.id;
    p.rotation = r;
    for (int i = 0; i < 4; ++i) p.options[(i + r) % 4] = sample.options[i];
    p.answer_index = (sample.answer_index + r) % 4;
    p.image_path = sample.image_path;
    p.question = sample.question;
    p.subtask = sample.subtask;
  }
  return out;
}

std::vector<PermutedSample> expand_all(const std::vector<VqaSample>& samples) {
  std::vector<PermutedSample> out;
  out.reserve(samples.size() * 4);
  for (const VqaSample& s : samples) {
    for (PermutedSample& p : cyclic_permute(s)) out.push_back(std::move(p));
  }
  return out;
}

BenchReport aggregate(const std::vector<ItemResult>& items, const std::string& strategy) {
  BenchReport rep;
  rep.strategy = strategy;
  std::array<double, 7> latency{};
  double latency_total = 0.0;
  for (int k = 0; k < 7; ++k) rep.subtasks[k].name = std::string(kTags[k].tag);
  for (const ItemResult& it : items) {
    const int k = static_cast<int>(it.sample.subtask);
    rep.subtasks[k].n += 1;
    rep.subtasks[k].correct += it.correct ? 1 : 0;
    latency[k] += it.latency_s;
    latency_total += it.latency_s;
  }
  for (int k = 0; k < 7; ++k) {
    Row& r = rep.subtasks[k];
    if (r.n > 0) {
      r.accuracy = 100.0 * static_cast<double>(r.correct) / static_cast<double>(r.n);
      r.mean_inference_s = latency[k] / r.n;
    }
  }
  const auto& s = rep.subtasks;
  rep.fp = category("FP", s[0], s[1], latency[0] + latency[1]);
  rep.pp = category("PP", s[2], s[3], latency[2] + latency[3]);
  rep.sr = category("SR", s[4], s[5], latency[4] + latency[5]);
  rep.overall.name = "overall";
  rep.overall.n = items.size();
  for (const Row& r : s) rep.overall.correct += r.correct;
  if (!items.empty()) {
    rep.overall.accuracy =
        100.0 * static_cast<double>(rep.overall.correct) / static_cast<double>(items.size());
    rep.overall.mean_inference_s = latency_total / items.size();
  }
  return rep;
}

std::string BenchReport::csv() const {
  std::string out = "subtask,n,accuracy,mean_inference_s\n";
  const auto line = [&](const Row& r) {
    out += fmt::format("{},{},{},{}\n", r.name, r.n, fmt_opt(r.accuracy, 2),
                       fmt_opt(r.mean_inference_s, 1));
  };
  for (const Row& r : subtasks) line(r);
  line(fp);
  line(pp);
  line(sr);
  line(overall);
  return out;
}

std::string BenchReport::markdown() const {
  const auto cell = [](const std::optional<double>& v) {
    return v ? fmt::format("{:.1f}", *v) : std::string("n/a");
  };
  std::string out =
      "| Strategy | FP-IR | FP-IC | FP Avg. | PP-IR | PP-IC | PP Avg. | SR-Os | SR-OV | SR Avg. "
      "| DG | Overall | Inf. Time (s) |\n"
      "|---|---|---|---|---|---|---|---|---|---|---|---|---|\n";
  const auto& s = subtasks;
  out += fmt::format("| {} | {} | {} | {} | {} | {} | {} | {} | {} | {} | {} | {} | {} |\n",
                     strategy, cell(s[0].accuracy), cell(s[1].accuracy), cell(fp.accuracy),
                     cell(s[2].accuracy), cell(s[3].accuracy), cell(pp.accuracy),
                     cell(s[4].accuracy), cell(s[5].accuracy), cell(sr.accuracy),
                     cell(s[6].accuracy), cell(overall.accuracy),
                     cell(overall.mean_inference_s));
  return out;
}

BenchReport evaluate(const std::vector<VqaSample>& samples, const Answerer& answerer,
                     const EvalOptions& options, std::vector<ItemResult>* items_out) {
  std::optional<std::ofstream> log;
  if (options.report_dir) {
    std::error_code ec;
    std::filesystem::create_directories(*options.report_dir, ec);
    if (ec) throw IoError("cannot create report directory " + options.report_dir->string());
    log.emplace(*options.report_dir / "run_log.jsonl", std::ios::out | std::ios::trunc);
    if (!*log) throw IoError("cannot write run log in " + options.report_dir->string());
  }

  const std::vector<PermutedSample> work = expand_all(samples);
  std::vector<ItemResult> results(work.size());
  const auto run_one = [&](std::size_t i) {
    ItemResult& r = results[i];
    r.sample = work[i];
    const auto t0 = std::chrono::steady_clock::now();
    std::optional<double> reported;
    try {
      const AnswerOutcome a = answerer(work[i]);
      r.predicted = a.answer_index;
      r.used_fallback = a.used_fallback;
      reported = a.latency_s;
    } catch (const std::exception& e) {
      r.error = e.what();
    }
    r.latency_s = reported.value_or(
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    r.correct = r.predicted && *r.predicted == r.sample.answer_index;
  };

  const int jobs = std::max(1, options.jobs);
  if (jobs == 1) {
    for (std::size_t i = 0; i < work.size(); ++i) run_one(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> pool;
    for (int w = 0; w < jobs; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < work.size(); i = next++) run_one(i);
      });
    }
  }

  BenchReport rep = aggregate(results, options.strategy);
  if (options.report_dir) {
    for (const ItemResult& r : results) {
      json j{{"id", r.sample.base_id},
             {"rotation", r.sample.rotation},
             {"predicted", r.predicted ? json(*r.predicted) : json(nullptr)},
             {"answer_index", r.sample.answer_index},
             {"correct", r.correct},
             {"latency", r.latency_s},
             {"used_fallback", r.used_fallback}};
      if (!r.error.empty()) j["error"] = r.error;
      *log << j.dump() << '\n';
    }
    const auto write = [&](const char* name, const std::string& text) {
      std::ofstream f(*options.report_dir / name, std::ios::out | std::ios::trunc);
      f << text;
      if (!f) throw IoError(std::string("cannot write ") + name);
    };
    write("report.csv", rep.csv());
    write("report.md", rep.markdown());
  }
  if (items_out != nullptr) *items_out = std::move(results);
  return rep;
}

}  // namespace free360::bench
