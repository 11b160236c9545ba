#include "cli.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "free360/backend.hpp"
#include "free360/bench.hpp"
#include "free360/errors.hpp"
#include "free360/image.hpp"
#include "free360/pipeline.hpp"
#include "free360/reproject.hpp"

namespace free360::cli {

using nlohmann::json;

namespace {

// Forwards to another backend and sums the latency each response reports.
class LatencyTally : public backend::Backend {
 public:
  explicit LatencyTally(backend::Backend& inner) : inner_(inner) {}
  backend::BackendResponse complete(const backend::BackendRequest& request) override {
    backend::BackendResponse r = inner_.complete(request);
    total_ += r.latency_s;
    return r;
  }
  double total() const { return total_; }

 private:
  backend::Backend& inner_;
  double total_ = 0.0;
};

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) parts.push_back(cur);
  if (!s.empty() && s.back() == sep) parts.emplace_back();
  return parts;
}

geom::PixelBox parse_box(const std::string& text) {
  const auto parts = split(text, ',');
  if (parts.size() != 4) throw ConfigError("box must be x1,y1,x2,y2: \"" + text + "\"");
  std::array<double, 4> v{};
  for (int i = 0; i < 4; ++i) {
    try {
      std::size_t used = 0;
      v[i] = std::stod(parts[i], &used);
      if (used != parts[i].size()) throw std::invalid_argument(parts[i]);
    } catch (const std::exception&) {
      throw ConfigError("box coordinate is not a number: \"" + parts[i] + "\"");
    }
  }
  return geom::PixelBox{v[0], v[1], v[2], v[3]};
}

// Settings shared by `ask` and `bench`; mirrors the optional JSON config file.
struct CliConfig {
  std::string backend = "mock";
  std::string endpoint;
  std::string model = "gpt-4o";
  std::string api_key_env = kApiKeyEnv;
  std::string script;
  std::string transcript;
  std::string templates;
  bool no_crop = false;
  bool no_rotate = false;
  bool no_evr = false;
  int max_pairs = -1;
  int max_prompt_dim = 0;
  int jobs = 1;
  double timeout_s = 120.0;
  int retries = 3;
};

void apply_config_file(const std::string& path, CliConfig& c) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config file is not valid JSON: " + std::string(e.what()));
  }
  if (!j.is_object()) throw ConfigError("config file must hold a JSON object");
  c.backend = j.value("backend", c.backend);
  c.endpoint = j.value("endpoint", c.endpoint);
  c.model = j.value("model", c.model);
  c.api_key_env = j.value("api_key_env", c.api_key_env);
  c.script = j.value("script", c.script);
  c.transcript = j.value("transcript", c.transcript);
  c.templates = j.value("templates", c.templates);
  c.no_crop = !j.value("use_crop", !c.no_crop);
  c.no_rotate = !j.value("use_rotate", !c.no_rotate);
  c.no_evr = !j.value("use_evr", !c.no_evr);
  c.max_pairs = j.value("max_entity_pairs", c.max_pairs);
  c.max_prompt_dim = j.value("max_prompt_dim", c.max_prompt_dim);
  c.jobs = j.value("jobs", c.jobs);
  c.timeout_s = j.value("timeout_s", c.timeout_s);
  c.retries = j.value("retries", c.retries);
}

struct BackendOptions {
  CliConfig cfg;
  std::string config_path;
  std::vector<CLI::Option*> explicit_opts;
};

// Options registered on a subcommand; values land in `bo.cfg`.
void add_backend_options(CLI::App* sub, BackendOptions& bo) {
  CliConfig& c = bo.cfg;
  sub->add_option("--config", bo.config_path, "JSON config file (flags override it)");
  sub->add_option("--backend", c.backend, "Model backend: http or mock")
      ->check(CLI::IsMember({"http", "mock"}));
  sub->add_option("--script", c.script, "Mock script (JSON) for --backend mock");
  sub->add_option("--endpoint", c.endpoint,
                  std::string("Chat-completions base URL (default: $") + kApiBaseEnv + ")");
  sub->add_option("--model", c.model, "Model name sent to the HTTP backend");
  sub->add_option("--api-key-env", c.api_key_env, "Environment variable holding the API key");
  sub->add_option("--transcript", c.transcript, "Write the request/response transcript (JSONL)");
  sub->add_option("--templates", c.templates, "Directory of prompt template overrides");
  sub->add_flag("--no-crop", c.no_crop, "Attribute extraction on the full image");
  sub->add_flag("--no-rotate", c.no_rotate, "Relation detection on the unrotated ERP");
  sub->add_flag("--no-evr", c.no_evr, "Skip entity-view relations");
  sub->add_option("--max-pairs", c.max_pairs, "Cap on entity pairs in relation detection");
  sub->add_option("--max-prompt-dim", c.max_prompt_dim,
                  "Downscale prompt images to this maximum dimension");
  sub->add_option("--timeout", c.timeout_s, "HTTP request timeout in seconds");
  sub->add_option("--retries", c.retries, "HTTP retries on transport errors");
}

// Re-applies explicitly given flags on top of the config file values.
CliConfig resolve_config(CLI::App* sub, const BackendOptions& bo) {
  CliConfig flags = bo.cfg;
  if (bo.config_path.empty()) return flags;
  CliConfig c;
  apply_config_file(bo.config_path, c);
  const auto given = [sub](const char* name) { return sub->get_option(name)->count() > 0; };
  if (given("--backend")) c.backend = flags.backend;
  if (given("--script")) c.script = flags.script;
  if (given("--endpoint")) c.endpoint = flags.endpoint;
  if (given("--model")) c.model = flags.model;
  if (given("--api-key-env")) c.api_key_env = flags.api_key_env;
  if (given("--transcript")) c.transcript = flags.transcript;
  if (given("--templates")) c.templates = flags.templates;
  if (given("--no-crop")) c.no_crop = true;
  if (given("--no-rotate")) c.no_rotate = true;
  if (given("--no-evr")) c.no_evr = true;
  if (given("--max-pairs")) c.max_pairs = flags.max_pairs;
  if (given("--max-prompt-dim")) c.max_prompt_dim = flags.max_prompt_dim;
  if (given("--timeout")) c.timeout_s = flags.timeout_s;
  if (given("--retries")) c.retries = flags.retries;
  if (sub->get_option_no_throw("--jobs") != nullptr && given("--jobs")) c.jobs = flags.jobs;
  return c;
}

std::unique_ptr<backend::Backend> make_backend(const CliConfig& c) {
  if (c.backend == "mock") {
    if (c.script.empty()) throw ConfigError("--backend mock requires --script");
    return std::make_unique<backend::MockBackend>(backend::load_mock_script(c.script));
  }
  backend::HttpConfig h;
  h.base_url = c.endpoint;
  if (h.base_url.empty()) {
    if (const char* env = std::getenv(kApiBaseEnv)) h.base_url = env;
  }
  if (h.base_url.empty()) {
    throw ConfigError(std::string("--backend http requires --endpoint or $") + kApiBaseEnv);
  }
  const char* key = std::getenv(c.api_key_env.c_str());
  if (key == nullptr || *key == '\0') {
    throw ConfigError("--backend http requires the API key in $" + c.api_key_env);
  }
  h.api_key = key;
  h.model = c.model;
  h.timeout_s = c.timeout_s;
  h.max_retries = c.retries;
  return std::make_unique<backend::HttpBackend>(h);
}

pipeline::PipelineConfig pipeline_config(const CliConfig& c) {
  pipeline::PipelineConfig p;
  p.use_crop = !c.no_crop;
  p.use_rotate = !c.no_rotate;
  p.use_evr = !c.no_evr;
  if (c.max_pairs >= 0) p.max_entity_pairs = static_cast<std::size_t>(c.max_pairs);
  if (c.max_prompt_dim > 0) p.image_downscale_for_prompting = c.max_prompt_dim;
  if (!c.templates.empty()) p.templates = pipeline::PromptTemplates::from_directory(c.templates);
  p.validate();
  return p;
}

ErpImage load_erp(const std::string& path) { return ErpImage(load_image(path)); }

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::out | std::ios::trunc | std::ios::binary);
  f << text;
  if (!f) throw IoError("cannot write " + path);
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Scene-graph question answering and geometry tools for 360-degree images",
               "free360"};
  app.require_subcommand(1);

  // convert
  std::string in_path, out_path, to = "cmp";
  int face_size = 0, erp_width = 0;
  auto* convert = app.add_subcommand("convert", "Convert between ERP and CMP (4x3 cross)");
  convert->add_option("--in", in_path, "Input image")->required();
  convert->add_option("--out", out_path, "Output image")->required();
  convert->add_option("--to", to, "Target projection")->check(CLI::IsMember({"cmp", "erp"}));
  convert->add_option("--face-size", face_size, "CMP face size (default: ERP width / 4)");
  convert->add_option("--width", erp_width, "ERP width for --to erp (default: 4 * face size)");

  // rotate
  double phi = 0.0, theta = 0.0;
  bool degrees = false;
  auto* rotate = app.add_subcommand("rotate", "Rotate an ERP image so (phi, theta) is centered");
  rotate->add_option("--in", in_path, "Input ERP image")->required();
  rotate->add_option("--out", out_path, "Output ERP image")->required();
  rotate->add_option("--phi", phi, "Longitude of the new center (radians)")->required();
  rotate->add_option("--theta", theta, "Latitude of the new center (radians)")->required();
  rotate->add_flag("--degrees", degrees, "Angles are given in degrees");

  // crop
  std::string box_text;
  auto* crop_cmd = app.add_subcommand("crop", "Crop an image to a box");
  crop_cmd->add_option("--in", in_path, "Input image")->required();
  crop_cmd->add_option("--out", out_path, "Output image")->required();
  crop_cmd->add_option("--box", box_text, "x1,y1,x2,y2")->required();

  // annotate
  std::vector<std::string> labeled_boxes;
  int stroke = 0;
  bool wrap = false;
  auto* annotate_cmd = app.add_subcommand("annotate", "Draw colored boxes with a legend");
  annotate_cmd->add_option("--in", in_path, "Input image")->required();
  annotate_cmd->add_option("--out", out_path, "Output image")->required();
  annotate_cmd->add_option("--box", labeled_boxes, "label=x1,y1,x2,y2 (repeatable)")->required();
  annotate_cmd->add_option("--stroke", stroke, "Outline width in pixels (default: width / 512)");
  annotate_cmd->add_flag("--wrap", wrap, "Boxes past the right edge wrap around (ERP)");

  // ask
  std::string image_path, question, options_csv, dump_graph, run_log;
  std::vector<std::string> option_list;
  BackendOptions ask_bo;
  auto* ask = app.add_subcommand("ask", "Answer one question about a 360-degree ERP image");
  ask->add_option("--image", image_path, "ERP image")->required();
  ask->add_option("--question", question, "Question text")->required();
  auto* opts_csv = ask->add_option("--options", options_csv, "Four options, comma-separated");
  auto* opts_rep = ask->add_option("--option", option_list, "One option (give exactly four)");
  opts_csv->excludes(opts_rep);
  ask->add_option("--dump-graph", dump_graph, "Write the serialized scene graph here");
  ask->add_option("--run-log", run_log, "Write pipeline events (JSONL) here");
  add_backend_options(ask, ask_bo);

  // bench
  std::string manifest, report_dir, strategy = "free360", ablation, direct_format = "cmp";
  BackendOptions bench_bo;
  auto* bench_cmd = app.add_subcommand("bench", "Evaluate a strategy on a VQA manifest");
  bench_cmd->add_option("--manifest", manifest, "Manifest JSON")->required();
  bench_cmd->add_option("--report", report_dir, "Report directory")->required();
  bench_cmd->add_option("--strategy", strategy, "free360 or direct")
      ->check(CLI::Validator(
          [](std::string& v) -> std::string {
            // "oracle" is accepted for harness self-tests but not advertised.
            if (v == "free360" || v == "direct" || v == "oracle") return {};
            return "strategy must be free360 or direct";
          },
          "{free360,direct}"));
  bench_cmd->add_option("--ablation", ablation, "Comma list of steps to disable: crop,rotate,evr");
  bench_cmd->add_option("--jobs", bench_bo.cfg.jobs, "Concurrent samples");
  bench_cmd->add_option("--direct-format", direct_format, "Image format for --strategy direct")
      ->check(CLI::IsMember({"cmp", "erp"}));
  add_backend_options(bench_cmd, bench_bo);

  std::vector<const char*> argv;
  argv.reserve(args.size());
  for (const std::string& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (convert->parsed()) {
      const RgbImage img = load_image(in_path);
      if (to == "cmp") {
        const ErpImage erp(img);
        const int fs = face_size > 0 ? face_size : erp.width() / 4;
        const CmpImage cmp = erp_to_cmp(erp, geom::CmpLayout::cross(fs));
        save_image(out_path, cmp.pixels());
        out << fmt::format("wrote {}x{} CMP to {}\n", cmp.width(), cmp.height(), out_path);
      } else {
        if (img.width() % 4 != 0 || img.width() * 3 != img.height() * 4) {
          throw InvalidGeometry("CMP input must be a 4x3 canvas of square faces");
        }
        const geom::CmpLayout layout = geom::CmpLayout::cross(img.width() / 4);
        const ErpImage erp = cmp_to_erp(CmpImage(layout, img),
                                        erp_width > 0 ? erp_width : img.width());
        save_image(out_path, erp.pixels());
        out << fmt::format("wrote {}x{} ERP to {}\n", erp.width(), erp.height(), out_path);
      }
      return 0;
    }
    if (rotate->parsed()) {
      const ErpImage erp = load_erp(in_path);
      const double k = degrees ? geom::kPi / 180.0 : 1.0;
      const ErpImage rotated = rotate_erp(erp, geom::rotation_matrix(phi * k, theta * k));
      save_image(out_path, rotated.pixels());
      out << fmt::format("wrote rotated ERP to {}\n", out_path);
      return 0;
    }
    if (crop_cmd->parsed()) {
      const RgbImage c = crop(load_image(in_path), parse_box(box_text));
      save_image(out_path, c);
      out << fmt::format("wrote {}x{} crop to {}\n", c.width(), c.height(), out_path);
      return 0;
    }
    if (annotate_cmd->parsed()) {
      const RgbImage img = load_image(in_path);
      std::vector<std::pair<std::string, geom::PixelBox>> boxes;
      for (const std::string& lb : labeled_boxes) {
        const auto eq = lb.rfind('=');
        if (eq == std::string::npos) throw ConfigError("--box must be label=x1,y1,x2,y2");
        boxes.emplace_back(lb.substr(0, eq), parse_box(lb.substr(eq + 1)));
      }
      const Overlay overlay = Overlay::from_labeled_boxes(boxes);
      const int s = stroke > 0 ? stroke : std::max(2, img.width() / 512);
      save_image(out_path, annotate(img, overlay, s, wrap));
      out << "legend: " << overlay.legend() << "\n";
      return 0;
    }
    if (ask->parsed()) {
      const CliConfig c = resolve_config(ask, ask_bo);
      std::vector<std::string> opts = option_list;
      if (!options_csv.empty()) opts = split(options_csv, ',');
      if (opts.size() != 4) throw ConfigError("exactly four options are required");
      const pipeline::PipelineConfig pc = pipeline_config(c);
      auto inner = make_backend(c);
      const ErpImage erp = load_erp(image_path);
      backend::RecordingBackend recorder(
          *inner, c.transcript.empty() ? std::nullopt
                                       : std::optional<std::filesystem::path>(c.transcript));
      std::optional<pipeline::RunLog> log;
      if (!run_log.empty()) log.emplace(run_log);
      pipeline::Free360Pipeline p(recorder, pc, log ? &*log : nullptr);
      const pipeline::QaResult r = p.run(erp, question, {opts[0], opts[1], opts[2], opts[3]});
      if (!dump_graph.empty()) write_text(dump_graph, r.serialized_graph);
      out << "Answer: "
          << (r.answer_index ? std::string(1, static_cast<char>('A' + *r.answer_index))
                             : std::string("none"))
          << "\n";
      out << "Used fallback: " << (r.used_fallback ? "yes" : "no") << "\n";
      out << "Reasoning: " << r.reasoning << "\n";
      out << "Timings:";
      for (const auto& [name, s] : r.step_timings) out << fmt::format(" {}={:.3f}s", name, s);
      out << "\n";
      return r.answer_index ? 0 : 2;
    }
    if (bench_cmd->parsed()) {
      const CliConfig c = resolve_config(bench_cmd, bench_bo);
      const std::vector<bench::VqaSample> samples = bench::load_dataset(manifest);
      CliConfig eff = c;
      for (const std::string& a : split(ablation, ',')) {
        if (a.empty()) continue;
        if (a == "crop") eff.no_crop = true;
        else if (a == "rotate") eff.no_rotate = true;
        else if (a == "evr") eff.no_evr = true;
        else throw ConfigError("unknown ablation \"" + a + "\" (expected crop, rotate, evr)");
      }
      std::filesystem::create_directories(report_dir);

      std::unique_ptr<backend::Backend> inner;
      std::optional<backend::RecordingBackend> recorder;
      std::optional<pipeline::RunLog> log;
      pipeline::PipelineConfig pc;
      if (strategy != "oracle") {
        pc = pipeline_config(eff);
        inner = make_backend(eff);
        recorder.emplace(*inner, eff.transcript.empty()
                                     ? std::nullopt
                                     : std::optional<std::filesystem::path>(eff.transcript));
        log.emplace(std::filesystem::path(report_dir) / "pipeline_log.jsonl");
      }

      // Mock runs report the scripted latency so reports are reproducible;
      // real backends are timed around the whole answerer call.
      const bool scripted = eff.backend == "mock";
      const auto reported_latency = [scripted](const LatencyTally& t) {
        return scripted ? std::optional<double>(t.total()) : std::nullopt;
      };
      bench::Answerer answerer;
      if (strategy == "oracle") {
        answerer = [](const bench::PermutedSample& s) {
          return bench::AnswerOutcome{s.answer_index, false};
        };
      } else if (strategy == "direct") {
        answerer = [&](const bench::PermutedSample& s) {
          LatencyTally tally(*recorder);
          pipeline::Free360Pipeline p(tally, pc, &*log);
          const ErpImage erp = load_erp(s.image_path.string());
          const pipeline::QaResult r =
              direct_format == "erp"
                  ? p.answer_on_image(erp.pixels(), "erp", s.question, s.options, "direct")
                  : p.answer_on_image(
                        erp_to_cmp(erp, geom::CmpLayout::cross(erp.width() / 4)).pixels(), "cmp",
                        s.question, s.options, "direct");
          return bench::AnswerOutcome{r.answer_index, false, reported_latency(tally)};
        };
      } else {
        answerer = [&](const bench::PermutedSample& s) {
          LatencyTally tally(*recorder);
          pipeline::Free360Pipeline p(tally, pc, &*log);
          const pipeline::QaResult r = p.run(load_erp(s.image_path.string()), s.question, s.options);
          return bench::AnswerOutcome{r.answer_index, r.used_fallback, reported_latency(tally)};
        };
      }
      bench::EvalOptions eo;
      eo.strategy = strategy;
      eo.jobs = c.jobs;
      eo.report_dir = report_dir;
      const bench::BenchReport rep = bench::evaluate(samples, answerer, eo);
      out << fmt::format("overall: accuracy {:.1f}% over {} permuted samples, mean {:.1f} s\n",
                         rep.overall.accuracy.value_or(0.0), rep.overall.n,
                         rep.overall.mean_inference_s.value_or(0.0));
      return 0;
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

}  // namespace free360::cli
