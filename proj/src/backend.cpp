#include "free360/backend.hpp"

#include <cstdio>
#include <regex>
#include <sstream>
#include <thread>

#include <httplib.h>
#include <openssl/evp.h>

#include "free360/errors.hpp"

namespace free360::backend {

using nlohmann::json;

namespace {

const char* role_name(Role r) {
  switch (r) {
    case Role::System: return "system";
    case Role::User: return "user";
    case Role::Assistant: return "assistant";
  }
  return "user";
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string extract_content(const json& body) {
  if (!body.contains("choices") || !body["choices"].is_array() || body["choices"].empty()) {
    throw ProtocolError("response has no choices");
  }
  const json& msg = body["choices"][0].value("message", json::object());
  if (!msg.contains("content")) throw ProtocolError("response message has no content");
  const json& content = msg["content"];
  if (content.is_string()) return content.get<std::string>();
  if (content.is_array()) {
    std::string text;
    bool any = false;
    for (const json& part : content) {
      if (part.value("type", "") == "text" && part.contains("text")) {
        text += part["text"].get<std::string>();
        any = true;
      }
    }
    if (any) return text;
  }
  throw ProtocolError("response message content is not text");
}

}  // namespace

ImagePart ImagePart::from_image(const RgbImage& image, std::string source) {
  ImagePart p;
  p.bytes = encode_png(image);
  p.width = image.width();
  p.height = image.height();
  p.source = std::move(source);
  return p;
}

BackendRequest::BackendRequest(std::string step, std::string system_text, std::vector<Turn> turns,
                               Decoding decoding)
    : step_(std::move(step)),
      system_text_(std::move(system_text)),
      turns_(std::move(turns)),
      decoding_(decoding) {
  if (decoding_.temperature != 0.0) {
    throw ValidationError("decoding temperature must be 0 (greedy decoding)");
  }
  if (decoding_.max_output_tokens <= 0) throw ValidationError("max_output_tokens must be positive");
  const bool has_user = std::any_of(turns_.begin(), turns_.end(),
                                    [](const Turn& t) { return t.role == Role::User; });
  if (!has_user) throw ValidationError("request needs at least one user turn");
}

std::string BackendRequest::all_text() const {
  std::string out = system_text_;
  for (const Turn& t : turns_) {
    for (const Part& p : t.parts) {
      if (const auto* tp = std::get_if<TextPart>(&p)) {
        out += '\n';
        out += tp->text;
      }
    }
  }
  return out;
}

std::vector<const ImagePart*> BackendRequest::images() const {
  std::vector<const ImagePart*> out;
  for (const Turn& t : turns_)
    for (const Part& p : t.parts)
      if (const auto* ip = std::get_if<ImagePart>(&p)) out.push_back(ip);
  return out;
}

std::string base64_encode(const std::vector<std::uint8_t>& bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(),
                                static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::string sha256_hex(const std::vector<std::uint8_t>& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error("SHA-256 digest failed");
  }
  std::string hex;
  hex.reserve(2 * len);
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    const unsigned char c = digest[i];
    std::snprintf(buf, sizeof(buf), "%02x", c);
    hex += buf;
  }
  return hex;
}

json chat_completions_body(const BackendRequest& request, const std::string& model) {
  json messages = json::array();
  if (!request.system_text().empty()) {
    messages.push_back({{"role", "system"}, {"content", request.system_text()}});
  }
  for (const Turn& turn : request.turns()) {
    json content = json::array();
    for (const Part& part : turn.parts) {
      if (const auto* tp = std::get_if<TextPart>(&part)) {
        content.push_back({{"type", "text"}, {"text", tp->text}});
      } else {
        const auto& ip = std::get<ImagePart>(part);
        content.push_back(
            {{"type", "image_url"},
             {"image_url", {{"url", "data:" + ip.mime + ";base64," + base64_encode(ip.bytes)}}}});
      }
    }
    messages.push_back({{"role", role_name(turn.role)}, {"content", std::move(content)}});
  }
  return json{{"model", model},
              {"messages", std::move(messages)},
              {"temperature", 0},
              {"max_tokens", request.decoding().max_output_tokens},
              {"stream", false}};
}

HttpBackend::HttpBackend(HttpConfig config) : config_(std::move(config)) {
  static const std::regex url_re(R"(^(https?://[^/]+)(/.*)?$)");
  std::smatch m;
  if (!std::regex_match(config_.base_url, m, url_re)) {
    throw ConfigError("invalid API base URL: \"" + config_.base_url + "\"");
  }
  scheme_host_port_ = m[1].str();
  path_prefix_ = m[2].str();
  while (!path_prefix_.empty() && path_prefix_.back() == '/') path_prefix_.pop_back();
  if (config_.max_retries < 0) throw ConfigError("max_retries must be >= 0");
}

BackendResponse HttpBackend::complete(const BackendRequest& request) {
  const std::string body = chat_completions_body(request, config_.model).dump();
  const std::string path = path_prefix_ + "/chat/completions";
  httplib::Headers headers;
  if (!config_.api_key.empty()) headers.emplace("Authorization", "Bearer " + config_.api_key);

  std::string last_error;
  double backoff = config_.backoff_initial_s;
  for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
    if (attempt > 0) {
      std::this_thread::sleep_for(std::chrono::duration<double>(backoff));
      backoff *= 2.0;
    }
    httplib::Client client(scheme_host_port_);
    const auto timeout = std::chrono::duration_cast<std::chrono::microseconds>(
        std::chrono::duration<double>(config_.timeout_s));
    client.set_connection_timeout(timeout);
    client.set_read_timeout(timeout);
    client.set_write_timeout(timeout);

    const auto t0 = std::chrono::steady_clock::now();
    const httplib::Result res = client.Post(path, headers, body, "application/json");
    const double latency = seconds_since(t0);
    if (!res) {
      last_error = "request to " + scheme_host_port_ + path + " failed: " +
                   httplib::to_string(res.error());
      continue;
    }
    if (res->status < 200 || res->status >= 300) {
      last_error = "HTTP " + std::to_string(res->status) + " from " + scheme_host_port_ + path;
      continue;
    }
    json parsed;
    try {
      parsed = json::parse(res->body);
    } catch (const json::parse_error& e) {
      throw ProtocolError(std::string("response body is not JSON: ") + e.what());
    }
    BackendResponse out;
    out.text = extract_content(parsed);
    out.latency_s = latency;
    if (parsed.contains("usage") && parsed["usage"].is_object()) {
      const json& u = parsed["usage"];
      out.usage = TokenUsage{u.value("prompt_tokens", 0), u.value("completion_tokens", 0)};
    }
    return out;
  }
  throw TransportError(last_error, config_.max_retries);
}

MockScript mock_script_from_json(const json& j) {
  if (!j.is_array()) throw LoadError("mock script must be a JSON array");
  MockScript script;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const json& e = j[i];
    if (!e.is_object() || !e.contains("response") || !e["response"].is_string()) {
      throw LoadError("mock script entry " + std::to_string(i) + " needs a string \"response\"");
    }
    ScriptEntry entry;
    entry.match = e.value("match", "");
    entry.response = e["response"].get<std::string>();
    entry.fail = e.value("fail", false);
    entry.repeat = e.value("repeat", false);
    script.push_back(std::move(entry));
  }
  return script;
}

MockScript load_mock_script(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open mock script: " + path.string());
  try {
    return mock_script_from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw LoadError("mock script " + path.string() + " is not valid JSON: " + e.what());
  }
}

MockBackend::MockBackend(MockScript script)
    : script_(std::move(script)), consumed_(script_.size(), false) {}

BackendResponse MockBackend::complete(const BackendRequest& request) {
  std::lock_guard lock(mu_);
  const std::string text = request.all_text();
  for (std::size_t i = 0; i < script_.size(); ++i) {
    if (consumed_[i]) continue;
    const ScriptEntry& e = script_[i];
    bool matches = e.match.empty();
    if (!matches && e.match.rfind("step:", 0) == 0) {
      matches = request.step() == e.match.substr(5);
    } else if (!matches) {
      matches = text.find(e.match) != std::string::npos;
    }
    if (!matches) continue;
    if (!e.repeat) consumed_[i] = true;
    if (e.fail) throw TransportError("scripted failure for step " + request.step(), 0);
    return BackendResponse{e.response, 0.0, std::nullopt};
  }
  throw ScriptMismatch("no scripted response matches request for step \"" + request.step() + "\"");
}

std::size_t MockBackend::remaining() const {
  std::lock_guard lock(mu_);
  std::size_t n = 0;
  for (std::size_t i = 0; i < script_.size(); ++i) n += (!consumed_[i] && !script_[i].repeat);
  return n;
}

json transcript_record(const BackendRequest& request, const BackendResponse* response,
                       const std::string& error) {
  json turns = json::array();
  for (const Turn& t : request.turns()) {
    json parts = json::array();
    for (const Part& p : t.parts) {
      if (const auto* tp = std::get_if<TextPart>(&p)) {
        parts.push_back({{"type", "text"}, {"text", tp->text}});
      } else {
        const auto& ip = std::get<ImagePart>(p);
        parts.push_back({{"type", "image"},
                         {"source", ip.source},
                         {"mime", ip.mime},
                         {"width", ip.width},
                         {"height", ip.height},
                         {"sha256", sha256_hex(ip.bytes)}});
      }
    }
    turns.push_back({{"role", role_name(t.role)}, {"parts", std::move(parts)}});
  }
  json rec{{"step", request.step()},
           {"request",
            {{"system", request.system_text()},
             {"turns", std::move(turns)},
             {"temperature", request.decoding().temperature},
             {"max_output_tokens", request.decoding().max_output_tokens}}}};
  if (response != nullptr) {
    json r{{"text", response->text}, {"latency_s", response->latency_s}};
    if (response->usage) {
      r["usage"] = {{"prompt_tokens", response->usage->prompt_tokens},
                    {"completion_tokens", response->usage->completion_tokens}};
    }
    rec["response"] = std::move(r);
  } else {
    rec["error"] = error;
  }
  return rec;
}

RecordingBackend::RecordingBackend(Backend& inner, std::optional<std::filesystem::path> path)
    : inner_(inner) {
  if (path) {
    file_.emplace(*path, std::ios::out | std::ios::trunc);
    if (!*file_) throw IoError("cannot open transcript file: " + path->string());
  }
}

void RecordingBackend::append(json record) {
  std::lock_guard lock(mu_);
  if (file_) {
    *file_ << record.dump() << '\n';
    file_->flush();
  }
  records_.push_back(std::move(record));
}

BackendResponse RecordingBackend::complete(const BackendRequest& request) {
  try {
    BackendResponse r = inner_.complete(request);
    append(transcript_record(request, &r, ""));
    return r;
  } catch (const std::exception& e) {
    append(transcript_record(request, nullptr, e.what()));
    throw;
  }
}

std::vector<json> RecordingBackend::records() const {
  std::lock_guard lock(mu_);
  return records_;
}

std::string RecordingBackend::transcript() const {
  std::lock_guard lock(mu_);
  std::string out;
  for (const json& r : records_) out += r.dump() + "\n";
  return out;
}

}  // namespace free360::backend
