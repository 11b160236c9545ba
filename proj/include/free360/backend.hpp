#pragma once

// Chat-style multimodal completion backends: the abstract interface, an
// OpenAI-compatible HTTP client, a scripted mock, and a transcript recorder.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "free360/image.hpp"

namespace free360::backend {

/// Encoded image attached to a turn. `source` is a free-form description of
/// what the image is (e.g. "cmp", "crop", "erp_rotated"), kept for transcripts.
struct ImagePart {
  std::string mime = "image/png";
  std::vector<std::uint8_t> bytes;
  int width = 0;
  int height = 0;
  std::string source;

  /// PNG-encodes the image.
  static ImagePart from_image(const RgbImage& image, std::string source);
};

struct TextPart {
  std::string text;
};

using Part = std::variant<TextPart, ImagePart>;

enum class Role { System, User, Assistant };

struct Turn {
  Role role = Role::User;
  std::vector<Part> parts;
};

struct Decoding {
  double temperature = 0.0;
  int max_output_tokens = 1024;
};

class BackendRequest {
 public:
  /// Throws ValidationError without a user turn or with temperature != 0.
  BackendRequest(std::string step, std::string system_text, std::vector<Turn> turns,
                 Decoding decoding = {});

  const std::string& step() const { return step_; }
  const std::string& system_text() const { return system_text_; }
  const std::vector<Turn>& turns() const { return turns_; }
  const Decoding& decoding() const { return decoding_; }

  /// System text and every text part, newline-joined.
  std::string all_text() const;
  std::vector<const ImagePart*> images() const;

 private:
  std::string step_;
  std::string system_text_;
  std::vector<Turn> turns_;
  Decoding decoding_;
};

struct TokenUsage {
  int prompt_tokens = 0;
  int completion_tokens = 0;
};

struct BackendResponse {
  std::string text;
  double latency_s = 0.0;
  std::optional<TokenUsage> usage;
};

class Backend {
 public:
  virtual ~Backend() = default;
  virtual BackendResponse complete(const BackendRequest& request) = 0;
};

// HTTP

struct HttpConfig {
  std::string base_url;  // e.g. https://api.openai.com/v1
  std::string api_key;
  std::string model;
  double timeout_s = 120.0;
  int max_retries = 3;
  double backoff_initial_s = 1.0;  // doubled after every failed attempt
};

/// Chat-completions JSON body for a request (messages with text and base64
/// data-URL image parts, temperature 0).
nlohmann::json chat_completions_body(const BackendRequest& request, const std::string& model);

class HttpBackend final : public Backend {
 public:
  /// Throws ConfigError for an empty or unparsable base URL.
  explicit HttpBackend(HttpConfig config);
  BackendResponse complete(const BackendRequest& request) override;

 private:
  HttpConfig config_;
  std::string scheme_host_port_;
  std::string path_prefix_;
};

// Mock

struct ScriptEntry {
  /// "step:<tag>" matches the request step exactly; anything else must be a
  /// substring of the request text. Empty matches every request.
  std::string match;
  std::string response;
  /// When set, complete() throws TransportError instead of responding.
  bool fail = false;
  /// Repeating entries are never consumed.
  bool repeat = false;
};

using MockScript = std::vector<ScriptEntry>;

/// Reads a JSON array of {"match", "response", "fail"?, "repeat"?}.
MockScript load_mock_script(const std::filesystem::path& path);
MockScript mock_script_from_json(const nlohmann::json& j);

/// Answers each request with the first unconsumed entry that matches it.
class MockBackend final : public Backend {
 public:
  explicit MockBackend(MockScript script);
  /// Throws ScriptMismatch when no remaining entry matches.
  BackendResponse complete(const BackendRequest& request) override;
  std::size_t remaining() const;

 private:
  mutable std::mutex mu_;
  MockScript script_;
  std::vector<bool> consumed_;
};

// Transcript

/// JSON-lines record of one exchange. Image parts are summarized by size,
/// source and SHA-256 rather than embedded.
nlohmann::json transcript_record(const BackendRequest& request, const BackendResponse* response,
                                 const std::string& error);

std::string sha256_hex(const std::vector<std::uint8_t>& bytes);
std::string base64_encode(const std::vector<std::uint8_t>& bytes);

/// Decorator that records every exchange in memory and, optionally, to a
/// JSON-lines file.
class RecordingBackend final : public Backend {
 public:
  explicit RecordingBackend(Backend& inner, std::optional<std::filesystem::path> path = {});
  BackendResponse complete(const BackendRequest& request) override;

  std::vector<nlohmann::json> records() const;
  /// Records joined as JSON lines.
  std::string transcript() const;

 private:
  void append(nlohmann::json record);

  Backend& inner_;
  mutable std::mutex mu_;
  std::vector<nlohmann::json> records_;
  std::optional<std::ofstream> file_;
};

}  // namespace free360::backend
