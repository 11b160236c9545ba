#include <atomic>
#include <thread>

#include "doctest.h"
#include "free360/backend.hpp"
#include "free360/errors.hpp"
#include "httplib.h"

using namespace free360;
using namespace free360::backend;
using nlohmann::json;

namespace {

BackendRequest text_request(std::string step, std::string text) {
  return BackendRequest(std::move(step), "sys", {Turn{Role::User, {TextPart{std::move(text)}}}});
}

// Local chat-completions server whose handler can be swapped per test.
class FakeServer {
 public:
  explicit FakeServer(httplib::Server::Handler handler) {
    server_.Post("/v1/chat/completions", std::move(handler));
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~FakeServer() {
    server_.stop();
    thread_.join();
  }
  std::string base() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1"; }

 private:
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

json ok_body(const std::string& text) {
  return json{{"choices", json::array({{{"message", {{"role", "assistant"}, {"content", text}}}}})},
              {"usage", {{"prompt_tokens", 12}, {"completion_tokens", 3}}}};
}

}  // namespace

TEST_SUITE("backend") {
  TEST_CASE("requests enforce greedy decoding and a user turn") {
    CHECK_THROWS_AS(BackendRequest("x", "", {Turn{Role::User, {TextPart{"q"}}}}, Decoding{0.7, 10}),
                    ValidationError);
    CHECK_THROWS_AS(BackendRequest("x", "", {Turn{Role::Assistant, {TextPart{"q"}}}}), ValidationError);
    const auto r = text_request("s", "hello");
    CHECK(r.all_text() == "sys\nhello");
  }

  TEST_CASE("mock returns scripted responses in order") {
    MockBackend mock(MockScript{{"step:step1", R"([{"label":"person","box":[1,2,3,4]}])"},
                      {"same", "first"},
                      {"same", "second"}});
    CHECK(mock.complete(text_request("step1", "anything")).text ==
          R"([{"label":"person","box":[1,2,3,4]}])");
    CHECK(mock.complete(text_request("qa", "the same text")).text == "first");
    CHECK(mock.complete(text_request("qa", "the same text")).text == "second");
    CHECK(mock.remaining() == 0);
    CHECK_THROWS_AS(mock.complete(text_request("qa", "the same text")), ScriptMismatch);
  }

  TEST_CASE("mock step tags match exactly and repeat entries persist") {
    MockBackend mock(MockScript{{"step:step1", "no"}, {"", "any", false, true}});
    CHECK(mock.complete(text_request("step1_retry", "x")).text == "any");
    CHECK(mock.complete(text_request("step1", "x")).text == "no");
    CHECK(mock.complete(text_request("step1", "x")).text == "any");
    MockBackend failing(MockScript{{"", "", true}});
    CHECK_THROWS_AS(failing.complete(text_request("a", "b")), TransportError);
  }

  TEST_CASE("mock script loading validates shape") {
    const auto s = mock_script_from_json(json::parse(R"([{"match":"a","response":"b","repeat":true}])"));
    REQUIRE(s.size() == 1);
    CHECK(s[0].repeat);
    CHECK_THROWS_AS(mock_script_from_json(json::object()), LoadError);
    CHECK_THROWS_AS(load_mock_script("/nonexistent/script.json"), LoadError);
  }

  TEST_CASE("digest and base64 helpers") {
    CHECK(sha256_hex({}) == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    CHECK(sha256_hex({'a', 'b', 'c'}) ==
          "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    CHECK(base64_encode({'M', 'a', 'n'}) == "TWFu");
    CHECK(base64_encode({'M', 'a'}) == "TWE=");
    CHECK(base64_encode({}) == "");
  }

  TEST_CASE("chat completions body") {
    const RgbImage img(4, 2, Rgb{1, 2, 3});
    BackendRequest req("step2", "system text",
                       {Turn{Role::User, {TextPart{"describe"}, ImagePart::from_image(img, "crop")}}},
                       Decoding{0.0, 77});
    const auto body = chat_completions_body(req, "some-model");
    CHECK(body["model"] == "some-model");
    CHECK(body["temperature"] == 0.0);
    CHECK(body["max_tokens"] == 77);
    REQUIRE(body["messages"].size() == 2);
    CHECK(body["messages"][0]["role"] == "system");
    const auto& parts = body["messages"][1]["content"];
    CHECK(parts[0]["type"] == "text");
    CHECK(parts[1]["type"] == "image_url");
    const std::string url = parts[1]["image_url"]["url"];
    CHECK(url.rfind("data:image/png;base64,", 0) == 0);
  }

  TEST_CASE("recording backend writes image summaries") {
    MockBackend mock(MockScript{{"", "ok"}});
    RecordingBackend rec(mock);
    const RgbImage img(8, 4);
    rec.complete(BackendRequest("step3", "", {Turn{Role::User, {ImagePart::from_image(img, "erp")}}}));
    const auto r = rec.records();
    REQUIRE(r.size() == 1);
    const auto& part = r[0]["request"]["turns"][0]["parts"][0];
    CHECK(part["source"] == "erp");
    CHECK(part["width"] == 8);
    CHECK(part["height"] == 4);
    CHECK(part["sha256"].get<std::string>().size() == 64);
    CHECK(r[0]["response"]["text"] == "ok");
    CHECK(rec.transcript().back() == '\n');
  }

  TEST_CASE("http backend sends the expected request") {
    json seen;
    std::string auth;
    FakeServer server([&](const httplib::Request& req, httplib::Response& res) {
      seen = json::parse(req.body);
      auth = req.get_header_value("Authorization");
      res.set_content(ok_body("Answer: C").dump(), "application/json");
    });
    HttpBackend http(HttpConfig{server.base(), "secret", "m1", 5.0, 0, 0.0});
    const RgbImage img(2, 1, Rgb{255, 0, 0});
    const auto resp = http.complete(BackendRequest(
        "qa", "sys", {Turn{Role::User, {TextPart{"q"}, ImagePart::from_image(img, "cmp")}}}));
    CHECK(resp.text == "Answer: C");
    REQUIRE(resp.usage.has_value());
    CHECK(resp.usage->prompt_tokens == 12);
    CHECK(auth == "Bearer secret");
    CHECK(seen["temperature"] == 0.0);
    CHECK(seen["model"] == "m1");
    const std::string url = seen["messages"][1]["content"][1]["image_url"]["url"];
    CHECK(url.rfind("data:image/png;base64,", 0) == 0);
  }

  TEST_CASE("http backend retries server errors then reports the retry count") {
    std::atomic<int> calls{0};
    FakeServer server([&](const httplib::Request&, httplib::Response& res) {
      ++calls;
      res.status = 500;
    });
    HttpBackend http(HttpConfig{server.base(), "", "m", 5.0, 3, 0.001});
    try {
      http.complete(text_request("qa", "q"));
      FAIL("expected a transport error");
    } catch (const TransportError& e) {
      CHECK(e.retries() == 3);
    }
    CHECK(calls == 4);
  }

  TEST_CASE("http backend recovers after a transient failure") {
    std::atomic<int> calls{0};
    FakeServer server([&](const httplib::Request&, httplib::Response& res) {
      if (calls++ == 0) {
        res.status = 503;
        return;
      }
      res.set_content(ok_body("fine").dump(), "application/json");
    });
    HttpBackend http(HttpConfig{server.base(), "", "m", 5.0, 2, 0.001});
    CHECK(http.complete(text_request("qa", "q")).text == "fine");
    CHECK(calls == 2);
  }

  TEST_CASE("http backend rejects responses without text") {
    FakeServer server([&](const httplib::Request&, httplib::Response& res) {
      res.set_content(R"({"choices":[{"message":{"role":"assistant"}}]})", "application/json");
    });
    HttpBackend http(HttpConfig{server.base(), "", "m", 5.0, 0, 0.0});
    CHECK_THROWS_AS(http.complete(text_request("qa", "q")), ProtocolError);
  }

  TEST_CASE("http backend config validation") {
    CHECK_THROWS_AS(HttpBackend(HttpConfig{"", "", "m"}), ConfigError);
    CHECK_THROWS_AS(HttpBackend(HttpConfig{"ftp://x", "", "m"}), ConfigError);
    HttpBackend unreachable(HttpConfig{"http://127.0.0.1:1", "", "m", 0.5, 1, 0.001});
    CHECK_THROWS_AS(unreachable.complete(text_request("qa", "q")), TransportError);
  }
}
