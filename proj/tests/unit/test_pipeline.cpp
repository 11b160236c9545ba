#include <algorithm>

#include "doctest.h"
#include "free360/errors.hpp"
#include "free360/pipeline.hpp"
#include "free360/reproject.hpp"
#include "golden.hpp"

using namespace free360;
using namespace free360::pipeline;
using namespace free360::backend;
using nlohmann::json;
namespace t = free360::testing;

namespace {

const std::array<std::string, 4> kOptions{"behind", "to the right", "above", "below"};

CmpImage small_cmp() { return erp_to_cmp(ErpImage(t::golden_erp()), geom::CmpLayout::cross(128)); }

std::vector<json> steps_of(const RecordingBackend& rec, const std::string& step) {
  std::vector<json> out;
  for (const auto& r : rec.records())
    if (r["step"] == step) out.push_back(r);
  return out;
}

json first_image(const json& record) {
  for (const auto& turn : record["request"]["turns"])
    for (const auto& p : turn["parts"])
      if (p["type"] == "image") return p;
  return nullptr;
}

}  // namespace

TEST_SUITE("pipeline") {
  TEST_CASE("template rendering") {
    CHECK(render_template("Q: {question} {unknown}", {{"question", "why"}}) == "Q: why {unknown}");
    PipelineConfig cfg;
    cfg.validate();
    cfg.templates.qa.clear();
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
  }

  TEST_CASE("answer letter extraction") {
    CHECK(parse_answer_letter("Answer: B") == 1);
    CHECK(parse_answer_letter("I think A is wrong. Answer: (C)") == 2);
    CHECK(parse_answer_letter("Options A and D; final D") == 3);
    CHECK_FALSE(parse_answer_letter("no idea").has_value());
    CHECK_FALSE(parse_answer_letter("Absolutely").has_value());
    CHECK(format_options({"a", "b", "c", "d"}) == "A. a\nB. b\nC. c\nD. d");
  }

  TEST_CASE("detection parsing") {
    const auto d = parse_detections(R"(Sure: [{"label":"person","box":[10,10,50,90]}] done)");
    REQUIRE(d.size() == 1);
    CHECK(d[0].label == "person");
    CHECK(d[0].box == geom::PixelBox{10, 10, 50, 90});
    CHECK(parse_detections("[]").empty());
    CHECK_THROWS_AS(parse_detections("nothing here"), ProtocolError);
    CHECK_THROWS_AS(parse_detections(R"([{"label":"x","box":[1,2,3]}])"), ProtocolError);
  }

  TEST_CASE("step 1 builds indexed entities") {
    MockBackend mock(MockScript{{"step:step1",
                       R"([{"label":"car","box":[300,150,330,200]},{"label":"car","box":[400,150,420,200]}])"}});
    Free360Pipeline p(mock, PipelineConfig{});
    const auto cmp = small_cmp();
    const auto g = p.build_graph(p.step1_identify(cmp, "q"));
    REQUIRE(g.entity_count() == 2);
    CHECK(g.entity(0).display_name() == "car 1");
    CHECK(g.entity(1).display_name() == "car 2");
  }

  TEST_CASE("step 1 retries once on malformed output") {
    MockBackend ok(MockScript{{"step:step1", "oops"}, {"step:step1_retry", R"([{"label":"person","box":[10,10,50,90]}])"}});
    Free360Pipeline p(ok, PipelineConfig{});
    // The box lies in the blank top-left cell and is dropped after clamping.
    CHECK(p.step1_identify(small_cmp(), "q").empty());

    MockBackend bad(MockScript{{"step:step1", "oops"}, {"step:step1_retry", "still no"}});
    Free360Pipeline q(bad, PipelineConfig{});
    CHECK_THROWS_AS(q.step1_identify(small_cmp(), "q"), ProtocolError);
  }

  TEST_CASE("step 2 stores attributes and sanitizes them") {
    MockBackend mock(MockScript{{"step:step2", "red jacket, holding umbrella"},
                      {"step:step2", "arrow \xE2\x86\x92 inside"}});
    RecordingBackend rec(mock);
    Free360Pipeline p(rec, PipelineConfig{});
    graph::SceneGraph g;
    g.add_entity("person", {300, 170, 330, 220});
    g.add_entity("sign", {400, 150, 460, 200});
    p.step2_attributes(g, small_cmp(), "q");
    CHECK(g.entity(0).attribute == "red jacket, holding umbrella");
    CHECK(g.entity(1).attribute == "arrow -> inside");
    const auto reqs = steps_of(rec, "step2");
    REQUIRE(reqs.size() == 2);
    CHECK(first_image(reqs[0])["source"] == "crop");
    CHECK(first_image(reqs[0])["width"] == 30);
  }

  TEST_CASE("step 2 without crops sends the full image") {
    MockBackend mock(MockScript{{"step:step2", "x", false, true}});
    RecordingBackend rec(mock);
    PipelineConfig cfg;
    cfg.use_crop = false;
    Free360Pipeline p(rec, cfg);
    graph::SceneGraph g;
    g.add_entity("person", {300, 170, 330, 220});
    p.step2_attributes(g, small_cmp(), "q");
    const auto img = first_image(steps_of(rec, "step2").at(0));
    CHECK(img["source"] == "cmp");
    CHECK(img["width"] == 512);
    CHECK(img["height"] == 384);
  }

  TEST_CASE("step 2 backend failure leaves an empty attribute") {
    MockBackend mock(MockScript{{"step:step2", "", true}});
    RunLog log;
    Free360Pipeline p(mock, PipelineConfig{}, &log);
    graph::SceneGraph g;
    g.add_entity("person", {300, 170, 330, 220});
    p.step2_attributes(g, small_cmp(), "q");
    CHECK(g.entity(0).attribute.empty());
    const auto ev = log.events();
    CHECK(std::any_of(ev.begin(), ev.end(), [](const json& e) { return e["event"] == "step2.backend_error"; }));
  }

  TEST_CASE("step 3 relation lines and call counts") {
    MockBackend mock(MockScript{{"step:step3", "to the left of", false, true}});
    RecordingBackend rec(mock);
    PipelineConfig cfg;
    cfg.max_entity_pairs = 2;
    Free360Pipeline p(rec, cfg);
    const ErpImage erp(t::golden_erp());
    graph::SceneGraph g;
    g.add_entity("person", {300, 170, 330, 220});
    g.add_entity("car", {400, 150, 460, 200});
    g.add_entity("dog", {150, 140, 200, 230});
    p.transport_boxes(g, geom::CmpLayout::cross(128), 512, 256);
    p.step3_inter_entity(g, erp, "q");
    CHECK(steps_of(rec, "step3").size() == 2);
    CHECK(g.serialize().find("person 1 \xE2\x86\x92 to the left of \xE2\x86\x92 car 1") != std::string::npos);
    const auto req = steps_of(rec, "step3")[0];
    CHECK(first_image(req)["source"] == "erp_rotated");
    const std::string text = req["request"]["turns"][0]["parts"][0]["text"];
    CHECK(text.find("person 1:blue line, car 1:red line") != std::string::npos);
  }

  TEST_CASE("step 3 with one entity is a no-op") {
    MockBackend mock(MockScript{});
    Free360Pipeline p(mock, PipelineConfig{});
    graph::SceneGraph g;
    g.add_entity("person", {300, 170, 330, 220});
    p.transport_boxes(g, geom::CmpLayout::cross(128), 512, 256);
    p.step3_inter_entity(g, ErpImage(t::golden_erp()), "q");
    CHECK(g.inter_entity().empty());
  }

  TEST_CASE("step 3 without rotation sends the annotated original") {
    MockBackend mock(MockScript{{"step:step3", "near", false, true}});
    RecordingBackend rec(mock);
    PipelineConfig cfg;
    cfg.use_rotate = false;
    Free360Pipeline p(rec, cfg);
    const ErpImage erp(t::golden_erp());
    graph::SceneGraph g;
    g.add_entity("person", {300, 170, 330, 220});
    g.add_entity("car", {400, 150, 460, 200});
    p.transport_boxes(g, geom::CmpLayout::cross(128), 512, 256);
    p.step3_inter_entity(g, erp, "q");
    const auto img = first_image(steps_of(rec, "step3").at(0));
    CHECK(img["source"] == "erp");
    const auto ov = Overlay::from_labeled_boxes({{"person 1", *g.entity(0).box_erp}, {"car 1", *g.entity(1).box_erp}});
    const auto expected = annotate(erp.pixels(), ov, 2, true);
    CHECK(img["sha256"] == sha256_hex(encode_png(expected)));
  }

  TEST_CASE("step 4 assigns views from box centers") {
    MockBackend mock(MockScript{});
    RecordingBackend rec(mock);
    Free360Pipeline p(rec, PipelineConfig{});
    graph::SceneGraph g;
    g.add_entity("a", {300, 170, 330, 220});  // front
    g.add_entity("b", {370, 150, 400, 200});  // straddles front/right, center in right
    g.add_entity("c", {10, 130, 60, 250});    // back
    g.add_entity("d", {260, 20, 300, 60});    // top
    p.step4_entity_view(g, geom::CmpLayout::cross(128));
    CHECK(g.entity(0).view == geom::Face::Front);
    CHECK(g.entity(1).view == geom::Face::Right);
    CHECK(g.entity(2).view == geom::Face::Back);
    CHECK(g.entity(3).view == geom::Face::Top);
    CHECK(rec.records().empty());

    PipelineConfig off;
    off.use_evr = false;
    Free360Pipeline q(mock, off);
    graph::SceneGraph h;
    h.add_entity("a", {300, 170, 330, 220});
    q.step4_entity_view(h, geom::CmpLayout::cross(128));
    CHECK_FALSE(h.entity(0).view.has_value());
  }

  TEST_CASE("step 4 snaps centers in blank cells") {
    MockBackend mock(MockScript{});
    Free360Pipeline p(mock, PipelineConfig{});
    graph::SceneGraph g;
    g.add_entity("a", {200, 100, 300, 140});  // center in the blank cell left of Top
    p.step4_entity_view(g, geom::CmpLayout::cross(128));
    REQUIRE(g.entity(0).view.has_value());
  }

  TEST_CASE("answer and fallback") {
    const auto cmp = small_cmp();
    graph::SceneGraph g;
    {
      MockBackend mock(MockScript{{"step:qa", "Answer: B"}});
      Free360Pipeline p(mock, PipelineConfig{});
      const auto r = p.answer(g, "q", kOptions, cmp);
      CHECK(r.answer_index == 1);
      CHECK_FALSE(r.used_fallback);
    }
    {
      MockBackend mock(MockScript{{"step:qa", "CANNOT ANSWER"}, {"step:qa_fallback", "Answer: D"}});
      Free360Pipeline p(mock, PipelineConfig{});
      const auto r = p.answer(g, "q", kOptions, cmp);
      CHECK(r.answer_index == 3);
      CHECK(r.used_fallback);
    }
    {
      MockBackend mock(MockScript{{"step:qa", "I am unsure."}});
      Free360Pipeline p(mock, PipelineConfig{});
      CHECK_FALSE(p.answer(g, "q", kOptions, cmp).answer_index.has_value());
    }
  }

  TEST_CASE("zero entities go through the image fallback") {
    MockBackend mock(MockScript{{"step:step1", "[]"}, {"step:direct_fallback", "Answer: A"}});
    Free360Pipeline p(mock, PipelineConfig{});
    const auto r = p.run(ErpImage(t::golden_erp()), "q", kOptions);
    CHECK(r.answer_index == 0);
    CHECK(r.used_fallback);
    CHECK(r.pipeline_failed);
  }

  TEST_CASE("golden run") {
    MockBackend mock(mock_script_from_json(t::golden_script()));
    RecordingBackend rec(mock);
    Free360Pipeline p(rec, PipelineConfig{});
    const std::array<std::string, 4> opts{t::kGoldenOptions[0], t::kGoldenOptions[1],
                                          t::kGoldenOptions[2], t::kGoldenOptions[3]};
    const auto r = p.run(ErpImage(t::golden_erp()), t::kGoldenQuestion, opts);
    CHECK(r.serialized_graph == t::golden_graph_text());
    CHECK(r.answer_index == 1);
    CHECK_FALSE(r.used_fallback);
    CHECK(mock.remaining() == 0);
    CHECK(steps_of(rec, "step2").size() == 3);
    CHECK(steps_of(rec, "step3").size() == 3);
    std::vector<std::string> names;
    for (const auto& [name, secs] : r.step_timings) names.push_back(name);
    CHECK(names == std::vector<std::string>{"erp_to_cmp", "step1", "step2", "step3", "step4", "answer"});
  }

  TEST_CASE("parallel calls keep the result deterministic") {
    const std::array<std::string, 4> opts{t::kGoldenOptions[0], t::kGoldenOptions[1],
                                          t::kGoldenOptions[2], t::kGoldenOptions[3]};
    // Concurrent requests consume step entries in arrival order, so the
    // script keys each response on the entity or pair named in the prompt.
    MockBackend mock(mock_script_from_json(json::parse(R"([
      {"match": "step:step1", "response": "[{\"label\":\"person\",\"box\":[300,170,330,220]},{\"label\":\"car\",\"box\":[400,150,460,200]},{\"label\":\"dog\",\"box\":[150,140,200,230]}]"},
      {"match": "a person 1 cropped", "response": "red"},
      {"match": "a car 1 cropped", "response": "white"},
      {"match": "a dog 1 cropped", "response": "small"},
      {"match": "person 1:blue line, car 1:red line", "response": "left of"},
      {"match": "person 1:blue line, dog 1:red line", "response": "right of"},
      {"match": "car 1:blue line, dog 1:red line", "response": "opposite"},
      {"match": "step:qa", "response": "Answer: A"}
    ])")));
    PipelineConfig cfg;
    cfg.concurrency = 4;
    Free360Pipeline p(mock, cfg);
    const auto r = p.run(ErpImage(t::golden_erp()), "q", opts);
    CHECK(r.graph.entity(2).attribute == "small");
    CHECK(r.graph.inter_entity().at({1, 2}) == "opposite");
    CHECK(r.answer_index == 0);
  }
}
