#include <doctest.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "augforge/llm_gateway.hpp"
#include "augforge/mock_servers.hpp"

using namespace augforge;

namespace {

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

const std::filesystem::path kGolden = std::filesystem::path(AUGFORGE_SOURCE_DIR) / "tests" / "golden";

Bindings canonical_bindings() {
  return {{"accuracy", "0.5256"}, {"transform_code", "CODE_A"}, {"addon_accuracy", "0.6124"},
          {"addon_transform_code", "CODE_B"}};
}

CandidateRecord scored(RecordId id, double acc) {
  CandidateRecord r;
  r.record_id = id;
  r.code = "code" + std::to_string(id);
  r.accuracy = acc;
  return r;
}

GatewayOptions fast_options(std::size_t parallelism = 1, int attempts = 3) {
  GatewayOptions o;
  o.parallelism = parallelism;
  o.attempts = attempts;
  o.initial_backoff = std::chrono::milliseconds(1);
  o.request_timeout = std::chrono::milliseconds(5000);
  return o;
}

}  // namespace

TEST_CASE("rendered prompts match the golden transcriptions byte for byte") {
  for (const auto id : {TemplateId::finetune_direct, TemplateId::generate_direct, TemplateId::generate_cot}) {
    CAPTURE(to_string(id));
    CHECK(render_prompt(id, canonical_bindings()) == read_file(kGolden / (std::string(to_string(id)) + ".txt")));
  }
  const auto& ft = prompt_template(TemplateId::finetune_direct);
  std::string output;
  for (const auto& line : render_lines(ft.output_segments, canonical_bindings())) output += line;
  CHECK(output == read_file(kGolden / "finetune_direct_output.txt"));
}

TEST_CASE("template examples") {
  const Bindings b = {{"accuracy", "0.5"}, {"transform_code", "A"}, {"addon_accuracy", "0.6"},
                      {"addon_transform_code", "B"}};
  CHECK(render_prompt(TemplateId::generate_direct, b).rfind("You are an expert image transformation generator.", 0) ==
        0);
  const auto ft = render_prompt(TemplateId::finetune_direct, {{"accuracy", "0.0"}, {"transform_code", ""}});
  CHECK(ft.find("<tr></tr>") != std::string::npos);
  CHECK(render_prompt(TemplateId::generate_cot, b).find("\n- DO NOT output SVG, <path>, <g>, or HTML tags.\n") !=
        std::string::npos);
  CHECK(render_prompt(TemplateId::finetune_direct, b).rfind("You are an expert image transformation optimizer.", 0) ==
        0);
}

TEST_CASE("every referenced placeholder is declared and rendering removes them") {
  for (const auto id : {TemplateId::finetune_direct, TemplateId::generate_direct, TemplateId::generate_cot}) {
    const auto& t = prompt_template(id);
    for (const auto& seg : t.segments)
      for (const auto* name : {"accuracy", "transform_code", "addon_accuracy", "addon_transform_code"})
        if (seg.find("{" + std::string(name) + "}") != std::string::npos)
          CHECK(std::find(t.placeholders.begin(), t.placeholders.end(), name) != t.placeholders.end());
    const auto text = render_prompt(id, canonical_bindings());
    for (const auto* name : {"{accuracy}", "{transform_code}", "{addon_accuracy}", "{addon_transform_code}"})
      CHECK(text.find(name) == std::string::npos);
  }
}

TEST_CASE("missing bindings and unknown ids are errors") {
  CHECK_THROWS_AS(render_prompt(TemplateId::generate_direct, {{"accuracy", "0.5"}}), std::invalid_argument);
  CHECK_THROWS_AS(template_id_from_string("generate_fancy"), std::invalid_argument);
  CHECK(template_id_from_string("generate_cot") == TemplateId::generate_cot);
  CHECK(generation_template(PromptMode::direct) == TemplateId::generate_direct);
  CHECK(generation_template(PromptMode::cot) == TemplateId::generate_cot);
}

TEST_CASE("bound text is not re-scanned for placeholders") {
  Bindings b = canonical_bindings();
  b["transform_code"] = "x = '{addon_transform_code}'";
  const auto text = render_prompt(TemplateId::generate_direct, b);
  CHECK(text.find("<tr>x = '{addon_transform_code}'</tr>") != std::string::npos);
}

TEST_CASE("accuracy formatting") {
  CHECK(format_accuracy(0.5256) == "0.5256");
  CHECK(format_accuracy(0.5) == "0.5000");
  CHECK(format_accuracy(0.61239) == "0.6124");
}

TEST_CASE("sampling defaults and validation") {
  const SamplingParams p;
  CHECK(p.temperature == 0.8);
  CHECK(p.top_p == 0.9);
  CHECK(p.top_k == 70);
  CHECK(p.max_new_tokens == 16 * 1024);
  CHECK_NOTHROW(p.validate());
  SamplingParams bad = p;
  bad.top_p = 0.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = p;
  bad.top_k = 0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = p;
  bad.max_new_tokens = 0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("request body carries the sampling parameters") {
  Endpoint ep;
  const auto body = chat_request_body(ep, {"hello", SamplingParams{}, 7});
  CHECK(body["model"] == "olympiccoder-7b");
  CHECK(body["messages"].size() == 1);
  CHECK(body["messages"][0]["role"] == "user");
  CHECK(body["messages"][0]["content"] == "hello");
  CHECK(body["temperature"] == 0.8);
  CHECK(body["top_p"] == 0.9);
  CHECK(body["top_k"] == 70);
  CHECK(body["max_tokens"] == 16384);
  CHECK(body["seed"] == 7);
  CHECK_FALSE(chat_request_body(ep, {"x", SamplingParams{}, std::nullopt}, false).contains("top_k"));
  CHECK_FALSE(chat_request_body(ep, {"x", SamplingParams{}, std::nullopt}).contains("seed"));
}

TEST_CASE("chat response parsing") {
  CHECK(parse_chat_response(R"({"choices":[{"message":{"content":"hi"}}]})") == "hi");
  CHECK(parse_chat_response(R"({"choices":[{"text":"legacy"}]})") == "legacy");
  CHECK_FALSE(parse_chat_response("not json"));
  CHECK_FALSE(parse_chat_response(R"({"choices":[]})"));
  CHECK_FALSE(parse_chat_response(R"({"choices":[{"message":{}}]})"));
}

TEST_CASE("select_references with exactly two records") {
  const std::vector<CandidateRecord> rs = {scored(4, 0.5), scored(9, 0.6)};
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto s = select_references(rs, seed);
    CHECK(s.ref_a != s.ref_b);
    CHECK(std::set<RecordId>{s.ref_a, s.ref_b} == std::set<RecordId>{4, 9});
    CHECK(s.rng_seed == seed);
  }
}

TEST_CASE("select_references is deterministic and skips ineligible records") {
  std::vector<CandidateRecord> rs;
  for (RecordId i = 1; i <= 10; ++i) rs.push_back(scored(i, 0.1 * static_cast<double>(i) / 2));
  rs[0].validity = Validity::invalid;
  rs[1].accuracy.reset();
  rs[2].error_class = ErrorClass::runtime_error;
  const auto a = select_references(rs, 123);
  const auto b = select_references(rs, 123);
  CHECK(a.ref_a == b.ref_a);
  CHECK(a.ref_b == b.ref_b);
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const auto s = select_references(rs, seed);
    CHECK(s.ref_a > 3);
    CHECK(s.ref_b > 3);
  }
  CHECK_THROWS_AS(select_references(std::span<const CandidateRecord>(rs.data(), 3), 1), std::invalid_argument);

  Repository repo;
  CHECK_THROWS_AS(select_references(repo, 1), std::invalid_argument);
}

TEST_CASE("reference selection frequencies are uniform") {
  std::vector<CandidateRecord> rs;
  for (RecordId i = 1; i <= 10; ++i) rs.push_back(scored(i, 0.5));
  std::map<RecordId, int> counts;
  constexpr int kDraws = 10000;
  for (int d = 0; d < kDraws; ++d) {
    const auto s = select_references(rs, static_cast<std::uint64_t>(d));
    ++counts[s.ref_a];
    ++counts[s.ref_b];
  }
  // Each draw picks 2 of 10 records: expected share 0.2 per record.
  for (const auto& [id, n] : counts) {
    CAPTURE(id);
    CHECK(std::abs(static_cast<double>(n) / kDraws - 0.2) < 0.05);
  }
  CHECK(counts.size() == 10);
}

TEST_CASE("generate_candidates against the mock server") {
  MockLlmServer server(echo_policy("<tr>ok</tr>"));
  Endpoint ep;
  ep.base_url = server.url();
  CHECK(generate_candidates("p", SamplingParams{}, 0, ep, fast_options()).empty());
  const auto out = generate_candidates("p", SamplingParams{}, 10, ep, fast_options(3));
  REQUIRE(out.size() == 10);
  for (const auto& c : out) {
    REQUIRE(c.ok());
    CHECK(*c.text == "<tr>ok</tr>");
  }
  CHECK(server.calls() == 10);
}

TEST_CASE("a failing slot never affects the others") {
  // Requests with odd seeds always fail; their retries fail too.
  MockLlmServer server([](const nlohmann::json& req, std::uint64_t) {
    const auto seed = req.value("seed", std::uint64_t{0});
    if (seed % 2 == 1) return MockReply{500, "", "{}", {}};
    return MockReply{200, "<tr>" + std::to_string(seed) + "</tr>", {}, {}};
  });
  Endpoint ep;
  ep.base_url = server.url();
  std::vector<CompletionRequest> reqs;
  for (std::uint64_t s = 0; s < 10; ++s) reqs.push_back({"p", SamplingParams{}, s});
  HttpCompletionClient client(ep, fast_options(4, 3));
  const auto out = client.complete(reqs);
  REQUIRE(out.size() == 10);
  for (std::uint64_t s = 0; s < 10; ++s) {
    CAPTURE(s);
    if (s % 2 == 1) {
      REQUIRE(out[s].error);
      CHECK(out[s].error->kind == GenerationError::Kind::unreachable);
      CHECK_FALSE(out[s].text);
    } else {
      REQUIRE(out[s].ok());
      CHECK(*out[s].text == "<tr>" + std::to_string(s) + "</tr>");
    }
  }
  CHECK(server.calls() == 5 + 5 * 3);
}

TEST_CASE("transient failures are retried") {
  MockLlmServer server([](const nlohmann::json&, std::uint64_t call) {
    if (call < 2) return MockReply{503, "", "{}", {}};
    return MockReply{200, "<tr>late</tr>", {}, {}};
  });
  Endpoint ep;
  ep.base_url = server.url();
  const auto out = generate_candidates("p", SamplingParams{}, 1, ep, fast_options(1, 3));
  REQUIRE(out[0].ok());
  CHECK(*out[0].text == "<tr>late</tr>");
  CHECK(server.calls() == 3);
}

TEST_CASE("malformed bodies are reported per slot") {
  MockLlmServer server([](const nlohmann::json&, std::uint64_t) { return MockReply{200, "", "this is not json", {}}; });
  Endpoint ep;
  ep.base_url = server.url();
  const auto out = generate_candidates("p", SamplingParams{}, 2, ep, fast_options());
  for (const auto& c : out) {
    REQUIRE(c.error);
    CHECK(c.error->kind == GenerationError::Kind::malformed);
  }
}

TEST_CASE("top_k is dropped when the server rejects it") {
  std::atomic<int> with_top_k{0};
  MockLlmServer server([&](const nlohmann::json& req, std::uint64_t) {
    if (req.contains("top_k")) {
      ++with_top_k;
      return MockReply{400, "", R"({"error":"unsupported parameter: top_k"})", {}};
    }
    return MockReply{200, "<tr>fine</tr>", {}, {}};
  });
  Endpoint ep;
  ep.base_url = server.url();
  const auto out = generate_candidates("p", SamplingParams{}, 5, ep, fast_options());
  for (const auto& c : out) CHECK(c.ok());
  CHECK(with_top_k == 1);
}

TEST_CASE("unreachable endpoint yields a marker per slot") {
  Endpoint ep;
  {
    MockLlmServer server(echo_policy("x"));
    ep.base_url = server.url();
  }  // server gone, port closed
  const auto out = generate_candidates("p", SamplingParams{}, 3, ep, fast_options(1, 2));
  REQUIRE(out.size() == 3);
  for (const auto& c : out) {
    REQUIRE(c.error);
    CHECK(c.error->kind == GenerationError::Kind::unreachable);
  }
}

TEST_CASE("base URL path prefixes are honoured") {
  MockLlmServer server(echo_policy("<tr>v1</tr>"));
  Endpoint ep;
  ep.base_url = server.url();
  ep.path = "/chat/completions";
  const auto out = generate_candidates("p", SamplingParams{}, 1, ep, fast_options());
  REQUIRE(out[0].ok());
}

TEST_CASE("endpoint configuration from the environment") {
  ::setenv("AUGFORGE_LLM_URL", "http://example.invalid:9", 1);
  ::setenv("AUGFORGE_LLM_MODEL", "other-model", 1);
  const auto ep = endpoint_from_env();
  CHECK(ep.base_url == "http://example.invalid:9");
  CHECK(ep.model == "other-model");
  ::unsetenv("AUGFORGE_LLM_URL");
  ::unsetenv("AUGFORGE_LLM_MODEL");
  CHECK(endpoint_from_env().model == "olympiccoder-7b");
}

TEST_CASE("recombine mock produces references' ops and is deterministic") {
  const auto policy = recombine_policy({0.0});
  const std::string a = mock_transform_source({"RandomPosterize(bits=4, p=0.5)"}, 64);
  const std::string b = mock_transform_source({"ColorJitter(0.1, 0.1, 0.1, 0.05)"}, 224);
  const Bindings binds = {{"accuracy", "0.5"}, {"transform_code", a}, {"addon_accuracy", "0.6"},
                          {"addon_transform_code", b}};
  nlohmann::json req;
  req["messages"] = {{{"role", "user"}, {"content", render_prompt(TemplateId::generate_direct, binds)}}};
  req["seed"] = 3;
  const auto r1 = policy(req, 0);
  const auto r2 = policy(req, 99);
  CHECK(r1.content == r2.content);
  CHECK((r1.content.find("RandomPosterize") != std::string::npos || r1.content.find("ColorJitter") != std::string::npos));
  CHECK(r1.content.rfind("<tr>", 0) == 0);
}
