#include "augforge/llm_gateway.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <stdexcept>
#include <thread>

#include <httplib.h>

#include "augforge/random.hpp"

namespace augforge {

namespace {

// Generation prompts reference two records; the fine-tune sample references
// one in the prompt and the improved one in the output.
const std::vector<PromptTemplate>& templates() {
  static const std::vector<PromptTemplate> all = {
      {TemplateId::finetune_direct,
       {
           "You are an expert image transformation optimizer.",
           "Baseline transform code (Accuracy: {accuracy}):",
           "<tr>{transform_code}</tr>",
           "Generate an improved Python transform function ('transform') that achieves a higher accuracy "
           "with 1 epoch, batch 64, lr 0.01, and momentum 0.9 for 'cifar-10' dataset and task: "
           "'img-classification' ",
           "Your response MUST contain exactly one set of the XML tags <tr>...</tr>. DO NOT include any "
           "leading or trailing text, markdown fences (```), comments, or any other XML tags like <path> or "
           "<text>.",
       },
       {"<tr>{addon_transform_code}</tr>"},
       {"accuracy", "transform_code"},
       {"addon_transform_code"}},
      {TemplateId::generate_direct,
       {
           "You are an expert image transformation generator.",
           "Your task is to generate new image transformation code.",
           "Use common patterns and ideas from the following two reference transforms:",
           "Reference 1 (Accuracy: {accuracy}):",
           "<tr>{transform_code}</tr>",
           "Reference 2 (Accuracy: {addon_accuracy}):",
           "<tr>{addon_transform_code}</tr>",
           "Provide a new, high-performance transform for 'cifar-10' (task: 'img-classification') for "
           "training with 1 epoch, batch 64, lr 0.01, and momentum 0.9",
           "Respond with:",
           "1. A <tr> XML tag containing the complete Python transform code (function name 'transform').",
           "The code must be wrapped strictly in <tr> and </tr> tags.",
       },
       {},
       {"accuracy", "transform_code", "addon_accuracy", "addon_transform_code"},
       {}},
      {TemplateId::generate_cot,
       {
           "You are an expert image transformation generator.",
           "Your task is to synthesize a high-performance augmentation strategy with common patterns and "
           "ideas of two reference transforms.",
           "### Reference 1 (Acc: {accuracy})",
           "<tr>{transform_code}</tr>",
           "### Reference 2 (Acc: {addon_accuracy})",
           "<tr>{addon_transform_code}</tr>",
           "### Task",
           "Create a new 'transform' function for CIFAR-10 that combines the effective parts of both "
           "references.",
           "Target Settings: 1 epoch, batch 64, lr 0.01.",
           "### Instructions",
           "1. Briefly analyze why Ref 1 and 2 worked, and propose a strategy.",
           "2. <tr>: Write the executable Python code.",
           "### Negative Constraints",
           "- DO NOT output SVG, <path>, <g>, or HTML tags.",
           "- DO NOT output markdown fences (```).",
           "Respond strictly in this format:",
           "<tr>... code ...</tr>",
       },
       {},
       {"accuracy", "transform_code", "addon_accuracy", "addon_transform_code"},
       {}},
  };
  return all;
}

constexpr std::string_view kKnownPlaceholders[] = {kAccuracy, kTransformCode, kAddonAccuracy, kAddonTransformCode};

bool is_placeholder(std::string_view name) {
  return std::find(std::begin(kKnownPlaceholders), std::end(kKnownPlaceholders), name) !=
         std::end(kKnownPlaceholders);
}

// Split "http://host:port/prefix" into the client address and a path prefix.
std::pair<std::string, std::string> split_url(const std::string& url) {
  const auto scheme = url.find("://");
  const auto path_start = url.find('/', scheme == std::string::npos ? 0 : scheme + 3);
  if (path_start == std::string::npos) return {url, ""};
  std::string prefix = url.substr(path_start);
  while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
  return {url.substr(0, path_start), prefix};
}

bool rejects_top_k(const httplib::Result& res) {
  return res && (res->status == 400 || res->status == 422) && res->body.find("top_k") != std::string::npos;
}

bool retryable_status(int status) { return status == 429 || status >= 500; }

}  // namespace

std::string_view to_string(TemplateId id) {
  switch (id) {
    case TemplateId::finetune_direct: return "finetune_direct";
    case TemplateId::generate_direct: return "generate_direct";
    case TemplateId::generate_cot: return "generate_cot";
  }
  return "unknown";
}

TemplateId template_id_from_string(std::string_view s) {
  for (auto id : {TemplateId::finetune_direct, TemplateId::generate_direct, TemplateId::generate_cot})
    if (to_string(id) == s) return id;
  throw std::invalid_argument("unknown template id: " + std::string(s));
}

const PromptTemplate& prompt_template(TemplateId id) {
  for (const auto& t : templates())
    if (t.id == id) return t;
  throw std::invalid_argument("unknown template id");
}

std::vector<std::string> render_lines(std::span<const std::string> segments, const Bindings& bindings) {
  std::vector<std::string> out;
  out.reserve(segments.size());
  for (const auto& seg : segments) {
    std::string line;
    std::size_t pos = 0;
    while (pos < seg.size()) {
      const auto open = seg.find('{', pos);
      const auto close = open == std::string::npos ? std::string::npos : seg.find('}', open);
      if (close == std::string::npos) {
        line.append(seg, pos);
        break;
      }
      const std::string_view name(seg.data() + open + 1, close - open - 1);
      line.append(seg, pos, open - pos);
      if (is_placeholder(name)) {
        const auto it = bindings.find(name);
        if (it == bindings.end()) throw std::invalid_argument("missing binding for {" + std::string(name) + "}");
        line += it->second;
      } else {
        line.append(seg, open, close - open + 1);
      }
      pos = close + 1;
    }
    out.push_back(std::move(line));
  }
  return out;
}

std::string render_prompt(TemplateId id, const Bindings& bindings) {
  const auto lines = render_lines(prompt_template(id).segments, bindings);
  std::string out;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (i) out += '\n';
    out += lines[i];
  }
  return out;
}

std::string format_accuracy(double accuracy) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", accuracy);
  return buf;
}

TemplateId generation_template(PromptMode mode) {
  return mode == PromptMode::direct ? TemplateId::generate_direct : TemplateId::generate_cot;
}

void SamplingParams::validate() const {
  if (!(temperature >= 0.0)) throw std::invalid_argument("temperature must be non-negative");
  if (!(top_p > 0.0 && top_p <= 1.0)) throw std::invalid_argument("top_p must lie in (0,1]");
  if (top_k <= 0) throw std::invalid_argument("top_k must be positive");
  if (max_new_tokens <= 0) throw std::invalid_argument("max_new_tokens must be positive");
}

ReferenceSelection select_references(std::span<const CandidateRecord> records, std::uint64_t seed) {
  std::vector<RecordId> eligible;
  for (const auto& r : records)
    if (!r.is_error() && r.accuracy) eligible.push_back(r.record_id);
  std::sort(eligible.begin(), eligible.end());
  eligible.erase(std::unique(eligible.begin(), eligible.end()), eligible.end());
  if (eligible.size() < 2) throw std::invalid_argument("select_references: fewer than 2 eligible records");

  Rng rng(seed);
  const auto picks = rng.sample_without_replacement(eligible.size(), 2);
  return {eligible[picks[0]], eligible[picks[1]], seed};
}

ReferenceSelection select_references(const Repository& repo, std::uint64_t seed) {
  const auto records = repo.snapshot();
  return select_references(records, seed);
}

Endpoint endpoint_from_env(Endpoint fallback) {
  if (const char* v = std::getenv("AUGFORGE_LLM_URL"); v && *v) fallback.base_url = v;
  if (const char* v = std::getenv("AUGFORGE_LLM_MODEL"); v && *v) fallback.model = v;
  if (const char* v = std::getenv("AUGFORGE_API_KEY"); v && *v) fallback.api_key = v;
  return fallback;
}

nlohmann::ordered_json chat_request_body(const Endpoint& endpoint, const CompletionRequest& request,
                                         bool include_top_k) {
  nlohmann::ordered_json body;
  body["model"] = endpoint.model;
  body["messages"] = nlohmann::ordered_json::array({{{"role", "user"}, {"content", request.prompt}}});
  body["temperature"] = request.params.temperature;
  body["top_p"] = request.params.top_p;
  if (include_top_k) body["top_k"] = request.params.top_k;
  body["max_tokens"] = request.params.max_new_tokens;
  if (request.seed) body["seed"] = *request.seed;
  return body;
}

std::optional<std::string> parse_chat_response(std::string_view body) {
  const auto j = nlohmann::json::parse(body, nullptr, false);
  if (j.is_discarded() || !j.is_object()) return std::nullopt;
  const auto choices = j.find("choices");
  if (choices == j.end() || !choices->is_array() || choices->empty() || !(*choices)[0].is_object())
    return std::nullopt;
  const auto& first = (*choices)[0];
  if (const auto m = first.find("message"); m != first.end() && m->is_object()) {
    const auto c = m->find("content");
    if (c != m->end() && c->is_string()) return c->get<std::string>();
  }
  if (const auto t = first.find("text"); t != first.end() && t->is_string()) return t->get<std::string>();
  return std::nullopt;
}

std::vector<Completion> HttpCompletionClient::complete(std::span<const CompletionRequest> requests) {
  std::vector<Completion> out(requests.size());
  if (requests.empty()) return out;

  const auto [host, prefix] = split_url(endpoint_.base_url);
  const std::string path = prefix + endpoint_.path;
  std::atomic<bool> omit_top_k{false};
  std::atomic<std::size_t> next{0};

  auto drain = [&, host = host] {
    httplib::Client client(host);
    client.set_connection_timeout(std::min<std::chrono::milliseconds>(options_.request_timeout, std::chrono::milliseconds(10'000)));
    client.set_read_timeout(options_.request_timeout);
    client.set_write_timeout(options_.request_timeout);
    httplib::Headers headers;
    if (!endpoint_.api_key.empty()) headers.emplace("Authorization", "Bearer " + endpoint_.api_key);

    for (std::size_t i = next++; i < requests.size(); i = next++) {
      Completion& slot = out[i];
      std::string last_error = "no attempt made";
      auto backoff = options_.initial_backoff;
      for (int attempt = 1; attempt <= std::max(1, options_.attempts); ++attempt) {
        auto res = client.Post(path, headers, chat_request_body(endpoint_, requests[i], !omit_top_k).dump(),
                               "application/json");
        if (!omit_top_k && rejects_top_k(res)) {
          omit_top_k = true;
          res = client.Post(path, headers, chat_request_body(endpoint_, requests[i], false).dump(),
                            "application/json");
        }
        if (res && res->status == 200) {
          if (auto text = parse_chat_response(res->body)) {
            slot.text = std::move(*text);
          } else {
            slot.error = GenerationError{GenerationError::Kind::malformed, "response lacks choices[0] content"};
          }
          break;
        }
        last_error = res ? "HTTP " + std::to_string(res->status) : httplib::to_string(res.error());
        if (res && !retryable_status(res->status)) break;
        if (attempt < options_.attempts) {
          std::this_thread::sleep_for(backoff);
          backoff *= 2;
        }
      }
      if (!slot.text && !slot.error) slot.error = GenerationError{GenerationError::Kind::unreachable, last_error};
    }
  };

  const std::size_t threads = std::clamp<std::size_t>(options_.parallelism, 1, requests.size());
  {
    std::vector<std::jthread> pool;
    for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(drain);
    drain();
  }
  return out;
}

std::vector<Completion> generate_candidates(const std::string& prompt, const SamplingParams& params, std::size_t n,
                                            const Endpoint& endpoint, const GatewayOptions& options) {
  if (n == 0) return {};
  params.validate();
  std::vector<CompletionRequest> requests(n, CompletionRequest{prompt, params, std::nullopt});
  HttpCompletionClient client(endpoint, options);
  return client.complete(requests);
}

}  // namespace augforge
