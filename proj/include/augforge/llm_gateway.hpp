#pragma once

// Prompt templates, few-shot reference selection, and a chat-completion
// client with per-slot error reporting.

#include <atomic>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "augforge/perf_repository.hpp"

namespace augforge {

enum class TemplateId { finetune_direct, generate_direct, generate_cot };

std::string_view to_string(TemplateId id);
TemplateId template_id_from_string(std::string_view s);  // throws std::invalid_argument

inline constexpr std::string_view kAccuracy = "accuracy";
inline constexpr std::string_view kTransformCode = "transform_code";
inline constexpr std::string_view kAddonAccuracy = "addon_accuracy";
inline constexpr std::string_view kAddonTransformCode = "addon_transform_code";

struct PromptTemplate {
  TemplateId id;
  std::vector<std::string> segments;         // prompt lines
  std::vector<std::string> output_segments;  // expected completion lines (fine-tune samples only)
  std::vector<std::string> placeholders;     // referenced by segments
  std::vector<std::string> output_placeholders;
};

const PromptTemplate& prompt_template(TemplateId id);

using Bindings = std::map<std::string, std::string, std::less<>>;

/// Placeholders are substituted in a single pass; bound text is never
/// re-scanned. Throws std::invalid_argument when a binding is missing.
std::vector<std::string> render_lines(std::span<const std::string> segments, const Bindings& bindings);

/// The template's prompt lines joined by '\n' (no trailing newline).
std::string render_prompt(TemplateId id, const Bindings& bindings);

/// Accuracy as it appears inside prompts: four decimals.
std::string format_accuracy(double accuracy);

TemplateId generation_template(PromptMode mode);

// -- sampling ----------------------------------------------------------------

struct SamplingParams {
  double temperature = 0.8;
  double top_p = 0.9;
  int top_k = 70;
  int max_new_tokens = 16 * 1024;

  void validate() const;  // throws std::invalid_argument
  friend bool operator==(const SamplingParams&, const SamplingParams&) = default;
};

// -- reference selection -----------------------------------------------------

struct ReferenceSelection {
  RecordId ref_a = 0;
  RecordId ref_b = 0;
  std::uint64_t rng_seed = 0;
};

/// Two distinct records, uniformly without replacement, among the valid
/// records with an accuracy. Throws std::invalid_argument if fewer than two.
ReferenceSelection select_references(std::span<const CandidateRecord> records, std::uint64_t seed);
ReferenceSelection select_references(const Repository& repo, std::uint64_t seed);

// -- completion transport ----------------------------------------------------

struct Endpoint {
  std::string base_url;  // scheme://host:port
  std::string path = "/v1/chat/completions";
  std::string model = "olympiccoder-7b";
  std::string api_key;
};

/// AUGFORGE_LLM_URL, AUGFORGE_LLM_MODEL, AUGFORGE_API_KEY; unset values keep
/// the fields of `fallback`.
Endpoint endpoint_from_env(Endpoint fallback = {});

struct GatewayOptions {
  std::size_t parallelism = 1;
  std::chrono::milliseconds request_timeout{300'000};
  int attempts = 3;
  std::chrono::milliseconds initial_backoff{1'000};
};

struct CompletionRequest {
  std::string prompt;
  SamplingParams params;
  std::optional<std::uint64_t> seed;
};

struct GenerationError {
  enum class Kind { unreachable, malformed };
  Kind kind = Kind::unreachable;
  std::string detail;
};

struct Completion {
  std::optional<std::string> text;
  std::optional<GenerationError> error;

  bool ok() const { return text.has_value(); }
};

/// Request body for one completion.
nlohmann::ordered_json chat_request_body(const Endpoint& endpoint, const CompletionRequest& request,
                                         bool include_top_k = true);

/// choices[0].message.content (or choices[0].text); nullopt if absent.
std::optional<std::string> parse_chat_response(std::string_view body);

class CompletionClient {
 public:
  virtual ~CompletionClient() = default;
  /// One completion per request, in request order.
  virtual std::vector<Completion> complete(std::span<const CompletionRequest> requests) = 0;
};

class HttpCompletionClient final : public CompletionClient {
 public:
  HttpCompletionClient(Endpoint endpoint, GatewayOptions options)
      : endpoint_(std::move(endpoint)), options_(options) {}

  std::vector<Completion> complete(std::span<const CompletionRequest> requests) override;

 private:
  Endpoint endpoint_;
  GatewayOptions options_;
};

/// n independent requests of the same prompt; never throws for transport
/// failures, which become per-slot errors.
std::vector<Completion> generate_candidates(const std::string& prompt, const SamplingParams& params, std::size_t n,
                                            const Endpoint& endpoint, const GatewayOptions& options = {});

}  // namespace augforge
