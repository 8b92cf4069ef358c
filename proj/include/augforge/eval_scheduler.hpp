#pragma once

// Evaluation jobs, the worker wire protocol, bounded-concurrency dispatch, and
// the deterministic surrogate evaluator used for desk-scale runs.

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

namespace augforge {

struct EvalConfig {
  std::string dataset_name = "cifar-10";
  std::string task = "img-classification";
  int train_epochs = 1;
  int batch_size = 64;
  double learning_rate = 0.01;
  double momentum = 0.9;
  double dropout = 0.2;

  static EvalConfig canonical() { return {}; }
  friend bool operator==(const EvalConfig&, const EvalConfig&) = default;
};

enum class ErrorClass { syntax_error, runtime_error, timeout, worker_unreachable };

std::string_view to_string(ErrorClass e);
std::optional<ErrorClass> error_class_from_string(std::string_view s);

struct EvalJob {
  std::string job_id;
  std::string code;
  EvalConfig config;
  std::int64_t submitted_at = 0;
};

struct EvalError {
  ErrorClass error_class = ErrorClass::runtime_error;
  std::string detail;

  friend bool operator==(const EvalError&, const EvalError&) = default;
};

struct EvalResult {
  std::string job_id;
  std::variant<double, EvalError> outcome;

  std::optional<double> accuracy() const;
  const EvalError* error() const { return std::get_if<EvalError>(&outcome); }

  friend bool operator==(const EvalResult&, const EvalResult&) = default;
};

// -- wire format (POST /evaluate) -----------------------------------------

nlohmann::json eval_config_to_wire(const EvalConfig& c);
EvalConfig eval_config_from_wire(const nlohmann::json& j);
nlohmann::json job_to_wire(const EvalJob& job);
EvalJob job_from_wire(const nlohmann::json& j);
nlohmann::json result_to_wire(const EvalResult& r);

/// Parses a 200 response body. Anything not matching the frozen schema, or
/// answering a different job, becomes worker_unreachable with a detail.
EvalResult result_from_wire(std::string_view body, const std::string& expected_job_id);

// -- dispatch ---------------------------------------------------------------

struct SchedulerOptions {
  std::size_t max_in_flight = 1;
  std::chrono::milliseconds job_timeout{900'000};
  std::chrono::milliseconds connect_timeout{5'000};
  std::string path = "/evaluate";
};

/// One result per job, in job order. Per-job failures are reported in-band;
/// the batch itself never fails. Throws std::invalid_argument for an empty
/// batch, empty code, or duplicate job ids.
std::vector<EvalResult> submit(std::span<const EvalJob> jobs, const std::string& worker_url,
                               const SchedulerOptions& options = {});

// -- surrogate --------------------------------------------------------------

/// Structural features the surrogate scores. Synthetic by construction; the
/// resulting numbers say nothing about real training accuracy.
struct SurrogateFeatures {
  std::vector<std::string> ops;  // variable ops in order (tail stages excluded)
  std::optional<int> resolution;  // size of the last Resize, if any
  double magnitude_penalty = 0.0;
};

SurrogateFeatures extract_features(std::string_view code);

/// Deterministic score in [0,1]; invalid code yields syntax_error.
EvalResult surrogate_evaluate(std::string_view code, const EvalConfig& config = {});

// -- evaluator seam used by the campaign and loop ---------------------------

class Evaluator {
 public:
  virtual ~Evaluator() = default;
  virtual std::vector<EvalResult> evaluate(std::span<const EvalJob> jobs) = 0;
};

class SurrogateEvaluator final : public Evaluator {
 public:
  std::vector<EvalResult> evaluate(std::span<const EvalJob> jobs) override;
};

class WorkerEvaluator final : public Evaluator {
 public:
  WorkerEvaluator(std::string worker_url, SchedulerOptions options)
      : url_(std::move(worker_url)), options_(std::move(options)) {}
  std::vector<EvalResult> evaluate(std::span<const EvalJob> jobs) override;

 private:
  std::string url_;
  SchedulerOptions options_;
};

}  // namespace augforge
