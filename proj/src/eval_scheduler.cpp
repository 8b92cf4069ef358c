#include "augforge/eval_scheduler.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <map>
#include <set>
#include <stdexcept>
#include <thread>

#include <httplib.h>

#include "augforge/candidate_codec.hpp"

namespace augforge {

namespace {

// Synthetic feature table. Per-op deltas are added to the base score once per
// occurrence; every op after the first costs kStackingPenalty.
constexpr double kBaseScore = 0.52;
constexpr double kUnknownOpDelta = -0.02;
constexpr double kStackingPenalty = 0.02;
constexpr double kNoResizeDelta = -0.01;
constexpr double kJitterHalfWidth = 0.015;

const std::map<std::string, double, std::less<>>& op_deltas() {
  static const std::map<std::string, double, std::less<>> table = {
      {"RandomPosterize", 0.030},       {"RandomHorizontalFlip", 0.020},
      {"RandomCrop", 0.015},            {"RandomAutocontrast", 0.010},
      {"RandomAdjustSharpness", 0.010}, {"RandomEqualize", 0.005},
      {"RandomResizedCrop", -0.010},    {"ColorJitter", -0.015},
      {"RandomGrayscale", -0.020},      {"RandomRotation", -0.025},
      {"RandomAffine", -0.030},         {"GaussianBlur", -0.030},
      {"RandomSolarize", -0.035},       {"RandomVerticalFlip", -0.040},
      {"RandomPerspective", -0.050},    {"RandomInvert", -0.060},
  };
  return table;
}

// (size, delta) knots; interpolated linearly in log2(size), clamped at the ends.
constexpr std::pair<double, double> kResolutionKnots[] = {
    {32, -0.04}, {64, 0.0}, {128, 0.02}, {224, 0.04}, {256, 0.05},
};

const std::set<std::string, std::less<>>& pipeline_plumbing() {
  static const std::set<std::string, std::less<>> names = {
      "Compose", "ToTensor", "Normalize", "PILToTensor", "ConvertImageDtype", "ToPILImage",
  };
  return names;
}

bool is_ident(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }

double resolution_delta(std::optional<int> size) {
  if (!size) return kNoResizeDelta;
  const double x = std::log2(std::max(1, *size));
  const auto& k = kResolutionKnots;
  const std::size_t n = std::size(k);
  if (x <= std::log2(k[0].first)) return k[0].second;
  for (std::size_t i = 1; i < n; ++i) {
    const double x0 = std::log2(k[i - 1].first), x1 = std::log2(k[i].first);
    if (x <= x1) return k[i - 1].second + (k[i].second - k[i - 1].second) * (x - x0) / (x1 - x0);
  }
  return k[n - 1].second;
}

// Top-level comma split of a call's argument text.
std::vector<std::string_view> split_args(std::string_view args) {
  std::vector<std::string_view> out;
  int depth = 0;
  std::size_t start = 0;
  for (std::size_t i = 0; i < args.size(); ++i) {
    const char c = args[i];
    if (c == '(' || c == '[' || c == '{') ++depth;
    if (c == ')' || c == ']' || c == '}') --depth;
    if (c == ',' && depth == 0) {
      out.push_back(trim(args.substr(start, i - start)));
      start = i + 1;
    }
  }
  const auto last = trim(args.substr(start));
  if (!last.empty()) out.push_back(last);
  return out;
}

std::vector<double> numbers_in(std::string_view s) {
  std::vector<double> out;
  std::size_t i = 0;
  while (i < s.size()) {
    if ((std::isdigit(static_cast<unsigned char>(s[i])) || s[i] == '.') && (i == 0 || !is_ident(s[i - 1]))) {
      std::size_t j = i;
      while (j < s.size() && (std::isdigit(static_cast<unsigned char>(s[j])) || s[j] == '.')) ++j;
      try {
        out.push_back(std::stod(std::string(s.substr(i, j - i))));
      } catch (const std::exception&) {
      }
      i = j;
    } else {
      ++i;
    }
  }
  return out;
}

// Value of argument `name`, given either by keyword or at `position`.
std::optional<std::string_view> argument(const std::vector<std::string_view>& args, std::string_view name,
                                         std::size_t position) {
  std::size_t positional = 0;
  for (const auto a : args) {
    const auto eq = a.find('=');
    if (eq != std::string_view::npos && a.find('(') > eq) {
      if (trim(a.substr(0, eq)) == name) return trim(a.substr(eq + 1));
    } else if (positional++ == position) {
      return a;
    }
  }
  return std::nullopt;
}

double first_number(std::optional<std::string_view> s) {
  if (!s) return 0.0;
  const auto xs = numbers_in(*s);
  return xs.empty() ? 0.0 : xs.front();
}

bool brackets_balanced(std::string_view code) {
  std::vector<char> stack;
  for (std::size_t i = 0; i < code.size(); ++i) {
    const char c = code[i];
    if (c == '#') {
      while (i < code.size() && code[i] != '\n') ++i;
      continue;
    }
    if (c == '"' || c == '\'') {
      const std::size_t j = code.find(c, i + 1);
      if (j == std::string_view::npos) return false;
      i = j;
      continue;
    }
    if (c == '(' || c == '[' || c == '{') stack.push_back(c);
    if (c == ')' || c == ']' || c == '}') {
      const char open = c == ')' ? '(' : c == ']' ? '[' : '{';
      if (stack.empty() || stack.back() != open) return false;
      stack.pop_back();
    }
  }
  return stack.empty();
}

double jitter(std::string_view code) {
  const auto digest = canonicalize(code).digest;
  const auto bits = std::stoull(digest.substr(0, 13), nullptr, 16);  // 52 bits
  return kJitterHalfWidth * (2.0 * static_cast<double>(bits) * 0x1.0p-52 - 1.0);
}

EvalResult unreachable(const std::string& job_id, std::string detail) {
  return {job_id, EvalError{ErrorClass::worker_unreachable, std::move(detail)}};
}

}  // namespace

std::string_view to_string(ErrorClass e) {
  switch (e) {
    case ErrorClass::syntax_error: return "syntax_error";
    case ErrorClass::runtime_error: return "runtime_error";
    case ErrorClass::timeout: return "timeout";
    case ErrorClass::worker_unreachable: return "worker_unreachable";
  }
  return "unknown";
}

std::optional<ErrorClass> error_class_from_string(std::string_view s) {
  for (auto e : {ErrorClass::syntax_error, ErrorClass::runtime_error, ErrorClass::timeout,
                 ErrorClass::worker_unreachable})
    if (to_string(e) == s) return e;
  return std::nullopt;
}

std::optional<double> EvalResult::accuracy() const {
  if (const auto* a = std::get_if<double>(&outcome)) return *a;
  return std::nullopt;
}

nlohmann::json eval_config_to_wire(const EvalConfig& c) {
  return {{"dataset", c.dataset_name}, {"task", c.task},         {"epochs", c.train_epochs},
          {"batch", c.batch_size},     {"lr", c.learning_rate},  {"momentum", c.momentum},
          {"dropout", c.dropout}};
}

EvalConfig eval_config_from_wire(const nlohmann::json& j) {
  EvalConfig c;
  c.dataset_name = j.at("dataset").get<std::string>();
  c.task = j.at("task").get<std::string>();
  c.train_epochs = j.at("epochs").get<int>();
  c.batch_size = j.at("batch").get<int>();
  c.learning_rate = j.at("lr").get<double>();
  c.momentum = j.at("momentum").get<double>();
  c.dropout = j.at("dropout").get<double>();
  return c;
}

nlohmann::json job_to_wire(const EvalJob& job) {
  return {{"job_id", job.job_id}, {"code", job.code}, {"config", eval_config_to_wire(job.config)}};
}

EvalJob job_from_wire(const nlohmann::json& j) {
  EvalJob job;
  job.job_id = j.at("job_id").get<std::string>();
  job.code = j.at("code").get<std::string>();
  job.config = eval_config_from_wire(j.at("config"));
  return job;
}

nlohmann::json result_to_wire(const EvalResult& r) {
  if (const auto a = r.accuracy()) return {{"job_id", r.job_id}, {"accuracy", *a}};
  const auto* e = r.error();
  return {{"job_id", r.job_id}, {"error_class", to_string(e->error_class)}, {"detail", e->detail}};
}

EvalResult result_from_wire(std::string_view body, const std::string& expected_job_id) {
  const auto j = nlohmann::json::parse(body, nullptr, false);
  if (j.is_discarded() || !j.is_object()) return unreachable(expected_job_id, "malformed response body");
  if (!j.contains("job_id") || !j["job_id"].is_string() || j["job_id"].get<std::string>() != expected_job_id)
    return unreachable(expected_job_id, "response job_id mismatch");
  const bool has_acc = j.contains("accuracy");
  const bool has_err = j.contains("error_class");
  if (has_acc == has_err) return unreachable(expected_job_id, "response must carry exactly one of accuracy/error_class");
  if (has_acc) {
    if (!j["accuracy"].is_number()) return unreachable(expected_job_id, "accuracy is not a number");
    const double a = j["accuracy"].get<double>();
    if (!(a >= 0.0 && a <= 1.0)) return unreachable(expected_job_id, "accuracy outside [0,1]");
    return {expected_job_id, a};
  }
  const auto cls = j["error_class"].is_string() ? error_class_from_string(j["error_class"].get<std::string>())
                                                : std::nullopt;
  if (!cls) return unreachable(expected_job_id, "unknown error_class");
  std::string detail = j.contains("detail") && j["detail"].is_string() ? j["detail"].get<std::string>() : "";
  return {expected_job_id, EvalError{*cls, std::move(detail)}};
}

std::vector<EvalResult> submit(std::span<const EvalJob> jobs, const std::string& worker_url,
                               const SchedulerOptions& options) {
  if (jobs.empty()) throw std::invalid_argument("submit: empty batch");
  std::set<std::string_view> ids;
  for (const auto& job : jobs) {
    if (job.code.empty()) throw std::invalid_argument("submit: job " + job.job_id + " has empty code");
    if (!ids.insert(job.job_id).second) throw std::invalid_argument("submit: duplicate job id " + job.job_id);
  }

  std::vector<EvalResult> results(jobs.size());
  std::atomic<std::size_t> next{0};
  auto drain = [&] {
    httplib::Client client(worker_url);
    client.set_connection_timeout(options.connect_timeout);
    client.set_read_timeout(options.job_timeout);
    client.set_write_timeout(options.job_timeout);
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      const auto& job = jobs[i];
      const auto started = std::chrono::steady_clock::now();
      const auto res = client.Post(options.path, job_to_wire(job).dump(), "application/json");
      if (!res) {
        const auto elapsed = std::chrono::steady_clock::now() - started;
        if (res.error() == httplib::Error::Read && elapsed >= options.job_timeout * 9 / 10)
          results[i] = {job.job_id, EvalError{ErrorClass::timeout, "no response within job timeout"}};
        else
          results[i] = unreachable(job.job_id, httplib::to_string(res.error()));
      } else if (res->status != 200) {
        results[i] = unreachable(job.job_id, "HTTP " + std::to_string(res->status));
      } else {
        results[i] = result_from_wire(res->body, job.job_id);
      }
    }
  };

  const std::size_t threads = std::clamp<std::size_t>(options.max_in_flight, 1, jobs.size());
  {
    std::vector<std::jthread> pool;
    for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(drain);
    drain();
  }
  return results;
}

SurrogateFeatures extract_features(std::string_view code) {
  SurrogateFeatures f;
  for (std::size_t i = 0; i < code.size(); ++i) {
    if (!std::isupper(static_cast<unsigned char>(code[i])) || (i > 0 && is_ident(code[i - 1]))) continue;
    std::size_t j = i;
    while (j < code.size() && is_ident(code[j])) ++j;
    if (j >= code.size() || code[j] != '(') continue;
    const std::string_view name = code.substr(i, j - i);

    int depth = 0;
    std::size_t k = j;
    for (; k < code.size(); ++k) {
      if (code[k] == '(') ++depth;
      if (code[k] == ')' && --depth == 0) break;
    }
    const auto args = split_args(code.substr(j + 1, std::min(k, code.size()) - j - 1));
    i = j;

    if (pipeline_plumbing().count(name)) continue;
    if (name == "Resize") {
      const auto size = argument(args, "size", 0);
      const auto xs = size ? numbers_in(*size) : std::vector<double>{};
      if (!xs.empty()) f.resolution = static_cast<int>(*std::max_element(xs.begin(), xs.end()));
      continue;
    }
    f.ops.emplace_back(name);
    if (name == "RandomRotation" || name == "RandomAffine") {
      f.magnitude_penalty += 0.0008 * first_number(argument(args, "degrees", 0));
    } else if (name == "ColorJitter") {
      double sum = 0.0;
      for (const auto a : args) sum += first_number(std::optional<std::string_view>(a.substr(a.find('=') + 1)));
      f.magnitude_penalty += 0.02 * sum;
    } else if (name == "RandomPerspective") {
      f.magnitude_penalty += 0.05 * first_number(argument(args, "distortion_scale", 0));
    } else if (name == "GaussianBlur") {
      f.magnitude_penalty += 0.002 * first_number(argument(args, "kernel_size", 0));
    }
  }
  return f;
}

EvalResult surrogate_evaluate(std::string_view code, const EvalConfig& /*config*/) {
  const auto report = validate_candidate(code);
  if (!report.valid()) {
    std::string detail = "structural check failed:";
    for (const auto v : report.violations) detail += " " + std::string(to_string(v));
    return {"", EvalError{ErrorClass::syntax_error, detail}};
  }
  if (!brackets_balanced(code)) return {"", EvalError{ErrorClass::syntax_error, "unbalanced brackets"}};

  const auto f = extract_features(code);
  double score = kBaseScore;
  for (const auto& op : f.ops) {
    const auto it = op_deltas().find(op);
    score += it == op_deltas().end() ? kUnknownOpDelta : it->second;
  }
  if (f.ops.size() > 1) score -= kStackingPenalty * static_cast<double>(f.ops.size() - 1);
  score += resolution_delta(f.resolution);
  score -= f.magnitude_penalty;
  score += jitter(code);
  return {"", std::clamp(score, 0.0, 1.0)};
}

std::vector<EvalResult> SurrogateEvaluator::evaluate(std::span<const EvalJob> jobs) {
  std::vector<EvalResult> out;
  out.reserve(jobs.size());
  for (const auto& job : jobs) {
    auto r = surrogate_evaluate(job.code, job.config);
    r.job_id = job.job_id;
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<EvalResult> WorkerEvaluator::evaluate(std::span<const EvalJob> jobs) {
  if (jobs.empty()) return {};
  return submit(jobs, url_, options_);
}

}  // namespace augforge
