#pragma once

// In-process HTTP mocks speaking the chat-completion and worker protocols.
// Used by the test suites and by `augforge mock-serve`.

#include <atomic>
#include <chrono>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "augforge/eval_scheduler.hpp"

namespace httplib {
class Server;
}

namespace augforge {

struct MockReply {
  int status = 200;
  std::string content;   // wrapped into a chat-completion body
  std::string raw_body;  // sent verbatim when non-empty
  std::chrono::milliseconds delay{0};
};

using MockLlmPolicy = std::function<MockReply(const nlohmann::json& request, std::uint64_t call_index)>;

/// Answers every request with `text`.
MockLlmPolicy echo_policy(std::string text);

struct RecombineOptions {
  double invalid_rate = 0.1;  // share of replies that break the output contract
};

/// Deterministic stand-in for a generator model: reads the reference
/// transforms out of the prompt and recombines their ops, keyed by a hash of
/// the prompt and the request's `seed` field.
MockLlmPolicy recombine_policy(RecombineOptions options = {});

/// The `transform` source the recombine policy and tests emit for a list of
/// op call texts (e.g. "RandomPosterize(bits=4, p=0.5)") and a square resize.
std::string mock_transform_source(const std::vector<std::string>& op_calls, int resize);

class MockServerBase {
 public:
  MockServerBase(const MockServerBase&) = delete;
  MockServerBase& operator=(const MockServerBase&) = delete;
  virtual ~MockServerBase();

  int port() const { return port_; }
  std::string url() const;
  std::uint64_t calls() const { return calls_; }
  void stop();
  /// Blocks until stop() is called from elsewhere.
  void wait();

 protected:
  MockServerBase(std::string host, int port);
  void start();

  std::unique_ptr<httplib::Server> server_;
  std::atomic<std::uint64_t> calls_{0};

 private:
  std::string host_;
  int port_ = 0;
  std::thread thread_;
};

class MockLlmServer final : public MockServerBase {
 public:
  explicit MockLlmServer(MockLlmPolicy policy, std::string host = "127.0.0.1", int port = 0);
  ~MockLlmServer() override { stop(); }

 private:
  MockLlmPolicy policy_;
};

struct MockWorkerReply {
  int status = 200;
  std::optional<EvalResult> result;  // job_id filled in by the server
  std::string raw_body;
  std::chrono::milliseconds delay{0};
};

using MockWorkerPolicy = std::function<MockWorkerReply(const EvalJob& job)>;

/// Scores with surrogate_evaluate().
MockWorkerPolicy surrogate_worker_policy();

/// POST /evaluate per the worker protocol; POST /finetune acknowledges a job
/// spec and echoes its output adapter path.
class MockWorkerServer final : public MockServerBase {
 public:
  explicit MockWorkerServer(MockWorkerPolicy policy, std::string host = "127.0.0.1", int port = 0);
  ~MockWorkerServer() override { stop(); }

  std::uint64_t finetune_calls() const { return finetune_calls_; }

 private:
  MockWorkerPolicy policy_;
  std::atomic<std::uint64_t> finetune_calls_{0};
};

}  // namespace augforge
