#include "augforge/mock_servers.hpp"

#include <algorithm>
#include <set>
#include <stdexcept>

#include <httplib.h>

#include "augforge/candidate_codec.hpp"
#include "augforge/random.hpp"
#include "augforge/transform_space.hpp"

namespace augforge {

namespace {

constexpr int kResolutions[] = {64, 128, 224, 256};

std::string chat_body(const std::string& content) {
  return nlohmann::json{{"id", "mock"},
                        {"object", "chat.completion"},
                        {"choices",
                         {{{"index", 0},
                           {"message", {{"role", "assistant"}, {"content", content}}},
                           {"finish_reason", "stop"}}}}}
      .dump();
}

std::vector<std::string> tr_blocks(std::string_view text) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (true) {
    const auto open = text.find("<tr>", pos);
    if (open == std::string_view::npos) break;
    const auto close = text.find("</tr>", open);
    if (close == std::string_view::npos) break;
    out.emplace_back(text.substr(open + 4, close - open - 4));
    pos = close + 5;
  }
  return out;
}

struct ParsedReference {
  std::vector<std::string> op_calls;
  std::optional<int> resize;
};

ParsedReference parse_reference(std::string_view code) {
  static const std::set<std::string, std::less<>> tail = {"Resize", "ToTensor", "Normalize", "Compose"};
  ParsedReference ref;
  std::size_t pos = 0;
  while ((pos = code.find("transforms.", pos)) != std::string_view::npos) {
    pos += 11;
    const auto paren = code.find('(', pos);
    if (paren == std::string_view::npos) break;
    const auto name = code.substr(pos, paren - pos);
    if (name == "Compose") {
      pos = paren + 1;
      continue;
    }
    int depth = 0;
    std::size_t end = paren;
    for (; end < code.size(); ++end) {
      if (code[end] == '(') ++depth;
      if (code[end] == ')' && --depth == 0) break;
    }
    if (end >= code.size()) break;
    if (name == "Resize") {
      const auto args = code.substr(paren + 1, end - paren - 1);
      const auto digits = args.find_first_of("0123456789");
      if (digits != std::string_view::npos) ref.resize = std::atoi(std::string(args.substr(digits)).c_str());
    } else if (!tail.count(name)) {
      ref.op_calls.emplace_back(code.substr(pos, end - pos + 1));
    }
    pos = end;
  }
  return ref;
}

std::uint64_t prompt_key(const nlohmann::json& request) {
  std::string prompt;
  if (request.contains("messages") && request["messages"].is_array())
    for (const auto& m : request["messages"])
      if (m.contains("content") && m["content"].is_string()) prompt += m["content"].get<std::string>();
  const auto digest = sha256_hex(prompt);
  std::uint64_t key = std::stoull(digest.substr(0, 16), nullptr, 16);
  if (request.contains("seed") && request["seed"].is_number_unsigned())
    key = derive_seed(key, request["seed"].get<std::uint64_t>());
  return key;
}

}  // namespace

std::string mock_transform_source(const std::vector<std::string>& op_calls, int resize) {
  const FixedTail tail;
  auto tuple = [](const std::vector<double>& xs) {
    std::string s = "(";
    for (std::size_t i = 0; i < xs.size(); ++i) {
      if (i) s += ", ";
      char buf[32];
      std::snprintf(buf, sizeof buf, "%g", xs[i]);
      s += buf;
    }
    return s + ")";
  };
  std::string code = "import torchvision.transforms as transforms\n\n\ndef transform():\n    return transforms.Compose([\n";
  for (const auto& call : op_calls) code += "        transforms." + call + ",\n";
  code += "        transforms.Resize((" + std::to_string(resize) + ", " + std::to_string(resize) + ")),\n";
  code += "        transforms.ToTensor(),\n";
  code += "        transforms.Normalize(mean=" + tuple(tail.normalize_mean) + ", std=" + tuple(tail.normalize_std) + "),\n";
  code += "    ])\n";
  return code;
}

MockLlmPolicy echo_policy(std::string text) {
  return [text = std::move(text)](const nlohmann::json&, std::uint64_t) { return MockReply{200, text, {}, {}}; };
}

MockLlmPolicy recombine_policy(RecombineOptions options) {
  return [options](const nlohmann::json& request, std::uint64_t) {
    Rng rng(prompt_key(request));
    std::string prompt;
    if (request.contains("messages") && request["messages"].is_array() && !request["messages"].empty())
      prompt = request["messages"][0].value("content", "");

    std::vector<std::string> pool;
    std::vector<int> resizes;
    for (const auto& block : tr_blocks(prompt)) {
      const auto ref = parse_reference(block);
      for (const auto& call : ref.op_calls)
        if (std::find(pool.begin(), pool.end(), call) == pool.end()) pool.push_back(call);
      if (ref.resize) resizes.push_back(*ref.resize);
    }
    if (pool.empty()) pool.push_back("RandomHorizontalFlip(p=0.5)");

    const auto k = 1 + rng.uniform_index(std::min<std::size_t>(3, pool.size()));
    std::vector<std::string> calls;
    for (const auto i : rng.sample_without_replacement(pool.size(), k)) calls.push_back(pool[i]);
    const int resize = (!resizes.empty() && rng.uniform01() < 0.5)
                           ? resizes[rng.uniform_index(resizes.size())]
                           : kResolutions[rng.uniform_index(std::size(kResolutions))];
    const std::string code = mock_transform_source(calls, resize);

    if (rng.uniform01() < options.invalid_rate) {
      switch (rng.uniform_index(4)) {
        case 0: return MockReply{200, code, {}, {}};
        case 1: return MockReply{200, "```python\n<tr>" + code + "</tr>\n```", {}, {}};
        case 2: return MockReply{200, "<tr>" + code + "</tr>\n<tr>" + code + "</tr>", {}, {}};
        default: return MockReply{200, "<tr>" + code + "<path d=\"M0 0\"/></tr>", {}, {}};
      }
    }
    return MockReply{200, "<tr>\n" + code + "</tr>", {}, {}};
  };
}

MockServerBase::MockServerBase(std::string host, int port)
    : server_(std::make_unique<httplib::Server>()), host_(std::move(host)), port_(port) {}

MockServerBase::~MockServerBase() { stop(); }

void MockServerBase::start() {
  if (port_ == 0) {
    port_ = server_->bind_to_any_port(host_);
  } else if (!server_->bind_to_port(host_, port_)) {
    throw std::runtime_error("cannot bind " + host_ + ":" + std::to_string(port_));
  }
  if (port_ <= 0) throw std::runtime_error("cannot bind " + host_);
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
}

std::string MockServerBase::url() const { return "http://" + host_ + ":" + std::to_string(port_); }

void MockServerBase::stop() {
  if (server_) server_->stop();
  if (thread_.joinable()) thread_.join();
}

void MockServerBase::wait() {
  if (thread_.joinable()) thread_.join();
}

MockLlmServer::MockLlmServer(MockLlmPolicy policy, std::string host, int port)
    : MockServerBase(std::move(host), port), policy_(std::move(policy)) {
  auto handler = [this](const httplib::Request& req, httplib::Response& res) {
    const auto index = calls_++;
    const auto body = nlohmann::json::parse(req.body, nullptr, false);
    if (body.is_discarded() || !body.is_object() || !body.contains("messages")) {
      res.status = 400;
      res.set_content(R"({"error":"malformed request"})", "application/json");
      return;
    }
    const MockReply reply = policy_(body, index);
    if (reply.delay.count() > 0) std::this_thread::sleep_for(reply.delay);
    res.status = reply.status;
    res.set_content(reply.raw_body.empty() ? chat_body(reply.content) : reply.raw_body, "application/json");
  };
  server_->Post("/v1/chat/completions", handler);
  server_->Post("/chat/completions", handler);
  start();
}

MockWorkerPolicy surrogate_worker_policy() {
  return [](const EvalJob& job) {
    MockWorkerReply reply;
    reply.result = surrogate_evaluate(job.code, job.config);
    return reply;
  };
}

MockWorkerServer::MockWorkerServer(MockWorkerPolicy policy, std::string host, int port)
    : MockServerBase(std::move(host), port), policy_(std::move(policy)) {
  server_->Post("/evaluate", [this](const httplib::Request& req, httplib::Response& res) {
    ++calls_;
    EvalJob job;
    try {
      job = job_from_wire(nlohmann::json::parse(req.body));
    } catch (const std::exception& e) {
      res.status = 400;
      res.set_content(nlohmann::json{{"error", e.what()}}.dump(), "application/json");
      return;
    }
    MockWorkerReply reply = policy_(job);
    if (reply.delay.count() > 0) std::this_thread::sleep_for(reply.delay);
    res.status = reply.status;
    if (!reply.raw_body.empty()) {
      res.set_content(reply.raw_body, "application/json");
    } else if (reply.result) {
      reply.result->job_id = job.job_id;
      res.set_content(result_to_wire(*reply.result).dump(), "application/json");
    }
  });
  server_->Post("/finetune", [this](const httplib::Request& req, httplib::Response& res) {
    ++finetune_calls_;
    const auto spec = nlohmann::json::parse(req.body, nullptr, false);
    if (spec.is_discarded() || !spec.contains("dataset_path")) {
      res.status = 400;
      res.set_content(R"({"error":"malformed finetune job"})", "application/json");
      return;
    }
    res.set_content(nlohmann::json{{"status", "completed"},
                                   {"adapter_path", spec.value("output_adapter_path", std::string())}}
                        .dump(),
                    "application/json");
  });
  start();
}

}  // namespace augforge
