#include "augforge/cli.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "augforge/candidate_codec.hpp"
#include "augforge/eval_scheduler.hpp"
#include "augforge/llm_gateway.hpp"
#include "augforge/loop_controller.hpp"
#include "augforge/mock_servers.hpp"
#include "augforge/pair_builder.hpp"
#include "augforge/perf_repository.hpp"
#include "augforge/random.hpp"
#include "augforge/transform_space.hpp"

namespace augforge {

namespace {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::atomic<bool> g_interrupted{false};

extern "C" void on_interrupt(int) { g_interrupted = true; }

fs::path resolve(const fs::path& workdir, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() ? path : workdir / path;
}

ojson store_summary(const Repository& repo) {
  std::string lines;
  for (const auto& r : repo.snapshot()) {
    lines += std::to_string(r.record_id) + " " + r.digest + " ";
    lines += r.accuracy ? std::to_string(*r.accuracy) : (r.error_class ? std::string(to_string(*r.error_class)) : "-");
    lines += "\n";
  }
  ojson j;
  j["path"] = repo.path() ? repo.path()->string() : "";
  j["records"] = repo.size();
  j["fingerprint"] = sha256_hex(lines);
  return j;
}

void write_manifest(const fs::path& workdir, const std::string& command, ojson body) {
  ojson m;
  m["command"] = command;
  for (auto& [k, v] : body.items()) m[k] = v;
  const auto path = workdir / "manifests" / (command + ".json");
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << m.dump(2) << "\n";
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

nlohmann::json read_config_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  auto j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw UsageError("config " + path.string() + " is not a JSON object");
  return j;
}

/// Manifests carry their resolved flags under "config"; plain config files are
/// flat objects keyed by flag name.
const nlohmann::json& config_values(const nlohmann::json& file) {
  if (const auto it = file.find("config"); it != file.end() && it->is_object()) return *it;
  return file;
}

std::vector<std::string> config_tokens(const nlohmann::json& values, const CLI::App& sub) {
  std::vector<std::string> tokens;
  for (const auto& [key, value] : values.items()) {
    std::string flag = "--" + key;
    std::replace(flag.begin(), flag.end(), '_', '-');
    if (!sub.get_option_no_throw(flag)) throw UsageError("unknown config key '" + key + "' for " + sub.get_name());
    if (value.is_null()) continue;
    if (value.is_boolean()) {
      if (value.get<bool>()) tokens.push_back(flag);
    } else if (value.is_string()) {
      tokens.push_back(flag);
      tokens.push_back(value.get<std::string>());
    } else if (value.is_number()) {
      tokens.push_back(flag);
      tokens.push_back(value.dump());
    } else {
      throw UsageError("config key '" + key + "' must be a scalar");
    }
  }
  return tokens;
}

std::unique_ptr<Evaluator> make_evaluator(const std::string& kind, const std::string& worker_url,
                                          std::size_t parallel) {
  if (kind == "surrogate") return std::make_unique<SurrogateEvaluator>();
  if (worker_url.empty()) throw std::runtime_error("--evaluator worker needs --worker-url or AUGFORGE_WORKER_URL");
  SchedulerOptions options;
  options.max_in_flight = parallel;
  return std::make_unique<WorkerEvaluator>(worker_url, options);
}

std::string env_or(const char* name, std::string fallback) {
  const char* v = std::getenv(name);
  return v && *v ? std::string(v) : fallback;
}

// -- brute ---------------------------------------------------------------------

struct BruteArgs {
  std::string arity = "all";
  std::size_t count = 2000;
  std::uint64_t seed = 7;
  bool no_eval = false;
  std::string evaluator = "surrogate";
  std::string worker_url = env_or("AUGFORGE_WORKER_URL", "");
  std::size_t parallel = 1;
  std::string mode = "unfiltered";
  std::string out = "brute";
};

int run_brute(const BruteArgs& a, const fs::path& workdir, const fs::path& store_path, std::ostream& out) {
  std::vector<int> arities;
  if (a.arity == "all") {
    for (int k = kMinArity; k <= kMaxArity; ++k) arities.push_back(k);
  } else {
    arities.push_back(std::stoi(a.arity));
  }

  const Catalog catalog = default_catalog();
  std::vector<CampaignEntry> entries;
  for (const int k : arities) {
    auto e = render_campaign(catalog, k, a.count, a.seed);
    entries.insert(entries.end(), std::make_move_iterator(e.begin()), std::make_move_iterator(e.end()));
  }
  const auto out_dir = resolve(workdir, a.out);
  write_campaign(out_dir, entries);

  const auto now = system_clock_ms();
  std::vector<CandidateRecord> records;
  std::vector<EvalJob> jobs;
  std::vector<std::size_t> job_record;
  for (const auto& e : entries) {
    CandidateRecord r;
    r.code = e.source;
    r.source = BruteSource{e.arity};
    r.validity = validate_candidate(e.source).valid() ? Validity::valid : Validity::invalid;
    r.eval_config = EvalConfig::canonical();
    r.created_at = now;
    if (!a.no_eval && r.validity == Validity::valid) {
      jobs.push_back({e.filename, r.code, r.eval_config, now});
      job_record.push_back(records.size());
    }
    records.push_back(std::move(r));
  }
  const auto n_valid = static_cast<std::size_t>(std::count_if(
      records.begin(), records.end(), [](const auto& r) { return r.validity == Validity::valid; }));

  if (!jobs.empty()) {
    const auto evaluator = make_evaluator(a.evaluator, a.worker_url, a.parallel);
    const auto results = evaluator->evaluate(jobs);
    for (std::size_t i = 0; i < results.size(); ++i) {
      auto& r = records[job_record[i]];
      if (const auto acc = results[i].accuracy()) {
        r.accuracy = *acc;
      } else if (results[i].error()->error_class == ErrorClass::worker_unreachable) {
        throw std::runtime_error("worker unreachable during brute evaluation: " + results[i].error()->detail);
      } else {
        r.error_class = results[i].error()->error_class;
      }
    }
  }

  Repository repo(store_path);
  const auto before = store_summary(repo);
  const auto outcomes = repo.insert_batch(records, curation_mode_from_string(a.mode));
  const auto stored = static_cast<std::size_t>(std::count_if(
      outcomes.begin(), outcomes.end(), [](const auto& o) { return o.kind == InsertOutcome::Kind::stored; }));

  ojson config;
  config["arity"] = a.arity;
  config["count"] = a.count;
  config["seed"] = a.seed;
  config["no_eval"] = a.no_eval;
  config["evaluator"] = a.evaluator;
  config["parallel"] = a.parallel;
  config["mode"] = a.mode;
  config["out"] = a.out;
  ojson outputs;
  outputs["files"] = entries.size();
  outputs["valid"] = n_valid;
  outputs["evaluated"] = jobs.size();
  outputs["stored"] = stored;
  outputs["campaign_dir"] = out_dir.string();
  write_manifest(workdir, "brute", {{"config", config}, {"store_before", before}, {"store", store_summary(repo)},
                                    {"outputs", outputs}});

  out << "brute: generated " << entries.size() << " files, " << n_valid << " valid, " << jobs.size()
      << " evaluated, " << stored << " stored\n";
  return 0;
}

// -- pairs ---------------------------------------------------------------------

struct PairsArgs {
  std::string mode = "curated";
  std::string policy = "uniform_better";
  double augment_fraction = 0.5;
  std::uint64_t seed = 2;
  std::string out = "datasets/pairs.jsonl";
};

int run_pairs(const PairsArgs& a, const fs::path& workdir, const fs::path& store_path, std::ostream& out) {
  Repository repo(store_path);
  std::vector<CandidateRecord> evaluated;
  for (auto& r : repo.snapshot())
    if (r.evaluated()) evaluated.push_back(std::move(r));
  auto records = curate(evaluated, curation_mode_from_string(a.mode));
  std::erase_if(records, [](const auto& r) { return !r.accuracy; });
  if (records.empty()) throw std::runtime_error("store has no evaluated records");

  auto pairs = build_pairs(records, pair_policy_from_string(a.policy), a.seed);
  const auto augmented = augment_resize256(pairs, a.augment_fraction, derive_seed(a.seed, 1));
  const auto n_original = pairs.size();
  pairs.insert(pairs.end(), augmented.pairs.begin(), augmented.pairs.end());
  const auto path = resolve(workdir, a.out);
  const auto n = emit_dataset(pairs, path);

  ojson config;
  config["mode"] = a.mode;
  config["policy"] = a.policy;
  config["augment_fraction"] = a.augment_fraction;
  config["seed"] = a.seed;
  config["out"] = a.out;
  ojson outputs;
  outputs["records"] = records.size();
  outputs["pairs"] = n_original;
  outputs["augmented"] = augmented.pairs.size();
  outputs["skipped"] = augmented.skipped.size();
  outputs["samples"] = n;
  outputs["dataset"] = path.string();
  write_manifest(workdir, "pairs", {{"config", config}, {"store", store_summary(repo)}, {"outputs", outputs}});

  out << "pairs: " << records.size() << " records, " << n_original << " pairs, " << augmented.pairs.size()
      << " augmented (" << augmented.skipped.size() << " skipped), " << n << " samples -> " << path.string()
      << "\n";
  return 0;
}

// -- loop ----------------------------------------------------------------------

struct LoopArgs {
  LoopConfig config;
  std::string prompt = "direct";
  std::string mode = "curated";
  std::string policy = "uniform_better";
  std::string finetune_url;
  Endpoint endpoint = endpoint_from_env();
  std::string evaluator = "surrogate";
  std::string worker_url = env_or("AUGFORGE_WORKER_URL", "");
  std::size_t parallel = 1;
  std::string out = "loop";
};

int run_loop_command(LoopArgs a, const fs::path& workdir, const fs::path& store_path,
                     const std::optional<nlohmann::json>& config_file, std::ostream& out, std::ostream& err) {
  auto& cfg = a.config;
  cfg.prompt_mode = prompt_mode_from_string(a.prompt);
  cfg.curation_mode = curation_mode_from_string(a.mode);
  cfg.pair_policy = pair_policy_from_string(a.policy);
  if (!a.finetune_url.empty()) cfg.finetune_url = a.finetune_url;
  cfg.validate();
  if (a.endpoint.base_url.empty()) throw std::runtime_error("no LLM endpoint: pass --llm-url or set AUGFORGE_LLM_URL");

  Repository repo(store_path);
  const auto before = store_summary(repo);
  if (config_file && config_file->contains("store_before")) {
    const auto& expected = (*config_file)["store_before"];
    if (expected.value("fingerprint", "") != before["fingerprint"].get<std::string>())
      err << "warning: store differs from the manifest's base store; replay may diverge\n";
  }

  ojson config = loop_config_to_json(cfg);
  config["out"] = a.out;
  ojson endpoints;
  endpoints["llm_url"] = a.endpoint.base_url;
  endpoints["model"] = a.endpoint.model;
  endpoints["evaluator"] = a.evaluator;
  endpoints["worker_url"] = a.worker_url;
  endpoints["parallel"] = a.parallel;
  const auto out_dir = resolve(workdir, a.out);
  auto manifest = [&](const std::string& status, std::size_t epochs_done) {
    ojson outputs;
    outputs["status"] = status;
    outputs["epochs_completed"] = epochs_done;
    outputs["dir"] = out_dir.string();
    write_manifest(workdir, "loop",
                   {{"config", config}, {"endpoints", endpoints}, {"store_before", before},
                    {"store", store_summary(repo)}, {"outputs", outputs}});
  };
  manifest("running", 0);

  auto state = initial_state(repo, cfg.curation_mode);
  GatewayOptions gateway;
  gateway.parallelism = a.parallel;
  HttpCompletionClient client(a.endpoint, gateway);
  const auto evaluator = make_evaluator(a.evaluator, a.worker_url, a.parallel);

  std::vector<EpochStats> stats;
  try {
    stats = run_loop(state, cfg, client, *evaluator, out_dir);
  } catch (const EpochAborted& e) {
    manifest(std::string("aborted: ") + e.what(), state.next_epoch);
    throw;
  }
  write_reports(stats, out_dir);
  manifest("completed", stats.size());
  out << stats_csv(stats);
  return 0;
}

// -- stats ---------------------------------------------------------------------

struct StatsArgs {
  double threshold = 0.55;
  std::string out = "reports";
};

int run_stats(const StatsArgs& a, const fs::path& workdir, const fs::path& store_path, std::ostream& out) {
  Repository repo(store_path);
  const auto records = repo.snapshot();
  const auto stats = stats_from_records(records, a.threshold);
  const auto dir = resolve(workdir, a.out);
  const auto files = write_reports(stats, dir);

  ojson config;
  config["threshold"] = a.threshold;
  config["out"] = a.out;
  ojson written = ojson::array();
  for (const auto& f : files) written.push_back(f.string());
  write_manifest(workdir, "stats", {{"config", config}, {"store", store_summary(repo)}, {"outputs", written}});
  out << stats_csv(stats);
  return 0;
}

// -- mock-serve ----------------------------------------------------------------

struct MockArgs {
  std::string host = "127.0.0.1";
  int llm_port = 8000;
  int worker_port = 8001;
  double invalid_rate = 0.1;
  std::int64_t duration_ms = 0;
};

int run_mock_serve(const MockArgs& a, const fs::path& workdir, std::ostream& out) {
  MockLlmServer llm(recombine_policy({a.invalid_rate}), a.host, a.llm_port);
  MockWorkerServer worker(surrogate_worker_policy(), a.host, a.worker_port);
  ojson config;
  config["host"] = a.host;
  config["llm_port"] = llm.port();
  config["worker_port"] = worker.port();
  config["invalid_rate"] = a.invalid_rate;
  config["duration_ms"] = a.duration_ms;
  write_manifest(workdir, "mock-serve", {{"config", config}});
  out << "llm " << llm.url() << "\nworker " << worker.url() << "\n" << std::flush;

  g_interrupted = false;
  auto previous_int = std::signal(SIGINT, on_interrupt);
  auto previous_term = std::signal(SIGTERM, on_interrupt);
  const auto start = std::chrono::steady_clock::now();
  while (!g_interrupted) {
    if (a.duration_ms > 0 && std::chrono::steady_clock::now() - start >= std::chrono::milliseconds(a.duration_ms))
      break;
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
  }
  std::signal(SIGINT, previous_int);
  std::signal(SIGTERM, previous_term);
  out << "served " << llm.calls() << " completions, " << worker.calls() << " evaluations\n";
  return 0;
}

// Index of the subcommand token, skipping global options and their values.
std::size_t subcommand_index(const std::vector<std::string>& args) {
  for (std::size_t i = 1; i < args.size(); ++i) {
    const auto& a = args[i];
    if (a == "--workdir" || a == "--config" || a == "--store") {
      ++i;
      continue;
    }
    if (!a.starts_with("-")) return i;
  }
  return args.size();
}

std::optional<std::string> find_config_flag(const std::vector<std::string>& args) {
  for (std::size_t i = 1; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) return args[i + 1];
    if (args[i].starts_with("--config=")) return args[i].substr(9);
  }
  return std::nullopt;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Closed-loop search for data-augmentation transforms", "augforge"};
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.failure_message(CLI::FailureMessage::help);
  app.require_subcommand(1);
  app.fallthrough();

  std::string workdir_arg = ".";
  std::string config_arg;
  std::string store_arg = "store.jsonl";
  app.add_option("--workdir", workdir_arg, "Directory all relative paths resolve against")->capture_default_str();
  app.add_option("--config", config_arg, "JSON run configuration or a previous run manifest");
  app.add_option("--store", store_arg, "Repository file")->capture_default_str();

  BruteArgs brute;
  auto* brute_cmd = app.add_subcommand("brute", "Enumerate, render, validate and evaluate brute-force pipelines");
  brute_cmd->add_option("--arity", brute.arity, "Pipeline arity")
      ->check(CLI::IsMember({"1", "2", "3", "all"}))
      ->capture_default_str();
  brute_cmd->add_option("--count", brute.count, "Pipelines per arity")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  brute_cmd->add_option("--seed", brute.seed, "Campaign seed")->capture_default_str();
  brute_cmd->add_flag("--no-eval", brute.no_eval, "Store records without evaluating them");
  brute_cmd->add_option("--evaluator", brute.evaluator, "Evaluation backend")
      ->check(CLI::IsMember({"surrogate", "worker"}))
      ->capture_default_str();
  brute_cmd->add_option("--worker-url", brute.worker_url, "Training worker base URL [env AUGFORGE_WORKER_URL]");
  brute_cmd->add_option("--parallel", brute.parallel, "Evaluations in flight")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  brute_cmd->add_option("--mode", brute.mode, "Store curation")
      ->check(CLI::IsMember({"curated", "unfiltered"}))
      ->capture_default_str();
  brute_cmd->add_option("--out", brute.out, "Campaign file directory")->capture_default_str();

  PairsArgs pairs;
  auto* pairs_cmd = app.add_subcommand("pairs", "Build the \"B better than A\" fine-tuning dataset");
  pairs_cmd->add_option("--mode", pairs.mode, "Curation mode")
      ->check(CLI::IsMember({"curated", "unfiltered"}))
      ->capture_default_str();
  pairs_cmd->add_option("--policy", pairs.policy, "Add-on selection")
      ->check(CLI::IsMember({"uniform_better", "nearest_better"}))
      ->capture_default_str();
  pairs_cmd->add_option("--augment-fraction", pairs.augment_fraction, "Share of pairs copied with Resize 256")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  pairs_cmd->add_option("--seed", pairs.seed, "Pairing seed")->capture_default_str();
  pairs_cmd->add_option("--out", pairs.out, "Dataset file")->capture_default_str();

  LoopArgs loop;
  auto* loop_cmd = app.add_subcommand("loop", "Run the generate/evaluate/filter/fine-tune loop");
  loop_cmd->add_option("--epochs", loop.config.n_epochs, "Loop epochs")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  loop_cmd->add_option("--per-epoch", loop.config.candidates_per_epoch, "Candidates generated per epoch")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  loop_cmd->add_option("--threshold", loop.config.filter_threshold, "Admit candidates with accuracy above this")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  loop_cmd->add_option("--prompt", loop.prompt, "Generation prompt")
      ->check(CLI::IsMember({"direct", "cot"}))
      ->capture_default_str();
  loop_cmd->add_option("--mode", loop.mode, "Curation mode")
      ->check(CLI::IsMember({"curated", "unfiltered"}))
      ->capture_default_str();
  loop_cmd->add_option("--temperature", loop.config.sampling.temperature, "Sampling temperature")
      ->capture_default_str();
  loop_cmd->add_option("--top-p", loop.config.sampling.top_p, "Nucleus sampling mass")->capture_default_str();
  loop_cmd->add_option("--top-k", loop.config.sampling.top_k, "Top-k sampling")->capture_default_str();
  loop_cmd->add_option("--max-new-tokens", loop.config.sampling.max_new_tokens, "Completion token limit")
      ->capture_default_str();
  loop_cmd->add_option("--reference-seed", loop.config.reference_seed, "Few-shot reference seed")
      ->capture_default_str();
  loop_cmd->add_option("--pairing-seed", loop.config.pairing_seed, "Pairing and augmentation seed")
      ->capture_default_str();
  loop_cmd->add_option("--policy", loop.policy, "Add-on selection")
      ->check(CLI::IsMember({"uniform_better", "nearest_better"}))
      ->capture_default_str();
  loop_cmd->add_option("--augment-fraction", loop.config.augment_fraction, "Share of pairs copied with Resize 256")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  loop_cmd->add_flag("--shared-references", loop.config.shared_references,
                     "One reference pair per epoch instead of one per candidate");
  loop_cmd->add_option("--finetune-url", loop.finetune_url, "Post each fine-tune job here and wait for it");
  loop_cmd->add_option("--llm-url", loop.endpoint.base_url, "Chat-completion base URL [env AUGFORGE_LLM_URL]");
  loop_cmd->add_option("--model", loop.endpoint.model, "Model name [env AUGFORGE_LLM_MODEL]")
      ->capture_default_str();
  loop_cmd->add_option("--evaluator", loop.evaluator, "Evaluation backend")
      ->check(CLI::IsMember({"surrogate", "worker"}))
      ->capture_default_str();
  loop_cmd->add_option("--worker-url", loop.worker_url, "Training worker base URL [env AUGFORGE_WORKER_URL]");
  loop_cmd->add_option("--parallel", loop.parallel, "Requests in flight")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  loop_cmd->add_option("--out", loop.out, "Output directory")->capture_default_str();

  StatsArgs stats;
  auto* stats_cmd = app.add_subcommand("stats", "Recompute per-epoch statistics and reports from the store");
  stats_cmd->add_option("--threshold", stats.threshold, "Admission threshold")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  stats_cmd->add_option("--out", stats.out, "Report directory")->capture_default_str();

  std::string export_path;
  auto* export_cmd = app.add_subcommand("export", "Write the store as a self-delimiting export file");
  export_cmd->add_option("--out", export_path, "Export file")->required();

  std::string import_path;
  auto* import_cmd = app.add_subcommand("import", "Append the records of an export file");
  import_cmd->add_option("--in", import_path, "Export file")->required();

  MockArgs mock;
  auto* mock_cmd = app.add_subcommand("mock-serve", "Serve a mock LLM and a surrogate worker");
  mock_cmd->add_option("--host", mock.host, "Bind address")->capture_default_str();
  mock_cmd->add_option("--llm-port", mock.llm_port, "Mock LLM port (0 picks one)")->capture_default_str();
  mock_cmd->add_option("--worker-port", mock.worker_port, "Mock worker port (0 picks one)")->capture_default_str();
  mock_cmd->add_option("--invalid-rate", mock.invalid_rate, "Share of malformed completions")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  mock_cmd->add_option("--duration-ms", mock.duration_ms, "Stop after this long (0 waits for a signal)")
      ->capture_default_str();

  std::vector<std::string> args(argv, argv + argc);
  std::optional<nlohmann::json> config_file;
  try {
    if (const auto config_path = find_config_flag(args)) {
      config_file = read_config_file(*config_path);
      const auto at = subcommand_index(args);
      if (at < args.size()) {
        if (auto* sub = app.get_subcommand_no_throw(args[at])) {
          const auto tokens = config_tokens(config_values(*config_file), *sub);
          args.insert(args.begin() + static_cast<std::ptrdiff_t>(at) + 1, tokens.begin(), tokens.end());
        }
      }
    }
  } catch (const UsageError& e) {
    err << "augforge: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "augforge: error: " << e.what() << "\n";
    return 1;
  }

  std::vector<const char*> cargs;
  for (const auto& a : args) cargs.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(cargs.size()), cargs.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  const fs::path workdir(workdir_arg);
  try {
    fs::create_directories(workdir);
    const auto store_path = resolve(workdir, store_arg);
    if (*brute_cmd) return run_brute(brute, workdir, store_path, out);
    if (*pairs_cmd) return run_pairs(pairs, workdir, store_path, out);
    if (*loop_cmd) return run_loop_command(loop, workdir, store_path, config_file, out, err);
    if (*stats_cmd) return run_stats(stats, workdir, store_path, out);
    if (*export_cmd) {
      Repository repo(store_path);
      const auto path = resolve(workdir, export_path);
      const auto n = repo.export_to(path);
      write_manifest(workdir, "export", {{"config", {{"out", export_path}}}, {"store", store_summary(repo)}});
      out << "export: " << n << " records -> " << path.string() << "\n";
      return 0;
    }
    if (*import_cmd) {
      Repository repo(store_path);
      const auto n = repo.import_from(resolve(workdir, import_path));
      write_manifest(workdir, "import", {{"config", {{"in", import_path}}}, {"store", store_summary(repo)}});
      out << "import: " << n << " records\n";
      return 0;
    }
    if (*mock_cmd) return run_mock_serve(mock, workdir, out);
  } catch (const std::exception& e) {
    err << "augforge: error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace augforge
