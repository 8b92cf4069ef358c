#include "augforge/loop_controller.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <set>

#include <httplib.h>

#include "augforge/candidate_codec.hpp"
#include "augforge/random.hpp"

namespace augforge {

namespace {

std::string fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

void write_file(const std::filesystem::path& path, std::string_view text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  out.flush();
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

std::string epoch_file(std::string_view stem, std::uint32_t epoch, std::string_view ext) {
  return std::string(stem) + "_" + std::to_string(epoch) + std::string(ext);
}

}  // namespace

void LoopConfig::validate() const {
  if (n_epochs < 1) throw std::invalid_argument("n_epochs must be >= 1");
  if (candidates_per_epoch < 1) throw std::invalid_argument("candidates_per_epoch must be >= 1");
  if (!(filter_threshold >= 0.0 && filter_threshold <= 1.0))
    throw std::invalid_argument("filter_threshold must lie in [0,1]");
  if (!(augment_fraction >= 0.0 && augment_fraction <= 1.0))
    throw std::invalid_argument("augment_fraction must lie in [0,1]");
  sampling.validate();
}

nlohmann::ordered_json loop_config_to_json(const LoopConfig& c) {
  nlohmann::ordered_json j;
  j["epochs"] = c.n_epochs;
  j["per_epoch"] = c.candidates_per_epoch;
  j["threshold"] = c.filter_threshold;
  j["prompt"] = to_string(c.prompt_mode);
  j["mode"] = to_string(c.curation_mode);
  j["temperature"] = c.sampling.temperature;
  j["top_p"] = c.sampling.top_p;
  j["top_k"] = c.sampling.top_k;
  j["max_new_tokens"] = c.sampling.max_new_tokens;
  j["reference_seed"] = c.reference_seed;
  j["pairing_seed"] = c.pairing_seed;
  j["policy"] = to_string(c.pair_policy);
  j["augment_fraction"] = c.augment_fraction;
  j["shared_references"] = c.shared_references;
  j["finetune_url"] = c.finetune_url ? nlohmann::ordered_json(*c.finetune_url) : nlohmann::ordered_json();
  return j;
}

LoopConfig loop_config_from_json(const nlohmann::json& j, LoopConfig c) {
  if (!j.is_object()) throw std::invalid_argument("loop config must be a JSON object");
  auto get = [&](const char* key, auto& field) {
    if (const auto it = j.find(key); it != j.end() && !it->is_null()) it->get_to(field);
  };
  get("epochs", c.n_epochs);
  get("per_epoch", c.candidates_per_epoch);
  get("threshold", c.filter_threshold);
  if (j.contains("prompt")) c.prompt_mode = prompt_mode_from_string(j["prompt"].get<std::string>());
  if (j.contains("mode")) c.curation_mode = curation_mode_from_string(j["mode"].get<std::string>());
  get("temperature", c.sampling.temperature);
  get("top_p", c.sampling.top_p);
  get("top_k", c.sampling.top_k);
  get("max_new_tokens", c.sampling.max_new_tokens);
  get("reference_seed", c.reference_seed);
  get("pairing_seed", c.pairing_seed);
  if (j.contains("policy")) c.pair_policy = pair_policy_from_string(j["policy"].get<std::string>());
  get("augment_fraction", c.augment_fraction);
  get("shared_references", c.shared_references);
  if (const auto it = j.find("finetune_url"); it != j.end()) {
    if (it->is_null()) c.finetune_url.reset();
    else c.finetune_url = it->get<std::string>();
  }
  return c;
}

EpochStats summarize_epoch(std::uint32_t epoch_index, std::size_t n_generated, std::vector<double> accuracies,
                           double threshold) {
  EpochStats s;
  s.epoch_index = epoch_index;
  s.n_generated = n_generated;
  s.n_valid = accuracies.size();
  s.n_admitted = static_cast<std::size_t>(
      std::count_if(accuracies.begin(), accuracies.end(), [&](double a) { return a > threshold; }));
  if (!accuracies.empty()) {
    double sum = 0.0;
    for (const double a : accuracies) sum += a;
    s.mean_accuracy = sum / static_cast<double>(accuracies.size());
    s.max_accuracy = *std::max_element(accuracies.begin(), accuracies.end());
  }
  s.accuracies = std::move(accuracies);
  return s;
}

LoopState initial_state(Repository& repo, CurationMode mode) {
  LoopState state(repo);
  const auto records = repo.snapshot();
  for (const auto& r : curate(records, mode))
    if (r.evaluated()) state.pool.push_back(r.record_id);
  return state;
}

std::vector<CandidateRecord> pool_records(const LoopState& state, CurationMode mode) {
  std::vector<CandidateRecord> records;
  records.reserve(state.pool.size());
  for (const auto id : state.pool)
    if (auto r = state.repo.get(id)) records.push_back(std::move(*r));
  auto curated = curate(records, mode);
  std::erase_if(curated, [](const CandidateRecord& r) { return !r.accuracy; });
  return curated;
}

EpochStats run_epoch(LoopState& state, const LoopConfig& config, CompletionClient& client, Evaluator& evaluator,
                     const std::filesystem::path& out_dir, const Clock& clock, EpochArtifacts* artifacts) {
  config.validate();
  const std::uint32_t epoch = state.next_epoch;
  const auto pool = pool_records(state, config.curation_mode);
  std::map<RecordId, const CandidateRecord*> by_id;
  for (const auto& r : pool) by_id.emplace(r.record_id, &r);

  // Generate.
  const TemplateId tmpl = generation_template(config.prompt_mode);
  std::vector<CompletionRequest> requests;
  for (std::uint32_t slot = 0; slot < config.candidates_per_epoch; ++slot) {
    const std::uint64_t ref_seed = config.shared_references ? derive_seed(config.reference_seed, epoch)
                                                            : derive_seed(config.reference_seed, epoch, slot);
    const auto refs = select_references(pool, ref_seed);
    const auto& a = *by_id.at(refs.ref_a);
    const auto& b = *by_id.at(refs.ref_b);
    const Bindings bindings = {
        {std::string(kAccuracy), format_accuracy(*a.accuracy)},
        {std::string(kTransformCode), a.code},
        {std::string(kAddonAccuracy), format_accuracy(*b.accuracy)},
        {std::string(kAddonTransformCode), b.code},
    };
    requests.push_back({render_prompt(tmpl, bindings), config.sampling, derive_seed(ref_seed, slot)});
  }
  const auto completions = client.complete(requests);
  if (std::none_of(completions.begin(), completions.end(), [](const Completion& c) {
        return c.ok() || (c.error && c.error->kind != GenerationError::Kind::unreachable);
      })) {
    throw GenerationBackendDown("epoch " + std::to_string(epoch) + ": generation backend unreachable" +
                                (completions.empty() || !completions.front().error
                                     ? std::string()
                                     : ": " + completions.front().error->detail));
  }

  // Validate.
  std::vector<CandidateRecord> records;
  std::vector<EvalJob> jobs;
  std::vector<std::size_t> job_record;
  const std::int64_t now = clock();
  for (std::size_t slot = 0; slot < completions.size(); ++slot) {
    const auto& c = completions[slot];
    if (!c.ok()) continue;  // transport failure: nothing to store
    const auto report = inspect_response(*c.text);
    CandidateRecord r;
    r.code = report.extracted_code.value_or(*c.text);
    r.source = LlmSource{epoch, config.prompt_mode};
    r.validity = report.valid() ? Validity::valid : Validity::invalid;
    r.eval_config = EvalConfig::canonical();
    r.created_at = now;
    if (report.valid()) {
      jobs.push_back({"epoch" + std::to_string(epoch) + "-slot" + std::to_string(slot), r.code, r.eval_config, now});
      job_record.push_back(records.size());
    }
    records.push_back(std::move(r));
  }

  // Evaluate.
  if (!jobs.empty()) {
    const auto results = evaluator.evaluate(jobs);
    for (std::size_t i = 0; i < results.size(); ++i) {
      auto& r = records[job_record[i]];
      if (const auto acc = results[i].accuracy()) {
        r.accuracy = *acc;
      } else {
        const auto* err = results[i].error();
        if (err->error_class == ErrorClass::worker_unreachable)
          throw WorkerDown("epoch " + std::to_string(epoch) + ": worker unreachable: " + err->detail);
        r.error_class = err->error_class;
      }
    }
  }

  std::vector<double> accuracies;
  for (const auto& r : records)
    if (!r.is_error() && r.accuracy) accuracies.push_back(*r.accuracy);
  auto stats = summarize_epoch(epoch, completions.size(), accuracies, config.filter_threshold);

  // Filter: insert atomically, then admit above the threshold.
  const auto outcomes = state.repo.insert_batch(records, config.curation_mode);
  std::set<RecordId> pool_ids(state.pool.begin(), state.pool.end());
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    if (outcomes[i].kind == InsertOutcome::Kind::rejected || r.is_error() || !r.accuracy) continue;
    if (*r.accuracy > config.filter_threshold) pool_ids.insert(outcomes[i].id);
  }
  state.pool.assign(pool_ids.begin(), pool_ids.end());
  ++state.next_epoch;

  // Fine-tune dataset and job spec for the expanded pool.
  const auto updated = pool_records(state, config.curation_mode);
  auto pairs = updated.empty() ? std::vector<PreferencePair>{}
                               : build_pairs(updated, config.pair_policy, derive_seed(config.pairing_seed, epoch));
  const auto augmented = augment_resize256(pairs, config.augment_fraction, derive_seed(config.pairing_seed, epoch, 1));
  pairs.insert(pairs.end(), augmented.pairs.begin(), augmented.pairs.end());

  EpochArtifacts out;
  out.dataset = out_dir / epoch_file("dataset_epoch", epoch, ".jsonl");
  out.job_spec = out_dir / epoch_file("finetune_job", epoch, ".json");
  out.n_samples = emit_dataset(pairs, out.dataset);
  const auto spec = finetune_job_spec(epoch, out.dataset.string(),
                                      (out_dir / "adapters" / ("epoch_" + std::to_string(epoch))).string(),
                                      out.n_samples);
  write_file(out.job_spec, spec.dump(2) + "\n");
  if (config.finetune_url) out.adapter_path = submit_finetune(spec, *config.finetune_url);
  if (artifacts) *artifacts = std::move(out);
  return stats;
}

std::vector<EpochStats> run_loop(LoopState& state, const LoopConfig& config, CompletionClient& client,
                                 Evaluator& evaluator, const std::filesystem::path& out_dir, const Clock& clock) {
  config.validate();
  std::vector<EpochStats> stats;
  const auto stats_path = out_dir / "stats.csv";
  write_stats_csv(stats, stats_path);
  for (std::uint32_t e = 0; e < config.n_epochs; ++e) {
    stats.push_back(run_epoch(state, config, client, evaluator, out_dir, clock));
    write_stats_csv(stats, stats_path);
  }
  return stats;
}

nlohmann::ordered_json finetune_hyperparameters() {
  nlohmann::ordered_json h;
  h["r"] = 32;
  h["lora_alpha"] = 32;
  h["lora_dropout"] = 0.05;
  h["bias"] = "none";
  h["target_modules"] = {"q_proj", "k_proj", "v_proj", "o_proj"};
  h["optimizer"] = "paged_adamw_8bit";
  h["learning_rate"] = 1.5e-4;
  h["lr_scheduler_type"] = "cosine";
  h["warmup_ratio"] = 0.05;
  h["num_train_epochs"] = 3;
  h["per_device_train_batch_size"] = 1;
  h["gradient_accumulation_steps"] = 8;
  h["effective_batch_size"] = 8;
  return h;
}

nlohmann::ordered_json finetune_job_spec(std::uint32_t epoch, const std::string& dataset_path,
                                         const std::string& output_adapter_path, std::size_t n_samples) {
  nlohmann::ordered_json spec;
  spec["epoch"] = epoch;
  spec["dataset_path"] = dataset_path;
  spec["n_samples"] = n_samples;
  spec["output_adapter_path"] = output_adapter_path;
  spec["hyperparameters"] = finetune_hyperparameters();
  return spec;
}

std::string submit_finetune(const nlohmann::ordered_json& spec, const std::string& worker_url,
                            std::chrono::milliseconds timeout) {
  httplib::Client cli(worker_url);
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(timeout).count();
  cli.set_read_timeout(secs, 0);
  cli.set_write_timeout(secs, 0);
  const auto res = cli.Post("/finetune", spec.dump(), "application/json");
  if (!res) throw std::runtime_error("finetune: " + httplib::to_string(res.error()));
  if (res->status != 200) throw std::runtime_error("finetune: HTTP " + std::to_string(res->status));
  const auto body = nlohmann::json::parse(res->body, nullptr, false);
  if (body.is_discarded() || body.value("status", "") != "completed" || !body.contains("adapter_path"))
    throw std::runtime_error("finetune: unexpected response: " + res->body);
  return body["adapter_path"].get<std::string>();
}

double trend_correlation(std::span<const std::pair<double, double>> series) {
  if (series.size() < 2) throw std::invalid_argument("trend_correlation needs at least 2 points");
  const auto n = static_cast<double>(series.size());
  double mx = 0.0, my = 0.0;
  for (const auto& [x, y] : series) {
    mx += x;
    my += y;
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (const auto& [x, y] : series) {
    sxy += (x - mx) * (y - my);
    sxx += (x - mx) * (x - mx);
    syy += (y - my) * (y - my);
  }
  if (sxx == 0.0 || syy == 0.0) throw std::invalid_argument("trend_correlation: zero variance");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

std::vector<std::pair<double, double>> epoch_mean_series(std::span<const EpochStats> stats) {
  std::vector<std::pair<double, double>> out;
  for (const auto& s : stats)
    if (s.mean_accuracy) out.emplace_back(s.epoch_index, *s.mean_accuracy);
  return out;
}

std::vector<std::pair<double, double>> candidate_series(std::span<const EpochStats> stats) {
  std::vector<std::pair<double, double>> out;
  for (const auto& s : stats)
    for (const double a : s.accuracies) out.emplace_back(s.epoch_index, a);
  return out;
}

double silverman_bandwidth(std::span<const double> samples) {
  if (samples.size() < 2) throw std::invalid_argument("silverman_bandwidth needs at least 2 samples");
  const auto n = static_cast<double>(samples.size());
  double mean = 0.0;
  for (const double x : samples) mean += x;
  mean /= n;
  double ss = 0.0;
  for (const double x : samples) ss += (x - mean) * (x - mean);
  const double sd = std::sqrt(ss / (n - 1.0));

  std::vector<double> sorted(samples.begin(), samples.end());
  std::sort(sorted.begin(), sorted.end());
  auto quantile = [&](double q) {
    const double pos = q * (n - 1.0);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
  };
  const double iqr = (quantile(0.75) - quantile(0.25)) / 1.34;

  double spread = std::min(sd, iqr);
  if (spread <= 0.0) spread = std::max(sd, iqr);
  constexpr double kFloor = 0.01;
  return std::max(kFloor, 0.9 * spread * std::pow(n, -0.2));
}

DensityCurve accuracy_density(std::span<const double> accuracies, std::optional<double> bandwidth,
                              std::size_t grid_points) {
  if (accuracies.size() < 2) throw std::invalid_argument("accuracy_density needs at least 2 samples");
  if (grid_points < 2) throw std::invalid_argument("accuracy_density needs at least 2 grid points");
  DensityCurve curve;
  curve.bandwidth = bandwidth ? *bandwidth : silverman_bandwidth(accuracies);
  if (!(curve.bandwidth > 0.0)) throw std::invalid_argument("bandwidth must be positive");

  const double h = curve.bandwidth;
  const double norm = 1.0 / (static_cast<double>(accuracies.size()) * h * std::sqrt(2.0 * std::numbers::pi));
  const double step = 1.0 / static_cast<double>(grid_points - 1);
  curve.grid.resize(grid_points);
  curve.density.resize(grid_points);
  for (std::size_t i = 0; i < grid_points; ++i) {
    const double x = static_cast<double>(i) * step;
    double sum = 0.0;
    for (const double a : accuracies) {
      const double u = (x - a) / h;
      sum += std::exp(-0.5 * u * u);
    }
    curve.grid[i] = x;
    curve.density[i] = norm * sum;
  }
  double mass = 0.0;
  for (std::size_t i = 1; i < grid_points; ++i) mass += 0.5 * step * (curve.density[i - 1] + curve.density[i]);
  curve.raw_mass = mass;
  if (mass > 0.0)
    for (auto& d : curve.density) d /= mass;
  return curve;
}

std::pair<std::vector<double>, std::vector<double>> early_late_split(std::span<const EpochStats> stats) {
  const std::size_t third = stats.size() / 3;
  std::vector<double> early, late;
  for (std::size_t i = 0; i < third; ++i) early.insert(early.end(), stats[i].accuracies.begin(), stats[i].accuracies.end());
  for (std::size_t i = stats.size() - third; i < stats.size(); ++i)
    late.insert(late.end(), stats[i].accuracies.begin(), stats[i].accuracies.end());
  return {early, late};
}

std::vector<EpochStats> stats_from_records(std::span<const CandidateRecord> records, double threshold) {
  std::map<std::uint32_t, std::vector<const CandidateRecord*>> by_epoch;
  for (const auto& r : records)
    if (const auto* src = std::get_if<LlmSource>(&r.source)) by_epoch[src->epoch_index].push_back(&r);
  std::vector<EpochStats> out;
  for (auto& [epoch, rs] : by_epoch) {
    std::sort(rs.begin(), rs.end(), [](const auto* a, const auto* b) { return a->record_id < b->record_id; });
    std::vector<double> accuracies;
    for (const auto* r : rs)
      if (!r->is_error() && r->accuracy) accuracies.push_back(*r->accuracy);
    out.push_back(summarize_epoch(epoch, rs.size(), std::move(accuracies), threshold));
  }
  return out;
}

std::string stats_csv(std::span<const EpochStats> stats) {
  std::string out = "epoch,n_generated,n_valid,n_admitted,mean_accuracy,max_accuracy\n";
  for (const auto& s : stats) {
    out += std::to_string(s.epoch_index) + "," + std::to_string(s.n_generated) + "," + std::to_string(s.n_valid) +
           "," + std::to_string(s.n_admitted) + "," + (s.mean_accuracy ? fixed6(*s.mean_accuracy) : "") + "," +
           (s.max_accuracy ? fixed6(*s.max_accuracy) : "") + "\n";
  }
  return out;
}

void write_stats_csv(std::span<const EpochStats> stats, const std::filesystem::path& path) {
  write_file(path, stats_csv(stats));
}

void write_density_csv(const DensityCurve& curve, const std::filesystem::path& path) {
  std::string out = "accuracy,density\n";
  for (std::size_t i = 0; i < curve.grid.size(); ++i) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "%.4f,%.9f\n", curve.grid[i], curve.density[i]);
    out += buf;
  }
  write_file(path, out);
}

std::vector<std::filesystem::path> write_reports(std::span<const EpochStats> stats,
                                                 const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> written;
  write_stats_csv(stats, dir / "stats.csv");
  written.push_back(dir / "stats.csv");

  auto correlation = [](const std::vector<std::pair<double, double>>& series) -> nlohmann::ordered_json {
    try {
      return trend_correlation(series);
    } catch (const std::invalid_argument&) {
      return nullptr;
    }
  };
  nlohmann::ordered_json corr;
  corr["epochs"] = stats.size();
  corr["epoch_mean_r"] = correlation(epoch_mean_series(stats));
  corr["candidate_r"] = correlation(candidate_series(stats));
  write_file(dir / "correlation.json", corr.dump(2) + "\n");
  written.push_back(dir / "correlation.json");

  const auto all = candidate_series(stats);
  std::vector<double> all_acc;
  for (const auto& p : all) all_acc.push_back(p.second);
  const auto [early, late] = early_late_split(stats);
  const std::pair<const char*, const std::vector<double>*> groups[] = {
      {"density_all.csv", &all_acc}, {"density_early.csv", &early}, {"density_late.csv", &late}};
  for (const auto& [name, samples] : groups) {
    if (samples->size() < 2) continue;
    write_density_csv(accuracy_density(*samples), dir / name);
    written.push_back(dir / name);
  }
  return written;
}

}  // namespace augforge
