#pragma once

// The generate -> evaluate -> filter -> fine-tune loop, its per-epoch
// statistics, and the trend and density summaries computed from them.

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "augforge/clock.hpp"
#include "augforge/eval_scheduler.hpp"
#include "augforge/llm_gateway.hpp"
#include "augforge/pair_builder.hpp"
#include "augforge/perf_repository.hpp"

namespace augforge {

struct LoopConfig {
  std::uint32_t n_epochs = 28;
  std::uint32_t candidates_per_epoch = 10;
  double filter_threshold = 0.55;  // admission requires accuracy > threshold
  PromptMode prompt_mode = PromptMode::direct;
  CurationMode curation_mode = CurationMode::curated;
  SamplingParams sampling;
  std::uint64_t reference_seed = 1;
  std::uint64_t pairing_seed = 2;
  PairPolicy pair_policy = PairPolicy::uniform_better;
  double augment_fraction = 0.5;
  /// One reference pair per epoch shared by every slot instead of a fresh
  /// pair per slot.
  bool shared_references = false;
  /// When set, each epoch's fine-tune job is posted here and awaited.
  std::optional<std::string> finetune_url;

  void validate() const;  // throws std::invalid_argument
};

nlohmann::ordered_json loop_config_to_json(const LoopConfig& c);
/// Missing keys keep their defaults.
LoopConfig loop_config_from_json(const nlohmann::json& j, LoopConfig base = {});

struct EpochStats {
  std::uint32_t epoch_index = 0;
  std::size_t n_generated = 0;
  std::size_t n_valid = 0;     // candidates that passed validation and received an accuracy
  std::size_t n_admitted = 0;  // valid with accuracy > threshold
  std::optional<double> mean_accuracy;
  std::optional<double> max_accuracy;
  std::vector<double> accuracies;  // valid accuracies in slot order

  friend bool operator==(const EpochStats&, const EpochStats&) = default;
};

/// Fills n_valid, mean and max from `accuracies`.
EpochStats summarize_epoch(std::uint32_t epoch_index, std::size_t n_generated, std::vector<double> accuracies,
                           double threshold);

class EpochAborted : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Every generation slot failed to reach the backend.
class GenerationBackendDown : public EpochAborted {
 public:
  using EpochAborted::EpochAborted;
};

/// At least one evaluation came back worker_unreachable.
class WorkerDown : public EpochAborted {
 public:
  using EpochAborted::EpochAborted;
};

struct LoopState {
  explicit LoopState(Repository& r) : repo(r) {}

  Repository& repo;
  std::vector<RecordId> pool;  // fine-tune pool, ascending ids
  std::uint32_t next_epoch = 0;
};

/// Seeds the pool with every evaluated record in the store, curated per mode.
LoopState initial_state(Repository& repo, CurationMode mode);

/// Pool records as the pair builder sees them.
std::vector<CandidateRecord> pool_records(const LoopState& state, CurationMode mode);

struct EpochArtifacts {
  std::filesystem::path dataset;
  std::filesystem::path job_spec;
  std::size_t n_samples = 0;
  std::optional<std::string> adapter_path;
};

/// One epoch. On EpochAborted neither the store nor the state has changed.
/// Dataset and job spec are written under `out_dir`.
EpochStats run_epoch(LoopState& state, const LoopConfig& config, CompletionClient& client, Evaluator& evaluator,
                     const std::filesystem::path& out_dir, const Clock& clock = system_clock_ms,
                     EpochArtifacts* artifacts = nullptr);

/// Runs config.n_epochs epochs, rewriting out_dir/stats.csv after each one so
/// an abort leaves the completed epochs on disk. Aborts propagate.
std::vector<EpochStats> run_loop(LoopState& state, const LoopConfig& config, CompletionClient& client,
                                 Evaluator& evaluator, const std::filesystem::path& out_dir,
                                 const Clock& clock = system_clock_ms);

// -- fine-tune job spec -------------------------------------------------------

nlohmann::ordered_json finetune_hyperparameters();
nlohmann::ordered_json finetune_job_spec(std::uint32_t epoch, const std::string& dataset_path,
                                         const std::string& output_adapter_path, std::size_t n_samples);
/// POST /finetune; returns the adapter path. Throws std::runtime_error.
std::string submit_finetune(const nlohmann::ordered_json& spec, const std::string& worker_url,
                            std::chrono::milliseconds timeout = std::chrono::hours(6));

// -- statistics ----------------------------------------------------------------

/// Pearson correlation. Throws std::invalid_argument for fewer than two points
/// or zero variance in either coordinate.
double trend_correlation(std::span<const std::pair<double, double>> series);

/// (epoch, mean) for every epoch with a mean.
std::vector<std::pair<double, double>> epoch_mean_series(std::span<const EpochStats> stats);
/// (epoch, accuracy) for every valid candidate.
std::vector<std::pair<double, double>> candidate_series(std::span<const EpochStats> stats);

double silverman_bandwidth(std::span<const double> samples);

struct DensityCurve {
  std::vector<double> grid;
  std::vector<double> density;
  double bandwidth = 0.0;
  double raw_mass = 0.0;  // trapezoid integral before renormalization
};

/// Gaussian KDE on a uniform grid over [0,1], scaled so the trapezoid integral
/// over the grid is 1. Throws std::invalid_argument for fewer than two samples.
DensityCurve accuracy_density(std::span<const double> accuracies, std::optional<double> bandwidth = std::nullopt,
                              std::size_t grid_points = 1001);

/// Accuracies of the first and last third of the epochs.
std::pair<std::vector<double>, std::vector<double>> early_late_split(std::span<const EpochStats> stats);

/// Per-epoch stats recomputed from persisted llm records.
std::vector<EpochStats> stats_from_records(std::span<const CandidateRecord> records, double threshold);

// -- report files --------------------------------------------------------------

std::string stats_csv(std::span<const EpochStats> stats);
void write_stats_csv(std::span<const EpochStats> stats, const std::filesystem::path& path);
void write_density_csv(const DensityCurve& curve, const std::filesystem::path& path);

/// stats.csv, correlation.json and density_{all,early,late}.csv where the
/// sample counts allow. Returns the files written.
std::vector<std::filesystem::path> write_reports(std::span<const EpochStats> stats,
                                                 const std::filesystem::path& dir);

}  // namespace augforge
