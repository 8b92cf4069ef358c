#pragma once

// Append-only store of performance-annotated candidates.
//
// On disk the store is a header line followed by one JSON record per line.
// The in-memory index (record id -> position, digest -> first record id) is
// rebuilt when the file is opened. Exports use the same record encoding with
// a distinct header and an end-of-file trailer carrying the record count, so
// truncation anywhere is detectable.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <shared_mutex>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <variant>
#include <vector>

#include <json.hpp>

#include "augforge/eval_scheduler.hpp"

namespace augforge {

using RecordId = std::uint64_t;

enum class PromptMode { direct, cot };
enum class CurationMode { curated, unfiltered };
enum class Validity { valid, invalid };

std::string_view to_string(PromptMode m);
std::string_view to_string(CurationMode m);
PromptMode prompt_mode_from_string(std::string_view s);
CurationMode curation_mode_from_string(std::string_view s);

struct BruteSource {
  int arity = 1;
  friend bool operator==(const BruteSource&, const BruteSource&) = default;
};

struct LlmSource {
  std::uint32_t epoch_index = 0;
  PromptMode prompt_mode = PromptMode::direct;
  friend bool operator==(const LlmSource&, const LlmSource&) = default;
};

using RecordSource = std::variant<BruteSource, LlmSource>;

struct CandidateRecord {
  RecordId record_id = 0;  // assigned by the store
  std::string code;
  std::string digest;  // assigned by the store from `code`
  RecordSource source = BruteSource{};
  Validity validity = Validity::valid;
  std::optional<double> accuracy;  // null until evaluated
  std::optional<ErrorClass> error_class;
  EvalConfig eval_config;
  std::int64_t created_at = 0;  // unix ms

  /// Structurally invalid or failed evaluation.
  bool is_error() const { return validity == Validity::invalid || error_class.has_value(); }
  bool evaluated() const { return accuracy.has_value() || error_class.has_value(); }

  friend bool operator==(const CandidateRecord&, const CandidateRecord&) = default;
};

nlohmann::json record_to_json(const CandidateRecord& r);
CandidateRecord record_from_json(const nlohmann::json& j);

struct InsertOutcome {
  enum class Kind { stored, duplicate, rejected };
  Kind kind = Kind::stored;
  RecordId id = 0;  // new id, the existing duplicate's id, or 0 when rejected

  friend bool operator==(const InsertOutcome&, const InsertOutcome&) = default;
};

enum class SourceKind { brute, llm };

struct QueryFilter {
  std::optional<double> min_accuracy;  // strict: accuracy > min_accuracy
  std::optional<SourceKind> source;
  std::optional<int> arity;            // brute records only
  std::optional<std::uint32_t> epoch;  // llm records only
  std::optional<std::size_t> top_k;
  bool valid_only = false;
};

class StoreError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class MalformedFile : public StoreError {
 public:
  using StoreError::StoreError;
};

class VersionMismatch : public StoreError {
 public:
  using StoreError::StoreError;
};

inline constexpr int kStoreFormatVersion = 1;

class Repository {
 public:
  /// In-memory store.
  Repository() = default;

  /// Opens or creates a file-backed store. A torn final line left by a crash
  /// is cut off; any other malformed line throws MalformedFile.
  explicit Repository(std::filesystem::path path);

  Repository(const Repository&) = delete;
  Repository& operator=(const Repository&) = delete;

  /// Curated: a known digest yields `duplicate` and error records are
  /// `rejected`. Unfiltered: everything is stored, error records with
  /// accuracy 0.0.
  InsertOutcome insert(CandidateRecord record, CurationMode mode);

  /// All-or-nothing: either every stored record of the batch becomes visible
  /// (and is persisted with one write), or none does and StoreError is thrown.
  /// Duplicates within the batch are resolved in order.
  std::vector<InsertOutcome> insert_batch(std::vector<CandidateRecord> records, CurationMode mode);

  /// Matching records sorted by accuracy descending (nulls last), ties by
  /// record id ascending; top_k truncates after sorting.
  std::vector<CandidateRecord> query(const QueryFilter& filter) const;

  /// Every record in id order.
  std::vector<CandidateRecord> snapshot() const;
  std::optional<CandidateRecord> get(RecordId id) const;
  std::optional<RecordId> find_digest(std::string_view digest) const;
  std::size_t size() const;

  /// Writes a self-delimiting export file; returns the record count.
  std::size_t export_to(const std::filesystem::path& path) const;

  /// Appends every record of an export file, keeping record ids. The file is
  /// fully parsed before anything is applied; on error the store is untouched.
  /// Imported ids must exceed every id already present.
  std::size_t import_from(const std::filesystem::path& path);

  const std::optional<std::filesystem::path>& path() const { return path_; }

 private:
  InsertOutcome plan_insert(CandidateRecord& record, CurationMode mode,
                            std::unordered_map<std::string, RecordId>& pending_digests, RecordId& next_id) const;
  void commit(std::vector<CandidateRecord> records);

  mutable std::shared_mutex mutex_;
  std::vector<CandidateRecord> records_;
  std::unordered_map<RecordId, std::size_t> by_id_;
  std::unordered_map<std::string, RecordId> first_by_digest_;
  RecordId next_id_ = 1;
  std::optional<std::filesystem::path> path_;
};

}  // namespace augforge
