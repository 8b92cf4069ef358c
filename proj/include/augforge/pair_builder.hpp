#pragma once

// "B better than A" preference pairs and the instruction-tuning dataset built
// from them.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "augforge/perf_repository.hpp"

namespace augforge {

enum class PairPolicy { uniform_better, nearest_better };
enum class PairProvenance { original, resize256_augmented };

std::string_view to_string(PairPolicy p);
PairPolicy pair_policy_from_string(std::string_view s);
std::string_view to_string(PairProvenance p);

struct PreferencePair {
  RecordId base_id = 0;
  RecordId addon_id = 0;
  double base_accuracy = 0.0;
  double addon_accuracy = 0.0;  // strictly greater than base_accuracy
  PairProvenance provenance = PairProvenance::original;
  std::string base_code;
  std::string addon_code;

  friend bool operator==(const PreferencePair&, const PreferencePair&) = default;
};

struct FinetuneSample {
  std::vector<std::string> prompt;
  std::vector<std::string> output;

  friend bool operator==(const FinetuneSample&, const FinetuneSample&) = default;
};

/// One pair per record that has at least one strictly better record; records
/// at the maximum accuracy yield none. Records are visited in id order.
/// Throws std::invalid_argument for an empty set or a record without accuracy.
std::vector<PreferencePair> build_pairs(std::span<const CandidateRecord> records, PairPolicy policy,
                                        std::uint64_t seed);

struct AugmentResult {
  std::vector<PreferencePair> pairs;  // augmented copies only
  std::size_t selected = 0;           // floor(fraction * |input|)
  std::vector<RecordId> skipped;      // addon ids whose rewrite failed validation
};

/// Picks floor(fraction * |pairs|) pairs without replacement and emits copies
/// whose B code has every Resize size rewritten to 256.
AugmentResult augment_resize256(std::span<const PreferencePair> pairs, double fraction, std::uint64_t seed);

/// Rewrites every integer inside the size argument of each Resize call.
/// nullopt when a Resize call has no literal size to rewrite.
std::optional<std::string> rewrite_resize(std::string_view code, int size);

/// All integers found in Resize size arguments, in order of appearance.
std::vector<int> resize_sizes(std::string_view code);

FinetuneSample make_sample(const PreferencePair& pair);

/// One JSON object per line: {"prompt": [...], "output": [...]}.
std::size_t emit_dataset(std::span<const PreferencePair> pairs, const std::filesystem::path& path);
std::vector<FinetuneSample> read_dataset(const std::filesystem::path& path);

/// Curated drops error records, unevaluated records, and digest duplicates
/// (keeping the lowest record id). Unfiltered keeps everything and scores
/// error records 0.0. Output is in record id order.
std::vector<CandidateRecord> curate(std::span<const CandidateRecord> records, CurationMode mode);

}  // namespace augforge
