#pragma once

// Transform-op catalog, brute-force pipeline enumeration, and rendering of
// pipelines to candidate source text.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

namespace augforge {

class Rng;

struct RealRange {
  double lo = 0.0;
  double hi = 0.0;
};

struct IntRange {
  std::int64_t lo = 0;
  std::int64_t hi = 0;
};

/// A fixed set of literals, emitted verbatim.
struct Choice {
  std::vector<std::string> literals;
};

struct ParamDomain;

struct TupleDomain {
  std::vector<ParamDomain> parts;
};

struct ParamDomain {
  std::variant<RealRange, IntRange, Choice, TupleDomain> kind;
};

struct ParamValue {
  std::variant<double, std::int64_t, std::string, std::vector<ParamValue>> value;

  friend bool operator==(const ParamValue&, const ParamValue&) = default;
};

enum class RenderStyle { positional, keyword };

struct ParamSpec {
  std::string name;
  ParamDomain domain;
  RenderStyle style = RenderStyle::keyword;
};

/// One catalog entry. `call_template` holds one `{name}` slot per parameter,
/// e.g. "RandomPosterize({bits}, {p})".
struct TransformOpSpec {
  std::string name;
  std::vector<ParamSpec> params;
  std::string call_template;
};

/// The constant terminal stages appended to every pipeline.
struct FixedTail {
  int resize_height = 64;
  int resize_width = 64;
  std::vector<double> normalize_mean{0.4914, 0.4822, 0.4465};
  std::vector<double> normalize_std{0.247, 0.2435, 0.2616};

  friend bool operator==(const FixedTail&, const FixedTail&) = default;
};

struct Catalog {
  std::string version;
  std::vector<TransformOpSpec> ops;
  FixedTail tail;

  const TransformOpSpec* find(std::string_view op_name) const;
};

struct BoundOp {
  std::string op_name;
  std::vector<ParamValue> values;

  friend bool operator==(const BoundOp&, const BoundOp&) = default;
};

struct PipelineSpec {
  std::vector<BoundOp> variable_ops;  // 1..3 entries
  FixedTail fixed_tail;
  std::uint64_t rng_seed = 0;

  friend bool operator==(const PipelineSpec&, const PipelineSpec&) = default;
};

inline constexpr int kMinArity = 1;
inline constexpr int kMaxArity = 3;

/// The built-in, versioned catalog. Identical on every call.
Catalog default_catalog();

/// Throws std::invalid_argument describing the first broken invariant.
void validate_catalog(const Catalog& catalog);

bool in_domain(const ParamDomain& domain, const ParamValue& value);
ParamValue sample_value(const ParamDomain& domain, Rng& rng);
std::string render_value(const ParamValue& value);

/// Ordered op combinations without repeats, in lexicographic catalog order,
/// cycling when exhausted. Pipeline i binds its parameters from an
/// independent stream derived from (seed, arity, i).
std::vector<PipelineSpec> enumerate_pipelines(const Catalog& catalog, int arity, std::size_t count,
                                              std::uint64_t seed);

/// Number of distinct ordered op combinations of the given arity.
std::uint64_t combination_count(std::size_t catalog_size, int arity);

/// Lexicographic rank -> catalog indices of one ordered combination.
std::vector<std::size_t> unrank_combination(std::size_t catalog_size, int arity, std::uint64_t rank);

/// Source text defining one function `transform` that composes the variable
/// ops followed by the fixed tail. Throws std::invalid_argument for ops
/// missing from the catalog or values outside their domains.
std::string render_pipeline(const Catalog& catalog, const PipelineSpec& pipeline);

nlohmann::json catalog_to_json(const Catalog& catalog);
Catalog catalog_from_json(const nlohmann::json& j);
Catalog load_catalog(const std::filesystem::path& path);
void save_catalog(const Catalog& catalog, const std::filesystem::path& path);

// -- campaign files ------------------------------------------------------

struct CampaignEntry {
  std::string filename;
  int arity = 1;
  std::size_t index = 0;
  std::uint64_t seed = 0;
  std::vector<std::string> ops;
  std::string source;
};

/// "bf_<arity>_<index>.txt"
std::string campaign_filename(int arity, std::size_t index);

/// Renders every pipeline of one arity into campaign entries.
std::vector<CampaignEntry> render_campaign(const Catalog& catalog, int arity, std::size_t count,
                                           std::uint64_t seed);

/// Writes one file per entry plus `manifest.csv` (file,arity,seed,ops).
void write_campaign(const std::filesystem::path& dir, const std::vector<CampaignEntry>& entries);

}  // namespace augforge
