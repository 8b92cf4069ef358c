#pragma once

// Extraction of transform code from model output, structural validation, and
// canonicalization for deduplication.

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace augforge {

enum class Violation {
  missing_tr_tag,
  multiple_tr_tags,
  markdown_fence,
  forbidden_tag,
  missing_transform_function,
  empty_body,
};

std::string_view to_string(Violation v);
std::optional<Violation> violation_from_string(std::string_view s);

struct ValidityReport {
  std::vector<Violation> violations;  // sorted, unique
  std::optional<std::string> extracted_code;

  bool valid() const { return violations.empty(); }
  bool has(Violation v) const;
};

struct CanonicalForm {
  std::string canonical_text;
  std::string digest;  // 64 lowercase hex chars, SHA-256 of canonical_text
};

/// Call names whose numeric arguments are masked by canonicalize().
inline constexpr std::string_view kSeedCallNames[] = {
    "seed", "manual_seed", "manual_seed_all", "set_seed", "set_random_seed",
};

/// Exactly one `<tr>` and one `</tr>`, in that order, yields the enclosed
/// text (trimmed). Tags are case-sensitive and do not nest.
ValidityReport extract_transform_block(std::string_view raw);

/// Structural check only: a `def transform(` must exist, and the code may not
/// contain markdown fences or any of <path>, <g>, <text>, <svg>, <html>.
ValidityReport validate_candidate(std::string_view code);

/// extract_transform_block() followed by validate_candidate() on the
/// extracted code; violations of both stages are merged.
ValidityReport inspect_response(std::string_view raw);

/// Strips comments and blank lines, collapses whitespace runs outside string
/// literals, and masks numeric arguments of seed-setting calls.
/// Throws std::invalid_argument on empty input.
CanonicalForm canonicalize(std::string_view code);

/// SHA-256 of arbitrary bytes as lowercase hex.
std::string sha256_hex(std::string_view bytes);

/// Digest used to key repository records; empty code hashes the empty string.
std::string code_digest(std::string_view code);

std::string_view trim(std::string_view s);

}  // namespace augforge
