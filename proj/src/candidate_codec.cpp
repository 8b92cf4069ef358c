#include "augforge/candidate_codec.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <stdexcept>

#include <openssl/evp.h>

namespace augforge {

namespace {

constexpr std::string_view kOpenTag = "<tr>";
constexpr std::string_view kCloseTag = "</tr>";
constexpr std::string_view kFence = "```";
constexpr std::string_view kSeedMask = "<seed>";
constexpr std::array<std::string_view, 5> kForbiddenTags = {"path", "g", "text", "svg", "html"};

bool is_ident(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }
bool is_space(char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\f' || c == '\v'; }

std::size_t count_occurrences(std::string_view hay, std::string_view needle) {
  std::size_t n = 0;
  for (auto pos = hay.find(needle); pos != std::string_view::npos; pos = hay.find(needle, pos + needle.size()))
    ++n;
  return n;
}

void add(ValidityReport& r, Violation v) {
  if (!r.has(v)) r.violations.push_back(v);
  std::sort(r.violations.begin(), r.violations.end());
}

bool has_forbidden_tag(std::string_view code) {
  for (std::size_t i = 0; i < code.size(); ++i) {
    if (code[i] != '<') continue;
    std::size_t j = i + 1;
    if (j < code.size() && code[j] == '/') ++j;
    for (const auto tag : kForbiddenTags) {
      if (code.size() - j < tag.size()) continue;
      bool match = true;
      for (std::size_t k = 0; k < tag.size() && match; ++k)
        match = std::tolower(static_cast<unsigned char>(code[j + k])) == tag[k];
      if (!match) continue;
      const std::size_t after = j + tag.size();
      if (after == code.size()) return true;
      const char c = code[after];
      if (c == '>' || c == '/' || is_space(c) || c == '\n') return true;
    }
  }
  return false;
}

// Position just past the ':' ... line of the first `def transform(`, or npos.
std::size_t find_transform_def(std::string_view code) {
  std::size_t line_start = 0;
  while (line_start < code.size()) {
    auto line_end = code.find('\n', line_start);
    if (line_end == std::string_view::npos) line_end = code.size();
    std::string_view line = code.substr(line_start, line_end - line_start);
    std::size_t i = 0;
    while (i < line.size() && is_space(line[i])) ++i;
    line.remove_prefix(i);
    if (line.substr(0, 3) == "def" && line.size() > 3 && is_space(line[3])) {
      std::size_t k = 3;
      while (k < line.size() && is_space(line[k])) ++k;
      if (line.substr(k, 9) == "transform") {
        k += 9;
        while (k < line.size() && is_space(line[k])) ++k;
        if (k < line.size() && line[k] == '(') {
          const auto colon = line.find(':', k);
          return colon == std::string_view::npos ? line_end : line_start + i + colon + 1;
        }
      }
    }
    line_start = line_end + 1;
  }
  return std::string_view::npos;
}

// Copies a string literal starting at code[i] into out; returns index past it.
std::size_t copy_string_literal(std::string_view code, std::size_t i, std::string& out) {
  const char q = code[i];
  const bool triple = code.substr(i, 3) == std::string(3, q);
  const std::size_t open_len = triple ? 3 : 1;
  out.append(code.substr(i, open_len));
  std::size_t j = i + open_len;
  while (j < code.size()) {
    const char c = code[j];
    if (c == '\\' && j + 1 < code.size()) {
      out.append(code.substr(j, 2));
      j += 2;
      continue;
    }
    if (triple) {
      if (code.substr(j, 3) == std::string(3, q)) {
        out.append(code.substr(j, 3));
        return j + 3;
      }
    } else {
      if (c == q) {
        out.push_back(c);
        return j + 1;
      }
      if (c == '\n') return j;  // unterminated single-line literal
    }
    out.push_back(c);
    ++j;
  }
  return j;
}

std::string strip_and_collapse(std::string_view code) {
  std::string out;
  std::string line;
  std::size_t indent = 0;
  bool at_start = true;
  bool pending_space = false;

  auto flush_line = [&] {
    if (!line.empty()) {
      out += line;
      out += '\n';
    }
    line.clear();
    indent = 0;
    at_start = true;
    pending_space = false;
  };
  auto begin_token = [&] {
    if (at_start) {
      line.assign(indent, ' ');
      at_start = false;
    } else if (pending_space) {
      line += ' ';
    }
    pending_space = false;
  };

  std::size_t i = 0;
  while (i < code.size()) {
    const char c = code[i];
    if (c == '\n') {
      flush_line();
      ++i;
    } else if (is_space(c)) {
      if (at_start)
        indent += c == '\t' ? 4 : (c == ' ' ? 1 : 0);
      else
        pending_space = true;
      ++i;
    } else if (c == '#') {
      while (i < code.size() && code[i] != '\n') ++i;
    } else if (c == '"' || c == '\'') {
      begin_token();
      i = copy_string_literal(code, i, line);
    } else {
      begin_token();
      line += c;
      ++i;
    }
  }
  flush_line();
  return out;
}

bool is_seed_call_name(std::string_view name) {
  return std::find(std::begin(kSeedCallNames), std::end(kSeedCallNames), name) != std::end(kSeedCallNames);
}

std::size_t numeric_literal_end(std::string_view s, std::size_t i) {
  std::size_t j = i;
  if (j < s.size() && (s[j] == '-' || s[j] == '+')) ++j;
  const std::size_t digits_start = j;
  while (j < s.size() && (std::isalnum(static_cast<unsigned char>(s[j])) || s[j] == '_' || s[j] == '.')) {
    if ((s[j] == 'e' || s[j] == 'E') && j + 1 < s.size() && (s[j + 1] == '-' || s[j + 1] == '+')) ++j;
    ++j;
  }
  if (j == digits_start || (!std::isdigit(static_cast<unsigned char>(s[digits_start])) &&
                              !(s[digits_start] == '.' && j > digits_start + 1)))
    return i;
  return j;
}

// Replaces numeric literals inside the argument list of seed-setting calls.
std::string mask_seeds(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) {
    const char c = text[i];
    if (c == '"' || c == '\'') {
      i = copy_string_literal(text, i, out);
      continue;
    }
    if (!is_ident(c) || (i > 0 && is_ident(text[i - 1]))) {
      out += c;
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < text.size() && is_ident(text[j])) ++j;
    const std::string_view name = text.substr(i, j - i);
    out.append(name);
    i = j;
    std::size_t k = j;
    while (k < text.size() && text[k] == ' ') ++k;
    if (!is_seed_call_name(name) || k >= text.size() || text[k] != '(') continue;

    // Inside the call: mask numeric tokens until the matching ')'.
    out.append(text.substr(i, k - i + 1));
    i = k + 1;
    int depth = 1;
    while (i < text.size() && depth > 0) {
      const char d = text[i];
      if (d == '"' || d == '\'') {
        i = copy_string_literal(text, i, out);
        continue;
      }
      if (d == '(') ++depth;
      if (d == ')') --depth;
      const bool token_start = i == 0 || !is_ident(text[i - 1]);
      const bool signed_start = (d == '-' || d == '+') && i + 1 < text.size() &&
                                std::isdigit(static_cast<unsigned char>(text[i + 1]));
      if (token_start && (std::isdigit(static_cast<unsigned char>(d)) || signed_start)) {
        const auto end = numeric_literal_end(text, i);
        if (end > i) {
          out.append(kSeedMask);
          i = end;
          continue;
        }
      }
      if (is_ident(d) && token_start) {
        // Copy identifiers whole so digits inside names stay untouched.
        std::size_t e = i;
        while (e < text.size() && is_ident(text[e])) ++e;
        out.append(text.substr(i, e - i));
        i = e;
        continue;
      }
      out += d;
      ++i;
    }
  }
  return out;
}

}  // namespace

std::string_view to_string(Violation v) {
  switch (v) {
    case Violation::missing_tr_tag: return "missing_tr_tag";
    case Violation::multiple_tr_tags: return "multiple_tr_tags";
    case Violation::markdown_fence: return "markdown_fence";
    case Violation::forbidden_tag: return "forbidden_tag";
    case Violation::missing_transform_function: return "missing_transform_function";
    case Violation::empty_body: return "empty_body";
  }
  return "unknown";
}

std::optional<Violation> violation_from_string(std::string_view s) {
  for (auto v : {Violation::missing_tr_tag, Violation::multiple_tr_tags, Violation::markdown_fence,
                 Violation::forbidden_tag, Violation::missing_transform_function, Violation::empty_body})
    if (to_string(v) == s) return v;
  return std::nullopt;
}

bool ValidityReport::has(Violation v) const {
  return std::find(violations.begin(), violations.end(), v) != violations.end();
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (is_space(s.front()) || s.front() == '\n')) s.remove_prefix(1);
  while (!s.empty() && (is_space(s.back()) || s.back() == '\n')) s.remove_suffix(1);
  return s;
}

ValidityReport extract_transform_block(std::string_view raw) {
  ValidityReport r;
  const auto opens = count_occurrences(raw, kOpenTag);
  const auto closes = count_occurrences(raw, kCloseTag);
  if (raw.find(kFence) != std::string_view::npos) add(r, Violation::markdown_fence);
  if (opens > 1 || closes > 1) {
    add(r, Violation::multiple_tr_tags);
  } else if (opens == 1 && closes == 1 && raw.find(kOpenTag) < raw.find(kCloseTag)) {
    const auto begin = raw.find(kOpenTag) + kOpenTag.size();
    r.extracted_code = std::string(trim(raw.substr(begin, raw.find(kCloseTag) - begin)));
  } else {
    add(r, Violation::missing_tr_tag);
  }
  return r;
}

ValidityReport validate_candidate(std::string_view code) {
  ValidityReport r;
  r.extracted_code = std::string(code);
  if (trim(code).empty()) {
    add(r, Violation::empty_body);
    add(r, Violation::missing_transform_function);
    return r;
  }
  if (code.find(kFence) != std::string_view::npos) add(r, Violation::markdown_fence);
  if (has_forbidden_tag(code)) add(r, Violation::forbidden_tag);
  const auto body = find_transform_def(code);
  if (body == std::string_view::npos)
    add(r, Violation::missing_transform_function);
  else if (trim(code.substr(std::min(body, code.size()))).empty())
    add(r, Violation::empty_body);
  return r;
}

ValidityReport inspect_response(std::string_view raw) {
  ValidityReport r = extract_transform_block(raw);
  if (!r.extracted_code) return r;
  const ValidityReport inner = validate_candidate(*r.extracted_code);
  for (const auto v : inner.violations) add(r, v);
  return r;
}

CanonicalForm canonicalize(std::string_view code) {
  if (code.empty()) throw std::invalid_argument("canonicalize: empty input");
  CanonicalForm f;
  f.canonical_text = mask_seeds(strip_and_collapse(code));
  f.digest = sha256_hex(f.canonical_text);
  return f;
}

std::string sha256_hex(std::string_view bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1)
    throw std::runtime_error("SHA-256 failed");
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 0xF];
  }
  return out;
}

std::string code_digest(std::string_view code) {
  return code.empty() ? sha256_hex("") : canonicalize(code).digest;
}

}  // namespace augforge
