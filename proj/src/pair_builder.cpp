#include "augforge/pair_builder.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iostream>
#include <set>
#include <stdexcept>

#include "augforge/candidate_codec.hpp"
#include "augforge/llm_gateway.hpp"
#include "augforge/random.hpp"

namespace augforge {

namespace {

constexpr int kAugmentResize = 256;

bool is_ident(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }

struct ResizeCall {
  std::size_t size_begin = 0;  // span of the size argument, absolute offsets
  std::size_t size_end = 0;
  bool has_size = false;
};

std::vector<ResizeCall> find_resize_calls(std::string_view code) {
  static constexpr std::string_view kName = "Resize";
  std::vector<ResizeCall> calls;
  std::size_t pos = 0;
  while ((pos = code.find(kName, pos)) != std::string_view::npos) {
    const std::size_t start = pos;
    pos += kName.size();
    if (start > 0 && is_ident(code[start - 1])) continue;
    std::size_t p = pos;
    while (p < code.size() && (code[p] == ' ' || code[p] == '\t')) ++p;
    if (p >= code.size() || code[p] != '(') continue;

    const std::size_t open = p;
    int depth = 0;
    std::size_t close = open;
    for (; close < code.size(); ++close) {
      if (code[close] == '(' || code[close] == '[') ++depth;
      if ((code[close] == ')' || code[close] == ']') && --depth == 0) break;
    }
    ResizeCall call;
    // Walk top-level args; the size is `size=` or the first positional one.
    std::size_t arg_start = open + 1;
    depth = 0;
    std::size_t positional = 0;
    for (std::size_t i = open + 1; i <= std::min(close, code.size()); ++i) {
      const bool at_end = i == close || i == code.size();
      const char c = at_end ? ',' : code[i];
      if (c == '(' || c == '[') ++depth;
      if (c == ')' || c == ']') --depth;
      if (c != ',' || depth != 0) continue;
      std::string_view arg = code.substr(arg_start, i - arg_start);
      const auto eq = arg.find('=');
      const bool keyword = eq != std::string_view::npos && arg.find_first_of("([") > eq;
      const bool is_size = keyword ? trim(arg.substr(0, eq)) == "size" : positional++ == 0;
      if (is_size && !trim(arg).empty()) {
        call.size_begin = keyword ? arg_start + eq + 1 : arg_start;
        call.size_end = i;
        call.has_size = true;
        break;
      }
      arg_start = i + 1;
    }
    calls.push_back(call);
    pos = std::min(close, code.size());
  }
  return calls;
}

// Integer literals in code[begin, end) as (offset, length, value).
std::vector<std::tuple<std::size_t, std::size_t, int>> integers_in(std::string_view code, std::size_t begin,
                                                                    std::size_t end) {
  std::vector<std::tuple<std::size_t, std::size_t, int>> out;
  std::size_t i = begin;
  while (i < end) {
    if (std::isdigit(static_cast<unsigned char>(code[i])) && (i == 0 || !is_ident(code[i - 1]))) {
      std::size_t j = i;
      while (j < end && std::isdigit(static_cast<unsigned char>(code[j]))) ++j;
      if (j < end && code[j] == '.') {  // not an integer; skip the whole literal
        while (j < end && (std::isdigit(static_cast<unsigned char>(code[j])) || code[j] == '.')) ++j;
      } else {
        out.emplace_back(i, j - i, std::atoi(std::string(code.substr(i, j - i)).c_str()));
      }
      i = j;
    } else {
      ++i;
    }
  }
  return out;
}

}  // namespace

std::string_view to_string(PairPolicy p) {
  return p == PairPolicy::uniform_better ? "uniform_better" : "nearest_better";
}

PairPolicy pair_policy_from_string(std::string_view s) {
  if (s == "uniform_better") return PairPolicy::uniform_better;
  if (s == "nearest_better") return PairPolicy::nearest_better;
  throw std::invalid_argument("unknown pair policy: " + std::string(s));
}

std::string_view to_string(PairProvenance p) {
  return p == PairProvenance::original ? "original" : "resize256_augmented";
}

std::vector<PreferencePair> build_pairs(std::span<const CandidateRecord> records, PairPolicy policy,
                                        std::uint64_t seed) {
  if (records.empty()) throw std::invalid_argument("build_pairs: empty record set");
  for (const auto& r : records)
    if (!r.accuracy) throw std::invalid_argument("build_pairs: record " + std::to_string(r.record_id) + " has no accuracy");

  // Ascending by (accuracy, id): the strictly better set of any record is a suffix.
  std::vector<const CandidateRecord*> by_acc;
  for (const auto& r : records) by_acc.push_back(&r);
  std::sort(by_acc.begin(), by_acc.end(), [](const auto* a, const auto* b) {
    if (*a->accuracy != *b->accuracy) return *a->accuracy < *b->accuracy;
    return a->record_id < b->record_id;
  });
  std::vector<const CandidateRecord*> by_id = by_acc;
  std::sort(by_id.begin(), by_id.end(), [](const auto* a, const auto* b) { return a->record_id < b->record_id; });

  Rng rng(seed);
  std::vector<PreferencePair> pairs;
  for (const auto* a : by_id) {
    const auto first_better = std::upper_bound(by_acc.begin(), by_acc.end(), *a->accuracy,
                                               [](double acc, const auto* r) { return acc < *r->accuracy; });
    const auto n_better = static_cast<std::size_t>(by_acc.end() - first_better);
    if (n_better == 0) continue;
    const auto offset = policy == PairPolicy::uniform_better ? rng.uniform_index(n_better) : 0;
    const auto* b = *(first_better + static_cast<std::ptrdiff_t>(offset));
    pairs.push_back({a->record_id, b->record_id, *a->accuracy, *b->accuracy, PairProvenance::original, a->code,
                     b->code});
  }
  return pairs;
}

std::optional<std::string> rewrite_resize(std::string_view code, int size) {
  const auto calls = find_resize_calls(code);
  std::string out;
  std::size_t copied = 0;
  const std::string replacement = std::to_string(size);
  for (const auto& call : calls) {
    if (!call.has_size) return std::nullopt;
    const auto ints = integers_in(code, call.size_begin, call.size_end);
    if (ints.empty()) return std::nullopt;
    for (const auto& [offset, length, value] : ints) {
      out.append(code.substr(copied, offset - copied));
      out += replacement;
      copied = offset + length;
    }
  }
  out.append(code.substr(copied));
  return out;
}

std::vector<int> resize_sizes(std::string_view code) {
  std::vector<int> out;
  for (const auto& call : find_resize_calls(code)) {
    if (!call.has_size) continue;
    for (const auto& [offset, length, value] : integers_in(code, call.size_begin, call.size_end))
      out.push_back(value);
  }
  return out;
}

AugmentResult augment_resize256(std::span<const PreferencePair> pairs, double fraction, std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw std::invalid_argument("augment fraction must lie in [0,1]");
  AugmentResult result;
  result.selected = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(pairs.size()) + 1e-9));
  result.selected = std::min(result.selected, pairs.size());

  Rng rng(seed);
  auto picks = rng.sample_without_replacement(pairs.size(), result.selected);
  std::sort(picks.begin(), picks.end());
  for (const auto i : picks) {
    PreferencePair p = pairs[i];
    const auto rewritten = rewrite_resize(p.addon_code, kAugmentResize);
    if (!rewritten || !validate_candidate(*rewritten).valid()) {
      std::clog << "augment: skipped pair (" << p.base_id << ", " << p.addon_id
                << "): Resize rewrite did not produce a valid candidate\n";
      result.skipped.push_back(p.addon_id);
      continue;
    }
    p.addon_code = *rewritten;
    p.provenance = PairProvenance::resize256_augmented;
    result.pairs.push_back(std::move(p));
  }
  return result;
}

FinetuneSample make_sample(const PreferencePair& pair) {
  const auto& t = prompt_template(TemplateId::finetune_direct);
  const Bindings bindings = {
      {std::string(kAccuracy), format_accuracy(pair.base_accuracy)},
      {std::string(kTransformCode), pair.base_code},
      {std::string(kAddonTransformCode), pair.addon_code},
  };
  return {render_lines(t.segments, bindings), render_lines(t.output_segments, bindings)};
}

std::size_t emit_dataset(std::span<const PreferencePair> pairs, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write dataset " + path.string());
  for (const auto& pair : pairs) {
    const auto sample = make_sample(pair);
    nlohmann::ordered_json j;
    j["prompt"] = sample.prompt;
    j["output"] = sample.output;
    out << j.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace) << '\n';
  }
  out.flush();
  if (!out) throw std::runtime_error("write to " + path.string() + " failed");
  return pairs.size();
}

std::vector<FinetuneSample> read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open dataset " + path.string());
  std::vector<FinetuneSample> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.contains("prompt") || !j.contains("output"))
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": malformed sample");
    out.push_back({j["prompt"].get<std::vector<std::string>>(), j["output"].get<std::vector<std::string>>()});
  }
  return out;
}

std::vector<CandidateRecord> curate(std::span<const CandidateRecord> records, CurationMode mode) {
  std::vector<CandidateRecord> sorted(records.begin(), records.end());
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const auto& a, const auto& b) { return a.record_id < b.record_id; });
  std::vector<CandidateRecord> out;
  if (mode == CurationMode::unfiltered) {
    for (auto& r : sorted) {
      if (r.is_error()) r.accuracy = 0.0;
      out.push_back(std::move(r));
    }
    return out;
  }
  std::set<std::string> seen;
  for (auto& r : sorted) {
    if (r.is_error() || !r.accuracy) continue;
    const auto digest = r.digest.empty() ? code_digest(r.code) : r.digest;
    if (!seen.insert(digest).second) continue;
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace augforge
