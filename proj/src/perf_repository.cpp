#include "augforge/perf_repository.hpp"

#include <algorithm>
#include <fstream>
#include <mutex>
#include <sstream>

#include "augforge/candidate_codec.hpp"

namespace augforge {

namespace {

constexpr std::string_view kStoreFormat = "augforge-store";
constexpr std::string_view kExportFormat = "augforge-records";

std::string header_line(std::string_view format) {
  return nlohmann::json{{"format", format}, {"version", kStoreFormatVersion}}.dump();
}

void check_header(const std::string& line, std::string_view format, const std::string& where) {
  const auto j = nlohmann::json::parse(line, nullptr, false);
  if (j.is_discarded() || !j.is_object() || j.value("format", "") != format)
    throw MalformedFile(where + ": missing " + std::string(format) + " header");
  if (j.value("version", -1) != kStoreFormatVersion)
    throw VersionMismatch(where + ": format version " + j.value("version", nlohmann::json()).dump() +
                          ", expected " + std::to_string(kStoreFormatVersion));
}

bool matches(const CandidateRecord& r, const QueryFilter& f) {
  if (f.valid_only && (r.is_error() || !r.accuracy)) return false;
  if (f.min_accuracy && !(r.accuracy && *r.accuracy > *f.min_accuracy)) return false;
  if (f.source) {
    const bool brute = std::holds_alternative<BruteSource>(r.source);
    if ((*f.source == SourceKind::brute) != brute) return false;
  }
  if (f.arity) {
    const auto* b = std::get_if<BruteSource>(&r.source);
    if (!b || b->arity != *f.arity) return false;
  }
  if (f.epoch) {
    const auto* l = std::get_if<LlmSource>(&r.source);
    if (!l || l->epoch_index != *f.epoch) return false;
  }
  return true;
}

void check_invariants(const CandidateRecord& r) {
  if (r.accuracy && !(*r.accuracy >= 0.0 && *r.accuracy <= 1.0))
    throw std::invalid_argument("record accuracy outside [0,1]");
}

}  // namespace

std::string_view to_string(PromptMode m) { return m == PromptMode::direct ? "direct" : "cot"; }

std::string_view to_string(CurationMode m) { return m == CurationMode::curated ? "curated" : "unfiltered"; }

PromptMode prompt_mode_from_string(std::string_view s) {
  if (s == "direct") return PromptMode::direct;
  if (s == "cot") return PromptMode::cot;
  throw std::invalid_argument("unknown prompt mode: " + std::string(s));
}

CurationMode curation_mode_from_string(std::string_view s) {
  if (s == "curated") return CurationMode::curated;
  if (s == "unfiltered") return CurationMode::unfiltered;
  throw std::invalid_argument("unknown curation mode: " + std::string(s));
}

nlohmann::json record_to_json(const CandidateRecord& r) {
  nlohmann::json source;
  if (const auto* b = std::get_if<BruteSource>(&r.source))
    source = {{"kind", "brute"}, {"arity", b->arity}};
  else {
    const auto& l = std::get<LlmSource>(r.source);
    source = {{"kind", "llm"}, {"epoch", l.epoch_index}, {"prompt_mode", to_string(l.prompt_mode)}};
  }
  return {{"record_id", r.record_id},
          {"code", r.code},
          {"digest", r.digest},
          {"source", source},
          {"validity", r.validity == Validity::valid ? "valid" : "invalid"},
          {"accuracy", r.accuracy ? nlohmann::json(*r.accuracy) : nlohmann::json(nullptr)},
          {"error_class", r.error_class ? nlohmann::json(to_string(*r.error_class)) : nlohmann::json(nullptr)},
          {"eval_config", eval_config_to_wire(r.eval_config)},
          {"created_at", r.created_at}};
}

CandidateRecord record_from_json(const nlohmann::json& j) {
  CandidateRecord r;
  r.record_id = j.at("record_id").get<RecordId>();
  r.code = j.at("code").get<std::string>();
  r.digest = j.at("digest").get<std::string>();
  const auto& s = j.at("source");
  const auto kind = s.at("kind").get<std::string>();
  if (kind == "brute")
    r.source = BruteSource{s.at("arity").get<int>()};
  else if (kind == "llm")
    r.source = LlmSource{s.at("epoch").get<std::uint32_t>(), prompt_mode_from_string(s.at("prompt_mode").get<std::string>())};
  else
    throw std::invalid_argument("unknown record source " + kind);
  const auto validity = j.at("validity").get<std::string>();
  if (validity != "valid" && validity != "invalid") throw std::invalid_argument("bad validity " + validity);
  r.validity = validity == "valid" ? Validity::valid : Validity::invalid;
  if (!j.at("accuracy").is_null()) r.accuracy = j["accuracy"].get<double>();
  if (!j.at("error_class").is_null()) {
    r.error_class = error_class_from_string(j["error_class"].get<std::string>());
    if (!r.error_class) throw std::invalid_argument("unknown error_class");
  }
  r.eval_config = eval_config_from_wire(j.at("eval_config"));
  r.created_at = j.at("created_at").get<std::int64_t>();
  check_invariants(r);
  return r;
}

Repository::Repository(std::filesystem::path path) : path_(std::move(path)) {
  const auto& p = *path_;
  if (!std::filesystem::exists(p) || std::filesystem::file_size(p) == 0) {
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw StoreError("cannot create store " + p.string());
    out << header_line(kStoreFormat) << '\n';
    return;
  }

  std::ifstream in(p, std::ios::binary);
  if (!in) throw StoreError("cannot open store " + p.string());
  std::string contents((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  in.close();

  std::size_t pos = 0;
  std::size_t line_no = 0;
  std::size_t good_end = 0;
  bool needs_newline = false;
  while (pos < contents.size()) {
    auto eol = contents.find('\n', pos);
    const bool terminated = eol != std::string::npos;
    if (!terminated) eol = contents.size();
    const std::string line = contents.substr(pos, eol - pos);
    ++line_no;
    const std::string where = p.string() + ":" + std::to_string(line_no);
    if (line_no == 1) {
      check_header(line, kStoreFormat, where);
    } else {
      const auto j = nlohmann::json::parse(line, nullptr, false);
      if (j.is_discarded()) {
        if (!terminated) break;  // torn tail from an interrupted append
        throw MalformedFile(where + ": unparseable record");
      }
      CandidateRecord r;
      try {
        r = record_from_json(j);
      } catch (const std::exception& e) {
        throw MalformedFile(where + ": " + e.what());
      }
      if (r.record_id < next_id_) throw MalformedFile(where + ": record ids not increasing");
      next_id_ = r.record_id + 1;
      by_id_[r.record_id] = records_.size();
      first_by_digest_.try_emplace(r.digest, r.record_id);
      records_.push_back(std::move(r));
    }
    good_end = terminated ? eol + 1 : eol;
    needs_newline = !terminated;
    pos = eol + 1;
  }
  if (good_end < contents.size()) std::filesystem::resize_file(p, good_end);
  if (needs_newline) {
    std::ofstream out(p, std::ios::binary | std::ios::app);
    out << '\n';
  }
}

InsertOutcome Repository::plan_insert(CandidateRecord& record, CurationMode mode,
                                      std::unordered_map<std::string, RecordId>& pending_digests,
                                      RecordId& next_id) const {
  check_invariants(record);
  record.digest = code_digest(record.code);
  if (mode == CurationMode::curated) {
    if (record.is_error()) return {InsertOutcome::Kind::rejected, 0};
    if (const auto it = first_by_digest_.find(record.digest); it != first_by_digest_.end())
      return {InsertOutcome::Kind::duplicate, it->second};
    if (const auto it = pending_digests.find(record.digest); it != pending_digests.end())
      return {InsertOutcome::Kind::duplicate, it->second};
  } else if (record.is_error()) {
    record.accuracy = 0.0;
  }
  record.record_id = next_id++;
  pending_digests.try_emplace(record.digest, record.record_id);
  return {InsertOutcome::Kind::stored, record.record_id};
}

void Repository::commit(std::vector<CandidateRecord> records) {
  if (records.empty()) return;
  if (path_) {
    std::string buffer;
    for (const auto& r : records) {
      buffer += record_to_json(r).dump(-1, ' ', false, nlohmann::json::error_handler_t::replace);
      buffer += '\n';
    }
    const auto before = std::filesystem::file_size(*path_);
    std::ofstream out(*path_, std::ios::binary | std::ios::app);
    out.write(buffer.data(), static_cast<std::streamsize>(buffer.size()));
    out.flush();
    if (!out) {
      out.close();
      std::error_code ec;
      std::filesystem::resize_file(*path_, before, ec);
      throw StoreError("write to " + path_->string() + " failed");
    }
  }
  for (auto& r : records) {
    next_id_ = std::max(next_id_, r.record_id + 1);
    by_id_[r.record_id] = records_.size();
    first_by_digest_.try_emplace(r.digest, r.record_id);
    records_.push_back(std::move(r));
  }
}

InsertOutcome Repository::insert(CandidateRecord record, CurationMode mode) {
  std::vector<CandidateRecord> batch;
  batch.push_back(std::move(record));
  return insert_batch(std::move(batch), mode).front();
}

std::vector<InsertOutcome> Repository::insert_batch(std::vector<CandidateRecord> records, CurationMode mode) {
  std::unique_lock lock(mutex_);
  std::unordered_map<std::string, RecordId> pending;
  RecordId next_id = next_id_;
  std::vector<InsertOutcome> outcomes;
  std::vector<CandidateRecord> to_store;
  outcomes.reserve(records.size());
  for (auto& r : records) {
    const auto outcome = plan_insert(r, mode, pending, next_id);
    if (outcome.kind == InsertOutcome::Kind::stored) to_store.push_back(std::move(r));
    outcomes.push_back(outcome);
  }
  commit(std::move(to_store));
  return outcomes;
}

std::vector<CandidateRecord> Repository::query(const QueryFilter& filter) const {
  std::vector<CandidateRecord> out;
  {
    std::shared_lock lock(mutex_);
    for (const auto& r : records_)
      if (matches(r, filter)) out.push_back(r);
  }
  std::stable_sort(out.begin(), out.end(), [](const CandidateRecord& a, const CandidateRecord& b) {
    if (a.accuracy.has_value() != b.accuracy.has_value()) return a.accuracy.has_value();
    if (a.accuracy && *a.accuracy != *b.accuracy) return *a.accuracy > *b.accuracy;
    return a.record_id < b.record_id;
  });
  if (filter.top_k && out.size() > *filter.top_k) out.resize(*filter.top_k);
  return out;
}

std::vector<CandidateRecord> Repository::snapshot() const {
  std::shared_lock lock(mutex_);
  return records_;
}

std::optional<CandidateRecord> Repository::get(RecordId id) const {
  std::shared_lock lock(mutex_);
  const auto it = by_id_.find(id);
  if (it == by_id_.end()) return std::nullopt;
  return records_[it->second];
}

std::optional<RecordId> Repository::find_digest(std::string_view digest) const {
  std::shared_lock lock(mutex_);
  const auto it = first_by_digest_.find(std::string(digest));
  if (it == first_by_digest_.end()) return std::nullopt;
  return it->second;
}

std::size_t Repository::size() const {
  std::shared_lock lock(mutex_);
  return records_.size();
}

std::size_t Repository::export_to(const std::filesystem::path& path) const {
  const auto records = snapshot();
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw StoreError("cannot write " + path.string());
  out << header_line(kExportFormat) << '\n';
  for (const auto& r : records)
    out << record_to_json(r).dump(-1, ' ', false, nlohmann::json::error_handler_t::replace) << '\n';
  out << nlohmann::json{{"end", true}, {"count", records.size()}}.dump() << '\n';
  out.flush();
  if (!out) throw StoreError("write to " + path.string() + " failed");
  return records.size();
}

std::size_t Repository::import_from(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw StoreError("cannot open " + path.string());
  std::string contents((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  std::vector<std::string> lines;
  std::size_t pos = 0;
  while (pos < contents.size()) {
    const auto eol = contents.find('\n', pos);
    if (eol == std::string::npos) throw MalformedFile(path.string() + ": unterminated final line");
    lines.push_back(contents.substr(pos, eol - pos));
    pos = eol + 1;
  }
  if (lines.empty()) throw MalformedFile(path.string() + ": empty file");
  check_header(lines.front(), kExportFormat, path.string() + ":1");
  if (lines.size() < 2) throw MalformedFile(path.string() + ": missing trailer");

  const auto trailer = nlohmann::json::parse(lines.back(), nullptr, false);
  if (trailer.is_discarded() || !trailer.is_object() || !trailer.value("end", false))
    throw MalformedFile(path.string() + ": missing trailer");
  const auto expected = trailer.value("count", std::size_t{0});
  if (expected != lines.size() - 2)
    throw MalformedFile(path.string() + ": trailer count " + std::to_string(expected) + " but " +
                        std::to_string(lines.size() - 2) + " records");

  std::vector<CandidateRecord> records;
  records.reserve(lines.size() - 2);
  for (std::size_t i = 1; i + 1 < lines.size(); ++i) {
    const std::string where = path.string() + ":" + std::to_string(i + 1);
    const auto j = nlohmann::json::parse(lines[i], nullptr, false);
    if (j.is_discarded()) throw MalformedFile(where + ": unparseable record");
    try {
      records.push_back(record_from_json(j));
    } catch (const std::exception& e) {
      throw MalformedFile(where + ": " + e.what());
    }
    if (records.size() > 1 && records.back().record_id <= records[records.size() - 2].record_id)
      throw MalformedFile(where + ": record ids not increasing");
  }

  std::unique_lock lock(mutex_);
  if (!records.empty() && records.front().record_id < next_id_)
    throw StoreError("import: record id " + std::to_string(records.front().record_id) +
                     " collides with existing records");
  const auto n = records.size();
  commit(std::move(records));
  return n;
}

}  // namespace augforge
