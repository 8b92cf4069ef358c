#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "augforge/candidate_codec.hpp"
#include "augforge/random.hpp"
#include "augforge/transform_space.hpp"

using namespace augforge;

namespace {

// Independent domain check: walks the domain and value by hand.
bool value_fits(const ParamDomain& d, const ParamValue& v) {
  if (const auto* r = std::get_if<RealRange>(&d.kind)) {
    const auto* x = std::get_if<double>(&v.value);
    return x && r->lo <= *x && *x <= r->hi;
  }
  if (const auto* r = std::get_if<IntRange>(&d.kind)) {
    const auto* x = std::get_if<std::int64_t>(&v.value);
    return x && r->lo <= *x && *x <= r->hi;
  }
  if (const auto* c = std::get_if<Choice>(&d.kind)) {
    const auto* x = std::get_if<std::string>(&v.value);
    return x && std::find(c->literals.begin(), c->literals.end(), *x) != c->literals.end();
  }
  const auto& t = std::get<TupleDomain>(d.kind);
  const auto* xs = std::get_if<std::vector<ParamValue>>(&v.value);
  if (!xs || xs->size() != t.parts.size()) return false;
  for (std::size_t i = 0; i < xs->size(); ++i)
    if (!value_fits(t.parts[i], (*xs)[i])) return false;
  return true;
}

bool intervals_ordered(const ParamDomain& d) {
  if (const auto* r = std::get_if<RealRange>(&d.kind)) return r->lo <= r->hi;
  if (const auto* r = std::get_if<IntRange>(&d.kind)) return r->lo <= r->hi;
  if (const auto* t = std::get_if<TupleDomain>(&d.kind))
    return std::all_of(t->parts.begin(), t->parts.end(), intervals_ordered);
  return true;
}

std::vector<std::string> op_names(const PipelineSpec& p) {
  std::vector<std::string> out;
  for (const auto& op : p.variable_ops) out.push_back(op.op_name);
  return out;
}

}  // namespace

TEST_CASE("default catalog contains the ops the paper names") {
  const auto c = default_catalog();
  for (const char* name : {"RandomPosterize", "Resize", "RandomResizedCrop", "ColorJitter", "RandomHorizontalFlip",
                           "GaussianBlur"}) {
    CAPTURE(name);
    CHECK(c.find(name) != nullptr);
  }
  CHECK(c.find("NoSuchOp") == nullptr);
  CHECK_NOTHROW(validate_catalog(c));
}

TEST_CASE("default catalog is deterministic") {
  CHECK(catalog_to_json(default_catalog()) == catalog_to_json(default_catalog()));
}

TEST_CASE("every interval domain has lo <= hi") {
  for (const auto& op : default_catalog().ops)
    for (const auto& p : op.params) {
      CAPTURE(op.name);
      CHECK(intervals_ordered(p.domain));
    }
}

TEST_CASE("fixed tail constants") {
  const FixedTail t = default_catalog().tail;
  CHECK(t.resize_height == 64);
  CHECK(t.resize_width == 64);
  CHECK(t.normalize_mean.size() == 3);
  CHECK(t.normalize_std.size() == 3);
}

TEST_CASE("validate_catalog rejects broken catalogs") {
  auto c = default_catalog();
  SUBCASE("inverted range") {
    c.ops[0].params[0].domain.kind = RealRange{0.9, 0.1};
    CHECK_THROWS_AS(validate_catalog(c), std::invalid_argument);
  }
  SUBCASE("duplicate op") {
    c.ops.push_back(c.ops[0]);
    CHECK_THROWS_AS(validate_catalog(c), std::invalid_argument);
  }
  SUBCASE("template slot missing") {
    c.ops[0].call_template = "RandomHorizontalFlip()";
    CHECK_THROWS_AS(validate_catalog(c), std::invalid_argument);
  }
  SUBCASE("empty") {
    c.ops.clear();
    CHECK_THROWS_AS(validate_catalog(c), std::invalid_argument);
  }
}

TEST_CASE("catalog JSON round trip") {
  const auto c = default_catalog();
  const auto back = catalog_from_json(catalog_to_json(c));
  CHECK(catalog_to_json(back) == catalog_to_json(c));
  CHECK(back.version == c.version);
  CHECK(back.tail == c.tail);

  const auto path = std::filesystem::temp_directory_path() / "augforge_catalog_rt.json";
  save_catalog(c, path);
  CHECK(catalog_to_json(load_catalog(path)) == catalog_to_json(c));
  std::filesystem::remove(path);
}

TEST_CASE("enumerate_pipelines produces the requested count") {
  const auto c = default_catalog();
  for (int arity = 1; arity <= 3; ++arity) {
    const auto ps = enumerate_pipelines(c, arity, 2000, 7);
    CHECK(ps.size() == 2000);
    for (const auto& p : ps) REQUIRE(p.variable_ops.size() == static_cast<std::size_t>(arity));
  }
  CHECK_THROWS_AS(enumerate_pipelines(c, 0, 10, 1), std::invalid_argument);
  CHECK_THROWS_AS(enumerate_pipelines(c, 4, 10, 1), std::invalid_argument);
  CHECK_THROWS_AS(enumerate_pipelines(c, 1, 0, 1), std::invalid_argument);
}

TEST_CASE("single-op catalog yields that op with one binding") {
  Catalog c;
  c.version = "test";
  c.ops = {default_catalog().ops[0]};
  const auto ps = enumerate_pipelines(c, 1, 1, 5);
  REQUIRE(ps.size() == 1);
  REQUIRE(ps[0].variable_ops.size() == 1);
  CHECK(ps[0].variable_ops[0].op_name == c.ops[0].name);
  CHECK(ps[0].variable_ops[0].values.size() == c.ops[0].params.size());
  CHECK_THROWS_AS(enumerate_pipelines(c, 2, 1, 5), std::invalid_argument);
}

TEST_CASE("first M*(M-1) arity-2 pipelines are every ordered pair once, in order") {
  const auto c = default_catalog();
  const std::size_t m = c.ops.size();
  std::vector<std::vector<std::string>> expected;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j)
      if (i != j) expected.push_back({c.ops[i].name, c.ops[j].name});
  REQUIRE(expected.size() == m * (m - 1));

  const auto ps = enumerate_pipelines(c, 2, expected.size() + 5, 3);
  std::vector<std::vector<std::string>> got;
  for (std::size_t k = 0; k < expected.size(); ++k) got.push_back(op_names(ps[k]));
  CHECK(got == expected);
  CHECK(std::set(got.begin(), got.end()).size() == expected.size());
  // Cycling restarts at the first combination with fresh parameters.
  CHECK(op_names(ps[expected.size()]) == expected[0]);
  CHECK(ps[expected.size()].variable_ops != ps[0].variable_ops);
}

TEST_CASE("arity-3 enumeration never repeats an op within a pipeline") {
  const auto c = default_catalog();
  const auto n = combination_count(c.ops.size(), 3);
  CHECK(n == c.ops.size() * (c.ops.size() - 1) * (c.ops.size() - 2));
  std::set<std::vector<std::string>> seen;
  for (const auto& p : enumerate_pipelines(c, 3, 2000, 11)) {
    const auto names = op_names(p);
    CHECK(std::set(names.begin(), names.end()).size() == 3);
    seen.insert(names);
  }
  CHECK(seen.size() == 2000);  // 2000 < M(M-1)(M-2), so no cycling yet
}

TEST_CASE("unrank_combination matches nested-loop order") {
  const std::size_t m = 5;
  std::uint64_t rank = 0;
  for (std::size_t a = 0; a < m; ++a)
    for (std::size_t b = 0; b < m; ++b)
      for (std::size_t c = 0; c < m; ++c) {
        if (a == b || b == c || a == c) continue;
        CHECK(unrank_combination(m, 3, rank++) == std::vector<std::size_t>{a, b, c});
      }
  CHECK(rank == combination_count(m, 3));
  CHECK(combination_count(2, 3) == 0);
}

TEST_CASE("every arity-1 op appears once the count covers the catalog") {
  const auto c = default_catalog();
  std::set<std::string> seen;
  for (const auto& p : enumerate_pipelines(c, 1, c.ops.size(), 1)) seen.insert(p.variable_ops[0].op_name);
  CHECK(seen.size() == c.ops.size());
}

TEST_CASE("sampled values always lie in their domains") {
  const auto c = default_catalog();
  for (std::uint64_t seed = 0; seed < 40; ++seed)
    for (int arity = 1; arity <= 3; ++arity)
      for (const auto& p : enumerate_pipelines(c, arity, 150, seed))
        for (const auto& op : p.variable_ops) {
          const auto* spec = c.find(op.op_name);
          REQUIRE(spec != nullptr);
          REQUIRE(op.values.size() == spec->params.size());
          for (std::size_t i = 0; i < op.values.size(); ++i) {
            REQUIRE(value_fits(spec->params[i].domain, op.values[i]));
            REQUIRE(in_domain(spec->params[i].domain, op.values[i]));
          }
        }
}

TEST_CASE("sample_value respects each domain kind") {
  Rng rng(17);
  const ParamDomain real{RealRange{0.25, 0.5}};
  const ParamDomain integer{IntRange{-3, 3}};
  const ParamDomain choice{Choice{{"a", "b"}}};
  const ParamDomain tuple{TupleDomain{{real, integer}}};
  for (int i = 0; i < 500; ++i) {
    CHECK(value_fits(real, sample_value(real, rng)));
    CHECK(value_fits(integer, sample_value(integer, rng)));
    CHECK(value_fits(choice, sample_value(choice, rng)));
    CHECK(value_fits(tuple, sample_value(tuple, rng)));
  }
  CHECK_FALSE(in_domain(real, ParamValue{0.6}));
  CHECK_FALSE(in_domain(integer, ParamValue{std::int64_t{4}}));
  CHECK_FALSE(in_domain(choice, ParamValue{std::string("c")}));
  CHECK_FALSE(in_domain(real, ParamValue{std::int64_t{0}}));
}

TEST_CASE("render_value formats") {
  CHECK(render_value(ParamValue{0.5}) == "0.5");
  CHECK(render_value(ParamValue{0.125}) == "0.125");
  CHECK(render_value(ParamValue{1.0}) == "1.0");
  CHECK(render_value(ParamValue{std::int64_t{12}}) == "12");
  CHECK(render_value(ParamValue{std::string("64")}) == "64");
  CHECK(render_value(ParamValue{std::vector<ParamValue>{ParamValue{0.1}, ParamValue{0.2}}}) == "(0.1, 0.2)");
}

TEST_CASE("rendered pipeline carries the fixed tail and is deterministic") {
  const auto c = default_catalog();
  PipelineSpec p;
  p.fixed_tail = c.tail;
  p.variable_ops = {{"Resize", {ParamValue{std::string("128")}}}};
  const auto text = render_pipeline(c, p);
  CHECK(text.find("def transform(") != std::string::npos);
  CHECK(text.find("transforms.Resize(128)") != std::string::npos);
  CHECK(text.find("transforms.Resize((64, 64))") != std::string::npos);
  CHECK(text.find("transforms.ToTensor()") != std::string::npos);
  CHECK(text.find("transforms.Normalize(mean=(0.4914, 0.4822, 0.4465), std=(0.247, 0.2435, 0.2616))") !=
        std::string::npos);
  CHECK(render_pipeline(c, p) == text);
  CHECK(validate_candidate(text).valid());
}

TEST_CASE("render_pipeline rejects bad pipelines") {
  const auto c = default_catalog();
  PipelineSpec empty;
  CHECK_THROWS_AS(render_pipeline(c, empty), std::invalid_argument);
  PipelineSpec unknown;
  unknown.variable_ops = {{"NoSuchOp", {}}};
  CHECK_THROWS_AS(render_pipeline(c, unknown), std::invalid_argument);
  PipelineSpec out_of_range;
  out_of_range.variable_ops = {{"RandomHorizontalFlip", {ParamValue{2.0}}}};
  CHECK_THROWS_AS(render_pipeline(c, out_of_range), std::invalid_argument);
}

TEST_CASE("all 6000 default renders pass structural validation") {
  const auto c = default_catalog();
  std::size_t n = 0;
  for (int arity = 1; arity <= 3; ++arity)
    for (const auto& p : enumerate_pipelines(c, arity, 2000, 7)) {
      REQUIRE(validate_candidate(render_pipeline(c, p)).valid());
      ++n;
    }
  CHECK(n == 6000);
}

TEST_CASE("campaign is reproducible byte for byte") {
  const auto c = default_catalog();
  const auto a = render_campaign(c, 2, 300, 99);
  const auto b = render_campaign(c, 2, 300, 99);
  const auto other = render_campaign(c, 2, 300, 100);
  REQUIRE(a.size() == 300);
  bool differs = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].source == b[i].source);
    CHECK(a[i].filename == campaign_filename(2, i));
    differs |= a[i].source != other[i].source;
  }
  CHECK(differs);
}

TEST_CASE("write_campaign writes files and a manifest") {
  const auto dir = std::filesystem::temp_directory_path() / "augforge_campaign_test";
  std::filesystem::remove_all(dir);
  const auto entries = render_campaign(default_catalog(), 1, 5, 3);
  write_campaign(dir, entries);
  write_campaign(dir, entries);  // rewriting does not duplicate manifest rows

  std::ifstream manifest(dir / "manifest.csv");
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(manifest, line)) lines.push_back(line);
  REQUIRE(lines.size() == 6);
  CHECK(lines[0] == "file,arity,seed,ops");
  CHECK(lines[1].rfind("bf_1_0.txt,1,", 0) == 0);
  for (const auto& e : entries) {
    std::ifstream f(dir / e.filename, std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    CHECK(ss.str() == e.source);
  }
  std::filesystem::remove_all(dir);
}
