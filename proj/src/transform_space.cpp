#include "augforge/transform_space.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "augforge/random.hpp"

namespace augforge {

namespace {

constexpr std::string_view kCatalogVersion = "augforge-catalog-1";

ParamSpec real_param(std::string name, double lo, double hi) {
  return {std::move(name), ParamDomain{RealRange{lo, hi}}, RenderStyle::keyword};
}

ParamSpec int_param(std::string name, std::int64_t lo, std::int64_t hi) {
  return {std::move(name), ParamDomain{IntRange{lo, hi}}, RenderStyle::keyword};
}

ParamSpec choice_param(std::string name, std::vector<std::string> literals,
                       RenderStyle style = RenderStyle::keyword) {
  return {std::move(name), ParamDomain{Choice{std::move(literals)}}, style};
}

ParamSpec pair_param(std::string name, RealRange first, RealRange second) {
  return {std::move(name),
          ParamDomain{TupleDomain{{ParamDomain{first}, ParamDomain{second}}}},
          RenderStyle::keyword};
}

ParamSpec prob() { return real_param("p", 0.0, 1.0); }

// Reals are bound on a 1e-3 grid so rendered text and stored value agree.
double quantize(double x) { return std::round(x * 1000.0) / 1000.0; }

std::string format_real(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3f", x);
  std::string s(buf);
  while (s.size() > 1 && s.back() == '0' && s[s.size() - 2] != '.') s.pop_back();
  return s;
}

std::vector<std::string> template_slots(std::string_view tmpl) {
  std::vector<std::string> slots;
  std::size_t pos = 0;
  while ((pos = tmpl.find('{', pos)) != std::string_view::npos) {
    const auto end = tmpl.find('}', pos);
    if (end == std::string_view::npos) throw std::invalid_argument("unterminated slot in template");
    slots.emplace_back(tmpl.substr(pos + 1, end - pos - 1));
    pos = end + 1;
  }
  return slots;
}

void check_domain(const ParamDomain& d, const std::string& where) {
  std::visit(
      [&](const auto& k) {
        using K = std::decay_t<decltype(k)>;
        if constexpr (std::is_same_v<K, RealRange> || std::is_same_v<K, IntRange>) {
          if (!(k.lo <= k.hi)) throw std::invalid_argument(where + ": interval with lo > hi");
        } else if constexpr (std::is_same_v<K, Choice>) {
          if (k.literals.empty()) throw std::invalid_argument(where + ": empty enumeration");
        } else {
          if (k.parts.empty()) throw std::invalid_argument(where + ": empty tuple domain");
          for (const auto& p : k.parts) check_domain(p, where);
        }
      },
      d.kind);
}

std::string render_call(const TransformOpSpec& op, const std::vector<ParamValue>& values) {
  std::string out;
  const std::string& t = op.call_template;
  std::size_t pos = 0;
  while (pos < t.size()) {
    const auto open = t.find('{', pos);
    if (open == std::string::npos) {
      out.append(t, pos);
      break;
    }
    out.append(t, pos, open - pos);
    const auto close = t.find('}', open);
    const std::string slot = t.substr(open + 1, close - open - 1);
    const auto it = std::find_if(op.params.begin(), op.params.end(),
                                 [&](const ParamSpec& p) { return p.name == slot; });
    const auto i = static_cast<std::size_t>(it - op.params.begin());
    if (it->style == RenderStyle::keyword) out += it->name + "=";
    out += render_value(values[i]);
    pos = close + 1;
  }
  return out;
}

// Tail constants keep every digit they were configured with.
std::string render_tuple(const std::vector<double>& xs) {
  std::string s = "(";
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) s += ", ";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.10g", xs[i]);
    s += buf;
  }
  return s + ")";
}

nlohmann::json domain_to_json(const ParamDomain& d) {
  return std::visit(
      [](const auto& k) -> nlohmann::json {
        using K = std::decay_t<decltype(k)>;
        if constexpr (std::is_same_v<K, RealRange>) {
          return {{"real", {k.lo, k.hi}}};
        } else if constexpr (std::is_same_v<K, IntRange>) {
          return {{"int", {k.lo, k.hi}}};
        } else if constexpr (std::is_same_v<K, Choice>) {
          return {{"choice", k.literals}};
        } else {
          nlohmann::json parts = nlohmann::json::array();
          for (const auto& p : k.parts) parts.push_back(domain_to_json(p));
          return {{"tuple", parts}};
        }
      },
      d.kind);
}

ParamDomain domain_from_json(const nlohmann::json& j) {
  if (j.contains("real")) return {RealRange{j["real"].at(0).get<double>(), j["real"].at(1).get<double>()}};
  if (j.contains("int"))
    return {IntRange{j["int"].at(0).get<std::int64_t>(), j["int"].at(1).get<std::int64_t>()}};
  if (j.contains("choice")) return {Choice{j["choice"].get<std::vector<std::string>>()}};
  if (j.contains("tuple")) {
    TupleDomain t;
    for (const auto& p : j["tuple"]) t.parts.push_back(domain_from_json(p));
    return {std::move(t)};
  }
  throw std::invalid_argument("unknown parameter domain: " + j.dump());
}

}  // namespace

const TransformOpSpec* Catalog::find(std::string_view op_name) const {
  for (const auto& op : ops)
    if (op.name == op_name) return &op;
  return nullptr;
}

Catalog default_catalog() {
  Catalog c;
  c.version = std::string(kCatalogVersion);
  c.ops = {
      {"RandomHorizontalFlip", {prob()}, "RandomHorizontalFlip({p})"},
      {"RandomVerticalFlip", {prob()}, "RandomVerticalFlip({p})"},
      {"RandomRotation", {int_param("degrees", 0, 45)}, "RandomRotation({degrees})"},
      {"RandomAffine",
       {int_param("degrees", 0, 30), pair_param("translate", {0.0, 0.2}, {0.0, 0.2})},
       "RandomAffine({degrees}, {translate})"},
      {"RandomResizedCrop",
       {choice_param("size", {"32", "64"}), pair_param("scale", {0.5, 0.8}, {0.9, 1.0})},
       "RandomResizedCrop({size}, {scale})"},
      {"RandomCrop", {choice_param("size", {"24", "28", "32"}), int_param("padding", 0, 8)},
       "RandomCrop({size}, {padding})"},
      {"ColorJitter",
       {real_param("brightness", 0.0, 0.5), real_param("contrast", 0.0, 0.5),
        real_param("saturation", 0.0, 0.5), real_param("hue", 0.0, 0.1)},
       "ColorJitter({brightness}, {contrast}, {saturation}, {hue})"},
      {"GaussianBlur",
       {choice_param("kernel_size", {"3", "5", "7"}), pair_param("sigma", {0.1, 1.0}, {1.0, 2.0})},
       "GaussianBlur({kernel_size}, {sigma})"},
      {"RandomPosterize", {int_param("bits", 2, 8), prob()}, "RandomPosterize({bits}, {p})"},
      {"RandomSolarize", {int_param("threshold", 64, 255), prob()}, "RandomSolarize({threshold}, {p})"},
      {"RandomGrayscale", {prob()}, "RandomGrayscale({p})"},
      {"RandomPerspective", {real_param("distortion_scale", 0.0, 0.6), prob()},
       "RandomPerspective({distortion_scale}, {p})"},
      {"RandomAdjustSharpness", {real_param("sharpness_factor", 0.0, 3.0), prob()},
       "RandomAdjustSharpness({sharpness_factor}, {p})"},
      {"RandomAutocontrast", {prob()}, "RandomAutocontrast({p})"},
      {"RandomInvert", {prob()}, "RandomInvert({p})"},
      {"RandomEqualize", {prob()}, "RandomEqualize({p})"},
      {"Resize", {choice_param("size", {"32", "64", "128", "224", "256"}, RenderStyle::positional)},
       "Resize({size})"},
  };
  return c;
}

void validate_catalog(const Catalog& catalog) {
  if (catalog.ops.empty()) throw std::invalid_argument("catalog has no ops");
  std::set<std::string> names;
  for (const auto& op : catalog.ops) {
    if (!names.insert(op.name).second) throw std::invalid_argument("duplicate op name: " + op.name);
    std::set<std::string> params;
    for (const auto& p : op.params) {
      if (!params.insert(p.name).second)
        throw std::invalid_argument(op.name + ": duplicate parameter " + p.name);
      check_domain(p.domain, op.name + "." + p.name);
    }
    const auto slots = template_slots(op.call_template);
    if (slots.size() != op.params.size())
      throw std::invalid_argument(op.name + ": template slot count differs from parameter count");
    if (std::set<std::string>(slots.begin(), slots.end()) != params)
      throw std::invalid_argument(op.name + ": template slots do not match parameter names");
  }
  const auto& t = catalog.tail;
  if (t.resize_height <= 0 || t.resize_width <= 0) throw std::invalid_argument("tail resize must be positive");
  if (t.normalize_mean.size() != t.normalize_std.size() || t.normalize_mean.empty())
    throw std::invalid_argument("tail normalization mean/std size mismatch");
}

bool in_domain(const ParamDomain& domain, const ParamValue& value) {
  return std::visit(
      [&](const auto& k) -> bool {
        using K = std::decay_t<decltype(k)>;
        if constexpr (std::is_same_v<K, RealRange>) {
          const auto* x = std::get_if<double>(&value.value);
          return x && *x >= k.lo && *x <= k.hi;
        } else if constexpr (std::is_same_v<K, IntRange>) {
          const auto* x = std::get_if<std::int64_t>(&value.value);
          return x && *x >= k.lo && *x <= k.hi;
        } else if constexpr (std::is_same_v<K, Choice>) {
          const auto* x = std::get_if<std::string>(&value.value);
          return x && std::find(k.literals.begin(), k.literals.end(), *x) != k.literals.end();
        } else {
          const auto* xs = std::get_if<std::vector<ParamValue>>(&value.value);
          if (!xs || xs->size() != k.parts.size()) return false;
          for (std::size_t i = 0; i < xs->size(); ++i)
            if (!in_domain(k.parts[i], (*xs)[i])) return false;
          return true;
        }
      },
      domain.kind);
}

ParamValue sample_value(const ParamDomain& domain, Rng& rng) {
  return std::visit(
      [&](const auto& k) -> ParamValue {
        using K = std::decay_t<decltype(k)>;
        if constexpr (std::is_same_v<K, RealRange>) {
          return {std::clamp(quantize(rng.uniform_real(k.lo, k.hi)), k.lo, k.hi)};
        } else if constexpr (std::is_same_v<K, IntRange>) {
          return {rng.uniform_int(k.lo, k.hi)};
        } else if constexpr (std::is_same_v<K, Choice>) {
          return {k.literals[rng.uniform_index(k.literals.size())]};
        } else {
          std::vector<ParamValue> parts;
          for (const auto& p : k.parts) parts.push_back(sample_value(p, rng));
          return {std::move(parts)};
        }
      },
      domain.kind);
}

std::string render_value(const ParamValue& value) {
  return std::visit(
      [](const auto& v) -> std::string {
        using V = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<V, double>) {
          return format_real(v);
        } else if constexpr (std::is_same_v<V, std::int64_t>) {
          return std::to_string(v);
        } else if constexpr (std::is_same_v<V, std::string>) {
          return v;
        } else {
          std::string s = "(";
          for (std::size_t i = 0; i < v.size(); ++i) {
            if (i) s += ", ";
            s += render_value(v[i]);
          }
          return s + ")";
        }
      },
      value.value);
}

std::uint64_t combination_count(std::size_t catalog_size, int arity) {
  std::uint64_t n = 1;
  for (int i = 0; i < arity; ++i) {
    if (catalog_size <= static_cast<std::size_t>(i)) return 0;
    n *= catalog_size - static_cast<std::size_t>(i);
  }
  return n;
}

std::vector<std::size_t> unrank_combination(std::size_t catalog_size, int arity, std::uint64_t rank) {
  std::vector<std::size_t> available(catalog_size);
  for (std::size_t i = 0; i < catalog_size; ++i) available[i] = i;
  std::vector<std::size_t> out;
  for (int pos = 0; pos < arity; ++pos) {
    const std::uint64_t block = combination_count(available.size() - 1, arity - pos - 1);
    const auto pick = static_cast<std::size_t>(rank / block);
    rank %= block;
    out.push_back(available[pick]);
    available.erase(available.begin() + static_cast<std::ptrdiff_t>(pick));
  }
  return out;
}

std::vector<PipelineSpec> enumerate_pipelines(const Catalog& catalog, int arity, std::size_t count,
                                              std::uint64_t seed) {
  if (arity < kMinArity || arity > kMaxArity) throw std::invalid_argument("arity must be 1, 2 or 3");
  if (count == 0) throw std::invalid_argument("count must be positive");
  const std::uint64_t combos = combination_count(catalog.ops.size(), arity);
  if (combos == 0) throw std::invalid_argument("catalog too small for requested arity");

  std::vector<PipelineSpec> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    PipelineSpec p;
    p.fixed_tail = catalog.tail;
    p.rng_seed = derive_seed(seed, static_cast<std::uint64_t>(arity), i);
    Rng rng(p.rng_seed);
    for (const auto op_index : unrank_combination(catalog.ops.size(), arity, i % combos)) {
      const auto& op = catalog.ops[op_index];
      BoundOp bound{op.name, {}};
      for (const auto& param : op.params) bound.values.push_back(sample_value(param.domain, rng));
      p.variable_ops.push_back(std::move(bound));
    }
    out.push_back(std::move(p));
  }
  return out;
}

std::string render_pipeline(const Catalog& catalog, const PipelineSpec& pipeline) {
  const auto n = pipeline.variable_ops.size();
  if (n < static_cast<std::size_t>(kMinArity) || n > static_cast<std::size_t>(kMaxArity))
    throw std::invalid_argument("pipeline must have 1 to 3 variable ops");

  std::ostringstream out;
  out << "import torchvision.transforms as transforms\n\n\n"
      << "def transform():\n"
      << "    return transforms.Compose([\n";
  for (const auto& bound : pipeline.variable_ops) {
    const auto* op = catalog.find(bound.op_name);
    if (!op) throw std::invalid_argument("op not in catalog: " + bound.op_name);
    if (bound.values.size() != op->params.size())
      throw std::invalid_argument(bound.op_name + ": wrong number of bound values");
    for (std::size_t i = 0; i < bound.values.size(); ++i)
      if (!in_domain(op->params[i].domain, bound.values[i]))
        throw std::invalid_argument(bound.op_name + "." + op->params[i].name + " outside its domain");
    out << "        transforms." << render_call(*op, bound.values) << ",\n";
  }
  const auto& t = pipeline.fixed_tail;
  out << "        transforms.Resize((" << t.resize_height << ", " << t.resize_width << ")),\n"
      << "        transforms.ToTensor(),\n"
      << "        transforms.Normalize(mean=" << render_tuple(t.normalize_mean)
      << ", std=" << render_tuple(t.normalize_std) << "),\n"
      << "    ])\n";
  return out.str();
}

nlohmann::json catalog_to_json(const Catalog& catalog) {
  nlohmann::json ops = nlohmann::json::array();
  for (const auto& op : catalog.ops) {
    nlohmann::json params = nlohmann::json::array();
    for (const auto& p : op.params)
      params.push_back({{"name", p.name},
                        {"domain", domain_to_json(p.domain)},
                        {"style", p.style == RenderStyle::keyword ? "keyword" : "positional"}});
    ops.push_back({{"name", op.name}, {"params", params}, {"template", op.call_template}});
  }
  const auto& t = catalog.tail;
  return {{"version", catalog.version},
          {"ops", ops},
          {"tail",
           {{"resize", {t.resize_height, t.resize_width}},
            {"mean", t.normalize_mean},
            {"std", t.normalize_std}}}};
}

Catalog catalog_from_json(const nlohmann::json& j) {
  Catalog c;
  c.version = j.at("version").get<std::string>();
  for (const auto& jo : j.at("ops")) {
    TransformOpSpec op;
    op.name = jo.at("name").get<std::string>();
    op.call_template = jo.at("template").get<std::string>();
    for (const auto& jp : jo.at("params")) {
      const auto style = jp.value("style", std::string("keyword"));
      if (style != "keyword" && style != "positional")
        throw std::invalid_argument("unknown render style: " + style);
      op.params.push_back({jp.at("name").get<std::string>(), domain_from_json(jp.at("domain")),
                           style == "keyword" ? RenderStyle::keyword : RenderStyle::positional});
    }
    c.ops.push_back(std::move(op));
  }
  if (j.contains("tail")) {
    const auto& jt = j["tail"];
    c.tail.resize_height = jt.at("resize").at(0).get<int>();
    c.tail.resize_width = jt.at("resize").at(1).get<int>();
    c.tail.normalize_mean = jt.at("mean").get<std::vector<double>>();
    c.tail.normalize_std = jt.at("std").get<std::vector<double>>();
  }
  validate_catalog(c);
  return c;
}

Catalog load_catalog(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open catalog " + path.string());
  return catalog_from_json(nlohmann::json::parse(in));
}

void save_catalog(const Catalog& catalog, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write catalog " + path.string());
  out << catalog_to_json(catalog).dump(2) << '\n';
}

std::string campaign_filename(int arity, std::size_t index) {
  return "bf_" + std::to_string(arity) + "_" + std::to_string(index) + ".txt";
}

std::vector<CampaignEntry> render_campaign(const Catalog& catalog, int arity, std::size_t count,
                                           std::uint64_t seed) {
  std::vector<CampaignEntry> out;
  const auto pipelines = enumerate_pipelines(catalog, arity, count, seed);
  out.reserve(pipelines.size());
  for (std::size_t i = 0; i < pipelines.size(); ++i) {
    CampaignEntry e;
    e.filename = campaign_filename(arity, i);
    e.arity = arity;
    e.index = i;
    e.seed = pipelines[i].rng_seed;
    for (const auto& op : pipelines[i].variable_ops) e.ops.push_back(op.op_name);
    e.source = render_pipeline(catalog, pipelines[i]);
    out.push_back(std::move(e));
  }
  return out;
}

void write_campaign(const std::filesystem::path& dir, const std::vector<CampaignEntry>& entries) {
  std::filesystem::create_directories(dir);
  const auto manifest_path = dir / "manifest.csv";
  std::ofstream manifest(manifest_path, std::ios::trunc);
  if (!manifest) throw std::runtime_error("cannot write " + manifest_path.string());
  manifest << "file,arity,seed,ops\n";
  for (const auto& e : entries) {
    std::ofstream f(dir / e.filename, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + (dir / e.filename).string());
    f << e.source;
    std::string ops;
    for (const auto& op : e.ops) ops += (ops.empty() ? "" : "+") + op;
    manifest << e.filename << ',' << e.arity << ',' << e.seed << ',' << ops << '\n';
  }
}

}  // namespace augforge
