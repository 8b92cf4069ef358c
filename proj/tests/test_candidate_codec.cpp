#include <doctest.h>

#include <string>

#include "augforge/candidate_codec.hpp"
#include "augforge/random.hpp"
#include "augforge/transform_space.hpp"

using namespace augforge;

namespace {

std::string sample_code(int resize = 64, const std::string& seed_line = "") {
  return "import torch\nimport torchvision.transforms as transforms\n\n" + seed_line +
         "def transform():\n"
         "    return transforms.Compose([\n"
         "        transforms.RandomPosterize(bits=4, p=0.5),\n"
         "        transforms.Resize((" +
         std::to_string(resize) + ", " + std::to_string(resize) +
         ")),\n"
         "        transforms.ToTensor(),\n"
         "    ])\n";
}

}  // namespace

TEST_CASE("minimal well-formed response") {
  const auto r = extract_transform_block("<tr>X</tr>");
  CHECK(r.valid());
  REQUIRE(r.extracted_code);
  CHECK(*r.extracted_code == "X");
}

TEST_CASE("tag violations") {
  CHECK(extract_transform_block("<tr>a</tr><tr>b</tr>").has(Violation::multiple_tr_tags));
  CHECK_FALSE(extract_transform_block("<tr>a</tr><tr>b</tr>").valid());
  CHECK(extract_transform_block("```\n<tr>a</tr>").has(Violation::markdown_fence));
  CHECK(extract_transform_block("no tags").has(Violation::missing_tr_tag));
  CHECK(extract_transform_block("</tr>a<tr>").has(Violation::missing_tr_tag));
  CHECK(extract_transform_block("<tr>a").has(Violation::missing_tr_tag));
  CHECK(extract_transform_block("<TR>a</TR>").has(Violation::missing_tr_tag));
  CHECK(extract_transform_block("<tr>a</tr></tr>").has(Violation::multiple_tr_tags));
}

TEST_CASE("structural validation") {
  CHECK(validate_candidate(sample_code()).valid());
  const auto with_path = validate_candidate(sample_code() + "# <path d=\"M0\"/>\n");
  CHECK(with_path.has(Violation::forbidden_tag));

  std::string renamed = sample_code();
  renamed.replace(renamed.find("def transform("), 14, "def augment(");
  CHECK(validate_candidate(renamed).has(Violation::missing_transform_function));

  CHECK(validate_candidate("").has(Violation::empty_body));
  CHECK(validate_candidate("   \n\t").has(Violation::empty_body));
  CHECK(validate_candidate(sample_code() + "```").has(Violation::markdown_fence));
  for (const char* tag : {"<g>", "<svg width=1>", "<HTML>", "</text>", "<Path d=''>"}) {
    CAPTURE(tag);
    CHECK(validate_candidate(sample_code() + tag).has(Violation::forbidden_tag));
  }
  // Look-alikes are not tags.
  CHECK(validate_candidate(sample_code() + "# <gradient> <pathology>\n").valid());
}

TEST_CASE("inspect_response merges both stages") {
  const auto ok = inspect_response("<tr>\n" + sample_code() + "</tr>");
  CHECK(ok.valid());
  CHECK(*ok.extracted_code == trim(sample_code()));

  const auto bad = inspect_response("<tr>def augment(): pass <svg></tr>");
  CHECK(bad.has(Violation::missing_transform_function));
  CHECK(bad.has(Violation::forbidden_tag));
  CHECK(inspect_response("plain text").has(Violation::missing_tr_tag));
}

TEST_CASE("violation names round trip") {
  for (const auto v : {Violation::missing_tr_tag, Violation::multiple_tr_tags, Violation::markdown_fence,
                       Violation::forbidden_tag, Violation::missing_transform_function, Violation::empty_body}) {
    CHECK(violation_from_string(to_string(v)) == v);
  }
  CHECK_FALSE(violation_from_string("nope"));
}

TEST_CASE("extraction round trip for tag-free code") {
  Rng rng(5);
  const std::string alphabet = "abc def():\n\t  ()[]=,.0123456789'\"#";
  for (int i = 0; i < 500; ++i) {
    std::string c;
    const auto len = rng.uniform_index(80);
    for (std::uint64_t k = 0; k < len; ++k) c += alphabet[rng.uniform_index(alphabet.size())];
    const auto r = extract_transform_block("<tr>" + c + "</tr>");
    REQUIRE(r.valid());
    CHECK(*r.extracted_code == trim(c));
  }
}

TEST_CASE("seed-only variants share a digest") {
  const auto a = canonicalize(sample_code(64, "torch.manual_seed(1)\n"));
  const auto b = canonicalize(sample_code(64, "torch.manual_seed(42)\n"));
  CHECK(a.digest == b.digest);
  CHECK(canonicalize(sample_code(64, "random.seed(7)\n")).digest ==
        canonicalize(sample_code(64, "random.seed(123456)\n")).digest);
  CHECK(code_digest(sample_code(64, "np.random.seed(1)\n")) == code_digest(sample_code(64, "np.random.seed(2)\n")));
}

TEST_CASE("comments and blank lines do not change the digest") {
  const auto base = sample_code();
  CHECK(canonicalize(base).digest == canonicalize(base + "# trailing comment\n").digest);
  CHECK(canonicalize(base).digest == canonicalize("\n\n" + base + "\n\n\n").digest);
  CHECK(canonicalize("x = 1  # note").digest == canonicalize("x = 1").digest);
  CHECK(canonicalize("x  =   1").digest == canonicalize("x = 1").digest);
}

TEST_CASE("semantic differences survive canonicalization") {
  CHECK(canonicalize(sample_code(64)).digest != canonicalize(sample_code(256)).digest);
  // A '#' inside a string is not a comment.
  CHECK(canonicalize("s = 'a # b'").digest != canonicalize("s = 'a '").digest);
  // Whitespace inside strings is kept.
  CHECK(canonicalize("s = 'a  b'").digest != canonicalize("s = 'a b'").digest);
  // Indentation is kept.
  CHECK(canonicalize("if x:\n    y = 1\nz = 2").digest != canonicalize("if x:\n    y = 1\n    z = 2").digest);
  // Numbers outside seed calls are magnitudes.
  CHECK(canonicalize("f(1)").digest != canonicalize("f(2)").digest);
  CHECK(canonicalize("reseed(1)").digest != canonicalize("reseed(2)").digest);
}

TEST_CASE("canonicalize is idempotent") {
  const auto c = default_catalog();
  for (const auto& p : enumerate_pipelines(c, 3, 50, 1)) {
    const auto once = canonicalize(render_pipeline(c, p) + "torch.manual_seed(9)  # s\n");
    const auto twice = canonicalize(once.canonical_text);
    CHECK(twice.canonical_text == once.canonical_text);
    CHECK(twice.digest == once.digest);
  }
}

TEST_CASE("canonicalize rejects empty input; digest handles it") {
  CHECK_THROWS_AS(canonicalize(""), std::invalid_argument);
  CHECK(code_digest("") == sha256_hex(""));
}

TEST_CASE("sha256 known answers") {
  CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("forbidden tag appended to any valid candidate flips validity") {
  const auto c = default_catalog();
  for (const auto& p : enumerate_pipelines(c, 2, 100, 4)) {
    const auto code = render_pipeline(c, p);
    REQUIRE(validate_candidate(code).valid());
    for (const char* tag : {"<path>", "<g>", "<text>", "<svg>", "<html>"}) CHECK_FALSE(validate_candidate(code + tag).valid());
  }
}

TEST_CASE("arbitrary bytes never crash extraction or validation") {
  Rng rng(2024);
  for (int i = 0; i < 2000; ++i) {
    std::string s;
    const auto len = rng.uniform_index(4096);
    s.reserve(len);
    for (std::uint64_t k = 0; k < len; ++k) s += static_cast<char>(rng.uniform_index(256));
    if (i % 3 == 0) s = "<tr>" + s + "</tr>";
    CHECK_NOTHROW(inspect_response(s));
    CHECK_NOTHROW(validate_candidate(s));
    if (!trim(s).empty()) CHECK_NOTHROW(canonicalize(s));
  }
}
