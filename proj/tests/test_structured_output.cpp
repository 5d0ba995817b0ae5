// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <string>
#include <vector>

#include "reflectmt/structured_output.hpp"
#include "test_util.hpp"

using namespace reflectmt;

namespace {

const std::string kBase =
    "<answer>A</answer> <reflection>R</reflection> "
    "<need_revision>否</need_revision> <final_answer>F</final_answer>";

std::string replace_once(std::string s, const std::string& from,
                         const std::string& to) {
  size_t p = s.find(from);
  REQUIRE(p != std::string::npos);
  s.replace(p, from.size(), to);
  return s;
}

// scan a whole string as a single chunk
EarlyStopScan scan_all(const std::string& text) {
  EarlyStopScan s;
  s.feed(text);
  return s;
}

}  // namespace

TEST_CASE("golden sft example validates and parses") {
  const std::string golden = rmtest::read_fixture("data/golden_sft_example.txt");
  REQUIRE(validate_format(golden) == 1);
  auto r = parse_structured(golden);
  REQUIRE(r.ok());
  CHECK(r->v_rev == RevisionFlag::No);
  CHECK(r->v_rev_surface == "否");
  CHECK(r->y_fin == r->y_init);
  CHECK(r->y_init == "2018年非洲面临的三大人道主义挑战");
  CHECK(r->f_refl.find("翻译质量分析") != std::string::npos);
}

TEST_CASE("canonical small template parses into fields") {
  auto r = parse_structured(kBase);
  REQUIRE(r.ok());
  CHECK(r->y_init == "A");
  CHECK(r->f_refl == "R");
  CHECK(r->v_rev == RevisionFlag::No);
  CHECK(r->y_fin == "F");
}

TEST_CASE("whitespace between blocks and around text is tolerated") {
  std::string t =
      "\n  <answer>你好</answer>\t\r\n<reflection>ok</reflection>"
      "\n<need_revision>no</need_revision> \n <final_answer>你好</final_answer>\n";
  REQUIRE(validate_format(t) == 1);
  auto r = parse_structured(t);
  REQUIRE(r.ok());
  CHECK(r->y_init == "你好");
  CHECK(r->f_refl == "ok");
  CHECK(r->v_rev == RevisionFlag::No);
  CHECK(r->v_rev_surface == "no");
  CHECK(r->y_fin == "你好");
}

TEST_CASE("payload trimming preserves interior whitespace") {
  std::string t = replace_once(kBase, "<reflection>R</reflection>",
                               "<reflection>  a  b  </reflection>");
  auto r = parse_structured(t);
  REQUIRE(r.ok());
  CHECK(r->f_refl == "a  b");
}

TEST_CASE("revision flag surface forms canonicalize") {
  for (const char* yes : {"是", "yes", "Yes", "true"}) {
    std::string t = replace_once(kBase, ">否<", ">" + std::string(yes) + "<");
    auto r = parse_structured(t);
    REQUIRE(r.ok());
    CHECK(r->v_rev == RevisionFlag::Yes);
    CHECK(r->v_rev_surface == yes);
  }
  for (const char* no : {"否", "no", "No", "false"}) {
    std::string t = replace_once(kBase, ">否<", ">" + std::string(no) + "<");
    auto r = parse_structured(t);
    REQUIRE(r.ok());
    CHECK(r->v_rev == RevisionFlag::No);
  }
}

TEST_CASE("twenty mutation cases all fail validation") {
  std::vector<std::string> cases;
  // missing tags
  cases.push_back(replace_once(kBase, "<answer>", ""));
  cases.push_back(replace_once(kBase, "</answer>", ""));
  cases.push_back(replace_once(kBase, "<need_revision>否</need_revision> ", ""));
  cases.push_back(replace_once(kBase, "</final_answer>", ""));
  cases.push_back(replace_once(kBase, "<reflection>", ""));
  // duplicated tags
  cases.push_back(replace_once(kBase, "</answer>", "</answer></answer>"));
  cases.push_back(kBase + " <answer>A2</answer>");
  cases.push_back(kBase + "<need_revision>是</need_revision>");
  cases.push_back(replace_once(
      kBase, "<reflection>", "<answer>A2</answer> <reflection>"));
  cases.push_back(kBase + " <final_answer>F2</final_answer>");
  // reordered tags
  cases.push_back(
      "<reflection>R</reflection> <answer>A</answer> "
      "<need_revision>否</need_revision> <final_answer>F</final_answer>");
  cases.push_back(
      "<answer>A</answer> <need_revision>否</need_revision> "
      "<reflection>R</reflection> <final_answer>F</final_answer>");
  cases.push_back(
      "<answer>A</answer> <reflection>R</reflection> "
      "<final_answer>F</final_answer> <need_revision>否</need_revision>");
  cases.push_back(
      "</answer>A<answer> <reflection>R</reflection> "
      "<need_revision>否</need_revision> <final_answer>F</final_answer>");
  cases.push_back(
      "<reflection>R</reflection> <need_revision>否</need_revision> "
      "<final_answer>F</final_answer> <answer>A</answer>");
  // nested tags
  cases.push_back(replace_once(kBase, ">A<", "><answer>A</answer><"));
  cases.push_back(replace_once(kBase, ">R<", "><reflection>R</reflection><"));
  cases.push_back(replace_once(kBase, ">R<", "><need_revision>R<"));
  cases.push_back(replace_once(kBase, ">F<", "><final_answer>F<"));
  cases.push_back(replace_once(kBase, ">A<", "><answer>A<"));

  REQUIRE(cases.size() == 20);
  for (size_t i = 0; i < cases.size(); ++i) {
    INFO("case " << i << ": " << cases[i]);
    CHECK(validate_format(cases[i]) == 0);
    CHECK_FALSE(parse_structured(cases[i]).ok());
  }
}

TEST_CASE("failure kinds and offsets") {
  SECTION("nested answer open inside answer block") {
    std::string t = replace_once(kBase, ">A<", "><answer>A</answer><");
    auto r = parse_structured(t);
    REQUIRE_FALSE(r.ok());
    CHECK(r.report.failure_kind == ParseFailure::NestedTag);
    CHECK(r.report.failure_offset == t.find("<answer>", 1));
  }
  SECTION("reflection before answer is an order violation") {
    std::string t =
        "<reflection>R</reflection> <answer>A</answer> "
        "<need_revision>否</need_revision> <final_answer>F</final_answer>";
    auto r = parse_structured(t);
    REQUIRE_FALSE(r.ok());
    CHECK(r.report.failure_kind == ParseFailure::OrderViolation);
    CHECK(r.report.failure_offset == 0u);
  }
  SECTION("truncated final tag is a missing tag") {
    std::string t = replace_once(kBase, "</final_answer>", "");
    auto r = parse_structured(t);
    REQUIRE_FALSE(r.ok());
    CHECK(r.report.failure_kind == ParseFailure::MissingTag);
    CHECK(r.report.failure_offset == t.size());
  }
  SECTION("empty string is a missing tag at offset 0") {
    auto r = parse_structured("");
    REQUIRE_FALSE(r.ok());
    CHECK(r.report.failure_kind == ParseFailure::MissingTag);
    CHECK(r.report.failure_offset == 0u);
  }
  SECTION("garbage between blocks") {
    std::string t = replace_once(kBase, "</answer> ", "</answer> x ");
    auto r = parse_structured(t);
    REQUIRE_FALSE(r.ok());
    CHECK(r.report.failure_kind == ParseFailure::TrailingGarbage);
    CHECK(r.report.failure_offset == t.find(" x ") + 1);
  }
  SECTION("garbage after the final block") {
    std::string t = kBase + "  tail";
    auto r = parse_structured(t);
    REQUIRE_FALSE(r.ok());
    CHECK(r.report.failure_kind == ParseFailure::TrailingGarbage);
    CHECK(r.report.failure_offset == kBase.size() + 2);
  }
  SECTION("duplicate closing tag") {
    std::string t = replace_once(kBase, "</answer>", "</answer></answer>");
    auto r = parse_structured(t);
    REQUIRE_FALSE(r.ok());
    CHECK(r.report.failure_kind == ParseFailure::DuplicateTag);
  }
  SECTION("unrecognized revision flag") {
    std::string t = replace_once(kBase, ">否<", ">maybe<");
    auto r = parse_structured(t);
    REQUIRE_FALSE(r.ok());
    CHECK(r.report.failure_kind == ParseFailure::BadRevisionFlag);
    CHECK(validate_format(t) == 0);
  }
  SECTION("empty answer payload") {
    std::string t = replace_once(kBase, ">A<", "> <");
    auto r = parse_structured(t);
    REQUIRE_FALSE(r.ok());
    CHECK(r.report.failure_kind == ParseFailure::EmptyPayload);
    CHECK(validate_format(t) == 0);
  }
  SECTION("empty reflection payload is fine") {
    std::string t = replace_once(kBase, ">R<", "><");
    auto r = parse_structured(t);
    REQUIRE(r.ok());
    CHECK(r->f_refl.empty());
  }
}

TEST_CASE("render produces valid text and roundtrips") {
  StructuredOutput s;
  s.y_init = "hello 世界";
  s.f_refl = "looks  fine";
  s.v_rev = RevisionFlag::Yes;
  s.v_rev_surface = "yes";
  s.y_fin = "done";
  std::string t = render_structured(s);
  REQUIRE(validate_format(t) == 1);
  auto r = parse_structured(t);
  REQUIRE(r.ok());
  CHECK(*r == s);
}

TEST_CASE("render rejects embedded tags and empty payloads") {
  StructuredOutput s{"a", "b", RevisionFlag::No, "否", "c"};
  SECTION("closing tag in payload") {
    s.f_refl = "x</answer>y";
    REQUIRE_THROWS_AS(render_structured(s), RenderError);
    try {
      render_structured(s);
    } catch (const RenderError& e) {
      CHECK(e.kind() == RenderError::Kind::PayloadContainsTag);
    }
  }
  SECTION("empty y_init") {
    s.y_init = "  ";
    REQUIRE_THROWS_AS(render_structured(s), RenderError);
    try {
      render_structured(s);
    } catch (const RenderError& e) {
      CHECK(e.kind() == RenderError::Kind::EmptyPayload);
    }
  }
}

TEST_CASE("roundtrip property over generated outputs") {
  Rng rng(20260816);
  const std::vector<std::string> pool = {
      "a", "b", "Z", "9", "译", "文", "质", "量", "好", " ", "  ", ",", ".",
      "(", ")", "：", "“", "”", "'", "-", "é"};
  auto gen_payload = [&](bool may_be_empty) {
    size_t len = rng.index(may_be_empty ? 9 : 8) + (may_be_empty ? 0 : 1);
    std::string s;
    for (size_t i = 0; i < len; ++i) s += pool[rng.index(pool.size())];
    std::string out = trim(s);
    if (!may_be_empty && out.empty()) out = "x";
    return out;
  };
  const std::vector<std::string> yes_forms = {"是", "yes", "Yes", "true"};
  const std::vector<std::string> no_forms = {"否", "no", "No", "false"};
  for (int iter = 0; iter < 500; ++iter) {
    StructuredOutput s;
    s.y_init = gen_payload(false);
    s.f_refl = gen_payload(true);
    bool yes = rng.index(2) == 0;
    s.v_rev = yes ? RevisionFlag::Yes : RevisionFlag::No;
    s.v_rev_surface =
        yes ? yes_forms[rng.index(4)] : no_forms[rng.index(4)];
    s.y_fin = gen_payload(false);
    std::string t = render_structured(s);
    INFO("rendered: " << t);
    REQUIRE(validate_format(t) == 1);
    auto r = parse_structured(t);
    REQUIRE(r.ok());
    CHECK(*r == s);
  }
}

TEST_CASE("format reward consistency on valid and mutated strings") {
  Rng rng(7);
  const std::string tags[] = {"<answer>", "</answer>", "<reflection>",
                              "</reflection>", "<need_revision>",
                              "</need_revision>", "<final_answer>",
                              "</final_answer>", "x", " ", "否"};
  for (int iter = 0; iter < 2000; ++iter) {
    std::string t;
    size_t n = rng.index(12);
    for (size_t i = 0; i < n; ++i) t += tags[rng.index(std::size(tags))];
    CHECK(validate_format(t) == (parse_structured(t).ok() ? 1 : 0));
  }
}

TEST_CASE("early stop scan basics") {
  SECTION("split tag across chunks") {
    EarlyStopScan s;
    s.feed("<answ");
    CHECK_FALSE(s.stop_found());
    s.feed("er>你好</answer>rest");
    REQUIRE(s.stop_found());
    CHECK(s.answer_payload() == "你好");
  }
  SECTION("no answer tags means no stop") {
    EarlyStopScan s;
    s.feed("plain text without ");
    s.feed("any tags at all");
    CHECK_FALSE(s.stop_found());
  }
  SECTION("stop offset points one past the closing tag") {
    std::string t = "<answer>abc</answer><reflection>";
    auto s = scan_all(t);
    REQUIRE(s.stop_found());
    CHECK(s.stop_offset() == std::string("<answer>abc</answer>").size());
    CHECK(s.answer_payload() == "abc");
  }
  SECTION("scan_chunk is a value update") {
    EarlyStopScan s0;
    auto s1 = scan_chunk(s0, "<answer>x");
    auto s2 = scan_chunk(s1, "</answer>");
    CHECK_FALSE(s0.stop_found());
    CHECK_FALSE(s1.stop_found());
    CHECK(s2.stop_found());
    CHECK(s2.answer_payload() == "x");
  }
}

TEST_CASE("exhaustive split scan over the golden template") {
  const std::string golden = rmtest::read_fixture("data/golden_sft_example.txt");
  auto whole = scan_all(golden);
  REQUIRE(whole.stop_found());
  const std::string want = whole.answer_payload();
  const size_t want_off = whole.stop_offset();
  for (size_t cut = 0; cut <= golden.size(); ++cut) {
    EarlyStopScan s;
    s.feed(golden.substr(0, cut));
    s.feed(golden.substr(cut));
    REQUIRE(s.stop_found());
    if (s.answer_payload() != want) {
      INFO("cut at " << cut);
      REQUIRE(s.answer_payload() == want);
    }
    REQUIRE(s.stop_offset() == want_off);
  }
}

TEST_CASE("stream batch equivalence on random partitions") {
  Rng rng(42);
  const std::string pieces[] = {"<answer>", "</answer>", "<answ", "er>",
                                "</answ", "text", "你", " ", "<", ">", "/"};
  for (int iter = 0; iter < 300; ++iter) {
    std::string t;
    size_t n = rng.index(10) + 1;
    for (size_t i = 0; i < n; ++i) t += pieces[rng.index(std::size(pieces))];
    auto whole = scan_all(t);
    // random partition
    EarlyStopScan part;
    size_t pos = 0;
    while (pos < t.size()) {
      size_t len = rng.index(t.size() - pos) + 1;
      part.feed(t.substr(pos, len));
      pos += len;
    }
    CHECK(part.stop_found() == whole.stop_found());
    CHECK(part.answer_payload() == whole.answer_payload());
    if (whole.stop_found()) CHECK(part.stop_offset() == whole.stop_offset());
  }
}
