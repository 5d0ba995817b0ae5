// SPDX-License-Identifier: Apache-2.0
//
// The four-block output grammar:
//
//   <answer>Y_INIT</answer> <reflection>F_REFL</reflection>
//   <need_revision>V_REV</need_revision> <final_answer>Y_FIN</final_answer>
//
// Tags are exact, case-sensitive ASCII strings; each pair appears exactly
// once, in that order; only whitespace may appear between blocks or around
// the whole text. The revision flag must canonicalize to yes/no, and the
// initial and final translations must be non-empty, so that a text is
// format-valid exactly when it parses.

#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "reflectmt/util.hpp"

namespace reflectmt {

inline constexpr std::array<std::string_view, 4> kBlockNames = {
    "answer", "reflection", "need_revision", "final_answer"};

inline std::string open_tag(size_t block) {
  return "<" + std::string(kBlockNames[block]) + ">";
}
inline std::string close_tag(size_t block) {
  return "</" + std::string(kBlockNames[block]) + ">";
}

// canonical tag sequence: open0, close0, open1, close1, ...
inline const std::array<std::string, 8>& grammar_tags() {
  static const std::array<std::string, 8> tags = [] {
    std::array<std::string, 8> t;
    for (size_t b = 0; b < 4; ++b) {
      t[2 * b] = open_tag(b);
      t[2 * b + 1] = close_tag(b);
    }
    return t;
  }();
  return tags;
}

enum class RevisionFlag { Yes, No };

inline std::optional<RevisionFlag> canonical_revision_flag(std::string_view s) {
  if (s == "是" || s == "yes" || s == "Yes" || s == "true")
    return RevisionFlag::Yes;
  if (s == "否" || s == "no" || s == "No" || s == "false")
    return RevisionFlag::No;
  return std::nullopt;
}

struct StructuredOutput {
  std::string y_init;
  std::string f_refl;
  RevisionFlag v_rev = RevisionFlag::No;
  std::string v_rev_surface;  // surface form as generated, e.g. "否" or "No"
  std::string y_fin;

  bool operator==(const StructuredOutput&) const = default;
};

enum class ParseFailure {
  None,
  MissingTag,
  OrderViolation,
  NestedTag,
  DuplicateTag,
  TrailingGarbage,
  BadRevisionFlag,  // need_revision payload is not a recognized yes/no form
  EmptyPayload,     // answer or final_answer payload empty after trimming
};

inline std::string_view to_string(ParseFailure f) {
  switch (f) {
    case ParseFailure::None: return "None";
    case ParseFailure::MissingTag: return "MissingTag";
    case ParseFailure::OrderViolation: return "OrderViolation";
    case ParseFailure::NestedTag: return "NestedTag";
    case ParseFailure::DuplicateTag: return "DuplicateTag";
    case ParseFailure::TrailingGarbage: return "TrailingGarbage";
    case ParseFailure::BadRevisionFlag: return "BadRevisionFlag";
    case ParseFailure::EmptyPayload: return "EmptyPayload";
  }
  return "?";
}

struct ParseReport {
  bool ok = false;
  ParseFailure failure_kind = ParseFailure::None;
  std::optional<size_t> failure_offset;

  static ParseReport success() { return ParseReport{true, ParseFailure::None, {}}; }
  static ParseReport fail(ParseFailure kind, size_t offset) {
    return ParseReport{false, kind, offset};
  }
};

struct ParseResult {
  std::optional<StructuredOutput> value;
  ParseReport report;

  bool ok() const { return report.ok; }
  const StructuredOutput& operator*() const { return *value; }
  const StructuredOutput* operator->() const { return &*value; }
};

namespace detail {

struct TagHit {
  size_t pos;
  size_t tag;  // index into grammar_tags()
};

inline std::vector<TagHit> find_tag_hits(std::string_view text) {
  std::vector<TagHit> hits;
  const auto& tags = grammar_tags();
  for (size_t t = 0; t < tags.size(); ++t) {
    size_t from = 0;
    for (;;) {
      size_t p = text.find(tags[t], from);
      if (p == std::string_view::npos) break;
      hits.push_back({p, t});
      from = p + 1;
    }
  }
  std::sort(hits.begin(), hits.end(),
            [](const TagHit& a, const TagHit& b) { return a.pos < b.pos; });
  return hits;
}

inline std::optional<size_t> first_non_ws(std::string_view text, size_t b,
                                          size_t e) {
  for (size_t i = b; i < e; ++i) {
    if (!is_ascii_space(text[i])) return i;
  }
  return std::nullopt;
}

struct Walk {
  ParseReport report;
  // payload byte ranges [begin, end) for the four blocks, valid when ok
  std::array<std::pair<size_t, size_t>, 4> payloads{};
};

// Single left-to-right pass over the tag occurrences. Reports the first
// failure by text position.
inline Walk walk_blocks(std::string_view text) {
  Walk w;
  const auto& tags = grammar_tags();
  auto hits = find_tag_hits(text);

  size_t expected = 0;  // index into the canonical 8-tag sequence
  size_t last_end = 0;  // end offset of the last consumed tag
  for (const TagHit& hit : hits) {
    if (expected >= 8) {
      // complete sequence already seen; anything further is garbage or a dup
      if (auto q = first_non_ws(text, last_end, hit.pos)) {
        w.report = ParseReport::fail(ParseFailure::TrailingGarbage, *q);
        return w;
      }
      w.report = ParseReport::fail(ParseFailure::DuplicateTag, hit.pos);
      return w;
    }
    const bool inside_block = (expected % 2) == 1;
    if (hit.tag == expected) {
      if (!inside_block) {
        // gap between blocks must be pure whitespace
        if (auto q = first_non_ws(text, last_end, hit.pos)) {
          w.report = ParseReport::fail(ParseFailure::TrailingGarbage, *q);
          return w;
        }
      } else {
        w.payloads[expected / 2] = {last_end, hit.pos};
      }
      last_end = hit.pos + tags[hit.tag].size();
      ++expected;
      continue;
    }
    // unexpected tag: classify
    if (inside_block) {
      if (hit.tag % 2 == 0) {
        w.report = ParseReport::fail(ParseFailure::NestedTag, hit.pos);
      } else if (hit.tag < expected) {
        w.report = ParseReport::fail(ParseFailure::DuplicateTag, hit.pos);
      } else {
        w.report = ParseReport::fail(ParseFailure::OrderViolation, hit.pos);
      }
      return w;
    }
    // between blocks: garbage in the gap precedes the tag problem
    if (auto q = first_non_ws(text, last_end, hit.pos)) {
      w.report = ParseReport::fail(ParseFailure::TrailingGarbage, *q);
      return w;
    }
    if (hit.tag < expected) {
      w.report = ParseReport::fail(ParseFailure::DuplicateTag, hit.pos);
    } else {
      // ahead of its turn: order violation if the expected tag still shows
      // up later, otherwise the expected tag is simply missing
      bool expected_later = false;
      for (const TagHit& h2 : hits) {
        if (h2.pos > hit.pos && h2.tag == expected) {
          expected_later = true;
          break;
        }
      }
      w.report = ParseReport::fail(
          expected_later ? ParseFailure::OrderViolation : ParseFailure::MissingTag,
          hit.pos);
    }
    return w;
  }

  if (expected < 8) {
    w.report = ParseReport::fail(ParseFailure::MissingTag, text.size());
    return w;
  }
  if (auto q = first_non_ws(text, last_end, text.size())) {
    w.report = ParseReport::fail(ParseFailure::TrailingGarbage, *q);
    return w;
  }
  w.report = ParseReport::success();
  return w;
}

}  // namespace detail

inline ParseResult parse_structured(std::string_view text) {
  ParseResult r;
  auto walk = detail::walk_blocks(text);
  if (!walk.report.ok) {
    r.report = walk.report;
    return r;
  }
  auto payload = [&](size_t block) {
    auto [b, e] = walk.payloads[block];
    return text.substr(b, e - b);
  };
  std::string y_init = trim(payload(0));
  if (y_init.empty()) {
    r.report = ParseReport::fail(ParseFailure::EmptyPayload, walk.payloads[0].first);
    return r;
  }
  std::string f_refl = trim(payload(1));
  std::string v_surface = trim(payload(2));
  auto flag = canonical_revision_flag(v_surface);
  if (!flag) {
    r.report =
        ParseReport::fail(ParseFailure::BadRevisionFlag, walk.payloads[2].first);
    return r;
  }
  std::string y_fin = trim(payload(3));
  if (y_fin.empty()) {
    r.report = ParseReport::fail(ParseFailure::EmptyPayload, walk.payloads[3].first);
    return r;
  }
  r.value = StructuredOutput{std::move(y_init), std::move(f_refl), *flag,
                             std::move(v_surface), std::move(y_fin)};
  r.report = ParseReport::success();
  return r;
}

// Format reward predicate: 1 iff the text parses. Total and deterministic.
inline int validate_format(std::string_view text) {
  return parse_structured(text).ok() ? 1 : 0;
}

class RenderError : public std::runtime_error {
 public:
  enum class Kind { PayloadContainsTag, EmptyPayload };
  RenderError(Kind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

// Canonical rendering: blocks joined by single spaces. Inverse of
// parse_structured for trimmed, tag-free payloads.
inline std::string render_structured(const StructuredOutput& s) {
  auto check_payload = [](std::string_view payload, std::string_view which) {
    for (const auto& tag : grammar_tags()) {
      if (payload.find(tag) != std::string_view::npos) {
        throw RenderError(RenderError::Kind::PayloadContainsTag,
                          std::string(which) + " payload embeds grammar tag " + tag);
      }
    }
  };
  check_payload(s.y_init, "answer");
  check_payload(s.f_refl, "reflection");
  check_payload(s.v_rev_surface, "need_revision");
  check_payload(s.y_fin, "final_answer");
  if (trim_view(s.y_init).empty() || trim_view(s.y_fin).empty()) {
    throw RenderError(RenderError::Kind::EmptyPayload,
                      "answer and final_answer payloads must be non-empty");
  }
  std::string surface = s.v_rev_surface;
  if (canonical_revision_flag(trim_view(surface)) != s.v_rev) {
    surface = s.v_rev == RevisionFlag::Yes ? "是" : "否";
  }
  std::string out;
  out.reserve(s.y_init.size() + s.f_refl.size() + s.y_fin.size() + 96);
  out += open_tag(0); out += s.y_init; out += close_tag(0);
  out += ' ';
  out += open_tag(1); out += s.f_refl; out += close_tag(1);
  out += ' ';
  out += open_tag(2); out += surface; out += close_tag(2);
  out += ' ';
  out += open_tag(3); out += s.y_fin; out += close_tag(3);
  return out;
}

// Incremental detector for the end of the answer block in a streamed
// generation. Value type: scan_chunk returns the advanced state, so the
// scanner composes with any chunking of the input.
class EarlyStopScan {
 public:
  void feed(std::string_view chunk) {
    total_fed_ += chunk.size();
    if (phase_ == Phase::Done) return;
    pending_.append(chunk.data(), chunk.size());
    process();
  }

  bool stop_found() const { return phase_ == Phase::Done; }

  // byte offset one past the closing tag, valid when stop_found()
  size_t stop_offset() const { return stop_offset_; }

  // text strictly between <answer> and </answer>, valid when stop_found();
  // while still inside the block it holds the payload seen so far
  const std::string& answer_payload() const { return payload_; }

  size_t total_fed() const { return total_fed_; }

 private:
  enum class Phase { Seek, InAnswer, Done };

  void process() {
    if (phase_ == Phase::Seek) {
      const std::string& open = grammar_tags()[0];
      size_t p = pending_.find(open);
      if (p == std::string::npos) {
        // keep only a suffix that could still start the tag
        size_t keep = std::min(pending_.size(), open.size() - 1);
        pending_base_ += pending_.size() - keep;
        pending_.erase(0, pending_.size() - keep);
        return;
      }
      pending_base_ += p + open.size();
      pending_.erase(0, p + open.size());
      phase_ = Phase::InAnswer;
    }
    if (phase_ == Phase::InAnswer) {
      const std::string& close = grammar_tags()[1];
      size_t p = pending_.find(close);
      if (p == std::string::npos) {
        // all but a possible tag prefix is settled payload
        if (pending_.size() > close.size() - 1) {
          size_t settle = pending_.size() - (close.size() - 1);
          payload_.append(pending_, 0, settle);
          pending_base_ += settle;
          pending_.erase(0, settle);
        }
        return;
      }
      payload_.append(pending_, 0, p);
      stop_offset_ = pending_base_ + p + close.size();
      phase_ = Phase::Done;
      pending_.clear();
    }
  }

  Phase phase_ = Phase::Seek;
  std::string pending_;      // unsettled bytes (possible split tag)
  size_t pending_base_ = 0;  // absolute offset of pending_[0]
  std::string payload_;
  size_t stop_offset_ = 0;
  size_t total_fed_ = 0;
};

inline EarlyStopScan scan_chunk(EarlyStopScan scan, std::string_view chunk) {
  scan.feed(chunk);
  return scan;
}

}  // namespace reflectmt
