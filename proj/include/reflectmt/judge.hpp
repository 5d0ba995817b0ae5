// SPDX-License-Identifier: Apache-2.0
//
// 0-100 scoring of translations and reflections. Two backends: a remote
// chat endpoint and a deterministic mock for tests and toy training.

#pragma once

#include <cmath>
#include <cstdlib>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

#include <json.hpp>

#include "reflectmt/gateway.hpp"
#include "reflectmt/util.hpp"

namespace reflectmt {

struct JudgeScore {
  double value = 0.0;  // clamped to [0,100]
  std::string raw_reply;
};

class UnparsableScore : public std::runtime_error {
 public:
  explicit UnparsableScore(const std::string& reply)
      : std::runtime_error("no decimal score found in judge reply: " +
                           reply.substr(0, 120)) {}
};

// First decimal number scanning left to right, clamped to [0,100].
inline double parse_judge_reply(const std::string& reply) {
  auto is_digit = [](char c) { return c >= '0' && c <= '9'; };
  for (size_t i = 0; i < reply.size(); ++i) {
    char c = reply[i];
    bool starts_number = false;
    if (is_digit(c)) {
      starts_number = true;
    } else if ((c == '-' || c == '+' || c == '.') && i + 1 < reply.size()) {
      char d = reply[i + 1];
      starts_number =
          is_digit(d) || (c != '.' && d == '.' && i + 2 < reply.size() &&
                          is_digit(reply[i + 2]));
    }
    if (!starts_number) continue;
    errno = 0;
    char* end = nullptr;
    double v = std::strtod(reply.c_str() + i, &end);
    if (end == reply.c_str() + i) continue;
    if (v < 0.0) return 0.0;
    if (v > 100.0) return 100.0;
    return v;
  }
  throw UnparsableScore(reply);
}

// GRF scoring prompt with {src}/{hyp} placeholders; shipped as
// assets/grf_prompt.txt and embedded here (a test keeps the two in sync).
inline constexpr std::string_view kGrfPromptTemplate =
    "Score the following translation from English to Chinese on a continuous "
    "scale from 0 to 100, where score of zero means \"no meaning preserved\" "
    "and score of one hundred means \"perfect preservation of meaning, with "
    "faithfulness, expressiveness, and elegance\".\n"
    "\n"
    "English source: {src}\n"
    "Chinese translation: {hyp}\n"
    "\n"
    "Score: ";

// Reflection rubric prompt, our own artifact (shipped as
// assets/reflection_rubric_prompt.txt, kept in sync by a test).
inline constexpr std::string_view kReflectionRubricTemplate =
    "You are reviewing a translation reflection. Given an English source "
    "sentence, its initial Chinese translation, and a reflection that "
    "analyzes the translation, rate the reflection on a continuous scale "
    "from 0 to 100. A high score requires that the reflection points out "
    "genuine strengths or defects of the translation and that its "
    "suggestions are concrete enough to act on. Reply with the number "
    "only.\n"
    "\n"
    "English source: {src}\n"
    "Initial translation: {y_init}\n"
    "Reflection: {f_refl}\n"
    "\n"
    "Score: ";

inline std::string fill_template(std::string_view tpl,
                                 std::initializer_list<
                                     std::pair<std::string_view, std::string_view>>
                                     subs) {
  std::string out(tpl);
  for (const auto& [key, value] : subs) {
    std::string needle = "{" + std::string(key) + "}";
    size_t p = out.find(needle);
    if (p != std::string::npos) out.replace(p, needle.size(), value);
  }
  return out;
}

inline std::string grf_prompt(const std::string& src, const std::string& hyp) {
  return fill_template(kGrfPromptTemplate, {{"src", src}, {"hyp", hyp}});
}

inline std::string reflection_rubric_prompt(const std::string& src,
                                            const std::string& y_init,
                                            const std::string& f_refl) {
  return fill_template(kReflectionRubricTemplate,
                       {{"src", src}, {"y_init", y_init}, {"f_refl", f_refl}});
}

class Judge {
 public:
  virtual ~Judge() = default;

  JudgeScore score_translation(const std::string& src, const std::string& hyp) {
    if (src.empty() || hyp.empty()) {
      throw std::invalid_argument("score_translation requires non-empty src and hyp");
    }
    JudgeScore s = do_score_translation(src, hyp);
    s.value = std::min(100.0, std::max(0.0, s.value));
    return s;
  }

  // Empty reflections short-circuit to 0 without touching the backend.
  JudgeScore score_reflection(const std::string& src, const std::string& y_init,
                              const std::string& f_refl) {
    if (trim_view(f_refl).empty()) return JudgeScore{0.0, ""};
    JudgeScore s = do_score_reflection(src, y_init, f_refl);
    s.value = std::min(100.0, std::max(0.0, s.value));
    return s;
  }

 protected:
  virtual JudgeScore do_score_translation(const std::string& src,
                                          const std::string& hyp) = 0;
  virtual JudgeScore do_score_reflection(const std::string& src,
                                         const std::string& y_init,
                                         const std::string& f_refl) = 0;
};

// Deterministic stand-in for the remote judge. Table lookups first; the
// fallback scores hyp by normalized code-point Levenshtein similarity to a
// per-source hidden target (the source itself when none is set), scaled to
// [0,100] and quantized to 0.5 steps. Identical strings score 100 exactly.
class MockJudge final : public Judge {
 public:
  void set_entry(const std::string& src, const std::string& hyp, double score) {
    table_[key(src, hyp)] = score;
  }
  void set_reflection_entry(const std::string& src, const std::string& y_init,
                            const std::string& f_refl, double score) {
    refl_table_[key(src, y_init, f_refl)] = score;
  }
  void set_target(const std::string& src, const std::string& target) {
    targets_[src] = target;
  }

  // Rows: {src, hyp, score} translation entries; {src, y_init, f_refl, score}
  // reflection entries; {src, target} hidden fallback targets.
  size_t load_table_jsonl(const std::string& path) {
    std::string text = read_file(path);
    size_t rows = 0, lineno = 0, pos = 0;
    while (pos < text.size()) {
      size_t eol = text.find('\n', pos);
      if (eol == std::string::npos) eol = text.size();
      std::string line = text.substr(pos, eol - pos);
      pos = eol + 1;
      ++lineno;
      if (trim_view(line).empty()) continue;
      auto j = nlohmann::json::parse(line, nullptr, false);
      if (j.is_discarded() || !j.contains("src")) {
        throw std::runtime_error(path + ":" + std::to_string(lineno) +
                                 ": bad judge table row");
      }
      std::string src = j["src"].get<std::string>();
      if (j.contains("f_refl")) {
        set_reflection_entry(src, j.value("y_init", ""),
                             j["f_refl"].get<std::string>(),
                             j["score"].get<double>());
      } else if (j.contains("hyp")) {
        set_entry(src, j["hyp"].get<std::string>(), j["score"].get<double>());
      } else if (j.contains("target")) {
        set_target(src, j["target"].get<std::string>());
      } else {
        throw std::runtime_error(path + ":" + std::to_string(lineno) +
                                 ": judge table row matches no known shape");
      }
      ++rows;
    }
    return rows;
  }

  double fallback_translation_score(const std::string& src,
                                    const std::string& hyp) const {
    auto it = targets_.find(src);
    const std::string& target = it != targets_.end() ? it->second : src;
    return quantize_half(100.0 * similarity(hyp, target));
  }

 protected:
  JudgeScore do_score_translation(const std::string& src,
                                  const std::string& hyp) override {
    if (auto it = table_.find(key(src, hyp)); it != table_.end()) {
      return {it->second, "mock:table"};
    }
    return {fallback_translation_score(src, hyp), "mock:fallback"};
  }

  JudgeScore do_score_reflection(const std::string& src,
                                 const std::string& y_init,
                                 const std::string& f_refl) override {
    if (auto it = refl_table_.find(key(src, y_init, f_refl));
        it != refl_table_.end()) {
      return {it->second, "mock:table"};
    }
    // stable pseudo-score in [50, 90], 0.5 steps
    uint64_t h = fnv1a64(key(src, y_init, f_refl));
    return {50.0 + static_cast<double>(h % 81) / 2.0, "mock:fallback"};
  }

 private:
  static std::string key(std::string_view a, std::string_view b,
                         std::string_view c = {}) {
    std::string k;
    k.reserve(a.size() + b.size() + c.size() + 2);
    k.append(a);
    k += '\x1f';
    k.append(b);
    if (!c.empty()) {
      k += '\x1f';
      k.append(c);
    }
    return k;
  }

  static double quantize_half(double v) { return std::round(v * 2.0) / 2.0; }

  static double similarity(const std::string& a, const std::string& b) {
    if (a == b) return 1.0;
    auto ca = utf8_codepoints(a);
    auto cb = utf8_codepoints(b);
    size_t longest = std::max(ca.size(), cb.size());
    if (longest == 0) return 1.0;
    double d = static_cast<double>(levenshtein(ca, cb));
    return 1.0 - d / static_cast<double>(longest);
  }

  std::map<std::string, double> table_;
  std::map<std::string, double> refl_table_;
  std::map<std::string, std::string> targets_;
};

// Judge over a chat endpoint. Re-asks up to three times when a reply has no
// parsable number, then reports UnparsableScore.
class RemoteJudge final : public Judge {
 public:
  explicit RemoteJudge(GatewayClient& gateway, std::string system_prompt = {})
      : gateway_(gateway), system_prompt_(std::move(system_prompt)) {}

 protected:
  JudgeScore do_score_translation(const std::string& src,
                                  const std::string& hyp) override {
    return ask(grf_prompt(src, hyp));
  }
  JudgeScore do_score_reflection(const std::string& src,
                                 const std::string& y_init,
                                 const std::string& f_refl) override {
    return ask(reflection_rubric_prompt(src, y_init, f_refl));
  }

 private:
  JudgeScore ask(const std::string& prompt) {
    std::string last_reply;
    for (int attempt = 0; attempt < kParseAttempts; ++attempt) {
      ChatExchange ex = gateway_.chat_complete(system_prompt_, prompt);
      last_reply = ex.reply;
      try {
        return {parse_judge_reply(ex.reply), ex.reply};
      } catch (const UnparsableScore&) {
        // re-ask; the backend may produce a numeric reply on another sample
      }
    }
    throw UnparsableScore(last_reply);
  }

  static constexpr int kParseAttempts = 3;

  GatewayClient& gateway_;
  std::string system_prompt_;
};

}  // namespace reflectmt
