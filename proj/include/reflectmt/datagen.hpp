// SPDX-License-Identifier: Apache-2.0
//
// Multi-agent reflective data synthesis. A Translator drafts, a Reflector
// scores and critiques, and the loop iterates until the score clears a
// threshold or the round budget runs out. Surviving chains are filtered and
// rendered into four-tag SFT records.

#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <json.hpp>

#include "reflectmt/gateway.hpp"
#include "reflectmt/judge.hpp"
#include "reflectmt/reward.hpp"
#include "reflectmt/structured_output.hpp"
#include "reflectmt/util.hpp"

namespace reflectmt {

struct RoundRecord {
  int round = 0;  // 1-based, consecutive
  std::string translation;
  std::string reflection;
  double score = 0.0;

  bool operator==(const RoundRecord&) const = default;
};

struct ReflectiveSample {
  std::string src;
  std::optional<std::string> ref;  // reference translation when available
  std::string final_translation;
  int total_rounds = 0;
  double final_score = 0.0;
  int best_round = 0;
  std::vector<RoundRecord> history;

  bool operator==(const ReflectiveSample&) const = default;
};

struct GenConfig {
  double theta = 90.0;  // stop once the latest round scores at least this
  int k_max = 5;        // hard round budget
  EndpointConfig translator;
  EndpointConfig reflector;
};

inline void validate_gen_config(const GenConfig& cfg) {
  if (!(cfg.theta > 0.0 && cfg.theta <= 100.0)) {
    throw std::invalid_argument("gen config: theta must be in (0, 100]");
  }
  if (cfg.k_max < 1) {
    throw std::invalid_argument("gen config: k_max must be >= 1");
  }
}

enum class FilterReason { Kept, InvalidFormat, LowScore, Degradation };

inline std::string_view to_string(FilterReason r) {
  switch (r) {
    case FilterReason::Kept: return "kept";
    case FilterReason::InvalidFormat: return "invalid_format";
    case FilterReason::LowScore: return "low_score";
    case FilterReason::Degradation: return "degradation";
  }
  return "?";
}

struct FilterVerdict {
  bool keep = false;
  FilterReason reason = FilterReason::Kept;
};

class Translator {
 public:
  virtual ~Translator() = default;
  virtual std::string translate(const std::string& src) = 0;
  virtual std::string revise(const std::string& src, const std::string& prev,
                             const std::string& reflection, double score) = 0;
};

class Reflector {
 public:
  struct Review {
    double score = 0.0;
    std::string reflection;
  };

  virtual ~Reflector() = default;
  virtual Review review(const std::string& src, const std::string& hyp) = 0;
};

// Derives best round, final score, and final translation from a chain.
// Ties on score resolve to the earliest round.
inline ReflectiveSample make_reflective_sample(
    std::string src, std::optional<std::string> ref,
    std::vector<RoundRecord> history) {
  if (history.empty()) {
    throw std::invalid_argument("reflective sample needs at least one round");
  }
  ReflectiveSample s;
  s.src = std::move(src);
  s.ref = std::move(ref);
  s.history = std::move(history);
  s.total_rounds = static_cast<int>(s.history.size());
  size_t best = 0;
  for (size_t k = 1; k < s.history.size(); ++k) {
    if (s.history[k].score > s.history[best].score) best = k;
  }
  s.best_round = static_cast<int>(best) + 1;
  s.final_score = s.history[best].score;
  s.final_translation = s.history[best].translation;
  return s;
}

// The refinement loop: draft, review, and revise while the latest score is
// below theta and rounds remain. Agent failures propagate; no partial
// sample escapes.
inline ReflectiveSample run_refinement_loop(
    const std::string& src, const GenConfig& cfg, Translator& translator,
    Reflector& reflector, std::optional<std::string> ref = std::nullopt) {
  validate_gen_config(cfg);
  if (src.empty()) {
    throw std::invalid_argument("refinement loop needs a non-empty src");
  }
  std::vector<RoundRecord> history;
  std::string y = translator.translate(src);
  Reflector::Review rev = reflector.review(src, y);
  history.push_back(RoundRecord{1, y, rev.reflection, rev.score});
  while (history.back().score < cfg.theta &&
         static_cast<int>(history.size()) < cfg.k_max) {
    const RoundRecord& prev = history.back();
    y = translator.revise(src, prev.translation, prev.reflection, prev.score);
    rev = reflector.review(src, y);
    history.push_back(RoundRecord{static_cast<int>(history.size()) + 1, y,
                                  rev.reflection, rev.score});
  }
  return make_reflective_sample(src, std::move(ref), std::move(history));
}

// Renders the chain into the four-tag SFT shape: round 1 supplies the
// initial translation and the reflection, the best round supplies the final
// translation, and the revision flag reports whether more than one round
// happened.
inline std::string to_sft_record(const ReflectiveSample& s) {
  if (s.history.empty()) {
    throw std::invalid_argument("to_sft_record: empty history");
  }
  StructuredOutput o;
  o.y_init = s.history.front().translation;
  o.f_refl = s.history.front().reflection;
  bool revised = s.total_rounds > 1;
  o.v_rev = revised ? RevisionFlag::Yes : RevisionFlag::No;
  o.v_rev_surface = revised ? "是" : "否";
  o.y_fin = s.final_translation;
  return render_structured(o);
}

// Keep a sample only when its SFT rendering is grammatical, its last-round
// score r_K reaches 40, and the chain did not end worse than it started
// (r_K >= r_0; equality is not degradation).
inline FilterVerdict filter_sample(const ReflectiveSample& s) {
  try {
    std::string record = to_sft_record(s);
    if (validate_format(record) != 1) {
      return {false, FilterReason::InvalidFormat};
    }
  } catch (const RenderError&) {
    return {false, FilterReason::InvalidFormat};
  }
  double r_first = s.history.front().score;
  double r_last = s.history.back().score;
  if (r_last < 40.0) return {false, FilterReason::LowScore};
  if (r_last < r_first) return {false, FilterReason::Degradation};
  return {true, FilterReason::Kept};
}

// --- JSONL dataset I/O ---------------------------------------------------

inline void validate_sample(const ReflectiveSample& s,
                            const std::function<void(const std::string&)>& fail) {
  if (s.history.empty()) {
    fail("history must be non-empty");
    return;
  }
  if (s.total_rounds != static_cast<int>(s.history.size())) {
    fail("total_rounds must equal the history length");
  }
  for (size_t k = 0; k < s.history.size(); ++k) {
    if (s.history[k].round != static_cast<int>(k) + 1) {
      fail("round numbers must be consecutive starting at 1");
    }
    if (s.history[k].score < 0.0 || s.history[k].score > 100.0) {
      fail("score out of [0,100]");
    }
  }
  size_t best = 0;
  for (size_t k = 1; k < s.history.size(); ++k) {
    if (s.history[k].score > s.history[best].score) best = k;
  }
  if (s.best_round != static_cast<int>(best) + 1) {
    fail("best_round must be the earliest top-scoring round");
  }
  if (s.final_score != s.history[best].score) {
    fail("final_score must match the best round's score");
  }
  if (s.final_translation != s.history[best].translation) {
    fail("final_translation must match the best round's translation");
  }
}

namespace detail {

// integral scores print as integers, matching the usual dataset look
inline nlohmann::ordered_json score_json(double v) {
  if (v == static_cast<double>(static_cast<int64_t>(v))) {
    return static_cast<int64_t>(v);
  }
  return v;
}

}  // namespace detail

inline nlohmann::ordered_json sample_to_json(const ReflectiveSample& s) {
  nlohmann::ordered_json j;
  j["src"] = s.src;
  if (s.ref) j["ref"] = *s.ref;
  j["final_translation"] = s.final_translation;
  j["total_rounds"] = s.total_rounds;
  j["final_score"] = detail::score_json(s.final_score);
  j["best_round"] = s.best_round;
  nlohmann::ordered_json hist = nlohmann::ordered_json::array();
  for (const auto& r : s.history) {
    nlohmann::ordered_json h;
    h["round"] = r.round;
    h["translation"] = r.translation;
    h["reflection"] = r.reflection;
    h["score"] = detail::score_json(r.score);
    hist.push_back(std::move(h));
  }
  j["history"] = std::move(hist);
  return j;
}

inline ReflectiveSample sample_from_json(const nlohmann::json& j,
                                         const std::string& where) {
  auto fail = [&](const std::string& msg) -> void {
    throw std::runtime_error(where + ": " + msg);
  };
  if (!j.is_object()) fail("expected a JSON object");
  auto need = [&](const char* field) -> const nlohmann::json& {
    if (!j.contains(field)) fail(std::string("missing field: ") + field);
    return j.at(field);
  };
  ReflectiveSample s;
  const auto& src = need("src");
  if (!src.is_string()) fail("src must be a string");
  s.src = src.get<std::string>();
  if (j.contains("ref")) {
    if (!j["ref"].is_string()) fail("ref must be a string");
    s.ref = j["ref"].get<std::string>();
  }
  const auto& fin = need("final_translation");
  if (!fin.is_string()) fail("final_translation must be a string");
  s.final_translation = fin.get<std::string>();
  const auto& rounds = need("total_rounds");
  if (!rounds.is_number_integer()) fail("total_rounds must be an integer");
  s.total_rounds = rounds.get<int>();
  const auto& score = need("final_score");
  if (!score.is_number()) fail("final_score must be a number");
  s.final_score = score.get<double>();
  const auto& best = need("best_round");
  if (!best.is_number_integer()) fail("best_round must be an integer");
  s.best_round = best.get<int>();
  const auto& hist = need("history");
  if (!hist.is_array()) fail("history must be an array");
  for (const auto& h : hist) {
    if (!h.is_object()) fail("history entries must be objects");
    RoundRecord r;
    if (!h.contains("round") || !h["round"].is_number_integer()) {
      fail("history entry needs an integer round");
    }
    r.round = h["round"].get<int>();
    if (!h.contains("translation") || !h["translation"].is_string()) {
      fail("history entry needs a translation string");
    }
    r.translation = h["translation"].get<std::string>();
    if (!h.contains("reflection") || !h["reflection"].is_string()) {
      fail("history entry needs a reflection string");
    }
    r.reflection = h["reflection"].get<std::string>();
    if (!h.contains("score") || !h["score"].is_number()) {
      fail("history entry needs a numeric score");
    }
    r.score = h["score"].get<double>();
    s.history.push_back(std::move(r));
  }
  validate_sample(s, fail);
  return s;
}

inline void write_samples_jsonl(const std::vector<ReflectiveSample>& samples,
                                const std::string& path) {
  std::string out;
  for (size_t i = 0; i < samples.size(); ++i) {
    validate_sample(samples[i], [&](const std::string& msg) {
      throw std::runtime_error(path + ": sample " + std::to_string(i + 1) +
                               ": " + msg);
    });
    out += sample_to_json(samples[i]).dump();
    out += '\n';
  }
  write_file(path, out);
}

inline std::vector<ReflectiveSample> read_samples_jsonl(
    const std::string& path) {
  std::vector<ReflectiveSample> samples;
  std::string text = read_file(path);
  size_t pos = 0, lineno = 0;
  while (pos < text.size()) {
    size_t eol = text.find('\n', pos);
    if (eol == std::string::npos) eol = text.size();
    std::string line = text.substr(pos, eol - pos);
    pos = eol + 1;
    ++lineno;
    if (trim_view(line).empty()) continue;
    std::string where = path + ":" + std::to_string(lineno);
    auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) throw std::runtime_error(where + ": bad JSON");
    samples.push_back(sample_from_json(j, where));
  }
  return samples;
}

inline void write_sft_jsonl(const std::vector<ReflectiveSample>& samples,
                            const std::string& path) {
  std::string out;
  for (const auto& s : samples) {
    nlohmann::ordered_json j;
    j["src"] = s.src;
    j["target"] = to_sft_record(s);
    out += j.dump();
    out += '\n';
  }
  write_file(path, out);
}

// Post-filter curation: trims the larger of the easy/difficult buckets
// (by final score) down to the smaller one, leaving medium untouched.
// Victims are picked by a seeded shuffle; survivors keep their order.
inline std::vector<ReflectiveSample> rebalance_buckets(
    const std::vector<ReflectiveSample>& samples, uint64_t seed) {
  std::vector<size_t> easy, difficult;
  for (size_t i = 0; i < samples.size(); ++i) {
    switch (difficulty_bucket(samples[i].final_score)) {
      case Difficulty::Easy: easy.push_back(i); break;
      case Difficulty::Difficult: difficult.push_back(i); break;
      case Difficulty::Medium: break;
    }
  }
  std::vector<size_t>& larger = easy.size() >= difficult.size() ? easy : difficult;
  size_t target = std::min(easy.size(), difficult.size());
  Rng rng(seed);
  rng.shuffle(larger);
  std::vector<bool> drop(samples.size(), false);
  for (size_t k = target; k < larger.size(); ++k) drop[larger[k]] = true;
  std::vector<ReflectiveSample> out;
  out.reserve(samples.size());
  for (size_t i = 0; i < samples.size(); ++i) {
    if (!drop[i]) out.push_back(samples[i]);
  }
  return out;
}

// --- Agents ----------------------------------------------------------------

inline constexpr std::string_view kTranslatorSystemPrompt =
    "You are a professional English-to-Chinese translator. Reply with the "
    "translation only, no commentary.";

inline constexpr std::string_view kTranslatorInitialTemplate =
    "Translate the following text into Chinese.\n\n{src}";

inline constexpr std::string_view kTranslatorRevisionTemplate =
    "Your previous Chinese translation of the source text scored {score} out "
    "of 100.\n\nSource:\n{src}\n\nPrevious translation:\n{prev}\n\nReviewer "
    "feedback:\n{reflection}\n\nProduce an improved Chinese translation. "
    "Reply with the translation only.";

inline constexpr std::string_view kReflectorPromptTemplate =
    "Evaluate the following Chinese translation of the source text. Reply "
    "with a first line of the form \"Score: <number 0-100>\", then a concise "
    "critique listing concrete weaknesses and suggestions.\n\nSource:\n{src}"
    "\n\nTranslation:\n{hyp}";

class RemoteTranslator final : public Translator {
 public:
  explicit RemoteTranslator(GatewayClient& gateway) : gateway_(gateway) {}

  std::string translate(const std::string& src) override {
    auto ex = gateway_.chat_complete(
        std::string(kTranslatorSystemPrompt),
        fill_template(kTranslatorInitialTemplate, {{"src", src}}));
    return std::string(trim_view(ex.reply));
  }

  std::string revise(const std::string& src, const std::string& prev,
                     const std::string& reflection, double score) override {
    auto ex = gateway_.chat_complete(
        std::string(kTranslatorSystemPrompt),
        fill_template(kTranslatorRevisionTemplate,
                      {{"src", src},
                       {"prev", prev},
                       {"reflection", reflection},
                       {"score", format_double(score)}}));
    return std::string(trim_view(ex.reply));
  }

 private:
  GatewayClient& gateway_;
};

class RemoteReflector final : public Reflector {
 public:
  explicit RemoteReflector(GatewayClient& gateway) : gateway_(gateway) {}

  Review review(const std::string& src, const std::string& hyp) override {
    auto ex = gateway_.chat_complete(
        "", fill_template(kReflectorPromptTemplate,
                          {{"src", src}, {"hyp", hyp}}));
    Review r;
    r.score = parse_judge_reply(ex.reply);
    // drop the score line; the rest is the critique
    std::string body = ex.reply;
    size_t nl = body.find('\n');
    if (nl != std::string::npos) {
      std::string first_line = body.substr(0, nl);
      if (trim_view(first_line).starts_with("Score:")) {
        body = body.substr(nl + 1);
      }
    }
    r.reflection = std::string(trim_view(body));
    if (r.reflection.empty()) r.reflection = std::string(trim_view(ex.reply));
    return r;
  }

 private:
  GatewayClient& gateway_;
};

// Deterministic stand-ins for tests and offline runs. The translator derives
// drafts from the source text; each revision appends a round suffix.
class ScriptedTranslator final : public Translator {
 public:
  std::string translate(const std::string& src) override {
    return "初译(" + src + ")";
  }

  std::string revise(const std::string& src, const std::string& prev,
                     const std::string& /*reflection*/,
                     double /*score*/) override {
    (void)src;
    return prev + "·改";
  }
};

// Replays a per-source score schedule in round order, clamping at the last
// entry once exhausted. Reflections are synthesized and always non-empty.
class ScriptedReflector final : public Reflector {
 public:
  explicit ScriptedReflector(
      std::map<std::string, std::vector<double>> schedules)
      : schedules_(std::move(schedules)) {}

  Review review(const std::string& src, const std::string& hyp) override {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = schedules_.find(src);
    if (it == schedules_.end() || it->second.empty()) {
      throw std::runtime_error("scripted reflector: no schedule for src");
    }
    size_t round = cursor_[src]++;
    double score = it->second[std::min(round, it->second.size() - 1)];
    Review r;
    r.score = score;
    r.reflection = "第" + std::to_string(round + 1) + "轮点评:" +
                   (score >= 90.0 ? "译文达标" : "仍需润色:" + hyp);
    return r;
  }

 private:
  std::mutex mu_;
  std::map<std::string, std::vector<double>> schedules_;
  std::map<std::string, size_t> cursor_;
};

// --- Pipeline ----------------------------------------------------------------

struct GenSkip {
  size_t index = 0;
  std::string src;
  FilterReason reason = FilterReason::Kept;
};

struct GenFailure {
  size_t index = 0;
  std::string src;
  std::string error;
};

struct PipelineResult {
  std::vector<ReflectiveSample> kept;  // input order
  std::vector<GenSkip> filtered;
  std::vector<GenFailure> aborted;
};

// Bounded worker pool over independent sources. Results are re-assembled in
// input order so identical runs write identical files. Agents must be safe
// for concurrent calls (both shipped agents are).
inline PipelineResult run_pipeline(const std::vector<std::string>& srcs,
                                   const GenConfig& cfg,
                                   Translator& translator, Reflector& reflector,
                                   size_t workers = 8) {
  validate_gen_config(cfg);
  if (workers == 0) workers = 1;
  workers = std::min(workers, std::max<size_t>(srcs.size(), 1));

  enum class Outcome { Kept, Filtered, Aborted };
  struct Slot {
    Outcome outcome = Outcome::Aborted;
    ReflectiveSample sample;
    FilterReason reason = FilterReason::Kept;
    std::string error;
  };
  std::vector<Slot> slots(srcs.size());
  std::atomic<size_t> next{0};

  auto work = [&] {
    while (true) {
      size_t i = next.fetch_add(1);
      if (i >= srcs.size()) return;
      Slot& slot = slots[i];
      try {
        ReflectiveSample s =
            run_refinement_loop(srcs[i], cfg, translator, reflector);
        FilterVerdict v = filter_sample(s);
        if (v.keep) {
          slot.outcome = Outcome::Kept;
          slot.sample = std::move(s);
        } else {
          slot.outcome = Outcome::Filtered;
          slot.reason = v.reason;
        }
      } catch (const std::exception& e) {
        slot.outcome = Outcome::Aborted;
        slot.error = e.what();
      }
    }
  };

  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (size_t w = 0; w < workers; ++w) pool.emplace_back(work);
  for (auto& t : pool) t.join();

  PipelineResult result;
  for (size_t i = 0; i < srcs.size(); ++i) {
    Slot& slot = slots[i];
    switch (slot.outcome) {
      case Outcome::Kept:
        result.kept.push_back(std::move(slot.sample));
        break;
      case Outcome::Filtered:
        result.filtered.push_back(GenSkip{i, srcs[i], slot.reason});
        break;
      case Outcome::Aborted:
        result.aborted.push_back(GenFailure{i, srcs[i], slot.error});
        break;
    }
  }
  return result;
}

}  // namespace reflectmt
