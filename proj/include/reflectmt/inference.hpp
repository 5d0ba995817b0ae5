// SPDX-License-Identifier: Apache-2.0
//
// Inference over structured generations. Full mode consumes the whole
// stream and returns the refined translation (the final_answer payload).
// Early-stop mode cancels the stream at </answer> and returns the first-pass
// translation, paying only for the tokens actually emitted.

#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "reflectmt/gateway.hpp"
#include "reflectmt/judge.hpp"
#include "reflectmt/structured_output.hpp"
#include "reflectmt/util.hpp"

namespace reflectmt {

enum class InferenceMode { Full, EarlyStop };

inline std::string_view mode_name(InferenceMode m) {
  return m == InferenceMode::Full ? "full" : "early-stop";
}

// Pull-based token stream; next() yields the next emitted symbol (or chunk)
// until exhausted. Not pulling further is the cancel signal.
class TokenStream {
 public:
  virtual ~TokenStream() = default;
  virtual std::optional<std::string> next() = 0;
};

class ScriptedStream final : public TokenStream {
 public:
  explicit ScriptedStream(std::vector<std::string> chunks)
      : chunks_(std::move(chunks)) {}

  std::optional<std::string> next() override {
    if (pos_ >= chunks_.size()) return std::nullopt;
    return chunks_[pos_++];
  }

 private:
  std::vector<std::string> chunks_;
  size_t pos_ = 0;
};

// Toy tokenizer: each grammar tag is a single vocabulary symbol; everything
// else is one symbol per UTF-8 code point.
inline std::vector<std::string> tokenize_symbols(const std::string& text) {
  std::vector<std::string> symbols;
  size_t i = 0;
  while (i < text.size()) {
    if (text[i] == '<') {
      bool matched = false;
      for (const auto& tag : grammar_tags()) {
        if (text.compare(i, tag.size(), tag) == 0) {
          symbols.emplace_back(tag);
          i += tag.size();
          matched = true;
          break;
        }
      }
      if (matched) continue;
    }
    size_t len = 1;
    unsigned char lead = static_cast<unsigned char>(text[i]);
    if (lead >= 0xF0) len = 4;
    else if (lead >= 0xE0) len = 3;
    else if (lead >= 0xC0) len = 2;
    len = std::min(len, text.size() - i);
    symbols.push_back(text.substr(i, len));
    i += len;
  }
  return symbols;
}

using GeneratorFactory =
    std::function<std::unique_ptr<TokenStream>(const std::string& src)>;

// Canned generator: source sentence -> full structured generation, streamed
// one vocabulary symbol at a time.
inline GeneratorFactory make_scripted_factory(
    std::map<std::string, std::string> outputs) {
  auto shared =
      std::make_shared<std::map<std::string, std::string>>(std::move(outputs));
  return [shared](const std::string& src) -> std::unique_ptr<TokenStream> {
    auto it = shared->find(src);
    if (it == shared->end()) {
      throw std::runtime_error("no scripted generation for src: " + src);
    }
    return std::make_unique<ScriptedStream>(tokenize_symbols(it->second));
  };
}

// One sentence per non-blank line.
inline std::vector<std::string> corpus_from_text(const std::string& text) {
  std::vector<std::string> corpus;
  size_t start = 0;
  while (start <= text.size()) {
    size_t nl = text.find('\n', start);
    std::string_view line(text.data() + start,
                          (nl == std::string::npos ? text.size() : nl) - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    auto t = trim_view(line);
    if (!t.empty()) corpus.emplace_back(t);
    if (nl == std::string::npos) break;
    start = nl + 1;
  }
  return corpus;
}

// JSONL objects carrying at least {"src": "..."}.
inline std::vector<std::string> corpus_from_jsonl(const std::string& text,
                                                  const std::string& where) {
  std::vector<std::string> corpus;
  size_t start = 0;
  size_t lineno = 0;
  while (start <= text.size()) {
    size_t nl = text.find('\n', start);
    std::string line = text.substr(
        start, (nl == std::string::npos ? text.size() : nl) - start);
    ++lineno;
    if (nl == std::string::npos && line.empty()) break;
    if (!trim_view(line).empty()) {
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(line);
      } catch (const nlohmann::json::exception&) {
        throw std::runtime_error(where + ":" + std::to_string(lineno) +
                                 ": bad JSON");
      }
      if (!j.is_object() || !j.contains("src") || !j["src"].is_string()) {
        throw std::runtime_error(where + ":" + std::to_string(lineno) +
                                 ": expected an object with a string src");
      }
      corpus.push_back(j["src"].get<std::string>());
    }
    if (nl == std::string::npos) break;
    start = nl + 1;
  }
  return corpus;
}

inline std::vector<std::string> load_corpus(const std::string& path) {
  std::string text = read_file(path);
  if (path.size() >= 6 && path.compare(path.size() - 6, 6, ".jsonl") == 0) {
    return corpus_from_jsonl(text, path);
  }
  return corpus_from_text(text);
}

struct InferenceResult {
  std::string translation;
  bool parsed = false;  // full: grammar parse ok; early-stop: </answer> seen
  std::string raw;      // everything consumed from the stream
  size_t tokens = 0;    // symbols consumed
};

inline InferenceResult infer(TokenStream& stream, InferenceMode mode) {
  InferenceResult r;
  if (mode == InferenceMode::EarlyStop) {
    EarlyStopScan scan;
    while (!scan.stop_found()) {
      auto chunk = stream.next();
      if (!chunk) break;
      ++r.tokens;
      r.raw += *chunk;
      scan.feed(*chunk);
    }
    if (scan.stop_found()) {
      r.parsed = true;
      // trimmed to agree with what a full parse would extract as y_init
      r.translation = std::string(trim_view(scan.answer_payload()));
    } else {
      r.translation = r.raw;
    }
    return r;
  }
  while (auto chunk = stream.next()) {
    ++r.tokens;
    r.raw += *chunk;
  }
  auto parsed = parse_structured(r.raw);
  if (parsed.ok()) {
    r.parsed = true;
    r.translation = parsed->y_fin;
  } else {
    r.translation = r.raw;
  }
  return r;
}

// Endpoint-backed variant. Early-stop rides the gateway's streaming cancel;
// full mode uses a plain completion. Token counts come from backend usage
// when reported, otherwise from the streamed event count.
inline InferenceResult infer_remote(GatewayClient& gateway,
                                    const std::string& system_prompt,
                                    const std::string& user_prompt,
                                    InferenceMode mode) {
  InferenceResult r;
  if (mode == InferenceMode::EarlyStop) {
    auto ex = gateway.chat_stream(
        system_prompt, user_prompt, {},
        [](const EarlyStopScan& scan) { return scan.stop_found(); });
    r.raw = ex.reply;
    r.tokens = ex.usage ? static_cast<size_t>(ex.usage->completion_tokens)
                        : tokenize_symbols(ex.reply).size();
    EarlyStopScan scan;
    scan.feed(ex.reply);
    if (scan.stop_found()) {
      r.parsed = true;
      r.translation = std::string(trim_view(scan.answer_payload()));
    } else {
      r.translation = ex.reply;
    }
    return r;
  }
  auto ex = gateway.chat_complete(system_prompt, user_prompt);
  r.raw = ex.reply;
  r.tokens = ex.usage ? static_cast<size_t>(ex.usage->completion_tokens)
                      : tokenize_symbols(ex.reply).size();
  auto parsed = parse_structured(ex.reply);
  if (parsed.ok()) {
    r.parsed = true;
    r.translation = parsed->y_fin;
  } else {
    r.translation = ex.reply;
  }
  return r;
}

struct TokenStats {
  std::vector<size_t> per_sentence;

  double mean() const {
    if (per_sentence.empty()) return 0.0;
    double acc = 0.0;
    for (size_t t : per_sentence) acc += static_cast<double>(t);
    return acc / static_cast<double>(per_sentence.size());
  }
};

// 1 - early/full; only defined against a positive full-mode mean
inline double token_reduction(double mean_full, double mean_early) {
  if (mean_full <= 0.0) {
    throw std::invalid_argument("token_reduction needs a positive full mean");
  }
  return 1.0 - mean_early / mean_full;
}

inline std::string format_percent(double fraction) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f%%", fraction * 100.0);
  return std::string(buf);
}

struct SentenceRow {
  size_t index = 0;
  std::string src;
  std::string translation;
  bool parsed = false;
  bool scored = false;
  double grf = 0.0;
  size_t tokens = 0;
  std::string error;
};

struct InferenceReport {
  InferenceMode mode = InferenceMode::Full;
  std::string counting_source = "stream-symbols";
  std::vector<SentenceRow> rows;
  size_t failures = 0;
  bool empty = false;
  double mean_grf = 0.0;     // over scored rows
  double mean_tokens = 0.0;  // over all rows
  TokenStats tokens;
};

// Scores each sentence's translation with the judge. Unparsed generations
// and judge errors are recorded per row and counted, never fatal.
inline InferenceReport evaluate_corpus(const std::vector<std::string>& corpus,
                                       const GeneratorFactory& factory,
                                       Judge& judge, InferenceMode mode) {
  InferenceReport rep;
  rep.mode = mode;
  if (corpus.empty()) {
    rep.empty = true;
    return rep;
  }
  size_t scored = 0;
  for (size_t i = 0; i < corpus.size(); ++i) {
    SentenceRow row;
    row.index = i;
    row.src = corpus[i];
    try {
      auto stream = factory(corpus[i]);
      InferenceResult res = infer(*stream, mode);
      row.translation = res.translation;
      row.parsed = res.parsed;
      row.tokens = res.tokens;
      if (!res.parsed) {
        row.error = "unparsed generation";
      } else {
        row.grf = judge.score_translation(corpus[i], row.translation).value;
        row.scored = true;
      }
    } catch (const std::exception& e) {
      row.error = e.what();
    }
    if (!row.scored) ++rep.failures;
    rep.tokens.per_sentence.push_back(row.tokens);
    if (row.scored) {
      rep.mean_grf += row.grf;
      ++scored;
    }
    rep.mean_tokens += static_cast<double>(row.tokens);
    rep.rows.push_back(std::move(row));
  }
  if (scored > 0) rep.mean_grf /= static_cast<double>(scored);
  rep.mean_tokens /= static_cast<double>(rep.rows.size());
  return rep;
}

namespace detail {

inline std::string csv_quote(const std::string& field) {
  bool needs = field.find_first_of(",\"\n\r") != std::string::npos;
  if (!needs) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += "\"\"";
    else out += c;
  }
  out += '"';
  return out;
}

}  // namespace detail

inline constexpr const char* kReportCsvHeader =
    "index,src_hash,mode,translation,grf,tokens,parsed,error";

inline std::string report_to_csv(const InferenceReport& rep) {
  std::string out = kReportCsvHeader;
  out += '\n';
  for (const auto& row : rep.rows) {
    out += std::to_string(row.index);
    out += ',';
    out += fnv1a64_hex(row.src);
    out += ',';
    out += mode_name(rep.mode);
    out += ',';
    out += detail::csv_quote(row.translation);
    out += ',';
    out += row.scored ? format_double(row.grf) : "";
    out += ',';
    out += std::to_string(row.tokens);
    out += ',';
    out += row.parsed ? '1' : '0';
    out += ',';
    out += detail::csv_quote(row.error);
    out += '\n';
  }
  return out;
}

// JSON summary; pass the paired full-mode report to include the reduction.
inline nlohmann::ordered_json summary_json(
    const InferenceReport& rep, const InferenceReport* full_baseline = nullptr) {
  nlohmann::ordered_json j;
  j["mode"] = mode_name(rep.mode);
  j["sentences"] = rep.rows.size();
  j["failures"] = rep.failures;
  j["empty"] = rep.empty;
  j["mean_grf"] = rep.mean_grf;
  j["mean_tokens"] = rep.mean_tokens;
  j["counting_source"] = rep.counting_source;
  if (full_baseline != nullptr) {
    double red = token_reduction(full_baseline->mean_tokens, rep.mean_tokens);
    j["token_reduction"] = red;
    j["token_reduction_pct"] = format_percent(red);
  }
  return j;
}

}  // namespace reflectmt
