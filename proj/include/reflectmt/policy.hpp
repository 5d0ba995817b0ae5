// SPDX-License-Identifier: Apache-2.0
//
// Desk-scale policy: a softmax over a finite candidate set of structured
// outputs per source prompt. Log-probabilities, gradients, and KL are exact,
// which makes every term of the GRPO objective independently checkable.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "reflectmt/judge.hpp"
#include "reflectmt/structured_output.hpp"
#include "reflectmt/util.hpp"

namespace reflectmt {

class PolicyError : public std::runtime_error {
 public:
  enum class Kind { UnknownPrompt, IndexOutOfRange, MismatchedCandidateSets };
  PolicyError(Kind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

struct CandidateInfo {
  std::string text;          // full four-tag structured output
  bool format_valid = false; // malformed candidates are allowed but flagged
  // payloads cached from a successful parse, empty otherwise
  std::string y_init;
  std::string y_fin;
  std::string f_refl;
};

struct MockScoreRow {
  double init = 0.0;
  double fin = 0.0;
  std::optional<double> refl;
};

struct CandidateSet {
  std::string prompt_id;
  std::string src;
  std::vector<CandidateInfo> candidates;
  // aligned with candidates when the task file carries mock scores
  std::vector<MockScoreRow> mock_scores;
};

inline CandidateInfo make_candidate(std::string text) {
  CandidateInfo c;
  c.text = std::move(text);
  auto parsed = parse_structured(c.text);
  c.format_valid = parsed.ok();
  if (parsed.ok()) {
    c.y_init = parsed->y_init;
    c.y_fin = parsed->y_fin;
    c.f_refl = parsed->f_refl;
  }
  return c;
}

// Task file: one JSON object per line,
//   {"prompt_id": ..., "src": ..., "candidates": [text, ...],
//    "mock_scores": [{"init": s, "fin": s, "refl": s?}, ...]?}
inline std::vector<CandidateSet> load_candidate_sets_jsonl(
    const std::string& path) {
  std::vector<CandidateSet> sets;
  std::string text = read_file(path);
  size_t pos = 0, lineno = 0;
  std::set<std::string> seen_ids;
  while (pos < text.size()) {
    size_t eol = text.find('\n', pos);
    if (eol == std::string::npos) eol = text.size();
    std::string line = text.substr(pos, eol - pos);
    pos = eol + 1;
    ++lineno;
    if (trim_view(line).empty()) continue;
    auto where = [&] { return path + ":" + std::to_string(lineno); };
    auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) throw std::runtime_error(where() + ": bad JSON");
    CandidateSet cs;
    cs.prompt_id = j.at("prompt_id").get<std::string>();
    cs.src = j.at("src").get<std::string>();
    if (!seen_ids.insert(cs.prompt_id).second) {
      throw std::runtime_error(where() + ": duplicate prompt_id " + cs.prompt_id);
    }
    std::set<std::string> texts;
    for (const auto& c : j.at("candidates")) {
      std::string t = c.get<std::string>();
      if (!texts.insert(t).second) {
        throw std::runtime_error(where() + ": duplicate candidate text");
      }
      cs.candidates.push_back(make_candidate(std::move(t)));
    }
    if (cs.candidates.size() < 2) {
      throw std::runtime_error(where() + ": candidate set needs size >= 2");
    }
    if (j.contains("mock_scores")) {
      const auto& ms = j["mock_scores"];
      if (ms.size() != cs.candidates.size()) {
        throw std::runtime_error(where() + ": mock_scores misaligned");
      }
      for (const auto& m : ms) {
        MockScoreRow row;
        row.init = m.at("init").get<double>();
        row.fin = m.at("fin").get<double>();
        if (m.contains("refl")) row.refl = m["refl"].get<double>();
        cs.mock_scores.push_back(row);
      }
    }
    sets.push_back(std::move(cs));
  }
  return sets;
}

inline void seed_mock_judge(const std::vector<CandidateSet>& sets,
                            MockJudge& judge) {
  for (const auto& cs : sets) {
    for (size_t i = 0; i < cs.mock_scores.size(); ++i) {
      const auto& cand = cs.candidates[i];
      const auto& row = cs.mock_scores[i];
      if (!cand.format_valid) continue;
      judge.set_entry(cs.src, cand.y_init, row.init);
      judge.set_entry(cs.src, cand.y_fin, row.fin);
      if (row.refl) {
        judge.set_reflection_entry(cs.src, cand.y_init, cand.f_refl, *row.refl);
      }
    }
  }
}

struct PolicyParams {
  std::vector<std::vector<double>> theta;  // logits, ragged per prompt
  uint64_t version = 0;
};

// Pure vector-level softmax math, usable on raw logit vectors (this is what
// finite-difference checks perturb).
namespace policy_math {

inline std::vector<double> log_softmax(const std::vector<double>& theta,
                                       double temperature) {
  std::vector<double> z(theta.size());
  for (size_t j = 0; j < theta.size(); ++j) z[j] = theta[j] / temperature;
  double zmax = *std::max_element(z.begin(), z.end());
  double sum = 0.0;
  for (double v : z) sum += std::exp(v - zmax);
  double lse = zmax + std::log(sum);
  for (double& v : z) v -= lse;
  return z;
}

inline std::vector<double> softmax(const std::vector<double>& theta,
                                   double temperature) {
  auto lp = log_softmax(theta, temperature);
  for (double& v : lp) v = std::exp(v);
  return lp;
}

inline double log_prob(const std::vector<double>& theta, size_t index,
                       double temperature) {
  return log_softmax(theta, temperature)[index];
}

// d log p_index / d theta_j = (1[j=index] - p_j) / temperature
inline std::vector<double> grad_log_prob(const std::vector<double>& theta,
                                         size_t index, double temperature) {
  auto g = softmax(theta, temperature);
  for (double& v : g) v = -v / temperature;
  g[index] += 1.0 / temperature;
  return g;
}

inline double kl(const std::vector<double>& theta_p,
                 const std::vector<double>& theta_q, double temperature) {
  auto lp = log_softmax(theta_p, temperature);
  auto lq = log_softmax(theta_q, temperature);
  double acc = 0.0;
  for (size_t j = 0; j < lp.size(); ++j) acc += std::exp(lp[j]) * (lp[j] - lq[j]);
  return std::max(0.0, acc);
}

// d KL(p||q) / d theta_p_j = (p_j / T) * ((log p_j - log q_j) - KL)
inline std::vector<double> kl_gradient(const std::vector<double>& theta_p,
                                       const std::vector<double>& theta_q,
                                       double temperature) {
  auto lp = log_softmax(theta_p, temperature);
  auto lq = log_softmax(theta_q, temperature);
  double klv = 0.0;
  for (size_t j = 0; j < lp.size(); ++j) klv += std::exp(lp[j]) * (lp[j] - lq[j]);
  std::vector<double> g(lp.size());
  for (size_t j = 0; j < lp.size(); ++j) {
    g[j] = std::exp(lp[j]) / temperature * ((lp[j] - lq[j]) - klv);
  }
  return g;
}

inline std::vector<size_t> sample(const std::vector<double>& theta, size_t n,
                                  double temperature, Rng& rng) {
  auto p = softmax(theta, temperature);
  std::vector<size_t> draws(n);
  for (size_t i = 0; i < n; ++i) {
    double u = rng.next_unit();
    double cum = 0.0;
    size_t pick = p.size() - 1;
    for (size_t j = 0; j < p.size(); ++j) {
      cum += p[j];
      if (u < cum) {
        pick = j;
        break;
      }
    }
    draws[i] = pick;
  }
  return draws;
}

}  // namespace policy_math

class ToyPolicy {
 public:
  explicit ToyPolicy(std::vector<CandidateSet> sets) : sets_(std::move(sets)) {
    params_.theta.resize(sets_.size());
    for (size_t i = 0; i < sets_.size(); ++i) {
      params_.theta[i].assign(sets_[i].candidates.size(), 0.0);
      index_[sets_[i].prompt_id] = i;
    }
  }

  size_t prompt_count() const { return sets_.size(); }

  size_t prompt_index(const std::string& prompt_id) const {
    auto it = index_.find(prompt_id);
    if (it == index_.end()) {
      throw PolicyError(PolicyError::Kind::UnknownPrompt,
                        "unknown prompt: " + prompt_id);
    }
    return it->second;
  }

  const CandidateSet& set(size_t prompt) const {
    check_prompt(prompt);
    return sets_[prompt];
  }

  const std::vector<CandidateSet>& sets() const { return sets_; }
  const PolicyParams& params() const { return params_; }

  double log_prob(size_t prompt, size_t candidate, double temperature) const {
    check_candidate(prompt, candidate);
    return policy_math::log_prob(params_.theta[prompt], candidate, temperature);
  }

  std::vector<double> grad_log_prob(size_t prompt, size_t candidate,
                                    double temperature) const {
    check_candidate(prompt, candidate);
    return policy_math::grad_log_prob(params_.theta[prompt], candidate,
                                      temperature);
  }

  std::vector<size_t> sample_group(size_t prompt, size_t n, double temperature,
                                   uint64_t seed) const {
    check_prompt(prompt);
    if (n < 2) {
      throw std::invalid_argument("sample_group needs n >= 2");
    }
    Rng rng(seed);
    return policy_math::sample(params_.theta[prompt], n, temperature, rng);
  }

  double kl_to_reference(const PolicyParams& ref, size_t prompt,
                         double temperature) const {
    check_reference(ref, prompt);
    return policy_math::kl(params_.theta[prompt], ref.theta[prompt], temperature);
  }

  std::vector<double> kl_gradient(const PolicyParams& ref, size_t prompt,
                                  double temperature) const {
    check_reference(ref, prompt);
    return policy_math::kl_gradient(params_.theta[prompt], ref.theta[prompt],
                                    temperature);
  }

  // greedy candidate (highest logit, lowest index on ties)
  size_t argmax_candidate(size_t prompt) const {
    check_prompt(prompt);
    const auto& t = params_.theta[prompt];
    return std::max_element(t.begin(), t.end()) - t.begin();
  }

  PolicyParams snapshot() const { return params_; }

  void restore(const PolicyParams& p) {
    if (p.theta.size() != params_.theta.size()) {
      throw PolicyError(PolicyError::Kind::MismatchedCandidateSets,
                        "restore: prompt count mismatch");
    }
    for (size_t i = 0; i < p.theta.size(); ++i) {
      if (p.theta[i].size() != params_.theta[i].size()) {
        throw PolicyError(PolicyError::Kind::MismatchedCandidateSets,
                          "restore: candidate count mismatch at prompt " +
                              std::to_string(i));
      }
    }
    uint64_t v = params_.version;
    params_ = p;
    params_.version = v + 1;
  }

  // one atomic ascent step over a batch; sizes validated before any write
  void apply_updates(
      const std::vector<std::pair<size_t, std::vector<double>>>& deltas) {
    for (const auto& [prompt, d] : deltas) {
      check_prompt(prompt);
      if (d.size() != params_.theta[prompt].size()) {
        throw PolicyError(PolicyError::Kind::MismatchedCandidateSets,
                          "apply_updates: delta size mismatch");
      }
      for (double v : d) {
        if (!std::isfinite(v)) {
          throw std::invalid_argument("apply_updates: non-finite delta");
        }
      }
    }
    for (const auto& [prompt, d] : deltas) {
      auto& t = params_.theta[prompt];
      for (size_t j = 0; j < d.size(); ++j) t[j] += d[j];
    }
    ++params_.version;
  }

  nlohmann::json params_to_json() const {
    nlohmann::json j;
    j["version"] = params_.version;
    nlohmann::json theta = nlohmann::json::object();
    for (size_t i = 0; i < sets_.size(); ++i) {
      theta[sets_[i].prompt_id] = params_.theta[i];
    }
    j["theta"] = std::move(theta);
    return j;
  }

  void params_from_json(const nlohmann::json& j) {
    PolicyParams p;
    p.version = j.at("version").get<uint64_t>();
    p.theta.resize(sets_.size());
    const auto& theta = j.at("theta");
    for (size_t i = 0; i < sets_.size(); ++i) {
      if (!theta.contains(sets_[i].prompt_id)) {
        throw PolicyError(PolicyError::Kind::MismatchedCandidateSets,
                          "checkpoint lacks prompt " + sets_[i].prompt_id);
      }
      p.theta[i] = theta[sets_[i].prompt_id].get<std::vector<double>>();
      if (p.theta[i].size() != sets_[i].candidates.size()) {
        throw PolicyError(PolicyError::Kind::MismatchedCandidateSets,
                          "checkpoint size mismatch at " + sets_[i].prompt_id);
      }
    }
    uint64_t v = p.version;
    params_ = std::move(p);
    params_.version = v;
  }

 private:
  void check_prompt(size_t prompt) const {
    if (prompt >= sets_.size()) {
      throw PolicyError(PolicyError::Kind::UnknownPrompt,
                        "prompt index out of range: " + std::to_string(prompt));
    }
  }
  void check_candidate(size_t prompt, size_t candidate) const {
    check_prompt(prompt);
    if (candidate >= sets_[prompt].candidates.size()) {
      throw PolicyError(PolicyError::Kind::IndexOutOfRange,
                        "candidate index out of range: " +
                            std::to_string(candidate));
    }
  }
  void check_reference(const PolicyParams& ref, size_t prompt) const {
    check_prompt(prompt);
    if (ref.theta.size() != params_.theta.size() ||
        ref.theta[prompt].size() != params_.theta[prompt].size()) {
      throw PolicyError(PolicyError::Kind::MismatchedCandidateSets,
                        "reference snapshot shape mismatch");
    }
  }

  std::vector<CandidateSet> sets_;
  std::map<std::string, size_t> index_;
  PolicyParams params_;
};

}  // namespace reflectmt
