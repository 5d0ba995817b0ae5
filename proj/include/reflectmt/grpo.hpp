// SPDX-License-Identifier: Apache-2.0
//
// Group-relative policy optimization over the candidate-softmax policy.
//
// Per prompt, a group of n rollouts is sampled at the rollout temperature,
// scored, and z-normalized into advantages. The update maximizes the clipped
// surrogate minus a KL penalty against a frozen reference:
//
//   J = (1/n) * sum_i min(rho_i * A_i, clip(rho_i, 1-eps, 1+eps) * A_i)
//       - beta * KL(pi || pi_ref)
//
// with rho_i the probability ratio of rollout i between the current and the
// sampling-time policy. One gradient-ascent step is taken per group, using
// the gradient evaluated at the sampling-time parameters (all rho_i = 1
// there, so the clip is inactive at the evaluation point).

#pragma once

#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "reflectmt/policy.hpp"
#include "reflectmt/reward.hpp"
#include "reflectmt/util.hpp"

namespace reflectmt {

struct GrpoConfig {
  size_t n = 8;                      // rollouts per prompt
  double epsilon = 0.2;              // surrogate clip radius
  double beta = 5e-3;                // KL penalty coefficient
  double learning_rate = 0.5;        // desk-scale default
  size_t batch_size = 64;            // prompts per optimization step
  double rollout_temperature = 0.7;
  size_t epochs = 1;
  size_t eval_interval = 50;         // steps between eval rows
  uint64_t seed = 0;
};

class GroupTooSmall : public std::runtime_error {
 public:
  explicit GroupTooSmall(size_t n)
      : std::runtime_error("advantage group needs n >= 2, got " +
                           std::to_string(n)) {}
};

// Group z-scores with the population standard deviation. Degenerate groups
// (std below 1e-8) get all-zero advantages instead of a blow-up. The final
// re-centering pass is an exact-arithmetic identity that scrubs the last
// few ulps of float error out of the mean/std of the result.
inline std::vector<double> compute_advantages(
    const std::vector<double>& rewards) {
  if (rewards.size() < 2) throw GroupTooSmall(rewards.size());
  const size_t n = rewards.size();
  double mean = 0.0;
  for (double r : rewards) mean += r;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  var /= static_cast<double>(n);
  double std_dev = std::sqrt(var);
  std::vector<double> a(n, 0.0);
  if (std_dev < 1e-8) return a;
  for (size_t i = 0; i < n; ++i) a[i] = (rewards[i] - mean) / std_dev;
  double m2 = 0.0;
  for (double v : a) m2 += v;
  m2 /= static_cast<double>(n);
  double v2 = 0.0;
  for (double v : a) v2 += (v - m2) * (v - m2);
  double s2 = std::sqrt(v2 / static_cast<double>(n));
  for (double& v : a) v = (v - m2) / s2;
  return a;
}

// Clipped surrogate minus KL penalty, evaluated from precomputed ratios.
inline double grpo_objective(const std::vector<double>& ratios,
                             const std::vector<double>& advantages, double kl,
                             double epsilon, double beta) {
  if (ratios.size() != advantages.size() || ratios.empty()) {
    throw std::invalid_argument("grpo_objective: ratio/advantage mismatch");
  }
  double acc = 0.0;
  for (size_t i = 0; i < ratios.size(); ++i) {
    double rho = ratios[i];
    double a = advantages[i];
    double clipped = std::clamp(rho, 1.0 - epsilon, 1.0 + epsilon);
    acc += std::min(rho * a, clipped * a);
  }
  return acc / static_cast<double>(ratios.size()) - beta * kl;
}

// Vector-level objective and analytic gradient at arbitrary trial logits,
// for a single group. These exist so the surrogate can be checked against
// finite differences away from the sampling point.
namespace grpo_math {

inline double group_objective(const std::vector<double>& trial_theta,
                              const std::vector<double>& ref_theta,
                              const std::vector<size_t>& indices,
                              const std::vector<double>& old_log_probs,
                              const std::vector<double>& advantages,
                              double temperature, double epsilon, double beta) {
  auto lp = policy_math::log_softmax(trial_theta, temperature);
  std::vector<double> ratios(indices.size());
  for (size_t i = 0; i < indices.size(); ++i) {
    ratios[i] = std::exp(lp[indices[i]] - old_log_probs[i]);
  }
  double kl = policy_math::kl(trial_theta, ref_theta, temperature);
  return grpo_objective(ratios, advantages, kl, epsilon, beta);
}

inline std::vector<double> group_objective_gradient(
    const std::vector<double>& trial_theta,
    const std::vector<double>& ref_theta, const std::vector<size_t>& indices,
    const std::vector<double>& old_log_probs,
    const std::vector<double>& advantages, double temperature, double epsilon,
    double beta) {
  auto lp = policy_math::log_softmax(trial_theta, temperature);
  const size_t n = indices.size();
  std::vector<double> grad(trial_theta.size(), 0.0);
  for (size_t i = 0; i < n; ++i) {
    double rho = std::exp(lp[indices[i]] - old_log_probs[i]);
    double a = advantages[i];
    // the min() selects the constant clipped branch exactly when the ratio
    // moved past the clip edge in the advantage's favored direction
    bool clipped =
        (rho > 1.0 + epsilon && a > 0.0) || (rho < 1.0 - epsilon && a < 0.0);
    if (clipped || a == 0.0) continue;
    auto glp = policy_math::grad_log_prob(trial_theta, indices[i], temperature);
    double coef = rho * a / static_cast<double>(n);
    for (size_t j = 0; j < grad.size(); ++j) grad[j] += coef * glp[j];
  }
  if (beta != 0.0) {
    auto gkl = policy_math::kl_gradient(trial_theta, ref_theta, temperature);
    for (size_t j = 0; j < grad.size(); ++j) grad[j] -= beta * gkl[j];
  }
  return grad;
}

}  // namespace grpo_math

struct RolloutGroup {
  size_t prompt = 0;                  // index into the policy's prompt table
  std::vector<size_t> indices;        // sampled candidate per rollout
  std::vector<double> old_log_probs;  // at the sampling-time parameters
  std::vector<double> rewards;        // total_R per rollout
  std::vector<double> advantages;
  std::vector<RewardBreakdown> breakdowns;
};

struct StepResult {
  std::vector<RolloutGroup> groups;
  double mean_total_R = 0.0;  // over every rollout in the step
  double mean_kl = 0.0;       // post-update, mean over the batch prompts
  double objective = 0.0;     // post-update surrogate - beta*KL, group mean
};

// One optimization step over a batch of prompts. All judge calls happen
// before any parameter write, so a scoring failure aborts the step with the
// policy untouched.
inline StepResult train_step(ToyPolicy& policy,
                             const std::vector<size_t>& prompts, Judge& judge,
                             const RewardParams& rparams, Stage stage,
                             const PolicyParams& reference,
                             const GrpoConfig& cfg, Rng& rng) {
  if (prompts.empty()) {
    throw std::invalid_argument("train_step: empty prompt batch");
  }
  StepResult result;
  result.groups.reserve(prompts.size());
  for (size_t p : prompts) {
    RolloutGroup g;
    g.prompt = p;
    uint64_t group_seed = rng.next_u64();
    g.indices =
        policy.sample_group(p, cfg.n, cfg.rollout_temperature, group_seed);
    const auto& set = policy.set(p);
    g.old_log_probs.reserve(cfg.n);
    g.rewards.reserve(cfg.n);
    g.breakdowns.reserve(cfg.n);
    for (size_t idx : g.indices) {
      g.old_log_probs.push_back(
          policy.log_prob(p, idx, cfg.rollout_temperature));
      auto b = score_rollout(set.candidates[idx].text, set.src, judge, stage,
                             rparams);
      g.rewards.push_back(b.total_R);
      g.breakdowns.push_back(std::move(b));
    }
    g.advantages = compute_advantages(g.rewards);
    result.groups.push_back(std::move(g));
  }

  // ascent direction at the sampling-time parameters (all ratios are 1)
  std::vector<std::pair<size_t, std::vector<double>>> deltas;
  deltas.reserve(result.groups.size());
  for (const auto& g : result.groups) {
    std::vector<double> grad(policy.params().theta[g.prompt].size(), 0.0);
    for (size_t i = 0; i < g.indices.size(); ++i) {
      if (g.advantages[i] == 0.0) continue;
      auto glp =
          policy.grad_log_prob(g.prompt, g.indices[i], cfg.rollout_temperature);
      double coef = g.advantages[i] / static_cast<double>(cfg.n);
      for (size_t j = 0; j < grad.size(); ++j) grad[j] += coef * glp[j];
    }
    if (cfg.beta != 0.0) {
      auto gkl =
          policy.kl_gradient(reference, g.prompt, cfg.rollout_temperature);
      for (size_t j = 0; j < grad.size(); ++j) grad[j] -= cfg.beta * gkl[j];
    }
    for (double& v : grad) v *= cfg.learning_rate;
    deltas.emplace_back(g.prompt, std::move(grad));
  }
  policy.apply_updates(deltas);

  size_t rollouts = 0;
  for (const auto& g : result.groups) {
    std::vector<double> ratios(g.indices.size());
    for (size_t i = 0; i < g.indices.size(); ++i) {
      double new_lp =
          policy.log_prob(g.prompt, g.indices[i], cfg.rollout_temperature);
      ratios[i] = std::exp(new_lp - g.old_log_probs[i]);
    }
    double kl =
        policy.kl_to_reference(reference, g.prompt, cfg.rollout_temperature);
    result.objective +=
        grpo_objective(ratios, g.advantages, kl, cfg.epsilon, cfg.beta);
    result.mean_kl += kl;
    for (double r : g.rewards) result.mean_total_R += r;
    rollouts += g.rewards.size();
  }
  result.objective /= static_cast<double>(result.groups.size());
  result.mean_kl /= static_cast<double>(result.groups.size());
  result.mean_total_R /= static_cast<double>(rollouts);
  return result;
}

struct ModificationStats {
  size_t evaluated = 0;  // breakdowns that parsed (r_form == 1)
  size_t modified = 0;
  // modified counts keyed by difficulty_bucket(s_init): easy/medium/difficult
  std::array<size_t, 3> by_bucket{{0, 0, 0}};
  size_t vrev_yes = 0;  // self-reported revision flags, for comparison

  double rate() const {
    return evaluated == 0 ? 0.0
                          : static_cast<double>(modified) /
                                static_cast<double>(evaluated);
  }
};

// A sample counts as modified iff its final translation differs from the
// initial one after whitespace normalization. The self-reported v_rev flag
// is tallied separately and deliberately not trusted for this.
inline ModificationStats count_modifications(
    const std::vector<RewardBreakdown>& breakdowns) {
  ModificationStats m;
  for (const auto& b : breakdowns) {
    if (b.r_form != 1) continue;
    ++m.evaluated;
    if (b.v_rev == RevisionFlag::Yes) ++m.vrev_yes;
    if (normalize_whitespace(b.y_fin) != normalize_whitespace(b.y_init)) {
      ++m.modified;
      ++m.by_bucket[static_cast<size_t>(difficulty_bucket(b.s_init))];
    }
  }
  return m;
}

struct EvalReport {
  std::vector<RewardBreakdown> breakdowns;  // one greedy rollout per prompt
  ModificationStats mods;
  double mean_total_R = 0.0;  // over all prompts
  double mean_s_init = 0.0;   // over parsed rollouts
  double mean_s_fin = 0.0;
  double mean_delta_s = 0.0;
};

// Greedy (argmax-candidate) pass over every prompt.
inline EvalReport evaluate_policy(const ToyPolicy& policy, Judge& judge,
                                  const RewardParams& rparams, Stage stage) {
  if (policy.prompt_count() == 0) {
    throw std::invalid_argument("evaluate_policy: policy has no prompts");
  }
  EvalReport rep;
  rep.breakdowns.reserve(policy.prompt_count());
  for (size_t p = 0; p < policy.prompt_count(); ++p) {
    const auto& set = policy.set(p);
    size_t pick = policy.argmax_candidate(p);
    rep.breakdowns.push_back(
        score_rollout(set.candidates[pick].text, set.src, judge, stage,
                      rparams));
  }
  size_t parsed = 0;
  for (const auto& b : rep.breakdowns) {
    rep.mean_total_R += b.total_R;
    if (b.r_form == 1) {
      ++parsed;
      rep.mean_s_init += b.s_init;
      rep.mean_s_fin += b.s_fin;
      rep.mean_delta_s += b.delta_s;
    }
  }
  rep.mean_total_R /= static_cast<double>(rep.breakdowns.size());
  if (parsed > 0) {
    rep.mean_s_init /= static_cast<double>(parsed);
    rep.mean_s_fin /= static_cast<double>(parsed);
    rep.mean_delta_s /= static_cast<double>(parsed);
  }
  rep.mods = count_modifications(rep.breakdowns);
  return rep;
}

struct TrainStats {
  size_t step = 0;
  double mean_total_R = 0.0;
  double mean_s_init = 0.0;
  double mean_s_fin = 0.0;
  double mean_delta_s = 0.0;
  size_t modifications = 0;
  double mod_rate = 0.0;
  size_t mod_easy = 0;
  size_t mod_medium = 0;
  size_t mod_difficult = 0;
  size_t vrev_yes = 0;
  double mean_kl = 0.0;
  double objective = 0.0;
};

inline constexpr const char* kStatsCsvHeader =
    "step,mean_total_R,mean_s_init,mean_s_fin,mean_delta_s,modifications,"
    "mod_rate,mod_easy,mod_medium,mod_difficult,vrev_yes,mean_kl,objective";

inline std::string stats_to_csv(const std::vector<TrainStats>& rows) {
  std::string out = kStatsCsvHeader;
  out += '\n';
  for (const auto& r : rows) {
    out += std::to_string(r.step);
    out += ',';
    out += format_double(r.mean_total_R);
    out += ',';
    out += format_double(r.mean_s_init);
    out += ',';
    out += format_double(r.mean_s_fin);
    out += ',';
    out += format_double(r.mean_delta_s);
    out += ',';
    out += std::to_string(r.modifications);
    out += ',';
    out += format_double(r.mod_rate);
    out += ',';
    out += std::to_string(r.mod_easy);
    out += ',';
    out += std::to_string(r.mod_medium);
    out += ',';
    out += std::to_string(r.mod_difficult);
    out += ',';
    out += std::to_string(r.vrev_yes);
    out += ',';
    out += format_double(r.mean_kl);
    out += ',';
    out += format_double(r.objective);
    out += '\n';
  }
  return out;
}

inline std::vector<TrainStats> parse_stats_csv(const std::string& text) {
  std::vector<TrainStats> rows;
  size_t pos = 0;
  bool header_seen = false;
  while (pos < text.size()) {
    size_t eol = text.find('\n', pos);
    if (eol == std::string::npos) eol = text.size();
    std::string line = text.substr(pos, eol - pos);
    pos = eol + 1;
    if (trim_view(line).empty()) continue;
    if (!header_seen) {
      if (line != kStatsCsvHeader) {
        throw std::runtime_error("stats csv: unexpected header: " + line);
      }
      header_seen = true;
      continue;
    }
    std::vector<std::string> cells;
    size_t cpos = 0;
    while (true) {
      size_t comma = line.find(',', cpos);
      if (comma == std::string::npos) {
        cells.push_back(line.substr(cpos));
        break;
      }
      cells.push_back(line.substr(cpos, comma - cpos));
      cpos = comma + 1;
    }
    if (cells.size() != 13) {
      throw std::runtime_error("stats csv: bad row: " + line);
    }
    TrainStats r;
    r.step = static_cast<size_t>(std::stoull(cells[0]));
    r.mean_total_R = std::stod(cells[1]);
    r.mean_s_init = std::stod(cells[2]);
    r.mean_s_fin = std::stod(cells[3]);
    r.mean_delta_s = std::stod(cells[4]);
    r.modifications = static_cast<size_t>(std::stoull(cells[5]));
    r.mod_rate = std::stod(cells[6]);
    r.mod_easy = static_cast<size_t>(std::stoull(cells[7]));
    r.mod_medium = static_cast<size_t>(std::stoull(cells[8]));
    r.mod_difficult = static_cast<size_t>(std::stoull(cells[9]));
    r.vrev_yes = static_cast<size_t>(std::stoull(cells[10]));
    r.mean_kl = std::stod(cells[11]);
    r.objective = std::stod(cells[12]);
    rows.push_back(r);
  }
  return rows;
}

inline void save_stats_csv(const std::vector<TrainStats>& rows,
                           const std::string& path) {
  write_file(path, stats_to_csv(rows));
}

inline std::vector<TrainStats> load_stats_csv(const std::string& path) {
  return parse_stats_csv(read_file(path));
}

struct StageResult {
  std::vector<TrainStats> timeline;  // one row per eval point
  PolicyParams reference;            // the frozen reference actually used
  size_t steps_run = 0;
};

// Runs one training stage: epochs over seeded shuffles of all prompts,
// batched into optimization steps, with a greedy eval at step 0, every
// eval_interval steps, and after the final step. By default the reference
// policy is re-snapshot from the incoming parameters (the stage-2 reference
// is then the stage-1 result); pass reuse_reference to pin an older one.
// A raised stop flag ends the stage after the in-flight step completes.
inline StageResult run_stage(ToyPolicy& policy, Judge& judge,
                             const RewardParams& rparams, Stage stage,
                             const GrpoConfig& cfg,
                             const PolicyParams* reuse_reference = nullptr,
                             const std::atomic<bool>* stop = nullptr) {
  if (policy.prompt_count() == 0) {
    throw std::invalid_argument("run_stage: policy has no prompts");
  }
  StageResult result;
  result.reference = reuse_reference ? *reuse_reference : policy.snapshot();
  Rng rng = Rng(cfg.seed).fork(static_cast<uint64_t>(stage));

  double last_objective = 0.0;
  size_t step = 0;
  auto emit_eval = [&] {
    EvalReport rep = evaluate_policy(policy, judge, rparams, stage);
    TrainStats row;
    row.step = step;
    row.mean_total_R = rep.mean_total_R;
    row.mean_s_init = rep.mean_s_init;
    row.mean_s_fin = rep.mean_s_fin;
    row.mean_delta_s = rep.mean_delta_s;
    row.modifications = rep.mods.modified;
    row.mod_rate = rep.mods.rate();
    row.mod_easy = rep.mods.by_bucket[0];
    row.mod_medium = rep.mods.by_bucket[1];
    row.mod_difficult = rep.mods.by_bucket[2];
    row.vrev_yes = rep.mods.vrev_yes;
    double kl = 0.0;
    for (size_t p = 0; p < policy.prompt_count(); ++p) {
      kl += policy.kl_to_reference(result.reference, p,
                                   cfg.rollout_temperature);
    }
    row.mean_kl = kl / static_cast<double>(policy.prompt_count());
    row.objective = last_objective;
    result.timeline.push_back(row);
  };

  emit_eval();
  std::vector<size_t> order(policy.prompt_count());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  bool stopped = false;
  for (size_t epoch = 0; epoch < cfg.epochs && !stopped; ++epoch) {
    rng.shuffle(order);
    for (size_t off = 0; off < order.size(); off += cfg.batch_size) {
      if (stop != nullptr && stop->load()) {
        stopped = true;
        break;
      }
      size_t end = std::min(off + cfg.batch_size, order.size());
      std::vector<size_t> batch(order.begin() + off, order.begin() + end);
      StepResult sr = train_step(policy, batch, judge, rparams, stage,
                                 result.reference, cfg, rng);
      last_objective = sr.objective;
      ++step;
      if (cfg.eval_interval != 0 && step % cfg.eval_interval == 0) emit_eval();
    }
  }
  if (result.timeline.back().step != step) emit_eval();
  result.steps_run = step;
  return result;
}

struct CheckpointMeta {
  Stage stage = Stage::Stage1;
  size_t step = 0;
};

inline void save_checkpoint(const ToyPolicy& policy, Stage stage, size_t step,
                            const std::string& path) {
  nlohmann::json j = policy.params_to_json();
  j["stage"] = static_cast<int>(stage);
  j["step"] = step;
  write_file(path, j.dump(2) + "\n");
}

inline CheckpointMeta load_checkpoint(ToyPolicy& policy,
                                      const std::string& path) {
  auto j = nlohmann::json::parse(read_file(path));
  policy.params_from_json(j);
  int s = j.at("stage").get<int>();
  if (s != 1 && s != 2) {
    throw std::runtime_error("checkpoint: stage must be 1 or 2, got " +
                             std::to_string(s));
  }
  CheckpointMeta meta;
  meta.stage = s == 1 ? Stage::Stage1 : Stage::Stage2;
  meta.step = j.at("step").get<size_t>();
  return meta;
}

}  // namespace reflectmt
