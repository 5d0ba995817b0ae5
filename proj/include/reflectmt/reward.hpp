// SPDX-License-Identifier: Apache-2.0
//
// Reward components and stage-weighted totals for a rollout.
//
//   r_form: 1 iff the text matches the four-tag grammar, else 0.
//   r_refl: judge's reflection score / 100.
//   r_imp:  piecewise in delta_s = s_fin - s_init:
//             1         when delta_s >= eta
//             mu*delta_s when 0 < delta_s < eta   (clamped to [0,1])
//             0         when delta_s <= 0
//   r_trans: stage 1 (s_init + s_fin)/200, stage 2 s_init/100.
//   total:  w_form*r_form + w_trans*r_trans + w_refl*r_refl + w_imp*r_imp.

#pragma once

#include <algorithm>
#include <string>
#include <string_view>

#include "reflectmt/judge.hpp"
#include "reflectmt/structured_output.hpp"

namespace reflectmt {

enum class Stage { Stage1 = 1, Stage2 = 2 };

// score bands: easy > 90, medium 70-90 inclusive, difficult < 70
enum class Difficulty { Easy = 0, Medium = 1, Difficult = 2 };

inline Difficulty difficulty_bucket(double score) {
  if (score > 90.0) return Difficulty::Easy;
  if (score >= 70.0) return Difficulty::Medium;
  return Difficulty::Difficult;
}

inline std::string_view to_string(Difficulty d) {
  switch (d) {
    case Difficulty::Easy: return "easy";
    case Difficulty::Medium: return "medium";
    case Difficulty::Difficult: return "difficult";
  }
  return "?";
}

struct RewardWeights {
  double w_form = 0.0;
  double w_trans = 0.0;
  double w_refl = 0.0;
  double w_imp = 0.0;
};

inline constexpr RewardWeights kStage1Weights{0.15, 0.45, 0.2, 0.2};
inline constexpr RewardWeights kStage2Weights{0.15, 0.75, 0.05, 0.05};

struct ImprovementParams {
  double eta = 5.0;
  double mu = 0.2;
};

struct RewardParams {
  RewardWeights stage1_weights = kStage1Weights;
  RewardWeights stage2_weights = kStage2Weights;
  ImprovementParams improvement;

  const RewardWeights& weights_for(Stage stage) const {
    return stage == Stage::Stage1 ? stage1_weights : stage2_weights;
  }
};

struct RewardBreakdown {
  int r_form = 0;
  double r_trans = 0.0;
  double r_refl = 0.0;
  double r_imp = 0.0;
  double s_init = 0.0;
  double s_fin = 0.0;
  double delta_s = 0.0;
  double total_R = 0.0;
  Stage stage = Stage::Stage1;
  // carried for instrumentation, not part of the reward arithmetic
  std::string y_init;
  std::string y_fin;
  RevisionFlag v_rev = RevisionFlag::No;
};

inline double improvement_reward(double delta_s, const ImprovementParams& p) {
  if (delta_s <= 0.0) return 0.0;
  if (delta_s >= p.eta) return 1.0;
  return std::clamp(p.mu * delta_s, 0.0, 1.0);
}

inline double trans_reward_stage1(double s_init, double s_fin) {
  return (s_init + s_fin) / 200.0;
}

inline double trans_reward_stage2(double s_init) { return s_init / 100.0; }

inline double total_reward(double r_form, double r_trans, double r_refl,
                           double r_imp, const RewardWeights& w) {
  return w.w_form * r_form + w.w_trans * r_trans + w.w_refl * r_refl +
         w.w_imp * r_imp;
}

// Malformed rollouts score 0 everywhere: without a parse there is no
// y_init/y_fin to judge, and a flat 0 keeps the format signal sharp.
inline RewardBreakdown score_rollout(const std::string& text,
                                     const std::string& src, Judge& judge,
                                     Stage stage, const RewardParams& params) {
  RewardBreakdown b;
  b.stage = stage;
  auto parsed = parse_structured(text);
  if (!parsed.ok()) {
    b.r_form = 0;
    return b;
  }
  b.r_form = 1;
  b.y_init = parsed->y_init;
  b.y_fin = parsed->y_fin;
  b.v_rev = parsed->v_rev;
  b.s_init = judge.score_translation(src, parsed->y_init).value;
  b.s_fin = judge.score_translation(src, parsed->y_fin).value;
  b.r_refl = judge.score_reflection(src, parsed->y_init, parsed->f_refl).value / 100.0;
  b.delta_s = b.s_fin - b.s_init;
  b.r_imp = improvement_reward(b.delta_s, params.improvement);
  b.r_trans = stage == Stage::Stage1 ? trans_reward_stage1(b.s_init, b.s_fin)
                                     : trans_reward_stage2(b.s_init);
  b.total_R = total_reward(b.r_form, b.r_trans, b.r_refl, b.r_imp,
                           params.weights_for(stage));
  return b;
}

}  // namespace reflectmt
