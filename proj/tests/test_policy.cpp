// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "reflectmt/policy.hpp"
#include "fd_check.hpp"
#include "test_util.hpp"

using namespace reflectmt;
namespace pm = policy_math;

namespace {

std::string cand_text(const std::string& init, const std::string& fin,
                      const std::string& refl = "检查无误", bool revised = false) {
  StructuredOutput s;
  s.y_init = init;
  s.f_refl = refl;
  s.v_rev = revised ? RevisionFlag::Yes : RevisionFlag::No;
  s.v_rev_surface = revised ? "是" : "否";
  s.y_fin = fin;
  return render_structured(s);
}

ToyPolicy make_policy(size_t prompts = 1, size_t cands = 4) {
  std::vector<CandidateSet> sets;
  for (size_t p = 0; p < prompts; ++p) {
    CandidateSet cs;
    cs.prompt_id = "p" + std::to_string(p);
    cs.src = "source " + std::to_string(p);
    for (size_t c = 0; c < cands; ++c) {
      cs.candidates.push_back(
          make_candidate(cand_text("译文" + std::to_string(c),
                                   "译文" + std::to_string(c))));
    }
    sets.push_back(std::move(cs));
  }
  return ToyPolicy(std::move(sets));
}

std::vector<double> random_logits(Rng& rng, size_t m, double scale = 3.0) {
  std::vector<double> t(m);
  for (double& v : t) v = (rng.next_unit() * 2.0 - 1.0) * scale;
  return t;
}

}  // namespace

TEST_CASE("uniform logits give ln(1/m)") {
  auto pol = make_policy(1, 4);
  for (size_t c = 0; c < 4; ++c) {
    CHECK(std::abs(pol.log_prob(0, c, 1.0) - std::log(0.25)) < 1e-15);
  }
}

TEST_CASE("closed-form softmax on two logits") {
  std::vector<double> theta = {1.0, 0.0};
  double expect = std::log(std::exp(1.0) / (std::exp(1.0) + 1.0));
  CHECK(std::abs(pm::log_prob(theta, 0, 1.0) - expect) < 1e-14);
}

TEST_CASE("high temperature flattens to uniform") {
  Rng rng(3);
  for (int rep = 0; rep < 20; ++rep) {
    size_t m = 2 + rng.index(7);
    // deviation scales as logit spread / T, so keep spread at O(1)
    auto theta = random_logits(rng, m, 0.4);
    auto lp = pm::log_softmax(theta, 1e6);
    for (double v : lp) CHECK(std::abs(v - std::log(1.0 / m)) < 1e-6);
  }
}

TEST_CASE("probabilities sum to one") {
  Rng rng(17);
  for (int rep = 0; rep < 200; ++rep) {
    size_t m = 2 + rng.index(15);
    auto p = pm::softmax(random_logits(rng, m, 10.0), 0.7);
    double sum = 0.0;
    for (double v : p) sum += v;
    CHECK(std::abs(sum - 1.0) < 1e-12);
  }
}

TEST_CASE("sampling is deterministic under a fixed seed") {
  auto pol = make_policy(1, 6);
  auto a = pol.sample_group(0, 8, 0.7, 12345);
  auto b = pol.sample_group(0, 8, 0.7, 12345);
  CHECK(a == b);
  REQUIRE(a.size() == 8);
}

TEST_CASE("degenerate logits concentrate all draws") {
  std::vector<CandidateSet> sets;
  CandidateSet cs;
  cs.prompt_id = "p0";
  cs.src = "s";
  for (int c = 0; c < 4; ++c) {
    cs.candidates.push_back(make_candidate(
        cand_text("候选" + std::to_string(c), "候选" + std::to_string(c))));
  }
  sets.push_back(std::move(cs));
  ToyPolicy pol(std::move(sets));
  pol.apply_updates({{0, {30.0, 0.0, 0.0, 0.0}}});

  auto p = pm::softmax(pol.params().theta[0], 1.0);
  REQUIRE(p[0] > 1.0 - 1e-12);  // exhaustive softmax computation
  for (uint64_t seed : {1ull, 77ull, 990ull}) {
    auto draws = pol.sample_group(0, 8, 1.0, seed);
    for (auto d : draws) CHECK(d == 0);
  }
}

TEST_CASE("empirical frequencies match softmax within 3 sigma") {
  Rng rng(2024);
  auto theta = random_logits(rng, 5, 1.5);
  auto p = pm::softmax(theta, 0.7);
  const size_t N = 100000;
  Rng draw_rng(31337);
  auto draws = pm::sample(theta, N, 0.7, draw_rng);
  std::vector<size_t> counts(5, 0);
  for (auto d : draws) counts[d]++;
  for (size_t j = 0; j < 5; ++j) {
    double f = static_cast<double>(counts[j]) / N;
    double sigma = std::sqrt(p[j] * (1.0 - p[j]) / N);
    INFO("j=" << j << " f=" << f << " p=" << p[j]);
    CHECK(std::abs(f - p[j]) <= 3.0 * sigma);
  }
}

TEST_CASE("gradient closed form and identities") {
  std::vector<double> uniform2 = {0.0, 0.0};
  auto g = pm::grad_log_prob(uniform2, 0, 1.0);
  CHECK(std::abs(g[0] - 0.5) < 1e-15);
  CHECK(std::abs(g[1] + 0.5) < 1e-15);

  Rng rng(8);
  for (int rep = 0; rep < 200; ++rep) {
    size_t m = 2 + rng.index(7);
    auto theta = random_logits(rng, m);
    double T = 0.25 + rng.next_unit() * 2.0;
    size_t idx = rng.index(m);
    auto grad = pm::grad_log_prob(theta, idx, T);
    double sum = 0.0;
    for (double v : grad) sum += v;
    CHECK(std::abs(sum) < 1e-12);
  }
}

TEST_CASE("gradient matches finite differences") {
  Rng rng(99);
  for (int rep = 0; rep < 100; ++rep) {
    size_t m = 2 + rng.index(7);
    auto theta = random_logits(rng, m);
    double T = 0.5 + rng.next_unit() * 1.5;
    size_t idx = rng.index(m);
    auto analytic = pm::grad_log_prob(theta, idx, T);
    auto fd = rmtest::finite_difference_gradient(
        [&](const std::vector<double>& t) { return pm::log_prob(t, idx, T); },
        theta);
    CHECK(rmtest::relative_error(analytic, fd) < 1e-6);
  }
}

TEST_CASE("kl identities and closed form") {
  std::vector<double> p_logits = {std::log(0.9), std::log(0.1)};
  std::vector<double> q_logits = {std::log(0.5), std::log(0.5)};
  double expect = 0.9 * std::log(1.8) + 0.1 * std::log(0.2);
  CHECK(std::abs(pm::kl(p_logits, q_logits, 1.0) - expect) < 1e-12);
  CHECK(pm::kl(p_logits, p_logits, 1.0) == 0.0);

  Rng rng(55);
  for (int rep = 0; rep < 10000; ++rep) {
    size_t m = 2 + rng.index(5);
    auto a = random_logits(rng, m);
    auto b = random_logits(rng, m);
    CHECK(pm::kl(a, b, 0.7) >= 0.0);
  }
}

TEST_CASE("kl gradient matches finite differences") {
  Rng rng(101);
  for (int rep = 0; rep < 100; ++rep) {
    size_t m = 2 + rng.index(6);
    auto p = random_logits(rng, m);
    auto q = random_logits(rng, m);
    double T = 0.5 + rng.next_unit();
    auto analytic = pm::kl_gradient(p, q, T);
    auto fd = rmtest::finite_difference_gradient(
        [&](const std::vector<double>& t) { return pm::kl(t, q, T); }, p);
    CHECK(rmtest::relative_error(analytic, fd) < 1e-6);
  }
}

TEST_CASE("softmax quantities are shift invariant") {
  Rng rng(7);
  for (int rep = 0; rep < 100; ++rep) {
    size_t m = 2 + rng.index(6);
    auto theta = random_logits(rng, m);
    double c = (rng.next_unit() * 2.0 - 1.0) * 20.0;
    auto shifted = theta;
    for (double& v : shifted) v += c;
    double T = 0.5 + rng.next_unit();
    size_t idx = rng.index(m);
    CHECK(std::abs(pm::log_prob(theta, idx, T) - pm::log_prob(shifted, idx, T)) <
          1e-12);
    auto g0 = pm::grad_log_prob(theta, idx, T);
    auto g1 = pm::grad_log_prob(shifted, idx, T);
    CHECK(rmtest::relative_error(g0, g1) < 1e-10);
    auto q = random_logits(rng, m);
    CHECK(std::abs(pm::kl(theta, q, T) - pm::kl(shifted, q, T)) < 1e-12);
  }
}

TEST_CASE("policy errors") {
  auto pol = make_policy(2, 3);
  CHECK_THROWS_AS(pol.prompt_index("nope"), PolicyError);
  CHECK_THROWS_AS(pol.log_prob(0, 99, 1.0), PolicyError);
  CHECK_THROWS_AS(pol.log_prob(7, 0, 1.0), PolicyError);
  CHECK_THROWS_AS(pol.sample_group(0, 1, 1.0, 5), std::invalid_argument);

  PolicyParams bad;
  bad.theta = {{0.0}};  // wrong shapes
  CHECK_THROWS_AS(pol.kl_to_reference(bad, 0, 1.0), PolicyError);
  CHECK_THROWS_AS(pol.restore(bad), PolicyError);

  try {
    pol.prompt_index("nope");
  } catch (const PolicyError& e) {
    CHECK(e.kind() == PolicyError::Kind::UnknownPrompt);
  }
}

TEST_CASE("updates are atomic and bump the version") {
  auto pol = make_policy(1, 3);
  uint64_t v0 = pol.params().version;
  pol.apply_updates({{0, {0.1, -0.2, 0.3}}});
  CHECK(pol.params().version == v0 + 1);
  CHECK(pol.params().theta[0][0] == 0.1);

  auto before = pol.params().theta;
  CHECK_THROWS_AS(
      pol.apply_updates({{0, {std::nan(""), 0.0, 0.0}}}),
      std::invalid_argument);
  CHECK(pol.params().theta == before);  // nothing half-applied
  CHECK(pol.params().version == v0 + 1);
}

TEST_CASE("checkpoint json roundtrip is exact") {
  auto pol = make_policy(2, 3);
  pol.apply_updates({{0, {0.125, -2.5, 1e-9}}, {1, {3.14159, 0.0, -7.25}}});
  auto j = pol.params_to_json();
  std::string dumped = j.dump();

  auto pol2 = make_policy(2, 3);
  pol2.params_from_json(nlohmann::json::parse(dumped));
  CHECK(pol2.params().theta == pol.params().theta);
  CHECK(pol2.params().version == pol.params().version);
}

TEST_CASE("candidate set jsonl loads, flags, and seeds the mock judge") {
  std::string good = cand_text("好译文", "好译文");
  std::string poor = cand_text("差译文", "改良译文", "有明显遗漏，应补全。", true);
  nlohmann::ordered_json row;
  row["prompt_id"] = "p0";
  row["src"] = "the source";
  row["candidates"] = {good, poor, "malformed text"};
  row["mock_scores"] = {
      {{"init", 92.0}, {"fin", 92.0}, {"refl", 60.0}},
      {{"init", 55.0}, {"fin", 90.0}, {"refl", 88.0}},
      {{"init", 0.0}, {"fin", 0.0}},
  };
  std::string path = "/tmp/reflectmt_toy_task_test.jsonl";
  write_file(path, row.dump() + "\n");

  auto sets = load_candidate_sets_jsonl(path);
  REQUIRE(sets.size() == 1);
  REQUIRE(sets[0].candidates.size() == 3);
  CHECK(sets[0].candidates[0].format_valid);
  CHECK(sets[0].candidates[1].format_valid);
  CHECK_FALSE(sets[0].candidates[2].format_valid);
  CHECK(sets[0].candidates[1].y_init == "差译文");
  CHECK(sets[0].candidates[1].y_fin == "改良译文");

  MockJudge judge;
  seed_mock_judge(sets, judge);
  CHECK(judge.score_translation("the source", "好译文").value == 92.0);
  CHECK(judge.score_translation("the source", "差译文").value == 55.0);
  CHECK(judge.score_translation("the source", "改良译文").value == 90.0);
  CHECK(judge.score_reflection("the source", "差译文", "有明显遗漏，应补全。").value ==
        88.0);
  std::remove(path.c_str());
}

TEST_CASE("candidate set loader rejects bad shapes") {
  auto write_and_load = [](const std::string& content) {
    std::string path = "/tmp/reflectmt_bad_task.jsonl";
    write_file(path, content);
    auto cleanup = [&] { std::remove(path.c_str()); };
    try {
      auto r = load_candidate_sets_jsonl(path);
      cleanup();
      return true;
    } catch (const std::exception&) {
      cleanup();
      return false;
    }
  };
  std::string c0 = cand_text("a", "a");
  std::string c1 = cand_text("b", "b");
  nlohmann::ordered_json base;
  base["prompt_id"] = "p";
  base["src"] = "s";

  auto with_candidates = [&](nlohmann::json cands) {
    auto j = base;
    j["candidates"] = std::move(cands);
    return j.dump() + "\n";
  };
  CHECK(write_and_load(with_candidates({c0, c1})));
  CHECK_FALSE(write_and_load(with_candidates({c0, c0})));  // duplicates
  CHECK_FALSE(write_and_load(with_candidates({c0})));      // too small
  CHECK_FALSE(write_and_load("not json\n"));

  auto j = base;
  j["candidates"] = {c0, c1};
  j["mock_scores"] = {{{"init", 1.0}, {"fin", 1.0}}};  // misaligned
  CHECK_FALSE(write_and_load(j.dump() + "\n"));

  // duplicate prompt ids across lines
  CHECK_FALSE(write_and_load(with_candidates({c0, c1}) +
                             with_candidates({c0, c1})));
}
