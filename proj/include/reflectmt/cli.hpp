// SPDX-License-Identifier: Apache-2.0
//
// The reflectmt executable: datagen, train, infer, eval, and report
// subcommands over one shared config file. Exit codes are stable: 0 success,
// 2 usage or config error, 3 external-service failure, 4 data error.

#pragma once

#include <algorithm>
#include <atomic>
#include <csignal>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "reflectmt/config.hpp"
#include "reflectmt/datagen.hpp"
#include "reflectmt/gateway.hpp"
#include "reflectmt/grpo.hpp"
#include "reflectmt/inference.hpp"
#include "reflectmt/judge.hpp"
#include "reflectmt/policy.hpp"
#include "reflectmt/reward.hpp"
#include "reflectmt/util.hpp"

namespace reflectmt {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitService = 3;
inline constexpr int kExitData = 4;

// --- Offline simulation agents ------------------------------------------------
//
// Deterministic stand-ins for the remote translator and reflector: everything
// is a pure function of (seed, src), so identical runs write identical files.
// The hash spreads sources over first-pass quality, improvement speed, a few
// degrading chains, and a sliver of malformed generations, which exercises
// every filter verdict.

class SimTranslator final : public Translator {
 public:
  explicit SimTranslator(uint64_t seed) : seed_(seed) {}

  std::string translate(const std::string& src) override {
    uint64_t h = fnv1a64(src) ^ seed_;
    std::string y = "初译(" + src + ")";
    if (h % 13 == 0) y += "<answer>";  // malformed: payload embeds a tag
    return y;
  }

  std::string revise(const std::string& /*src*/, const std::string& prev,
                     const std::string& /*reflection*/,
                     double /*score*/) override {
    return prev + "·改";
  }

 private:
  uint64_t seed_;
};

class SimReflector final : public Reflector {
 public:
  explicit SimReflector(uint64_t seed) : seed_(seed) {}

  Review review(const std::string& src, const std::string& hyp) override {
    uint64_t h = fnv1a64(src) ^ seed_;
    int round = 0;
    for (size_t p = hyp.find("·改"); p != std::string::npos;
         p = hyp.find("·改", p + 1)) {
      ++round;
    }
    double base = 30.0 + static_cast<double>(h % 66);
    double step = (h % 7 == 0) ? -3.0 : 3.0 + static_cast<double>((h >> 8) % 9);
    double score = std::clamp(base + step * round, 0.0, 100.0);
    Review r;
    r.score = score;
    r.reflection = "第" + std::to_string(round + 1) + "轮点评:" +
                   (score >= 90.0 ? "译文达标" : "仍需提升准确性与流畅度");
    return r;
  }

 private:
  uint64_t seed_;
};

namespace detail {

inline std::atomic<bool>& stop_flag() {
  static std::atomic<bool> flag{false};
  return flag;
}

inline void handle_stop_signal(int) { stop_flag().store(true); }

inline std::vector<std::string> split_csv_row(const std::string& line) {
  std::vector<std::string> cells;
  size_t start = 0;
  while (true) {
    size_t comma = line.find(',', start);
    cells.push_back(line.substr(
        start, (comma == std::string::npos ? line.size() : comma) - start));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return cells;
}

// Minimal SVG line chart; optional output, so the core carries no plotting
// dependency.
struct ChartSeries {
  std::string name;
  std::vector<double> ys;
};

inline std::string svg_line_chart(const std::string& title,
                                  const std::vector<double>& xs,
                                  const std::vector<ChartSeries>& series) {
  const double w = 640.0, h = 400.0, ml = 70.0, mr = 20.0, mt = 40.0,
               mb = 45.0;
  double xmin = 0.0, xmax = 1.0, ymin = 0.0, ymax = 1.0;
  if (!xs.empty()) {
    xmin = *std::min_element(xs.begin(), xs.end());
    xmax = *std::max_element(xs.begin(), xs.end());
  }
  bool any = false;
  for (const auto& s : series) {
    for (double y : s.ys) {
      if (!any) {
        ymin = ymax = y;
        any = true;
      } else {
        ymin = std::min(ymin, y);
        ymax = std::max(ymax, y);
      }
    }
  }
  if (xmax <= xmin) xmax = xmin + 1.0;
  if (ymax <= ymin) ymax = ymin + 1.0;
  auto px = [&](double x) {
    return ml + (x - xmin) / (xmax - xmin) * (w - ml - mr);
  };
  auto py = [&](double y) {
    return h - mb - (y - ymin) / (ymax - ymin) * (h - mt - mb);
  };
  auto num = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.1f", v);
    return std::string(buf);
  };
  static const char* palette[] = {"#2563eb", "#dc2626", "#059669", "#9333ea"};
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w
      << "\" height=\"" << h << "\" viewBox=\"0 0 " << w << " " << h
      << "\">\n";
  svg << "<rect width=\"" << w << "\" height=\"" << h
      << "\" fill=\"#ffffff\"/>\n";
  svg << "<text x=\"" << w / 2 << "\" y=\"24\" text-anchor=\"middle\" "
         "font-family=\"sans-serif\" font-size=\"16\">"
      << title << "</text>\n";
  svg << "<line x1=\"" << ml << "\" y1=\"" << h - mb << "\" x2=\"" << w - mr
      << "\" y2=\"" << h - mb << "\" stroke=\"#444\"/>\n";
  svg << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml
      << "\" y2=\"" << h - mb << "\" stroke=\"#444\"/>\n";
  svg << "<text x=\"" << ml << "\" y=\"" << h - mb + 18
      << "\" font-family=\"sans-serif\" font-size=\"11\">" << num(xmin)
      << "</text>\n";
  svg << "<text x=\"" << w - mr << "\" y=\"" << h - mb + 18
      << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">"
      << num(xmax) << "</text>\n";
  svg << "<text x=\"" << ml - 6 << "\" y=\"" << h - mb
      << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">"
      << num(ymin) << "</text>\n";
  svg << "<text x=\"" << ml - 6 << "\" y=\"" << mt + 4
      << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">"
      << num(ymax) << "</text>\n";
  for (size_t s = 0; s < series.size(); ++s) {
    const char* color = palette[s % 4];
    svg << "<polyline fill=\"none\" stroke=\"" << color
        << "\" stroke-width=\"2\" points=\"";
    for (size_t i = 0; i < series[s].ys.size() && i < xs.size(); ++i) {
      if (i) svg << ' ';
      svg << num(px(xs[i])) << ',' << num(py(series[s].ys[i]));
    }
    svg << "\"/>\n";
    svg << "<text x=\"" << w - mr << "\" y=\"" << mt + 14 * (s + 1)
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" "
           "font-size=\"11\" fill=\""
        << color << "\">" << series[s].name << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

inline void require_file(const std::string& path, const std::string& what) {
  if (path.empty()) {
    throw ConfigError(what + ": no path configured (set it in the config "
                             "file or pass the flag)");
  }
  if (!std::filesystem::exists(path)) {
    throw ConfigError(what + ": file not found: " + path);
  }
}

}  // namespace detail

// --- datagen -------------------------------------------------------------------

struct DatagenCliArgs {
  std::string config_path;
  std::string src_path;      // overrides paths.sources
  std::string out_path;      // overrides paths.samples_out
  std::string sft_path;      // overrides paths.sft_out
  std::optional<double> theta;
  std::optional<int> k_max;
  std::optional<int> workers;
};

inline int cmd_datagen(const DatagenCliArgs& args, std::ostream& out,
                       std::ostream& err) {
  PipelineConfig cfg = load_config(args.config_path);
  apply_env_overrides(cfg);
  if (args.theta) cfg.datagen.theta = *args.theta;
  if (args.k_max) cfg.datagen.k_max = *args.k_max;
  if (args.workers) cfg.datagen.workers = *args.workers;
  validate_config(cfg);

  std::string src_path =
      args.src_path.empty() ? cfg.paths.sources : args.src_path;
  std::string out_path =
      args.out_path.empty() ? cfg.paths.samples_out : args.out_path;
  std::string sft_path =
      args.sft_path.empty() ? cfg.paths.sft_out : args.sft_path;
  detail::require_file(src_path, "datagen sources");
  if (out_path.empty()) {
    throw ConfigError("datagen output: no path configured (paths.samples_out "
                      "or --out)");
  }

  std::vector<std::string> srcs = load_corpus(src_path);
  GenConfig gen = to_gen_config(cfg);

  std::unique_ptr<Translator> translator;
  std::unique_ptr<Reflector> reflector;
  std::optional<GatewayClient> tclient;
  std::optional<GatewayClient> rclient;
  if (cfg.datagen.backend == "remote") {
    tclient.emplace(cfg.translator);
    rclient.emplace(cfg.reflector);
    translator = std::make_unique<RemoteTranslator>(*tclient);
    reflector = std::make_unique<RemoteReflector>(*rclient);
  } else {
    translator = std::make_unique<SimTranslator>(cfg.seed);
    reflector = std::make_unique<SimReflector>(cfg.seed);
  }

  PipelineResult result =
      run_pipeline(srcs, gen, *translator, *reflector,
                   static_cast<size_t>(cfg.datagen.workers));

  auto ensure_parent = [](const std::string& p) {
    std::filesystem::path parent = std::filesystem::path(p).parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
  };
  ensure_parent(out_path);
  write_samples_jsonl(result.kept, out_path);
  if (!sft_path.empty()) {
    ensure_parent(sft_path);
    write_sft_jsonl(result.kept, sft_path);
  }

  size_t invalid = 0, low = 0, degraded = 0;
  for (const auto& skip : result.filtered) {
    switch (skip.reason) {
      case FilterReason::InvalidFormat: ++invalid; break;
      case FilterReason::LowScore: ++low; break;
      case FilterReason::Degradation: ++degraded; break;
      case FilterReason::Kept: break;
    }
  }
  out << "sources: " << srcs.size() << "\n";
  out << "kept: " << result.kept.size() << "\n";
  out << "rejected[invalid_format]: " << invalid << "\n";
  out << "rejected[low_score]: " << low << "\n";
  out << "rejected[degradation]: " << degraded << "\n";
  out << "aborted: " << result.aborted.size() << "\n";
  out << "samples written to " << out_path << "\n";
  if (!sft_path.empty()) out << "sft records written to " << sft_path << "\n";
  if (!result.aborted.empty()) {
    for (const auto& f : result.aborted) {
      err << "aborted [" << f.index << "] " << f.src << ": " << f.error
          << "\n";
    }
    return kExitService;
  }
  return kExitOk;
}

// --- train ---------------------------------------------------------------------

struct TrainCliArgs {
  std::string config_path;
  int stage = 0;  // 1 or 2, required
  std::string resume_path;
  std::string out_dir;  // overrides paths.checkpoint_dir
  std::string task_path;  // overrides paths.task
};

inline int cmd_train(const TrainCliArgs& args, std::ostream& out,
                     std::ostream& err) {
  PipelineConfig cfg = load_config(args.config_path);
  apply_env_overrides(cfg);
  if (args.stage != 1 && args.stage != 2) {
    throw ConfigError("train: --stage must be 1 or 2");
  }
  if (args.stage == 2 && args.resume_path.empty()) {
    throw ConfigError(
        "train: --stage 2 requires --resume with a stage-1 checkpoint "
        "(stage 2 refines a policy that already internalized reflection)");
  }
  std::string task_path =
      args.task_path.empty() ? cfg.paths.task : args.task_path;
  std::string out_dir =
      args.out_dir.empty() ? cfg.paths.checkpoint_dir : args.out_dir;
  detail::require_file(task_path, "train task");
  if (out_dir.empty()) {
    throw ConfigError("train output: no directory configured "
                      "(paths.checkpoint_dir or --out-dir)");
  }
  if (!args.resume_path.empty()) {
    detail::require_file(args.resume_path, "train resume checkpoint");
  }

  auto sets = load_candidate_sets_jsonl(task_path);
  ToyPolicy policy(std::move(sets));
  MockJudge judge;
  seed_mock_judge(policy.sets(), judge);

  if (!args.resume_path.empty()) {
    CheckpointMeta meta = load_checkpoint(policy, args.resume_path);
    int got = static_cast<int>(meta.stage);
    if (got > args.stage) {
      throw ConfigError("train: checkpoint " + args.resume_path +
                        " is from stage " + std::to_string(got) +
                        ", cannot precede stage " + std::to_string(args.stage));
    }
    out << "resumed from " << args.resume_path << " (stage " << got
        << ", step " << meta.step << ")\n";
  }

  Stage stage = args.stage == 1 ? Stage::Stage1 : Stage::Stage2;

  detail::stop_flag().store(false);
  std::signal(SIGINT, detail::handle_stop_signal);
  std::signal(SIGTERM, detail::handle_stop_signal);
  StageResult result = run_stage(policy, judge, cfg.reward, stage, cfg.grpo,
                                 nullptr, &detail::stop_flag());
  std::signal(SIGINT, SIG_DFL);
  std::signal(SIGTERM, SIG_DFL);

  std::filesystem::create_directories(out_dir);
  std::string tag = "stage" + std::to_string(args.stage);
  std::string ckpt_path = out_dir + "/" + tag + ".json";
  std::string stats_path = out_dir + "/" + tag + "_stats.csv";
  save_checkpoint(policy, stage, result.steps_run, ckpt_path);
  save_stats_csv(result.timeline, stats_path);

  const TrainStats& first = result.timeline.front();
  const TrainStats& last = result.timeline.back();
  if (detail::stop_flag().load()) {
    err << "stop signal received: stage ended after the in-flight step\n";
  }
  out << "stage " << args.stage << ": steps=" << result.steps_run
      << " evals=" << result.timeline.size() << "\n";
  out << "mean_s_init " << format_double(first.mean_s_init) << " -> "
      << format_double(last.mean_s_init) << "\n";
  out << "mod_rate " << format_double(first.mod_rate) << " -> "
      << format_double(last.mod_rate) << "\n";
  out << "mean_delta_s " << format_double(first.mean_delta_s) << " -> "
      << format_double(last.mean_delta_s) << "\n";
  out << "checkpoint written to " << ckpt_path << "\n";
  out << "stats written to " << stats_path << "\n";
  return kExitOk;
}

// --- infer ---------------------------------------------------------------------

struct InferCliArgs {
  std::string config_path;
  std::string mode;  // "", "full", "early-stop"
  std::string corpus_path;
  std::string out_dir;
};

inline int cmd_infer(const InferCliArgs& args, std::ostream& out,
                     std::ostream& err) {
  PipelineConfig cfg = load_config(args.config_path);
  apply_env_overrides(cfg);
  InferenceMode mode =
      args.mode.empty() ? cfg.inference.mode : parse_mode(args.mode);
  std::string corpus_path =
      args.corpus_path.empty() ? cfg.paths.corpus : args.corpus_path;
  std::string out_dir =
      args.out_dir.empty() ? cfg.paths.report_dir : args.out_dir;
  detail::require_file(corpus_path, "infer corpus");
  if (out_dir.empty()) {
    throw ConfigError("infer output: no directory configured "
                      "(paths.report_dir or --out)");
  }
  std::vector<std::string> corpus = load_corpus(corpus_path);

  InferenceReport report;
  if (cfg.inference.backend == "remote") {
    GatewayClient generator(cfg.translator);
    GatewayClient judge_gw(cfg.judge);
    RemoteJudge judge(judge_gw);
    report.mode = mode;
    report.counting_source = "backend-usage";
    if (corpus.empty()) {
      report.empty = true;
    }
    size_t scored = 0;
    for (size_t i = 0; i < corpus.size(); ++i) {
      SentenceRow row;
      row.index = i;
      row.src = corpus[i];
      try {
        std::string prompt = fill_template(kTranslatorInitialTemplate,
                                           {{"src", corpus[i]}});
        InferenceResult res = infer_remote(
            generator, std::string(kTranslatorSystemPrompt), prompt, mode);
        row.translation = res.translation;
        row.parsed = res.parsed;
        row.tokens = res.tokens;
        if (!res.parsed) {
          row.error = "unparsed generation";
        } else {
          row.grf = judge.score_translation(corpus[i], row.translation).value;
          row.scored = true;
        }
      } catch (const GatewayError&) {
        throw;  // service failure aborts the run
      } catch (const std::exception& e) {
        row.error = e.what();
      }
      if (!row.scored) ++report.failures;
      report.tokens.per_sentence.push_back(row.tokens);
      if (row.scored) {
        report.mean_grf += row.grf;
        ++scored;
      }
      report.mean_tokens += static_cast<double>(row.tokens);
      report.rows.push_back(std::move(row));
    }
    if (scored > 0) report.mean_grf /= static_cast<double>(scored);
    if (!report.rows.empty()) {
      report.mean_tokens /= static_cast<double>(report.rows.size());
    }
  } else {
    // offline: the "trained model" is the simulation agents run through the
    // refinement loop, emitted as a structured stream per source
    SimTranslator translator(cfg.seed);
    SimReflector reflector(cfg.seed);
    GenConfig gen = to_gen_config(cfg);
    std::map<std::string, std::string> generations;
    MockJudge judge;
    for (const auto& src : corpus) {
      if (generations.count(src)) continue;
      try {
        ReflectiveSample s =
            run_refinement_loop(src, gen, translator, reflector);
        generations[src] = to_sft_record(s);
        judge.set_target(src, s.final_translation);
      } catch (const std::exception&) {
        // no generation: the factory below reports the failure per sentence
      }
    }
    auto factory = make_scripted_factory(generations);
    report = evaluate_corpus(corpus, factory, judge, mode);
    report.counting_source = cfg.inference.counting_source;
  }

  std::filesystem::create_directories(out_dir);
  std::string mode_tag = std::string(mode_name(mode));
  std::string csv_path = out_dir + "/report_" + mode_tag + ".csv";
  write_file(csv_path, report_to_csv(report));

  // pair with an existing full-mode summary so the early-stop summary can
  // carry the token reduction
  nlohmann::ordered_json summary;
  std::string full_summary_path = out_dir + "/summary_full.json";
  if (mode == InferenceMode::EarlyStop &&
      std::filesystem::exists(full_summary_path)) {
    auto full_j = nlohmann::json::parse(read_file(full_summary_path));
    InferenceReport baseline;
    baseline.mean_tokens = full_j.at("mean_tokens").get<double>();
    summary = summary_json(report, &baseline);
  } else {
    summary = summary_json(report);
  }
  std::string summary_path = out_dir + "/summary_" + mode_tag + ".json";
  write_file(summary_path, summary.dump(2) + "\n");

  out << summary.dump(2) << "\n";
  out << "report written to " << csv_path << "\n";
  out << "summary written to " << summary_path << "\n";
  if (report.failures > 0) {
    err << report.failures << " sentence(s) failed; see the error column\n";
  }
  return kExitOk;
}

// --- eval (reward inspection) ---------------------------------------------------

struct EvalCliArgs {
  std::string config_path;
  std::string rollout_path;
  std::string src_text;
  std::string src_file;
  int stage = 1;
  std::string judge_table;
};

inline int cmd_eval(const EvalCliArgs& args, std::ostream& out,
                    std::ostream& /*err*/) {
  PipelineConfig cfg = load_config(args.config_path);
  apply_env_overrides(cfg);
  if (args.stage != 1 && args.stage != 2) {
    throw ConfigError("eval: --stage must be 1 or 2");
  }
  detail::require_file(args.rollout_path, "eval rollout");
  std::string src = args.src_text;
  if (!args.src_file.empty()) {
    detail::require_file(args.src_file, "eval src file");
    src = trim(read_file(args.src_file));
  }
  if (src.empty()) {
    throw ConfigError("eval: provide the source sentence via --src or "
                      "--src-file");
  }
  std::string rollout = read_file(args.rollout_path);

  MockJudge judge;
  if (!args.judge_table.empty()) {
    detail::require_file(args.judge_table, "eval judge table");
    judge.load_table_jsonl(args.judge_table);
  }
  Stage stage = args.stage == 1 ? Stage::Stage1 : Stage::Stage2;
  RewardBreakdown b = score_rollout(rollout, src, judge, stage, cfg.reward);

  nlohmann::ordered_json j;
  j["stage"] = args.stage;
  j["r_form"] = b.r_form;
  j["r_trans"] = b.r_trans;
  j["r_refl"] = b.r_refl;
  j["r_imp"] = b.r_imp;
  j["s_init"] = b.s_init;
  j["s_fin"] = b.s_fin;
  j["delta_s"] = b.delta_s;
  j["total_R"] = b.total_R;
  j["v_rev"] = b.v_rev == RevisionFlag::Yes ? "yes" : "no";
  j["difficulty"] = std::string(to_string(difficulty_bucket(b.s_init)));
  out << j.dump(2) << "\n";
  return kExitOk;
}

// --- report --------------------------------------------------------------------

struct ReportCliArgs {
  std::string config_path;  // optional for report
  std::string stats_path;
  std::string out_dir;
  bool plot = false;
};

inline int cmd_report(const ReportCliArgs& args, std::ostream& out,
                      std::ostream& /*err*/) {
  std::string stats_path = args.stats_path;
  std::string out_dir = args.out_dir;
  if (!args.config_path.empty()) {
    PipelineConfig cfg = load_config(args.config_path);
    if (stats_path.empty()) stats_path = cfg.paths.stats_csv;
    if (out_dir.empty()) out_dir = cfg.paths.report_dir;
  }
  detail::require_file(stats_path, "report stats");
  if (out_dir.empty()) {
    throw ConfigError("report output: no directory configured "
                      "(paths.report_dir or --out)");
  }

  std::string text = read_file(stats_path);
  bool empty = trim_view(text).empty();
  std::vector<TrainStats> rows;
  if (!empty) {
    size_t nl = text.find('\n');
    std::string header =
        nl == std::string::npos ? text : text.substr(0, nl);
    if (!header.empty() && header.back() == '\r') header.pop_back();
    auto got = detail::split_csv_row(trim(header));
    auto want = detail::split_csv_row(kStatsCsvHeader);
    for (size_t i = 0; i < want.size(); ++i) {
      if (i >= got.size() || got[i] != want[i]) {
        throw ConfigError("stats csv: expected column '" + want[i] +
                          "' at position " + std::to_string(i + 1) +
                          (i < got.size() ? ", got '" + got[i] + "'"
                                          : ", got end of header"));
      }
    }
    if (got.size() > want.size()) {
      throw ConfigError("stats csv: unexpected extra column '" +
                        got[want.size()] + "'");
    }
    rows = parse_stats_csv(text);
    empty = rows.empty();
  }

  std::filesystem::create_directories(out_dir);
  std::vector<double> xs;
  for (const auto& r : rows) xs.push_back(static_cast<double>(r.step));

  struct Panel {
    std::string file;
    std::string header;
    std::string title;
    std::vector<detail::ChartSeries> series;
    std::function<std::string(const TrainStats&)> row_fn;
  };
  std::vector<Panel> panels;
  panels.push_back(
      {"modifications.csv", "step,modifications,mod_rate",
       "Modification count vs step",
       {{"modifications", {}}},
       [](const TrainStats& r) {
         return std::to_string(r.step) + "," +
                std::to_string(r.modifications) + "," +
                format_double(r.mod_rate);
       }});
  panels.push_back(
      {"scores.csv", "step,mean_s_init,mean_s_fin", "Mean score vs step",
       {{"mean_s_init", {}}, {"mean_s_fin", {}}},
       [](const TrainStats& r) {
         return std::to_string(r.step) + "," + format_double(r.mean_s_init) +
                "," + format_double(r.mean_s_fin);
       }});
  panels.push_back(
      {"delta.csv", "step,mean_delta_s", "Mean score delta vs step",
       {{"mean_delta_s", {}}},
       [](const TrainStats& r) {
         return std::to_string(r.step) + "," + format_double(r.mean_delta_s);
       }});
  panels.push_back(
      {"difficulty.csv", "step,mod_easy,mod_medium,mod_difficult",
       "Modifications by difficulty vs step",
       {{"mod_easy", {}}, {"mod_medium", {}}, {"mod_difficult", {}}},
       [](const TrainStats& r) {
         return std::to_string(r.step) + "," + std::to_string(r.mod_easy) +
                "," + std::to_string(r.mod_medium) + "," +
                std::to_string(r.mod_difficult);
       }});
  for (const auto& r : rows) {
    panels[0].series[0].ys.push_back(static_cast<double>(r.modifications));
    panels[1].series[0].ys.push_back(r.mean_s_init);
    panels[1].series[1].ys.push_back(r.mean_s_fin);
    panels[2].series[0].ys.push_back(r.mean_delta_s);
    panels[3].series[0].ys.push_back(static_cast<double>(r.mod_easy));
    panels[3].series[1].ys.push_back(static_cast<double>(r.mod_medium));
    panels[3].series[2].ys.push_back(static_cast<double>(r.mod_difficult));
  }

  for (const auto& p : panels) {
    std::string body = p.header + "\n";
    for (const auto& r : rows) body += p.row_fn(r) + "\n";
    write_file(out_dir + "/" + p.file, body);
    if (args.plot) {
      std::string svg = detail::svg_line_chart(p.title, xs, p.series);
      std::string svg_name = p.file.substr(0, p.file.size() - 4) + ".svg";
      write_file(out_dir + "/" + svg_name, svg);
    }
    out << "wrote " << out_dir << "/" << p.file << "\n";
  }
  out << "rows: " << rows.size() << "\n";
  if (empty) out << "empty: true (no data rows in " << stats_path << ")\n";
  return kExitOk;
}

// --- driver --------------------------------------------------------------------

inline int run_cli(std::vector<std::string> args, std::ostream& out,
                   std::ostream& err) {
  CLI::App app{"reflectmt: reflective machine-translation pipeline "
               "(data synthesis, two-stage training, inference, reporting)"};
  app.require_subcommand(1);
  std::string footer = "Config file keys (INI sections, key = value):\n";
  for (const auto& k : config_keys()) footer += "  " + k + "\n";
  footer +=
      "Environment overrides (secrets only): REFLECTMT_API_KEY, "
      "REFLECTMT_TRANSLATOR_API_KEY,\n  REFLECTMT_REFLECTOR_API_KEY, "
      "REFLECTMT_JUDGE_API_KEY";
  app.footer(footer);

  DatagenCliArgs dg;
  auto* datagen = app.add_subcommand(
      "datagen", "Run the translate-reflect-refine synthesis pipeline");
  datagen->add_option("--config", dg.config_path, "Pipeline config file")
      ->required();
  datagen->add_option("--src", dg.src_path,
                      "Source sentences (text or JSONL; default paths.sources)");
  datagen->add_option("--out", dg.out_path,
                      "Kept samples JSONL (default paths.samples_out)");
  datagen->add_option("--sft", dg.sft_path,
                      "SFT pairs JSONL (default paths.sft_out)");
  double theta_arg = 0.0;
  auto* theta_opt = datagen->add_option(
      "--theta", theta_arg, "Quality threshold in (0, 100] that stops the loop");
  int kmax_arg = 0;
  auto* kmax_opt =
      datagen->add_option("--k-max", kmax_arg, "Refinement round budget");
  int workers_arg = 0;
  auto* workers_opt =
      datagen->add_option("--workers", workers_arg, "Pipeline worker threads");

  TrainCliArgs tr;
  auto* train = app.add_subcommand(
      "train", "GRPO reflection-internalization training on the toy policy");
  train->add_option("--config", tr.config_path, "Pipeline config file")
      ->required();
  train->add_option("--stage", tr.stage, "Training stage: 1 or 2")->required();
  train->add_option("--resume", tr.resume_path,
                    "Checkpoint to start from (required for stage 2)");
  train->add_option("--out-dir", tr.out_dir,
                    "Output directory (default paths.checkpoint_dir)");
  train->add_option("--task", tr.task_path,
                    "Candidate-set task JSONL (default paths.task)");

  InferCliArgs inf;
  auto* infer_cmd =
      app.add_subcommand("infer", "Corpus inference with a GRF report");
  infer_cmd->add_option("--config", inf.config_path, "Pipeline config file")
      ->required();
  infer_cmd->add_option("--mode", inf.mode,
                        "Inference mode: full or early-stop "
                        "(default inference.mode)");
  infer_cmd->add_option("--corpus", inf.corpus_path,
                        "Corpus file (text or JSONL; default paths.corpus)");
  infer_cmd->add_option("--out", inf.out_dir,
                        "Report directory (default paths.report_dir)");

  EvalCliArgs ev;
  auto* eval_cmd = app.add_subcommand(
      "eval", "Score one structured rollout with the reward breakdown");
  eval_cmd->add_option("--config", ev.config_path, "Pipeline config file")
      ->required();
  eval_cmd->add_option("--rollout", ev.rollout_path,
                       "File holding the structured generation")
      ->required();
  eval_cmd->add_option("--src", ev.src_text, "Source sentence text");
  eval_cmd->add_option("--src-file", ev.src_file,
                       "File holding the source sentence");
  eval_cmd->add_option("--stage", ev.stage, "Reward stage: 1 or 2");
  eval_cmd->add_option("--judge-table", ev.judge_table,
                       "Mock judge score table JSONL");

  ReportCliArgs rp;
  auto* report = app.add_subcommand(
      "report", "Render training-dynamics tables from a stats CSV");
  report->add_option("--config", rp.config_path, "Pipeline config file");
  report->add_option("--stats", rp.stats_path,
                     "Stats CSV from train (default paths.stats_csv)");
  report->add_option("--out", rp.out_dir,
                     "Report directory (default paths.report_dir)");
  report->add_flag("--plot", rp.plot, "Also render SVG charts");

  int rc = kExitOk;
  datagen->callback([&] {
    if (*theta_opt) dg.theta = theta_arg;
    if (*kmax_opt) dg.k_max = kmax_arg;
    if (*workers_opt) dg.workers = workers_arg;
    rc = cmd_datagen(dg, out, err);
  });
  train->callback([&] { rc = cmd_train(tr, out, err); });
  infer_cmd->callback([&] { rc = cmd_infer(inf, out, err); });
  eval_cmd->callback([&] { rc = cmd_eval(ev, out, err); });
  report->callback([&] { rc = cmd_report(rp, out, err); });

  try {
    std::reverse(args.begin(), args.end());
    app.parse(std::move(args));
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << e.what() << "\n";
    return kExitUsage;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const GatewayError& e) {
    err << "service error: " << e.what() << "\n";
    return kExitService;
  } catch (const std::exception& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  }
  return rc;
}

inline int run_cli(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run_cli(std::move(args), std::cout, std::cerr);
}

}  // namespace reflectmt
