#include "cudpo/pipeline.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>

#include "cudpo/analysis.hpp"
#include "cudpo/dpo.hpp"
#include "cudpo/io.hpp"
#include "cudpo/rng.hpp"
#include "cudpo/supervision.hpp"
#include "cudpo/theory.hpp"

#ifndef CUDPO_VERSION
#define CUDPO_VERSION "0.0.0"
#endif

namespace fs = std::filesystem;

namespace cudpo {

std::string_view library_version() noexcept { return CUDPO_VERSION; }

std::string sha256_hex(std::string_view data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("sha256: digest failed");
  }
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[md[i] >> 4]);
    out.push_back(hex[md[i] & 0xF]);
  }
  return out;
}

std::string sha256_file(const fs::path& path) { return sha256_hex(io::read_text(path)); }

fs::path default_output_root() {
  const char* env = std::getenv("CUDPO_OUT");
  return env && *env ? fs::path(env) : fs::path("runs");
}

fs::path run_directory(const RunConfig& config, const fs::path& out_root) { return out_root / config.run_id; }

namespace {

class Csv {
 public:
  explicit Csv(std::initializer_list<std::string_view> header) {
    bool first = true;
    for (auto h : header) {
      if (!first) text_ << ',';
      text_ << h;
      first = false;
    }
    text_ << '\n';
  }

  template <typename... Ts>
  void row(const Ts&... values) {
    bool first = true;
    ((text_ << (first ? "" : ",") << cell(values), first = false), ...);
    text_ << '\n';
  }

  std::string str() const { return text_.str(); }

 private:
  static std::string cell(double v) { return io::format_double(v); }
  static std::string cell(const std::string& v) { return v; }
  static std::string cell(std::string_view v) { return std::string(v); }
  static std::string cell(const char* v) { return v; }
  static std::string cell(bool v) { return v ? "true" : "false"; }
  template <typename T>
    requires std::is_integral_v<T>
  static std::string cell(T v) {
    return std::to_string(v);
  }

  std::ostringstream text_;
};

fs::path require(const fs::path& dir, std::string_view name) {
  const auto p = dir / name;
  if (!fs::exists(p)) throw std::runtime_error("missing upstream artifact " + std::string(name));
  return p;
}

void write_file(const fs::path& dir, StageOutput& out, const std::string& rel, std::string_view content) {
  io::write_text(dir / rel, content);
  out.files.push_back(rel);
}

World load_run_world(const fs::path& dir) { return load_world(require(dir, "world.tsv")); }

std::vector<ChainRecord> load_run_chains(const fs::path& dir) { return load_chains(require(dir, "chains.tsv")); }

struct TrainingSets {
  std::vector<PreferencePair> phase1;
  std::vector<PreferencePair> phase2;
  std::vector<PreferencePair> all_pairs;
};

TrainingSets load_training_sets(const fs::path& dir, const ChainIndex& index, std::span<const ChainRecord> chains) {
  TrainingSets sets;
  for (auto& p : import_pairs(require(dir, "pairs.tsv"), &index)) {
    (p.phase == Phase::phase2 ? sets.phase2 : sets.phase1).push_back(p);
  }
  sets.all_pairs = build_all_pairs_corpus(chains);
  return sets;
}

TrainSchedule trained_schedule(const fs::path& dir) {
  const auto lines = io::read_lines(require(dir, "reports/train_phases.csv"));
  if (lines.size() < 2) throw std::runtime_error("reports/train_phases.csv has no rows");
  return parse_train_schedule(io::split(lines[1], ',').at(0));
}

std::vector<PreferencePair> schedule_pairs(const TrainingSets& sets, TrainSchedule s) {
  if (s == TrainSchedule::all_pairs) return sets.all_pairs;
  std::vector<PreferencePair> out = sets.phase1;
  if (s == TrainSchedule::two_phase) out.insert(out.end(), sets.phase2.begin(), sets.phase2.end());
  return out;
}

std::string fmt(double x) { return io::format_double(x); }

}  // namespace

StageOutput stage_world(const RunConfig& config, const fs::path& dir) {
  StageOutput out;
  const World w = generate_world(config.effective_world(), config.effective_judge());
  save_world(w, dir / "world.tsv");
  out.files.push_back("world.tsv");
  const auto st = world_stats(w);
  Csv csv({"n_problems", "k_strategies", "mean_best", "mean_worst", "mean_best_worst_margin", "mean_range",
           "min_range", "max_range", "fraction_range_above_0_3", "mean_utility"});
  csv.row(w.n_problems(), w.k_strategies(), st.mean_best, st.mean_worst, st.mean_best_worst_margin, st.mean_range,
          st.min_range, st.max_range, st.fraction_range_above_0_3, st.mean_utility);
  write_file(dir, out, "reports/world_stats.csv", csv.str());
  out.summary = {{"problems", std::to_string(w.n_problems())},
                 {"strategies", std::to_string(w.k_strategies())},
                 {"mean_best", fmt(st.mean_best)},
                 {"mean_best_worst_margin", fmt(st.mean_best_worst_margin)},
                 {"mean_range", fmt(st.mean_range)}};
  return out;
}

StageOutput stage_score(const RunConfig& config, const fs::path& dir, unsigned jobs) {
  StageOutput out;
  const World w = load_run_world(dir);
  const auto chains = sample_original_chains(w, config.effective_sampling(), jobs);
  save_chains(chains, dir / "chains.tsv");
  out.files.push_back("chains.tsv");
  double mean = 0.0;
  for (const auto& c : chains) mean += c.utility / static_cast<double>(chains.size());
  out.summary = {{"original_chains", std::to_string(chains.size())}, {"mean_utility", fmt(mean)}};
  return out;
}

StageOutput stage_refine(const RunConfig& config, const fs::path& dir, unsigned jobs) {
  StageOutput out;
  const World w = load_run_world(dir);
  auto chains = load_run_chains(dir);
  std::erase_if(chains, [](const ChainRecord& c) { return c.generation != 0; });
  if (!config.refine_enabled) {
    save_chains(chains, dir / "chains.tsv");
    out.files.push_back("chains.tsv");
    out.summary = {{"refine", "disabled"}};
    return out;
  }
  const auto res =
      refine_corpus(w, chains, config.refine, config.improvement, derive_key(config.seed, "refine"), jobs);
  chains.insert(chains.end(), res.refined.begin(), res.refined.end());
  save_chains(chains, dir / "chains.tsv");
  out.files.push_back("chains.tsv");
  save_traces(res.traces, dir / "refine_traces.tsv");
  out.files.push_back("refine_traces.tsv");
  const auto& s = res.summary;
  Csv csv({"n_chains", "n_eligible", "n_success", "n_stagnation", "n_max_rounds", "n_retained", "n_refined_chains",
           "eligibility_rate", "success_rate", "success_within_three_rate", "mean_rounds", "success_concentration"});
  csv.row(s.n_chains, s.n_eligible, s.n_success, s.n_stagnation, s.n_max_rounds, s.n_retained, s.n_refined_chains,
          s.eligibility_rate, s.success_rate, s.success_within_three_rate, s.mean_rounds, s.success_concentration);
  write_file(dir, out, "reports/refine_summary.csv", csv.str());
  out.summary = {{"eligible", std::to_string(s.n_eligible)},
                 {"success_rate", fmt(s.success_rate)},
                 {"mean_rounds", fmt(s.mean_rounds)},
                 {"refined_chains", std::to_string(s.n_refined_chains)}};
  return out;
}

std::string dataset_stats_csv(std::span<const PreferencePair> pairs) {
  Csv csv({"subset", "n_problems", "n_pairs", "n_phase1", "n_phase2", "mean_margin", "median_margin", "std_margin",
           "min_margin", "max_margin", "strong_fraction", "medium_fraction", "weak_fraction", "hybrid_fraction",
           "refined_refined_fraction"});
  auto emit = [&](std::string_view name, std::span<const PreferencePair> subset) {
    if (subset.empty()) return;
    const auto s = dataset_stats(subset);
    const auto bins = s.bin_fractions.value_or(std::array<double, 3>{0.0, 0.0, 0.0});
    csv.row(name, s.n_problems, s.n_pairs, s.n_phase1, s.n_phase2, s.mean_margin, s.median_margin, s.std_margin,
            s.min_margin, s.max_margin, bins[0], bins[1], bins[2], s.hybrid_fraction, s.refined_refined_fraction);
  };
  std::vector<PreferencePair> p1;
  std::vector<PreferencePair> p2;
  for (const auto& p : pairs) (p.phase == Phase::phase2 ? p2 : p1).push_back(p);
  emit("all", pairs);
  emit("phase1", p1);
  emit("phase2", p2);
  return csv.str();
}

StageOutput stage_pairs(const RunConfig& config, const fs::path& dir, unsigned jobs) {
  StageOutput out;
  const auto chains = load_run_chains(dir);
  const ChainIndex index(chains);
  auto pairs = build_phase1_corpus(chains, jobs);
  const std::size_t n1 = pairs.size();
  if (config.phase2_enabled) {
    const auto p2 = build_phase2_corpus(chains, config.plan, derive_key(config.seed, "phase2-pairs"), jobs);
    pairs.insert(pairs.end(), p2.begin(), p2.end());
  }
  export_pairs(pairs, index, dir / "pairs.tsv");
  out.files.push_back("pairs.tsv");
  export_preference_jsonl(pairs, dir / "pairs.pref.txt");
  out.files.push_back("pairs.pref.txt");
  write_file(dir, out, "reports/dataset_stats.csv", dataset_stats_csv(pairs));
  const auto s = dataset_stats(pairs);
  out.summary = {{"phase1_pairs", std::to_string(n1)},
                 {"phase2_pairs", std::to_string(pairs.size() - n1)},
                 {"mean_margin", fmt(s.mean_margin)},
                 {"hybrid_fraction", fmt(s.hybrid_fraction)}};
  return out;
}

StageOutput stage_train(const RunConfig& config, const fs::path& dir, unsigned jobs) {
  StageOutput out;
  const auto chains = load_run_chains(dir);
  const ChainIndex index(chains);
  const auto sets = load_training_sets(dir, index, chains);
  TrainConfig tc = config.train;
  tc.seed = derive_key(config.seed, "train");
  tc.jobs = jobs;
  const auto label_draw = derive_key(config.seed, "labels");
  auto policy = make_policy(index, config.beta);
  Csv phases({"schedule", "phase", "n_pairs", "initial_loss", "final_loss", "steps", "converged", "win_rate"});
  const auto sched = std::string(to_string(config.schedule));
  std::vector<double> curve;
  PolicyParams trained = policy;
  if (config.schedule == TrainSchedule::two_phase) {
    const auto res = train_two_phase(policy, to_train_pairs(sets.phase1, index, config.supervision, label_draw),
                                     to_train_pairs(sets.phase2, index, config.supervision, label_draw), tc,
                                     !config.phase2_enabled);
    auto emit = [&](std::string_view name, const PhaseReport& r) {
      phases.row(sched, name, r.n_pairs, r.initial_loss, r.final_loss, r.steps, r.converged, r.win_rate);
    };
    emit("phase1", res.phase1);
    if (res.phase2) emit("phase2", *res.phase2);
    trained = res.params;
    curve = res.loss_curve;
  } else {
    const auto& src = config.schedule == TrainSchedule::phase1 ? sets.phase1 : sets.all_pairs;
    const auto tp = to_train_pairs(src, index, config.supervision, label_draw);
    const auto res = train(policy, tp, tc);
    phases.row(sched, config.schedule == TrainSchedule::phase1 ? "phase1" : "all_pairs", tp.size(),
               res.loss_curve.front(), res.loss_curve.back(), res.steps, res.converged, win_rate(res.params, tp));
    trained = res.params;
    curve = res.loss_curve;
  }
  save_checkpoint(trained, config.seed, dir / "checkpoint.txt");
  out.files.push_back("checkpoint.txt");
  save_loss_curve(curve, dir / "reports/loss_curve.csv");
  out.files.push_back("reports/loss_curve.csv");
  write_file(dir, out, "reports/train_phases.csv", phases.str());
  out.summary = {{"schedule", sched},
                 {"steps", std::to_string(curve.size() - 1)},
                 {"final_loss", fmt(curve.back())}};
  return out;
}

StageOutput stage_eval(const RunConfig& config, const fs::path& dir, unsigned jobs,
                       const std::set<std::string>& metrics) {
  for (const auto& m : metrics) {
    if (m != "alignment" && m != "winrate" && m != "ranking" && m != "bt" && m != "scaling") {
      throw std::invalid_argument("unknown metric: " + m);
    }
  }
  auto want = [&](const char* m) { return metrics.empty() || metrics.contains(m); };
  StageOutput out;
  const World w = load_run_world(dir);
  const auto chains = load_run_chains(dir);
  const ChainIndex index(chains);
  const auto ck = load_checkpoint(require(dir, "checkpoint.txt"));
  const auto& params = ck.params;
  const auto counts = index.slot_counts();
  bool shape_ok = params.n_problems() == counts.size();
  for (std::uint32_t p = 0; shape_ok && p < counts.size(); ++p) shape_ok = params.slots(p) == counts[p];
  if (!shape_ok) throw std::runtime_error("checkpoint does not match chains.tsv");
  const auto sets = load_training_sets(dir, index, chains);
  const auto schedule = trained_schedule(dir);
  const auto trained_pairs = schedule_pairs(sets, schedule);
  const auto utilities = index.slot_utilities();
  const std::uint32_t k = w.k_strategies();
  Csv metric_csv({"metric", "value", "n"});

  if (want("alignment")) {
    std::vector<std::vector<bool>> primary(index.n_problems());
    for (std::uint32_t p = 0; p < index.n_problems(); ++p) {
      primary[p].assign(utilities[p].size(), false);
      for (std::uint32_t s = 0; s < k; ++s) {
        if (const auto slot = index.primary_slot(p, StrategyId{s})) primary[p][*slot] = true;
      }
    }
    const auto strat = fit_reward_utility(params, utilities, primary);
    const auto tp = to_train_pairs(trained_pairs, index, Supervision::continuous);
    const auto all = fit_reward_utility(params, utilities, trained_slots(params, tp));
    Csv csv({"scope", "n_points", "slope", "r2"});
    csv.row("strategy", strat.n_points, strat.slope, strat.r2);
    csv.row("trained_slots", all.n_points, all.slope, all.r2);
    write_file(dir, out, "reports/alignment.csv", csv.str());
    Csv pts({"problem", "strategy", "utility", "implicit_reward", "reward_minus_intercept"});
    for (std::uint32_t p = 0; p < index.n_problems(); ++p) {
      for (std::uint32_t s = 0; s < k; ++s) {
        const auto slot = index.primary_slot(p, StrategyId{s});
        if (!slot) continue;
        const double r = implicit_reward(params, p, *slot);
        pts.row(p, strategy_label(StrategyId{s}), utilities[p][*slot], r, r - strat.intercepts[p]);
      }
    }
    write_file(dir, out, "reports/alignment_points.csv", pts.str());
    out.summary.emplace_back("alignment_r2", fmt(strat.r2));
    out.summary.emplace_back("alignment_slope", fmt(strat.slope));
    out.summary.emplace_back("alignment_r2_trained_slots", fmt(all.r2));
  }

  if (want("winrate")) {
    const auto tp = to_train_pairs(trained_pairs, index, Supervision::continuous);
    metric_csv.row("train_win_rate", win_rate(params, tp), tp.size());
    out.summary.emplace_back("train_win_rate", fmt(win_rate(params, tp)));
    // Cross-strategy comparisons the schedule never trained on.
    std::set<std::pair<ChainId, ChainId>> seen;
    for (const auto& p : trained_pairs) seen.emplace(p.winner, p.loser);
    std::vector<PreferencePair> held;
    for (const auto& p : sets.all_pairs) {
      if (!seen.contains({p.winner, p.loser})) held.push_back(p);
    }
    if (!held.empty()) {
      const auto hp = to_train_pairs(held, index, Supervision::continuous);
      metric_csv.row("heldout_win_rate", win_rate(params, hp), hp.size());
      out.summary.emplace_back("heldout_win_rate", fmt(win_rate(params, hp)));
    }
  }

  if (want("ranking")) {
    std::vector<RankVector> pol;
    std::vector<RankVector> truth;
    double rho = 0.0;
    for (std::uint32_t p = 0; p < w.n_problems(); ++p) {
      pol.push_back(policy_ranking(params, index, p, k));
      truth.push_back(true_ranking(w, p));
      rho += spearman_rho(pol.back(), truth.back()) / w.n_problems();
    }
    metric_csv.row("mean_spearman_rho", rho, w.n_problems());
    metric_csv.row("top1_rate", top_k_rate(pol, truth, 1), w.n_problems());
    metric_csv.row("top" + std::to_string(config.top_k) + "_rate", top_k_rate(pol, truth, config.top_k),
                   w.n_problems());
    out.summary.emplace_back("mean_spearman_rho", fmt(rho));
    out.summary.emplace_back("top1_rate", fmt(top_k_rate(pol, truth, 1)));
  }

  if (want("bt")) {
    const auto samples = sample_preferences(trained_pairs, index, config.bt_samples, derive_key(config.seed, "bt"));
    const auto fit = bt_fit(samples, params, config.bt_buckets);
    Csv csv({"bucket", "count", "mean_reward_margin", "predicted", "empirical"});
    for (std::size_t b = 0; b < fit.buckets.size(); ++b) {
      const auto& x = fit.buckets[b];
      csv.row(b, x.count, x.mean_reward_margin, x.predicted, x.empirical);
    }
    write_file(dir, out, "reports/bt_fit.csv", csv.str());
    metric_csv.row("bt_fit_r2", fit.r2, fit.n_samples);
    out.summary.emplace_back("bt_fit_r2", fmt(fit.r2));
  }

  if (want("scaling") && config.scaling_enabled) {
    ScalingConfig sc;
    sc.seeds = config.scaling_seeds;
    sc.beta = config.beta;
    sc.train = config.train;
    sc.train.epochs = config.scaling_epochs;
    sc.jobs = jobs;
    const auto curve = scaling_curve(index, sets.all_pairs, sc, derive_key(config.seed, "scaling"));
    Csv csv({"fraction", "n_train", "n_heldout", "seeds", "binary_mean", "binary_se", "continuous_mean",
             "continuous_se", "gap_mean", "gap_se"});
    for (const auto& p : curve.points) {
      csv.row(p.fraction, p.n_train, curve.n_heldout, curve.seeds, p.binary.mean, p.binary.standard_error,
              p.continuous.mean, p.continuous.standard_error, p.gap.mean, p.gap.standard_error);
    }
    write_file(dir, out, "reports/scaling.csv", csv.str());
    out.summary.emplace_back("scaling_gap_first", fmt(curve.points.front().gap.mean));
    out.summary.emplace_back("scaling_gap_last", fmt(curve.points.back().gap.mean));
  }

  if (want("winrate") || want("ranking") || want("bt")) {
    write_file(dir, out, "reports/metrics.csv", metric_csv.str());
  }
  return out;
}

StageOutput stage_theory(const RunConfig& config, const fs::path& dir, unsigned jobs,
                         const std::set<std::string>& suites) {
  for (const auto& s : suites) {
    if (s != "coupon" && s != "efficiency" && s != "bounds" && s != "conflict") {
      throw std::invalid_argument("unknown theory suite: " + s);
    }
  }
  auto want = [&](const char* s) { return suites.empty() || suites.contains(s); };
  StageOutput out;
  const auto draw = derive_key(config.seed, "theory");

  if (want("coupon")) {
    const auto est = simulate_binary_passive(config.coupon_k, config.coupon_trials, draw, jobs);
    const double closed = coupon_collector_expected(config.coupon_k);
    Csv csv({"k", "mode", "trials", "mean", "standard_error", "closed_form", "relative_error"});
    csv.row(config.coupon_k, "binary_passive", est.trials, est.mean, est.standard_error, closed,
            std::abs(est.mean - closed) / closed);
    write_file(dir, out, "reports/theory_coupon.csv", csv.str());
    out.summary.emplace_back("coupon_mean", fmt(est.mean));
    out.summary.emplace_back("coupon_closed_form", fmt(closed));
  }

  if (want("efficiency")) {
    std::vector<std::uint32_t> ks;
    for (std::uint32_t k = config.efficiency_k_min; k <= config.efficiency_k_max; ++k) ks.push_back(k);
    const auto rep = efficiency_ratio(ks, config.efficiency_trials, draw, jobs);
    Csv csv({"k", "trials", "binary_mean", "binary_se", "coverage_mean", "coverage_se", "continuous_samples", "ratio",
             "coupon_ratio", "fit", "residual"});
    for (std::size_t i = 0; i < rep.rows.size(); ++i) {
      const auto& r = rep.rows[i];
      csv.row(r.k, r.binary.trials, r.binary.mean, r.binary.standard_error, r.coverage.mean,
              r.coverage.standard_error, r.continuous_samples, r.ratio, r.coupon_ratio,
              r.ratio - rep.residuals[i], rep.residuals[i]);
    }
    write_file(dir, out, "reports/theory_efficiency.csv", csv.str());
    Csv fit({"fit_a", "fit_r2", "growth_exponent"});
    fit.row(rep.fit_a, rep.fit_r2, rep.growth_exponent);
    write_file(dir, out, "reports/theory_efficiency_fit.csv", fit.str());
    out.summary.emplace_back("efficiency_fit_r2", fmt(rep.fit_r2));
  }

  if (want("bounds")) {
    BoundInputs in;
    in.n_problems = config.world.n_problems;
    in.k_strategies = config.world.k_strategies;
    in.vc_dim = config.vc_dim;
    in.epsilon = config.epsilon;
    in.noise_bound = config.judge.noise_bound;
    in.eta = config.eta;
    const auto cov = hoeffding_coverage(config.judge, config.epsilon, config.eta, config.hoeffding_repetitions,
                                        derive_key(config.seed, "hoeffding"), jobs);
    Csv csv({"quantity", "value"});
    csv.row("binary_lower_bound", binary_lower_bound(in));
    csv.row("utility_upper_bound", utility_upper_bound(in));
    csv.row("utility_upper_bound_log", utility_upper_bound_log(in));
    csv.row("fano_lower_bound_per_problem", fano_lower_bound(config.world.k_strategies, config.eta));
    csv.row("clean_fraction", clean_fraction(config.world.k_strategies));
    csv.row("robust_sample_count", robust_sample_count(in.noise_bound, in.epsilon, in.eta));
    csv.row("noise_term", noise_term(in.n_problems, in.noise_bound, in.epsilon));
    csv.row("hoeffding_repetitions", cov.repetitions);
    csv.row("hoeffding_coverage", cov.coverage);
    write_file(dir, out, "reports/theory_bounds.csv", csv.str());
    out.summary.emplace_back("noise_term", std::to_string(noise_term(in.n_problems, in.noise_bound, in.epsilon)));
    out.summary.emplace_back("hoeffding_coverage", fmt(cov.coverage));
  }

  if (want("conflict") && config.conflict_enabled) {
    const World w = load_run_world(dir);
    ConflictConfig cc;
    cc.seeds = config.conflict_seeds;
    cc.sampling = config.effective_sampling();
    cc.refine = config.refine_enabled;
    cc.refine_policy = config.refine;
    cc.improvement = config.improvement;
    cc.plan = config.plan;
    cc.supervision = config.supervision;
    cc.beta = config.beta;
    cc.step_budget = config.conflict_budget;
    cc.jobs = jobs;
    const auto rep = conflict_experiment(w, cc, derive_key(config.seed, "conflict"));
    Csv csv({"mode", "seeds", "accuracy_mean", "accuracy_se", "mid_dispersion_mean", "mid_dispersion_se",
             "pairs_per_problem", "clean_share", "pair_count_ratio"});
    auto emit = [&](std::string_view name, const ConflictArm& a) {
      csv.row(name, rep.seeds, a.accuracy.mean, a.accuracy.standard_error, a.mid_evidence_dispersion.mean,
              a.mid_evidence_dispersion.standard_error, a.pairs_per_problem, a.clean_share, rep.pair_count_ratio);
    };
    emit("all_pairs", rep.all_pairs);
    emit("two_phase", rep.two_phase);
    write_file(dir, out, "reports/theory_conflict.csv", csv.str());
    out.summary.emplace_back("conflict_accuracy_all_pairs", fmt(rep.all_pairs.accuracy.mean));
    out.summary.emplace_back("conflict_accuracy_two_phase", fmt(rep.two_phase.accuracy.mean));
  }
  return out;
}

StageOutput stage_report(const RunConfig& config, const fs::path& dir) {
  StageOutput out;
  std::ostringstream md;
  md << "# cudpo run `" << config.run_id << "`\n\n";
  md << "Library version " << library_version() << ".\n\n";
  md << "Win rates are measured on preference pairs only: the share of pairs whose higher-utility chain "
        "receives the larger implicit reward, with ties counted as one half. Held-out pairs are the "
        "cross-strategy comparisons the training schedule did not use.\n\n";
  md << "## Configuration\n\n```\n" << config.to_text() << "```\n";
  std::vector<fs::path> csvs;
  if (fs::exists(dir / "reports")) {
    for (const auto& e : fs::directory_iterator(dir / "reports")) {
      if (e.path().extension() == ".csv") csvs.push_back(e.path());
    }
  }
  std::sort(csvs.begin(), csvs.end());
  for (const auto& p : csvs) {
    const auto lines = io::read_lines(p);
    if (lines.empty()) continue;
    md << "\n## " << p.stem().string() << "\n\n";
    const std::size_t limit = 40;
    for (std::size_t i = 0; i < lines.size() && i <= limit; ++i) {
      const auto cells = io::split(lines[i], ',');
      md << '|';
      for (auto c : cells) md << ' ' << c << " |";
      md << '\n';
      if (i == 0) {
        md << '|';
        for (std::size_t c = 0; c < cells.size(); ++c) md << " --- |";
        md << '\n';
      }
    }
    if (lines.size() > limit + 1) md << "\n(" << lines.size() - 1 - limit << " more rows in " << p.filename().string() << ")\n";
  }
  write_file(dir, out, "report.md", md.str());
  return out;
}

void save_manifest(const RunManifest& m, const fs::path& path) {
  std::ostringstream out;
  out << "# cudpo-manifest v1\n";
  out << "version\t" << m.version << '\n';
  out << "run_id\t" << m.run_id << '\n';
  out << "status\t" << m.status << '\n';
  if (!m.failed_stage.empty()) out << "failed_stage\t" << m.failed_stage << '\n';
  if (!m.error.empty()) {
    std::string e = m.error;
    std::replace(e.begin(), e.end(), '\n', ' ');
    std::replace(e.begin(), e.end(), '\t', ' ');
    out << "error\t" << e << '\n';
  }
  out << "jobs\t" << m.jobs << '\n';
  out << "[config]\n";
  for (const auto& [k, v] : m.config) out << k << '\t' << v << '\n';
  out << "[timings]\n";
  for (const auto& [k, v] : m.timings) out << k << '\t' << io::format_fixed(v, 6) << '\n';
  out << "[artifacts]\n";
  for (const auto& a : m.artifacts) out << a.path << '\t' << a.bytes << '\t' << a.sha256 << '\n';
  io::write_text(path, out.str());
}

RunManifest load_manifest(const fs::path& path) {
  const auto lines = io::read_lines(path);
  if (lines.empty() || lines[0] != "# cudpo-manifest v1") throw std::runtime_error("load_manifest: bad header");
  RunManifest m;
  std::string section;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto& line = lines[i];
    if (line.empty()) continue;
    if (line.front() == '[') {
      section = line;
      continue;
    }
    const auto f = io::split(line, '\t');
    if (section.empty()) {
      if (f.size() != 2) throw std::runtime_error("load_manifest: malformed line " + std::to_string(i + 1));
      const std::string v(f[1]);
      if (f[0] == "version") m.version = v;
      else if (f[0] == "run_id") m.run_id = v;
      else if (f[0] == "status") m.status = v;
      else if (f[0] == "failed_stage") m.failed_stage = v;
      else if (f[0] == "error") m.error = v;
      else if (f[0] == "jobs") m.jobs = static_cast<unsigned>(io::parse_uint(v, "jobs"));
    } else if (section == "[config]" && f.size() == 2) {
      m.config.emplace_back(std::string(f[0]), std::string(f[1]));
    } else if (section == "[timings]" && f.size() == 2) {
      m.timings.emplace_back(std::string(f[0]), io::parse_double(f[1], "timing"));
    } else if (section == "[artifacts]" && f.size() == 3) {
      m.artifacts.push_back({std::string(f[0]), io::parse_uint(f[1], "bytes"), std::string(f[2])});
    } else {
      throw std::runtime_error("load_manifest: malformed line " + std::to_string(i + 1));
    }
  }
  return m;
}

std::vector<std::string> verify_manifest(const fs::path& run_dir) {
  const auto m = load_manifest(run_dir / "manifest.txt");
  std::vector<std::string> bad;
  for (const auto& a : m.artifacts) {
    const auto p = run_dir / a.path;
    if (!fs::exists(p) || fs::file_size(p) != a.bytes || sha256_file(p) != a.sha256) bad.push_back(a.path);
  }
  return bad;
}

RunManifest run_pipeline(const RunConfig& config, const fs::path& out_root, unsigned jobs) {
  config.validate();
  const auto dir = run_directory(config, out_root);
  if (fs::exists(dir)) {
    if (fs::exists(dir / "manifest.txt")) {
      fs::remove_all(dir);
    } else if (!fs::is_empty(dir)) {
      throw std::runtime_error("refusing to overwrite nonempty directory without a manifest: " + dir.string());
    }
  }
  fs::create_directories(dir / "reports");

  RunManifest m;
  m.version = std::string(library_version());
  m.run_id = config.run_id;
  m.status = "incomplete";
  m.jobs = jobs;
  m.config = config.snapshot();

  std::set<std::string> files;
  auto finish = [&] {
    m.artifacts.clear();
    for (const auto& f : files) {
      const auto p = dir / f;
      if (!fs::exists(p)) continue;
      m.artifacts.push_back({f, fs::file_size(p), sha256_file(p)});
    }
    save_manifest(m, dir / "manifest.txt");
  };

  for (std::string_view stage : kStages) {
    const auto t0 = std::chrono::steady_clock::now();
    try {
      StageOutput o;
      if (stage == "world") o = stage_world(config, dir);
      else if (stage == "score") o = stage_score(config, dir, jobs);
      else if (stage == "refine") o = stage_refine(config, dir, jobs);
      else if (stage == "pairs") o = stage_pairs(config, dir, jobs);
      else if (stage == "train") o = stage_train(config, dir, jobs);
      else if (stage == "eval") o = stage_eval(config, dir, jobs);
      else if (stage == "theory") o = stage_theory(config, dir, jobs);
      else o = stage_report(config, dir);
      files.insert(o.files.begin(), o.files.end());
    } catch (const std::exception& e) {
      m.failed_stage = std::string(stage);
      m.error = e.what();
      m.timings.emplace_back(std::string(stage),
                             std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
      finish();
      throw StageError(std::string(stage), e.what());
    }
    m.timings.emplace_back(std::string(stage),
                           std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  }
  m.status = "complete";
  finish();
  return m;
}

}  // namespace cudpo
