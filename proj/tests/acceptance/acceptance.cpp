// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "cudpo/analysis.hpp"
#include "cudpo/chains.hpp"
#include "cudpo/dpo.hpp"
#include "cudpo/io.hpp"
#include "cudpo/pairs.hpp"
#include "cudpo/pipeline.hpp"
#include "cudpo/refine.hpp"
#include "cudpo/rng.hpp"
#include "cudpo/supervision.hpp"
#include "cudpo/theory.hpp"
#include "cudpo/world.hpp"

using namespace cudpo;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

unsigned g_jobs = 1;
fs::path g_scratch;

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

/// Value of `column` in the row whose first field is `key`.
double csv_value(const fs::path& path, const std::string& key, const std::string& column) {
  const auto lines = io::read_lines(path);
  const auto header = io::split(lines.at(0), ',');
  const auto col = std::find(header.begin(), header.end(), column) - header.begin();
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto f = io::split(lines[i], ',');
    if (!f.empty() && f[0] == key) return io::parse_double(f.at(col), column);
  }
  throw std::runtime_error(path.string() + ": no row " + key);
}

RunConfig noiseless_config(double beta) {
  RunConfig c;
  apply_overrides(c, {"world.n_problems=200", "world.samples_per_strategy=1", "world.execution_sd=0",
                      "judge.noiseless=true", "train.beta=" + fmt(beta)});
  c.validate();
  return c;
}

fs::path trained_noiseless_run(double beta) {
  const auto dir = g_scratch / ("noiseless_" + fmt(beta));
  fs::remove_all(dir);
  fs::create_directories(dir / "reports");
  const auto c = noiseless_config(beta);
  stage_world(c, dir);
  stage_score(c, dir, g_jobs);
  stage_refine(c, dir, g_jobs);
  stage_pairs(c, dir, g_jobs);
  stage_train(c, dir, g_jobs);
  stage_eval(c, dir, g_jobs, {"alignment", "bt"});
  return dir;
}

Outcome alignment() {
  Outcome o{true, ""};
  double slowest = 0.0;
  for (double beta : {0.05, 0.1, 0.2}) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto dir = trained_noiseless_run(beta);
    slowest = std::max(slowest, seconds_since(t0));
    const auto csv = dir / "reports/alignment.csv";
    const double r2 = csv_value(csv, "strategy", "r2");
    const double slope = csv_value(csv, "strategy", "slope");
    o.pass = o.pass && r2 >= 0.97 && std::abs(slope - 1.0) <= 0.05;
    o.detail += "beta=" + fmt(beta) + " r2=" + fmt(r2) + " slope=" + fmt(slope) + "; ";
  }
  o.pass = o.pass && slowest < 120.0;
  o.detail += "slowest run " + fmt(slowest) + " s";
  return o;
}

Outcome closed_form_convergence() {
  RunConfig c;
  apply_overrides(c, {"world.n_problems=20", "world.samples_per_strategy=1", "world.execution_sd=0",
                      "judge.noiseless=true"});
  const World w = generate_world(c.effective_world(), c.effective_judge());
  const auto chains = sample_original_chains(w, c.effective_sampling(), g_jobs);
  const ChainIndex index(chains);
  const auto pairs = to_train_pairs(build_all_pairs_corpus(chains, g_jobs), index, Supervision::continuous);
  TrainConfig tc;
  tc.epochs = 5000;
  tc.jobs = g_jobs;
  const auto res = train(make_policy(index, 0.1), pairs, tc);
  const auto utilities = index.slot_utilities();
  const auto pi = closed_form_policy(res.params.reference(), utilities, 0.1);
  double tv = 0.0;
  for (std::uint32_t p = 0; p < index.n_problems(); ++p) {
    tv = std::max(tv, total_variation(policy_distribution(res.params, p), pi[p]));
  }
  double gap = 0.0;
  for (const auto& pr : pairs) {
    const double du = utilities[pr.problem][pr.winner] - utilities[pr.problem][pr.loser];
    gap = std::max(gap, std::abs(reward_margin(res.params, pr) - du));
  }
  return {tv < 1e-3 && gap < 1e-6, "max TV " + fmt(tv) + ", max |dr - dU| " + fmt(gap) + ", " +
                                       std::to_string(pairs.size()) + " pairs, " + std::to_string(res.steps) +
                                       " steps"};
}

Outcome gradient_check() {
  Rng rng(derive_key(7, "gradient-probes"));
  double worst = 0.0;
  for (int probe = 0; probe < 100; ++probe) {
    const auto k = static_cast<std::uint32_t>(2 + rng.below(7));
    std::vector<std::uint32_t> counts{k};
    PolicyParams params(ReferencePolicy::uniform(counts), rng.uniform(0.05, 2.0));
    for (double& z : params.logits(0)) z = rng.uniform(-3.0, 3.0);
    TrainPair pr{0, static_cast<SlotIndex>(rng.below(k)), 0, rng.uniform()};
    do pr.loser = static_cast<SlotIndex>(rng.below(k));
    while (pr.loser == pr.winner);
    const auto g = dpo_grad(params, pr);
    double diff2 = 0.0;
    double norm2 = 0.0;
    for (std::uint32_t i = 0; i < k; ++i) {
      const double h = 1e-5;
      auto up = params;
      auto dn = params;
      up.logits(0)[i] += h;
      dn.logits(0)[i] -= h;
      const double fd = (dpo_loss(up, pr) - dpo_loss(dn, pr)) / (2.0 * h);
      diff2 += (fd - g[i]) * (fd - g[i]);
      norm2 += std::max(fd * fd, g[i] * g[i]);
    }
    worst = std::max(worst, std::sqrt(diff2 / norm2));
  }
  return {worst < 1e-6, "worst relative error " + fmt(worst) + " over 100 probes"};
}

Outcome coupon() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto est = simulate_binary_passive(8, 10000, derive_key(1, "theory"), g_jobs);
  const double secs = seconds_since(t0);
  const double expected = coupon_collector_expected(8);
  const double rel = std::abs(est.mean / expected - 1.0);
  return {rel <= 0.02 && secs < 10.0, "mean " + fmt(est.mean) + " vs " + fmt(expected) + " (rel " + fmt(rel) +
                                          "), " + fmt(secs) + " s"};
}

Outcome efficiency() {
  std::vector<std::uint32_t> ks;
  for (std::uint32_t k = 4; k <= 32; ++k) ks.push_back(k);
  const auto rep = efficiency_ratio(ks, 400, derive_key(1, "theory"), g_jobs);
  return {rep.fit_r2 > 0.95, "a=" + fmt(rep.fit_a) + " R2=" + fmt(rep.fit_r2) + " growth exponent " +
                                 fmt(rep.growth_exponent)};
}

struct DefaultCorpus {
  World world;
  std::vector<ChainRecord> chains;
  RefineResult refined;
  std::vector<PreferencePair> phase1;
  std::vector<PreferencePair> phase2;
  std::vector<ChainRecord> all_chains;
};

const DefaultCorpus& default_corpus() {
  static const DefaultCorpus corpus = [] {
    const RunConfig c;
    DefaultCorpus d{generate_world(c.effective_world(), c.effective_judge()), {}, {}, {}, {}, {}};
    d.chains = sample_original_chains(d.world, c.effective_sampling(), g_jobs);
    d.refined = refine_corpus(d.world, d.chains, c.refine, c.improvement, derive_key(c.seed, "refine"), g_jobs);
    d.all_chains = d.chains;
    d.all_chains.insert(d.all_chains.end(), d.refined.refined.begin(), d.refined.refined.end());
    d.phase1 = build_phase1_corpus(d.all_chains, g_jobs);
    d.phase2 = build_phase2_corpus(d.all_chains, c.plan, derive_key(c.seed, "phase2-pairs"), g_jobs);
    return d;
  }();
  return corpus;
}

Outcome pair_counts() {
  const auto& d = default_corpus();
  const double n2 = static_cast<double>(d.phase2.size());
  const bool ok = d.phase1.size() == 3150 && std::abs(n2 / 2680.0 - 1.0) <= 0.10 && clean_fraction(8) == 0.25;
  return {ok, "phase 1 " + std::to_string(d.phase1.size()) + ", phase 2 " + std::to_string(d.phase2.size()) +
                  " (target 2680), clean_fraction(8) " + fmt(clean_fraction(8))};
}

Outcome bradley_terry() {
  const auto dir = g_scratch / ("noiseless_" + fmt(0.1));
  if (!fs::exists(dir / "reports/metrics.csv")) trained_noiseless_run(0.1);
  const double r2 = csv_value(dir / "reports/metrics.csv", "bt_fit_r2", "value");
  const double n = csv_value(dir / "reports/metrics.csv", "bt_fit_r2", "n");
  return {r2 > 0.97 && n >= 1e5, "R2 " + fmt(r2) + " over " + fmt(n) + " sampled preferences"};
}

Outcome refinement() {
  const auto& d = default_corpus();
  const auto& s = d.refined.summary;
  std::size_t retained = 0;
  std::size_t sound = 0;
  for (const auto& t : d.refined.traces) {
    if (!t.retained) continue;
    ++retained;
    bool ok = t.final_utility() > t.initial_utility();
    for (std::size_t g = 0; g < t.lineage.size(); ++g) {
      ok = ok && t.lineage[g].generation == g && t.lineage[g].strategy == t.lineage[0].strategy &&
           t.lineage[g].problem_id == t.lineage[0].problem_id;
    }
    sound += ok;
  }
  const bool ok = std::abs(s.success_rate - 0.878) <= 0.05 && s.mean_rounds <= 3.0 && retained > 0 &&
                  sound == retained;
  return {ok, "success " + fmt(s.success_rate) + " of " + std::to_string(s.n_eligible) + ", mean rounds " +
                  fmt(s.mean_rounds) + ", sound " + std::to_string(sound) + "/" + std::to_string(retained)};
}

Outcome robust_judging() {
  const RunConfig c;
  const auto nt = noise_term(450, 0.17, 0.05);
  const auto m = robust_sample_count(0.17, 0.05, 0.05);
  const auto cov = hoeffding_coverage(c.judge, 0.05, 0.05, 1000, derive_key(c.seed, "hoeffding"), g_jobs);
  return {nt == 5202 && m == 342 && cov.coverage >= 0.95,
          "noise_term " + std::to_string(nt) + ", robust m " + std::to_string(m) + ", coverage " +
              fmt(cov.coverage) + " over " + std::to_string(cov.repetitions)};
}

Outcome scaling() {
  const auto& d = default_corpus();
  const RunConfig c;
  const ChainIndex index(d.all_chains);
  ScalingConfig sc;
  sc.seeds = 5;
  sc.beta = c.beta;
  sc.train = c.train;
  sc.train.epochs = c.scaling_epochs;
  sc.jobs = g_jobs;
  const auto curve = scaling_curve(index, build_all_pairs_corpus(d.all_chains, g_jobs), sc,
                                   derive_key(c.seed, "scaling"));
  const auto& first = curve.points.front();
  const auto& last = curve.points.back();
  const bool ok = first.fraction == 0.25 && last.fraction == 1.0 && curve.seeds >= 5 && last.gap.mean > first.gap.mean;
  return {ok, "gap " + fmt(first.gap.mean) + " at 25% -> " + fmt(last.gap.mean) + " at 100% over " +
                  std::to_string(curve.seeds) + " seeds"};
}

Outcome determinism() {
  RunConfig c;
  c.run_id = "determinism";
  apply_overrides(c, {"world.n_problems=120", "train.epochs=400", "eval.scaling_seeds=2",
                      "theory.efficiency_k_max=12", "theory.efficiency_trials=100",
                      "theory.conflict_seeds=2", "theory.conflict_budget=100"});
  const auto serial = run_pipeline(c, g_scratch / "serial", 1);
  const auto parallel = run_pipeline(c, g_scratch / "parallel", std::max(2u, g_jobs));
  bool same = serial.artifacts.size() == parallel.artifacts.size() && !serial.artifacts.empty();
  for (std::size_t i = 0; same && i < serial.artifacts.size(); ++i) {
    same = serial.artifacts[i].path == parallel.artifacts[i].path &&
           serial.artifacts[i].sha256 == parallel.artifacts[i].sha256;
  }
  return {same, std::to_string(serial.artifacts.size()) + " artifacts, jobs 1 vs " +
                    std::to_string(std::max(2u, g_jobs)) + (same ? ", digests identical" : ", digests differ")};
}

}  // namespace

int main() {
  g_jobs = std::max(1u, std::thread::hardware_concurrency());
  g_scratch = fs::temp_directory_path() / "cudpo_acceptance";
  fs::remove_all(g_scratch);
  fs::create_directories(g_scratch);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"reward-utility alignment", alignment},
      {"closed-form convergence", closed_form_convergence},
      {"gradient correctness", gradient_check},
      {"coupon collector", coupon},
      {"efficiency trend", efficiency},
      {"pair counts", pair_counts},
      {"bradley-terry fit", bradley_terry},
      {"refinement calibration", refinement},
      {"robust judging", robust_judging},
      {"data scaling", scaling},
      {"determinism", determinism},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failures += !o.pass;
    std::printf("%s %zu %s: %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  fs::remove_all(g_scratch);
  return failures == 0 ? 0 : 1;
}
