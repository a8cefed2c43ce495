#include "cudpo/theory.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include "cudpo/parallel.hpp"
#include "cudpo/rng.hpp"

namespace cudpo {

namespace {

std::uint64_t n_choose_2(std::uint64_t k) { return k * (k - 1) / 2; }

MonteCarloEstimate summarize(std::span<const double> xs) {
  MonteCarloEstimate e;
  e.trials = xs.size();
  if (xs.empty()) return e;
  double sum = 0.0;
  for (double x : xs) sum += x;
  e.mean = sum / static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - e.mean) * (x - e.mean);
    e.standard_error = std::sqrt(ss / static_cast<double>(xs.size() - 1) / static_cast<double>(xs.size()));
  }
  return e;
}

void require_prob(double x, const char* what) {
  if (!(x > 0.0 && x < 1.0)) throw std::invalid_argument(std::string(what) + " must lie in (0,1)");
}

// Ceil that ignores representation error just above an integer.
std::uint64_t ceil_count(double x) {
  const double r = std::round(x);
  if (std::abs(x - r) <= 1e-9 * std::max(1.0, std::abs(x))) return static_cast<std::uint64_t>(r);
  return static_cast<std::uint64_t>(std::ceil(x));
}

std::pair<std::uint32_t, std::uint32_t> uniform_pair(Rng& rng, std::uint32_t k) {
  const auto i = static_cast<std::uint32_t>(rng.below(k));
  auto j = static_cast<std::uint32_t>(rng.below(k - 1));
  if (j >= i) ++j;
  return {std::min(i, j), std::max(i, j)};
}

std::uint32_t argmax(std::span<const double> v) {
  return static_cast<std::uint32_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

double population_std(std::span<const double> xs) {
  if (xs.empty()) return 0.0;
  const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(xs.size()));
}

}  // namespace

void BoundInputs::validate() const {
  if (!(n_problems >= 0.0)) throw std::invalid_argument("BoundInputs: N must be nonnegative");
  if (!(k_strategies >= 2.0)) throw std::invalid_argument("BoundInputs: K must be at least 2");
  if (!(vc_dim >= 0.0)) throw std::invalid_argument("BoundInputs: d must be nonnegative");
  if (!(noise_bound >= 0.0)) throw std::invalid_argument("BoundInputs: noise bound must be nonnegative");
  require_prob(epsilon, "BoundInputs: epsilon");
  require_prob(eta, "BoundInputs: eta");
}

double harmonic(std::uint64_t n) {
  double h = 0.0;
  for (std::uint64_t i = n; i >= 1; --i) h += 1.0 / static_cast<double>(i);
  return h;
}

double coupon_collector_expected(std::uint32_t k) {
  if (k < 2) throw std::invalid_argument("coupon_collector_expected: K must be at least 2");
  const auto c = n_choose_2(k);
  return static_cast<double>(c) * harmonic(c);
}

MonteCarloEstimate simulate_binary_passive(std::uint32_t k, std::uint64_t trials, std::uint64_t draw,
                                           unsigned jobs) {
  if (k < 2) throw std::invalid_argument("simulate_binary_passive: K must be at least 2");
  if (trials == 0) throw std::invalid_argument("simulate_binary_passive: trials must be positive");
  const auto c = n_choose_2(k);
  std::vector<double> draws(trials);
  parallel_for(trials, jobs, [&](std::size_t t) {
    Rng rng(derive_key(draw, "coupon", {k, t}));
    std::vector<char> seen(k * k, 0);
    std::uint64_t covered = 0;
    std::uint64_t n = 0;
    while (covered < c) {
      const auto [i, j] = uniform_pair(rng, k);
      ++n;
      char& s = seen[std::size_t{i} * k + j];
      if (!s) {
        s = 1;
        ++covered;
      }
    }
    draws[t] = static_cast<double>(n);
  });
  return summarize(draws);
}

std::string_view to_string(RecoveryMode m) {
  return m == RecoveryMode::binary_passive ? "binary_passive" : "continuous";
}

RecoveryMode parse_recovery_mode(std::string_view text) {
  if (text == "binary_passive" || text == "binary") return RecoveryMode::binary_passive;
  if (text == "continuous") return RecoveryMode::continuous;
  throw std::invalid_argument("unknown recovery mode: " + std::string(text));
}

RankingRecovery simulate_ranking_recovery(std::span<const double> utilities, RecoveryMode mode,
                                          std::uint64_t draw) {
  const auto k = static_cast<std::uint32_t>(utilities.size());
  if (k < 2) throw std::invalid_argument("simulate_ranking_recovery: need at least two strategies");
  if (k > 64) throw std::invalid_argument("simulate_ranking_recovery: at most 64 strategies");
  std::vector<std::uint32_t> order(k);
  std::iota(order.begin(), order.end(), 0u);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return utilities[a] > utilities[b]; });
  for (std::uint32_t i = 1; i < k; ++i) {
    if (!(utilities[order[i - 1]] > utilities[order[i]])) {
      throw std::invalid_argument("simulate_ranking_recovery: utilities must be distinct");
    }
  }
  RankingRecovery out;
  if (mode == RecoveryMode::continuous) {
    out.samples = k;
    out.ranking = std::move(order);
    return out;
  }

  // beats[i] holds every j that i is known to beat, directly or by transitivity.
  std::vector<std::uint64_t> beats(k, 0);
  const auto target = n_choose_2(k);
  std::uint64_t known = 0;
  Rng rng(derive_key(draw, "ranking", {k}));
  while (known < target) {
    auto [a, b] = uniform_pair(rng, k);
    ++out.samples;
    if (utilities[b] > utilities[a]) std::swap(a, b);
    if (beats[a] >> b & 1u) continue;
    const std::uint64_t gained = beats[b] | (std::uint64_t{1} << b);
    for (std::uint32_t x = 0; x < k; ++x) {
      if (x == a || (beats[x] >> a & 1u)) {
        const std::uint64_t before = beats[x];
        beats[x] |= gained;
        known += static_cast<std::uint64_t>(std::popcount(beats[x]) - std::popcount(before));
      }
    }
  }
  // Under a total order the number of beaten strategies fixes the rank.
  out.ranking.resize(k);
  for (std::uint32_t x = 0; x < k; ++x) out.ranking[k - 1 - std::popcount(beats[x])] = x;
  return out;
}

MonteCarloEstimate mean_ranking_samples(std::uint32_t k, std::uint64_t trials, std::uint64_t draw,
                                        unsigned jobs) {
  if (trials == 0) throw std::invalid_argument("mean_ranking_samples: trials must be positive");
  std::vector<double> samples(trials);
  parallel_for(trials, jobs, [&](std::size_t t) {
    Rng rng(derive_key(draw, "ranking-utilities", {k, t}));
    std::vector<double> u(k);
    for (auto& x : u) x = rng.uniform();
    samples[t] = static_cast<double>(
        simulate_ranking_recovery(u, RecoveryMode::binary_passive, derive_key(draw, "ranking-trial", {k, t}))
            .samples);
  });
  return summarize(samples);
}

EfficiencyReport efficiency_ratio(std::span<const std::uint32_t> ks, std::uint64_t trials, std::uint64_t draw,
                                  unsigned jobs) {
  if (ks.empty()) throw std::invalid_argument("efficiency_ratio: K range is empty");
  EfficiencyReport rep;
  double sxy = 0.0;
  double sxx = 0.0;
  for (std::uint32_t k : ks) {
    EfficiencyRow row;
    row.k = k;
    row.binary = mean_ranking_samples(k, trials, draw, jobs);
    row.coverage = simulate_binary_passive(k, trials, draw, jobs);
    row.continuous_samples = k;
    row.ratio = row.binary.mean / k;
    row.coupon_ratio = coupon_collector_expected(k) / k;
    const double x = k * std::log(static_cast<double>(k));
    sxy += x * row.ratio;
    sxx += x * x;
    rep.rows.push_back(row);
  }
  rep.fit_a = sxy / sxx;
  double mean = 0.0;
  for (const auto& r : rep.rows) mean += r.ratio;
  mean /= static_cast<double>(rep.rows.size());
  double ss_res = 0.0;
  double ss_tot = 0.0;
  for (const auto& r : rep.rows) {
    const double fit = rep.fit_a * r.k * std::log(static_cast<double>(r.k));
    rep.residuals.push_back(r.ratio - fit);
    ss_res += (r.ratio - fit) * (r.ratio - fit);
    ss_tot += (r.ratio - mean) * (r.ratio - mean);
  }
  rep.fit_r2 = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : 0.0;
  if (rep.rows.size() >= 2) {
    double mx = 0.0;
    double my = 0.0;
    for (const auto& r : rep.rows) {
      mx += std::log(static_cast<double>(r.k));
      my += std::log(r.binary.mean);
    }
    mx /= static_cast<double>(rep.rows.size());
    my /= static_cast<double>(rep.rows.size());
    double num = 0.0;
    double den = 0.0;
    for (const auto& r : rep.rows) {
      const double dx = std::log(static_cast<double>(r.k)) - mx;
      num += dx * (std::log(r.binary.mean) - my);
      den += dx * dx;
    }
    rep.growth_exponent = den > 0.0 ? num / den : 0.0;
  }
  return rep;
}

double binary_lower_bound(const BoundInputs& in) {
  in.validate();
  const double c = in.k_strategies * (in.k_strategies - 1.0) / 2.0;
  return in.n_problems * c * (std::log(c) + std::log(1.0 / in.eta)) + in.vc_dim / (in.epsilon * in.epsilon);
}

double utility_upper_bound(const BoundInputs& in) {
  in.validate();
  return in.n_problems * in.k_strategies + in.vc_dim / (in.epsilon * in.epsilon);
}

double utility_upper_bound_log(const BoundInputs& in) {
  in.validate();
  return in.n_problems * in.k_strategies * std::log2(in.k_strategies) + in.vc_dim / (in.epsilon * in.epsilon);
}

std::uint64_t robust_sample_count(double noise_bound, double epsilon, double eta) {
  if (!(noise_bound >= 0.0)) throw std::invalid_argument("robust_sample_count: noise bound must be nonnegative");
  require_prob(epsilon, "robust_sample_count: epsilon");
  require_prob(eta, "robust_sample_count: eta");
  const double m = 8.0 * noise_bound * noise_bound / (epsilon * epsilon) * std::log(2.0 / eta);
  return std::max<std::uint64_t>(1, ceil_count(m));
}

std::uint64_t noise_term(double n_problems, double noise_bound, double epsilon) {
  if (!(n_problems >= 0.0)) throw std::invalid_argument("noise_term: N must be nonnegative");
  if (!(noise_bound >= 0.0)) throw std::invalid_argument("noise_term: noise bound must be nonnegative");
  require_prob(epsilon, "noise_term: epsilon");
  return ceil_count(n_problems * noise_bound * noise_bound / (epsilon * epsilon));
}

double fano_lower_bound(std::uint32_t k, double error_prob) {
  if (k < 2) throw std::invalid_argument("fano_lower_bound: K must be at least 2");
  if (!(error_prob >= 0.0 && error_prob < 1.0)) {
    throw std::invalid_argument("fano_lower_bound: error probability must lie in [0,1)");
  }
  const double log2_factorial = std::lgamma(static_cast<double>(k) + 1.0) / std::log(2.0);
  return std::max(0.0, (1.0 - error_prob) * log2_factorial - 1.0);
}

double clean_fraction(std::uint32_t k) {
  if (k < 2) throw std::invalid_argument("clean_fraction: K must be at least 2");
  return 2.0 / k;
}

std::int64_t net_evidence(StrategyId strategy, std::span<const PreferencePair> pairs) {
  std::int64_t net = 0;
  for (const auto& p : pairs) {
    if (p.winner_strategy == p.loser_strategy) continue;
    if (p.winner_strategy == strategy) ++net;
    else if (p.loser_strategy == strategy) --net;
  }
  return net;
}

HoeffdingCoverage hoeffding_coverage(const JudgeModel& judge, double epsilon, double eta,
                                     std::uint64_t repetitions, std::uint64_t draw, unsigned jobs) {
  if (repetitions == 0) throw std::invalid_argument("hoeffding_coverage: repetitions must be positive");
  HoeffdingCoverage out;
  out.m = robust_sample_count(judge.noise_bound, epsilon, eta);
  out.repetitions = repetitions;
  out.epsilon = epsilon;
  out.eta = eta;
  WorldConfig cfg;
  cfg.n_problems = 1;
  cfg.k_strategies = 2;
  // Far enough from 0 and 1 that no reading is folded back.
  constexpr double truth = 0.5;
  std::vector<char> hit(repetitions, 0);
  parallel_for(repetitions, jobs, [&](std::size_t r) {
    JudgeModel j = judge;
    j.seed = derive_key(draw, "hoeffding", {r});
    const World w(cfg, j, {truth, 0.25});
    const double est = mean_of_draws(w, 0, StrategyId{0}, static_cast<std::uint32_t>(out.m));
    hit[r] = std::abs(est - truth) <= epsilon;
  });
  out.coverage = static_cast<double>(std::count(hit.begin(), hit.end(), 1)) / static_cast<double>(repetitions);
  return out;
}

void ConflictConfig::validate() const {
  if (seeds == 0) throw std::invalid_argument("ConflictConfig: seeds must be positive");
  if (step_budget < 2) throw std::invalid_argument("ConflictConfig: step budget must be at least 2");
  if (!(beta > 0.0)) throw std::invalid_argument("ConflictConfig: beta must be positive");
  plan.validate();
  refine_policy.validate();
  improvement.validate();
}

namespace {

struct ArmSeed {
  double accuracy = 0.0;
  double dispersion = 0.0;
  double pairs_per_problem = 0.0;
  double clean_share = 0.0;
};

ArmSeed score_arm(const World& world, const ChainIndex& index, const PolicyParams& params,
                  std::span<const PreferencePair> cross) {
  const std::uint32_t n = world.n_problems();
  const std::uint32_t k = world.k_strategies();
  std::vector<std::vector<PreferencePair>> by_problem(n);
  for (const auto& p : cross) by_problem[p.problem_id].push_back(p);
  ArmSeed s;
  std::vector<double> mid;
  std::size_t clean = 0;
  for (std::uint32_t p = 0; p < n; ++p) {
    const auto u = world.problem(p);
    const std::uint32_t best = argmax(u);
    std::vector<double> r(k);
    for (std::uint32_t j = 0; j < k; ++j) {
      const auto slot = index.primary_slot(p, StrategyId{j});
      if (!slot) throw std::runtime_error("conflict_experiment: missing primary chain");
      r[j] = implicit_reward(params, p, *slot);
    }
    s.accuracy += argmax(r) == best ? 1.0 : 0.0;
    std::vector<std::uint32_t> order(k);
    std::iota(order.begin(), order.end(), 0u);
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return u[a] > u[b]; });
    for (std::uint32_t rank = 1; rank + 1 < k; ++rank) {
      mid.push_back(static_cast<double>(net_evidence(StrategyId{order[rank]}, by_problem[p])));
    }
    for (const auto& pr : by_problem[p]) {
      clean += pr.winner_strategy.index == best || pr.loser_strategy.index == best;
    }
  }
  s.accuracy /= n;
  s.dispersion = population_std(mid);
  s.pairs_per_problem = static_cast<double>(cross.size()) / n;
  s.clean_share = cross.empty() ? 0.0 : static_cast<double>(clean) / static_cast<double>(cross.size());
  return s;
}

ConflictArm merge_arm(std::span<const ArmSeed> seeds) {
  std::vector<double> acc;
  std::vector<double> disp;
  ConflictArm arm;
  for (const auto& s : seeds) {
    acc.push_back(s.accuracy);
    disp.push_back(s.dispersion);
    arm.pairs_per_problem += s.pairs_per_problem / static_cast<double>(seeds.size());
    arm.clean_share += s.clean_share / static_cast<double>(seeds.size());
  }
  arm.accuracy = summarize(acc);
  arm.mid_evidence_dispersion = summarize(disp);
  return arm;
}

}  // namespace

ConflictReport conflict_experiment(const World& world, const ConflictConfig& config, std::uint64_t draw) {
  config.validate();
  if (world.k_strategies() < 3) throw std::invalid_argument("conflict_experiment: need at least 3 strategies");
  std::vector<ArmSeed> all_arm(config.seeds);
  std::vector<ArmSeed> two_arm(config.seeds);
  std::vector<double> ratio(config.seeds);
  for (std::uint32_t s = 0; s < config.seeds; ++s) {
    JudgeModel judge = world.judge();
    judge.seed = derive_key(draw, "conflict-judge", {s});
    const World w(world.config(), judge, std::vector<double>(world.utilities().begin(), world.utilities().end()));
    ChainSampling sampling = config.sampling;
    sampling.seed = derive_key(draw, "conflict-sampling", {s});
    auto chains = sample_original_chains(w, sampling, config.jobs);
    if (config.refine) {
      auto refined = refine_corpus(w, chains, config.refine_policy, config.improvement,
                                   derive_key(draw, "conflict-refine", {s}), config.jobs);
      chains.insert(chains.end(), refined.refined.begin(), refined.refined.end());
    }
    const ChainIndex index(chains);
    const std::uint64_t label_draw = derive_key(draw, "conflict-label", {s});

    TrainConfig train_cfg;
    train_cfg.seed = derive_key(draw, "conflict-train", {s});
    train_cfg.jobs = config.jobs;

    const auto all = build_all_pairs_corpus(chains, config.jobs);
    train_cfg.epochs = config.step_budget;
    const auto all_res =
        train(make_policy(index, config.beta), to_train_pairs(all, index, config.supervision, label_draw), train_cfg);
    all_arm[s] = score_arm(w, index, all_res.params, all);

    const auto p1 = build_phase1_corpus(chains, config.jobs);
    const auto p2 = build_phase2_corpus(chains, config.plan, derive_key(draw, "conflict-phase2", {s}), config.jobs);
    train_cfg.epochs = config.step_budget / 2;
    const auto two_res = train_two_phase(make_policy(index, config.beta),
                                         to_train_pairs(p1, index, config.supervision, label_draw),
                                         to_train_pairs(p2, index, config.supervision, label_draw), train_cfg, true);
    two_arm[s] = score_arm(w, index, two_res.params, p1);
    ratio[s] = static_cast<double>(all.size()) / static_cast<double>(p1.size());
  }
  ConflictReport rep;
  rep.seeds = config.seeds;
  rep.k = world.k_strategies();
  rep.all_pairs = merge_arm(all_arm);
  rep.two_phase = merge_arm(two_arm);
  rep.pair_count_ratio = std::accumulate(ratio.begin(), ratio.end(), 0.0) / config.seeds;
  return rep;
}

}  // namespace cudpo
