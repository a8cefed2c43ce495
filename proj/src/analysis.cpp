#include "cudpo/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "cudpo/parallel.hpp"
#include "cudpo/rng.hpp"
#include "cudpo/supervision.hpp"

namespace cudpo {

namespace {

MonteCarloEstimate summarize(std::span<const double> xs) {
  MonteCarloEstimate e;
  e.trials = xs.size();
  if (xs.empty()) return e;
  e.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - e.mean) * (x - e.mean);
    e.standard_error = std::sqrt(ss / static_cast<double>(xs.size() - 1) / static_cast<double>(xs.size()));
  }
  return e;
}

template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
}

}  // namespace

void validate_rank_vector(std::span<const std::uint32_t> r) {
  std::vector<char> seen(r.size(), 0);
  for (auto s : r) {
    if (s >= r.size() || seen[s]) throw std::invalid_argument("rank vector is not a permutation");
    seen[s] = 1;
  }
}

double spearman_rho(std::span<const std::uint32_t> a, std::span<const std::uint32_t> b) {
  if (a.size() != b.size() || a.size() < 2) {
    throw std::invalid_argument("spearman_rho: need two orderings of equal length >= 2");
  }
  validate_rank_vector(a);
  validate_rank_vector(b);
  const std::size_t n = a.size();
  std::vector<double> pos_a(n);
  std::vector<double> pos_b(n);
  for (std::size_t i = 0; i < n; ++i) {
    pos_a[a[i]] = static_cast<double>(i);
    pos_b[b[i]] = static_cast<double>(i);
  }
  double d2 = 0.0;
  for (std::size_t s = 0; s < n; ++s) d2 += (pos_a[s] - pos_b[s]) * (pos_a[s] - pos_b[s]);
  const double nd = static_cast<double>(n);
  return 1.0 - 6.0 * d2 / (nd * (nd * nd - 1.0));
}

double top_k_rate(std::span<const RankVector> policy, std::span<const RankVector> truth, std::uint32_t k) {
  if (policy.size() != truth.size() || policy.empty()) {
    throw std::invalid_argument("top_k_rate: need equally many nonempty ranking lists");
  }
  std::size_t hits = 0;
  for (std::size_t p = 0; p < policy.size(); ++p) {
    validate_rank_vector(policy[p]);
    validate_rank_vector(truth[p]);
    if (policy[p].size() != truth[p].size()) throw std::invalid_argument("top_k_rate: ranking lengths differ");
    if (k == 0 || k > truth[p].size()) throw std::invalid_argument("top_k_rate: k must lie in [1, K]");
    const auto end = truth[p].begin() + k;
    hits += std::find(truth[p].begin(), end, policy[p].front()) != end;
  }
  return static_cast<double>(hits) / static_cast<double>(policy.size());
}

RankVector true_ranking(const World& world, std::uint32_t problem) {
  const auto u = world.problem(problem);
  RankVector r(u.size());
  std::iota(r.begin(), r.end(), 0u);
  std::stable_sort(r.begin(), r.end(), [&](auto a, auto b) { return u[a] > u[b]; });
  return r;
}

RankVector policy_ranking(const PolicyParams& params, const ChainIndex& chains, std::uint32_t problem,
                          std::uint32_t k) {
  std::vector<double> r(k);
  for (std::uint32_t s = 0; s < k; ++s) {
    const auto slot = chains.primary_slot(problem, StrategyId{s});
    if (!slot) throw std::invalid_argument("policy_ranking: missing primary chain");
    r[s] = implicit_reward(params, problem, *slot);
  }
  RankVector out(k);
  std::iota(out.begin(), out.end(), 0u);
  std::stable_sort(out.begin(), out.end(), [&](auto a, auto b) { return r[a] > r[b]; });
  return out;
}

std::vector<PreferenceSample> sample_preferences(std::span<const PreferencePair> pairs, const ChainIndex& chains,
                                                 std::size_t n_samples, std::uint64_t draw) {
  if (pairs.empty()) throw std::invalid_argument("sample_preferences: no pairs");
  const std::size_t rounds = (n_samples + pairs.size() - 1) / pairs.size();
  std::vector<PreferenceSample> out;
  out.reserve(rounds * pairs.size());
  for (std::size_t r = 0; r < rounds; ++r) {
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      const auto& p = pairs[i];
      const ChainId first = std::min(p.winner, p.loser);
      const ChainId second = std::max(p.winner, p.loser);
      const double du = chains.chain(first).utility - chains.chain(second).utility;
      Rng rng(derive_key(draw, "preference", {i, r}));
      PreferenceSample s;
      s.problem = p.problem_id;
      s.first = chains.slot(first);
      s.second = chains.slot(second);
      s.first_preferred = rng.bernoulli(sigmoid(du));
      out.push_back(s);
    }
  }
  return out;
}

BtFit bt_fit(std::span<const PreferenceSample> samples, const PolicyParams& params, std::size_t n_buckets,
             std::size_t min_per_bucket) {
  if (n_buckets < 20) throw std::invalid_argument("bt_fit: need at least 20 buckets");
  if (samples.size() < n_buckets * std::max<std::size_t>(min_per_bucket, 1)) {
    throw std::invalid_argument("bt_fit: too few samples for the bucket count");
  }
  std::vector<std::pair<double, bool>> pts;
  pts.reserve(samples.size());
  for (const auto& s : samples) {
    pts.emplace_back(implicit_reward(params, s.problem, s.first) - implicit_reward(params, s.problem, s.second),
                     s.first_preferred);
  }
  std::stable_sort(pts.begin(), pts.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  BtFit fit;
  fit.n_samples = pts.size();
  const std::size_t base = pts.size() / n_buckets;
  const std::size_t extra = pts.size() % n_buckets;
  std::size_t at = 0;
  for (std::size_t b = 0; b < n_buckets; ++b) {
    BtBucket bucket;
    bucket.count = base + (b < extra ? 1 : 0);
    double margin = 0.0;
    double pred = 0.0;
    double freq = 0.0;
    for (std::size_t i = at; i < at + bucket.count; ++i) {
      margin += pts[i].first;
      pred += sigmoid(pts[i].first);
      freq += pts[i].second ? 1.0 : 0.0;
    }
    at += bucket.count;
    const auto c = static_cast<double>(bucket.count);
    bucket.mean_reward_margin = margin / c;
    bucket.predicted = pred / c;
    bucket.empirical = freq / c;
    fit.buckets.push_back(bucket);
  }
  double mean = 0.0;
  for (const auto& b : fit.buckets) mean += b.empirical;
  mean /= static_cast<double>(fit.buckets.size());
  double ss_res = 0.0;
  double ss_tot = 0.0;
  for (const auto& b : fit.buckets) {
    ss_res += (b.empirical - b.predicted) * (b.empirical - b.predicted);
    ss_tot += (b.empirical - mean) * (b.empirical - mean);
  }
  fit.r2 = ss_tot > 0.0 ? std::clamp(1.0 - ss_res / ss_tot, 0.0, 1.0) : 0.0;
  return fit;
}

void ScalingConfig::validate() const {
  if (fractions.empty()) throw std::invalid_argument("ScalingConfig: no fractions");
  double prev = 0.0;
  for (double f : fractions) {
    if (!(f > prev && f <= 1.0)) throw std::invalid_argument("ScalingConfig: fractions must increase within (0,1]");
    prev = f;
  }
  if (!(heldout_fraction > 0.0 && heldout_fraction < 1.0)) {
    throw std::invalid_argument("ScalingConfig: heldout_fraction must lie in (0,1)");
  }
  if (seeds == 0) throw std::invalid_argument("ScalingConfig: seeds must be positive");
  if (!(beta > 0.0)) throw std::invalid_argument("ScalingConfig: beta must be positive");
  train.validate();
}

ScalingCurve scaling_curve(const ChainIndex& chains, std::span<const PreferencePair> dataset,
                           const ScalingConfig& config, std::uint64_t draw) {
  config.validate();
  if (dataset.size() < 2) throw std::invalid_argument("scaling_curve: need at least two pairs");
  const std::size_t n_heldout =
      std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(config.heldout_fraction * dataset.size())), 1,
                              dataset.size() - 1);
  const std::size_t pool = dataset.size() - n_heldout;
  const std::size_t n_frac = config.fractions.size();
  std::vector<std::size_t> n_train(n_frac);
  for (std::size_t f = 0; f < n_frac; ++f) {
    n_train[f] = std::clamp<std::size_t>(static_cast<std::size_t>(std::ceil(config.fractions[f] * pool - 1e-9)), 1,
                                         pool);
  }

  struct Split {
    std::vector<PreferencePair> train;
    std::vector<TrainPair> heldout;
  };
  std::vector<Split> splits(config.seeds);
  for (std::uint32_t s = 0; s < config.seeds; ++s) {
    std::vector<PreferencePair> shuffled(dataset.begin(), dataset.end());
    Rng rng(derive_key(draw, "scaling-split", {s}));
    shuffle(shuffled, rng);
    const std::span<const PreferencePair> held(shuffled.data(), n_heldout);
    splits[s].heldout = to_train_pairs(held, chains, Supervision::continuous);
    splits[s].train.assign(shuffled.begin() + static_cast<std::ptrdiff_t>(n_heldout), shuffled.end());
  }

  // Cells: (seed, fraction, mode) with mode 0 = binary, 1 = continuous.
  const std::size_t n_cells = std::size_t{config.seeds} * n_frac * 2;
  std::vector<double> win(n_cells);
  parallel_for(n_cells, config.jobs, [&](std::size_t c) {
    const std::size_t mode = c % 2;
    const std::size_t f = (c / 2) % n_frac;
    const std::size_t s = c / (2 * n_frac);
    const std::span<const PreferencePair> subset(splits[s].train.data(), n_train[f]);
    const auto pairs = to_train_pairs(subset, chains, mode == 0 ? Supervision::sampled : Supervision::continuous,
                                      derive_key(draw, "scaling-label", {s}));
    TrainConfig cfg = config.train;
    cfg.jobs = 1;
    cfg.seed = derive_key(draw, "scaling-train", {s, f, mode});
    const auto res = train(make_policy(chains, config.beta), pairs, cfg);
    win[c] = win_rate(res.params, splits[s].heldout);
  });

  ScalingCurve curve;
  curve.n_heldout = n_heldout;
  curve.seeds = config.seeds;
  for (std::size_t f = 0; f < n_frac; ++f) {
    std::vector<double> b;
    std::vector<double> cts;
    std::vector<double> gap;
    for (std::uint32_t s = 0; s < config.seeds; ++s) {
      const std::size_t base = (std::size_t{s} * n_frac + f) * 2;
      b.push_back(win[base]);
      cts.push_back(win[base + 1]);
      gap.push_back(win[base + 1] - win[base]);
    }
    ScalingPoint pt;
    pt.fraction = config.fractions[f];
    pt.n_train = n_train[f];
    pt.binary = summarize(b);
    pt.continuous = summarize(cts);
    pt.gap = summarize(gap);
    curve.points.push_back(pt);
  }
  return curve;
}

}  // namespace cudpo
