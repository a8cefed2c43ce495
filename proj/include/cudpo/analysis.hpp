#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "cudpo/chains.hpp"
#include "cudpo/dpo.hpp"
#include "cudpo/pairs.hpp"
#include "cudpo/theory.hpp"
#include "cudpo/world.hpp"

namespace cudpo {

/// Strategy indices from best to worst; must be a permutation of 0..K-1.
using RankVector = std::vector<std::uint32_t>;

void validate_rank_vector(std::span<const std::uint32_t> r);

/// Rank correlation between two orderings of the same K >= 2 strategies.
double spearman_rho(std::span<const std::uint32_t> a, std::span<const std::uint32_t> b);

/// Share of problems whose policy's first choice is in the true top k.
double top_k_rate(std::span<const RankVector> policy, std::span<const RankVector> truth, std::uint32_t k);

/// Descending-utility order of the latent strategy utilities of a problem.
RankVector true_ranking(const World& world, std::uint32_t problem);
/// Strategies ordered by the implicit reward of their sample-0 original chain.
RankVector policy_ranking(const PolicyParams& params, const ChainIndex& chains, std::uint32_t problem,
                          std::uint32_t k);

/// One sampled comparison between two chain slots of a problem.
struct PreferenceSample {
  std::uint32_t problem = 0;
  SlotIndex first = 0;
  SlotIndex second = 0;
  bool first_preferred = false;
};

/// Draws Bradley-Terry preferences from sigma(U_first - U_second) for every
/// pair, repeating the pair list until at least `n_samples` samples exist.
/// `first` is the lower chain id, so both orientations of the margin occur.
std::vector<PreferenceSample> sample_preferences(std::span<const PreferencePair> pairs, const ChainIndex& chains,
                                                 std::size_t n_samples, std::uint64_t draw);

struct BtBucket {
  std::size_t count = 0;
  double mean_reward_margin = 0.0;
  double predicted = 0.0;
  double empirical = 0.0;
};

struct BtFit {
  std::vector<BtBucket> buckets;
  /// 1 - SS_res / SS_tot of empirical frequencies against predictions,
  /// clamped to [0, 1].
  double r2 = 0.0;
  std::size_t n_samples = 0;
};

/// Equal-count quantile buckets of the predicted margin r(first) - r(second).
/// Throws std::invalid_argument unless n_buckets >= 20 and every bucket gets
/// at least min_per_bucket samples.
BtFit bt_fit(std::span<const PreferenceSample> samples, const PolicyParams& params, std::size_t n_buckets = 20,
             std::size_t min_per_bucket = 30);

struct ScalingConfig {
  std::vector<double> fractions = {0.25, 0.5, 0.75, 1.0};
  std::uint32_t seeds = 5;
  double heldout_fraction = 0.25;
  double beta = 0.1;
  TrainConfig train{};
  unsigned jobs = 1;

  /// Fractions strictly increasing in (0, 1], heldout in (0, 1), seeds >= 1.
  void validate() const;
};

struct ScalingPoint {
  double fraction = 0.0;
  std::size_t n_train = 0;
  MonteCarloEstimate binary;
  MonteCarloEstimate continuous;
  /// continuous - binary, per seed then averaged.
  MonteCarloEstimate gap;
};

struct ScalingCurve {
  std::vector<ScalingPoint> points;
  std::size_t n_heldout = 0;
  std::uint32_t seeds = 0;
};

/// Per seed, holds out a random share of the dataset and trains on growing
/// prefixes of the rest in two modes: binary (one Bradley-Terry label per
/// pair, hard target) and continuous (soft target sigma(dU)). Win rates are
/// measured on the held-out pairs oriented by utility.
ScalingCurve scaling_curve(const ChainIndex& chains, std::span<const PreferencePair> dataset,
                           const ScalingConfig& config, std::uint64_t draw);

}  // namespace cudpo
