#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "cudpo/scoring.hpp"

namespace cudpo {

struct WorldConfig {
  std::uint32_t n_problems = 450;
  std::uint32_t k_strategies = 8;
  double target_best_utility_mean = 0.777;
  double target_best_worst_margin_mean = 0.30;
  double target_range_mean = 0.295;
  std::uint64_t seed = 1;

  /// Throws std::invalid_argument when n_problems == 0, k_strategies < 2 or a
  /// target is outside (0, 1).
  void validate() const;
};

/// Bounded-noise judge: epsilon ~ N(0, stddev) truncated to [-noise_bound,
/// noise_bound], except with probability exceed_prob where it is uniform on
/// [-2 noise_bound, 2 noise_bound].
struct JudgeModel {
  double noise_bound = 0.17;
  double exceed_prob = 0.05;
  double stddev = 0.087;
  std::uint64_t seed = 0x4A55444745ULL;
  std::array<double, 3> weights = kDefaultJudgeWeights;

  /// stddev = 0 and a vanishing bound: aggregates equal true utilities.
  static JudgeModel noiseless(std::uint64_t seed = 0x4A55444745ULL);

  void validate() const;
};

/// Immutable N x K table of latent strategy utilities plus the judge.
class World {
 public:
  World(WorldConfig config, JudgeModel judge, std::vector<double> utilities);

  const WorldConfig& config() const noexcept { return config_; }
  const JudgeModel& judge() const noexcept { return judge_; }
  std::uint32_t n_problems() const noexcept { return config_.n_problems; }
  std::uint32_t k_strategies() const noexcept { return config_.k_strategies; }

  double utility(std::uint32_t problem, StrategyId s) const;
  std::span<const double> problem(std::uint32_t problem) const;
  std::span<const double> utilities() const noexcept { return utilities_; }

 private:
  WorldConfig config_;
  JudgeModel judge_;
  std::vector<double> utilities_;
};

struct WorldStats {
  double mean_best = 0.0;
  double mean_worst = 0.0;
  double mean_best_worst_margin = 0.0;
  double mean_range = 0.0;
  double min_range = 0.0;
  double max_range = 0.0;
  /// Share of problems whose max - min exceeds 0.3.
  double fraction_range_above_0_3 = 0.0;
  double mean_utility = 0.0;
};

/// Deterministic in config.seed. Utilities lie in [0.05, 0.95] and every
/// problem has a strictly positive range.
World generate_world(const WorldConfig& config, const JudgeModel& judge = {});

WorldStats world_stats(const World& world);

/// One judge reading of the latent utility of (problem, strategy).
ComponentScores judge_scores(const World& world, std::uint32_t problem, StrategyId strategy,
                             std::uint64_t draw);

/// Judge reading of an arbitrary true utility attributed to (problem,
/// strategy); used for sampled chains whose quality differs from the latent
/// strategy utility.
ComponentScores judge_utility(const World& world, double true_utility, std::uint32_t problem,
                              StrategyId strategy, std::uint64_t draw);

/// Folds x back into [0, 1] by reflection at the ends. Unlike clamping this
/// leaves no probability mass exactly at 0 or 1, so noisy utilities stay
/// tie-free, and it never moves x further from any point inside the interval.
double reflect_unit(double x) noexcept;

/// Raw judge error for a key, before clamping to [0, 1].
double judge_noise(const JudgeModel& judge, std::uint32_t problem, StrategyId strategy,
                   std::uint64_t draw) noexcept;

/// Mean of m judge aggregates over draws 0..m-1.
double mean_of_draws(const World& world, std::uint32_t problem, StrategyId strategy,
                     std::uint32_t m);

void save_world(const World& world, const std::filesystem::path& path);
World load_world(const std::filesystem::path& path);

}  // namespace cudpo
