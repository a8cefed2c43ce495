#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "cudpo/chains.hpp"
#include "cudpo/pairs.hpp"
#include "cudpo/refine.hpp"
#include "cudpo/supervision.hpp"
#include "cudpo/world.hpp"

namespace cudpo {

/// Inputs of the sample-count formulas. `d` is the VC dimension of the
/// reward class and only enters through d / eps^2.
struct BoundInputs {
  double n_problems = 450;
  double k_strategies = 8;
  double vc_dim = 0;
  double epsilon = 0.05;
  double noise_bound = 0.17;
  double eta = 0.05;

  /// Throws std::invalid_argument unless N, d >= 0, K >= 2, noise bound >= 0
  /// and epsilon, eta lie in (0, 1).
  void validate() const;
};

double harmonic(std::uint64_t n);

/// C(K,2) * H_{C(K,2)}: expected uniform pair draws until every strategy pair
/// has been seen once.
double coupon_collector_expected(std::uint32_t k);

struct MonteCarloEstimate {
  double mean = 0.0;
  double standard_error = 0.0;
  std::uint64_t trials = 0;
};

/// Draws uniform strategy pairs until all C(K,2) pairs have been observed.
MonteCarloEstimate simulate_binary_passive(std::uint32_t k, std::uint64_t trials, std::uint64_t draw,
                                           unsigned jobs = 1);

enum class RecoveryMode : std::uint8_t { binary_passive, continuous };

std::string_view to_string(RecoveryMode m);
RecoveryMode parse_recovery_mode(std::string_view text);

struct RankingRecovery {
  /// Observations consumed: pairwise comparisons or utility readings.
  std::uint64_t samples = 0;
  /// Strategy indices from best to worst.
  std::vector<std::uint32_t> ranking;
};

/// binary_passive: noiseless comparisons of uniform pairs until the
/// transitive closure fixes a unique total order. continuous: one reading per
/// strategy, then a sort. Throws std::invalid_argument on fewer than two or
/// tied utilities, or K > 64.
RankingRecovery simulate_ranking_recovery(std::span<const double> utilities, RecoveryMode mode,
                                          std::uint64_t draw);

/// Mean binary_passive comparisons over random distinct utilities.
MonteCarloEstimate mean_ranking_samples(std::uint32_t k, std::uint64_t trials, std::uint64_t draw,
                                        unsigned jobs = 1);

struct EfficiencyRow {
  std::uint32_t k = 0;
  /// Comparisons until the total order is determined (transitive closure).
  MonteCarloEstimate binary;
  /// Draws until every pair is covered, for the closure/coverage gap.
  MonteCarloEstimate coverage;
  std::uint64_t continuous_samples = 0;
  double ratio = 0.0;
  double coupon_ratio = 0.0;
};

struct EfficiencyReport {
  std::vector<EfficiencyRow> rows;
  /// ratio ~ a * K ln K, least squares through the origin.
  double fit_a = 0.0;
  double fit_r2 = 0.0;
  std::vector<double> residuals;
  /// Slope of ln(binary mean) on ln K.
  double growth_exponent = 0.0;
};

EfficiencyReport efficiency_ratio(std::span<const std::uint32_t> ks, std::uint64_t trials, std::uint64_t draw,
                                  unsigned jobs = 1);

/// N C(K,2) (ln C(K,2) + ln(1/eta)) + d / eps^2. The eta term uses the
/// confidence input; noise_bound is ignored.
double binary_lower_bound(const BoundInputs& in);
/// N K + d / eps^2.
double utility_upper_bound(const BoundInputs& in);
/// N K log2 K + d / eps^2.
double utility_upper_bound_log(const BoundInputs& in);

/// Repeated judge readings per chain so the mean lies within eps of the
/// truth with probability 1 - eta: ceil(8 delta^2 / eps^2 ln(2 / eta)), at
/// least 1.
std::uint64_t robust_sample_count(double noise_bound, double epsilon, double eta);
/// N delta^2 / eps^2 extra readings over a corpus, rounded up.
std::uint64_t noise_term(double n_problems, double noise_bound, double epsilon);

/// Per-problem information bound: ((1 - p_err) log2 K! - 1) one-bit comparisons.
double fano_lower_bound(std::uint32_t k, double error_prob);

/// Share of the C(K,2) cross-strategy pairs that contain the best strategy.
double clean_fraction(std::uint32_t k);

/// Wins minus losses of `strategy` over the cross-strategy pairs given.
/// Pairs are utility-oriented, so the winner is the higher-utility side.
std::int64_t net_evidence(StrategyId strategy, std::span<const PreferencePair> pairs);

struct HoeffdingCoverage {
  std::uint64_t m = 0;
  std::uint64_t repetitions = 0;
  double coverage = 0.0;
  double epsilon = 0.0;
  double eta = 0.0;
};

/// Averages m = robust_sample_count judge readings of an interior utility
/// `repetitions` times (fresh judge seed each time) and counts estimates
/// within eps of the truth.
HoeffdingCoverage hoeffding_coverage(const JudgeModel& judge, double epsilon, double eta,
                                     std::uint64_t repetitions, std::uint64_t draw, unsigned jobs = 1);

struct ConflictConfig {
  std::uint32_t seeds = 10;
  ChainSampling sampling{};
  bool refine = true;
  RefinePolicy refine_policy{};
  ImprovementModel improvement{};
  StratificationPlan plan{};
  Supervision supervision = Supervision::continuous;
  double beta = 0.1;
  /// Gradient step budget for either mode; two-phase spends half per phase.
  std::uint32_t step_budget = 400;
  unsigned jobs = 1;

  void validate() const;
};

struct ConflictArm {
  MonteCarloEstimate accuracy;
  /// Population std of net evidence over mid-ranked strategies, per seed.
  MonteCarloEstimate mid_evidence_dispersion;
  double pairs_per_problem = 0.0;
  /// Cross-strategy pairs containing the best strategy.
  double clean_share = 0.0;
};

struct ConflictReport {
  ConflictArm all_pairs;
  ConflictArm two_phase;
  std::uint32_t seeds = 0;
  std::uint32_t k = 0;
  /// all-pairs cross-strategy count over the phase-1 count.
  double pair_count_ratio = 0.0;
};

/// Trains a single phase on every cross-strategy pair and, separately, the
/// two-phase schedule, on the same judged chains of each seed. Accuracy is
/// the share of problems whose highest-reward strategy is the latent best.
ConflictReport conflict_experiment(const World& world, const ConflictConfig& config, std::uint64_t draw);

}  // namespace cudpo
