#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "cudpo/chains.hpp"
#include "cudpo/world.hpp"

namespace cudpo {

struct RefinePolicy {
  double eligibility_threshold = 0.4;
  double success_threshold = 0.6;
  std::uint32_t max_rounds = 5;
  double stagnation_epsilon = 0.01;
  std::uint32_t stagnation_rounds = 2;
  /// Retain only traces that terminated with success (and improved).
  bool require_success = false;

  void validate() const;
};

enum class StepBranch : std::uint8_t { improve, regress, stagnate, slow };
enum class Termination : std::uint8_t { success, stagnation, max_rounds };

std::string_view to_string(StepBranch b);
std::string_view to_string(Termination t);

/// Outcome mixture for one refinement call. Improve steps are a Gaussian
/// truncated to mean +- 2 sd; regressions lose U(regress_lo, regress_hi);
/// stagnation moves by less than stagnate_half_width; slow steps gain
/// U(slow_lo, slow_hi), too little to reach the success threshold in time.
struct ImprovementModel {
  double improve_mean = 0.15;
  double improve_sd = 0.05;
  double regress_prob = 0.041;
  double regress_lo = 0.02;
  double regress_hi = 0.08;
  double stagnate_prob = 0.054;
  double stagnate_half_width = 0.009;
  double slow_prob = 0.027;
  double slow_lo = 0.012;
  double slow_hi = 0.03;
  /// Draw the branch once per trace instead of once per step.
  bool sticky = true;
  /// When set, every step adds exactly this amount.
  std::optional<double> fixed_step;

  static ImprovementModel constant(double step);
  void validate() const;
};

struct RefinementTrace {
  /// Generation 0 first.
  std::vector<ChainRecord> lineage;
  Termination termination = Termination::max_rounds;
  bool retained = false;

  std::uint32_t rounds() const noexcept { return static_cast<std::uint32_t>(lineage.size()) - 1; }
  double initial_utility() const { return lineage.front().utility; }
  double final_utility() const { return lineage.back().utility; }
};

/// utility < threshold (strict).
bool eligible(const ChainRecord& chain, const RefinePolicy& policy) noexcept;

/// One application of the refinement operator. The result has the same
/// problem, strategy and sample, generation + 1, parent = chain.chain_id and
/// chain_id = kNoChain (ids are assigned by refine_corpus).
ChainRecord refine_step(const World& world, const ChainRecord& chain, const ImprovementModel& model,
                        std::uint64_t draw, std::optional<StepBranch> branch = std::nullopt);

/// Runs refinement rounds until success, stagnation or max_rounds (checked in
/// that order after each round). Throws std::invalid_argument if the chain is
/// not eligible.
RefinementTrace refine_loop(const World& world, const ChainRecord& chain, const RefinePolicy& policy,
                            const ImprovementModel& model, std::uint64_t draw);

struct RefineSummary {
  std::size_t n_chains = 0;
  std::size_t n_eligible = 0;
  std::size_t n_success = 0;
  std::size_t n_stagnation = 0;
  std::size_t n_max_rounds = 0;
  std::size_t n_retained = 0;
  std::size_t n_refined_chains = 0;
  double eligibility_rate = 0.0;
  /// Over attempted (eligible) chains.
  double success_rate = 0.0;
  double success_within_three_rate = 0.0;
  double mean_rounds = 0.0;
  /// Share of successful traces whose final utility lies in [success, 1].
  double success_concentration = 0.0;
};

struct RefineResult {
  /// Every generation >= 1 of each retained trace, ids starting at first_id.
  std::vector<ChainRecord> refined;
  std::vector<RefinementTrace> traces;
  RefineSummary summary;
};

/// Refines every eligible original chain. Refined ids are assigned in chain
/// order starting after the largest input id.
RefineResult refine_corpus(const World& world, std::span<const ChainRecord> chains,
                           const RefinePolicy& policy, const ImprovementModel& model,
                           std::uint64_t draw, unsigned jobs = 1);

void save_traces(std::span<const RefinementTrace> traces, const std::filesystem::path& path);

}  // namespace cudpo
