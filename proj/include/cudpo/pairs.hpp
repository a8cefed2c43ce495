#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "cudpo/chains.hpp"
#include "cudpo/scoring.hpp"

namespace cudpo {

/// all_pairs marks exhaustive cross-strategy sets used only as a baseline.
enum class Phase : std::uint8_t { phase1, phase2, all_pairs };
enum class SourceCombo : std::uint8_t { original_original, hybrid, refined_refined };

std::string_view to_string(Phase p);
std::string_view to_string(SourceCombo s);
Phase parse_phase(std::string_view text);
SourceCombo parse_source_combo(std::string_view text);

struct PreferencePair {
  std::uint32_t problem_id = 0;
  ChainId winner = 0;
  ChainId loser = 0;
  StrategyId winner_strategy{};
  StrategyId loser_strategy{};
  Margin margin{};
  Phase phase = Phase::phase1;
  std::optional<MarginBin> bin;
  SourceCombo source_combo = SourceCombo::original_original;

  friend bool operator==(const PreferencePair&, const PreferencePair&) = default;
};

/// Oriented pair from two chains of one problem; nullopt when the margin is 0.
std::optional<PreferencePair> make_pair(const ChainRecord& a, const ChainRecord& b, Phase phase);

struct StratificationPlan {
  /// strong, medium, weak.
  std::array<double, 3> target_mixture = {0.45, 0.30, 0.25};
  std::uint32_t pairs_per_problem = 6;

  void validate() const;
};

/// Largest-remainder apportionment of n over the mixture; ties in the
/// remainder go to the earlier (stronger) bin.
std::array<std::uint32_t, 3> bin_quotas(const std::array<double, 3>& mixture, std::uint32_t n);

/// Moves quota a bin cannot fill: first to the adjacent larger-margin bin,
/// then to whichever bin has the most spare candidates.
std::array<std::uint32_t, 3> allocate_bins(std::array<std::uint32_t, 3> quotas,
                                           const std::array<std::uint32_t, 3>& available);

/// Argmax utility over one original chain per strategy; ties go to the
/// lowest strategy index. Throws std::invalid_argument on empty input or
/// repeated strategies.
StrategyId select_best_strategy(std::span<const ChainRecord> chains);

/// Best-vs-rest pairs for one problem; zero-margin pairs are dropped.
std::vector<PreferencePair> build_phase1(std::span<const ChainRecord> chains);

/// Every cross-strategy pair of one problem with a positive margin.
std::vector<PreferencePair> build_all_pairs(std::span<const ChainRecord> chains);

/// Strategy-matched, margin-stratified pairs for one problem. `chains` may
/// mix original and refined records of all strategies.
std::vector<PreferencePair> build_phase2(std::span<const ChainRecord> chains,
                                         const StratificationPlan& plan, std::uint64_t draw);

/// Corpus drivers: per-problem construction, merged in problem order. Phase 1
/// uses the sample-0 original chain of each strategy.
std::vector<PreferencePair> build_phase1_corpus(std::span<const ChainRecord> chains, unsigned jobs = 1);
std::vector<PreferencePair> build_all_pairs_corpus(std::span<const ChainRecord> chains, unsigned jobs = 1);
std::vector<PreferencePair> build_phase2_corpus(std::span<const ChainRecord> chains,
                                                const StratificationPlan& plan, std::uint64_t draw,
                                                unsigned jobs = 1);

struct DatasetStats {
  std::size_t n_problems = 0;
  std::size_t n_pairs = 0;
  std::size_t n_phase1 = 0;
  std::size_t n_phase2 = 0;
  double mean_margin = 0.0;
  double median_margin = 0.0;
  /// Population standard deviation.
  double std_margin = 0.0;
  double min_margin = 0.0;
  double max_margin = 0.0;
  /// strong, medium, weak over phase-2 pairs; absent without phase-2 pairs.
  std::optional<std::array<double, 3>> bin_fractions;
  /// Mean phase-2 margin per bin (0 for empty bins); absent like bin_fractions.
  std::optional<std::array<double, 3>> bin_mean_margins;
  double hybrid_fraction = 0.0;
  double refined_refined_fraction = 0.0;
  std::vector<std::size_t> winner_counts;
  std::vector<std::size_t> loser_counts;
};

/// Throws std::invalid_argument on an empty list.
DatasetStats dataset_stats(std::span<const PreferencePair> pairs);

/// Tab-separated export with a header line. Throws std::invalid_argument when
/// a pair references a chain missing from `chains`.
std::size_t export_pairs(std::span<const PreferencePair> pairs, const ChainIndex& chains,
                         const std::filesystem::path& path);

/// Reads an export back. With `chains`, margins are restored at full
/// precision from chain utilities and references are validated.
std::vector<PreferencePair> import_pairs(const std::filesystem::path& path,
                                         const ChainIndex* chains = nullptr);

/// One JSON object per line with `prompt`, `chosen`, `rejected` identifiers.
std::size_t export_preference_jsonl(std::span<const PreferencePair> pairs,
                                    const std::filesystem::path& path);

}  // namespace cudpo
