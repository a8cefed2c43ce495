#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "cudpo/scoring.hpp"
#include "cudpo/world.hpp"

namespace cudpo {

enum class ChainSource : std::uint8_t { original, refined };

std::string_view to_string(ChainSource s);

using ChainId = std::uint32_t;
inline constexpr ChainId kNoChain = ~ChainId{0};

/// One candidate solution. `sample` distinguishes repeated strategy-conditioned
/// draws of the same (problem, strategy); refined chains inherit the sample of
/// their ancestor.
struct ChainRecord {
  ChainId chain_id = 0;
  std::uint32_t problem_id = 0;
  StrategyId strategy{};
  std::uint32_t sample = 0;
  std::uint32_t generation = 0;
  ChainSource source = ChainSource::original;
  ChainId parent_id = kNoChain;
  double utility = 0.0;

  /// generation == 0 <=> original, utility in [0, 1].
  void validate() const;
};

struct ChainSampling {
  /// Strategy-conditioned draws per (problem, strategy).
  std::uint32_t samples_per_strategy = 2;
  /// Per-chain execution deviation around the latent strategy utility.
  double execution_sd = 0.12;
  std::uint64_t seed = 7;
};

/// Original chains: id = (problem * samples + sample) * K + strategy. Each
/// chain's true quality is the latent utility plus an execution deviation; the
/// recorded utility is the judge's aggregate for it (judge draw = sample).
std::vector<ChainRecord> sample_original_chains(const World& world, const ChainSampling& sampling,
                                                unsigned jobs = 1);

/// Per-problem view: chains of each problem in ascending id order. The
/// position of a chain inside its problem is its policy slot.
class ChainIndex {
 public:
  explicit ChainIndex(std::span<const ChainRecord> chains);

  std::uint32_t n_problems() const noexcept { return static_cast<std::uint32_t>(by_problem_.size()); }
  std::span<const ChainId> problem_chains(std::uint32_t problem) const;
  const ChainRecord& chain(ChainId id) const;
  bool contains(ChainId id) const noexcept;
  /// Slot of a chain inside its problem.
  std::uint32_t slot(ChainId id) const;
  std::vector<std::uint32_t> slot_counts() const;
  /// Utilities per problem per slot.
  std::vector<std::vector<double>> slot_utilities() const;
  /// Slot of the sample-0 original chain of (problem, strategy), if present.
  std::optional<std::uint32_t> primary_slot(std::uint32_t problem, StrategyId s) const;

 private:
  std::vector<ChainRecord> chains_;
  std::vector<std::size_t> position_;  // chain id -> index in chains_, npos if absent
  std::vector<std::vector<ChainId>> by_problem_;
  std::vector<std::uint32_t> slot_;
};

/// Sample-0 original chains of one problem, one per strategy.
std::vector<ChainRecord> primary_chains(std::span<const ChainRecord> chains, std::uint32_t problem);

void save_chains(std::span<const ChainRecord> chains, const std::filesystem::path& path);
std::vector<ChainRecord> load_chains(const std::filesystem::path& path);

}  // namespace cudpo
