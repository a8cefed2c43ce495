#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "cudpo/chains.hpp"
#include "cudpo/pairs.hpp"
#include "cudpo/refine.hpp"
#include "cudpo/supervision.hpp"
#include "cudpo/world.hpp"

namespace cudpo {

enum class TrainSchedule : std::uint8_t { two_phase, phase1, all_pairs };

std::string_view to_string(TrainSchedule s);
TrainSchedule parse_train_schedule(std::string_view text);

struct RunConfig {
  std::uint64_t seed = 1;
  std::string run_id = "default";

  // [world]
  WorldConfig world{};
  ChainSampling sampling{};

  // [judge]
  JudgeModel judge{};
  bool noiseless = false;

  // [refine]
  bool refine_enabled = true;
  RefinePolicy refine{};
  ImprovementModel improvement{};

  // [pairs]
  StratificationPlan plan{};
  bool phase2_enabled = true;

  // [train]
  TrainSchedule schedule = TrainSchedule::two_phase;
  Supervision supervision = Supervision::continuous;
  double beta = 0.1;
  TrainConfig train = [] {
    TrainConfig t;
    t.epochs = 3000;
    return t;
  }();

  // [eval]
  std::size_t bt_samples = 100000;
  std::uint32_t bt_buckets = 20;
  bool scaling_enabled = true;
  std::uint32_t scaling_seeds = 5;
  std::uint32_t scaling_epochs = 200;
  std::uint32_t top_k = 3;

  // [theory]
  std::uint32_t coupon_k = 8;
  std::uint64_t coupon_trials = 10000;
  std::uint32_t efficiency_k_min = 4;
  std::uint32_t efficiency_k_max = 32;
  std::uint64_t efficiency_trials = 400;
  std::uint64_t hoeffding_repetitions = 1000;
  double epsilon = 0.05;
  double eta = 0.05;
  double vc_dim = 0.0;
  bool conflict_enabled = true;
  std::uint32_t conflict_seeds = 10;
  std::uint32_t conflict_budget = 400;

  /// Judge with the seed derived from the master seed, or the noiseless one.
  JudgeModel effective_judge() const;
  WorldConfig effective_world() const;
  ChainSampling effective_sampling() const;

  /// Throws std::invalid_argument on any out-of-range setting.
  void validate() const;

  /// Assigns `section.key` (or a top-level `seed` / `run_id`). Throws
  /// std::invalid_argument on an unknown key or unparsable value.
  void set(std::string_view key, std::string_view value);

  /// Every key with its current value in a fixed order.
  std::vector<std::pair<std::string, std::string>> snapshot() const;
  std::string to_text() const;
};

/// Parses `[section]` headers and `key = value` lines; `#` starts a comment.
/// Keys may also be written fully qualified (`train.beta = 0.2`).
RunConfig parse_run_config(std::string_view text, const RunConfig& base = {});
RunConfig load_run_config(const std::filesystem::path& path, const RunConfig& base = {});
/// Applies `section.key=value` overrides in order.
void apply_overrides(RunConfig& config, const std::vector<std::string>& overrides);

}  // namespace cudpo
