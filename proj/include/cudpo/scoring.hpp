#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace cudpo {

inline constexpr std::array<std::string_view, 8> kStrategyLabels = {
    "direct",       "step_by_step", "backwards", "alternative",
    "verification", "algebraic",    "numerical", "conceptual"};

/// Index of a strategy prompt. Worlds with K <= 8 use the first K labels;
/// larger K gets synthetic labels `strategy_<i>`.
struct StrategyId {
  std::uint32_t index = 0;

  friend bool operator==(StrategyId, StrategyId) = default;
  friend auto operator<=>(StrategyId, StrategyId) = default;
};

std::string strategy_label(StrategyId s);
/// Inverse of strategy_label. Throws std::invalid_argument on unknown text.
StrategyId parse_strategy(std::string_view label);

inline constexpr std::array<double, 3> kDefaultJudgeWeights = {1.5, 0.75, 0.75};

/// Decomposed judge output. Weights are rescaled to sum to 3 on construction
/// so the aggregate lies in [0, 1].
class ComponentScores {
 public:
  ComponentScores(double correctness, double efficiency, double coherence,
                  std::array<double, 3> weights = kDefaultJudgeWeights);

  double correctness() const noexcept { return s_[0]; }
  double efficiency() const noexcept { return s_[1]; }
  double coherence() const noexcept { return s_[2]; }
  const std::array<double, 3>& scores() const noexcept { return s_; }
  const std::array<double, 3>& weights() const noexcept { return w_; }

 private:
  std::array<double, 3> s_;
  std::array<double, 3> w_;
};

struct Utility {
  double value = 0.0;

  friend bool operator==(Utility, Utility) = default;
};

/// Signed utility difference winner minus loser.
struct Margin {
  double delta_u = 0.0;

  friend bool operator==(Margin, Margin) = default;
};

enum class MarginBin : std::uint8_t { strong, medium, weak };

inline constexpr double kStrongMarginThreshold = 0.30;
inline constexpr double kMediumMarginThreshold = 0.15;

std::string_view to_string(MarginBin bin);
MarginBin parse_margin_bin(std::string_view text);

/// U = (1/3) * sum_c w_c s_c.
Utility aggregate_utility(const ComponentScores& scores);

/// Logistic sigmoid, branch-stable for large |x|.
double sigmoid(double x) noexcept;
/// log(sigmoid(x)) without overflow or cancellation.
double log_sigmoid(double x) noexcept;

/// Bradley-Terry probability that the winner is preferred.
double bt_probability(Margin margin) noexcept;

/// Bernoulli(bt_probability(margin)) keyed by draw; the same draw always
/// returns the same outcome.
bool sample_preference(Margin margin, std::uint64_t draw) noexcept;

/// Bins a positive margin. Throws std::invalid_argument for delta_u <= 0.
MarginBin margin_bin(Margin margin);

}  // namespace cudpo
