#include "cudpo/scoring.hpp"

#include <cmath>
#include <stdexcept>

#include "cudpo/rng.hpp"

namespace cudpo {

std::string strategy_label(StrategyId s) {
  if (s.index < kStrategyLabels.size()) return std::string(kStrategyLabels[s.index]);
  return "strategy_" + std::to_string(s.index);
}

StrategyId parse_strategy(std::string_view label) {
  for (std::uint32_t i = 0; i < kStrategyLabels.size(); ++i) {
    if (kStrategyLabels[i] == label) return StrategyId{i};
  }
  constexpr std::string_view prefix = "strategy_";
  if (label.starts_with(prefix) && label.size() > prefix.size()) {
    std::uint32_t v = 0;
    for (char c : label.substr(prefix.size())) {
      if (c < '0' || c > '9') throw std::invalid_argument("unknown strategy label: " + std::string(label));
      v = v * 10 + static_cast<std::uint32_t>(c - '0');
    }
    return StrategyId{v};
  }
  throw std::invalid_argument("unknown strategy label: " + std::string(label));
}

ComponentScores::ComponentScores(double correctness, double efficiency, double coherence,
                                 std::array<double, 3> weights)
    : s_{correctness, efficiency, coherence}, w_(weights) {
  for (double s : s_) {
    if (!(s >= 0.0 && s <= 1.0)) throw std::invalid_argument("component score outside [0,1]");
  }
  double sum = 0.0;
  for (double w : w_) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw std::invalid_argument("negative or non-finite judge weight");
    sum += w;
  }
  if (!(sum > 0.0)) throw std::invalid_argument("judge weights sum to zero");
  for (double& w : w_) w *= 3.0 / sum;
  if (std::abs(w_[0] + w_[1] + w_[2] - 3.0) > 1e-9) {
    throw std::invalid_argument("judge weights do not normalize to 3");
  }
  if (w_[0] < w_[1] || w_[0] < w_[2]) {
    throw std::invalid_argument("correctness weight must dominate efficiency and coherence");
  }
}

Utility aggregate_utility(const ComponentScores& scores) {
  const auto& s = scores.scores();
  const auto& w = scores.weights();
  const double u = (w[0] * s[0] + w[1] * s[1] + w[2] * s[2]) / 3.0;
  // Rounding can push an all-ones aggregate a hair past 1.
  return Utility{std::clamp(u, 0.0, 1.0)};
}

double sigmoid(double x) noexcept {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double log_sigmoid(double x) noexcept {
  if (x >= 0.0) return -std::log1p(std::exp(-x));
  return x - std::log1p(std::exp(x));
}

double bt_probability(Margin margin) noexcept { return sigmoid(margin.delta_u); }

bool sample_preference(Margin margin, std::uint64_t draw) noexcept {
  Rng rng(derive_key(draw, "bt-preference"));
  return rng.uniform() < bt_probability(margin);
}

MarginBin margin_bin(Margin margin) {
  if (!(margin.delta_u > 0.0)) throw std::invalid_argument("margin_bin requires a positive margin");
  if (margin.delta_u >= kStrongMarginThreshold) return MarginBin::strong;
  if (margin.delta_u >= kMediumMarginThreshold) return MarginBin::medium;
  return MarginBin::weak;
}

std::string_view to_string(MarginBin bin) {
  switch (bin) {
    case MarginBin::strong: return "strong";
    case MarginBin::medium: return "medium";
    case MarginBin::weak: return "weak";
  }
  return "weak";
}

MarginBin parse_margin_bin(std::string_view text) {
  if (text == "strong") return MarginBin::strong;
  if (text == "medium") return MarginBin::medium;
  if (text == "weak") return MarginBin::weak;
  throw std::invalid_argument("unknown margin bin: " + std::string(text));
}

}  // namespace cudpo
