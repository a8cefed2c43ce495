#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace cudpo {

using SlotIndex = std::uint32_t;

/// Per-problem reference distributions over chain slots, stored as logs.
class ReferencePolicy {
 public:
  ReferencePolicy() = default;
  /// Throws unless every vector is strictly positive and sums to 1 (1e-9).
  explicit ReferencePolicy(std::vector<std::vector<double>> probabilities);
  static ReferencePolicy uniform(std::span<const std::uint32_t> slot_counts);

  std::uint32_t n_problems() const noexcept { return static_cast<std::uint32_t>(log_probs_.size()); }
  std::uint32_t slots(std::uint32_t problem) const;
  std::span<const double> log_probs(std::uint32_t problem) const;
  std::vector<double> probabilities(std::uint32_t problem) const;

 private:
  std::vector<std::vector<double>> log_probs_;
};

/// Tabular softmax policy: one logit per (problem, slot). A fresh instance
/// starts at the reference (logits = log pi_ref).
class PolicyParams {
 public:
  PolicyParams() = default;
  explicit PolicyParams(ReferencePolicy reference, double beta = 0.1);

  double beta() const noexcept { return beta_; }
  const ReferencePolicy& reference() const noexcept { return reference_; }
  std::uint32_t n_problems() const noexcept { return reference_.n_problems(); }
  std::uint32_t slots(std::uint32_t problem) const { return reference_.slots(problem); }
  std::size_t n_params() const noexcept { return logits_.size(); }

  std::span<const double> logits(std::uint32_t problem) const;
  std::span<double> logits(std::uint32_t problem);
  std::span<const double> flat() const noexcept { return logits_; }
  std::span<double> flat() noexcept { return logits_; }
  std::size_t offset(std::uint32_t problem) const;

  /// Throws std::invalid_argument on non-finite logits.
  void validate() const;

 private:
  ReferencePolicy reference_;
  double beta_ = 0.1;
  std::vector<double> logits_;
  std::vector<std::size_t> offsets_;
};

/// A preference between two slots of one problem. `target` is the
/// probability that `winner` is preferred: 1 for hard labels, sigma(dU) for
/// continuous supervision.
struct TrainPair {
  std::uint32_t problem = 0;
  SlotIndex winner = 0;
  SlotIndex loser = 0;
  double target = 1.0;
  /// Utility margin of the pair, kept for diagnostics.
  double margin = 0.0;
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::vector<double> policy_distribution(const PolicyParams& params, std::uint32_t problem);
std::vector<double> log_policy(const PolicyParams& params, std::uint32_t problem);

/// beta * (log pi_theta - log pi_ref) at a slot.
double implicit_reward(const PolicyParams& params, std::uint32_t problem, SlotIndex slot);
std::vector<double> implicit_rewards(const PolicyParams& params, std::uint32_t problem);

/// r_w - r_l for a pair.
double reward_margin(const PolicyParams& params, const TrainPair& pair);

/// Cross-entropy against the target: -t log s(dr) - (1 - t) log s(-dr).
/// With t = 1 this is the usual -log sigma(r_w - r_l).
double dpo_loss(const PolicyParams& params, const TrainPair& pair);
/// d loss / d (r_w - r_l) = sigma(dr) - t.
double dpo_loss_slope(double reward_margin, double target) noexcept;

/// Gradient of dpo_loss with respect to the logits of pair.problem.
std::vector<double> dpo_grad(const PolicyParams& params, const TrainPair& pair);

/// Sum of pair losses; compensated summation in a fixed order.
double total_loss(const PolicyParams& params, std::span<const TrainPair> pairs, unsigned jobs = 1);
/// Gradient of total_loss over the flat logit vector.
std::vector<double> total_grad(const PolicyParams& params, std::span<const TrainPair> pairs,
                               unsigned jobs = 1);

enum class BatchMode : std::uint8_t { full, minibatch };

struct TrainConfig {
  double learning_rate = 25.0;
  std::uint32_t epochs = 400;
  BatchMode batch_mode = BatchMode::full;
  std::uint32_t batch_size = 64;
  std::uint64_t seed = 0;
  /// Multiplier on the step after each accepted full-batch step.
  double lr_growth = 1.2;
  std::uint32_t max_halvings = 60;
  /// Stop once the largest gradient entry falls below this.
  double grad_tolerance = 1e-11;
  unsigned jobs = 1;

  void validate() const;
};

struct TrainResult {
  PolicyParams params;
  /// Loss before training, then after every accepted step (full batch) or
  /// every epoch (minibatch: full-data loss).
  std::vector<double> loss_curve;
  std::uint32_t steps = 0;
  std::uint32_t rejected_steps = 0;
  double final_learning_rate = 0.0;
  double final_grad_max = 0.0;
  bool converged = false;
};

/// Gradient descent with step halving. Full-batch steps are accepted only
/// when they strictly lower the total loss. Throws std::invalid_argument on
/// an empty dataset and TrainingError when the loss becomes non-finite.
TrainResult train(PolicyParams params, std::span<const TrainPair> pairs, const TrainConfig& config);

struct PhaseReport {
  std::size_t n_pairs = 0;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  std::uint32_t steps = 0;
  bool converged = false;
  /// Win rate of the phase's own pairs right after the phase.
  double win_rate = 0.0;
};

struct TwoPhaseResult {
  PolicyParams params;
  PhaseReport phase1;
  std::optional<PhaseReport> phase2;
  std::vector<double> loss_curve;
};

/// Trains on phase 1, then continues on phase 2 from the resulting params.
/// An empty phase-2 set is an error unless allow_empty_phase2.
TwoPhaseResult train_two_phase(PolicyParams params, std::span<const TrainPair> phase1,
                               std::span<const TrainPair> phase2, const TrainConfig& config,
                               bool allow_empty_phase2 = false);

/// Share of pairs whose winner gets the larger implicit reward (ties 0.5).
double win_rate(const PolicyParams& params, std::span<const TrainPair> pairs);

/// pi*(y|x) proportional to pi_ref(y|x) exp(U(x,y) / beta).
std::vector<std::vector<double>> closed_form_policy(const ReferencePolicy& reference,
                                                    const std::vector<std::vector<double>>& utilities,
                                                    double beta);
/// Logits realizing the closed form (log pi_ref + U / beta, max-shifted).
PolicyParams closed_form_params(const ReferencePolicy& reference,
                                const std::vector<std::vector<double>>& utilities, double beta);

double total_variation(std::span<const double> p, std::span<const double> q);

struct AlignmentFit {
  double slope = 0.0;
  std::vector<double> intercepts;
  /// Within-problem R^2 of r against slope * U + c(x); 0 when r has no
  /// within-problem variation.
  double r2 = 0.0;
  std::size_t n_points = 0;
};

/// Least squares r = slope * U + c(x) over the selected slots (all slots
/// when `mask` is empty). Throws std::invalid_argument when the selected
/// utilities do not vary within any problem.
AlignmentFit fit_reward_utility(const PolicyParams& params,
                                const std::vector<std::vector<double>>& utilities,
                                const std::vector<std::vector<bool>>& mask = {});

/// Slots touched by at least one pair.
std::vector<std::vector<bool>> trained_slots(const PolicyParams& params, std::span<const TrainPair> pairs);

void save_checkpoint(const PolicyParams& params, std::uint64_t seed, const std::filesystem::path& path);
struct Checkpoint {
  PolicyParams params;
  std::uint64_t seed = 0;
};
Checkpoint load_checkpoint(const std::filesystem::path& path);

void save_loss_curve(std::span<const double> curve, const std::filesystem::path& path);

/// Linear head over problem features: logit(x, s) = W[s] . phi(x), one
/// candidate per strategy. Kept out of the exactness checks.
class FeaturizedPolicy {
 public:
  FeaturizedPolicy(std::uint32_t k_strategies, std::vector<std::vector<double>> features, double beta = 0.1);

  std::uint32_t k() const noexcept { return k_; }
  std::uint32_t dim() const noexcept { return dim_; }
  double beta() const noexcept { return beta_; }
  std::span<double> weights() noexcept { return w_; }
  std::span<const double> weights() const noexcept { return w_; }

  std::vector<double> logits(std::uint32_t problem) const;
  /// Uniform reference over strategies.
  double implicit_reward(std::uint32_t problem, SlotIndex strategy) const;
  double loss(const TrainPair& pair) const;
  std::vector<double> grad(const TrainPair& pair) const;

 private:
  std::uint32_t k_;
  std::uint32_t dim_;
  double beta_;
  std::vector<std::vector<double>> features_;
  std::vector<double> w_;
};

}  // namespace cudpo
