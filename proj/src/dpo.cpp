#include "cudpo/dpo.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "cudpo/io.hpp"
#include "cudpo/parallel.hpp"
#include "cudpo/rng.hpp"
#include "cudpo/scoring.hpp"

namespace cudpo {

namespace {

double log_sum_exp(std::span<const double> x) {
  const double m = *std::max_element(x.begin(), x.end());
  double s = 0.0;
  for (double v : x) s += std::exp(v - m);
  return m + std::log(s);
}

/// Neumaier-compensated running sum.
struct CompensatedSum {
  double sum = 0.0;
  double c = 0.0;
  void add(double x) {
    const double t = sum + x;
    if (std::abs(sum) >= std::abs(x)) c += (sum - t) + x;
    else c += (x - t) + sum;
    sum = t;
  }
  double value() const { return sum + c; }
};

constexpr std::size_t kChunk = 512;

void check_pair(const PolicyParams& params, const TrainPair& pair) {
  if (pair.problem >= params.n_problems()) throw std::out_of_range("pair problem out of range");
  const auto k = params.slots(pair.problem);
  if (pair.winner >= k || pair.loser >= k) throw std::out_of_range("pair slot out of range");
  if (pair.winner == pair.loser) throw std::invalid_argument("pair compares a slot with itself");
  if (!(pair.target >= 0.0 && pair.target <= 1.0)) throw std::invalid_argument("pair target outside [0,1]");
}

}  // namespace

ReferencePolicy::ReferencePolicy(std::vector<std::vector<double>> probabilities) {
  log_probs_.reserve(probabilities.size());
  for (auto& p : probabilities) {
    if (p.empty()) throw std::invalid_argument("ReferencePolicy: problem with no slots");
    double sum = 0.0;
    for (double v : p) {
      if (!(v > 0.0) || !std::isfinite(v)) throw std::invalid_argument("ReferencePolicy: entries must be positive");
      sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw std::invalid_argument("ReferencePolicy: vector does not sum to 1");
    for (double& v : p) v = std::log(v);
    log_probs_.push_back(std::move(p));
  }
}

ReferencePolicy ReferencePolicy::uniform(std::span<const std::uint32_t> slot_counts) {
  std::vector<std::vector<double>> p;
  p.reserve(slot_counts.size());
  for (auto k : slot_counts) {
    if (k == 0) throw std::invalid_argument("ReferencePolicy: problem with no slots");
    p.emplace_back(k, 1.0 / k);
  }
  return ReferencePolicy(std::move(p));
}

std::uint32_t ReferencePolicy::slots(std::uint32_t problem) const {
  return static_cast<std::uint32_t>(log_probs(problem).size());
}

std::span<const double> ReferencePolicy::log_probs(std::uint32_t problem) const {
  if (problem >= log_probs_.size()) throw std::out_of_range("ReferencePolicy: problem out of range");
  return log_probs_[problem];
}

std::vector<double> ReferencePolicy::probabilities(std::uint32_t problem) const {
  std::vector<double> p;
  for (double v : log_probs(problem)) p.push_back(std::exp(v));
  return p;
}

PolicyParams::PolicyParams(ReferencePolicy reference, double beta)
    : reference_(std::move(reference)), beta_(beta) {
  if (!(beta_ > 0.0) || !std::isfinite(beta_)) throw std::invalid_argument("PolicyParams: beta must be positive");
  offsets_.reserve(reference_.n_problems() + 1);
  offsets_.push_back(0);
  for (std::uint32_t p = 0; p < reference_.n_problems(); ++p) {
    const auto lp = reference_.log_probs(p);
    logits_.insert(logits_.end(), lp.begin(), lp.end());
    offsets_.push_back(logits_.size());
  }
}

std::size_t PolicyParams::offset(std::uint32_t problem) const {
  if (problem >= n_problems()) throw std::out_of_range("PolicyParams: problem out of range");
  return offsets_[problem];
}

std::span<const double> PolicyParams::logits(std::uint32_t problem) const {
  const auto o = offset(problem);
  return std::span<const double>(logits_).subspan(o, offsets_[problem + 1] - o);
}

std::span<double> PolicyParams::logits(std::uint32_t problem) {
  const auto o = offset(problem);
  return std::span<double>(logits_).subspan(o, offsets_[problem + 1] - o);
}

void PolicyParams::validate() const {
  for (double v : logits_) {
    if (!std::isfinite(v)) throw std::invalid_argument("PolicyParams: non-finite logit");
  }
}

std::vector<double> log_policy(const PolicyParams& params, std::uint32_t problem) {
  const auto z = params.logits(problem);
  const double lse = log_sum_exp(z);
  std::vector<double> out(z.begin(), z.end());
  for (double& v : out) v -= lse;
  return out;
}

std::vector<double> policy_distribution(const PolicyParams& params, std::uint32_t problem) {
  auto out = log_policy(params, problem);
  for (double& v : out) v = std::exp(v);
  return out;
}

double implicit_reward(const PolicyParams& params, std::uint32_t problem, SlotIndex slot) {
  const auto lp = log_policy(params, problem);
  if (slot >= lp.size()) throw std::out_of_range("implicit_reward: slot out of range");
  return params.beta() * (lp[slot] - params.reference().log_probs(problem)[slot]);
}

std::vector<double> implicit_rewards(const PolicyParams& params, std::uint32_t problem) {
  auto lp = log_policy(params, problem);
  const auto ref = params.reference().log_probs(problem);
  for (std::size_t i = 0; i < lp.size(); ++i) lp[i] = params.beta() * (lp[i] - ref[i]);
  return lp;
}

double reward_margin(const PolicyParams& params, const TrainPair& pair) {
  check_pair(params, pair);
  // The softmax normalizer is shared by both slots and cancels exactly.
  const auto z = params.logits(pair.problem);
  const auto ref = params.reference().log_probs(pair.problem);
  return params.beta() * ((z[pair.winner] - z[pair.loser]) - (ref[pair.winner] - ref[pair.loser]));
}

double dpo_loss_slope(double reward_margin, double target) noexcept {
  return sigmoid(reward_margin) - target;
}

namespace {

double pair_loss(double dr, double target) {
  double loss = 0.0;
  if (target > 0.0) loss -= target * log_sigmoid(dr);
  if (target < 1.0) loss -= (1.0 - target) * log_sigmoid(-dr);
  return loss;
}

}  // namespace

double dpo_loss(const PolicyParams& params, const TrainPair& pair) {
  return pair_loss(reward_margin(params, pair), pair.target);
}

std::vector<double> dpo_grad(const PolicyParams& params, const TrainPair& pair) {
  const double slope = dpo_loss_slope(reward_margin(params, pair), pair.target);
  const auto pi = policy_distribution(params, pair.problem);
  // d log pi_j / d z_i = [i == j] - pi_i, so d(dr)/dz_i =
  // beta * (([i == w] - pi_i) - ([i == l] - pi_i)).
  std::vector<double> g(pi.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double dw = (i == pair.winner ? 1.0 : 0.0) - pi[i];
    const double dl = (i == pair.loser ? 1.0 : 0.0) - pi[i];
    g[i] = slope * params.beta() * (dw - dl);
  }
  return g;
}

double total_loss(const PolicyParams& params, std::span<const TrainPair> pairs, unsigned jobs) {
  const std::size_t chunks = (pairs.size() + kChunk - 1) / kChunk;
  std::vector<double> partial(chunks, 0.0);
  parallel_for(chunks, jobs, [&](std::size_t c) {
    CompensatedSum s;
    const std::size_t end = std::min(pairs.size(), (c + 1) * kChunk);
    for (std::size_t i = c * kChunk; i < end; ++i) s.add(dpo_loss(params, pairs[i]));
    partial[c] = s.value();
  });
  CompensatedSum s;
  for (double v : partial) s.add(v);
  return s.value();
}

std::vector<double> total_grad(const PolicyParams& params, std::span<const TrainPair> pairs, unsigned jobs) {
  std::vector<double> slopes(pairs.size());
  const std::size_t chunks = (pairs.size() + kChunk - 1) / kChunk;
  parallel_for(chunks, jobs, [&](std::size_t c) {
    const std::size_t end = std::min(pairs.size(), (c + 1) * kChunk);
    for (std::size_t i = c * kChunk; i < end; ++i) {
      slopes[i] = dpo_loss_slope(reward_margin(params, pairs[i]), pairs[i].target);
    }
  });
  std::vector<double> g(params.n_params(), 0.0);
  const double beta = params.beta();
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto o = params.offset(pairs[i].problem);
    g[o + pairs[i].winner] += beta * slopes[i];
    g[o + pairs[i].loser] -= beta * slopes[i];
  }
  return g;
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw std::invalid_argument("TrainConfig: learning rate must be positive");
  if (epochs == 0) throw std::invalid_argument("TrainConfig: epochs must be at least 1");
  if (batch_mode == BatchMode::minibatch && batch_size == 0) {
    throw std::invalid_argument("TrainConfig: batch size must be positive");
  }
  if (!(lr_growth >= 1.0)) throw std::invalid_argument("TrainConfig: lr_growth must be >= 1");
}

namespace {

double max_abs(std::span<const double> v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

/// One descent step with halving against `loss`; returns the accepted loss or
/// nullopt when no halving produced a strict decrease.
template <typename LossFn>
std::optional<double> descend(PolicyParams& params, std::span<const double> grad, double current,
                              double& lr, const TrainConfig& cfg, std::uint32_t& rejected, LossFn loss) {
  const std::vector<double> start(params.flat().begin(), params.flat().end());
  auto theta = params.flat();
  bool saw_finite = false;
  for (std::uint32_t h = 0; h <= cfg.max_halvings; ++h) {
    for (std::size_t i = 0; i < theta.size(); ++i) theta[i] = start[i] - lr * grad[i];
    const double trial = loss(params);
    saw_finite = saw_finite || std::isfinite(trial);
    if (std::isfinite(trial) && trial < current) return trial;
    lr *= 0.5;
    ++rejected;
  }
  std::copy(start.begin(), start.end(), theta.begin());
  if (!saw_finite) throw TrainingError("train: loss is non-finite at every trial step (lr=" + std::to_string(lr) + ")");
  return std::nullopt;
}

}  // namespace

TrainResult train(PolicyParams params, std::span<const TrainPair> pairs, const TrainConfig& config) {
  config.validate();
  if (pairs.empty()) throw std::invalid_argument("train: empty dataset");
  for (const auto& p : pairs) check_pair(params, p);
  params.validate();

  TrainResult r;
  double loss = total_loss(params, pairs, config.jobs);
  if (!std::isfinite(loss)) throw TrainingError("train: initial loss is non-finite");
  r.loss_curve.push_back(loss);
  double lr = config.learning_rate;

  if (config.batch_mode == BatchMode::full) {
    auto full_loss = [&](const PolicyParams& p) { return total_loss(p, pairs, config.jobs); };
    for (std::uint32_t step = 0; step < config.epochs; ++step) {
      const auto g = total_grad(params, pairs, config.jobs);
      r.final_grad_max = max_abs(g);
      if (r.final_grad_max < config.grad_tolerance) {
        r.converged = true;
        break;
      }
      const auto next = descend(params, g, loss, lr, config, r.rejected_steps, full_loss);
      if (!next) {
        // No representable step lowers the loss: numerically stationary.
        r.converged = true;
        break;
      }
      loss = *next;
      r.loss_curve.push_back(loss);
      ++r.steps;
      lr *= config.lr_growth;
    }
  } else {
    std::vector<std::size_t> order(pairs.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<TrainPair> batch;
    for (std::uint32_t epoch = 0; epoch < config.epochs; ++epoch) {
      Rng rng(derive_key(config.seed, "minibatch", {epoch}));
      rng.shuffle(order);
      for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
        batch.clear();
        for (std::size_t i = start; i < std::min(order.size(), start + config.batch_size); ++i) {
          batch.push_back(pairs[order[i]]);
        }
        const double batch_loss = total_loss(params, batch, 1);
        const auto g = total_grad(params, batch, 1);
        auto bl = [&](const PolicyParams& p) { return total_loss(p, batch, 1); };
        if (descend(params, g, batch_loss, lr, config, r.rejected_steps, bl)) {
          ++r.steps;
          lr = std::min(config.learning_rate, lr * config.lr_growth);
        }
      }
      loss = total_loss(params, pairs, config.jobs);
      if (!std::isfinite(loss)) throw TrainingError("train: loss became non-finite in epoch " + std::to_string(epoch));
      r.loss_curve.push_back(loss);
    }
    r.final_grad_max = max_abs(total_grad(params, pairs, config.jobs));
    r.converged = r.final_grad_max < config.grad_tolerance;
  }
  r.final_learning_rate = lr;
  r.params = std::move(params);
  return r;
}

double win_rate(const PolicyParams& params, std::span<const TrainPair> pairs) {
  if (pairs.empty()) throw std::invalid_argument("win_rate: empty pair set");
  double wins = 0.0;
  for (const auto& p : pairs) {
    const double dr = reward_margin(params, p);
    wins += dr > 0.0 ? 1.0 : (dr == 0.0 ? 0.5 : 0.0);
  }
  return wins / pairs.size();
}

TwoPhaseResult train_two_phase(PolicyParams params, std::span<const TrainPair> phase1,
                               std::span<const TrainPair> phase2, const TrainConfig& config,
                               bool allow_empty_phase2) {
  if (phase1.empty()) throw std::invalid_argument("train_two_phase: empty phase-1 set");
  if (phase2.empty() && !allow_empty_phase2) throw std::invalid_argument("train_two_phase: empty phase-2 set");
  TwoPhaseResult out;
  auto report = [](const TrainResult& r, std::span<const TrainPair> set) {
    PhaseReport rep;
    rep.n_pairs = set.size();
    rep.initial_loss = r.loss_curve.front();
    rep.final_loss = r.loss_curve.back();
    rep.steps = r.steps;
    rep.converged = r.converged;
    rep.win_rate = win_rate(r.params, set);
    return rep;
  };
  TrainResult first = train(std::move(params), phase1, config);
  out.phase1 = report(first, phase1);
  out.loss_curve = first.loss_curve;
  if (phase2.empty()) {
    out.params = std::move(first.params);
    return out;
  }
  TrainConfig second_cfg = config;
  second_cfg.seed = derive_key(config.seed, "phase2");
  TrainResult second = train(std::move(first.params), phase2, second_cfg);
  out.phase2 = report(second, phase2);
  out.loss_curve.insert(out.loss_curve.end(), second.loss_curve.begin(), second.loss_curve.end());
  out.params = std::move(second.params);
  return out;
}

std::vector<std::vector<double>> closed_form_policy(const ReferencePolicy& reference,
                                                    const std::vector<std::vector<double>>& utilities,
                                                    double beta) {
  if (!(beta > 0.0)) throw std::invalid_argument("closed_form_policy: beta must be positive");
  if (utilities.size() != reference.n_problems()) {
    throw std::invalid_argument("closed_form_policy: utility table does not match the reference");
  }
  std::vector<std::vector<double>> out(utilities.size());
  for (std::uint32_t p = 0; p < utilities.size(); ++p) {
    const auto ref = reference.log_probs(p);
    if (utilities[p].size() != ref.size()) throw std::invalid_argument("closed_form_policy: slot count mismatch");
    std::vector<double> z(ref.size());
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = ref[i] + utilities[p][i] / beta;
    const double lse = log_sum_exp(z);
    for (double& v : z) v = std::exp(v - lse);
    out[p] = std::move(z);
  }
  return out;
}

PolicyParams closed_form_params(const ReferencePolicy& reference,
                                const std::vector<std::vector<double>>& utilities, double beta) {
  PolicyParams params(reference, beta);
  if (utilities.size() != reference.n_problems()) {
    throw std::invalid_argument("closed_form_params: utility table does not match the reference");
  }
  for (std::uint32_t p = 0; p < utilities.size(); ++p) {
    auto z = params.logits(p);
    if (utilities[p].size() != z.size()) throw std::invalid_argument("closed_form_params: slot count mismatch");
    for (std::size_t i = 0; i < z.size(); ++i) z[i] += utilities[p][i] / beta;
    const double m = *std::max_element(z.begin(), z.end());
    for (double& v : z) v -= m;
  }
  return params;
}

double total_variation(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw std::invalid_argument("total_variation: size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += std::abs(p[i] - q[i]);
  return 0.5 * s;
}

AlignmentFit fit_reward_utility(const PolicyParams& params, const std::vector<std::vector<double>>& utilities,
                                const std::vector<std::vector<bool>>& mask) {
  if (utilities.size() != params.n_problems()) {
    throw std::invalid_argument("fit_reward_utility: utility table does not match the policy");
  }
  if (!mask.empty() && mask.size() != utilities.size()) throw std::invalid_argument("fit_reward_utility: bad mask");
  struct Group {
    std::vector<double> u, r;
  };
  std::vector<Group> groups(utilities.size());
  for (std::uint32_t p = 0; p < utilities.size(); ++p) {
    const auto r = implicit_rewards(params, p);
    if (utilities[p].size() != r.size()) throw std::invalid_argument("fit_reward_utility: slot count mismatch");
    for (std::size_t i = 0; i < r.size(); ++i) {
      if (!mask.empty() && !mask[p][i]) continue;
      groups[p].u.push_back(utilities[p][i]);
      groups[p].r.push_back(r[i]);
    }
  }
  auto mean = [](const std::vector<double>& v) {
    return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / v.size();
  };
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  AlignmentFit fit;
  for (const auto& g : groups) {
    const double mu = mean(g.u);
    const double mr = mean(g.r);
    for (std::size_t i = 0; i < g.u.size(); ++i) {
      sxx += (g.u[i] - mu) * (g.u[i] - mu);
      sxy += (g.u[i] - mu) * (g.r[i] - mr);
      syy += (g.r[i] - mr) * (g.r[i] - mr);
    }
    fit.n_points += g.u.size();
  }
  if (!(sxx > 0.0)) throw std::invalid_argument("fit_reward_utility: need at least two distinct utilities in a problem");
  fit.slope = sxy / sxx;
  double ss_res = 0.0;
  for (const auto& g : groups) {
    const double mu = mean(g.u);
    const double mr = mean(g.r);
    fit.intercepts.push_back(mr - fit.slope * mu);
    for (std::size_t i = 0; i < g.u.size(); ++i) {
      const double e = (g.r[i] - mr) - fit.slope * (g.u[i] - mu);
      ss_res += e * e;
    }
  }
  fit.r2 = syy > 0.0 ? std::clamp(1.0 - ss_res / syy, 0.0, 1.0) : 0.0;
  return fit;
}

std::vector<std::vector<bool>> trained_slots(const PolicyParams& params, std::span<const TrainPair> pairs) {
  std::vector<std::vector<bool>> mask(params.n_problems());
  for (std::uint32_t p = 0; p < params.n_problems(); ++p) mask[p].assign(params.slots(p), false);
  for (const auto& pr : pairs) {
    check_pair(params, pr);
    mask[pr.problem][pr.winner] = true;
    mask[pr.problem][pr.loser] = true;
  }
  return mask;
}

namespace {

std::string fixed_width(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%+.17e", x);
  return buf;
}

void write_row(std::ostringstream& out, std::string_view tag, std::uint32_t p, std::span<const double> v) {
  out << tag << '\t' << p << '\t';
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out << ',';
    out << fixed_width(v[i]);
  }
  out << '\n';
}

}  // namespace

void save_checkpoint(const PolicyParams& params, std::uint64_t seed, const std::filesystem::path& path) {
  std::ostringstream out;
  out << "# cudpo-checkpoint v1\tbeta=" << io::format_double(params.beta())
      << "\tproblems=" << params.n_problems() << "\tparams=" << params.n_params() << "\tseed=" << seed << '\n';
  for (std::uint32_t p = 0; p < params.n_problems(); ++p) write_row(out, "ref", p, params.reference().log_probs(p));
  for (std::uint32_t p = 0; p < params.n_problems(); ++p) write_row(out, "logit", p, params.logits(p));
  io::write_text(path, out.str());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const auto lines = io::read_lines(path);
  if (lines.empty() || !lines[0].starts_with("# cudpo-checkpoint v1")) {
    throw std::runtime_error("load_checkpoint: missing header in " + path.string());
  }
  double beta = 0.0;
  std::uint64_t problems = 0;
  std::uint64_t n_params = 0;
  Checkpoint ck;
  for (const auto& [k, v] : io::parse_header_fields(lines[0])) {
    if (k == "beta") beta = io::parse_double(v, k);
    else if (k == "problems") problems = io::parse_uint(v, k);
    else if (k == "params") n_params = io::parse_uint(v, k);
    else if (k == "seed") ck.seed = io::parse_uint(v, k);
    else throw std::runtime_error("load_checkpoint: unknown header key " + k);
  }
  std::vector<std::vector<double>> ref(problems);
  std::vector<std::vector<double>> logits(problems);
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (io::trim(lines[i]).empty()) continue;
    const auto f = io::split(lines[i], '\t');
    if (f.size() != 3) throw std::runtime_error("load_checkpoint: malformed row " + std::to_string(i + 1));
    const auto p = io::parse_uint(f[1], "problem");
    if (p >= problems) throw std::runtime_error("load_checkpoint: problem id out of range");
    auto& dst = f[0] == "ref" ? ref[p] : f[0] == "logit" ? logits[p] : throw std::runtime_error("load_checkpoint: bad row tag");
    for (auto tok : io::split(f[2], ',')) dst.push_back(io::parse_double(tok, "logit"));
  }
  for (auto& r : ref) {
    for (double& v : r) v = std::exp(v);
    // Stored log-probabilities were normalized; renormalize the rounding.
    const double s = std::accumulate(r.begin(), r.end(), 0.0);
    for (double& v : r) v /= s;
  }
  ck.params = PolicyParams(ReferencePolicy(std::move(ref)), beta);
  if (ck.params.n_params() != n_params) throw std::runtime_error("load_checkpoint: parameter count mismatch");
  for (std::uint32_t p = 0; p < problems; ++p) {
    auto z = ck.params.logits(p);
    if (logits[p].size() != z.size()) throw std::runtime_error("load_checkpoint: logit row size mismatch");
    std::copy(logits[p].begin(), logits[p].end(), z.begin());
  }
  ck.params.validate();
  return ck;
}

void save_loss_curve(std::span<const double> curve, const std::filesystem::path& path) {
  std::ostringstream out;
  out << "step,loss\n";
  for (std::size_t i = 0; i < curve.size(); ++i) out << i << ',' << io::format_double(curve[i]) << '\n';
  io::write_text(path, out.str());
}

FeaturizedPolicy::FeaturizedPolicy(std::uint32_t k_strategies, std::vector<std::vector<double>> features,
                                   double beta)
    : k_(k_strategies), dim_(0), beta_(beta), features_(std::move(features)) {
  if (k_ < 2) throw std::invalid_argument("FeaturizedPolicy: need at least two strategies");
  if (features_.empty()) throw std::invalid_argument("FeaturizedPolicy: no problems");
  if (!(beta_ > 0.0)) throw std::invalid_argument("FeaturizedPolicy: beta must be positive");
  dim_ = static_cast<std::uint32_t>(features_.front().size());
  for (const auto& f : features_) {
    if (f.size() != dim_) throw std::invalid_argument("FeaturizedPolicy: ragged features");
  }
  w_.assign(std::size_t{k_} * dim_, 0.0);
}

std::vector<double> FeaturizedPolicy::logits(std::uint32_t problem) const {
  if (problem >= features_.size()) throw std::out_of_range("FeaturizedPolicy: problem out of range");
  const auto& phi = features_[problem];
  std::vector<double> z(k_, 0.0);
  for (std::uint32_t s = 0; s < k_; ++s) {
    for (std::uint32_t d = 0; d < dim_; ++d) z[s] += w_[std::size_t{s} * dim_ + d] * phi[d];
  }
  return z;
}

double FeaturizedPolicy::implicit_reward(std::uint32_t problem, SlotIndex strategy) const {
  const auto z = logits(problem);
  if (strategy >= k_) throw std::out_of_range("FeaturizedPolicy: strategy out of range");
  return beta_ * (z[strategy] - log_sum_exp(z) + std::log(static_cast<double>(k_)));
}

double FeaturizedPolicy::loss(const TrainPair& pair) const {
  const double dr = implicit_reward(pair.problem, pair.winner) - implicit_reward(pair.problem, pair.loser);
  return pair_loss(dr, pair.target);
}

std::vector<double> FeaturizedPolicy::grad(const TrainPair& pair) const {
  const double dr = implicit_reward(pair.problem, pair.winner) - implicit_reward(pair.problem, pair.loser);
  const double slope = dpo_loss_slope(dr, pair.target);
  const auto& phi = features_[pair.problem];
  std::vector<double> g(w_.size(), 0.0);
  for (std::uint32_t d = 0; d < dim_; ++d) {
    g[std::size_t{pair.winner} * dim_ + d] += slope * beta_ * phi[d];
    g[std::size_t{pair.loser} * dim_ + d] -= slope * beta_ * phi[d];
  }
  return g;
}

}  // namespace cudpo
