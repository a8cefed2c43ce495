#include "cudpo/world.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "cudpo/io.hpp"
#include "cudpo/rng.hpp"

namespace cudpo {

namespace {

constexpr double kUtilityFloor = 0.05;
constexpr double kUtilityCeil = 0.95;
constexpr double kBestSpread = 0.08;
constexpr double kRangeMax = 0.889;
constexpr double kRangeShapeA = 2.0;
constexpr int kCalibrationPasses = 4;

struct ProblemDraws {
  double best_dev;
  double range_x;
  std::vector<double> shape;
};

ProblemDraws draw_problem(std::uint64_t seed, std::uint32_t problem, std::uint32_t k,
                          double range_shape_b) {
  Rng rng(derive_key(seed, "world", {problem}));
  ProblemDraws d;
  d.best_dev = rng.normal(0.0, kBestSpread);
  d.range_x = rng.beta(kRangeShapeA, range_shape_b);
  d.shape.resize(k);
  for (auto& z : d.shape) {
    // Two-component Beta mixture: a low-skewed and a high-skewed mode.
    z = rng.bernoulli(0.5) ? rng.beta(2.0, 5.0) : rng.beta(5.0, 2.0);
  }
  return d;
}

void place_problem(const ProblemDraws& d, double best_center, double range_min, double range_span,
                   std::span<double> out) {
  const double best = std::clamp(best_center + d.best_dev, 0.3, kUtilityCeil);
  double range = std::min(range_min + range_span * d.range_x, kUtilityCeil - kUtilityFloor);
  range = std::min(range, best - kUtilityFloor);
  const auto [lo_it, hi_it] = std::minmax_element(d.shape.begin(), d.shape.end());
  const double lo = *lo_it;
  const double hi = *hi_it;
  const double span = hi - lo;
  for (std::size_t k = 0; k < out.size(); ++k) {
    const double rel = span > 0.0 ? (hi - d.shape[k]) / span : (k == 0 ? 0.0 : 1.0);
    out[k] = std::clamp(best - range * rel, kUtilityFloor, kUtilityCeil);
  }
  // Degenerate shape draws (all equal) still need a positive range.
  out[static_cast<std::size_t>(hi_it - d.shape.begin())] = best;
}

}  // namespace

void WorldConfig::validate() const {
  if (n_problems == 0) throw std::invalid_argument("WorldConfig: n_problems must be positive");
  if (k_strategies < 2) throw std::invalid_argument("WorldConfig: k_strategies must be at least 2");
  for (double t : {target_best_utility_mean, target_best_worst_margin_mean, target_range_mean}) {
    if (!(t > 0.0 && t < 1.0)) throw std::invalid_argument("WorldConfig: targets must lie in (0,1)");
  }
  if (target_best_worst_margin_mean > target_range_mean + 0.03) {
    throw std::invalid_argument("WorldConfig: margin target exceeds range target");
  }
  if (target_range_mean >= target_best_utility_mean) {
    throw std::invalid_argument("WorldConfig: range target must be below best-utility target");
  }
}

JudgeModel JudgeModel::noiseless(std::uint64_t seed) {
  JudgeModel j;
  j.noise_bound = std::numeric_limits<double>::min();
  j.stddev = 0.0;
  j.seed = seed;
  return j;
}

void JudgeModel::validate() const {
  if (!(noise_bound > 0.0)) throw std::invalid_argument("JudgeModel: noise_bound must be positive");
  if (!(exceed_prob > 0.0 && exceed_prob < 1.0)) {
    throw std::invalid_argument("JudgeModel: exceed_prob must lie in (0,1)");
  }
  if (!(stddev >= 0.0) || stddev > noise_bound) {
    throw std::invalid_argument("JudgeModel: stddev must lie in [0, noise_bound]");
  }
  // Reuses the ComponentScores weight checks.
  ComponentScores probe(0.0, 0.0, 0.0, weights);
  (void)probe;
}

World::World(WorldConfig config, JudgeModel judge, std::vector<double> utilities)
    : config_(config), judge_(judge), utilities_(std::move(utilities)) {
  config_.validate();
  judge_.validate();
  if (utilities_.size() != std::size_t{config_.n_problems} * config_.k_strategies) {
    throw std::invalid_argument("World: utility table has wrong size");
  }
  for (std::uint32_t p = 0; p < config_.n_problems; ++p) {
    const auto u = problem(p);
    for (double v : u) {
      if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("World: utility outside [0,1]");
    }
    const auto [lo, hi] = std::minmax_element(u.begin(), u.end());
    if (!(*hi - *lo > 0.0)) throw std::invalid_argument("World: problem with zero utility range");
  }
}

double World::utility(std::uint32_t problem, StrategyId s) const {
  if (problem >= config_.n_problems || s.index >= config_.k_strategies) {
    throw std::out_of_range("World: problem or strategy id out of range");
  }
  return utilities_[std::size_t{problem} * config_.k_strategies + s.index];
}

std::span<const double> World::problem(std::uint32_t problem) const {
  if (problem >= config_.n_problems) throw std::out_of_range("World: problem id out of range");
  return std::span<const double>(utilities_).subspan(std::size_t{problem} * config_.k_strategies,
                                                     config_.k_strategies);
}

World generate_world(const WorldConfig& config, const JudgeModel& judge) {
  config.validate();
  const std::uint32_t n = config.n_problems;
  const std::uint32_t k = config.k_strategies;

  const double range_min = std::min(0.05, 0.5 * config.target_range_mean);
  const double range_span = kRangeMax - range_min;
  const double shape_mean = (config.target_range_mean - range_min) / range_span;
  const double shape_b = kRangeShapeA * (1.0 - shape_mean) / shape_mean;

  std::vector<ProblemDraws> draws;
  draws.reserve(n);
  for (std::uint32_t p = 0; p < n; ++p) draws.push_back(draw_problem(config.seed, p, k, shape_b));

  // Common random numbers across passes: only the two location/scale knobs
  // move, so the realized means converge in a few fixed-point steps.
  double best_center = config.target_best_utility_mean;
  double span_scale = 1.0;
  std::vector<double> utilities(std::size_t{n} * k);
  for (int pass = 0; pass < kCalibrationPasses; ++pass) {
    double sum_best = 0.0;
    double sum_range = 0.0;
    for (std::uint32_t p = 0; p < n; ++p) {
      std::span<double> out(utilities.data() + std::size_t{p} * k, k);
      place_problem(draws[p], best_center, range_min, range_span * span_scale, out);
      const auto [lo, hi] = std::minmax_element(out.begin(), out.end());
      sum_best += *hi;
      sum_range += *hi - *lo;
    }
    const double best = sum_best / n;
    const double range = sum_range / n;
    best_center += config.target_best_utility_mean - best;
    if (range > range_min) span_scale *= (config.target_range_mean - range_min) / (range - range_min);
  }
  return World(config, judge, std::move(utilities));
}

WorldStats world_stats(const World& world) {
  WorldStats s;
  const std::uint32_t n = world.n_problems();
  s.min_range = std::numeric_limits<double>::infinity();
  s.max_range = 0.0;
  double total = 0.0;
  std::size_t above = 0;
  for (std::uint32_t p = 0; p < n; ++p) {
    const auto u = world.problem(p);
    const auto [lo, hi] = std::minmax_element(u.begin(), u.end());
    const double r = *hi - *lo;
    s.mean_best += *hi;
    s.mean_worst += *lo;
    s.mean_range += r;
    s.min_range = std::min(s.min_range, r);
    s.max_range = std::max(s.max_range, r);
    if (r > 0.3) ++above;
    for (double v : u) total += v;
  }
  s.mean_best /= n;
  s.mean_worst /= n;
  s.mean_range /= n;
  s.mean_best_worst_margin = s.mean_range;
  s.fraction_range_above_0_3 = static_cast<double>(above) / n;
  s.mean_utility = total / (static_cast<double>(n) * world.k_strategies());
  return s;
}

double reflect_unit(double x) noexcept {
  if (x < 0.0) x = -x;
  if (x > 1.0) x = 2.0 - x;
  return std::clamp(x, 0.0, 1.0);
}

double judge_noise(const JudgeModel& judge, std::uint32_t problem, StrategyId strategy,
                   std::uint64_t draw) noexcept {
  Rng rng(derive_key(judge.seed, {problem, strategy.index, draw}));
  if (rng.bernoulli(judge.exceed_prob)) {
    return rng.uniform(-2.0 * judge.noise_bound, 2.0 * judge.noise_bound);
  }
  return rng.truncated_normal(0.0, judge.stddev, -judge.noise_bound, judge.noise_bound);
}

ComponentScores judge_utility(const World& world, double true_utility, std::uint32_t problem,
                              StrategyId strategy, std::uint64_t draw) {
  if (problem >= world.n_problems() || strategy.index >= world.k_strategies()) {
    throw std::out_of_range("judge: problem or strategy id out of range");
  }
  const JudgeModel& judge = world.judge();
  const double target = reflect_unit(true_utility + judge_noise(judge, problem, strategy, draw));

  // Split the noisy aggregate into component scores: draw the efficiency and
  // coherence contribution inside its feasible interval, then back-solve
  // correctness so that (1/3) sum w_c s_c == target.
  const ComponentScores unit(1.0, 1.0, 1.0, judge.weights);
  const auto& w = unit.weights();
  Rng rng(derive_key(judge.seed, "components", {problem, strategy.index, draw}));
  const double total = 3.0 * target;
  const double rest_lo = std::max(0.0, total - w[0]);
  const double rest_hi = std::min(w[1] + w[2], total);
  const double rest = rest_lo + (rest_hi - rest_lo) * rng.uniform();
  double s2 = 0.0;
  double s3 = 0.0;
  if (w[1] > 0.0 && w[2] > 0.0) {
    const double lo2 = std::max(0.0, (rest - w[2]) / w[1]);
    const double hi2 = std::min(1.0, rest / w[1]);
    s2 = lo2 + (hi2 - lo2) * rng.uniform();
    s3 = std::clamp((rest - w[1] * s2) / w[2], 0.0, 1.0);
  } else if (w[1] > 0.0) {
    s2 = std::clamp(rest / w[1], 0.0, 1.0);
    s3 = rng.uniform();
  } else if (w[2] > 0.0) {
    s3 = std::clamp(rest / w[2], 0.0, 1.0);
    s2 = rng.uniform();
  }
  const double s1 = std::clamp((total - w[1] * s2 - w[2] * s3) / w[0], 0.0, 1.0);
  return ComponentScores(s1, s2, s3, judge.weights);
}

ComponentScores judge_scores(const World& world, std::uint32_t problem, StrategyId strategy,
                             std::uint64_t draw) {
  return judge_utility(world, world.utility(problem, strategy), problem, strategy, draw);
}

double mean_of_draws(const World& world, std::uint32_t problem, StrategyId strategy,
                     std::uint32_t m) {
  if (m == 0) throw std::invalid_argument("mean_of_draws: m must be at least 1");
  double sum = 0.0;
  for (std::uint32_t d = 0; d < m; ++d) {
    sum += aggregate_utility(judge_scores(world, problem, strategy, d)).value;
  }
  return sum / m;
}

void save_world(const World& world, const std::filesystem::path& path) {
  const auto& c = world.config();
  const auto& j = world.judge();
  std::ostringstream out;
  out << "# cudpo-world v1"
      << "\tn_problems=" << c.n_problems << "\tk_strategies=" << c.k_strategies
      << "\tseed=" << c.seed
      << "\ttarget_best_utility_mean=" << io::format_double(c.target_best_utility_mean)
      << "\ttarget_best_worst_margin_mean=" << io::format_double(c.target_best_worst_margin_mean)
      << "\ttarget_range_mean=" << io::format_double(c.target_range_mean)
      << "\tnoise_bound=" << io::format_double(j.noise_bound)
      << "\texceed_prob=" << io::format_double(j.exceed_prob)
      << "\tstddev=" << io::format_double(j.stddev) << "\tjudge_seed=" << j.seed
      << "\tweights=" << io::format_double(j.weights[0]) << ',' << io::format_double(j.weights[1])
      << ',' << io::format_double(j.weights[2]) << '\n';
  for (std::uint32_t p = 0; p < world.n_problems(); ++p) {
    out << p << '\t';
    const auto u = world.problem(p);
    for (std::size_t k = 0; k < u.size(); ++k) {
      if (k) out << ',';
      out << io::format_double(u[k]);
    }
    out << '\n';
  }
  io::write_text(path, out.str());
}

World load_world(const std::filesystem::path& path) {
  const auto lines = io::read_lines(path);
  if (lines.empty() || !lines[0].starts_with("# cudpo-world v1")) {
    throw std::runtime_error("load_world: missing world header in " + path.string());
  }
  WorldConfig c;
  JudgeModel j;
  for (const auto& [key, value] : io::parse_header_fields(lines[0])) {
    if (key == "n_problems") c.n_problems = static_cast<std::uint32_t>(io::parse_uint(value, key));
    else if (key == "k_strategies") c.k_strategies = static_cast<std::uint32_t>(io::parse_uint(value, key));
    else if (key == "seed") c.seed = io::parse_uint(value, key);
    else if (key == "target_best_utility_mean") c.target_best_utility_mean = io::parse_double(value, key);
    else if (key == "target_best_worst_margin_mean") c.target_best_worst_margin_mean = io::parse_double(value, key);
    else if (key == "target_range_mean") c.target_range_mean = io::parse_double(value, key);
    else if (key == "noise_bound") j.noise_bound = io::parse_double(value, key);
    else if (key == "exceed_prob") j.exceed_prob = io::parse_double(value, key);
    else if (key == "stddev") j.stddev = io::parse_double(value, key);
    else if (key == "judge_seed") j.seed = io::parse_uint(value, key);
    else if (key == "weights") {
      const auto parts = io::split(value, ',');
      if (parts.size() != 3) throw std::runtime_error("load_world: weights need 3 values");
      for (int i = 0; i < 3; ++i) j.weights[i] = io::parse_double(parts[i], "weight");
    } else {
      throw std::runtime_error("load_world: unknown header key " + key);
    }
  }
  std::vector<double> utilities(std::size_t{c.n_problems} * c.k_strategies);
  std::vector<bool> seen(c.n_problems, false);
  std::size_t rows = 0;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (io::trim(lines[i]).empty()) continue;
    const auto cols = io::split(lines[i], '\t');
    if (cols.size() != 2) throw std::runtime_error("load_world: malformed row " + std::to_string(i + 1));
    const auto p = io::parse_uint(cols[0], "problem_id");
    if (p >= c.n_problems || seen[p]) throw std::runtime_error("load_world: bad or duplicate problem id");
    seen[p] = true;
    const auto vals = io::split(cols[1], ',');
    if (vals.size() != c.k_strategies) throw std::runtime_error("load_world: wrong utility count");
    for (std::uint32_t k = 0; k < c.k_strategies; ++k) {
      utilities[p * c.k_strategies + k] = io::parse_double(vals[k], "utility");
    }
    ++rows;
  }
  if (rows != c.n_problems) throw std::runtime_error("load_world: missing problem rows");
  return World(c, j, std::move(utilities));
}

}  // namespace cudpo
