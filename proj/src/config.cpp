#include "cudpo/config.hpp"

#include <algorithm>
#include <functional>
#include <limits>
#include <type_traits>
#include <sstream>
#include <stdexcept>

#include "cudpo/io.hpp"
#include "cudpo/rng.hpp"

namespace cudpo {

std::string_view to_string(TrainSchedule s) {
  switch (s) {
    case TrainSchedule::two_phase: return "two";
    case TrainSchedule::phase1: return "one";
    case TrainSchedule::all_pairs: return "all";
  }
  return "two";
}

TrainSchedule parse_train_schedule(std::string_view text) {
  if (text == "two" || text == "two_phase") return TrainSchedule::two_phase;
  if (text == "one" || text == "phase1") return TrainSchedule::phase1;
  if (text == "all" || text == "all_pairs") return TrainSchedule::all_pairs;
  throw std::invalid_argument("unknown train schedule: " + std::string(text));
}

namespace {

struct Field {
  std::string_view name;
  std::function<void(RunConfig&, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename Access>
Field real(std::string_view name, Access a) {
  return {name, [a](RunConfig& c, std::string_view v) { a(c) = io::parse_double(v, v); },
          [a](const RunConfig& c) { return io::format_double(a(c)); }};
}

template <typename Access>
Field count(std::string_view name, Access a) {
  return {name,
          [a, name](RunConfig& c, std::string_view v) {
            using T = std::remove_reference_t<decltype(a(c))>;
            const auto x = io::parse_uint(v, name);
            if (x > std::numeric_limits<T>::max()) throw std::invalid_argument(std::string(name) + " is too large");
            a(c) = static_cast<T>(x);
          },
          [a](const RunConfig& c) { return std::to_string(a(c)); }};
}

template <typename Access>
Field flag(std::string_view name, Access a) {
  return {name, [a, name](RunConfig& c, std::string_view v) { a(c) = io::parse_bool(v, name); },
          [a](const RunConfig& c) { return std::string(a(c) ? "true" : "false"); }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    f.push_back({"seed", [](RunConfig& c, std::string_view v) { c.seed = io::parse_uint(v, "seed"); },
                 [](const RunConfig& c) { return std::to_string(c.seed); }});
    f.push_back({"run_id",
                 [](RunConfig& c, std::string_view v) {
                   if (v.empty() || v.find_first_of("/\\ \t") != std::string_view::npos || v == "." || v == "..") {
                     throw std::invalid_argument("run_id must be a plain directory name");
                   }
                   c.run_id = std::string(v);
                 },
                 [](const RunConfig& c) { return c.run_id; }});

    f.push_back(count("world.n_problems", [](auto& c) -> auto& { return c.world.n_problems; }));
    f.push_back(count("world.k_strategies", [](auto& c) -> auto& { return c.world.k_strategies; }));
    f.push_back(real("world.target_best_utility_mean",
                     [](auto& c) -> auto& { return c.world.target_best_utility_mean; }));
    f.push_back(real("world.target_best_worst_margin_mean",
                     [](auto& c) -> auto& { return c.world.target_best_worst_margin_mean; }));
    f.push_back(real("world.target_range_mean", [](auto& c) -> auto& { return c.world.target_range_mean; }));
    f.push_back(count("world.samples_per_strategy",
                      [](auto& c) -> auto& { return c.sampling.samples_per_strategy; }));
    f.push_back(real("world.execution_sd", [](auto& c) -> auto& { return c.sampling.execution_sd; }));

    f.push_back(flag("judge.noiseless", [](auto& c) -> auto& { return c.noiseless; }));
    f.push_back(real("judge.noise_bound", [](auto& c) -> auto& { return c.judge.noise_bound; }));
    f.push_back(real("judge.exceed_prob", [](auto& c) -> auto& { return c.judge.exceed_prob; }));
    f.push_back(real("judge.stddev", [](auto& c) -> auto& { return c.judge.stddev; }));
    f.push_back(real("judge.weight_correctness", [](auto& c) -> auto& { return c.judge.weights[0]; }));
    f.push_back(real("judge.weight_efficiency", [](auto& c) -> auto& { return c.judge.weights[1]; }));
    f.push_back(real("judge.weight_coherence", [](auto& c) -> auto& { return c.judge.weights[2]; }));

    f.push_back(flag("refine.enabled", [](auto& c) -> auto& { return c.refine_enabled; }));
    f.push_back(real("refine.eligibility_threshold",
                     [](auto& c) -> auto& { return c.refine.eligibility_threshold; }));
    f.push_back(real("refine.success_threshold", [](auto& c) -> auto& { return c.refine.success_threshold; }));
    f.push_back(count("refine.max_rounds", [](auto& c) -> auto& { return c.refine.max_rounds; }));
    f.push_back(real("refine.stagnation_epsilon", [](auto& c) -> auto& { return c.refine.stagnation_epsilon; }));
    f.push_back(count("refine.stagnation_rounds", [](auto& c) -> auto& { return c.refine.stagnation_rounds; }));
    f.push_back(flag("refine.require_success", [](auto& c) -> auto& { return c.refine.require_success; }));
    f.push_back(real("refine.improve_mean", [](auto& c) -> auto& { return c.improvement.improve_mean; }));
    f.push_back(real("refine.improve_sd", [](auto& c) -> auto& { return c.improvement.improve_sd; }));
    f.push_back(real("refine.regress_prob", [](auto& c) -> auto& { return c.improvement.regress_prob; }));
    f.push_back(real("refine.regress_lo", [](auto& c) -> auto& { return c.improvement.regress_lo; }));
    f.push_back(real("refine.regress_hi", [](auto& c) -> auto& { return c.improvement.regress_hi; }));
    f.push_back(real("refine.stagnate_prob", [](auto& c) -> auto& { return c.improvement.stagnate_prob; }));
    f.push_back(real("refine.stagnate_half_width",
                     [](auto& c) -> auto& { return c.improvement.stagnate_half_width; }));
    f.push_back(real("refine.slow_prob", [](auto& c) -> auto& { return c.improvement.slow_prob; }));
    f.push_back(real("refine.slow_lo", [](auto& c) -> auto& { return c.improvement.slow_lo; }));
    f.push_back(real("refine.slow_hi", [](auto& c) -> auto& { return c.improvement.slow_hi; }));
    f.push_back(flag("refine.sticky", [](auto& c) -> auto& { return c.improvement.sticky; }));

    f.push_back(flag("pairs.phase2", [](auto& c) -> auto& { return c.phase2_enabled; }));
    f.push_back(count("pairs.pairs_per_problem", [](auto& c) -> auto& { return c.plan.pairs_per_problem; }));
    f.push_back(real("pairs.mix_strong", [](auto& c) -> auto& { return c.plan.target_mixture[0]; }));
    f.push_back(real("pairs.mix_medium", [](auto& c) -> auto& { return c.plan.target_mixture[1]; }));
    f.push_back(real("pairs.mix_weak", [](auto& c) -> auto& { return c.plan.target_mixture[2]; }));

    f.push_back({"train.schedule",
                 [](RunConfig& c, std::string_view v) { c.schedule = parse_train_schedule(v); },
                 [](const RunConfig& c) { return std::string(to_string(c.schedule)); }});
    f.push_back({"train.supervision",
                 [](RunConfig& c, std::string_view v) { c.supervision = parse_supervision(v); },
                 [](const RunConfig& c) { return std::string(to_string(c.supervision)); }});
    f.push_back(real("train.beta", [](auto& c) -> auto& { return c.beta; }));
    f.push_back(real("train.learning_rate", [](auto& c) -> auto& { return c.train.learning_rate; }));
    f.push_back(count("train.epochs", [](auto& c) -> auto& { return c.train.epochs; }));
    f.push_back({"train.batch_mode",
                 [](RunConfig& c, std::string_view v) {
                   if (v == "full") c.train.batch_mode = BatchMode::full;
                   else if (v == "minibatch") c.train.batch_mode = BatchMode::minibatch;
                   else throw std::invalid_argument("train.batch_mode must be full or minibatch");
                 },
                 [](const RunConfig& c) {
                   return std::string(c.train.batch_mode == BatchMode::full ? "full" : "minibatch");
                 }});
    f.push_back(count("train.batch_size", [](auto& c) -> auto& { return c.train.batch_size; }));
    f.push_back(real("train.lr_growth", [](auto& c) -> auto& { return c.train.lr_growth; }));
    f.push_back(count("train.max_halvings", [](auto& c) -> auto& { return c.train.max_halvings; }));
    f.push_back(real("train.grad_tolerance", [](auto& c) -> auto& { return c.train.grad_tolerance; }));

    f.push_back(count("eval.bt_samples", [](auto& c) -> auto& { return c.bt_samples; }));
    f.push_back(count("eval.bt_buckets", [](auto& c) -> auto& { return c.bt_buckets; }));
    f.push_back(flag("eval.scaling", [](auto& c) -> auto& { return c.scaling_enabled; }));
    f.push_back(count("eval.scaling_seeds", [](auto& c) -> auto& { return c.scaling_seeds; }));
    f.push_back(count("eval.scaling_epochs", [](auto& c) -> auto& { return c.scaling_epochs; }));
    f.push_back(count("eval.top_k", [](auto& c) -> auto& { return c.top_k; }));

    f.push_back(count("theory.coupon_k", [](auto& c) -> auto& { return c.coupon_k; }));
    f.push_back(count("theory.coupon_trials", [](auto& c) -> auto& { return c.coupon_trials; }));
    f.push_back(count("theory.efficiency_k_min", [](auto& c) -> auto& { return c.efficiency_k_min; }));
    f.push_back(count("theory.efficiency_k_max", [](auto& c) -> auto& { return c.efficiency_k_max; }));
    f.push_back(count("theory.efficiency_trials", [](auto& c) -> auto& { return c.efficiency_trials; }));
    f.push_back(count("theory.hoeffding_repetitions", [](auto& c) -> auto& { return c.hoeffding_repetitions; }));
    f.push_back(real("theory.epsilon", [](auto& c) -> auto& { return c.epsilon; }));
    f.push_back(real("theory.eta", [](auto& c) -> auto& { return c.eta; }));
    f.push_back(real("theory.vc_dim", [](auto& c) -> auto& { return c.vc_dim; }));
    f.push_back(flag("theory.conflict", [](auto& c) -> auto& { return c.conflict_enabled; }));
    f.push_back(count("theory.conflict_seeds", [](auto& c) -> auto& { return c.conflict_seeds; }));
    f.push_back(count("theory.conflict_budget", [](auto& c) -> auto& { return c.conflict_budget; }));
    return f;
  }();
  return table;
}

const Field& find_field(std::string_view key) {
  for (const auto& f : fields()) {
    if (f.name == key) return f;
  }
  throw std::invalid_argument("unknown config key: " + std::string(key));
}

}  // namespace

JudgeModel RunConfig::effective_judge() const {
  const auto key = derive_key(seed, "judge");
  if (noiseless) {
    JudgeModel j = JudgeModel::noiseless(key);
    j.weights = judge.weights;
    return j;
  }
  JudgeModel j = judge;
  j.seed = key;
  return j;
}

WorldConfig RunConfig::effective_world() const {
  WorldConfig w = world;
  w.seed = derive_key(seed, "world");
  return w;
}

ChainSampling RunConfig::effective_sampling() const {
  ChainSampling s = sampling;
  s.seed = derive_key(seed, "sampling");
  return s;
}

void RunConfig::validate() const {
  effective_world().validate();
  effective_judge().validate();
  if (sampling.samples_per_strategy == 0) throw std::invalid_argument("world.samples_per_strategy must be positive");
  if (!(sampling.execution_sd >= 0.0)) throw std::invalid_argument("world.execution_sd must be nonnegative");
  refine.validate();
  improvement.validate();
  plan.validate();
  train.validate();
  if (!(beta > 0.0)) throw std::invalid_argument("train.beta must be positive");
  if (bt_buckets < 20) throw std::invalid_argument("eval.bt_buckets must be at least 20");
  if (scaling_seeds == 0) throw std::invalid_argument("eval.scaling_seeds must be positive");
  if (scaling_epochs == 0) throw std::invalid_argument("eval.scaling_epochs must be positive");
  if (top_k == 0 || top_k > world.k_strategies) throw std::invalid_argument("eval.top_k must lie in [1, K]");
  if (coupon_k < 2 || coupon_trials == 0) throw std::invalid_argument("theory.coupon_k >= 2 and trials >= 1 required");
  if (efficiency_k_min < 2 || efficiency_k_max < efficiency_k_min || efficiency_k_max > 64) {
    throw std::invalid_argument("theory efficiency K range must satisfy 2 <= min <= max <= 64");
  }
  if (efficiency_trials == 0 || hoeffding_repetitions == 0) {
    throw std::invalid_argument("theory trial counts must be positive");
  }
  if (!(epsilon > 0.0 && epsilon < 1.0) || !(eta > 0.0 && eta < 1.0)) {
    throw std::invalid_argument("theory.epsilon and theory.eta must lie in (0,1)");
  }
  if (!(vc_dim >= 0.0)) throw std::invalid_argument("theory.vc_dim must be nonnegative");
  if (conflict_seeds == 0 || conflict_budget < 2) {
    throw std::invalid_argument("theory.conflict_seeds >= 1 and conflict_budget >= 2 required");
  }
}

void RunConfig::set(std::string_view key, std::string_view value) {
  find_field(key).set(*this, io::trim(value));
}

std::vector<std::pair<std::string, std::string>> RunConfig::snapshot() const {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& f : fields()) out.emplace_back(std::string(f.name), f.get(*this));
  return out;
}

std::string RunConfig::to_text() const {
  std::ostringstream out;
  std::string section;
  for (const auto& [key, value] : snapshot()) {
    const auto dot = key.find('.');
    if (dot == std::string::npos) {
      out << key << " = " << value << '\n';
      continue;
    }
    if (key.substr(0, dot) != section) {
      section = key.substr(0, dot);
      out << "\n[" << section << "]\n";
    }
    out << key.substr(dot + 1) << " = " << value << '\n';
  }
  return out.str();
}

RunConfig parse_run_config(std::string_view text, const RunConfig& base) {
  RunConfig cfg = base;
  std::string section;
  std::size_t line_no = 0;
  for (auto raw : io::split(text, '\n')) {
    ++line_no;
    const auto hash = raw.find('#');
    const auto line = io::trim(hash == std::string_view::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    const auto where = "config line " + std::to_string(line_no) + ": ";
    if (line.front() == '[') {
      if (line.back() != ']') throw std::invalid_argument(where + "unterminated section header");
      section = std::string(io::trim(line.substr(1, line.size() - 2)));
      static constexpr std::string_view known[] = {"world", "judge", "refine", "pairs", "train", "eval", "theory"};
      if (std::find(std::begin(known), std::end(known), section) == std::end(known)) {
        throw std::invalid_argument(where + "unknown section [" + section + "]");
      }
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw std::invalid_argument(where + "expected key = value");
    const auto key = std::string(io::trim(line.substr(0, eq)));
    const auto value = io::trim(line.substr(eq + 1));
    const auto full = key.find('.') != std::string::npos || section.empty() ? key : section + "." + key;
    try {
      cfg.set(full, value);
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument(where + e.what());
    }
  }
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path, const RunConfig& base) {
  return parse_run_config(io::read_text(path), base);
}

void apply_overrides(RunConfig& config, const std::vector<std::string>& overrides) {
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("override must be key=value: " + o);
    config.set(io::trim(std::string_view(o).substr(0, eq)), std::string_view(o).substr(eq + 1));
  }
}

}  // namespace cudpo
