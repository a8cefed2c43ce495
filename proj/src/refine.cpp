#include "cudpo/refine.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "cudpo/io.hpp"
#include "cudpo/parallel.hpp"
#include "cudpo/rng.hpp"

namespace cudpo {

std::string_view to_string(StepBranch b) {
  switch (b) {
    case StepBranch::improve: return "improve";
    case StepBranch::regress: return "regress";
    case StepBranch::stagnate: return "stagnate";
    case StepBranch::slow: return "slow";
  }
  return "?";
}

std::string_view to_string(Termination t) {
  switch (t) {
    case Termination::success: return "success";
    case Termination::stagnation: return "stagnation";
    case Termination::max_rounds: return "max_rounds";
  }
  return "?";
}

void RefinePolicy::validate() const {
  if (!(eligibility_threshold > 0.0 && eligibility_threshold < success_threshold &&
        success_threshold <= 1.0)) {
    throw std::invalid_argument("RefinePolicy: need 0 < tau < success threshold <= 1");
  }
  if (max_rounds == 0) throw std::invalid_argument("RefinePolicy: max_rounds must be at least 1");
  if (!(stagnation_epsilon > 0.0)) throw std::invalid_argument("RefinePolicy: stagnation epsilon must be positive");
  if (stagnation_rounds == 0) throw std::invalid_argument("RefinePolicy: stagnation_rounds must be positive");
}

ImprovementModel ImprovementModel::constant(double step) {
  ImprovementModel m;
  m.fixed_step = step;
  return m;
}

void ImprovementModel::validate() const {
  auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (!prob(regress_prob) || !prob(stagnate_prob) || !prob(slow_prob) ||
      regress_prob + stagnate_prob + slow_prob > 1.0) {
    throw std::invalid_argument("ImprovementModel: branch probabilities must lie in [0,1] and sum <= 1");
  }
  if (!(improve_sd >= 0.0)) throw std::invalid_argument("ImprovementModel: improve_sd must be nonnegative");
  if (!(regress_lo >= 0.0 && regress_hi >= regress_lo)) {
    throw std::invalid_argument("ImprovementModel: bad regression interval");
  }
  if (!(stagnate_half_width >= 0.0)) throw std::invalid_argument("ImprovementModel: bad stagnation width");
  if (!(slow_lo >= 0.0 && slow_hi >= slow_lo)) throw std::invalid_argument("ImprovementModel: bad slow interval");
  if (fixed_step && !std::isfinite(*fixed_step)) throw std::invalid_argument("ImprovementModel: fixed step not finite");
}

bool eligible(const ChainRecord& chain, const RefinePolicy& policy) noexcept {
  return chain.utility < policy.eligibility_threshold;
}

namespace {

StepBranch draw_branch(const ImprovementModel& model, Rng& rng) {
  const double u = rng.uniform();
  if (u < model.regress_prob) return StepBranch::regress;
  if (u < model.regress_prob + model.stagnate_prob) return StepBranch::stagnate;
  if (u < model.regress_prob + model.stagnate_prob + model.slow_prob) return StepBranch::slow;
  return StepBranch::improve;
}

}  // namespace

ChainRecord refine_step(const World& world, const ChainRecord& chain, const ImprovementModel& model,
                        std::uint64_t draw, std::optional<StepBranch> branch) {
  if (chain.problem_id >= world.n_problems() || chain.strategy.index >= world.k_strategies()) {
    throw std::out_of_range("refine_step: chain does not belong to the world");
  }
  Rng rng(derive_key(draw, "refine-step", {chain.problem_id, chain.strategy.index, chain.sample,
                                           chain.generation}));
  double delta = 0.0;
  if (model.fixed_step) {
    delta = *model.fixed_step;
  } else {
    const StepBranch b = branch ? *branch : draw_branch(model, rng);
    switch (b) {
      case StepBranch::improve:
        delta = rng.truncated_normal(model.improve_mean, model.improve_sd,
                                     model.improve_mean - 2.0 * model.improve_sd,
                                     model.improve_mean + 2.0 * model.improve_sd);
        break;
      case StepBranch::regress:
        delta = -rng.uniform(model.regress_lo, model.regress_hi);
        break;
      case StepBranch::stagnate:
        delta = rng.uniform(-model.stagnate_half_width, model.stagnate_half_width);
        break;
      case StepBranch::slow:
        delta = rng.uniform(model.slow_lo, model.slow_hi);
        break;
    }
  }
  ChainRecord next = chain;
  next.chain_id = kNoChain;
  next.parent_id = chain.chain_id;
  next.generation = chain.generation + 1;
  next.source = ChainSource::refined;
  next.utility = std::clamp(chain.utility + delta, 0.0, 1.0);
  return next;
}

RefinementTrace refine_loop(const World& world, const ChainRecord& chain, const RefinePolicy& policy,
                            const ImprovementModel& model, std::uint64_t draw) {
  policy.validate();
  if (!eligible(chain, policy)) throw std::invalid_argument("refine_loop: chain is not eligible");
  const std::uint64_t trace_key =
      derive_key(draw, "refine-trace", {chain.problem_id, chain.strategy.index, chain.sample});
  std::optional<StepBranch> sticky;
  if (model.sticky && !model.fixed_step) {
    Rng rng(derive_key(trace_key, "branch"));
    sticky = draw_branch(model, rng);
  }

  RefinementTrace trace;
  trace.lineage.push_back(chain);
  std::uint32_t flat_rounds = 0;
  trace.termination = Termination::max_rounds;
  for (std::uint32_t t = 0; t < policy.max_rounds; ++t) {
    const ChainRecord& prev = trace.lineage.back();
    ChainRecord next = refine_step(world, prev, model, trace_key, sticky);
    const double change = std::abs(next.utility - prev.utility);
    trace.lineage.push_back(next);
    flat_rounds = change < policy.stagnation_epsilon ? flat_rounds + 1 : 0;
    if (trace.lineage.back().utility >= policy.success_threshold) {
      trace.termination = Termination::success;
      break;
    }
    if (flat_rounds >= policy.stagnation_rounds) {
      trace.termination = Termination::stagnation;
      break;
    }
  }
  trace.retained = trace.final_utility() > trace.initial_utility() &&
                   (!policy.require_success || trace.termination == Termination::success);
  return trace;
}

RefineResult refine_corpus(const World& world, std::span<const ChainRecord> chains,
                           const RefinePolicy& policy, const ImprovementModel& model,
                           std::uint64_t draw, unsigned jobs) {
  policy.validate();
  model.validate();
  std::vector<std::size_t> candidates;
  ChainId next_id = 0;
  for (std::size_t i = 0; i < chains.size(); ++i) {
    next_id = std::max<ChainId>(next_id, chains[i].chain_id + 1);
    if (chains[i].generation == 0 && eligible(chains[i], policy)) candidates.push_back(i);
  }

  RefineResult result;
  result.traces.resize(candidates.size());
  parallel_for(candidates.size(), jobs, [&](std::size_t i) {
    result.traces[i] = refine_loop(world, chains[candidates[i]], policy, model, draw);
  });

  RefineSummary& s = result.summary;
  s.n_chains = chains.size();
  s.n_eligible = candidates.size();
  std::size_t rounds = 0;
  std::size_t within_three = 0;
  std::size_t concentrated = 0;
  for (auto& trace : result.traces) {
    rounds += trace.rounds();
    switch (trace.termination) {
      case Termination::success:
        ++s.n_success;
        if (trace.rounds() <= 3) ++within_three;
        if (trace.final_utility() >= policy.success_threshold && trace.final_utility() <= 1.0) ++concentrated;
        break;
      case Termination::stagnation: ++s.n_stagnation; break;
      case Termination::max_rounds: ++s.n_max_rounds; break;
    }
    if (!trace.retained) continue;
    ++s.n_retained;
    for (std::size_t g = 1; g < trace.lineage.size(); ++g) {
      trace.lineage[g].chain_id = next_id++;
      trace.lineage[g].parent_id = trace.lineage[g - 1].chain_id;
      result.refined.push_back(trace.lineage[g]);
    }
  }
  s.n_refined_chains = result.refined.size();
  if (s.n_chains > 0) s.eligibility_rate = static_cast<double>(s.n_eligible) / s.n_chains;
  if (s.n_eligible > 0) {
    const auto n = static_cast<double>(s.n_eligible);
    s.success_rate = s.n_success / n;
    s.success_within_three_rate = within_three / n;
    s.mean_rounds = rounds / n;
  }
  if (s.n_success > 0) s.success_concentration = static_cast<double>(concentrated) / s.n_success;
  return result;
}

void save_traces(std::span<const RefinementTrace> traces, const std::filesystem::path& path) {
  std::ostringstream out;
  out << "trace\tchain_id\tparent_id\tproblem_id\tstrategy\tsample\tgeneration\tutility\ttermination\tretained\n";
  for (std::size_t i = 0; i < traces.size(); ++i) {
    const auto& t = traces[i];
    for (const auto& c : t.lineage) {
      out << i << '\t';
      if (c.chain_id == kNoChain) out << '-';
      else out << c.chain_id;
      out << '\t';
      if (c.parent_id == kNoChain) out << '-';
      else out << c.parent_id;
      out << '\t' << c.problem_id << '\t' << strategy_label(c.strategy) << '\t' << c.sample << '\t'
          << c.generation << '\t' << io::format_double(c.utility) << '\t' << to_string(t.termination)
          << '\t' << (t.retained ? "true" : "false") << '\n';
    }
  }
  io::write_text(path, out.str());
}

}  // namespace cudpo
