#include "cudpo/chains.hpp"

#include <algorithm>
#include <sstream>
#include <stdexcept>

#include "cudpo/io.hpp"
#include "cudpo/parallel.hpp"
#include "cudpo/rng.hpp"

namespace cudpo {

std::string_view to_string(ChainSource s) {
  return s == ChainSource::original ? "original" : "refined";
}

void ChainRecord::validate() const {
  if ((generation == 0) != (source == ChainSource::original)) {
    throw std::invalid_argument("ChainRecord: generation 0 must be exactly the original chains");
  }
  if (!(utility >= 0.0 && utility <= 1.0)) throw std::invalid_argument("ChainRecord: utility outside [0,1]");
}

std::vector<ChainRecord> sample_original_chains(const World& world, const ChainSampling& sampling,
                                                unsigned jobs) {
  if (sampling.samples_per_strategy == 0) {
    throw std::invalid_argument("sample_original_chains: samples_per_strategy must be positive");
  }
  if (!(sampling.execution_sd >= 0.0)) {
    throw std::invalid_argument("sample_original_chains: execution_sd must be nonnegative");
  }
  const std::uint32_t k = world.k_strategies();
  const std::uint32_t m = sampling.samples_per_strategy;
  const std::size_t per_problem = std::size_t{k} * m;
  std::vector<ChainRecord> chains(std::size_t{world.n_problems()} * per_problem);
  parallel_for(world.n_problems(), jobs, [&](std::size_t p) {
    const auto problem = static_cast<std::uint32_t>(p);
    for (std::uint32_t smp = 0; smp < m; ++smp) {
      for (std::uint32_t s = 0; s < k; ++s) {
        const StrategyId sid{s};
        Rng rng(derive_key(sampling.seed, "execution", {problem, s, smp}));
        const double quality =
            reflect_unit(world.utility(problem, sid) + sampling.execution_sd * rng.normal());
        ChainRecord c;
        c.chain_id = static_cast<ChainId>(p * per_problem + std::size_t{smp} * k + s);
        c.problem_id = problem;
        c.strategy = sid;
        c.sample = smp;
        c.utility = aggregate_utility(judge_utility(world, quality, problem, sid, smp)).value;
        chains[c.chain_id] = c;
      }
    }
  });
  return chains;
}

ChainIndex::ChainIndex(std::span<const ChainRecord> chains) : chains_(chains.begin(), chains.end()) {
  std::sort(chains_.begin(), chains_.end(),
            [](const ChainRecord& a, const ChainRecord& b) { return a.chain_id < b.chain_id; });
  ChainId max_id = 0;
  std::uint32_t max_problem = 0;
  for (const auto& c : chains_) {
    max_id = std::max(max_id, c.chain_id);
    max_problem = std::max(max_problem, c.problem_id);
  }
  constexpr auto npos = static_cast<std::size_t>(-1);
  position_.assign(chains_.empty() ? 0 : std::size_t{max_id} + 1, npos);
  slot_.assign(position_.size(), 0);
  by_problem_.resize(chains_.empty() ? 0 : std::size_t{max_problem} + 1);
  for (std::size_t i = 0; i < chains_.size(); ++i) {
    const auto& c = chains_[i];
    if (position_[c.chain_id] != npos) throw std::invalid_argument("ChainIndex: duplicate chain id");
    position_[c.chain_id] = i;
    slot_[c.chain_id] = static_cast<std::uint32_t>(by_problem_[c.problem_id].size());
    by_problem_[c.problem_id].push_back(c.chain_id);
  }
}

std::span<const ChainId> ChainIndex::problem_chains(std::uint32_t problem) const {
  if (problem >= by_problem_.size()) return {};
  return by_problem_[problem];
}

bool ChainIndex::contains(ChainId id) const noexcept {
  return id < position_.size() && position_[id] != static_cast<std::size_t>(-1);
}

const ChainRecord& ChainIndex::chain(ChainId id) const {
  if (!contains(id)) throw std::out_of_range("ChainIndex: unknown chain id " + std::to_string(id));
  return chains_[position_[id]];
}

std::uint32_t ChainIndex::slot(ChainId id) const {
  if (!contains(id)) throw std::out_of_range("ChainIndex: unknown chain id " + std::to_string(id));
  return slot_[id];
}

std::vector<std::uint32_t> ChainIndex::slot_counts() const {
  std::vector<std::uint32_t> out;
  out.reserve(by_problem_.size());
  for (const auto& v : by_problem_) out.push_back(static_cast<std::uint32_t>(v.size()));
  return out;
}

std::vector<std::vector<double>> ChainIndex::slot_utilities() const {
  std::vector<std::vector<double>> out(by_problem_.size());
  for (std::size_t p = 0; p < by_problem_.size(); ++p) {
    for (ChainId id : by_problem_[p]) out[p].push_back(chain(id).utility);
  }
  return out;
}

std::optional<std::uint32_t> ChainIndex::primary_slot(std::uint32_t problem, StrategyId s) const {
  for (ChainId id : problem_chains(problem)) {
    const auto& c = chain(id);
    if (c.strategy == s && c.sample == 0 && c.generation == 0) return slot_[id];
  }
  return std::nullopt;
}

std::vector<ChainRecord> primary_chains(std::span<const ChainRecord> chains, std::uint32_t problem) {
  std::vector<ChainRecord> out;
  for (const auto& c : chains) {
    if (c.problem_id == problem && c.generation == 0 && c.sample == 0) out.push_back(c);
  }
  std::sort(out.begin(), out.end(), [](const ChainRecord& a, const ChainRecord& b) {
    return a.strategy.index < b.strategy.index;
  });
  return out;
}

void save_chains(std::span<const ChainRecord> chains, const std::filesystem::path& path) {
  std::ostringstream out;
  out << "chain_id\tproblem_id\tstrategy\tsample\tgeneration\tsource\tparent_id\tutility\n";
  for (const auto& c : chains) {
    out << c.chain_id << '\t' << c.problem_id << '\t' << strategy_label(c.strategy) << '\t'
        << c.sample << '\t' << c.generation << '\t' << to_string(c.source) << '\t';
    if (c.parent_id == kNoChain) out << '-';
    else out << c.parent_id;
    out << '\t' << io::format_double(c.utility) << '\n';
  }
  io::write_text(path, out.str());
}

std::vector<ChainRecord> load_chains(const std::filesystem::path& path) {
  const auto lines = io::read_lines(path);
  if (lines.empty() || !lines[0].starts_with("chain_id\t")) {
    throw std::runtime_error("load_chains: missing header in " + path.string());
  }
  std::vector<ChainRecord> out;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (io::trim(lines[i]).empty()) continue;
    const auto f = io::split(lines[i], '\t');
    if (f.size() != 8) throw std::runtime_error("load_chains: malformed row " + std::to_string(i + 1));
    ChainRecord c;
    c.chain_id = static_cast<ChainId>(io::parse_uint(f[0], "chain_id"));
    c.problem_id = static_cast<std::uint32_t>(io::parse_uint(f[1], "problem_id"));
    c.strategy = parse_strategy(f[2]);
    c.sample = static_cast<std::uint32_t>(io::parse_uint(f[3], "sample"));
    c.generation = static_cast<std::uint32_t>(io::parse_uint(f[4], "generation"));
    if (f[5] == "original") c.source = ChainSource::original;
    else if (f[5] == "refined") c.source = ChainSource::refined;
    else throw std::runtime_error("load_chains: bad source " + std::string(f[5]));
    c.parent_id = f[6] == "-" ? kNoChain : static_cast<ChainId>(io::parse_uint(f[6], "parent_id"));
    c.utility = io::parse_double(f[7], "utility");
    c.validate();
    out.push_back(c);
  }
  return out;
}

}  // namespace cudpo
