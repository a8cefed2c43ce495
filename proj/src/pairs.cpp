#include "cudpo/pairs.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "cudpo/io.hpp"
#include "cudpo/parallel.hpp"
#include "cudpo/rng.hpp"

namespace cudpo {

std::string_view to_string(Phase p) {
  switch (p) {
    case Phase::phase1: return "phase1";
    case Phase::phase2: return "phase2";
    case Phase::all_pairs: return "all_pairs";
  }
  return "?";
}

std::string_view to_string(SourceCombo s) {
  switch (s) {
    case SourceCombo::original_original: return "original_original";
    case SourceCombo::hybrid: return "hybrid";
    case SourceCombo::refined_refined: return "refined_refined";
  }
  return "?";
}

Phase parse_phase(std::string_view text) {
  for (Phase p : {Phase::phase1, Phase::phase2, Phase::all_pairs}) {
    if (to_string(p) == text) return p;
  }
  throw std::invalid_argument("unknown phase: " + std::string(text));
}

SourceCombo parse_source_combo(std::string_view text) {
  for (SourceCombo s : {SourceCombo::original_original, SourceCombo::hybrid, SourceCombo::refined_refined}) {
    if (to_string(s) == text) return s;
  }
  throw std::invalid_argument("unknown source combo: " + std::string(text));
}

std::optional<PreferencePair> make_pair(const ChainRecord& a, const ChainRecord& b, Phase phase) {
  if (a.problem_id != b.problem_id) throw std::invalid_argument("make_pair: chains of different problems");
  if (a.utility == b.utility) return std::nullopt;
  const ChainRecord& w = a.utility > b.utility ? a : b;
  const ChainRecord& l = a.utility > b.utility ? b : a;
  PreferencePair p;
  p.problem_id = a.problem_id;
  p.winner = w.chain_id;
  p.loser = l.chain_id;
  p.winner_strategy = w.strategy;
  p.loser_strategy = l.strategy;
  p.margin = Margin{w.utility - l.utility};
  p.phase = phase;
  if (phase == Phase::phase2) p.bin = margin_bin(p.margin);
  const int refined = (w.source == ChainSource::refined) + (l.source == ChainSource::refined);
  p.source_combo = refined == 0   ? SourceCombo::original_original
                   : refined == 1 ? SourceCombo::hybrid
                                  : SourceCombo::refined_refined;
  return p;
}

void StratificationPlan::validate() const {
  double sum = 0.0;
  for (double f : target_mixture) {
    if (!(f >= 0.0)) throw std::invalid_argument("StratificationPlan: negative mixture fraction");
    sum += f;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw std::invalid_argument("StratificationPlan: mixture must sum to 1");
}

std::array<std::uint32_t, 3> bin_quotas(const std::array<double, 3>& mixture, std::uint32_t n) {
  std::array<std::uint32_t, 3> q{};
  std::array<double, 3> rem{};
  std::uint32_t used = 0;
  for (int b = 0; b < 3; ++b) {
    const double exact = mixture[b] * n;
    q[b] = static_cast<std::uint32_t>(std::floor(exact + 1e-12));
    rem[b] = exact - q[b];
    used += q[b];
  }
  std::array<int, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return rem[a] > rem[b] + 1e-12; });
  for (int i = 0; used < n; i = (i + 1) % 3) {
    ++q[order[i]];
    ++used;
  }
  return q;
}

std::array<std::uint32_t, 3> allocate_bins(std::array<std::uint32_t, 3> quotas,
                                           const std::array<std::uint32_t, 3>& available) {
  // Bin order is strong (0), medium (1), weak (2): the larger-margin neighbour
  // of bin b is b - 1.
  std::array<std::uint32_t, 3> take{};
  std::uint32_t spill = 0;
  for (int b = 2; b >= 0; --b) {
    const std::uint32_t want = quotas[b] + spill;
    take[b] = std::min(want, available[b]);
    spill = want - take[b];
  }
  while (spill > 0) {
    int best = -1;
    std::uint32_t best_spare = 0;
    for (int b = 0; b < 3; ++b) {
      const std::uint32_t spare = available[b] - take[b];
      if (spare > best_spare) {
        best = b;
        best_spare = spare;
      }
    }
    if (best < 0) break;
    const std::uint32_t add = std::min(spill, best_spare);
    take[best] += add;
    spill -= add;
  }
  return take;
}

namespace {

void check_one_problem(std::span<const ChainRecord> chains) {
  for (const auto& c : chains) {
    if (c.problem_id != chains.front().problem_id) {
      throw std::invalid_argument("pair construction expects chains of a single problem");
    }
  }
}

}  // namespace

StrategyId select_best_strategy(std::span<const ChainRecord> chains) {
  if (chains.empty()) throw std::invalid_argument("select_best_strategy: no chains");
  check_one_problem(chains);
  std::vector<std::uint32_t> seen;
  const ChainRecord* best = nullptr;
  for (const auto& c : chains) {
    if (std::find(seen.begin(), seen.end(), c.strategy.index) != seen.end()) {
      throw std::invalid_argument("select_best_strategy: duplicate strategy");
    }
    seen.push_back(c.strategy.index);
    if (!best || c.utility > best->utility ||
        (c.utility == best->utility && c.strategy.index < best->strategy.index)) {
      best = &c;
    }
  }
  return best->strategy;
}

std::vector<PreferencePair> build_phase1(std::span<const ChainRecord> chains) {
  const StrategyId best = select_best_strategy(chains);
  const auto it = std::find_if(chains.begin(), chains.end(), [&](const ChainRecord& c) { return c.strategy == best; });
  std::vector<PreferencePair> out;
  for (const auto& c : chains) {
    if (c.strategy == best) continue;
    if (auto p = make_pair(*it, c, Phase::phase1)) out.push_back(*p);
  }
  return out;
}

std::vector<PreferencePair> build_all_pairs(std::span<const ChainRecord> chains) {
  select_best_strategy(chains);  // validates one chain per strategy
  std::vector<PreferencePair> out;
  for (std::size_t i = 0; i < chains.size(); ++i) {
    for (std::size_t j = i + 1; j < chains.size(); ++j) {
      if (auto p = make_pair(chains[i], chains[j], Phase::all_pairs)) out.push_back(*p);
    }
  }
  return out;
}

std::vector<PreferencePair> build_phase2(std::span<const ChainRecord> chains,
                                         const StratificationPlan& plan, std::uint64_t draw) {
  plan.validate();
  if (chains.empty()) return {};
  check_one_problem(chains);

  // Candidates per bin, split by whether the pair mixes original and refined.
  std::array<std::vector<PreferencePair>, 3> hybrid;
  std::array<std::vector<PreferencePair>, 3> plain;
  std::vector<const ChainRecord*> sorted;
  for (const auto& c : chains) sorted.push_back(&c);
  std::sort(sorted.begin(), sorted.end(), [](const ChainRecord* a, const ChainRecord* b) {
    return a->strategy.index != b->strategy.index ? a->strategy.index < b->strategy.index
                                                  : a->chain_id < b->chain_id;
  });
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    for (std::size_t j = i + 1; j < sorted.size() && sorted[j]->strategy == sorted[i]->strategy; ++j) {
      if (auto p = make_pair(*sorted[i], *sorted[j], Phase::phase2)) {
        const auto b = static_cast<std::size_t>(*p->bin);
        (p->source_combo == SourceCombo::hybrid ? hybrid : plain)[b].push_back(*p);
      }
    }
  }

  std::array<std::uint32_t, 3> available{};
  std::uint32_t total = 0;
  for (int b = 0; b < 3; ++b) {
    available[b] = static_cast<std::uint32_t>(hybrid[b].size() + plain[b].size());
    total += available[b];
  }
  const std::uint32_t n = std::min(plan.pairs_per_problem, total);
  const auto take = allocate_bins(bin_quotas(plan.target_mixture, n), available);

  const std::uint32_t problem = chains.front().problem_id;
  std::vector<PreferencePair> out;
  for (int b = 0; b < 3; ++b) {
    Rng rng(derive_key(draw, "phase2", {problem, static_cast<std::uint64_t>(b)}));
    rng.shuffle(hybrid[b]);
    rng.shuffle(plain[b]);
    std::size_t h = 0;
    std::size_t o = 0;
    for (std::uint32_t k = 0; k < take[b]; ++k) {
      const bool want_hybrid = (k % 2 == 0);
      if ((want_hybrid && h < hybrid[b].size()) || o >= plain[b].size()) out.push_back(hybrid[b][h++]);
      else out.push_back(plain[b][o++]);
    }
  }
  return out;
}

namespace {

template <typename Build>
std::vector<PreferencePair> per_problem(std::span<const ChainRecord> chains, bool primary_only,
                                        unsigned jobs, Build build) {
  std::uint32_t n = 0;
  for (const auto& c : chains) n = std::max(n, c.problem_id + 1);
  std::vector<std::vector<ChainRecord>> groups(n);
  for (const auto& c : chains) {
    if (primary_only && (c.generation != 0 || c.sample != 0)) continue;
    groups[c.problem_id].push_back(c);
  }
  std::vector<std::vector<PreferencePair>> parts(n);
  parallel_for(n, jobs, [&](std::size_t p) {
    if (!groups[p].empty()) parts[p] = build(groups[p]);
  });
  std::vector<PreferencePair> out;
  for (auto& part : parts) out.insert(out.end(), part.begin(), part.end());
  return out;
}

}  // namespace

std::vector<PreferencePair> build_phase1_corpus(std::span<const ChainRecord> chains, unsigned jobs) {
  return per_problem(chains, true, jobs, [](std::span<const ChainRecord> g) { return build_phase1(g); });
}

std::vector<PreferencePair> build_all_pairs_corpus(std::span<const ChainRecord> chains, unsigned jobs) {
  return per_problem(chains, true, jobs, [](std::span<const ChainRecord> g) { return build_all_pairs(g); });
}

std::vector<PreferencePair> build_phase2_corpus(std::span<const ChainRecord> chains,
                                                const StratificationPlan& plan, std::uint64_t draw,
                                                unsigned jobs) {
  plan.validate();
  return per_problem(chains, false, jobs,
                     [&](std::span<const ChainRecord> g) { return build_phase2(g, plan, draw); });
}

DatasetStats dataset_stats(std::span<const PreferencePair> pairs) {
  if (pairs.empty()) throw std::invalid_argument("dataset_stats: empty pair list");
  DatasetStats s;
  s.n_pairs = pairs.size();
  std::vector<double> m;
  m.reserve(pairs.size());
  std::vector<std::uint32_t> problems;
  std::array<std::size_t, 3> bins{};
  std::array<double, 3> bin_sums{};
  std::size_t hybrid = 0;
  std::size_t rr = 0;
  std::uint32_t k = 0;
  for (const auto& p : pairs) {
    m.push_back(p.margin.delta_u);
    problems.push_back(p.problem_id);
    k = std::max({k, p.winner_strategy.index + 1, p.loser_strategy.index + 1});
    if (p.phase == Phase::phase1) ++s.n_phase1;
    if (p.phase == Phase::phase2) {
      ++s.n_phase2;
      const auto b = static_cast<std::size_t>(p.bin.value_or(margin_bin(p.margin)));
      ++bins[b];
      bin_sums[b] += p.margin.delta_u;
      hybrid += p.source_combo == SourceCombo::hybrid;
      rr += p.source_combo == SourceCombo::refined_refined;
    }
  }
  std::sort(problems.begin(), problems.end());
  s.n_problems = static_cast<std::size_t>(std::unique(problems.begin(), problems.end()) - problems.begin());
  const double n = static_cast<double>(m.size());
  s.mean_margin = std::accumulate(m.begin(), m.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : m) ss += (v - s.mean_margin) * (v - s.mean_margin);
  s.std_margin = std::sqrt(ss / n);
  std::sort(m.begin(), m.end());
  s.min_margin = m.front();
  s.max_margin = m.back();
  s.median_margin = m.size() % 2 ? m[m.size() / 2] : 0.5 * (m[m.size() / 2 - 1] + m[m.size() / 2]);
  if (s.n_phase2 > 0) {
    std::array<double, 3> f{};
    std::array<double, 3> means{};
    for (int b = 0; b < 3; ++b) {
      f[b] = static_cast<double>(bins[b]) / s.n_phase2;
      means[b] = bins[b] ? bin_sums[b] / bins[b] : 0.0;
    }
    s.bin_fractions = f;
    s.bin_mean_margins = means;
    s.hybrid_fraction = static_cast<double>(hybrid) / s.n_phase2;
    s.refined_refined_fraction = static_cast<double>(rr) / s.n_phase2;
  }
  s.winner_counts.assign(k, 0);
  s.loser_counts.assign(k, 0);
  for (const auto& p : pairs) {
    ++s.winner_counts[p.winner_strategy.index];
    ++s.loser_counts[p.loser_strategy.index];
  }
  return s;
}

namespace {
constexpr std::string_view kPairHeader =
    "problem_id\tphase\twinner_chain_id\tloser_chain_id\twinner_strategy\tloser_strategy\tmargin\tbin\tsource_combo";
}

std::size_t export_pairs(std::span<const PreferencePair> pairs, const ChainIndex& chains,
                         const std::filesystem::path& path) {
  std::ostringstream out;
  out << kPairHeader << '\n';
  for (const auto& p : pairs) {
    if (!chains.contains(p.winner) || !chains.contains(p.loser)) {
      throw std::invalid_argument("export_pairs: pair references an unknown chain");
    }
    out << p.problem_id << '\t' << to_string(p.phase) << '\t' << p.winner << '\t' << p.loser << '\t'
        << strategy_label(p.winner_strategy) << '\t' << strategy_label(p.loser_strategy) << '\t'
        << io::format_fixed(p.margin.delta_u, 6) << '\t' << (p.bin ? to_string(*p.bin) : "-") << '\t'
        << to_string(p.source_combo) << '\n';
  }
  io::write_text(path, out.str());
  return pairs.size();
}

std::vector<PreferencePair> import_pairs(const std::filesystem::path& path, const ChainIndex* chains) {
  const auto lines = io::read_lines(path);
  if (lines.empty() || lines[0] != kPairHeader) {
    throw std::runtime_error("import_pairs: missing or unexpected header in " + path.string());
  }
  std::vector<PreferencePair> out;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (io::trim(lines[i]).empty()) continue;
    const auto f = io::split(lines[i], '\t');
    if (f.size() != 9) throw std::runtime_error("import_pairs: malformed row " + std::to_string(i + 1));
    PreferencePair p;
    p.problem_id = static_cast<std::uint32_t>(io::parse_uint(f[0], "problem_id"));
    p.phase = parse_phase(f[1]);
    p.winner = static_cast<ChainId>(io::parse_uint(f[2], "winner_chain_id"));
    p.loser = static_cast<ChainId>(io::parse_uint(f[3], "loser_chain_id"));
    p.winner_strategy = parse_strategy(f[4]);
    p.loser_strategy = parse_strategy(f[5]);
    p.margin = Margin{io::parse_double(f[6], "margin")};
    if (f[7] != "-") p.bin = parse_margin_bin(f[7]);
    p.source_combo = parse_source_combo(f[8]);
    if (chains) {
      if (!chains->contains(p.winner) || !chains->contains(p.loser)) {
        throw std::runtime_error("import_pairs: dangling chain reference on row " + std::to_string(i + 1));
      }
      const double exact = chains->chain(p.winner).utility - chains->chain(p.loser).utility;
      if (std::abs(exact - p.margin.delta_u) > 5.1e-7) {
        throw std::runtime_error("import_pairs: margin disagrees with chain utilities on row " +
                                 std::to_string(i + 1));
      }
      p.margin = Margin{exact};
    }
    if (!(p.margin.delta_u > 0.0)) throw std::runtime_error("import_pairs: non-positive margin");
    out.push_back(p);
  }
  return out;
}

std::size_t export_preference_jsonl(std::span<const PreferencePair> pairs,
                                    const std::filesystem::path& path) {
  std::ostringstream out;
  for (const auto& p : pairs) {
    nlohmann::json j;
    j["prompt"] = "problem-" + std::to_string(p.problem_id);
    j["chosen"] = "chain-" + std::to_string(p.winner);
    j["rejected"] = "chain-" + std::to_string(p.loser);
    out << j.dump() << '\n';
  }
  io::write_text(path, out.str());
  return pairs.size();
}

}  // namespace cudpo
