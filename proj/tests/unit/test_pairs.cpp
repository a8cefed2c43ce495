#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

#include "cudpo/io.hpp"
#include "cudpo/pairs.hpp"
#include "cudpo/refine.hpp"

using namespace cudpo;

namespace {

std::vector<ChainRecord> problem_chains(const std::vector<double>& u, std::uint32_t problem = 0) {
  std::vector<ChainRecord> out;
  for (std::uint32_t s = 0; s < u.size(); ++s) {
    ChainRecord c;
    c.chain_id = problem * 100 + s;
    c.problem_id = problem;
    c.strategy = {s};
    c.utility = u[s];
    out.push_back(c);
  }
  return out;
}

ChainRecord make_chain(ChainId id, std::uint32_t strategy, double u, bool refined = false) {
  ChainRecord c;
  c.chain_id = id;
  c.strategy = {strategy};
  c.utility = u;
  if (refined) {
    c.source = ChainSource::refined;
    c.generation = 1;
  }
  return c;
}

}  // namespace

TEST_CASE("best strategy selection") {
  CHECK(select_best_strategy(problem_chains({0.2, 0.9, 0.5, 0.1})).index == 1);
  CHECK(select_best_strategy(problem_chains({0.4, 0.4, 0.4})).index == 0);
  CHECK_THROWS_AS(select_best_strategy(std::vector<ChainRecord>{}), std::invalid_argument);
  auto dup = problem_chains({0.1, 0.2});
  dup[1].strategy = {0};
  CHECK_THROWS_AS(select_best_strategy(dup), std::invalid_argument);
}

TEST_CASE("argmax follows every permutation") {
  std::vector<double> base{0.1, 0.35, 0.6, 0.85};
  std::vector<std::uint32_t> perm{0, 1, 2, 3};
  do {
    std::vector<double> u(4);
    for (int i = 0; i < 4; ++i) u[perm[i]] = base[i];
    CHECK(select_best_strategy(problem_chains(u)).index == perm[3]);
  } while (std::next_permutation(perm.begin(), perm.end()));
}

TEST_CASE("phase one pairs") {
  const auto pairs = build_phase1(problem_chains({0.3, 0.2, 0.9, 0.5, 0.45, 0.1, 0.7, 0.65}));
  REQUIRE(pairs.size() == 7);
  for (const auto& p : pairs) {
    CHECK(p.winner_strategy.index == 2);
    CHECK(p.margin.delta_u > 0.0);
    CHECK(p.phase == Phase::phase1);
    CHECK_FALSE(p.bin.has_value());
  }
  CHECK(build_phase1(problem_chains({0.9, 0.2, 0.9, 0.5, 0.45, 0.1, 0.7, 0.65})).size() == 6);
}

TEST_CASE("bin quotas use largest remainders") {
  CHECK(bin_quotas({0.45, 0.30, 0.25}, 6) == std::array<std::uint32_t, 3>{3, 2, 1});
  CHECK(bin_quotas({0.45, 0.30, 0.25}, 0) == std::array<std::uint32_t, 3>{0, 0, 0});
  CHECK(bin_quotas({1.0, 0.0, 0.0}, 5) == std::array<std::uint32_t, 3>{5, 0, 0});
  for (std::uint32_t n = 1; n < 40; ++n) {
    const auto q = bin_quotas({0.45, 0.30, 0.25}, n);
    CHECK(q[0] + q[1] + q[2] == n);
    CHECK(std::abs(q[0] - 0.45 * n) < 1.0);
    CHECK(std::abs(q[2] - 0.25 * n) < 1.0);
  }
}

TEST_CASE("shortfall moves to the larger-margin neighbour first") {
  CHECK(allocate_bins({3, 2, 1}, {5, 5, 5}) == std::array<std::uint32_t, 3>{3, 2, 1});
  CHECK(allocate_bins({3, 2, 1}, {5, 5, 0}) == std::array<std::uint32_t, 3>{3, 3, 0});
  CHECK(allocate_bins({3, 2, 1}, {5, 0, 5}) == std::array<std::uint32_t, 3>{5, 0, 1});
  CHECK(allocate_bins({3, 2, 1}, {0, 1, 9}) == std::array<std::uint32_t, 3>{0, 1, 5});
  CHECK(allocate_bins({3, 2, 1}, {1, 1, 1}) == std::array<std::uint32_t, 3>{1, 1, 1});
}

TEST_CASE("phase two pairs are strategy matched and stratified") {
  std::vector<ChainRecord> chains;
  ChainId id = 0;
  // Two strategies, each with a spread of utilities to populate every bin.
  for (std::uint32_t s = 0; s < 2; ++s) {
    for (double u : {0.1, 0.2, 0.35, 0.5, 0.62, 0.9}) chains.push_back(make_chain(id++, s, u, id % 3 == 0));
  }
  const auto pairs = build_phase2(chains, StratificationPlan{}, 4);
  REQUIRE(pairs.size() == 6);
  std::array<int, 3> bins{};
  for (const auto& p : pairs) {
    CHECK(p.winner_strategy == p.loser_strategy);
    CHECK(p.margin.delta_u > 0.0);
    REQUIRE(p.bin.has_value());
    ++bins[static_cast<int>(*p.bin)];
  }
  CHECK(bins == std::array<int, 3>{3, 2, 1});
  CHECK(build_phase2(chains, StratificationPlan{}, 4) == pairs);
}

TEST_CASE("phase two degenerate inputs") {
  std::vector<ChainRecord> flat;
  for (std::uint32_t s = 0; s < 4; ++s) {
    flat.push_back(make_chain(2 * s, s, 0.5));
    flat.push_back(make_chain(2 * s + 1, s, 0.5));
  }
  CHECK(build_phase2(flat, StratificationPlan{}, 0).empty());
  CHECK(build_phase2(std::vector<ChainRecord>{}, StratificationPlan{}, 0).empty());
  StratificationPlan bad;
  bad.target_mixture = {0.5, 0.5, 0.5};
  CHECK_THROWS_AS(build_phase2(flat, bad, 0), std::invalid_argument);
}

TEST_CASE("phase two prefers hybrid pairs one to one") {
  std::vector<ChainRecord> chains;
  // All pairs in the weak bin; two hybrids available among many plain pairs.
  chains.push_back(make_chain(0, 0, 0.50));
  chains.push_back(make_chain(1, 0, 0.51));
  chains.push_back(make_chain(2, 0, 0.52));
  chains.push_back(make_chain(3, 0, 0.53));
  chains.push_back(make_chain(4, 0, 0.545, true));
  StratificationPlan plan;
  plan.target_mixture = {0.0, 0.0, 1.0};
  plan.pairs_per_problem = 6;
  const auto pairs = build_phase2(chains, plan, 1);
  REQUIRE(pairs.size() == 6);
  int hybrids = 0;
  for (const auto& p : pairs) hybrids += p.source_combo == SourceCombo::hybrid;
  CHECK(hybrids == 3);
}

TEST_CASE("clean fraction by enumeration") {
  for (std::uint32_t k = 2; k <= 12; ++k) {
    std::vector<double> u(k);
    for (std::uint32_t i = 0; i < k; ++i) u[i] = 0.05 + 0.9 * ((i * (k - 1) + 1) % k) / k;
    const auto chains = problem_chains(u);
    const auto best = select_best_strategy(chains);
    const auto all = build_all_pairs(chains);
    REQUIRE(all.size() == k * (k - 1) / 2);
    const auto with_best = std::count_if(all.begin(), all.end(), [&](const PreferencePair& p) {
      return p.winner_strategy == best || p.loser_strategy == best;
    });
    CHECK(static_cast<double>(with_best) / all.size() == doctest::Approx(2.0 / k).epsilon(1e-15));
  }
}

TEST_CASE("dataset statistics") {
  PreferencePair p;
  p.margin = {0.2};
  const auto one = dataset_stats(std::vector<PreferencePair>{p});
  CHECK(one.mean_margin == doctest::Approx(0.2));
  CHECK(one.median_margin == doctest::Approx(0.2));
  CHECK(one.std_margin == 0.0);
  CHECK_FALSE(one.bin_fractions.has_value());
  CHECK(one.hybrid_fraction == 0.0);
  CHECK_THROWS_AS(dataset_stats(std::vector<PreferencePair>{}), std::invalid_argument);

  std::vector<PreferencePair> v(4);
  const double m[4] = {0.1, 0.2, 0.4, 0.5};
  for (int i = 0; i < 4; ++i) {
    v[i].margin = {m[i]};
    v[i].phase = Phase::phase2;
    v[i].bin = margin_bin(v[i].margin);
    v[i].source_combo = i == 0 ? SourceCombo::hybrid : SourceCombo::original_original;
  }
  const auto s = dataset_stats(v);
  CHECK(s.median_margin == doctest::Approx(0.3));
  CHECK(s.std_margin == doctest::Approx(std::sqrt((0.04 + 0.01 + 0.01 + 0.04) / 4)));
  REQUIRE(s.bin_fractions.has_value());
  CHECK((*s.bin_fractions)[0] + (*s.bin_fractions)[1] + (*s.bin_fractions)[2] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK((*s.bin_fractions)[0] == doctest::Approx(0.5));
  CHECK(s.hybrid_fraction == doctest::Approx(0.25));
}

TEST_CASE("default corpus pair counts") {
  const World w = generate_world(WorldConfig{});
  auto chains = sample_original_chains(w, ChainSampling{}, 4);
  const auto p1 = build_phase1_corpus(chains, 4);
  CHECK(p1.size() == 3150);
  const auto refined = refine_corpus(w, chains, RefinePolicy{}, ImprovementModel{}, 3, 4);
  chains.insert(chains.end(), refined.refined.begin(), refined.refined.end());
  const auto p2 = build_phase2_corpus(chains, StratificationPlan{}, 9, 4);
  const auto s2 = dataset_stats(p2);
  MESSAGE("phase2 ", p2.size(), " mean ", s2.mean_margin, " hybrid ", s2.hybrid_fraction, " bins ",
          (*s2.bin_fractions)[0], " ", (*s2.bin_fractions)[1], " ", (*s2.bin_fractions)[2],
          " phase1 mean ", dataset_stats(p1).mean_margin);
  CHECK(p2.size() >= 2400);
  CHECK(p2.size() <= 2700);
  CHECK(std::abs(s2.mean_margin - 0.244) <= 0.04);
  std::vector<PreferencePair> all = p1;
  all.insert(all.end(), p2.begin(), p2.end());
  CHECK(std::abs(static_cast<double>(all.size()) - 5830.0) <= 583.0);

  const ChainIndex idx(chains);
  for (const auto& p : p1) {
    const auto best = select_best_strategy(primary_chains(chains, p.problem_id));
    CHECK(p.winner_strategy == best);
    CHECK(idx.chain(p.winner).utility - idx.chain(p.loser).utility == p.margin.delta_u);
  }
  for (const auto& p : p2) {
    CHECK(p.winner_strategy == p.loser_strategy);
    CHECK(p.margin.delta_u > 0.0);
  }
  CHECK(build_phase2_corpus(chains, StratificationPlan{}, 9, 1) == p2);
}

TEST_CASE("pair export round trip") {
  const World w = generate_world(WorldConfig{.n_problems = 40});
  auto chains = sample_original_chains(w, ChainSampling{});
  const auto refined = refine_corpus(w, chains, RefinePolicy{}, ImprovementModel{}, 3);
  chains.insert(chains.end(), refined.refined.begin(), refined.refined.end());
  const ChainIndex idx(chains);
  auto pairs = build_phase1_corpus(chains);
  const auto p2 = build_phase2_corpus(chains, StratificationPlan{}, 2);
  pairs.insert(pairs.end(), p2.begin(), p2.end());

  const auto dir = std::filesystem::temp_directory_path() / "cudpo_pairs_test";
  CHECK(export_pairs(pairs, idx, dir / "pairs.tsv") == pairs.size());
  CHECK(io::read_lines(dir / "pairs.tsv").size() == pairs.size() + 1);
  CHECK(import_pairs(dir / "pairs.tsv", &idx) == pairs);
  const auto approx = import_pairs(dir / "pairs.tsv");
  REQUIRE(approx.size() == pairs.size());
  CHECK(std::abs(approx[5].margin.delta_u - pairs[5].margin.delta_u) <= 5e-7);

  CHECK(export_pairs(std::vector<PreferencePair>{}, idx, dir / "empty.tsv") == 0);
  CHECK(io::read_lines(dir / "empty.tsv").size() == 1);
  CHECK(import_pairs(dir / "empty.tsv").empty());

  auto dangling = pairs;
  dangling[0].loser = 999999;
  CHECK_THROWS_AS(export_pairs(dangling, idx, dir / "bad.tsv"), std::invalid_argument);

  CHECK(export_preference_jsonl(pairs, dir / "pairs.pref.txt") == pairs.size());
  const auto lines = io::read_lines(dir / "pairs.pref.txt");
  const auto j = nlohmann::json::parse(lines[0]);
  CHECK(j["chosen"] == "chain-" + std::to_string(pairs[0].winner));
  CHECK(j.contains("prompt"));
  CHECK(j.contains("rejected"));
  std::filesystem::remove_all(dir);
}
