#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <stdexcept>

#include "cudpo/dpo.hpp"
#include "cudpo/io.hpp"
#include "cudpo/rng.hpp"
#include "cudpo/scoring.hpp"

using namespace cudpo;

namespace {

PolicyParams uniform_policy(std::uint32_t problems, std::uint32_t k, double beta = 0.1) {
  std::vector<std::uint32_t> counts(problems, k);
  return PolicyParams(ReferencePolicy::uniform(counts), beta);
}

std::vector<std::vector<double>> random_utilities(std::uint32_t problems, std::uint32_t k, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::vector<double>> u(problems, std::vector<double>(k));
  for (auto& row : u) {
    for (auto& v : row) v = rng.uniform(0.05, 0.95);
  }
  return u;
}

std::vector<TrainPair> all_pairs(const std::vector<std::vector<double>>& u) {
  std::vector<TrainPair> out;
  for (std::uint32_t p = 0; p < u.size(); ++p) {
    for (std::uint32_t i = 0; i < u[p].size(); ++i) {
      for (std::uint32_t j = i + 1; j < u[p].size(); ++j) {
        const bool iw = u[p][i] > u[p][j];
        const double m = std::abs(u[p][i] - u[p][j]);
        out.push_back({p, iw ? i : j, iw ? j : i, bt_probability({m}), m});
      }
    }
  }
  return out;
}

}  // namespace

TEST_CASE("reference policy validation") {
  CHECK_THROWS_AS(ReferencePolicy({{0.5, 0.4}}), std::invalid_argument);
  CHECK_THROWS_AS(ReferencePolicy({{1.0, 0.0}}), std::invalid_argument);
  const ReferencePolicy r({{0.25, 0.75}});
  CHECK(r.probabilities(0)[1] == doctest::Approx(0.75));
  CHECK_THROWS_AS(PolicyParams(r, 0.0), std::invalid_argument);
}

TEST_CASE("policy distribution") {
  auto params = uniform_policy(2, 4);
  for (double v : policy_distribution(params, 0)) CHECK(v == doctest::Approx(0.25));
  params.logits(1)[2] = 30.0;
  const auto d = policy_distribution(params, 1);
  CHECK(d[2] > 0.999999);
  double s = 0.0;
  for (double v : d) {
    CHECK(v > 0.0);
    s += v;
  }
  CHECK(s == doctest::Approx(1.0).epsilon(1e-14));
  auto shifted = params;
  for (double& z : shifted.logits(1)) z += 7.5;
  const auto d2 = policy_distribution(shifted, 1);
  for (std::size_t i = 0; i < d.size(); ++i) CHECK(d2[i] == doctest::Approx(d[i]).epsilon(1e-12));
  CHECK_THROWS_AS(policy_distribution(params, 2), std::out_of_range);
}

TEST_CASE("implicit reward") {
  auto params = uniform_policy(1, 3, 0.1);
  for (std::uint32_t s = 0; s < 3; ++s) CHECK(implicit_reward(params, 0, s) == 0.0);
  // log pi_0 - log pi_ref_0 = 2 with pi_ref_0 = 0.1.
  auto p3 = PolicyParams(ReferencePolicy({{0.1, 0.9}}), 0.1);
  const double target = 0.1 * std::exp(2.0);
  p3.logits(0)[0] = std::log(target);
  p3.logits(0)[1] = std::log(1.0 - target);
  CHECK(implicit_reward(p3, 0, 0) == doctest::Approx(0.2).epsilon(1e-12));
  auto shifted = p3;
  for (double& z : shifted.logits(0)) z -= 3.0;
  const TrainPair pr{0, 0, 1};
  CHECK(reward_margin(shifted, pr) == doctest::Approx(reward_margin(p3, pr)).epsilon(1e-12));
  CHECK(implicit_reward(shifted, 0, 0) - implicit_reward(shifted, 0, 1) ==
        doctest::Approx(implicit_reward(p3, 0, 0) - implicit_reward(p3, 0, 1)).epsilon(1e-12));
}

TEST_CASE("dpo loss values") {
  auto params = uniform_policy(1, 2, 1.0);
  const TrainPair pr{0, 0, 1};
  CHECK(dpo_loss(params, pr) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  params.logits(0)[0] = params.logits(0)[1] - 1.0;
  // -log sigma(-1) = log(1 + e).
  CHECK(dpo_loss(params, pr) == doctest::Approx(std::log1p(std::exp(1.0))).epsilon(1e-14));
  CHECK(dpo_loss(params, pr) == doctest::Approx(1.3132616875182228).epsilon(1e-12));
  params.logits(0)[0] = 200.0;
  CHECK(dpo_loss(params, pr) < 1e-80);
  CHECK(dpo_loss(params, pr) >= 0.0);
  double prev = 1e9;
  for (double m = -5; m <= 5; m += 0.5) {
    params.logits(0)[0] = m;
    const double l = dpo_loss(params, pr);
    CHECK(l < prev);
    prev = l;
  }
}

TEST_CASE("loss slope and saturation") {
  CHECK(dpo_loss_slope(0.0, 1.0) == -0.5);
  auto params = uniform_policy(1, 3, 0.1);
  params.logits(0)[0] = 400.0;
  for (double g : dpo_grad(params, {0, 0, 1})) CHECK(std::abs(g) < 1e-8);
}

TEST_CASE("soft-target loss is minimized at the utility margin") {
  for (double du : {0.05, 0.3, 0.8}) {
    CHECK(std::abs(dpo_loss_slope(du, bt_probability({du}))) < 1e-15);
  }
}

TEST_CASE("analytic gradient matches central differences") {
  Rng rng(42);
  double worst = 0.0;
  for (int probe = 0; probe < 100; ++probe) {
    const std::uint32_t k = 2 + static_cast<std::uint32_t>(rng.below(7));
    const double beta = rng.uniform(0.05, 2.0);
    auto params = uniform_policy(1, k, beta);
    for (double& z : params.logits(0)) z = rng.uniform(-3, 3);
    TrainPair pr{0, static_cast<SlotIndex>(rng.below(k)), 0, rng.uniform()};
    do pr.loser = static_cast<SlotIndex>(rng.below(k));
    while (pr.loser == pr.winner);
    const auto g = dpo_grad(params, pr);
    double num2 = 0.0;
    double diff2 = 0.0;
    for (std::uint32_t i = 0; i < k; ++i) {
      const double h = 1e-5;
      auto up = params;
      auto dn = params;
      up.logits(0)[i] += h;
      dn.logits(0)[i] -= h;
      const double fd = (dpo_loss(up, pr) - dpo_loss(dn, pr)) / (2 * h);
      diff2 += (fd - g[i]) * (fd - g[i]);
      num2 += std::max(fd * fd, g[i] * g[i]);
    }
    worst = std::max(worst, std::sqrt(diff2 / num2));
  }
  MESSAGE("worst relative gradient error ", worst);
  CHECK(worst < 1e-6);
}

TEST_CASE("total gradient agrees with per-pair gradients") {
  const auto u = random_utilities(3, 5, 9);
  const auto pairs = all_pairs(u);
  auto params = uniform_policy(3, 5);
  Rng rng(3);
  for (double& z : params.flat()) z = rng.uniform(-1, 1);
  const auto g = total_grad(params, pairs, 3);
  std::vector<double> ref(params.n_params(), 0.0);
  for (const auto& p : pairs) {
    const auto gp = dpo_grad(params, p);
    for (std::size_t i = 0; i < gp.size(); ++i) ref[params.offset(p.problem) + i] += gp[i];
  }
  for (std::size_t i = 0; i < g.size(); ++i) CHECK(g[i] == doctest::Approx(ref[i]).epsilon(1e-9));
  CHECK(total_loss(params, pairs, 1) == total_loss(params, pairs, 4));
}

TEST_CASE("closed form policy") {
  const auto ref = ReferencePolicy::uniform(std::vector<std::uint32_t>{2});
  const auto pi = closed_form_policy(ref, {{1.0, 0.0}}, 1.0);
  CHECK(pi[0][0] == doctest::Approx(std::exp(1.0) / (1.0 + std::exp(1.0))).epsilon(1e-15));
  CHECK(pi[0][0] == doctest::Approx(0.7310585786300049).epsilon(1e-14));
  CHECK(pi[0][1] == doctest::Approx(0.2689414213699951).epsilon(1e-14));

  const auto u = random_utilities(4, 6, 2);
  const auto uref = ReferencePolicy::uniform(std::vector<std::uint32_t>(4, 6));
  const auto wide = closed_form_policy(uref, u, 1e3);
  for (const auto& row : wide) {
    for (double v : row) CHECK(std::abs(v - 1.0 / 6) <= 1e-3);
  }
  auto shifted = u;
  for (auto& row : shifted) {
    for (double& v : row) v += 0.37;
  }
  const auto a = closed_form_policy(uref, u, 0.1);
  const auto b = closed_form_policy(uref, shifted, 0.1);
  for (std::size_t p = 0; p < a.size(); ++p) CHECK(total_variation(a[p], b[p]) < 1e-12);
}

TEST_CASE("closed form params satisfy the margin identity") {
  const auto u = random_utilities(10, 8, 5);
  const auto ref = ReferencePolicy::uniform(std::vector<std::uint32_t>(10, 8));
  const auto params = closed_form_params(ref, u, 0.1);
  const auto pi = closed_form_policy(ref, u, 0.1);
  for (const auto& pr : all_pairs(u)) {
    CHECK(std::abs(reward_margin(params, pr) - pr.margin) < 1e-9);
  }
  for (std::uint32_t p = 0; p < 10; ++p) CHECK(total_variation(policy_distribution(params, p), pi[p]) < 1e-12);
  const auto fit = fit_reward_utility(params, u);
  CHECK(fit.r2 == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(fit.slope == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(win_rate(params, all_pairs(u)) == 1.0);
}

TEST_CASE("untrained policy has no alignment") {
  const auto u = random_utilities(20, 8, 6);
  const auto params = uniform_policy(20, 8);
  CHECK(fit_reward_utility(params, u).r2 < 0.2);
  CHECK(win_rate(params, all_pairs(u)) == 0.5);
  const std::vector<std::vector<double>> flat(20, std::vector<double>(8, 0.5));
  CHECK_THROWS_AS(fit_reward_utility(params, flat), std::invalid_argument);
}

TEST_CASE("full batch training converges to the closed form") {
  const auto u = random_utilities(20, 8, 11);
  const auto pairs = all_pairs(u);
  TrainConfig cfg;
  cfg.epochs = 5000;
  const auto res = train(uniform_policy(20, 8), pairs, cfg);
  CHECK(res.converged);
  for (std::size_t i = 1; i < res.loss_curve.size(); ++i) CHECK(res.loss_curve[i] < res.loss_curve[i - 1]);
  const auto pi = closed_form_policy(res.params.reference(), u, 0.1);
  double worst_tv = 0.0;
  double worst_gap = 0.0;
  for (std::uint32_t p = 0; p < 20; ++p) worst_tv = std::max(worst_tv, total_variation(policy_distribution(res.params, p), pi[p]));
  for (const auto& pr : pairs) worst_gap = std::max(worst_gap, std::abs(reward_margin(res.params, pr) - pr.margin));
  MESSAGE("tv ", worst_tv, " gap ", worst_gap, " steps ", res.steps);
  CHECK(worst_tv < 1e-3);
  CHECK(worst_gap < 1e-6);
}

TEST_CASE("training dynamics") {
  SUBCASE("single pair margin rises monotonically") {
    const std::vector<TrainPair> one{{0, 1, 0, 1.0, 0.3}};
    double prev = -1.0;
    for (std::uint32_t e : {1u, 2u, 5u, 10u, 40u}) {
      TrainConfig cfg;
      cfg.epochs = e;
      cfg.learning_rate = 1.0;
      const auto r = train(uniform_policy(1, 3), one, cfg);
      const double m = reward_margin(r.params, one[0]);
      CHECK(m > prev);
      prev = m;
    }
  }
  SUBCASE("deterministic given the seed") {
    const auto u = random_utilities(5, 4, 1);
    const auto pairs = all_pairs(u);
    TrainConfig cfg;
    cfg.batch_mode = BatchMode::minibatch;
    cfg.batch_size = 7;
    cfg.epochs = 20;
    cfg.seed = 99;
    const auto a = train(uniform_policy(5, 4), pairs, cfg);
    const auto b = train(uniform_policy(5, 4), pairs, cfg);
    for (std::size_t i = 0; i < a.params.n_params(); ++i) CHECK(a.params.flat()[i] == b.params.flat()[i]);
    CHECK(a.loss_curve.back() < a.loss_curve.front());
    cfg.jobs = 4;
    cfg.batch_mode = BatchMode::full;
    const auto c = train(uniform_policy(5, 4), pairs, cfg);
    cfg.jobs = 1;
    const auto d = train(uniform_policy(5, 4), pairs, cfg);
    for (std::size_t i = 0; i < c.params.n_params(); ++i) CHECK(c.params.flat()[i] == d.params.flat()[i]);
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(train(uniform_policy(1, 2), std::vector<TrainPair>{}, TrainConfig{}), std::invalid_argument);
    auto bad = uniform_policy(1, 2);
    bad.logits(0)[0] = std::nan("");
    CHECK_THROWS(train(bad, std::vector<TrainPair>{{0, 0, 1}}, TrainConfig{}));
    CHECK_THROWS_AS(train(uniform_policy(1, 2), std::vector<TrainPair>{{0, 0, 5}}, TrainConfig{}), std::out_of_range);
    TrainConfig zero;
    zero.epochs = 0;
    CHECK_THROWS_AS(train(uniform_policy(1, 2), std::vector<TrainPair>{{0, 0, 1}}, zero), std::invalid_argument);
  }
}

TEST_CASE("two phase schedule") {
  const auto u = random_utilities(6, 5, 4);
  std::vector<TrainPair> p1;
  for (std::uint32_t p = 0; p < 6; ++p) {
    std::uint32_t best = 0;
    for (std::uint32_t s = 1; s < 5; ++s) best = u[p][s] > u[p][best] ? s : best;
    for (std::uint32_t s = 0; s < 5; ++s) {
      if (s != best) p1.push_back({p, best, s, bt_probability({u[p][best] - u[p][s]}), u[p][best] - u[p][s]});
    }
  }
  TrainConfig cfg;
  const auto two = train_two_phase(uniform_policy(6, 5), p1, {}, cfg, true);
  const auto one = train(uniform_policy(6, 5), p1, cfg);
  for (std::size_t i = 0; i < one.params.n_params(); ++i) CHECK(two.params.flat()[i] == one.params.flat()[i]);
  CHECK_FALSE(two.phase2.has_value());
  CHECK(two.phase1.win_rate == 1.0);
  CHECK_THROWS_AS(train_two_phase(uniform_policy(6, 5), p1, {}, cfg, false), std::invalid_argument);
  for (std::uint32_t p = 0; p < 6; ++p) {
    const auto d = policy_distribution(two.params, p);
    const auto argmax = static_cast<std::uint32_t>(std::max_element(d.begin(), d.end()) - d.begin());
    CHECK(argmax == p1[p * 4].winner);
  }
}

TEST_CASE("checkpoint and loss curve files") {
  auto params = PolicyParams(ReferencePolicy({{0.2, 0.3, 0.5}, {0.5, 0.5}}), 0.25);
  params.logits(0)[1] = -3.25e-7;
  params.logits(1)[0] = 12.5;
  const auto dir = std::filesystem::temp_directory_path() / "cudpo_ckpt_test";
  save_checkpoint(params, 77, dir / "checkpoint.txt");
  const auto ck = load_checkpoint(dir / "checkpoint.txt");
  CHECK(ck.seed == 77);
  CHECK(ck.params.beta() == 0.25);
  REQUIRE(ck.params.n_params() == params.n_params());
  for (std::size_t i = 0; i < params.n_params(); ++i) CHECK(ck.params.flat()[i] == params.flat()[i]);
  CHECK(ck.params.reference().probabilities(0)[2] == doctest::Approx(0.5).epsilon(1e-15));
  save_loss_curve(std::vector<double>{3.0, 2.0, 1.5}, dir / "loss.csv");
  const auto lines = io::read_lines(dir / "loss.csv");
  CHECK(lines.size() == 4);
  CHECK(lines[0] == "step,loss");
  CHECK(lines[3] == "2,1.5");
  std::filesystem::remove_all(dir);
}

TEST_CASE("featurized head gradient") {
  Rng rng(8);
  std::vector<std::vector<double>> phi(5, std::vector<double>(3));
  for (auto& row : phi) {
    for (double& v : row) v = rng.uniform(-1, 1);
  }
  FeaturizedPolicy pol(4, phi, 0.5);
  for (double& w : pol.weights()) w = rng.uniform(-1, 1);
  for (int probe = 0; probe < 20; ++probe) {
    const TrainPair pr{static_cast<std::uint32_t>(probe % 5), static_cast<SlotIndex>(probe % 4),
                       static_cast<SlotIndex>((probe + 1) % 4), 0.7};
    const auto g = pol.grad(pr);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double h = 1e-5;
      FeaturizedPolicy up = pol;
      FeaturizedPolicy dn = pol;
      up.weights()[i] += h;
      dn.weights()[i] -= h;
      const double fd = (up.loss(pr) - dn.loss(pr)) / (2 * h);
      CHECK(std::abs(g[i] - fd) <= 1e-9 + 1e-6 * std::abs(fd));
    }
  }
}
