#include <doctest.h>

#include <cmath>
#include <stdexcept>

#include "cudpo/scoring.hpp"

using namespace cudpo;

TEST_CASE("aggregate utility examples") {
  CHECK(aggregate_utility(ComponentScores(1, 1, 1)).value == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(aggregate_utility(ComponentScores(0, 0, 0, {2.0, 0.5, 0.5})).value == 0.0);
  CHECK(aggregate_utility(ComponentScores(0.3, 0.8, 0.8)).value == doctest::Approx(0.55).epsilon(1e-12));
}

TEST_CASE("weights are normalized to sum 3") {
  ComponentScores s(0.5, 0.5, 0.5, {3.0, 1.5, 1.5});
  CHECK(s.weights()[0] == doctest::Approx(1.5));
  CHECK(s.weights()[1] == doctest::Approx(0.75));
  CHECK(aggregate_utility(s).value == doctest::Approx(0.5));
}

TEST_CASE("invalid component scores are rejected") {
  CHECK_THROWS_AS(ComponentScores(-0.1, 0, 0), std::invalid_argument);
  CHECK_THROWS_AS(ComponentScores(0, 1.2, 0), std::invalid_argument);
  CHECK_THROWS_AS(ComponentScores(0, 0, 0, {1.0, -1.0, 3.0}), std::invalid_argument);
  CHECK_THROWS_AS(ComponentScores(0, 0, 0, {0.5, 1.0, 1.5}), std::invalid_argument);
  CHECK_THROWS_AS(ComponentScores(0, 0, 0, {0.0, 0.0, 0.0}), std::invalid_argument);
}

TEST_CASE("aggregation is linear in the scores") {
  const ComponentScores a(0.2, 0.9, 0.4);
  const ComponentScores b(0.7, 0.1, 1.0);
  for (double alpha : {0.0, 0.25, 0.6, 1.0}) {
    const ComponentScores mix(alpha * 0.2 + (1 - alpha) * 0.7, alpha * 0.9 + (1 - alpha) * 0.1,
                              alpha * 0.4 + (1 - alpha) * 1.0);
    CHECK(aggregate_utility(mix).value ==
          doctest::Approx(alpha * aggregate_utility(a).value + (1 - alpha) * aggregate_utility(b).value)
              .epsilon(1e-12));
  }
}

TEST_CASE("bradley-terry probability") {
  CHECK(bt_probability({0.0}) == 0.5);
  // 1 / (1 + exp(-0.35)) evaluated independently.
  const double expected = 1.0 / (1.0 + std::exp(-0.35));
  CHECK(bt_probability({0.35}) == doctest::Approx(expected).epsilon(1e-15));
  CHECK(bt_probability({0.35}) == doctest::Approx(0.5866175789173301).epsilon(1e-12));
  for (double d : {0.1, 0.5, 1.0}) {
    CHECK(bt_probability({d}) + bt_probability({-d}) == doctest::Approx(1.0).epsilon(1e-15));
  }
  CHECK(std::isfinite(bt_probability({-800.0})));
  CHECK(bt_probability({800.0}) == 1.0);
}

TEST_CASE("bradley-terry probability is strictly increasing") {
  double prev = -1.0;
  for (int i = 0; i < 1000; ++i) {
    const double d = -5.0 + 10.0 * i / 999.0;
    const double p = bt_probability({d});
    CHECK(p > prev);
    prev = p;
  }
}

TEST_CASE("log sigmoid agrees with log of sigmoid") {
  for (double x : {-30.0, -3.0, -0.5, 0.0, 0.5, 3.0, 30.0}) {
    CHECK(log_sigmoid(x) == doctest::Approx(std::log(sigmoid(x))).epsilon(1e-12));
  }
  CHECK(log_sigmoid(-1000.0) == doctest::Approx(-1000.0));
}

namespace {
double frequency(double delta, int n) {
  int hits = 0;
  for (int d = 0; d < n; ++d) hits += sample_preference({delta}, static_cast<std::uint64_t>(d));
  return static_cast<double>(hits) / n;
}
}  // namespace

TEST_CASE("sampled preferences follow the logistic") {
  CHECK(frequency(10.0, 100000) >= 0.9999);
  CHECK(frequency(0.0, 100000) == doctest::Approx(0.5).epsilon(0.02));
  CHECK(std::abs(frequency(0.35, 100000) - 0.5866) <= 0.01);
  CHECK(sample_preference({0.2}, 1234) == sample_preference({0.2}, 1234));
}

TEST_CASE("margin bins") {
  CHECK(margin_bin({0.30}) == MarginBin::strong);
  CHECK(margin_bin({0.15}) == MarginBin::medium);
  CHECK(margin_bin({0.149}) == MarginBin::weak);
  CHECK(margin_bin({1.0}) == MarginBin::strong);
  CHECK_THROWS_AS(margin_bin({0.0}), std::invalid_argument);
  CHECK_THROWS_AS(margin_bin({-0.2}), std::invalid_argument);
  for (int i = 1; i <= 1000; ++i) {
    const double d = i / 1000.0;
    const auto b = margin_bin({d});
    const int members = (d >= 0.30) + (d >= 0.15 && d < 0.30) + (d < 0.15);
    CHECK(members == 1);
    CHECK((b == MarginBin::strong) == (d >= 0.30));
    CHECK((b == MarginBin::weak) == (d < 0.15));
  }
  CHECK(parse_margin_bin(to_string(MarginBin::medium)) == MarginBin::medium);
}

TEST_CASE("strategy labels round trip") {
  CHECK(strategy_label({0}) == "direct");
  CHECK(strategy_label({7}) == "conceptual");
  CHECK(strategy_label({11}) == "strategy_11");
  for (std::uint32_t i = 0; i < 20; ++i) CHECK(parse_strategy(strategy_label({i})).index == i);
  CHECK_THROWS_AS(parse_strategy("lateral"), std::invalid_argument);
}
