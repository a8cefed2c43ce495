#include <doctest.h>

#include <stdexcept>

#include "cudpo/config.hpp"
#include "cudpo/rng.hpp"

using namespace cudpo;

TEST_CASE("config defaults validate") {
  RunConfig c;
  CHECK_NOTHROW(c.validate());
  CHECK(c.world.n_problems == 450);
  CHECK(c.world.k_strategies == 8);
  CHECK(c.schedule == TrainSchedule::two_phase);
  CHECK(c.supervision == Supervision::continuous);
}

TEST_CASE("sectioned and qualified keys") {
  const auto c = parse_run_config(
      "seed = 7   # master\n"
      "run_id = small\n"
      "[world]\n"
      "n_problems = 30\n"
      "\n"
      "[train]\n"
      "beta = 0.25\n"
      "schedule = all\n"
      "eval.top_k = 2\n");
  CHECK(c.seed == 7);
  CHECK(c.run_id == "small");
  CHECK(c.world.n_problems == 30);
  CHECK(c.beta == 0.25);
  CHECK(c.schedule == TrainSchedule::all_pairs);
  CHECK(c.top_k == 2);
}

TEST_CASE("unknown keys and bad values are rejected") {
  CHECK_THROWS_AS(parse_run_config("[world]\nnproblems = 3\n"), std::invalid_argument);
  CHECK_THROWS_AS(parse_run_config("[nowhere]\n"), std::invalid_argument);
  CHECK_THROWS_AS(parse_run_config("[world\n"), std::invalid_argument);
  CHECK_THROWS_AS(parse_run_config("[train]\nbeta\n"), std::invalid_argument);
  CHECK_THROWS_AS(parse_run_config("[train]\nbeta = fast\n"), std::invalid_argument);
  CHECK_THROWS_AS(parse_run_config("[train]\nschedule = three\n"), std::invalid_argument);
  CHECK_THROWS_AS(parse_run_config("run_id = ../escape\n"), std::invalid_argument);
  CHECK_THROWS_AS(parse_run_config("[train]\nbeta = -1\n").validate(), std::invalid_argument);
  CHECK_THROWS_AS(parse_run_config("[eval]\ntop_k = 9\n").validate(), std::invalid_argument);
}

TEST_CASE("overrides apply in order") {
  RunConfig c;
  apply_overrides(c, {"train.beta=0.3", "train.beta=0.4", "seed=9"});
  CHECK(c.beta == 0.4);
  CHECK(c.seed == 9);
  CHECK_THROWS_AS(apply_overrides(c, {"train.beta"}), std::invalid_argument);
  CHECK_THROWS_AS(apply_overrides(c, {"bogus.key=1"}), std::invalid_argument);
}

TEST_CASE("config text round trip") {
  RunConfig c;
  apply_overrides(c, {"world.n_problems=12", "judge.noiseless=true", "refine.slow_prob=0.1",
                      "train.supervision=binary", "train.batch_mode=minibatch"});
  const auto back = parse_run_config(c.to_text());
  CHECK(back.snapshot() == c.snapshot());
  CHECK(back.noiseless);
  CHECK(back.train.batch_mode == BatchMode::minibatch);
}

TEST_CASE("stage seeds derive from the master seed") {
  RunConfig a, b;
  b.seed = 2;
  CHECK(a.effective_world().seed == derive_key(a.seed, "world"));
  CHECK(a.effective_world().seed != b.effective_world().seed);
  CHECK(a.effective_sampling().seed != a.effective_world().seed);
  RunConfig n;
  n.noiseless = true;
  CHECK(n.effective_judge().stddev == 0.0);
}
