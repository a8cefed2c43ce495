// Command-line front end: one subcommand per pipeline stage plus `run`.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include "cudpo/config.hpp"
#include "cudpo/io.hpp"
#include "cudpo/pipeline.hpp"

namespace fs = std::filesystem;
using namespace cudpo;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void print_summary(const StageOutput& out) {
  for (const auto& [k, v] : out.summary) std::cout << k << '=' << v << '\n';
}

void print_files(const fs::path& dir, const StageOutput& out, std::string_view prefix) {
  for (const auto& f : out.files) {
    if (f.starts_with(prefix) && f.ends_with(".csv")) std::cout << io::read_text(dir / f);
  }
}

int report_error(std::string_view stage, std::string_view kind, std::string_view message, int code) {
  nlohmann::json j{{"status", "error"}, {"stage", stage}, {"kind", kind}, {"message", message}};
  std::cerr << j.dump() << '\n';
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Continuous-utility preference optimization laboratory"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_root = default_output_root().string();
  std::string run_id;
  std::optional<std::uint64_t> seed;
  unsigned jobs = 1;
  app.add_option("-c,--config", config_path, "Sectioned key = value config file")->check(CLI::ExistingFile);
  app.add_option("--set", overrides, "Override a setting, e.g. --set train.beta=0.2")->allow_extra_args(false);
  app.add_option("-o,--out", out_root, "Output root (default: $CUDPO_OUT or ./runs)");
  app.add_option("--run-id", run_id, "Run directory name under the output root");
  app.add_option("--seed", seed, "Master seed");
  app.add_option("-j,--jobs", jobs, "Worker threads; 1 = serial reference, 0 = all cores");

  auto* world = app.add_subcommand("world", "Generate the world and judge its original chains");
  auto* refine = app.add_subcommand("refine", "Refine eligible chains");
  auto* pairs = app.add_subcommand("pairs", "Build phase-1 and phase-2 preference pairs");
  bool stats_only = false;
  pairs->add_flag("--stats-only", stats_only, "Print statistics of the exported pairs.tsv without rebuilding");
  auto* train = app.add_subcommand("train", "Train the tabular policy");
  std::string phase;
  train->add_option("--phase", phase, "two, one or all")->check(CLI::IsMember({"two", "one", "all"}));
  auto* eval = app.add_subcommand("eval", "Evaluate the trained checkpoint");
  std::vector<std::string> metrics;
  eval->add_option("--metric", metrics, "alignment, winrate, ranking, bt, scaling or all")
      ->check(CLI::IsMember({"alignment", "winrate", "ranking", "bt", "scaling", "all"}));
  auto* theory = app.add_subcommand("theory", "Bound evaluators and simulations");
  std::vector<std::string> suites;
  std::optional<std::uint32_t> k;
  std::optional<std::uint64_t> trials;
  theory->add_option("--suite", suites, "coupon, efficiency, bounds, conflict or all")
      ->check(CLI::IsMember({"coupon", "efficiency", "bounds", "conflict", "all"}));
  theory->add_option("--k", k, "Strategies for the coupon suite");
  theory->add_option("--trials", trials, "Monte Carlo trials for the coupon and efficiency suites");
  auto* report = app.add_subcommand("report", "Assemble report.md from reports/*.csv");
  auto* run = app.add_subcommand("run", "Run every stage and write manifest.txt");
  auto* show = app.add_subcommand("config", "Print the effective configuration");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report_error("cli", "usage", e.what(), 2);
  }

  std::string stage = "config";
  try {
    RunConfig cfg;
    if (!config_path.empty()) cfg = load_run_config(config_path);
    for (const auto& o : overrides) {
      if (seed && o.starts_with("seed=")) throw UsageError("--seed conflicts with --set seed=...");
      if (!run_id.empty() && o.starts_with("run_id=")) throw UsageError("--run-id conflicts with --set run_id=...");
    }
    apply_overrides(cfg, overrides);
    if (seed) cfg.seed = *seed;
    if (!run_id.empty()) cfg.set("run_id", run_id);
    if (!phase.empty()) cfg.schedule = parse_train_schedule(phase);
    if (k) cfg.coupon_k = *k;
    if (trials) {
      cfg.coupon_trials = *trials;
      cfg.efficiency_trials = *trials;
    }
    if (theory->parsed()) {
      const bool has_coupon = suites.empty() || std::find(suites.begin(), suites.end(), "coupon") != suites.end() ||
                              std::find(suites.begin(), suites.end(), "all") != suites.end();
      if (k && !has_coupon) throw UsageError("--k only applies to the coupon suite");
    }
    cfg.validate();

    const fs::path dir = run_directory(cfg, out_root);
    if (show->parsed()) {
      std::cout << cfg.to_text();
      return 0;
    }
    if (run->parsed()) {
      stage = "run";
      try {
        const auto m = run_pipeline(cfg, out_root, jobs);
        std::cout << "run_dir=" << dir.string() << '\n' << "status=" << m.status << '\n';
        for (const auto& a : m.artifacts) std::cout << "artifact=" << a.path << ' ' << a.sha256 << '\n';
      } catch (const StageError& e) {
        return report_error(e.stage(), "stage", e.cause(), 1);
      }
      return 0;
    }

    fs::create_directories(dir / "reports");
    if (world->parsed()) {
      stage = "world";
      print_summary(stage_world(cfg, dir));
      stage = "score";
      print_summary(stage_score(cfg, dir, jobs));
    } else if (refine->parsed()) {
      stage = "refine";
      print_summary(stage_refine(cfg, dir, jobs));
    } else if (pairs->parsed()) {
      stage = "pairs";
      if (stats_only) {
        const auto chains_path = dir / "chains.tsv";
        if (!fs::exists(dir / "pairs.tsv")) throw std::runtime_error("missing upstream artifact pairs.tsv");
        std::optional<ChainIndex> index;
        if (fs::exists(chains_path)) index.emplace(load_chains(chains_path));
        std::cout << dataset_stats_csv(import_pairs(dir / "pairs.tsv", index ? &*index : nullptr));
      } else {
        print_summary(stage_pairs(cfg, dir, jobs));
      }
    } else if (train->parsed()) {
      stage = "train";
      print_summary(stage_train(cfg, dir, jobs));
    } else if (eval->parsed()) {
      stage = "eval";
      std::set<std::string> m(metrics.begin(), metrics.end());
      if (m.contains("all")) m.clear();
      const auto out = stage_eval(cfg, dir, jobs, m);
      print_summary(out);
      for (const auto& f : out.files) std::cout << "persisted=" << f << '\n';
    } else if (theory->parsed()) {
      stage = "theory";
      std::set<std::string> s(suites.begin(), suites.end());
      if (s.contains("all")) s.clear();
      print_files(dir, stage_theory(cfg, dir, jobs, s), "reports/theory_");
    } else if (report->parsed()) {
      stage = "report";
      stage_report(cfg, dir);
      std::cout << "report=" << (dir / "report.md").string() << '\n';
    }
    return 0;
  } catch (const UsageError& e) {
    return report_error("cli", "usage", e.what(), 2);
  } catch (const std::invalid_argument& e) {
    return report_error(stage, "invalid_argument", e.what(), 2);
  } catch (const std::exception& e) {
    return report_error(stage, "runtime", e.what(), 1);
  }
}
