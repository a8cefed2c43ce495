#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "cudpo/config.hpp"

namespace cudpo {

/// Stage names in execution order.
inline constexpr std::string_view kStages[] = {"world", "score", "refine", "pairs",
                                               "train", "eval",  "theory", "report"};

class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, const std::string& cause)
      : std::runtime_error(stage + ": " + cause), stage_(std::move(stage)), cause_(cause) {}
  const std::string& stage() const noexcept { return stage_; }
  const std::string& cause() const noexcept { return cause_; }

 private:
  std::string stage_;
  std::string cause_;
};

std::string sha256_hex(std::string_view data);
std::string sha256_file(const std::filesystem::path& path);

/// CUDPO_OUT when set and nonempty, else "runs".
std::filesystem::path default_output_root();
std::filesystem::path run_directory(const RunConfig& config, const std::filesystem::path& out_root);

/// Files a stage wrote (relative to the run directory) and headline values.
struct StageOutput {
  std::vector<std::string> files;
  std::vector<std::pair<std::string, std::string>> summary;
};

/// Every stage reads its inputs from artifacts already in `dir`, so a stage
/// re-run from persisted upstream files reproduces its outputs. A missing
/// upstream artifact is a std::runtime_error naming the file.
StageOutput stage_world(const RunConfig& config, const std::filesystem::path& dir);
StageOutput stage_score(const RunConfig& config, const std::filesystem::path& dir, unsigned jobs);
StageOutput stage_refine(const RunConfig& config, const std::filesystem::path& dir, unsigned jobs);
StageOutput stage_pairs(const RunConfig& config, const std::filesystem::path& dir, unsigned jobs);
StageOutput stage_train(const RunConfig& config, const std::filesystem::path& dir, unsigned jobs);

/// alignment, winrate, ranking, bt, scaling; empty = all.
StageOutput stage_eval(const RunConfig& config, const std::filesystem::path& dir, unsigned jobs,
                       const std::set<std::string>& metrics = {});
/// coupon, efficiency, bounds, conflict; empty = all.
StageOutput stage_theory(const RunConfig& config, const std::filesystem::path& dir, unsigned jobs,
                         const std::set<std::string>& suites = {});
StageOutput stage_report(const RunConfig& config, const std::filesystem::path& dir);

/// Dataset statistics of pairs.tsv as CSV text (all / phase1 / phase2 rows).
std::string dataset_stats_csv(std::span<const PreferencePair> pairs);

struct ArtifactDigest {
  std::string path;
  std::uintmax_t bytes = 0;
  std::string sha256;
};

struct RunManifest {
  std::string version;
  std::string run_id;
  /// "complete" or "incomplete".
  std::string status;
  std::string failed_stage;
  std::string error;
  unsigned jobs = 1;
  std::vector<std::pair<std::string, std::string>> config;
  std::vector<std::pair<std::string, double>> timings;
  std::vector<ArtifactDigest> artifacts;
};

void save_manifest(const RunManifest& manifest, const std::filesystem::path& path);
RunManifest load_manifest(const std::filesystem::path& path);
/// Paths whose current digest differs from the manifest (missing files too).
std::vector<std::string> verify_manifest(const std::filesystem::path& run_dir);

/// Runs every stage into run_directory(config, out_root) and writes
/// manifest.txt. A previous run in that directory is replaced; a nonempty
/// directory without a manifest is refused. On failure the manifest is
/// written with status "incomplete" and StageError is thrown.
RunManifest run_pipeline(const RunConfig& config, const std::filesystem::path& out_root, unsigned jobs = 1);

std::string_view library_version() noexcept;

}  // namespace cudpo
