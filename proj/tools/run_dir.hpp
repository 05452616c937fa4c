#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "trex/kvfile.hpp"
#include "trex/policy.hpp"
#include "trex/reward.hpp"

namespace trex::cli {

// Effective settings for one invocation: defaults, then the config file, then flags.
struct RunConfig {
  LearnerConfig learner;
  int stage = 1;
  int per_checkpoint = 1;
  int heldout_per_checkpoint = 3;
  double heldout_max_ratio = 2.0;
  TrainConfig train;
  double plan_gamma = 1.0;
  double plan_tol = 1e-10;
  int eval_episodes = 100;
  std::vector<double> sweep_levels = {1.0, 0.95, 0.85, 0.7, 0.5};
  int sweep_repetitions = 9;
  int sweep_threads = 1;
  int target_votes = 6;

  // `format = trex-config/1`; keys are section.field (learner., demos., train.,
  // plan., eval., sweep., label.). Unknown keys are rejected.
  void apply(const KeyValueDoc& doc);
  KeyValueDoc to_doc() const;
  void validate() const;
};

std::string config_hash(const RunConfig& cfg);

// Accepts the path as given or with a ".spec" suffix appended.
std::filesystem::path resolve_spec_path(const std::filesystem::path& path);

// Throws ValidationError naming the file and the subcommand that produces it.
void require_artifact(const std::filesystem::path& path, const std::string& producer);

std::string content_hash(const std::filesystem::path& path);

// Schema tag of a run-directory artifact, empty if it carries none.
std::string artifact_schema(const std::filesystem::path& relative);

struct StepRecord {
  std::string command;
  std::map<std::string, std::string> seeds;
  std::string config_hash;
  std::vector<std::filesystem::path> inputs;
  std::vector<std::filesystem::path> outputs;
};

// Rewrites <run_dir>/manifest.json: the step entry for record.command plus a
// content hash and schema for every file in the run directory.
void update_manifest(const std::filesystem::path& run_dir, const StepRecord& record);

}  // namespace trex::cli
