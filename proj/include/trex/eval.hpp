#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "trex/demos.hpp"
#include "trex/policy.hpp"
#include "trex/reward.hpp"

namespace trex {

using ObsRewardFn = std::function<double(std::span<const double>)>;

// ---------------------------------------------------------------------------
// Statistics

struct AffineFit {
  double slope = 1.0;
  double intercept = 0.0;
  double operator()(double x) const { return slope * x + intercept; }
};

// Least-squares y ~ slope * x + intercept. Throws ValidationError for fewer
// than two points; constant x gives slope 0 and intercept mean(y).
AffineFit fit_affine(std::span<const double> x, std::span<const double> y);
double sum_squared_error(const AffineFit& fit, std::span<const double> x, std::span<const double> y);

// NaN when either side has zero variance.
double pearson(std::span<const double> x, std::span<const double> y);
// Pearson on average ranks (ties share their mean rank).
double spearman(std::span<const double> x, std::span<const double> y);
std::vector<double> average_ranks(std::span<const double> values);

struct MeanCi {
  double mean = 0.0;
  double half_width = 0.0;  // 1.96 * sample std / sqrt(n)
};
MeanCi mean_ci95(std::span<const double> values);

// ---------------------------------------------------------------------------
// Reward-learning pipeline: train reward -> plan on the squashed ensemble
// reward -> evaluate on the ground truth.

struct PipelineConfig {
  TrainConfig train;
  double plan_gamma = 1.0;
  double plan_tol = 1e-10;
  int eval_episodes = 100;
  std::uint64_t eval_seed = 0;
};

struct PipelineResult {
  Ensemble ensemble;
  PlanResult plan;
  EvalStats eval;
};

PipelineResult run_pipeline(const GridworldSpec& spec, const RankedDataset& dataset, const PipelineConfig& cfg);

CellRewardFn learned_cell_reward(const GridworldSpec& spec, const Ensemble& ens);

// ---------------------------------------------------------------------------
// Extrapolation report

struct ExtrapolationRow {
  std::string id;
  bool is_demo = false;
  double gt_return = 0.0;
  double predicted = 0.0;
  double normalized = 0.0;
};

struct ExtrapolationReport {
  std::vector<ExtrapolationRow> rows;
  AffineFit fit;  // fitted on demonstrations only
  double demo_max_gt = 0.0;
  double pearson_all = 0.0;
  double spearman_all = 0.0;
  double pearson_heldout = 0.0;
  double spearman_heldout = 0.0;
};

// Predicted return = sum of the reward over each trajectory's rewarded
// observations. The affine normalization is fitted on `demos` and applied to
// every row. Throws ValidationError for fewer than two demos.
ExtrapolationReport extrapolation_report(const ObsRewardFn& reward, const std::vector<Trajectory>& demos,
                                         const std::vector<Trajectory>& heldout);

// Fresh rollouts from every checkpoint with gt_return <= max_return; ids are
// prefixed "heldout-".
std::vector<Trajectory> heldout_rollouts(const GridworldSpec& spec, const std::vector<Checkpoint>& checkpoints,
                                         int per_checkpoint, std::uint64_t seed, double max_return);

// CSV: id,kind,gt_return,predicted_return,normalized
std::string format_extrapolation_csv(const ExtrapolationReport& report);
// Metadata block (fit, correlations, normalization method) as key-value text.
std::string format_extrapolation_meta(const ExtrapolationReport& report);
// Scatter plot of normalized prediction vs ground truth, rendered only from the
// CSV text: y = x drawn solid across the demo range and dashed beyond it.
std::string render_scatter_svg(std::string_view csv);

// ---------------------------------------------------------------------------
// Noise sweep

struct NoiseSweepConfig {
  std::vector<double> levels = {1.0, 0.95, 0.85, 0.7, 0.5};
  int repetitions = 9;
  PipelineConfig pipeline;
  std::uint64_t seed = 0;
  int threads = 1;
};

struct NoiseSweepRun {
  double target = 0.0;
  int repetition = 0;
  long swaps = 0;
  double order_correctness = 0.0;
  double mean_return = 0.0;
};

struct NoiseSweepLevel {
  double target = 0.0;
  double mean_correctness = 0.0;
  double mean_return = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  int repetitions = 0;
};

struct NoiseSweepResult {
  std::vector<NoiseSweepRun> runs;
  std::vector<NoiseSweepLevel> levels;
};

// For every level and repetition: corrupt the sorted demos to the target order
// correctness, train the reward, re-plan and evaluate. Jobs run on a work queue
// of cfg.threads workers; results do not depend on the thread count.
NoiseSweepResult noise_sweep(const GridworldSpec& spec, const std::vector<Trajectory>& sorted_demos,
                             const NoiseSweepConfig& cfg);

std::uint64_t sweep_seed(std::uint64_t base, std::size_t level, int repetition);

// CSV: target,order_correctness,mean_return,ci_low,ci_high,repetitions
std::string format_noise_sweep_csv(const NoiseSweepResult& result);
// CSV: target,repetition,swaps,order_correctness,mean_return
std::string format_noise_runs_csv(const NoiseSweepResult& result);

// ---------------------------------------------------------------------------
// Saliency

// attribution[f] = |r(s) - r(s with feature f set to 0)|
std::vector<double> saliency(const ObsRewardFn& reward, std::span<const double> observation);
std::vector<double> saliency(const RewardNet& net, std::span<const double> observation);
std::vector<double> saliency(const Ensemble& ens, std::span<const double> observation);

struct ObservationRef {
  std::string trajectory_id;
  std::size_t index = 0;
  double reward = 0.0;
};

struct SaliencyReport {
  std::vector<double> mean_attribution;
  ObservationRef max_reward;
  ObservationRef min_reward;
};

SaliencyReport saliency_report(const ObsRewardFn& reward, const std::vector<Trajectory>& trajectories);
std::string format_saliency_csv(const SaliencyReport& report);

// ---------------------------------------------------------------------------
// Summary table

struct SummaryRow {
  std::string method;
  double mean = 0.0;
  double std = 0.0;
  int samples = 0;
};

// CSV: seed,episode,return
std::string format_eval_csv(std::uint64_t seed, const EvalStats& stats);
std::vector<double> parse_eval_csv(std::string_view csv);

// Reads demos.jsonl and eval_{trex,clone,oracle}.csv from run_dir. Throws
// ValidationError naming every missing file.
std::vector<SummaryRow> summary_table(const std::filesystem::path& run_dir);
std::string format_summary_csv(const std::vector<SummaryRow>& rows);
std::string format_summary_text(const std::vector<SummaryRow>& rows);

}  // namespace trex
