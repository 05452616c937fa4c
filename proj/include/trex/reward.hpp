#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "trex/demos.hpp"
#include "trex/kvfile.hpp"
#include "trex/nn.hpp"

namespace trex {

struct TrainConfig {
  int num_pairs = 5000;
  int segment_len_min = 10;
  int segment_len_max = 30;
  double lr = 1e-4;
  int batch_size = 64;
  int train_steps = 10000;
  int ensemble_size = 5;
  std::uint64_t seed = 0;
  bool time_constrained = true;
  double gamma = 1.0;
  double weight_decay = 0.0;
  std::vector<int> hidden = {64, 64};
  int log_every = 100;
  int threads = 1;

  void validate() const;
  // Keys are the field names; unknown keys are rejected.
  void apply(const KeyValueDoc& doc);
  void write(KeyValueDoc& doc, std::string_view prefix = "") const;
};

// Two equal-length segments of rewarded observations. seg_i comes from the
// less-preferred trajectory of the sampled ranking pair and seg_j from the
// preferred one; `label` names the preferred side (0 = seg_i, 1 = seg_j).
// The spans view the dataset's trajectories and must not outlive them.
struct SegmentPair {
  std::span<const Observation> seg_i;
  std::span<const Observation> seg_j;
  int traj_i = -1;
  int traj_j = -1;
  std::size_t t_i = 0;
  std::size_t t_j = 0;
  int label = 1;

  // Start index of the preferred / non-preferred segment.
  std::size_t preferred_start() const { return label == 1 ? t_j : t_i; }
  std::size_t other_start() const { return label == 1 ? t_i : t_j; }
  SegmentPair swapped() const;
};

// Picks a ranking pair uniformly, then L uniform in
// [segment_len_min, min(segment_len_max, shortest rewarded length)], then the
// less-preferred start, then the preferred start (>= the first when
// time_constrained). Pairs too short for segment_len_min are redrawn up to 100
// times before a ValidationError.
SegmentPair sample_pair(const RankedDataset& dataset, const TrainConfig& cfg, Rng& rng);

// sum_k gamma^k r(s_k)
double predicted_return(const RewardNet& net, std::span<const Observation> segment, double gamma);

// P(J_i < J_j) = exp(J_j) / (exp(J_i) + exp(J_j)), evaluated as a logistic of
// the return difference so neither exponential can overflow.
double pair_prob(const RewardNet& net, const SegmentPair& pair, double gamma);

struct LossGrad {
  double loss = 0.0;
  Gradients grad;
  double accuracy = 0.0;  // fraction of pairs whose preferred side has the larger return
};

// Cross-entropy of the preferred label: softplus(J_other - J_preferred).
LossGrad pair_loss(const RewardNet& net, const SegmentPair& pair, double gamma);

// Mean of pair_loss over the batch, pair by pair.
LossGrad batch_loss(const RewardNet& net, std::span<const SegmentPair> pairs, double gamma);

// Maps every rewarded observation of a dataset to a row of a table of distinct
// observations. Training evaluates the net once per distinct row in a batch
// and folds the per-pair gradients onto those rows.
class ObservationIndex {
 public:
  explicit ObservationIndex(const std::vector<Trajectory>& trajectories);

  std::size_t num_unique() const { return static_cast<std::size_t>(table_.rows()); }
  const Batch& table() const { return table_; }
  // Row ids of trajectory `traj`'s rewarded observations.
  const std::vector<int>& ids(std::size_t traj) const { return ids_[traj]; }

 private:
  Batch table_;
  std::vector<std::vector<int>> ids_;
};

// Same value as batch_loss, computed over distinct observations only.
LossGrad batch_loss_dedup(const RewardNet& net, const ObservationIndex& index,
                          std::span<const SegmentPair> pairs, double gamma);

struct Ensemble {
  std::vector<RewardNet> nets;
  std::vector<double> norm_scale;
  std::uint64_t probe_hash = 0;
  TrainConfig cfg;

  std::size_t size() const { return nets.size(); }
};

struct TrainLogRow {
  int net = 0;
  int step = 0;
  double mean_loss = 0.0;
  double pair_accuracy = 0.0;
};

// All observations of all dataset trajectories, in order.
std::vector<Observation> probe_set(const RankedDataset& dataset);
std::uint64_t probe_fingerprint(std::span<const Observation> probe);

// Population standard deviation of the net's outputs over the probe set.
double output_std(const RewardNet& net, std::span<const Observation> probe);

// Trains cfg.ensemble_size nets, each on its own pool of cfg.num_pairs sampled
// segment pairs with its own seed, for cfg.train_steps Adam minibatch steps.
// Throws ValidationError on an empty pair pool and std::runtime_error
// ("degenerate reward net") when a net's probe std is below 1e-8.
Ensemble train_reward(const RankedDataset& dataset, const TrainConfig& cfg,
                      std::vector<TrainLogRow>* log = nullptr);

// mean_k forward(net_k, s) / norm_scale_k
double ensemble_reward(const Ensemble& ens, std::span<const double> observation);
double squashed_reward(const Ensemble& ens, std::span<const double> observation);
double sigmoid(double x);
double softplus(double x);

// Fraction of dataset pairs ordered correctly by full-trajectory predicted return.
double ranking_accuracy(const std::function<double(std::span<const double>)>& reward,
                        const RankedDataset& dataset);

// Directory layout: <dir>/meta plus <dir>/net_<k>.model.
void save_ensemble(const std::filesystem::path& dir, const Ensemble& ens);
Ensemble load_ensemble(const std::filesystem::path& dir);

std::string format_train_log(const std::vector<TrainLogRow>& log);

struct GradCheckTrial {
  std::vector<int> layer_sizes;
  int pairs = 0;
  double max_rel_error = 0.0;
};

// Analytic batch_loss gradients against central differences on random nets
// and random segment batches. Relative errors use a denominator floor of 1e-6.
// Draws with a hidden pre-activation within 10 * step of zero are redrawn.
std::vector<GradCheckTrial> gradient_check(int trials, std::uint64_t seed, double step = 1e-5);

}  // namespace trex
