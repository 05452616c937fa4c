#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "trex/env.hpp"
#include "trex/policy.hpp"

namespace trex {

struct Checkpoint {
  long step = 0;  // demonstrator update count at snapshot time
  TabularPolicy policy;
};

// Trains an epsilon-greedy Q-learner on the ground-truth reward and snapshots
// it at update 0, every cfg.checkpoint_every updates, and at the final update:
// ceil(U / C) + 1 checkpoints in total. Each snapshot keeps the exploration
// rate in force at that moment.
std::vector<Checkpoint> train_demonstrator(const GridworldSpec& spec, const LearnerConfig& cfg,
                                           std::uint64_t seed);

// `per_checkpoint` rollouts per checkpoint; ids are "ckpt<step>-<k>".
std::vector<Trajectory> generate_demos(const GridworldSpec& spec,
                                       const std::vector<Checkpoint>& checkpoints,
                                       int per_checkpoint, std::uint64_t seed);

// Worst-k subset by ground-truth return: stage 1 keeps a third, stage 2 half,
// stage 3 everything. Output is sorted by return ascending (stable).
std::vector<Trajectory> stage_subset(const std::vector<Trajectory>& demos, int stage);

std::vector<Trajectory> sort_by_return(std::vector<Trajectory> demos);

enum class Provenance { ground_truth, time_order, human, corrupted };
const char* provenance_name(Provenance p);

// Index pair (i, j) asserting trajectories[i] is worse than trajectories[j].
using PreferencePair = std::pair<int, int>;

struct RankedDataset {
  std::vector<Trajectory> trajectories;
  std::vector<PreferencePair> pairs;
  Provenance provenance = Provenance::ground_truth;
  long swaps = 0;  // corrupted only
  double order_correctness = 1.0;

  // No self pairs, no pair in both orientations, indices in range; ground-truth
  // datasets must agree with the returns. Throws ValidationError.
  void validate() const;
};

// Fraction of pairs whose orientation agrees with the ground-truth returns
// (ties count one half).
double order_correctness(const std::vector<Trajectory>& trajectories,
                         const std::vector<PreferencePair>& pairs);

// All (i, j) with gt_return_i < gt_return_j; equal returns yield no pair.
RankedDataset rank_by_gt(std::vector<Trajectory> demos);

// All (i, j) with created_step_i < created_step_j. created_step must be distinct.
RankedDataset rank_by_time(std::vector<Trajectory> demos);

// `num_swaps` uniformly random adjacent transpositions (positions drawn with
// replacement) of a list sorted by return ascending; every pair is then derived
// from the corrupted order.
RankedDataset inject_swap_noise(std::vector<Trajectory> sorted_demos, long num_swaps,
                                std::uint64_t seed);

// Same random swap stream as inject_swap_noise, stopping at the first swap
// count whose order correctness is <= target (or at max_swaps).
RankedDataset inject_swap_noise_to_level(std::vector<Trajectory> sorted_demos, double target,
                                         std::uint64_t seed, long max_swaps = 1000000);

// Pairs ordered by (min index, max index) for an explicit permutation of
// positions: order[p] is the trajectory index ranked p-th (worst first).
std::vector<PreferencePair> pairs_from_order(const std::vector<int>& order);

enum class VoteLabel { i_better, j_better, not_sure };
const char* vote_label_name(VoteLabel v);
VoteLabel parse_vote_label(std::string_view name);

struct VoteRecord {
  PreferencePair pair;  // (i, j) as presented for labelling
  std::vector<VoteLabel> votes;
};

// Most-common label per unordered pair; ties for the top count and not_sure
// majorities are dropped. Records for the same pair in either orientation are
// merged first, so the output never contains both (i, j) and (j, i).
std::vector<PreferencePair> aggregate_votes(const std::vector<VoteRecord>& records);

RankedDataset rank_by_votes(std::vector<Trajectory> demos, const std::vector<VoteRecord>& records);

// demos.jsonl: first line {"schema":"trex-demos/1"}, then one trajectory per line.
std::string format_demos(const std::vector<Trajectory>& demos);
std::vector<Trajectory> parse_demos(std::string_view text, const GridworldSpec* spec = nullptr);
void save_demos(const std::filesystem::path& path, const std::vector<Trajectory>& demos);
std::vector<Trajectory> load_demos(const std::filesystem::path& path,
                                   const GridworldSpec* spec = nullptr);

// Rankings file: schema tag line, header lines, then one "i<j" pair per line.
std::string format_rankings(const RankedDataset& ds);
// Attaches `trajectories` (the demo file the indices refer to).
RankedDataset parse_rankings(std::string_view text, std::vector<Trajectory> trajectories);
void save_rankings(const std::filesystem::path& path, const RankedDataset& ds);
RankedDataset load_rankings(const std::filesystem::path& path, std::vector<Trajectory> trajectories);

// votes.jsonl style records, one {"i":..,"j":..,"votes":[..]} object per line.
std::string format_vote_records(const std::vector<VoteRecord>& records);
std::vector<VoteRecord> parse_vote_records(std::string_view text);

}  // namespace trex
