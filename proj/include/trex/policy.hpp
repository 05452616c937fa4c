#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include "trex/env.hpp"

namespace trex {

// Action distributions over the gridworld state space. A stationary policy
// has one row per cell; a time-indexed policy has one row per (t, cell) for
// t in [0, horizon).
struct TabularPolicy {
  int width = 0;
  int height = 0;
  int horizon = 0;
  bool time_indexed = false;
  std::vector<ActionDist> table;

  static TabularPolicy uniform(const GridworldSpec& spec);
  static TabularPolicy stationary(const GridworldSpec& spec);
  static TabularPolicy timed(const GridworldSpec& spec);

  std::size_t row(Cell cell, int t) const;
  const ActionDist& at(Cell cell, int t) const { return table[row(cell, t)]; }
  ActionDist& at(Cell cell, int t) { return table[row(cell, t)]; }
  ActionDist operator()(const EnvState& s) const { return at(s.cell, s.t); }
  PolicyFn as_fn() const;

  // Shape matches the spec and every non-terminal row sums to 1 within 1e-9.
  void validate(const GridworldSpec& spec) const;
};

using CellRewardFn = std::function<double(Cell)>;

// Value table over the time-augmented state (t, cell), t in [0, horizon];
// index = t * num_cells + cell index. Row t = horizon and terminal cells are 0.
struct PlanResult {
  TabularPolicy policy;
  std::vector<double> values;
  int sweeps = 0;
  double residual = 0.0;

  double value(const GridworldSpec& spec, Cell cell, int t) const {
    return values[static_cast<std::size_t>(t * spec.num_cells() + spec.index(cell))];
  }
};

// Synchronous value iteration on the episode MDP whose state is (cell, t):
//   V(c, t) = max_a sum_{c'} P(c'|c,a) [ r(c') + gamma V(c', t+1) ].
// Sweeps start from V = 0 and stop once the max-norm change is <= stop_tol.
// The greedy policy breaks ties in action order up < down < left < right < stay.
// `on_sweep`, when set, sees the value table after every sweep.
// Throws std::runtime_error when max_sweeps is exhausted.
PlanResult value_iteration(const GridworldSpec& spec, const CellRewardFn& reward, double gamma,
                           double stop_tol, int max_sweeps = 10000,
                           const std::function<void(int, std::span<const double>)>& on_sweep = {});

struct LearnerConfig {
  long total_updates = 35000;
  long checkpoint_every = 1000;
  double epsilon_start = 1.0;
  double epsilon_end = 0.05;
  double learning_rate = 0.1;
  double gamma = 0.95;

  void validate() const;
  double epsilon_at(long update) const;
};

// Tabular epsilon-greedy Q-learning over cells, one update per environment step.
class QLearner {
 public:
  QLearner(const GridworldSpec& spec, CellRewardFn reward, LearnerConfig cfg, std::uint64_t seed);

  void run(long updates);
  long updates_done() const { return updates_; }
  double epsilon() const { return cfg_.epsilon_at(updates_); }

  // Epsilon-greedy snapshot of the current Q table; greedy mass is split
  // evenly among tied maximizers.
  TabularPolicy snapshot(double epsilon) const;
  const std::vector<double>& q() const { return q_; }

 private:
  const GridworldSpec* spec_;
  CellRewardFn reward_;
  LearnerConfig cfg_;
  Rng rng_;
  std::vector<double> q_;
  EnvState state_;
  long updates_ = 0;

  void reset_episode();
};

// Trains for cfg.total_updates and returns the greedy policy.
TabularPolicy q_learning(const GridworldSpec& spec, const CellRewardFn& reward,
                         const LearnerConfig& cfg, std::uint64_t seed);

// Naive behavioral cloning of the highest-return demonstration: majority
// action per visited cell, uniform elsewhere. Missing action labels are
// inferred from consecutive cells, which needs slip_prob == 0.
TabularPolicy clone_best_demo(const GridworldSpec& spec, const std::vector<Trajectory>& demos);

struct EvalStats {
  double mean = 0.0;
  double std = 0.0;
  double min = 0.0;
  double max = 0.0;
  std::vector<double> returns;
};

EvalStats evaluate_policy(const GridworldSpec& spec, const PolicyFn& policy, int episodes,
                          std::uint64_t seed);
inline EvalStats evaluate_policy(const GridworldSpec& spec, const TabularPolicy& policy,
                                 int episodes, std::uint64_t seed) {
  return evaluate_policy(spec, policy.as_fn(), episodes, seed);
}

// Policy file: `trex-policy/1` header, one row per table entry, then an
// optional value table.
std::string format_policy(const TabularPolicy& policy, std::span<const double> values = {});
TabularPolicy parse_policy(std::string_view text, std::vector<double>* values = nullptr);
void save_policy(const std::filesystem::path& path, const TabularPolicy& policy,
                 std::span<const double> values = {});
TabularPolicy load_policy(const std::filesystem::path& path, std::vector<double>* values = nullptr);

}  // namespace trex
