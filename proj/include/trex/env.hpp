#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "trex/rng.hpp"

namespace trex {

enum class Action : std::uint8_t { up = 0, down = 1, left = 2, right = 3, stay = 4 };

inline constexpr std::size_t kNumActions = 5;
inline constexpr std::array<Action, kNumActions> kActions = {Action::up, Action::down, Action::left,
                                                             Action::right, Action::stay};

using ActionDist = std::array<double, kNumActions>;
using Observation = std::vector<double>;

const char* action_name(Action a);
Action parse_action(std::string_view name);

struct Cell {
  int x = 0;
  int y = 0;
  auto operator<=>(const Cell&) const = default;
};

// Gridworld MDP. Every cell carries a feature vector phi(cell) in [0,1]^F and
// the hidden ground-truth reward is linear: r(cell) = gt_weights . phi(cell).
// Row 0 is the top of the grid; `up` decreases y.
struct GridworldSpec {
  std::string name;
  int width = 1;
  int height = 1;
  int num_features = 2;
  std::vector<double> features;  // row-major cells, num_features values per cell
  std::vector<double> gt_weights;
  std::vector<Cell> start_cells;
  std::vector<Cell> terminal_cells;
  int horizon = 1;
  double slip_prob = 0.0;

  // Throws ValidationError when an invariant is broken.
  void validate() const;

  int num_cells() const { return width * height; }
  bool in_bounds(Cell c) const { return c.x >= 0 && c.y >= 0 && c.x < width && c.y < height; }
  int index(Cell c) const { return c.y * width + c.x; }
  Cell cell_at(int index) const { return {index % width, index / width}; }
  bool is_terminal(Cell c) const;
  std::span<const double> features_at(Cell c) const;
};

struct EnvState {
  Cell cell;
  int t = 0;
};

// Observation sequence produced by one episode. `cells` mirrors `observations`
// when the producer knows the grid positions (needed for replays); it is
// optional for externally supplied trajectories.
struct Trajectory {
  std::string id;
  std::vector<Observation> observations;
  std::vector<Cell> cells;
  std::optional<std::vector<Action>> actions;
  double gt_return = 0.0;
  long created_step = 0;

  std::size_t length() const { return observations.size(); }
  // Observations that carry reward: everything after the start state.
  std::span<const Observation> rewarded() const {
    return std::span<const Observation>(observations).subspan(observations.empty() ? 0 : 1);
  }
};

using PolicyFn = std::function<ActionDist(const EnvState&)>;

Cell apply_move(const GridworldSpec& spec, Cell from, Action action);

// One environment step. With probability slip_prob the chosen move is replaced
// by one drawn uniformly from all actions; moves into walls leave the cell
// unchanged. Throws ContractViolation from a terminal cell or at the horizon.
EnvState transition(const GridworldSpec& spec, const EnvState& state, Action action, Rng& rng);

struct Successor {
  Cell cell;
  double prob;
};
// Exact successor distribution of `transition` (duplicates merged, in
// first-seen order of the action list).
std::vector<Successor> successors(const GridworldSpec& spec, Cell from, Action action);

// r(cell) = w . phi(cell). Throws ValidationError for an out-of-bounds cell.
double gt_reward(const GridworldSpec& spec, Cell cell);
double gt_reward(const GridworldSpec& spec, std::span<const double> observation);

Action sample_action(const ActionDist& dist, Rng& rng);

// Runs one episode from a uniformly chosen start cell until a terminal cell or
// the horizon. Deterministic in (spec, policy, seed).
Trajectory rollout(const GridworldSpec& spec, const PolicyFn& policy, std::uint64_t seed);

// Sum of w . phi(s) over every observation after the first.
double recompute_return(const GridworldSpec& spec, const Trajectory& traj);

// Checks length, action count, feature dimensions/range and (within 1e-9) the
// stored ground-truth return. Throws ValidationError.
void check_trajectory(const GridworldSpec& spec, const Trajectory& traj);

// Recovers the grid cell of an observation by exact feature match; nullopt if
// no cell or more than one cell matches.
std::optional<Cell> locate(const GridworldSpec& spec, std::span<const double> observation);

// Spec file I/O (`format = trex-gridworld/1`).
GridworldSpec parse_spec(std::string_view text);
std::string format_spec(const GridworldSpec& spec);
GridworldSpec load_spec(const std::filesystem::path& path);
void save_spec(const GridworldSpec& spec, const std::filesystem::path& path);

// Built-in benchmark: 9x9 grid, six features (goal closeness, hazard, coin and
// three fixed pseudo-random distractors), slip 0.1, horizon 60.
GridworldSpec make_extrap9();

}  // namespace trex
