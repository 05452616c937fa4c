#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "support.hpp"
#include "trex/errors.hpp"
#include "trex/kvfile.hpp"

using namespace trex;
using trex::testing::random_grid;

namespace {

GridworldSpec grid(int w, int h, double slip = 0.0) { return random_grid(w, h, 3, 11, 5, slip); }

PolicyFn always(Action a) {
  return [a](const EnvState&) {
    ActionDist d{};
    d[static_cast<std::size_t>(a)] = 1.0;
    return d;
  };
}

}  // namespace

TEST(Transition, OneByOneGridStaysPut) {
  auto spec = grid(1, 1);
  auto rng = make_rng(1);
  for (const auto a : kActions) {
    const auto next = transition(spec, {{0, 0}, 2}, a, rng);
    EXPECT_EQ(next.cell, (Cell{0, 0}));
    EXPECT_EQ(next.t, 3);
  }
}

TEST(Transition, DeterministicMovesAndWalls) {
  auto spec = grid(3, 3);
  auto rng = make_rng(1);
  EXPECT_EQ(transition(spec, {{0, 0}, 0}, Action::right, rng).cell, (Cell{1, 0}));
  EXPECT_EQ(transition(spec, {{0, 0}, 0}, Action::left, rng).cell, (Cell{0, 0}));
  EXPECT_EQ(transition(spec, {{0, 0}, 0}, Action::up, rng).cell, (Cell{0, 0}));
  EXPECT_EQ(transition(spec, {{1, 1}, 0}, Action::up, rng).cell, (Cell{1, 0}));
  EXPECT_EQ(transition(spec, {{1, 1}, 0}, Action::down, rng).cell, (Cell{1, 2}));
  EXPECT_EQ(transition(spec, {{2, 2}, 0}, Action::stay, rng).cell, (Cell{2, 2}));
}

TEST(Transition, ContractViolations) {
  auto spec = grid(3, 3);
  spec.terminal_cells = {{2, 2}};
  auto rng = make_rng(1);
  EXPECT_THROW(transition(spec, {{2, 2}, 0}, Action::up, rng), ContractViolation);
  EXPECT_THROW(transition(spec, {{0, 0}, spec.horizon}, Action::up, rng), ContractViolation);
}

TEST(Transition, SlipFrequenciesMatchSuccessorDistribution) {
  const auto spec = grid(3, 3, 0.3);
  const auto expected = successors(spec, {0, 1}, Action::right);
  double total = 0.0;
  for (const auto& s : expected) total += s.prob;
  EXPECT_NEAR(total, 1.0, 1e-15);

  auto rng = make_rng(5);
  std::map<Cell, int> counts;
  const int n = 200000;
  for (int k = 0; k < n; ++k) ++counts[transition(spec, {{0, 1}, 0}, Action::right, rng).cell];
  for (const auto& s : expected) {
    const double sd = std::sqrt(n * s.prob * (1 - s.prob));
    EXPECT_NEAR(counts[s.cell], n * s.prob, 4 * sd) << s.cell.x << "," << s.cell.y;
  }
}

TEST(GtReward, ZeroWeightsOneHotAndDotOracle) {
  auto spec = grid(4, 3);
  const auto oracle = spec;
  for (int c = 0; c < spec.num_cells(); ++c) {
    EXPECT_DOUBLE_EQ(gt_reward(spec, spec.cell_at(c)), trex::testing::dot_reward(oracle, spec.cell_at(c)));
  }
  spec.gt_weights.assign(3, 0.0);
  for (int c = 0; c < spec.num_cells(); ++c) EXPECT_EQ(gt_reward(spec, spec.cell_at(c)), 0.0);

  spec.gt_weights = {0.5, -2.0, 7.0};
  std::fill(spec.features.begin(), spec.features.begin() + 3, 0.0);
  spec.features[1] = 1.0;
  EXPECT_EQ(gt_reward(spec, Cell{0, 0}), -2.0);
  EXPECT_THROW(gt_reward(spec, Cell{4, 0}), ValidationError);
}

TEST(GtReward, RandomSpecsMatchIndependentDotProduct) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto spec = random_grid(5, 4, 2 + static_cast<int>(s % 5), 100 + s);
    for (int c = 0; c < spec.num_cells(); ++c) {
      EXPECT_EQ(gt_reward(spec, spec.cell_at(c)), trex::testing::dot_reward(spec, spec.cell_at(c)));
    }
  }
}

TEST(Rollout, HorizonOneGivesTwoObservations) {
  auto spec = grid(3, 3);
  spec.horizon = 1;
  const auto t = rollout(spec, always(Action::right), 3);
  EXPECT_EQ(t.length(), 2u);
  ASSERT_TRUE(t.actions.has_value());
  EXPECT_EQ(t.actions->size(), 1u);
}

TEST(Rollout, StayPolicyClosedForm) {
  const auto spec = grid(3, 3);
  const auto t = rollout(spec, always(Action::stay), 9);
  ASSERT_EQ(t.length(), static_cast<std::size_t>(spec.horizon + 1));
  for (const auto& o : t.observations) EXPECT_EQ(o, t.observations.front());
  EXPECT_DOUBLE_EQ(t.gt_return, spec.horizon * gt_reward(spec, spec.start_cells.front()));
}

TEST(Rollout, DeterministicAndConsistent) {
  const auto spec = make_extrap9();
  const auto uniform = [](const EnvState&) { return ActionDist{0.2, 0.2, 0.2, 0.2, 0.2}; };
  for (std::uint64_t seed = 0; seed < 25; ++seed) {
    const auto a = rollout(spec, uniform, seed);
    const auto b = rollout(spec, uniform, seed);
    EXPECT_EQ(a.observations, b.observations);
    EXPECT_EQ(a.cells, b.cells);
    EXPECT_EQ(a.gt_return, b.gt_return);
    EXPECT_NEAR(recompute_return(spec, a), a.gt_return, 1e-9);
    EXPECT_NO_THROW(check_trajectory(spec, a));
    for (const auto& o : a.observations) {
      ASSERT_EQ(o.size(), 6u);
      for (const double v : o) EXPECT_TRUE(v >= 0.0 && v <= 1.0);
    }
  }
}

TEST(Rollout, StopsAtTerminal) {
  auto spec = grid(3, 1);
  spec.terminal_cells = {{2, 0}};
  const auto t = rollout(spec, always(Action::right), 1);
  EXPECT_EQ(t.length(), 3u);
  EXPECT_EQ(t.cells.back(), (Cell{2, 0}));
}

TEST(CheckTrajectory, RejectsBrokenInvariants) {
  const auto spec = grid(3, 3);
  auto t = rollout(spec, always(Action::down), 2);
  auto bad = t;
  bad.gt_return += 1e-6;
  EXPECT_THROW(check_trajectory(spec, bad), ValidationError);
  bad = t;
  bad.actions->pop_back();
  EXPECT_THROW(check_trajectory(spec, bad), ValidationError);
  bad = t;
  bad.observations.resize(1);
  bad.cells.resize(1);
  bad.actions->clear();
  EXPECT_THROW(check_trajectory(spec, bad), ValidationError);
  bad = t;
  bad.observations[1][0] = 1.5;
  EXPECT_THROW(check_trajectory(spec, bad), ValidationError);
}

TEST(GridworldSpec, ValidationErrors) {
  auto spec = grid(3, 3);
  auto bad = spec;
  bad.num_features = 1;
  EXPECT_THROW(bad.validate(), ValidationError);
  bad = spec;
  bad.terminal_cells = spec.start_cells;
  EXPECT_THROW(bad.validate(), ValidationError);
  bad = spec;
  bad.slip_prob = 1.0;
  EXPECT_THROW(bad.validate(), ValidationError);
  bad = spec;
  bad.horizon = 0;
  EXPECT_THROW(bad.validate(), ValidationError);
  bad = spec;
  bad.features.pop_back();
  EXPECT_THROW(bad.validate(), ValidationError);
  bad = spec;
  bad.start_cells.clear();
  EXPECT_THROW(bad.validate(), ValidationError);
}

TEST(SpecFile, RoundTripIsExact) {
  const auto spec = make_extrap9();
  const auto again = parse_spec(format_spec(spec));
  EXPECT_EQ(again.features, spec.features);
  EXPECT_EQ(again.gt_weights, spec.gt_weights);
  EXPECT_EQ(again.start_cells, spec.start_cells);
  EXPECT_EQ(format_spec(again), format_spec(spec));
}

TEST(SpecFile, ShippedPresetMatchesBuiltIn) {
  const auto shipped = load_spec(std::filesystem::path(TREX_SOURCE_DIR) / "specs" / "extrap-9.spec");
  EXPECT_EQ(format_spec(shipped), format_spec(make_extrap9()));
  EXPECT_NO_THROW(load_spec(std::filesystem::path(TREX_SOURCE_DIR) / "specs" / "tiny-4.spec").validate());
}

TEST(SpecFile, ErrorsAreSpecific) {
  auto text = format_spec(random_grid(2, 2, 2, 1));
  EXPECT_THROW(parse_spec("format = trex-gridworld/9\n"), ValidationError);
  auto missing_cell = text.substr(0, text.rfind("phi."));
  EXPECT_THROW(parse_spec(missing_cell), ValidationError);
  EXPECT_THROW(parse_spec(text + "mystery = 1\n"), ValidationError);
}

TEST(Extrap9, LayoutFacts) {
  const auto spec = make_extrap9();
  EXPECT_EQ(spec.width, 9);
  EXPECT_EQ(spec.num_features, 6);
  EXPECT_EQ(spec.horizon, 60);
  EXPECT_EQ(spec.slip_prob, 0.1);
  EXPECT_EQ(gt_reward(spec, Cell{8, 8}), 1.0);
  EXPECT_EQ(spec.features_at({0, 0})[0], 0.0);
  EXPECT_EQ(spec.features_at({4, 4})[1], 1.0);
  EXPECT_EQ(spec.features_at({2, 2})[2], 1.0);
  for (int c = 0; c < spec.num_cells(); ++c) EXPECT_EQ(locate(spec, spec.features_at(spec.cell_at(c))), spec.cell_at(c));
}
