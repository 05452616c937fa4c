#include "trex/policy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>

#include "trex/errors.hpp"
#include "trex/kvfile.hpp"

namespace trex {

namespace {

constexpr std::string_view kPolicySchema = "trex-policy/1";

ActionDist uniform_dist() {
  ActionDist d;
  d.fill(1.0 / static_cast<double>(kNumActions));
  return d;
}

ActionDist one_hot(std::size_t a) {
  ActionDist d{};
  d[a] = 1.0;
  return d;
}

}  // namespace

TabularPolicy TabularPolicy::stationary(const GridworldSpec& spec) {
  TabularPolicy p;
  p.width = spec.width;
  p.height = spec.height;
  p.horizon = spec.horizon;
  p.time_indexed = false;
  p.table.assign(static_cast<std::size_t>(spec.num_cells()), one_hot(0));
  return p;
}

TabularPolicy TabularPolicy::timed(const GridworldSpec& spec) {
  TabularPolicy p = stationary(spec);
  p.time_indexed = true;
  p.table.assign(static_cast<std::size_t>(spec.num_cells() * spec.horizon), one_hot(0));
  return p;
}

TabularPolicy TabularPolicy::uniform(const GridworldSpec& spec) {
  TabularPolicy p = stationary(spec);
  std::fill(p.table.begin(), p.table.end(), uniform_dist());
  return p;
}

std::size_t TabularPolicy::row(Cell cell, int t) const {
  if (cell.x < 0 || cell.y < 0 || cell.x >= width || cell.y >= height) {
    throw ContractViolation("policy lookup: cell out of bounds");
  }
  const auto c = static_cast<std::size_t>(cell.y * width + cell.x);
  if (!time_indexed) return c;
  if (t < 0 || t >= horizon) throw ContractViolation("policy lookup: t outside [0, horizon)");
  return static_cast<std::size_t>(t) * static_cast<std::size_t>(width * height) + c;
}

PolicyFn TabularPolicy::as_fn() const {
  return [copy = *this](const EnvState& s) { return copy(s); };
}

void TabularPolicy::validate(const GridworldSpec& spec) const {
  if (width != spec.width || height != spec.height || horizon != spec.horizon) {
    throw ValidationError("policy shape does not match the gridworld");
  }
  const auto cells = static_cast<std::size_t>(spec.num_cells());
  const auto expected = time_indexed ? cells * static_cast<std::size_t>(horizon) : cells;
  if (table.size() != expected) throw ValidationError("policy table has the wrong row count");
  for (std::size_t r = 0; r < table.size(); ++r) {
    if (spec.is_terminal(spec.cell_at(static_cast<int>(r % cells)))) continue;
    double sum = 0.0;
    for (const double p : table[r]) {
      if (!(p >= 0.0)) throw ValidationError("policy has a negative or NaN probability");
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw ValidationError("policy row does not sum to 1");
  }
}

PlanResult value_iteration(const GridworldSpec& spec, const CellRewardFn& reward, double gamma,
                           double stop_tol, int max_sweeps,
                           const std::function<void(int, std::span<const double>)>& on_sweep) {
  if (!(stop_tol > 0.0)) throw ContractViolation("value_iteration: stop_tol must be positive");
  if (!(gamma > 0.0 && gamma <= 1.0)) {
    throw ContractViolation("value_iteration: gamma must be in (0, 1]");
  }
  const int cells = spec.num_cells();
  const int horizon = spec.horizon;

  std::vector<double> r(static_cast<std::size_t>(cells));
  for (int c = 0; c < cells; ++c) r[static_cast<std::size_t>(c)] = reward(spec.cell_at(c));

  // Successor lists are time-independent; precompute them once per (cell, action).
  std::vector<std::vector<Successor>> succ(static_cast<std::size_t>(cells) * kNumActions);
  for (int c = 0; c < cells; ++c) {
    for (std::size_t a = 0; a < kNumActions; ++a) {
      succ[static_cast<std::size_t>(c) * kNumActions + a] = successors(spec, spec.cell_at(c), kActions[a]);
    }
  }

  const auto at = [cells](int t, int c) { return static_cast<std::size_t>(t * cells + c); };
  auto q_value = [&](const std::vector<double>& v, int t, int c, std::size_t a) {
    double q = 0.0;
    for (const auto& s : succ[static_cast<std::size_t>(c) * kNumActions + a]) {
      const int nc = spec.index(s.cell);
      q += s.prob * (r[static_cast<std::size_t>(nc)] + gamma * v[at(t + 1, nc)]);
    }
    return q;
  };

  PlanResult result;
  result.values.assign(static_cast<std::size_t>((horizon + 1) * cells), 0.0);
  std::vector<double> next = result.values;
  bool converged = false;
  for (int sweep = 1; sweep <= max_sweeps; ++sweep) {
    double delta = 0.0;
    for (int t = 0; t < horizon; ++t) {
      for (int c = 0; c < cells; ++c) {
        if (spec.is_terminal(spec.cell_at(c))) continue;
        double best = -std::numeric_limits<double>::infinity();
        for (std::size_t a = 0; a < kNumActions; ++a) best = std::max(best, q_value(result.values, t, c, a));
        delta = std::max(delta, std::abs(best - result.values[at(t, c)]));
        next[at(t, c)] = best;
      }
    }
    result.values.swap(next);
    result.sweeps = sweep;
    result.residual = delta;
    if (on_sweep) on_sweep(sweep, result.values);
    if (delta <= stop_tol) {
      converged = true;
      break;
    }
  }
  if (!converged) {
    throw std::runtime_error("value_iteration: no convergence within " +
                             std::to_string(max_sweeps) + " sweeps");
  }

  result.policy = TabularPolicy::timed(spec);
  for (int t = 0; t < horizon; ++t) {
    for (int c = 0; c < cells; ++c) {
      std::size_t best_a = 0;
      double best = q_value(result.values, t, c, 0);
      for (std::size_t a = 1; a < kNumActions; ++a) {
        const double q = q_value(result.values, t, c, a);
        if (q > best) {
          best = q;
          best_a = a;
        }
      }
      result.policy.at(spec.cell_at(c), t) = one_hot(best_a);
    }
  }
  return result;
}

void LearnerConfig::validate() const {
  if (total_updates < 0) throw ValidationError("total_updates must be >= 0");
  if (checkpoint_every < 1) throw ValidationError("checkpoint_every must be >= 1");
  if (total_updates > 0 && checkpoint_every > total_updates) {
    throw ValidationError("checkpoint_every (" + std::to_string(checkpoint_every) +
                          ") exceeds total_updates (" + std::to_string(total_updates) + ")");
  }
  if (!(epsilon_start >= 0.0 && epsilon_start <= 1.0 && epsilon_end >= 0.0 && epsilon_end <= 1.0)) {
    throw ValidationError("epsilon schedule must stay in [0,1]");
  }
  if (!(learning_rate > 0.0 && learning_rate <= 1.0)) throw ValidationError("learning_rate must be in (0,1]");
  if (!(gamma >= 0.0 && gamma < 1.0)) throw ValidationError("learner gamma must be in [0,1)");
}

double LearnerConfig::epsilon_at(long update) const {
  if (total_updates <= 0) return epsilon_start;
  const double frac = std::min(1.0, static_cast<double>(update) / static_cast<double>(total_updates));
  return epsilon_start + (epsilon_end - epsilon_start) * frac;
}

QLearner::QLearner(const GridworldSpec& spec, CellRewardFn reward, LearnerConfig cfg,
                   std::uint64_t seed)
    : spec_(&spec),
      reward_(std::move(reward)),
      cfg_(cfg),
      rng_(make_rng(seed)),
      q_(static_cast<std::size_t>(spec.num_cells()) * kNumActions, 0.0) {
  cfg_.validate();
  reset_episode();
}

void QLearner::reset_episode() {
  state_ = {spec_->start_cells[uniform_index(rng_, spec_->start_cells.size())], 0};
}

void QLearner::run(long updates) {
  const auto& spec = *spec_;
  for (long u = 0; u < updates; ++u) {
    const auto s = static_cast<std::size_t>(spec.index(state_.cell));
    const double eps = cfg_.epsilon_at(updates_);
    std::size_t a = 0;
    if (uniform01(rng_) < eps) {
      a = uniform_index(rng_, kNumActions);
    } else {
      const double* row = &q_[s * kNumActions];
      const double best = *std::max_element(row, row + kNumActions);
      std::size_t ties[kNumActions];
      std::size_t n = 0;
      for (std::size_t k = 0; k < kNumActions; ++k) {
        if (row[k] == best) ties[n++] = k;
      }
      a = ties[n == 1 ? 0 : uniform_index(rng_, n)];
    }
    const EnvState next = transition(spec, state_, kActions[a], rng_);
    const double r = reward_(next.cell);
    const auto ns = static_cast<std::size_t>(spec.index(next.cell));
    double target = r;
    if (!spec.is_terminal(next.cell)) {
      target += cfg_.gamma * *std::max_element(&q_[ns * kNumActions], &q_[ns * kNumActions] + kNumActions);
    }
    double& q = q_[s * kNumActions + a];
    q += cfg_.learning_rate * (target - q);
    ++updates_;
    state_ = next;
    if (spec.is_terminal(state_.cell) || state_.t >= spec.horizon) reset_episode();
  }
}

TabularPolicy QLearner::snapshot(double epsilon) const {
  const auto& spec = *spec_;
  TabularPolicy p = TabularPolicy::stationary(spec);
  for (int c = 0; c < spec.num_cells(); ++c) {
    const double* row = &q_[static_cast<std::size_t>(c) * kNumActions];
    const double best = *std::max_element(row, row + kNumActions);
    const auto n = static_cast<double>(std::count(row, row + kNumActions, best));
    ActionDist d;
    for (std::size_t a = 0; a < kNumActions; ++a) {
      d[a] = epsilon / static_cast<double>(kNumActions) + (row[a] == best ? (1.0 - epsilon) / n : 0.0);
    }
    p.table[static_cast<std::size_t>(c)] = d;
  }
  return p;
}

TabularPolicy q_learning(const GridworldSpec& spec, const CellRewardFn& reward,
                         const LearnerConfig& cfg, std::uint64_t seed) {
  QLearner learner(spec, reward, cfg, seed);
  learner.run(cfg.total_updates);
  return learner.snapshot(0.0);
}

TabularPolicy clone_best_demo(const GridworldSpec& spec, const std::vector<Trajectory>& demos) {
  if (demos.empty()) throw ContractViolation("clone_best_demo: no demonstrations");
  const auto best = std::max_element(demos.begin(), demos.end(), [](const auto& a, const auto& b) {
    return a.gt_return < b.gt_return;
  });
  const Trajectory& demo = *best;

  std::vector<Cell> cells = demo.cells;
  if (cells.empty()) {
    for (const auto& obs : demo.observations) {
      const auto c = locate(spec, obs);
      if (!c) throw ValidationError("clone_best_demo: observation does not identify a unique cell");
      cells.push_back(*c);
    }
  }
  if (!demo.actions && spec.slip_prob > 0.0) {
    throw ValidationError("clone_best_demo: actions required (transitions are stochastic)");
  }

  std::vector<std::array<int, kNumActions>> counts(static_cast<std::size_t>(spec.num_cells()),
                                                   std::array<int, kNumActions>{});
  for (std::size_t k = 0; k + 1 < cells.size(); ++k) {
    std::size_t a = kNumActions - 1;  // stay
    if (demo.actions) {
      a = static_cast<std::size_t>((*demo.actions)[k]);
    } else {
      for (std::size_t cand = 0; cand < kNumActions; ++cand) {
        if (apply_move(spec, cells[k], kActions[cand]) == cells[k + 1] &&
            (cells[k] != cells[k + 1] || kActions[cand] == Action::stay)) {
          a = cand;
          break;
        }
      }
      if (apply_move(spec, cells[k], kActions[a]) != cells[k + 1]) {
        throw ValidationError("clone_best_demo: consecutive cells are not adjacent");
      }
    }
    ++counts[static_cast<std::size_t>(spec.index(cells[k]))][a];
  }

  TabularPolicy p = TabularPolicy::uniform(spec);
  for (int c = 0; c < spec.num_cells(); ++c) {
    const auto& row = counts[static_cast<std::size_t>(c)];
    const auto top = std::max_element(row.begin(), row.end());
    if (*top == 0) continue;
    p.table[static_cast<std::size_t>(c)] = one_hot(static_cast<std::size_t>(top - row.begin()));
  }
  return p;
}

EvalStats evaluate_policy(const GridworldSpec& spec, const PolicyFn& policy, int episodes,
                          std::uint64_t seed) {
  if (episodes < 1) throw ContractViolation("evaluate_policy: episodes must be >= 1");
  EvalStats stats;
  stats.returns.reserve(static_cast<std::size_t>(episodes));
  for (int e = 0; e < episodes; ++e) {
    stats.returns.push_back(rollout(spec, policy, derive_seed(seed, static_cast<std::uint64_t>(e))).gt_return);
  }
  double sum = 0.0;
  for (const double r : stats.returns) sum += r;
  stats.mean = sum / episodes;
  double ss = 0.0;
  for (const double r : stats.returns) ss += (r - stats.mean) * (r - stats.mean);
  stats.std = episodes > 1 ? std::sqrt(ss / (episodes - 1)) : 0.0;
  stats.min = *std::min_element(stats.returns.begin(), stats.returns.end());
  stats.max = *std::max_element(stats.returns.begin(), stats.returns.end());
  return stats;
}

std::string format_policy(const TabularPolicy& policy, std::span<const double> values) {
  std::ostringstream out;
  out << kPolicySchema << '\n';
  out << "width " << policy.width << " height " << policy.height << " horizon " << policy.horizon
      << " time_indexed " << (policy.time_indexed ? 1 : 0) << '\n';
  out << "# x y t p_up p_down p_left p_right p_stay\n";
  const auto cells = static_cast<std::size_t>(policy.width * policy.height);
  for (std::size_t r = 0; r < policy.table.size(); ++r) {
    const auto c = r % cells;
    out << c % static_cast<std::size_t>(policy.width) << ' ' << c / static_cast<std::size_t>(policy.width) << ' ';
    if (policy.time_indexed) {
      out << r / cells;
    } else {
      out << '*';
    }
    for (const double p : policy.table[r]) out << ' ' << format_double(p);
    out << '\n';
  }
  if (!values.empty()) {
    out << "values " << values.size() << '\n';
    out << "# t x y value\n";
    for (std::size_t i = 0; i < values.size(); ++i) {
      const auto c = i % cells;
      out << i / cells << ' ' << c % static_cast<std::size_t>(policy.width) << ' '
          << c / static_cast<std::size_t>(policy.width) << ' ' << format_double(values[i]) << '\n';
    }
  }
  return out.str();
}

TabularPolicy parse_policy(std::string_view text, std::vector<double>* values) {
  std::istringstream in{std::string(text)};
  std::string line;
  if (!std::getline(in, line) || line != kPolicySchema) {
    throw ValidationError("policy file: expected schema tag '" + std::string(kPolicySchema) + "'");
  }
  TabularPolicy p;
  std::string k1, k2, k3, k4;
  int ti = 0;
  if (!std::getline(in, line)) throw ValidationError("policy file: missing shape line");
  std::istringstream shape(line);
  if (!(shape >> k1 >> p.width >> k2 >> p.height >> k3 >> p.horizon >> k4 >> ti) || k1 != "width") {
    throw ValidationError("policy file: malformed shape line");
  }
  p.time_indexed = ti != 0;
  const auto cells = static_cast<std::size_t>(p.width * p.height);
  const auto rows = p.time_indexed ? cells * static_cast<std::size_t>(p.horizon) : cells;
  p.table.resize(rows);
  std::size_t r = 0;
  while (r < rows && std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream row(line);
    std::string x, y, t;
    row >> x >> y >> t;
    for (auto& prob : p.table[r]) {
      std::string tok;
      if (!(row >> tok)) throw ValidationError("policy file: short row");
      prob = parse_double(tok, "policy probability");
    }
    ++r;
  }
  if (r != rows) throw ValidationError("policy file: truncated table");
  if (values) {
    values->clear();
    while (std::getline(in, line)) {
      if (line.empty() || line[0] == '#' || line.rfind("values", 0) == 0) continue;
      std::istringstream row(line);
      std::string t, x, y, v;
      if (!(row >> t >> x >> y >> v)) throw ValidationError("policy file: malformed value row");
      values->push_back(parse_double(v, "value"));
    }
  }
  return p;
}

void save_policy(const std::filesystem::path& path, const TabularPolicy& policy,
                 std::span<const double> values) {
  write_file(path, format_policy(policy, values));
}

TabularPolicy load_policy(const std::filesystem::path& path, std::vector<double>* values) {
  try {
    return parse_policy(read_file(path), values);
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

}  // namespace trex
