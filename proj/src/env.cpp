#include "trex/env.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "trex/errors.hpp"
#include "trex/kvfile.hpp"

namespace trex {

namespace {

constexpr std::string_view kSpecSchema = "trex-gridworld";

std::string cell_text(Cell c) { return std::to_string(c.x) + "," + std::to_string(c.y); }

std::vector<Cell> parse_cells(const std::string& text, std::string_view key) {
  std::vector<Cell> out;
  std::istringstream in(text);
  std::string token;
  while (in >> token) {
    const auto comma = token.find(',');
    if (comma == std::string::npos) {
      throw ValidationError(std::string(key) + ": expected 'x,y', got '" + token + "'");
    }
    out.push_back({static_cast<int>(parse_long(token.substr(0, comma), key)),
                   static_cast<int>(parse_long(token.substr(comma + 1), key))});
  }
  return out;
}

std::string cells_text(const std::vector<Cell>& cells) {
  std::string out;
  for (const auto& c : cells) {
    if (!out.empty()) out += ' ';
    out += cell_text(c);
  }
  return out;
}

}  // namespace

const char* action_name(Action a) {
  switch (a) {
    case Action::up: return "up";
    case Action::down: return "down";
    case Action::left: return "left";
    case Action::right: return "right";
    case Action::stay: return "stay";
  }
  return "?";
}

Action parse_action(std::string_view name) {
  for (const auto a : kActions) {
    if (name == action_name(a)) return a;
  }
  throw ValidationError("unknown action '" + std::string(name) + "'");
}

void GridworldSpec::validate() const {
  if (width < 1 || height < 1) throw ValidationError("grid dimensions must be positive");
  if (num_features < 2) throw ValidationError("num_features must be >= 2");
  if (features.size() != static_cast<std::size_t>(num_cells() * num_features)) {
    throw ValidationError("feature grid must hold width*height vectors of num_features values");
  }
  for (const double f : features) {
    if (!(f >= 0.0 && f <= 1.0)) throw ValidationError("feature values must lie in [0,1]");
  }
  if (gt_weights.size() != static_cast<std::size_t>(num_features)) {
    throw ValidationError("gt_weights must have num_features entries");
  }
  if (start_cells.empty()) throw ValidationError("start_cells must be nonempty");
  for (const auto& c : start_cells) {
    if (!in_bounds(c)) throw ValidationError("start cell " + cell_text(c) + " out of bounds");
    if (is_terminal(c)) throw ValidationError("start cell " + cell_text(c) + " is terminal");
  }
  for (const auto& c : terminal_cells) {
    if (!in_bounds(c)) throw ValidationError("terminal cell " + cell_text(c) + " out of bounds");
  }
  if (horizon < 1) throw ValidationError("horizon must be >= 1");
  if (!(slip_prob >= 0.0 && slip_prob < 1.0)) throw ValidationError("slip_prob must be in [0,1)");
}

bool GridworldSpec::is_terminal(Cell c) const {
  return std::find(terminal_cells.begin(), terminal_cells.end(), c) != terminal_cells.end();
}

std::span<const double> GridworldSpec::features_at(Cell c) const {
  if (!in_bounds(c)) throw ValidationError("cell " + cell_text(c) + " out of bounds");
  return std::span<const double>(features).subspan(
      static_cast<std::size_t>(index(c) * num_features), static_cast<std::size_t>(num_features));
}

Cell apply_move(const GridworldSpec& spec, Cell from, Action action) {
  Cell to = from;
  switch (action) {
    case Action::up: --to.y; break;
    case Action::down: ++to.y; break;
    case Action::left: --to.x; break;
    case Action::right: ++to.x; break;
    case Action::stay: break;
  }
  return spec.in_bounds(to) ? to : from;
}

EnvState transition(const GridworldSpec& spec, const EnvState& state, Action action, Rng& rng) {
  if (state.t >= spec.horizon) throw ContractViolation("transition: episode horizon reached");
  if (spec.is_terminal(state.cell)) throw ContractViolation("transition: state is terminal");
  if (spec.slip_prob > 0.0 && uniform01(rng) < spec.slip_prob) {
    action = kActions[uniform_index(rng, kNumActions)];
  }
  return {apply_move(spec, state.cell, action), state.t + 1};
}

std::vector<Successor> successors(const GridworldSpec& spec, Cell from, Action action) {
  std::vector<Successor> out;
  auto add = [&](Cell c, double p) {
    if (p == 0.0) return;
    for (auto& s : out) {
      if (s.cell == c) {
        s.prob += p;
        return;
      }
    }
    out.push_back({c, p});
  };
  add(apply_move(spec, from, action), 1.0 - spec.slip_prob);
  const double slip_each = spec.slip_prob / static_cast<double>(kNumActions);
  for (const auto a : kActions) add(apply_move(spec, from, a), slip_each);
  return out;
}

double gt_reward(const GridworldSpec& spec, Cell cell) {
  return gt_reward(spec, spec.features_at(cell));
}

double gt_reward(const GridworldSpec& spec, std::span<const double> observation) {
  if (observation.size() != spec.gt_weights.size()) {
    throw ValidationError("observation has wrong feature count");
  }
  double r = 0.0;
  for (std::size_t k = 0; k < observation.size(); ++k) r += spec.gt_weights[k] * observation[k];
  return r;
}

Action sample_action(const ActionDist& dist, Rng& rng) {
  const double u = uniform01(rng);
  double acc = 0.0;
  for (std::size_t a = 0; a < kNumActions; ++a) {
    acc += dist[a];
    if (u < acc) return kActions[a];
  }
  // Rounding left u above the cumulative sum: take the last action with mass.
  for (std::size_t a = kNumActions; a-- > 0;) {
    if (dist[a] > 0.0) return kActions[a];
  }
  throw ContractViolation("sample_action: empty distribution");
}

Trajectory rollout(const GridworldSpec& spec, const PolicyFn& policy, std::uint64_t seed) {
  Rng rng = make_rng(seed);
  EnvState state{spec.start_cells[uniform_index(rng, spec.start_cells.size())], 0};
  Trajectory traj;
  traj.actions.emplace();
  const auto push = [&](Cell c) {
    const auto f = spec.features_at(c);
    traj.observations.emplace_back(f.begin(), f.end());
    traj.cells.push_back(c);
  };
  push(state.cell);
  while (state.t < spec.horizon && !spec.is_terminal(state.cell)) {
    const Action a = sample_action(policy(state), rng);
    state = transition(spec, state, a, rng);
    traj.actions->push_back(a);
    push(state.cell);
    traj.gt_return += gt_reward(spec, state.cell);
  }
  return traj;
}

double recompute_return(const GridworldSpec& spec, const Trajectory& traj) {
  double total = 0.0;
  for (const auto& obs : traj.rewarded()) total += gt_reward(spec, obs);
  return total;
}

void check_trajectory(const GridworldSpec& spec, const Trajectory& traj) {
  const std::string where = "trajectory '" + traj.id + "': ";
  if (traj.length() < 2) throw ValidationError(where + "needs at least 2 observations");
  if (traj.actions && traj.actions->size() != traj.length() - 1) {
    throw ValidationError(where + "action count must be length-1");
  }
  if (!traj.cells.empty() && traj.cells.size() != traj.length()) {
    throw ValidationError(where + "cell count must equal observation count");
  }
  for (const auto& obs : traj.observations) {
    if (obs.size() != static_cast<std::size_t>(spec.num_features)) {
      throw ValidationError(where + "observation has wrong feature count");
    }
    for (const double f : obs) {
      if (!(f >= 0.0 && f <= 1.0)) throw ValidationError(where + "feature outside [0,1]");
    }
  }
  const double expected = recompute_return(spec, traj);
  if (std::abs(expected - traj.gt_return) > 1e-9) {
    throw ValidationError(where + "stored gt_return " + format_double(traj.gt_return) +
                          " does not match recomputed " + format_double(expected));
  }
}

std::optional<Cell> locate(const GridworldSpec& spec, std::span<const double> observation) {
  std::optional<Cell> found;
  for (int i = 0; i < spec.num_cells(); ++i) {
    const auto f = spec.features_at(spec.cell_at(i));
    if (f.size() == observation.size() && std::equal(f.begin(), f.end(), observation.begin())) {
      if (found) return std::nullopt;
      found = spec.cell_at(i);
    }
  }
  return found;
}

GridworldSpec parse_spec(std::string_view text) {
  const auto doc = KeyValueDoc::parse(text, kSpecSchema);
  GridworldSpec spec;
  spec.name = doc.get_or("name", "");
  spec.width = static_cast<int>(doc.get_long("width"));
  spec.height = static_cast<int>(doc.get_long("height"));
  spec.num_features = static_cast<int>(doc.get_long("num_features"));
  spec.horizon = static_cast<int>(doc.get_long("horizon"));
  spec.slip_prob = doc.get_double("slip_prob");
  spec.gt_weights = doc.get_doubles("gt_weights");
  spec.start_cells = parse_cells(doc.get("start_cells"), "start_cells");
  spec.terminal_cells = parse_cells(doc.get_or("terminal_cells", ""), "terminal_cells");
  if (spec.width < 1 || spec.height < 1 || spec.num_features < 1) {
    throw ValidationError("grid dimensions and num_features must be positive");
  }
  spec.features.reserve(static_cast<std::size_t>(spec.num_cells() * spec.num_features));
  for (int y = 0; y < spec.height; ++y) {
    for (int x = 0; x < spec.width; ++x) {
      const auto key = "phi." + std::to_string(x) + "." + std::to_string(y);
      const auto values = doc.get_doubles(key);
      if (values.size() != static_cast<std::size_t>(spec.num_features)) {
        throw ValidationError(key + ": expected " + std::to_string(spec.num_features) + " values");
      }
      spec.features.insert(spec.features.end(), values.begin(), values.end());
    }
  }
  const std::size_t fixed_keys = 9 + static_cast<std::size_t>(spec.num_cells());
  std::size_t known = 0;
  for (const auto& key : doc.keys()) {
    if (key == "name" || key == "terminal_cells" || key.rfind("phi.", 0) == 0 || key == "width" || key == "height" ||
        key == "num_features" || key == "horizon" || key == "slip_prob" || key == "gt_weights" || key == "start_cells") {
      ++known;
    } else {
      throw ValidationError("unknown spec key '" + key + "'");
    }
  }
  if (known > fixed_keys) throw ValidationError("spec has phi entries outside the grid");
  spec.validate();
  return spec;
}

std::string format_spec(const GridworldSpec& spec) {
  KeyValueDoc doc(std::string(kSpecSchema) + "/1");
  doc.set("name", spec.name);
  doc.set("width", std::to_string(spec.width));
  doc.set("height", std::to_string(spec.height));
  doc.set("num_features", std::to_string(spec.num_features));
  doc.set("horizon", std::to_string(spec.horizon));
  doc.set("slip_prob", format_double(spec.slip_prob));
  std::string weights;
  for (const double w : spec.gt_weights) weights += (weights.empty() ? "" : " ") + format_double(w);
  doc.set("gt_weights", weights);
  doc.set("start_cells", cells_text(spec.start_cells));
  doc.set("terminal_cells", cells_text(spec.terminal_cells));
  for (int y = 0; y < spec.height; ++y) {
    for (int x = 0; x < spec.width; ++x) {
      std::string row;
      for (const double f : spec.features_at({x, y})) {
        row += (row.empty() ? "" : " ") + format_double(f);
      }
      doc.set("phi." + std::to_string(x) + "." + std::to_string(y), row);
    }
  }
  return doc.dump();
}

GridworldSpec load_spec(const std::filesystem::path& path) {
  try {
    return parse_spec(read_file(path));
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

void save_spec(const GridworldSpec& spec, const std::filesystem::path& path) {
  write_file(path, format_spec(spec));
}

GridworldSpec make_extrap9() {
  GridworldSpec spec;
  spec.name = "extrap-9";
  spec.width = 9;
  spec.height = 9;
  spec.num_features = 6;
  spec.horizon = 60;
  spec.slip_prob = 0.1;
  spec.gt_weights = {1.0, -1.0, 0.5, 0.0, 0.0, 0.0};
  spec.start_cells = {{0, 0}};
  const Cell goal{8, 8};
  const std::vector<Cell> hazards = {{1, 3}, {3, 1}, {4, 4}, {6, 5}, {5, 6}};
  const std::vector<Cell> coins = {{2, 2}, {6, 2}};
  const double span = static_cast<double>(spec.width + spec.height - 2);
  for (int y = 0; y < spec.height; ++y) {
    for (int x = 0; x < spec.width; ++x) {
      const Cell c{x, y};
      const double dist = std::abs(x - goal.x) + std::abs(y - goal.y);
      spec.features.push_back(1.0 - dist / span);
      spec.features.push_back(std::count(hazards.begin(), hazards.end(), c) ? 1.0 : 0.0);
      spec.features.push_back(std::count(coins.begin(), coins.end(), c) ? 1.0 : 0.0);
      for (int k = 0; k < 3; ++k) {
        // Quantized to 1/64 so the spec file round-trips with short literals.
        const auto h = mix64(0xE9E9ULL + static_cast<std::uint64_t>(spec.index(c) * 3 + k));
        spec.features.push_back(static_cast<double>(h % 65) / 64.0);
      }
    }
  }
  spec.validate();
  return spec;
}

}  // namespace trex
