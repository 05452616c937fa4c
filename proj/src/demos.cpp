#include "trex/demos.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>

#include "json.hpp"

#include "trex/errors.hpp"
#include "trex/kvfile.hpp"

namespace trex {

using json = nlohmann::json;

namespace {

constexpr std::string_view kDemosSchema = "trex-demos/1";
constexpr std::string_view kRankingsSchema = "trex-rankings/1";

std::vector<PreferencePair> canonical_order(std::vector<PreferencePair> pairs) {
  std::sort(pairs.begin(), pairs.end(), [](const PreferencePair& a, const PreferencePair& b) {
    const auto ka = std::make_pair(std::min(a.first, a.second), std::max(a.first, a.second));
    const auto kb = std::make_pair(std::min(b.first, b.second), std::max(b.first, b.second));
    return ka < kb;
  });
  return pairs;
}

long choose2(long n) { return n * (n - 1) / 2; }

std::vector<std::string> lines_of(std::string_view text) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string line(text.substr(pos, end - pos));
    if (!line.empty() && line.back() == '\r') line.pop_back();
    out.push_back(std::move(line));
    pos = end + 1;
  }
  return out;
}

void check_sorted(const std::vector<Trajectory>& demos) {
  for (std::size_t k = 1; k < demos.size(); ++k) {
    if (demos[k].gt_return < demos[k - 1].gt_return) {
      throw ContractViolation("inject_swap_noise: demos must be sorted by gt_return ascending");
    }
  }
}

struct SwapState {
  std::vector<int> order;
  long inversions = 0;
};

// Applies one random adjacent swap and keeps the inversion count current.
void random_adjacent_swap(SwapState& st, Rng& rng) {
  const auto p = uniform_index(rng, st.order.size() - 1);
  st.inversions += st.order[p] < st.order[p + 1] ? 1 : -1;
  std::swap(st.order[p], st.order[p + 1]);
}

RankedDataset corrupted_dataset(std::vector<Trajectory> demos, const SwapState& st, long swaps) {
  RankedDataset ds;
  const long total = choose2(static_cast<long>(demos.size()));
  ds.trajectories = std::move(demos);
  ds.pairs = pairs_from_order(st.order);
  ds.provenance = Provenance::corrupted;
  ds.swaps = swaps;
  ds.order_correctness = total == 0 ? 1.0 : 1.0 - static_cast<double>(st.inversions) / static_cast<double>(total);
  return ds;
}

}  // namespace

std::vector<Checkpoint> train_demonstrator(const GridworldSpec& spec, const LearnerConfig& cfg,
                                           std::uint64_t seed) {
  cfg.validate();
  QLearner learner(spec, [&spec](Cell c) { return gt_reward(spec, c); }, cfg, seed);
  std::vector<Checkpoint> out;
  out.push_back({0, learner.snapshot(learner.epsilon())});
  while (learner.updates_done() < cfg.total_updates) {
    learner.run(std::min(cfg.checkpoint_every, cfg.total_updates - learner.updates_done()));
    out.push_back({learner.updates_done(), learner.snapshot(learner.epsilon())});
  }
  return out;
}

std::vector<Trajectory> generate_demos(const GridworldSpec& spec,
                                       const std::vector<Checkpoint>& checkpoints,
                                       int per_checkpoint, std::uint64_t seed) {
  if (per_checkpoint < 1) throw ContractViolation("generate_demos: per_checkpoint must be >= 1");
  std::vector<Trajectory> out;
  for (std::size_t k = 0; k < checkpoints.size(); ++k) {
    const auto policy = checkpoints[k].policy.as_fn();
    for (int r = 0; r < per_checkpoint; ++r) {
      Trajectory t = rollout(spec, policy, derive_seed(derive_seed(seed, k), static_cast<std::uint64_t>(r)));
      t.id = "ckpt" + std::to_string(checkpoints[k].step) + "-" + std::to_string(r);
      t.created_step = checkpoints[k].step;
      out.push_back(std::move(t));
    }
  }
  return out;
}

std::vector<Trajectory> sort_by_return(std::vector<Trajectory> demos) {
  std::stable_sort(demos.begin(), demos.end(),
                   [](const Trajectory& a, const Trajectory& b) { return a.gt_return < b.gt_return; });
  return demos;
}

std::vector<Trajectory> stage_subset(const std::vector<Trajectory>& demos, int stage) {
  auto sorted = sort_by_return(demos);
  const double n = static_cast<double>(sorted.size());
  std::size_t keep = sorted.size();
  switch (stage) {
    case 1: keep = static_cast<std::size_t>(std::lround(n / 3.0)); break;
    case 2: keep = static_cast<std::size_t>(std::lround(n / 2.0)); break;
    case 3: break;
    default: throw ValidationError("stage must be 1, 2 or 3");
  }
  keep = std::min(sorted.size(), std::max<std::size_t>(keep, 2));
  sorted.resize(keep);
  return sorted;
}

const char* provenance_name(Provenance p) {
  switch (p) {
    case Provenance::ground_truth: return "ground_truth";
    case Provenance::time_order: return "time_order";
    case Provenance::human: return "human";
    case Provenance::corrupted: return "corrupted";
  }
  return "?";
}

void RankedDataset::validate() const {
  const auto n = static_cast<int>(trajectories.size());
  std::set<PreferencePair> seen;
  for (const auto& [i, j] : pairs) {
    if (i < 0 || j < 0 || i >= n || j >= n) throw ValidationError("ranking pair index out of range");
    if (i == j) throw ValidationError("ranking contains a self pair");
    if (seen.count({j, i})) throw ValidationError("ranking contains a pair in both orientations");
    if (!seen.insert({i, j}).second) throw ValidationError("ranking contains a duplicate pair");
    if (provenance == Provenance::ground_truth &&
        !(trajectories[static_cast<std::size_t>(i)].gt_return < trajectories[static_cast<std::size_t>(j)].gt_return)) {
      throw ValidationError("ground-truth ranking disagrees with returns");
    }
  }
  if (!(order_correctness >= 0.0 && order_correctness <= 1.0)) {
    throw ValidationError("order_correctness outside [0,1]");
  }
  if (provenance == Provenance::ground_truth && order_correctness != 1.0) {
    throw ValidationError("ground-truth ranking must have order_correctness 1");
  }
}

double order_correctness(const std::vector<Trajectory>& trajectories,
                         const std::vector<PreferencePair>& pairs) {
  if (pairs.empty()) return 1.0;
  double agree = 0.0;
  for (const auto& [i, j] : pairs) {
    const double a = trajectories[static_cast<std::size_t>(i)].gt_return;
    const double b = trajectories[static_cast<std::size_t>(j)].gt_return;
    agree += a < b ? 1.0 : (a == b ? 0.5 : 0.0);
  }
  return agree / static_cast<double>(pairs.size());
}

RankedDataset rank_by_gt(std::vector<Trajectory> demos) {
  if (demos.size() < 2) throw ValidationError("rank_by_gt: need at least 2 demonstrations");
  RankedDataset ds;
  const auto n = static_cast<int>(demos.size());
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      const double a = demos[static_cast<std::size_t>(i)].gt_return;
      const double b = demos[static_cast<std::size_t>(j)].gt_return;
      if (a < b) ds.pairs.emplace_back(i, j);
      if (b < a) ds.pairs.emplace_back(j, i);
    }
  }
  ds.trajectories = std::move(demos);
  ds.provenance = Provenance::ground_truth;
  ds.order_correctness = 1.0;
  return ds;
}

RankedDataset rank_by_time(std::vector<Trajectory> demos) {
  if (demos.size() < 2) throw ValidationError("rank_by_time: need at least 2 demonstrations");
  std::set<long> steps;
  for (const auto& d : demos) {
    if (!steps.insert(d.created_step).second) {
      throw ValidationError("rank_by_time: duplicate created_step " + std::to_string(d.created_step));
    }
  }
  RankedDataset ds;
  const auto n = static_cast<int>(demos.size());
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      if (demos[static_cast<std::size_t>(i)].created_step < demos[static_cast<std::size_t>(j)].created_step) {
        ds.pairs.emplace_back(i, j);
      } else {
        ds.pairs.emplace_back(j, i);
      }
    }
  }
  ds.order_correctness = order_correctness(demos, ds.pairs);
  ds.trajectories = std::move(demos);
  ds.provenance = Provenance::time_order;
  return ds;
}

std::vector<PreferencePair> pairs_from_order(const std::vector<int>& order) {
  std::vector<PreferencePair> pairs;
  for (std::size_t p = 0; p < order.size(); ++p) {
    for (std::size_t q = p + 1; q < order.size(); ++q) pairs.emplace_back(order[p], order[q]);
  }
  return canonical_order(std::move(pairs));
}

RankedDataset inject_swap_noise(std::vector<Trajectory> sorted_demos, long num_swaps,
                                std::uint64_t seed) {
  if (num_swaps < 0) throw ValidationError("inject_swap_noise: num_swaps must be >= 0");
  if (sorted_demos.size() < 2) throw ValidationError("inject_swap_noise: need at least 2 demonstrations");
  check_sorted(sorted_demos);
  SwapState st;
  st.order.resize(sorted_demos.size());
  for (std::size_t k = 0; k < st.order.size(); ++k) st.order[k] = static_cast<int>(k);
  Rng rng = make_rng(seed);
  for (long s = 0; s < num_swaps; ++s) random_adjacent_swap(st, rng);
  return corrupted_dataset(std::move(sorted_demos), st, num_swaps);
}

RankedDataset inject_swap_noise_to_level(std::vector<Trajectory> sorted_demos, double target,
                                         std::uint64_t seed, long max_swaps) {
  if (!(target >= 0.0 && target <= 1.0)) throw ValidationError("target correctness must be in [0,1]");
  if (sorted_demos.size() < 2) throw ValidationError("inject_swap_noise: need at least 2 demonstrations");
  check_sorted(sorted_demos);
  SwapState st;
  st.order.resize(sorted_demos.size());
  for (std::size_t k = 0; k < st.order.size(); ++k) st.order[k] = static_cast<int>(k);
  const auto total = static_cast<double>(choose2(static_cast<long>(sorted_demos.size())));
  Rng rng = make_rng(seed);
  long swaps = 0;
  while (1.0 - static_cast<double>(st.inversions) / total > target && swaps < max_swaps) {
    random_adjacent_swap(st, rng);
    ++swaps;
  }
  return corrupted_dataset(std::move(sorted_demos), st, swaps);
}

const char* vote_label_name(VoteLabel v) {
  switch (v) {
    case VoteLabel::i_better: return "i_better";
    case VoteLabel::j_better: return "j_better";
    case VoteLabel::not_sure: return "not_sure";
  }
  return "?";
}

VoteLabel parse_vote_label(std::string_view name) {
  for (const auto v : {VoteLabel::i_better, VoteLabel::j_better, VoteLabel::not_sure}) {
    if (name == vote_label_name(v)) return v;
  }
  throw ValidationError("unknown vote label '" + std::string(name) + "'");
}

std::vector<PreferencePair> aggregate_votes(const std::vector<VoteRecord>& records) {
  // counts[{lo, hi}] = {lo better, hi better, not sure}
  std::map<PreferencePair, std::array<int, 3>> counts;
  for (const auto& rec : records) {
    const auto [i, j] = rec.pair;
    if (i == j) continue;
    const bool flipped = i > j;
    auto& c = counts[{std::min(i, j), std::max(i, j)}];
    for (const auto v : rec.votes) {
      switch (v) {
        case VoteLabel::i_better: ++c[flipped ? 1 : 0]; break;
        case VoteLabel::j_better: ++c[flipped ? 0 : 1]; break;
        case VoteLabel::not_sure: ++c[2]; break;
      }
    }
  }
  std::vector<PreferencePair> out;
  for (const auto& [pair, c] : counts) {
    const int top = std::max({c[0], c[1], c[2]});
    if (top == 0 || std::count(c.begin(), c.end(), top) > 1 || c[2] == top) continue;
    if (c[1] == top) {
      out.emplace_back(pair.first, pair.second);
    } else {
      out.emplace_back(pair.second, pair.first);
    }
  }
  return out;
}

RankedDataset rank_by_votes(std::vector<Trajectory> demos, const std::vector<VoteRecord>& records) {
  RankedDataset ds;
  ds.pairs = aggregate_votes(records);
  const auto n = static_cast<int>(demos.size());
  for (const auto& [i, j] : ds.pairs) {
    if (i < 0 || j < 0 || i >= n || j >= n) throw ValidationError("vote pair index out of range");
  }
  ds.order_correctness = order_correctness(demos, ds.pairs);
  ds.trajectories = std::move(demos);
  ds.provenance = Provenance::human;
  return ds;
}

std::string format_demos(const std::vector<Trajectory>& demos) {
  std::string out = json{{"schema", kDemosSchema}}.dump() + "\n";
  for (const auto& t : demos) {
    json j;
    j["id"] = t.id;
    j["created_step"] = t.created_step;
    j["observations"] = t.observations;
    j["gt_return"] = t.gt_return;
    if (t.actions) {
      json acts = json::array();
      for (const auto a : *t.actions) acts.push_back(action_name(a));
      j["actions"] = std::move(acts);
    }
    if (!t.cells.empty()) {
      json cells = json::array();
      for (const auto& c : t.cells) cells.push_back({c.x, c.y});
      j["cells"] = std::move(cells);
    }
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::vector<Trajectory> parse_demos(std::string_view text, const GridworldSpec* spec) {
  const auto lines = lines_of(text);
  if (lines.empty()) throw ValidationError("demos file is empty");
  try {
    const auto header = json::parse(lines.front());
    if (!header.contains("schema") || header["schema"] != kDemosSchema) {
      throw ValidationError("demos file: expected schema '" + std::string(kDemosSchema) + "'");
    }
    std::vector<Trajectory> out;
    std::set<std::string> ids;
    for (std::size_t k = 1; k < lines.size(); ++k) {
      if (lines[k].empty()) continue;
      const auto j = json::parse(lines[k]);
      Trajectory t;
      t.id = j.at("id").get<std::string>();
      t.created_step = j.at("created_step").get<long>();
      t.observations = j.at("observations").get<std::vector<Observation>>();
      t.gt_return = j.at("gt_return").get<double>();
      if (j.contains("actions")) {
        std::vector<Action> acts;
        for (const auto& a : j["actions"]) acts.push_back(parse_action(a.get<std::string>()));
        t.actions = std::move(acts);
      }
      if (j.contains("cells")) {
        for (const auto& c : j["cells"]) t.cells.push_back({c.at(0).get<int>(), c.at(1).get<int>()});
      }
      if (!ids.insert(t.id).second) throw ValidationError("duplicate trajectory id '" + t.id + "'");
      if (t.length() < 2) throw ValidationError("trajectory '" + t.id + "' has fewer than 2 observations");
      if (spec) check_trajectory(*spec, t);
      out.push_back(std::move(t));
    }
    return out;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("demos file: ") + e.what());
  }
}

void save_demos(const std::filesystem::path& path, const std::vector<Trajectory>& demos) {
  write_file(path, format_demos(demos));
}

std::vector<Trajectory> load_demos(const std::filesystem::path& path, const GridworldSpec* spec) {
  try {
    return parse_demos(read_file(path), spec);
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

std::string format_rankings(const RankedDataset& ds) {
  std::ostringstream out;
  out << kRankingsSchema << '\n';
  out << "provenance " << provenance_name(ds.provenance);
  if (ds.provenance == Provenance::corrupted) out << ' ' << ds.swaps;
  out << '\n';
  out << "order_correctness " << format_double(ds.order_correctness) << '\n';
  out << "trajectories " << ds.trajectories.size() << '\n';
  out << "pairs " << ds.pairs.size() << '\n';
  for (const auto& [i, j] : ds.pairs) out << i << '<' << j << '\n';
  return out.str();
}

RankedDataset parse_rankings(std::string_view text, std::vector<Trajectory> trajectories) {
  const auto lines = lines_of(text);
  if (lines.size() < 5 || lines[0] != kRankingsSchema) {
    throw ValidationError("rankings file: expected schema tag '" + std::string(kRankingsSchema) + "'");
  }
  RankedDataset ds;
  {
    std::istringstream in(lines[1]);
    std::string key, name;
    in >> key >> name;
    if (key != "provenance") throw ValidationError("rankings file: missing provenance line");
    if (name == "ground_truth") ds.provenance = Provenance::ground_truth;
    else if (name == "time_order") ds.provenance = Provenance::time_order;
    else if (name == "human") ds.provenance = Provenance::human;
    else if (name == "corrupted") {
      ds.provenance = Provenance::corrupted;
      if (!(in >> ds.swaps)) throw ValidationError("rankings file: corrupted provenance needs a swap count");
    } else {
      throw ValidationError("rankings file: unknown provenance '" + name + "'");
    }
  }
  auto header_value = [&](std::size_t line, std::string_view key) {
    std::istringstream in(lines[line]);
    std::string k, v;
    in >> k >> v;
    if (k != key) throw ValidationError("rankings file: expected '" + std::string(key) + "' header");
    return v;
  };
  ds.order_correctness = parse_double(header_value(2, "order_correctness"), "order_correctness");
  const long n = parse_long(header_value(3, "trajectories"), "trajectories");
  const long count = parse_long(header_value(4, "pairs"), "pairs");
  if (n != static_cast<long>(trajectories.size())) {
    throw ValidationError("rankings file refers to " + std::to_string(n) + " trajectories but " +
                          std::to_string(trajectories.size()) + " were supplied");
  }
  for (std::size_t k = 5; k < lines.size(); ++k) {
    if (lines[k].empty()) continue;
    const auto lt = lines[k].find('<');
    if (lt == std::string::npos) throw ValidationError("rankings file: malformed pair '" + lines[k] + "'");
    ds.pairs.emplace_back(static_cast<int>(parse_long(lines[k].substr(0, lt), "pair")),
                          static_cast<int>(parse_long(lines[k].substr(lt + 1), "pair")));
  }
  if (static_cast<long>(ds.pairs.size()) != count) throw ValidationError("rankings file: pair count mismatch");
  ds.trajectories = std::move(trajectories);
  ds.validate();
  return ds;
}

void save_rankings(const std::filesystem::path& path, const RankedDataset& ds) {
  write_file(path, format_rankings(ds));
}

RankedDataset load_rankings(const std::filesystem::path& path, std::vector<Trajectory> trajectories) {
  try {
    return parse_rankings(read_file(path), std::move(trajectories));
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

std::string format_vote_records(const std::vector<VoteRecord>& records) {
  std::string out;
  for (const auto& r : records) {
    json votes = json::array();
    for (const auto v : r.votes) votes.push_back(vote_label_name(v));
    out += json{{"i", r.pair.first}, {"j", r.pair.second}, {"votes", votes}}.dump();
    out += '\n';
  }
  return out;
}

std::vector<VoteRecord> parse_vote_records(std::string_view text) {
  std::vector<VoteRecord> out;
  try {
    for (const auto& line : lines_of(text)) {
      if (line.empty()) continue;
      const auto j = json::parse(line);
      VoteRecord r;
      r.pair = {j.at("i").get<int>(), j.at("j").get<int>()};
      for (const auto& v : j.at("votes")) r.votes.push_back(parse_vote_label(v.get<std::string>()));
      if (r.votes.empty()) throw ValidationError("vote record with no votes");
      out.push_back(std::move(r));
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("vote records: ") + e.what());
  }
  return out;
}

}  // namespace trex
