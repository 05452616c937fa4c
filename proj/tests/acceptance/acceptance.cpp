// Acceptance run: one PASS/FAIL line per primary criterion, a few INFO lines.
// Exit status is 1 when any primary criterion fails.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <vector>

#include "../support.hpp"
#include "trex/demos.hpp"
#include "trex/eval.hpp"
#include "trex/policy.hpp"
#include "trex/reward.hpp"

using namespace trex;
namespace fs = std::filesystem;

namespace {

// pinned thresholds
constexpr int kSeeds = 5;
constexpr int kQuorum = 4;
constexpr double kBeatFactor = 1.2;
constexpr double kCloneFactor = 1.05;
constexpr double kRuntimeBudgetSec = 600.0;
constexpr double kPearsonMin = 0.8;
constexpr double kHeldoutReturnFactor = 2.0;
constexpr double kNoiseKeep = 0.8;
constexpr int kNoiseReps = 9;
constexpr double kTimeOrderKeep = 0.9;
constexpr double kGradTol = 1e-4;
constexpr double kLn2Tol = 1e-9;
constexpr int kBattery = 60;
constexpr int kTrainSteps = 2000;

int failures = 0;

void report(bool pass, const std::string& name, const std::string& detail) {
  std::printf("%s %s: %s\n", pass ? "PASS" : "FAIL", name.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

void info(const std::string& name, const std::string& detail) {
  std::printf("INFO %s: %s\n", name.c_str(), detail.c_str());
  std::fflush(stdout);
}

std::string num(double v, int digits = 3) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

std::string sci(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.2e", v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

PipelineConfig pipeline_cfg(std::uint64_t seed) {
  PipelineConfig pc;
  pc.train.train_steps = kTrainSteps;
  pc.train.seed = derive_seed(seed, 4);
  pc.eval_episodes = 100;
  pc.eval_seed = derive_seed(seed, 5);
  return pc;
}

struct SeedRun {
  std::vector<Checkpoint> checkpoints;
  std::vector<Trajectory> all_demos;
  std::vector<Trajectory> demos;  // stage 1
  double best = 0.0;
  PipelineResult trex;
  double clone = 0.0;
};

SeedRun stage_one(const GridworldSpec& spec, std::uint64_t seed) {
  SeedRun r;
  r.checkpoints = train_demonstrator(spec, LearnerConfig{}, derive_seed(seed, 1));
  r.all_demos = generate_demos(spec, r.checkpoints, 1, derive_seed(seed, 2));
  r.demos = stage_subset(r.all_demos, 1);
  r.best = r.demos.back().gt_return;
  const auto pc = pipeline_cfg(seed);
  r.trex = run_pipeline(spec, rank_by_gt(r.demos), pc);
  r.clone = evaluate_policy(spec, clone_best_demo(spec, r.demos), pc.eval_episodes, pc.eval_seed).mean;
  return r;
}

void better_than_demonstrator(const std::vector<SeedRun>& runs, double elapsed) {
  int beat = 0, clone_ok = 0;
  std::string detail;
  for (std::size_t k = 0; k < runs.size(); ++k) {
    const auto& r = runs[k];
    if (r.trex.eval.mean > kBeatFactor * r.best) ++beat;
    if (r.clone <= kCloneFactor * r.best) ++clone_ok;
    detail += " seed" + std::to_string(k + 1) + "[best " + num(r.best, 2) + " trex " + num(r.trex.eval.mean, 2) +
              " clone " + num(r.clone, 2) + "]";
  }
  const bool pass = beat >= kQuorum && clone_ok >= kQuorum && elapsed < kRuntimeBudgetSec;
  report(pass, "better-than-demonstrator",
         "trex > 1.2x best in " + std::to_string(beat) + "/5, clone <= 1.05x best in " + std::to_string(clone_ok) +
             "/5, " + num(elapsed, 1) + " s;" + detail);
}

void extrapolation(const GridworldSpec& spec, const std::vector<SeedRun>& runs) {
  int ok = 0;
  std::string detail;
  for (std::size_t k = 0; k < runs.size(); ++k) {
    const auto& r = runs[k];
    const std::uint64_t seed = k + 1;
    const double cap = r.best + (kHeldoutReturnFactor - 1.0) * std::abs(r.best);
    const auto held = heldout_rollouts(spec, r.checkpoints, 3, derive_seed(seed, 3), cap);
    const auto& ens = r.trex.ensemble;
    const auto rep =
        extrapolation_report([&ens](std::span<const double> o) { return ensemble_reward(ens, o); }, r.demos, held);
    if (rep.pearson_heldout >= kPearsonMin) ++ok;
    double top = -1e300;
    for (const auto& t : held) top = std::max(top, t.gt_return);
    detail += " seed" + std::to_string(seed) + "[r " + num(rep.pearson_heldout) + " n " + std::to_string(held.size()) +
              " max_gt " + num(top, 1) + "]";
  }
  report(ok >= kQuorum, "extrapolation-correlation",
         "held-out Pearson >= 0.8 in " + std::to_string(ok) + "/5;" + detail);
}

void noise_robustness(const GridworldSpec& spec, const SeedRun& run) {
  NoiseSweepConfig cfg;
  cfg.levels = {1.0, 0.95, 0.85, 0.7, 0.5};
  cfg.repetitions = kNoiseReps;
  cfg.pipeline = pipeline_cfg(1);
  cfg.seed = 101;
  const auto res = noise_sweep(spec, run.demos, cfg);
  std::map<double, double> mean;
  std::string detail;
  for (const auto& l : res.levels) {
    mean[l.target] = l.mean_return;
    detail += " " + num(l.target, 2) + "[corr " + num(l.mean_correctness) + " ret " + num(l.mean_return, 2) + "]";
  }
  const bool keep = mean[0.85] >= kNoiseKeep * mean[1.0];
  const bool direction = mean[0.5] < mean[1.0];
  report(keep && direction, "noise-robustness",
         "return@0.85 / return@1.0 = " + num(mean[0.85] / mean[1.0]) + ", return@0.5 " +
             (direction ? "<" : ">=") + " return@1.0;" + detail);
}

void time_order(const GridworldSpec& spec, const std::vector<SeedRun>& runs) {
  double by_time = 0.0, by_gt = 0.0;
  std::string detail;
  for (std::size_t k = 0; k < runs.size(); ++k) {
    const auto pc = pipeline_cfg(k + 1);
    const auto time_ds = rank_by_time(runs[k].all_demos);
    const double t = run_pipeline(spec, time_ds, pc).eval.mean;
    const double g = run_pipeline(spec, rank_by_gt(runs[k].all_demos), pc).eval.mean;
    by_time += t;
    by_gt += g;
    detail += " seed" + std::to_string(k + 1) + "[corr " + num(time_ds.order_correctness) + " time " + num(t, 2) +
              " gt " + num(g, 2) + "]";
  }
  const double ratio = by_time / by_gt;
  report(ratio >= kTimeOrderKeep, "time-ordered-rankings",
         "mean return time-ranked / gt-ranked = " + num(ratio) + " over " + std::to_string(runs[0].all_demos.size()) +
             " checkpoint demos;" + detail);
}

void numerical_core() {
  double worst = 0.0;
  for (const auto& t : gradient_check(20, 2024)) worst = std::max(worst, t.max_rel_error);

  Trajectory a, b;
  a.id = "a";
  b.id = "b";
  for (int k = 0; k < 8; ++k) {
    a.observations.push_back({0.1 * k, 1.0});
    b.observations.push_back({1.0, 0.1 * k});
  }
  a.gt_return = 0.0;
  b.gt_return = 1.0;
  const auto ds = rank_by_gt({a, b});
  TrainConfig cfg;
  cfg.segment_len_min = 2;
  cfg.segment_len_max = 5;
  Rng rng = make_rng(1);
  std::vector<SegmentPair> batch;
  for (int k = 0; k < 32; ++k) batch.push_back(sample_pair(ds, cfg, rng));
  const double zero_loss = batch_loss(RewardNet::zeros({2, 64, 64, 1}), batch, 1.0).loss;

  const auto id = RewardNet::from_params({1, 1}, {1.0, 0.0}, 0);
  const std::vector<Observation> lo = {{3.0}}, hi = {{3.0}}, huge = {{1000.0}}, zero = {{0.0}};
  SegmentPair eq{lo, hi};
  const double half = pair_prob(id, eq, 1.0);
  SegmentPair up{zero, huge}, down{huge, zero};
  const double p_up = pair_prob(id, up, 1.0), p_down = pair_prob(id, down, 1.0);
  const double l_up = pair_loss(id, up, 1.0).loss, l_down = pair_loss(id, down, 1.0).loss;
  const bool stable = std::isfinite(p_up) && std::isfinite(p_down) && std::isfinite(l_up) && std::isfinite(l_down) &&
                      p_up == 1.0 && p_down >= 0.0 && p_down < 1e-300 && std::abs(l_down - 1000.0) < 1e-9;

  const bool pass = worst < kGradTol && std::abs(zero_loss - std::log(2.0)) <= kLn2Tol && half == 0.5 && stable;
  report(pass, "numerical-core",
         "grad-check max rel err " + sci(worst) + ", zero-net loss - ln2 = " + sci(zero_loss - std::log(2.0)) +
             ", pair_prob(equal) = " + num(half, 17) +
             ", |dJ| = 1000 finite: " + (stable ? "yes" : "no"));
}

void oracle_equivalence() {
  int exact = 0;
  const auto battery = trex::testing::planner_battery(kBattery);
  for (const auto& spec : battery) {
    const auto plan = value_iteration(spec, [&spec](Cell c) { return gt_reward(spec, c); }, 1.0, 1e-12);
    const auto start = spec.start_cells.front();
    const double optimum = trex::testing::exhaustive_optimum(spec, start);
    const auto ev = evaluate_policy(spec, plan.policy, 1, 0);
    if (plan.value(spec, start, 0) == optimum && ev.mean == optimum) ++exact;
  }
  report(exact == static_cast<int>(battery.size()), "oracle-equivalence",
         std::to_string(exact) + "/" + std::to_string(battery.size()) + " 3x3 horizon-4 instances exact");
}

struct CmdResult {
  int code = -1;
  std::string out;
};

CmdResult run_cli(const std::string& args) {
  CmdResult r;
  FILE* p = popen((std::string(TREX_BINARY) + " " + args + " 2>&1").c_str(), "r");
  if (!p) return r;
  std::array<char, 4096> buf{};
  while (fgets(buf.data(), static_cast<int>(buf.size()), p)) r.out += buf.data();
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::map<std::string, std::string> tree(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::ifstream in(e.path(), std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    files[fs::relative(e.path(), dir).generic_string()] = ss.str();
  }
  return files;
}

void determinism() {
  const auto spec = (fs::path(TREX_SOURCE_DIR) / "specs" / "extrap-9.spec").string();
  trex::testing::TempDir a("accept-a"), b("accept-b");
  std::string failed;
  for (const auto* dir : {&a, &b}) {
    const std::string rd = " --run-dir " + dir->path().string();
    const std::vector<std::string> steps = {
        "gen-demos --seed 7 --spec " + spec + rd,
        "rank --by gt" + rd,
        "train-reward --seed 8 --steps 500" + rd,
        "plan --reward learned" + rd,
        "plan --reward gt" + rd,
        "plan --reward clone" + rd,
        "evaluate --policy trex --seed 9" + rd,
        "evaluate --policy oracle --seed 9" + rd,
        "evaluate --policy clone --seed 9" + rd,
        "extrapolate" + rd,
        "saliency" + rd,
        "summary" + rd,
        "grad-check --seed 10" + rd,
        "sweep-noise --seed 11 --levels 1 0.7 --repetitions 2 --steps 200 --episodes 20" + rd,
    };
    for (const auto& s : steps) {
      const auto r = run_cli(s);
      if (r.code != 0 && failed.empty()) failed = s + ": " + r.out;
    }
  }
  const auto ta = tree(a.path()), tb = tree(b.path());
  std::size_t same = 0;
  for (const auto& [name, bytes] : ta) {
    if (tb.count(name) && tb.at(name) == bytes) ++same;
  }
  const bool pass = failed.empty() && ta.size() == tb.size() && same == ta.size() && ta.size() > 10;
  report(pass, "determinism",
         failed.empty() ? std::to_string(same) + "/" + std::to_string(ta.size()) + " artifacts byte-identical"
                        : "step failed: " + failed);
}

void vote_aggregation() {
  using V = VoteLabel;
  const std::vector<VoteRecord> records = {
      {{0, 1}, {V::j_better, V::j_better, V::j_better, V::i_better, V::not_sure, V::not_sure}},
      {{1, 2}, {V::i_better, V::i_better, V::j_better, V::j_better}},
      {{2, 3}, std::vector<V>(6, V::not_sure)},
      {{3, 4}, {V::i_better, V::i_better, V::i_better, V::j_better, V::j_better, V::not_sure}},
      {{5, 4}, {V::j_better, V::j_better, V::i_better, V::not_sure, V::not_sure, V::j_better}},
      {{4, 6}, {V::not_sure, V::not_sure, V::not_sure, V::i_better, V::j_better, V::j_better}},
      {{6, 5}, {V::i_better, V::i_better}},
      {{5, 6}, {V::i_better, V::j_better, V::j_better}},
      {{3, 6}, {V::not_sure, V::not_sure, V::j_better, V::j_better, V::i_better, V::i_better}},
  };
  std::vector<PreferencePair> want = {{0, 1}, {4, 3}, {5, 4}, {5, 6}};
  auto got = aggregate_votes(records);
  std::sort(got.begin(), got.end());
  std::sort(want.begin(), want.end());

  std::vector<Trajectory> twelve;
  for (int k = 0; k < 12; ++k) {
    Trajectory t;
    t.id = "d" + std::to_string(k);
    t.observations = {{0.0}, {static_cast<double>(k)}};
    t.gt_return = k;
    t.created_step = k;
    twelve.push_back(t);
  }
  std::vector<VoteRecord> all;
  for (int i = 0; i < 12; ++i)
    for (int j = i + 1; j < 12; ++j) all.push_back({{i, j}, {V::j_better, V::j_better, V::i_better}});
  const auto by_gt = rank_by_gt(twelve).pairs.size();
  const auto by_votes = aggregate_votes(all).size();
  report(got == want && by_gt == 66 && by_votes == 66, "vote-aggregation",
         "fixture " + std::string(got == want ? "matches" : "differs") + ", 12 demos -> " + std::to_string(by_gt) +
             " gt pairs, " + std::to_string(by_votes) + " voted pairs");
}

void informational(const GridworldSpec& spec, const std::vector<SeedRun>& runs) {
  // fully inverted ranking
  const auto& r = runs[0];
  auto inverted = rank_by_gt(r.demos);
  for (auto& p : inverted.pairs) std::swap(p.first, p.second);
  inverted.provenance = Provenance::corrupted;
  inverted.order_correctness = order_correctness(inverted.trajectories, inverted.pairs);
  const double inv = run_pipeline(spec, inverted, pipeline_cfg(1)).eval.mean;
  info("inverted-ranking", "seed1 return " + num(inv, 2) + " vs best demo " + num(r.best, 2) +
                               (inv <= r.best ? " (at or below best demo)" : " (above best demo)"));

  int top2_ok = 0, acc_ok = 0;
  std::string detail, acc_detail;
  for (std::size_t k = 0; k < runs.size(); ++k) {
    const auto& ens = runs[k].trex.ensemble;
    const auto fn = [&ens](std::span<const double> o) { return ensemble_reward(ens, o); };
    const auto rep = saliency_report(fn, runs[k].demos);
    std::vector<std::size_t> order(rep.mean_attribution.size());
    for (std::size_t f = 0; f < order.size(); ++f) order[f] = f;
    std::sort(order.begin(), order.end(),
              [&](std::size_t x, std::size_t y) { return rep.mean_attribution[x] > rep.mean_attribution[y]; });
    if (spec.gt_weights[order[0]] != 0.0 && spec.gt_weights[order[1]] != 0.0) ++top2_ok;
    detail += " seed" + std::to_string(k + 1) + "[" + std::to_string(order[0]) + "," + std::to_string(order[1]) + "]";
    const double acc = ranking_accuracy(fn, rank_by_gt(runs[k].demos));
    if (acc > 0.9) ++acc_ok;
    acc_detail += " " + num(acc);
  }
  info("saliency-top2", "top-2 features carry ground-truth weight in " + std::to_string(top2_ok) + "/5;" + detail);
  info("training-pair-accuracy", "trajectory ranking accuracy > 0.9 in " + std::to_string(acc_ok) + "/5:" + acc_detail);
}

}  // namespace

int main() {
  const auto spec = make_extrap9();

  const auto t0 = std::chrono::steady_clock::now();
  std::vector<SeedRun> runs;
  for (int s = 1; s <= kSeeds; ++s) runs.push_back(stage_one(spec, static_cast<std::uint64_t>(s)));
  better_than_demonstrator(runs, seconds_since(t0));
  extrapolation(spec, runs);
  noise_robustness(spec, runs[0]);
  time_order(spec, runs);
  numerical_core();
  oracle_equivalence();
  determinism();
  vote_aggregation();
  informational(spec, runs);

  std::printf("%s: %d primary criteria failed\n", failures ? "FAILED" : "OK", failures);
  return failures ? 1 : 0;
}
