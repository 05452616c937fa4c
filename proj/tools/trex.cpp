#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <iostream>
#include <optional>
#include <thread>

#include "CLI11.hpp"
#include "run_dir.hpp"
#include "trex/demos.hpp"
#include "trex/errors.hpp"
#include "trex/eval.hpp"
#include "trex/label_server.hpp"

namespace fs = std::filesystem;
using namespace trex;
using namespace trex::cli;

namespace {

struct Common {
  std::string run_dir;
  std::string config;
  std::string spec;
};

struct Overrides {
  std::optional<int> stage, per_checkpoint, heldout_per_checkpoint;
  std::optional<long> updates, checkpoint_every;
  std::optional<int> steps, ensemble_size, num_pairs, threads, episodes, repetitions, target_votes;
  std::optional<double> lr;
  std::optional<std::vector<double>> levels;
};

void add_common(CLI::App* sub, Common& c, bool with_spec) {
  sub->add_option("--run-dir", c.run_dir, "Run directory holding every artifact of one experiment")->required();
  sub->add_option("--config", c.config, "Config file (format = trex-config/1); flags override it");
  if (with_spec) {
    sub->add_option("--spec", c.spec,
                    "Gridworld spec file, with or without the .spec suffix (default: <run-dir>/spec.gridworld)");
  }
}

RunConfig load_config(const Common& c, const Overrides& o) {
  RunConfig cfg;
  if (!c.config.empty()) cfg.apply(KeyValueDoc::load(c.config, "trex-config"));
  if (o.stage) cfg.stage = *o.stage;
  if (o.per_checkpoint) cfg.per_checkpoint = *o.per_checkpoint;
  if (o.heldout_per_checkpoint) cfg.heldout_per_checkpoint = *o.heldout_per_checkpoint;
  if (o.updates) cfg.learner.total_updates = *o.updates;
  if (o.checkpoint_every) cfg.learner.checkpoint_every = *o.checkpoint_every;
  if (o.steps) cfg.train.train_steps = *o.steps;
  if (o.ensemble_size) cfg.train.ensemble_size = *o.ensemble_size;
  if (o.num_pairs) cfg.train.num_pairs = *o.num_pairs;
  if (o.threads) cfg.train.threads = cfg.sweep_threads = *o.threads;
  if (o.lr) cfg.train.lr = *o.lr;
  if (o.episodes) cfg.eval_episodes = *o.episodes;
  if (o.repetitions) cfg.sweep_repetitions = *o.repetitions;
  if (o.levels) cfg.sweep_levels = *o.levels;
  if (o.target_votes) cfg.target_votes = *o.target_votes;
  cfg.validate();
  return cfg;
}

fs::path spec_path(const Common& c) {
  if (!c.spec.empty()) return resolve_spec_path(c.spec);
  const auto p = fs::path(c.run_dir) / "spec.gridworld";
  require_artifact(p, "gen-demos");
  return p;
}

std::vector<Trajectory> read_demos(const fs::path& run_dir, const GridworldSpec* spec = nullptr,
                                   const std::string& name = "demos.jsonl") {
  require_artifact(run_dir / name, "gen-demos");
  return load_demos(run_dir / name, spec);
}

Ensemble read_ensemble(const fs::path& run_dir) {
  require_artifact(run_dir / "ensemble" / "meta", "train-reward");
  return load_ensemble(run_dir / "ensemble");
}

ObsRewardFn ensemble_fn(const Ensemble& ens) {
  return [&ens](std::span<const double> o) { return ensemble_reward(ens, o); };
}

std::string seed_text(std::uint64_t s) { return std::to_string(s); }

void print_line(const std::string& s) { std::cout << s << "\n"; }

std::string fixed(double v, int digits = 3) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

std::string policy_name_for(const std::string& reward) {
  if (reward == "learned") return "trex";
  if (reward == "gt") return "oracle";
  return reward;
}

std::atomic<bool> g_interrupted{false};

extern "C" void on_signal(int) { g_interrupted = true; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"T-REX: reward learning from ranked demonstrations on gridworld MDPs"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  Common c;
  Overrides o;
  std::uint64_t seed = 0;
  const auto add_seed = [&](CLI::App* sub) {
    sub->add_option("--seed", seed, "Seed for every random draw of this step")->required();
  };

  // gen-demos
  auto* gen = app.add_subcommand("gen-demos", "Train the checkpointed demonstrator and roll out demonstrations");
  add_common(gen, c, true);
  add_seed(gen);
  gen->add_option("--stage", o.stage, "Demo subset: 1 = worst third, 2 = worst half, 3 = all (default 1)");
  gen->add_option("--per-checkpoint", o.per_checkpoint, "Rollouts per checkpoint (default 1)");
  gen->add_option("--heldout-per-checkpoint", o.heldout_per_checkpoint,
                  "Held-out rollouts per checkpoint for extrapolation (default 3)");
  gen->add_option("--updates", o.updates, "Demonstrator Q-learning updates (default 35000)");
  gen->add_option("--checkpoint-every", o.checkpoint_every, "Updates between checkpoints (default 1000)");

  // rank
  std::string rank_by;
  std::string votes_file;
  auto* rank = app.add_subcommand("rank", "Build pairwise preferences from the demonstrations");
  add_common(rank, c, false);
  rank->add_option("--by", rank_by, "Ranking source")->required()->check(CLI::IsMember({"gt", "time", "votes"}));
  rank->add_option("--votes", votes_file, "Vote records for --by votes (default: <run-dir>/votes.jsonl)");

  // corrupt
  std::optional<long> swaps;
  std::optional<double> level;
  auto* corrupt = app.add_subcommand("corrupt", "Rank by ground truth, then apply random adjacent swaps");
  add_common(corrupt, c, false);
  add_seed(corrupt);
  auto* swaps_opt = corrupt->add_option("--swaps", swaps, "Number of adjacent swaps");
  auto* level_opt = corrupt->add_option("--level", level, "Swap until order correctness drops to this level");
  swaps_opt->excludes(level_opt);

  // train-reward
  auto* train = app.add_subcommand("train-reward", "Train the reward ensemble on rankings.txt");
  add_common(train, c, false);
  add_seed(train);
  train->add_option("--steps", o.steps, "Adam steps per net (default 10000)");
  train->add_option("--ensemble-size", o.ensemble_size, "Number of nets (default 5)");
  train->add_option("--num-pairs", o.num_pairs, "Segment pairs per net (default 5000)");
  train->add_option("--lr", o.lr, "Adam learning rate (default 1e-4)");
  train->add_option("--threads", o.threads, "Nets trained in parallel (default 1)");

  // grad-check
  int trials = 20;
  double fd_step = 1e-5;
  auto* grad = app.add_subcommand("grad-check", "Compare analytic loss gradients with central differences");
  add_common(grad, c, false);
  add_seed(grad);
  grad->add_option("--trials", trials, "Random nets and batches to check")->capture_default_str();
  grad->add_option("--step", fd_step, "Finite-difference step")->capture_default_str();

  // plan
  std::string plan_reward;
  auto* plan = app.add_subcommand("plan", "Compute a policy: value iteration or behavioural cloning");
  add_common(plan, c, true);
  plan->add_option("--reward", plan_reward,
                   "learned -> policy_trex, gt -> policy_oracle, zero -> policy_zero, clone -> policy_clone")
      ->required()
      ->check(CLI::IsMember({"learned", "gt", "zero", "clone"}));

  // evaluate
  std::string eval_policy;
  auto* evaluate = app.add_subcommand("evaluate", "Roll out a policy and record ground-truth returns");
  add_common(evaluate, c, true);
  add_seed(evaluate);
  evaluate->add_option("--policy", eval_policy, "Policy to evaluate")
      ->required()
      ->check(CLI::IsMember({"trex", "oracle", "zero", "clone"}));
  evaluate->add_option("--episodes", o.episodes, "Episodes (default 100)");

  // extrapolate
  auto* extrap = app.add_subcommand("extrapolate", "Predicted vs ground-truth returns on demos and held-out rollouts");
  add_common(extrap, c, false);

  // sweep-noise
  auto* sweep = app.add_subcommand("sweep-noise", "Ranking-noise sweep: corrupt, retrain, re-plan, evaluate");
  add_common(sweep, c, true);
  add_seed(sweep);
  sweep->add_option("--levels", o.levels, "Order-correctness levels (default 1 0.95 0.85 0.7 0.5)");
  sweep->add_option("--repetitions", o.repetitions, "Repetitions per level (default 9)");
  sweep->add_option("--steps", o.steps, "Adam steps per net (default 10000)");
  sweep->add_option("--num-pairs", o.num_pairs, "Segment pairs per net (default 5000)");
  sweep->add_option("--episodes", o.episodes, "Evaluation episodes per run (default 100)");
  sweep->add_option("--threads", o.threads, "Sweep workers (default 1)");

  // saliency
  auto* sal = app.add_subcommand("saliency", "Per-feature attribution of the learned reward over the demos");
  add_common(sal, c, false);

  // summary
  auto* summary = app.add_subcommand("summary", "Best demo, average demo, T-REX, clone and oracle returns");
  add_common(summary, c, false);

  // label-serve
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string static_dir;
  bool export_only = false;
  auto* serve = app.add_subcommand("label-serve", "Serve pairwise labelling over HTTP; Ctrl-C exports votes.jsonl");
  add_common(serve, c, true);
  add_seed(serve);
  serve->add_option("--host", host, "Bind address")->capture_default_str();
  serve->add_option("--port", port, "Port (0 picks a free one)")->capture_default_str();
  serve->add_option("--static-dir", static_dir, "Directory of UI assets served at /");
  serve->add_option("--target-votes", o.target_votes, "Votes per pair before it is retired (default 6)");
  serve->add_flag("--export-only", export_only, "Write votes.jsonl from the vote log and exit");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    const fs::path run_dir = c.run_dir;
    const auto cfg = load_config(c, o);
    StepRecord step;
    step.config_hash = config_hash(cfg);

    if (gen->parsed()) {
      const auto spec = load_spec(spec_path(c));
      const auto checkpoints = train_demonstrator(spec, cfg.learner, derive_seed(seed, 1));
      const auto all = generate_demos(spec, checkpoints, cfg.per_checkpoint, derive_seed(seed, 2));
      const auto demos = stage_subset(all, cfg.stage);
      const double best = demos.back().gt_return;
      const double cap = best + (cfg.heldout_max_ratio - 1.0) * std::abs(best);
      const auto held = heldout_rollouts(spec, checkpoints, cfg.heldout_per_checkpoint, derive_seed(seed, 3), cap);
      save_spec(spec, run_dir / "spec.gridworld");
      save_demos(run_dir / "demos.jsonl", demos);
      save_demos(run_dir / "heldout.jsonl", held);
      step = {"gen-demos", {{"seed", seed_text(seed)}}, step.config_hash, {},
              {run_dir / "spec.gridworld", run_dir / "demos.jsonl", run_dir / "heldout.jsonl"}};
      print_line("checkpoints " + std::to_string(checkpoints.size()) + ", demos " + std::to_string(demos.size()) +
                 " (stage " + std::to_string(cfg.stage) + "), best demo return " + fixed(best) + ", held-out " +
                 std::to_string(held.size()));
    } else if (rank->parsed()) {
      auto demos = read_demos(run_dir);
      RankedDataset ds;
      step.inputs = {run_dir / "demos.jsonl"};
      if (rank_by == "gt") {
        ds = rank_by_gt(demos);
      } else if (rank_by == "time") {
        ds = rank_by_time(demos);
      } else {
        const fs::path vf = votes_file.empty() ? run_dir / "votes.jsonl" : fs::path(votes_file);
        require_artifact(vf, "label-serve --export-only");
        ds = rank_by_votes(demos, parse_vote_records(read_file(vf)));
        step.inputs.push_back(vf);
      }
      save_rankings(run_dir / "rankings.txt", ds);
      step.command = "rank";
      step.outputs = {run_dir / "rankings.txt"};
      print_line(std::string("provenance ") + provenance_name(ds.provenance) + ", pairs " +
                 std::to_string(ds.pairs.size()) + ", order correctness " + fixed(ds.order_correctness, 4));
    } else if (corrupt->parsed()) {
      if (!swaps && !level) throw ValidationError("corrupt needs --swaps N or --level X");
      auto demos = sort_by_return(read_demos(run_dir));
      const auto ds = swaps ? inject_swap_noise(demos, *swaps, seed) : inject_swap_noise_to_level(demos, *level, seed);
      save_rankings(run_dir / "rankings.txt", ds);
      step = {"corrupt", {{"seed", seed_text(seed)}}, step.config_hash, {run_dir / "demos.jsonl"},
              {run_dir / "rankings.txt"}};
      print_line("swaps " + std::to_string(ds.swaps) + ", order correctness " + fixed(ds.order_correctness, 4));
    } else if (train->parsed()) {
      require_artifact(run_dir / "rankings.txt", "rank");
      const auto ds = load_rankings(run_dir / "rankings.txt", read_demos(run_dir));
      auto tc = cfg.train;
      tc.seed = seed;
      std::vector<TrainLogRow> log;
      const auto ens = train_reward(ds, tc, &log);
      fs::remove_all(run_dir / "ensemble");
      save_ensemble(run_dir / "ensemble", ens);
      write_file(run_dir / "train_log.csv", format_train_log(log));
      step = {"train-reward", {{"seed", seed_text(seed)}}, step.config_hash,
              {run_dir / "demos.jsonl", run_dir / "rankings.txt"}, {run_dir / "ensemble", run_dir / "train_log.csv"}};
      print_line("ensemble of " + std::to_string(ens.size()) + " nets, trajectory ranking accuracy " +
                 fixed(ranking_accuracy(ensemble_fn(ens), ds)));
    } else if (grad->parsed()) {
      const auto results = gradient_check(trials, seed, fd_step);
      std::string csv = "trial,layers,pairs,max_rel_error\n";
      double worst = 0.0;
      for (std::size_t t = 0; t < results.size(); ++t) {
        std::string layers;
        for (const int s : results[t].layer_sizes) layers += (layers.empty() ? "" : "x") + std::to_string(s);
        csv += std::to_string(t) + "," + layers + "," + std::to_string(results[t].pairs) + "," +
               format_double(results[t].max_rel_error) + "\n";
        worst = std::max(worst, results[t].max_rel_error);
      }
      write_file(run_dir / "grad_check.csv", csv);
      step = {"grad-check", {{"seed", seed_text(seed)}}, step.config_hash, {}, {run_dir / "grad_check.csv"}};
      update_manifest(run_dir, step);
      print_line("max relative error " + format_double(worst) + " over " + std::to_string(results.size()) + " trials");
      if (worst >= 1e-4) throw std::runtime_error("gradient check failed: max relative error >= 1e-4");
      return 0;
    } else if (plan->parsed()) {
      const auto sp = spec_path(c);
      const auto spec = load_spec(sp);
      const auto name = policy_name_for(plan_reward);
      const auto out = run_dir / ("policy_" + name + ".txt");
      step.command = "plan --reward " + plan_reward;
      step.inputs = {sp};
      if (plan_reward == "clone") {
        step.inputs.push_back(run_dir / "demos.jsonl");
        save_policy(out, clone_best_demo(spec, read_demos(run_dir, &spec)));
      } else if (plan_reward == "zero") {
        // Every action is optimal under a constant reward: uniform over all of them.
        save_policy(out, TabularPolicy::uniform(spec));
      } else {
        CellRewardFn reward;
        Ensemble ens;
        if (plan_reward == "learned") {
          ens = read_ensemble(run_dir);
          reward = learned_cell_reward(spec, ens);
          step.inputs.push_back(run_dir / "ensemble");
        } else {
          reward = [&spec](Cell cell) { return gt_reward(spec, cell); };
        }
        const auto result = value_iteration(spec, reward, cfg.plan_gamma, cfg.plan_tol);
        save_policy(out, result.policy, result.values);
        print_line("value iteration: " + std::to_string(result.sweeps) + " sweeps, residual " +
                   format_double(result.residual));
      }
      step.outputs = {out};
      print_line("wrote " + out.string());
    } else if (evaluate->parsed()) {
      const auto sp = spec_path(c);
      const auto spec = load_spec(sp);
      const auto in = run_dir / ("policy_" + eval_policy + ".txt");
      require_artifact(in, "plan");
      const auto stats = evaluate_policy(spec, load_policy(in), cfg.eval_episodes, seed);
      const auto out = run_dir / ("eval_" + eval_policy + ".csv");
      write_file(out, format_eval_csv(seed, stats));
      step = {"evaluate --policy " + eval_policy, {{"seed", seed_text(seed)}}, step.config_hash, {sp, in}, {out}};
      print_line(eval_policy + ": mean return " + fixed(stats.mean) + " (std " + fixed(stats.std) + ", " +
                 std::to_string(stats.returns.size()) + " episodes)");
    } else if (extrap->parsed()) {
      const auto ens = read_ensemble(run_dir);
      const auto report =
          extrapolation_report(ensemble_fn(ens), read_demos(run_dir), read_demos(run_dir, nullptr, "heldout.jsonl"));
      const auto csv = format_extrapolation_csv(report);
      write_file(run_dir / "extrapolation.csv", csv);
      write_file(run_dir / "extrapolation.meta", format_extrapolation_meta(report));
      write_file(run_dir / "extrapolation.svg", render_scatter_svg(csv));
      step = {"extrapolate",
              {},
              step.config_hash,
              {run_dir / "ensemble", run_dir / "demos.jsonl", run_dir / "heldout.jsonl"},
              {run_dir / "extrapolation.csv", run_dir / "extrapolation.meta", run_dir / "extrapolation.svg"}};
      print_line("pearson held-out " + fixed(report.pearson_heldout) + ", all " + fixed(report.pearson_all) +
                 "; spearman held-out " + fixed(report.spearman_heldout));
    } else if (sweep->parsed()) {
      const auto sp = spec_path(c);
      const auto spec = load_spec(sp);
      NoiseSweepConfig sc;
      sc.levels = cfg.sweep_levels;
      sc.repetitions = cfg.sweep_repetitions;
      sc.threads = cfg.sweep_threads;
      sc.seed = seed;
      sc.pipeline.train = cfg.train;
      sc.pipeline.plan_gamma = cfg.plan_gamma;
      sc.pipeline.plan_tol = cfg.plan_tol;
      sc.pipeline.eval_episodes = cfg.eval_episodes;
      sc.pipeline.eval_seed = derive_seed(seed, 0);
      const auto result = noise_sweep(spec, sort_by_return(read_demos(run_dir, &spec)), sc);
      write_file(run_dir / "noise_sweep.csv", format_noise_sweep_csv(result));
      write_file(run_dir / "noise_runs.csv", format_noise_runs_csv(result));
      step = {"sweep-noise", {{"seed", seed_text(seed)}}, step.config_hash, {sp, run_dir / "demos.jsonl"},
              {run_dir / "noise_sweep.csv", run_dir / "noise_runs.csv"}};
      for (const auto& l : result.levels) {
        print_line("level " + fixed(l.target, 2) + ": correctness " + fixed(l.mean_correctness) + ", return " +
                   fixed(l.mean_return) + " [" + fixed(l.ci_low) + ", " + fixed(l.ci_high) + "]");
      }
    } else if (sal->parsed()) {
      const auto ens = read_ensemble(run_dir);
      const auto report = saliency_report(ensemble_fn(ens), read_demos(run_dir));
      write_file(run_dir / "saliency.csv", format_saliency_csv(report));
      step = {"saliency", {}, step.config_hash, {run_dir / "ensemble", run_dir / "demos.jsonl"},
              {run_dir / "saliency.csv"}};
      std::string attr;
      for (const double a : report.mean_attribution) attr += " " + fixed(a);
      print_line("mean attribution per feature:" + attr);
    } else if (summary->parsed()) {
      const auto rows = summary_table(run_dir);
      write_file(run_dir / "summary.csv", format_summary_csv(rows));
      step = {"summary",
              {},
              step.config_hash,
              {run_dir / "demos.jsonl", run_dir / "eval_trex.csv", run_dir / "eval_clone.csv",
               run_dir / "eval_oracle.csv"},
              {run_dir / "summary.csv"}};
      std::cout << format_summary_text(rows);
    } else if (serve->parsed()) {
      const auto sp = spec_path(c);
      const auto spec = load_spec(sp);
      const auto demos = read_demos(run_dir, &spec);
      const auto dataset_id = content_hash(run_dir / "demos.jsonl");
      auto session = std::make_shared<LabelSession>(spec, demos, dataset_id, seed, run_dir / "votes.log",
                                                    cfg.target_votes);
      if (!export_only) {
        LabelServer server(session, static_dir);
        const int bound = server.bind(host, port);
        if (bound < 0) throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port));
        std::signal(SIGINT, on_signal);
        std::signal(SIGTERM, on_signal);
        std::thread watcher([&server] {
          while (!g_interrupted) std::this_thread::sleep_for(std::chrono::milliseconds(100));
          server.stop();
        });
        print_line("labelling " + std::to_string(session->num_pairs()) + " pairs on http://" + host + ":" +
                   std::to_string(bound) + "/ (Ctrl-C to stop and export)");
        std::cout.flush();
        server.listen();
        g_interrupted = true;
        watcher.join();
      }
      write_file(run_dir / "votes.jsonl", format_vote_records(session->export_records()));
      step = {"label-serve", {{"seed", seed_text(seed)}}, step.config_hash, {sp, run_dir / "demos.jsonl"},
              {run_dir / "votes.log", run_dir / "votes.jsonl"}};
      print_line("exported " + std::to_string(session->export_records().size()) + " vote records, " +
                 std::to_string(session->retired()) + " of " + std::to_string(session->num_pairs()) +
                 " pairs retired");
    }
    update_manifest(run_dir, step);
    return 0;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
