#include "trex/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <sstream>
#include <thread>

#include "trex/errors.hpp"
#include "trex/kvfile.hpp"

namespace trex {

namespace {

double mean_of(std::span<const double> v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

std::vector<std::string> split(std::string_view line, char sep) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (true) {
    const auto end = line.find(sep, pos);
    out.emplace_back(line.substr(pos, end == std::string_view::npos ? std::string_view::npos : end - pos));
    if (end == std::string_view::npos) break;
    pos = end + 1;
  }
  return out;
}

std::vector<std::string> csv_lines(std::string_view text) {
  std::vector<std::string> out;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) out.push_back(line);
  }
  return out;
}

double trajectory_prediction(const ObsRewardFn& reward, const Trajectory& t) {
  double total = 0.0;
  for (const auto& obs : t.rewarded()) total += reward(obs);
  return total;
}

std::string fixed(double v, int digits = 2) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

}  // namespace

AffineFit fit_affine(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ContractViolation("fit_affine: size mismatch");
  if (x.size() < 2) throw ValidationError("affine fit needs at least two points");
  const double mx = mean_of(x);
  const double my = mean_of(y);
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    sxx += (x[k] - mx) * (x[k] - mx);
    sxy += (x[k] - mx) * (y[k] - my);
  }
  AffineFit fit;
  fit.slope = sxx > 0.0 ? sxy / sxx : 0.0;
  fit.intercept = my - fit.slope * mx;
  return fit;
}

double sum_squared_error(const AffineFit& fit, std::span<const double> x, std::span<const double> y) {
  double sse = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) sse += (fit(x[k]) - y[k]) * (fit(x[k]) - y[k]);
  return sse;
}

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ContractViolation("pearson: size mismatch");
  if (x.size() < 2) return std::numeric_limits<double>::quiet_NaN();
  const double mx = mean_of(x);
  const double my = mean_of(y);
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    sxx += (x[k] - mx) * (x[k] - mx);
    syy += (y[k] - my) * (y[k] - my);
    sxy += (x[k] - mx) * (y[k] - my);
  }
  if (sxx <= 0.0 || syy <= 0.0) return std::numeric_limits<double>::quiet_NaN();
  return sxy / std::sqrt(sxx * syy);
}

std::vector<double> average_ranks(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  std::size_t k = 0;
  while (k < order.size()) {
    std::size_t end = k + 1;
    while (end < order.size() && values[order[end]] == values[order[k]]) ++end;
    const double rank = 0.5 * static_cast<double>(k + end - 1) + 1.0;
    for (std::size_t m = k; m < end; ++m) ranks[order[m]] = rank;
    k = end;
  }
  return ranks;
}

double spearman(std::span<const double> x, std::span<const double> y) {
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  return pearson(rx, ry);
}

MeanCi mean_ci95(std::span<const double> values) {
  MeanCi out;
  out.mean = mean_of(values);
  if (values.size() < 2) return out;
  double ss = 0.0;
  for (const double v : values) ss += (v - out.mean) * (v - out.mean);
  const double sd = std::sqrt(ss / static_cast<double>(values.size() - 1));
  out.half_width = 1.96 * sd / std::sqrt(static_cast<double>(values.size()));
  return out;
}

CellRewardFn learned_cell_reward(const GridworldSpec& spec, const Ensemble& ens) {
  std::vector<double> table(static_cast<std::size_t>(spec.num_cells()));
  for (int c = 0; c < spec.num_cells(); ++c) {
    table[static_cast<std::size_t>(c)] = squashed_reward(ens, spec.features_at(spec.cell_at(c)));
  }
  return [table = std::move(table), &spec](Cell c) { return table[static_cast<std::size_t>(spec.index(c))]; };
}

PipelineResult run_pipeline(const GridworldSpec& spec, const RankedDataset& dataset, const PipelineConfig& cfg) {
  PipelineResult out;
  out.ensemble = train_reward(dataset, cfg.train);
  out.plan = value_iteration(spec, learned_cell_reward(spec, out.ensemble), cfg.plan_gamma, cfg.plan_tol);
  out.eval = evaluate_policy(spec, out.plan.policy, cfg.eval_episodes, cfg.eval_seed);
  return out;
}

ExtrapolationReport extrapolation_report(const ObsRewardFn& reward, const std::vector<Trajectory>& demos,
                                         const std::vector<Trajectory>& heldout) {
  if (demos.size() < 2) throw ValidationError("extrapolation_report: need at least two demonstrations");
  ExtrapolationReport report;
  std::vector<double> demo_pred, demo_gt;
  for (const auto& t : demos) {
    report.rows.push_back({t.id, true, t.gt_return, trajectory_prediction(reward, t), 0.0});
    demo_pred.push_back(report.rows.back().predicted);
    demo_gt.push_back(t.gt_return);
  }
  for (const auto& t : heldout) report.rows.push_back({t.id, false, t.gt_return, trajectory_prediction(reward, t), 0.0});
  report.fit = fit_affine(demo_pred, demo_gt);
  report.demo_max_gt = *std::max_element(demo_gt.begin(), demo_gt.end());

  std::vector<double> gt_all, norm_all, gt_held, norm_held;
  for (auto& row : report.rows) {
    row.normalized = report.fit(row.predicted);
    gt_all.push_back(row.gt_return);
    norm_all.push_back(row.normalized);
    if (!row.is_demo) {
      gt_held.push_back(row.gt_return);
      norm_held.push_back(row.normalized);
    }
  }
  report.pearson_all = pearson(norm_all, gt_all);
  report.spearman_all = spearman(norm_all, gt_all);
  report.pearson_heldout = pearson(norm_held, gt_held);
  report.spearman_heldout = spearman(norm_held, gt_held);
  return report;
}

std::vector<Trajectory> heldout_rollouts(const GridworldSpec& spec, const std::vector<Checkpoint>& checkpoints,
                                         int per_checkpoint, std::uint64_t seed, double max_return) {
  std::vector<Trajectory> out;
  for (auto& t : generate_demos(spec, checkpoints, per_checkpoint, seed)) {
    if (t.gt_return > max_return) continue;
    t.id = "heldout-" + t.id;
    out.push_back(std::move(t));
  }
  return out;
}

std::string format_extrapolation_csv(const ExtrapolationReport& report) {
  std::string out = "id,kind,gt_return,predicted_return,normalized\n";
  for (const auto& r : report.rows) {
    out += r.id + "," + (r.is_demo ? "demo" : "heldout") + "," + format_double(r.gt_return) + "," +
           format_double(r.predicted) + "," + format_double(r.normalized) + "\n";
  }
  return out;
}

std::string format_extrapolation_meta(const ExtrapolationReport& report) {
  KeyValueDoc doc("trex-extrapolation/1");
  doc.set("normalization", "affine_least_squares_on_demos");
  doc.set("fit_slope", format_double(report.fit.slope));
  doc.set("fit_intercept", format_double(report.fit.intercept));
  doc.set("demo_max_gt", format_double(report.demo_max_gt));
  doc.set("pearson_all", format_double(report.pearson_all));
  doc.set("spearman_all", format_double(report.spearman_all));
  doc.set("pearson_heldout", format_double(report.pearson_heldout));
  doc.set("spearman_heldout", format_double(report.spearman_heldout));
  return doc.dump();
}

std::string render_scatter_svg(std::string_view csv) {
  struct Point {
    bool demo;
    double gt;
    double norm;
  };
  std::vector<Point> pts;
  const auto lines = csv_lines(csv);
  for (std::size_t k = 1; k < lines.size(); ++k) {
    const auto f = split(lines[k], ',');
    if (f.size() != 5) throw ValidationError("extrapolation csv: expected 5 columns on line " + std::to_string(k + 1));
    pts.push_back({f[1] == "demo", parse_double(f[2], "gt_return"), parse_double(f[4], "normalized")});
  }
  double lo = 0.0, hi = 1.0, demo_max = 0.0;
  bool any_demo = false;
  if (!pts.empty()) {
    lo = hi = pts.front().gt;
    for (const auto& p : pts) {
      lo = std::min({lo, p.gt, p.norm});
      hi = std::max({hi, p.gt, p.norm});
      if (p.demo) {
        demo_max = any_demo ? std::max(demo_max, p.gt) : p.gt;
        any_demo = true;
      }
    }
  }
  if (hi - lo < 1e-9) hi = lo + 1.0;
  const double pad = 0.05 * (hi - lo);
  lo -= pad;
  hi += pad;
  constexpr double size = 400.0, margin = 50.0;
  const auto sx = [&](double v) { return margin + (v - lo) / (hi - lo) * size; };
  const auto sy = [&](double v) { return margin + size - (v - lo) / (hi - lo) * size; };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"500\" height=\"500\" viewBox=\"0 0 500 500\">\n";
  svg << "<rect x=\"0\" y=\"0\" width=\"500\" height=\"500\" fill=\"white\"/>\n";
  svg << "<rect x=\"" << fixed(margin) << "\" y=\"" << fixed(margin) << "\" width=\"" << fixed(size)
      << "\" height=\"" << fixed(size) << "\" fill=\"none\" stroke=\"black\"/>\n";
  if (any_demo) {
    const double mid = std::clamp(demo_max, lo, hi);
    svg << "<line x1=\"" << fixed(sx(lo)) << "\" y1=\"" << fixed(sy(lo)) << "\" x2=\"" << fixed(sx(mid))
        << "\" y2=\"" << fixed(sy(mid)) << "\" stroke=\"gray\"/>\n";
    svg << "<line x1=\"" << fixed(sx(mid)) << "\" y1=\"" << fixed(sy(mid)) << "\" x2=\"" << fixed(sx(hi))
        << "\" y2=\"" << fixed(sy(hi)) << "\" stroke=\"gray\" stroke-dasharray=\"6,4\"/>\n";
  }
  for (const auto& p : pts) {
    svg << "<circle cx=\"" << fixed(sx(p.gt)) << "\" cy=\"" << fixed(sy(p.norm)) << "\" r=\"3\" fill=\""
        << (p.demo ? "#d62728" : "#1f77b4") << "\"/>\n";
  }
  svg << "<text x=\"250\" y=\"490\" text-anchor=\"middle\" font-size=\"14\">ground-truth return</text>\n";
  svg << "<text x=\"15\" y=\"250\" text-anchor=\"middle\" font-size=\"14\" transform=\"rotate(-90 15 250)\">"
         "predicted return (normalized)</text>\n";
  svg << "<text x=\"" << fixed(margin) << "\" y=\"" << fixed(margin + size + 15) << "\" font-size=\"10\">"
      << fixed(lo) << "</text>\n";
  svg << "<text x=\"" << fixed(margin + size) << "\" y=\"" << fixed(margin + size + 15)
      << "\" font-size=\"10\" text-anchor=\"end\">" << fixed(hi) << "</text>\n";
  svg << "</svg>\n";
  return svg.str();
}

std::uint64_t sweep_seed(std::uint64_t base, std::size_t level, int repetition) {
  return derive_seed(derive_seed(base, level + 1), static_cast<std::uint64_t>(repetition) + 1);
}

NoiseSweepResult noise_sweep(const GridworldSpec& spec, const std::vector<Trajectory>& sorted_demos,
                             const NoiseSweepConfig& cfg) {
  if (cfg.repetitions < 2) throw ValidationError("noise_sweep: need at least 2 repetitions per level");
  if (cfg.levels.empty()) throw ValidationError("noise_sweep: no levels");
  const std::size_t jobs = cfg.levels.size() * static_cast<std::size_t>(cfg.repetitions);
  NoiseSweepResult result;
  result.runs.resize(jobs);

  const auto run_job = [&](std::size_t job) {
    const std::size_t level = job / static_cast<std::size_t>(cfg.repetitions);
    const int rep = static_cast<int>(job % static_cast<std::size_t>(cfg.repetitions));
    const auto seed = sweep_seed(cfg.seed, level, rep);
    const auto ds = inject_swap_noise_to_level(sorted_demos, cfg.levels[level], derive_seed(seed, 1));
    PipelineConfig pc = cfg.pipeline;
    pc.train.seed = derive_seed(seed, 2);
    pc.train.threads = 1;
    const auto out = run_pipeline(spec, ds, pc);
    result.runs[job] = {cfg.levels[level], rep, ds.swaps, ds.order_correctness, out.eval.mean};
  };

  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(jobs);
  const auto worker = [&] {
    for (std::size_t job = next++; job < jobs; job = next++) {
      try {
        run_job(job);
      } catch (...) {
        errors[job] = std::current_exception();
      }
    }
  };
  if (cfg.threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < cfg.threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  for (std::size_t level = 0; level < cfg.levels.size(); ++level) {
    std::vector<double> returns, correctness;
    for (const auto& run : result.runs) {
      if (run.target == cfg.levels[level]) {
        returns.push_back(run.mean_return);
        correctness.push_back(run.order_correctness);
      }
    }
    const auto ci = mean_ci95(returns);
    result.levels.push_back({cfg.levels[level], mean_of(correctness), ci.mean, ci.mean - ci.half_width,
                             ci.mean + ci.half_width, static_cast<int>(returns.size())});
  }
  return result;
}

std::string format_noise_sweep_csv(const NoiseSweepResult& result) {
  std::string out = "target,order_correctness,mean_return,ci_low,ci_high,repetitions\n";
  for (const auto& l : result.levels) {
    out += format_double(l.target) + "," + format_double(l.mean_correctness) + "," + format_double(l.mean_return) +
           "," + format_double(l.ci_low) + "," + format_double(l.ci_high) + "," + std::to_string(l.repetitions) + "\n";
  }
  return out;
}

std::string format_noise_runs_csv(const NoiseSweepResult& result) {
  std::string out = "target,repetition,swaps,order_correctness,mean_return\n";
  for (const auto& r : result.runs) {
    out += format_double(r.target) + "," + std::to_string(r.repetition) + "," + std::to_string(r.swaps) + "," +
           format_double(r.order_correctness) + "," + format_double(r.mean_return) + "\n";
  }
  return out;
}

std::vector<double> saliency(const ObsRewardFn& reward, std::span<const double> observation) {
  const double base = reward(observation);
  std::vector<double> masked(observation.begin(), observation.end());
  std::vector<double> out(observation.size());
  for (std::size_t f = 0; f < observation.size(); ++f) {
    const double keep = masked[f];
    masked[f] = 0.0;
    out[f] = std::abs(base - reward(masked));
    masked[f] = keep;
  }
  return out;
}

std::vector<double> saliency(const RewardNet& net, std::span<const double> observation) {
  return saliency([&net](std::span<const double> o) { return forward(net, o); }, observation);
}

std::vector<double> saliency(const Ensemble& ens, std::span<const double> observation) {
  return saliency([&ens](std::span<const double> o) { return ensemble_reward(ens, o); }, observation);
}

SaliencyReport saliency_report(const ObsRewardFn& reward, const std::vector<Trajectory>& trajectories) {
  SaliencyReport report;
  std::size_t count = 0;
  bool first = true;
  for (const auto& t : trajectories) {
    for (std::size_t k = 0; k < t.observations.size(); ++k) {
      const auto& obs = t.observations[k];
      const auto attr = saliency(reward, obs);
      if (report.mean_attribution.empty()) report.mean_attribution.assign(attr.size(), 0.0);
      for (std::size_t f = 0; f < attr.size(); ++f) report.mean_attribution[f] += attr[f];
      ++count;
      const double r = reward(obs);
      if (first || r > report.max_reward.reward) report.max_reward = {t.id, k, r};
      if (first || r < report.min_reward.reward) report.min_reward = {t.id, k, r};
      first = false;
    }
  }
  for (auto& a : report.mean_attribution) a /= static_cast<double>(std::max<std::size_t>(count, 1));
  return report;
}

std::string format_saliency_csv(const SaliencyReport& report) {
  std::string out = "feature,mean_attribution\n";
  for (std::size_t f = 0; f < report.mean_attribution.size(); ++f) {
    out += std::to_string(f) + "," + format_double(report.mean_attribution[f]) + "\n";
  }
  out += "# max_reward," + report.max_reward.trajectory_id + "," + std::to_string(report.max_reward.index) + "," +
         format_double(report.max_reward.reward) + "\n";
  out += "# min_reward," + report.min_reward.trajectory_id + "," + std::to_string(report.min_reward.index) + "," +
         format_double(report.min_reward.reward) + "\n";
  return out;
}

std::string format_eval_csv(std::uint64_t seed, const EvalStats& stats) {
  std::string out = "seed,episode,return\n";
  for (std::size_t e = 0; e < stats.returns.size(); ++e) {
    out += std::to_string(seed) + "," + std::to_string(e) + "," + format_double(stats.returns[e]) + "\n";
  }
  return out;
}

std::vector<double> parse_eval_csv(std::string_view csv) {
  const auto lines = csv_lines(csv);
  if (lines.empty() || lines.front() != "seed,episode,return") {
    throw ValidationError("evaluation csv: expected header 'seed,episode,return'");
  }
  std::vector<double> out;
  for (std::size_t k = 1; k < lines.size(); ++k) {
    const auto f = split(lines[k], ',');
    if (f.size() != 3) throw ValidationError("evaluation csv: expected 3 columns");
    out.push_back(parse_double(f[2], "return"));
  }
  return out;
}

std::vector<SummaryRow> summary_table(const std::filesystem::path& run_dir) {
  const std::vector<std::string> needed = {"demos.jsonl", "eval_trex.csv", "eval_clone.csv", "eval_oracle.csv"};
  std::string missing;
  for (const auto& name : needed) {
    if (!std::filesystem::exists(run_dir / name)) missing += (missing.empty() ? "" : ", ") + (run_dir / name).string();
  }
  if (!missing.empty()) throw ValidationError("summary: missing artifacts: " + missing);

  const auto demos = load_demos(run_dir / "demos.jsonl");
  std::vector<double> demo_returns;
  for (const auto& d : demos) demo_returns.push_back(d.gt_return);
  if (demo_returns.empty()) throw ValidationError("summary: demos.jsonl holds no trajectories");

  const auto stats_row = [](std::string name, std::span<const double> values) {
    SummaryRow row;
    row.method = std::move(name);
    row.mean = mean_of(values);
    double ss = 0.0;
    for (const double v : values) ss += (v - row.mean) * (v - row.mean);
    row.std = values.size() > 1 ? std::sqrt(ss / static_cast<double>(values.size() - 1)) : 0.0;
    row.samples = static_cast<int>(values.size());
    return row;
  };

  std::vector<SummaryRow> rows;
  const double best = *std::max_element(demo_returns.begin(), demo_returns.end());
  rows.push_back({"best_demo", best, 0.0, 1});
  rows.push_back(stats_row("average_demo", demo_returns));
  for (const auto& [method, file] : {std::pair{"trex", "eval_trex.csv"}, std::pair{"clone", "eval_clone.csv"},
                                     std::pair{"oracle", "eval_oracle.csv"}}) {
    const auto values = parse_eval_csv(read_file(run_dir / file));
    rows.push_back(stats_row(method, values));
  }
  return rows;
}

std::string format_summary_csv(const std::vector<SummaryRow>& rows) {
  std::string out = "method,mean_return,std_return,samples\n";
  for (const auto& r : rows) {
    out += r.method + "," + format_double(r.mean) + "," + format_double(r.std) + "," + std::to_string(r.samples) + "\n";
  }
  return out;
}

std::string format_summary_text(const std::vector<SummaryRow>& rows) {
  std::ostringstream out;
  char buf[128];
  std::snprintf(buf, sizeof(buf), "%-14s %12s %10s %8s\n", "method", "mean_return", "std", "n");
  out << buf;
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%-14s %12.3f %10.3f %8d\n", r.method.c_str(), r.mean, r.std, r.samples);
    out << buf;
  }
  return out.str();
}

}  // namespace trex
