#include "trex/reward.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <map>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "trex/errors.hpp"

namespace trex {

namespace {

constexpr std::string_view kEnsembleSchema = "trex-ensemble";

std::vector<int> hidden_from_text(const std::string& text) {
  std::vector<int> out;
  std::istringstream in(text);
  std::string tok;
  while (in >> tok) out.push_back(static_cast<int>(parse_long(tok, "hidden")));
  return out;
}

std::string hidden_to_text(const std::vector<int>& hidden) {
  std::string out;
  for (const int h : hidden) out += (out.empty() ? "" : " ") + std::to_string(h);
  return out;
}

std::vector<int> layer_sizes(int input_dim, const std::vector<int>& hidden) {
  std::vector<int> sizes{input_dim};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(1);
  return sizes;
}

}  // namespace

void TrainConfig::validate() const {
  if (num_pairs < 1) throw ValidationError("num_pairs must be >= 1");
  if (segment_len_min < 1) throw ValidationError("segment_len_min must be >= 1");
  if (segment_len_max < segment_len_min) throw ValidationError("segment_len_max must be >= segment_len_min");
  if (!(lr > 0.0)) throw ValidationError("lr must be positive");
  if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
  if (train_steps < 0) throw ValidationError("train_steps must be >= 0");
  if (ensemble_size < 1) throw ValidationError("ensemble_size must be >= 1");
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ValidationError("gamma must be in (0, 1]");
  if (!(weight_decay >= 0.0)) throw ValidationError("weight_decay must be >= 0");
  if (log_every < 1) throw ValidationError("log_every must be >= 1");
  if (threads < 1) throw ValidationError("threads must be >= 1");
  for (const int h : hidden) {
    if (h < 1) throw ValidationError("hidden layer sizes must be positive");
  }
}

void TrainConfig::apply(const KeyValueDoc& doc) {
  for (const auto& key : doc.keys()) {
    if (key == "num_pairs") num_pairs = static_cast<int>(doc.get_long(key));
    else if (key == "segment_len_min") segment_len_min = static_cast<int>(doc.get_long(key));
    else if (key == "segment_len_max") segment_len_max = static_cast<int>(doc.get_long(key));
    else if (key == "lr") lr = doc.get_double(key);
    else if (key == "batch_size") batch_size = static_cast<int>(doc.get_long(key));
    else if (key == "train_steps") train_steps = static_cast<int>(doc.get_long(key));
    else if (key == "ensemble_size") ensemble_size = static_cast<int>(doc.get_long(key));
    else if (key == "seed") seed = static_cast<std::uint64_t>(doc.get_long(key));
    else if (key == "time_constrained") time_constrained = doc.get_bool(key);
    else if (key == "gamma") gamma = doc.get_double(key);
    else if (key == "weight_decay") weight_decay = doc.get_double(key);
    else if (key == "hidden") hidden = hidden_from_text(doc.get(key));
    else if (key == "log_every") log_every = static_cast<int>(doc.get_long(key));
    else if (key == "threads") threads = static_cast<int>(doc.get_long(key));
    else throw ValidationError("unknown reward-training key '" + key + "'");
  }
  validate();
}

void TrainConfig::write(KeyValueDoc& doc, std::string_view prefix) const {
  const std::string p(prefix);
  doc.set(p + "num_pairs", std::to_string(num_pairs));
  doc.set(p + "segment_len_min", std::to_string(segment_len_min));
  doc.set(p + "segment_len_max", std::to_string(segment_len_max));
  doc.set(p + "lr", format_double(lr));
  doc.set(p + "batch_size", std::to_string(batch_size));
  doc.set(p + "train_steps", std::to_string(train_steps));
  doc.set(p + "ensemble_size", std::to_string(ensemble_size));
  doc.set(p + "seed", std::to_string(seed));
  doc.set(p + "time_constrained", time_constrained ? "true" : "false");
  doc.set(p + "gamma", format_double(gamma));
  doc.set(p + "weight_decay", format_double(weight_decay));
  doc.set(p + "hidden", hidden_to_text(hidden));
  doc.set(p + "log_every", std::to_string(log_every));
}

SegmentPair SegmentPair::swapped() const {
  SegmentPair s = *this;
  std::swap(s.seg_i, s.seg_j);
  std::swap(s.traj_i, s.traj_j);
  std::swap(s.t_i, s.t_j);
  s.label = 1 - label;
  return s;
}

SegmentPair sample_pair(const RankedDataset& dataset, const TrainConfig& cfg, Rng& rng) {
  if (dataset.pairs.empty()) throw ValidationError("sample_pair: dataset has no preference pairs");
  constexpr int kMaxRetries = 100;
  for (int attempt = 0; attempt < kMaxRetries; ++attempt) {
    const auto& [i, j] = dataset.pairs[uniform_index(rng, dataset.pairs.size())];
    const auto& ti = dataset.trajectories[static_cast<std::size_t>(i)];
    const auto& tj = dataset.trajectories[static_cast<std::size_t>(j)];
    const auto len_i = static_cast<long>(ti.rewarded().size());
    const auto len_j = static_cast<long>(tj.rewarded().size());
    const long feasible = std::min(len_i, len_j);
    if (feasible < cfg.segment_len_min) continue;
    const long len = uniform_int(rng, cfg.segment_len_min, std::min<long>(cfg.segment_len_max, feasible));
    const long start_i = uniform_int(rng, 0, (cfg.time_constrained ? feasible : len_i) - len);
    const long start_j = uniform_int(rng, cfg.time_constrained ? start_i : 0, len_j - len);
    SegmentPair pair;
    pair.traj_i = i;
    pair.traj_j = j;
    pair.t_i = static_cast<std::size_t>(start_i);
    pair.t_j = static_cast<std::size_t>(start_j);
    pair.seg_i = ti.rewarded().subspan(pair.t_i, static_cast<std::size_t>(len));
    pair.seg_j = tj.rewarded().subspan(pair.t_j, static_cast<std::size_t>(len));
    pair.label = 1;
    return pair;
  }
  throw ValidationError("sample_pair: no ranking pair has trajectories long enough for segment_len_min=" +
                        std::to_string(cfg.segment_len_min));
}

double predicted_return(const RewardNet& net, std::span<const Observation> segment, double gamma) {
  double total = 0.0;
  double discount = 1.0;
  for (const auto& obs : segment) {
    total += discount * forward(net, obs);
    discount *= gamma;
  }
  return total;
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double pair_prob(const RewardNet& net, const SegmentPair& pair, double gamma) {
  const double ji = predicted_return(net, pair.seg_i, gamma);
  const double jj = predicted_return(net, pair.seg_j, gamma);
  return sigmoid(jj - ji);
}

LossGrad pair_loss(const RewardNet& net, const SegmentPair& pair, double gamma) {
  const auto n_i = pair.seg_i.size();
  const auto n_j = pair.seg_j.size();
  Batch x(static_cast<Eigen::Index>(n_i + n_j), net.input_dim());
  for (std::size_t k = 0; k < n_i; ++k) {
    for (int f = 0; f < net.input_dim(); ++f) x(static_cast<Eigen::Index>(k), f) = pair.seg_i[k][static_cast<std::size_t>(f)];
  }
  for (std::size_t k = 0; k < n_j; ++k) {
    for (int f = 0; f < net.input_dim(); ++f) x(static_cast<Eigen::Index>(n_i + k), f) = pair.seg_j[k][static_cast<std::size_t>(f)];
  }
  ForwardCache cache;
  const Eigen::VectorXd out = forward_batch(net, x, &cache);
  double ji = 0.0, jj = 0.0, disc = 1.0;
  for (std::size_t k = 0; k < n_i; ++k, disc *= gamma) ji += disc * out(static_cast<Eigen::Index>(k));
  disc = 1.0;
  for (std::size_t k = 0; k < n_j; ++k, disc *= gamma) jj += disc * out(static_cast<Eigen::Index>(n_i + k));

  const double margin = pair.label == 1 ? jj - ji : ji - jj;  // J_preferred - J_other
  LossGrad lg;
  lg.loss = softplus(-margin);
  lg.accuracy = margin > 0.0 ? 1.0 : 0.0;
  const double dmargin = -sigmoid(-margin);
  const double d_i = pair.label == 1 ? -dmargin : dmargin;
  const double d_j = -d_i;
  std::vector<double> upstream(n_i + n_j);
  disc = 1.0;
  for (std::size_t k = 0; k < n_i; ++k, disc *= gamma) upstream[k] = d_i * disc;
  disc = 1.0;
  for (std::size_t k = 0; k < n_j; ++k, disc *= gamma) upstream[n_i + k] = d_j * disc;
  lg.grad = backward(net, upstream, cache);
  return lg;
}

LossGrad batch_loss(const RewardNet& net, std::span<const SegmentPair> pairs, double gamma) {
  LossGrad total;
  total.grad.assign(net.params().size(), 0.0);
  if (pairs.empty()) return total;
  for (const auto& p : pairs) {
    const auto lg = pair_loss(net, p, gamma);
    total.loss += lg.loss;
    total.accuracy += lg.accuracy;
    for (std::size_t k = 0; k < lg.grad.size(); ++k) total.grad[k] += lg.grad[k];
  }
  const double inv = 1.0 / static_cast<double>(pairs.size());
  total.loss *= inv;
  total.accuracy *= inv;
  for (auto& g : total.grad) g *= inv;
  return total;
}

ObservationIndex::ObservationIndex(const std::vector<Trajectory>& trajectories) {
  std::map<Observation, int> rows;
  std::vector<const Observation*> order;
  ids_.resize(trajectories.size());
  for (std::size_t t = 0; t < trajectories.size(); ++t) {
    for (const auto& obs : trajectories[t].rewarded()) {
      const auto [it, inserted] = rows.emplace(obs, static_cast<int>(order.size()));
      if (inserted) order.push_back(&it->first);
      ids_[t].push_back(it->second);
    }
  }
  const auto width = order.empty() ? 0 : static_cast<Eigen::Index>(order.front()->size());
  table_.resize(static_cast<Eigen::Index>(order.size()), width);
  for (std::size_t r = 0; r < order.size(); ++r) {
    for (Eigen::Index f = 0; f < width; ++f) table_(static_cast<Eigen::Index>(r), f) = (*order[r])[static_cast<std::size_t>(f)];
  }
}

LossGrad batch_loss_dedup(const RewardNet& net, const ObservationIndex& index,
                          std::span<const SegmentPair> pairs, double gamma) {
  LossGrad total;
  if (pairs.empty()) {
    total.grad.assign(net.params().size(), 0.0);
    return total;
  }
  // Compact the rows this batch touches.
  std::vector<int> local(index.num_unique(), -1);
  std::vector<int> rows;
  const auto visit = [&](int traj, std::size_t start, std::size_t len) {
    const auto& ids = index.ids(static_cast<std::size_t>(traj));
    for (std::size_t k = start; k < start + len; ++k) {
      auto& slot = local[static_cast<std::size_t>(ids[k])];
      if (slot < 0) {
        slot = static_cast<int>(rows.size());
        rows.push_back(ids[k]);
      }
    }
  };
  for (const auto& p : pairs) {
    visit(p.traj_i, p.t_i, p.seg_i.size());
    visit(p.traj_j, p.t_j, p.seg_j.size());
  }
  Batch x(static_cast<Eigen::Index>(rows.size()), index.table().cols());
  for (std::size_t r = 0; r < rows.size(); ++r) x.row(static_cast<Eigen::Index>(r)) = index.table().row(rows[r]);

  ForwardCache cache;
  const Eigen::VectorXd out = forward_batch(net, x, &cache);
  std::vector<double> upstream(rows.size(), 0.0);
  const double inv = 1.0 / static_cast<double>(pairs.size());

  const auto segment_return = [&](int traj, std::size_t start, std::size_t len) {
    const auto& ids = index.ids(static_cast<std::size_t>(traj));
    double total_r = 0.0, disc = 1.0;
    for (std::size_t k = start; k < start + len; ++k, disc *= gamma) {
      total_r += disc * out(local[static_cast<std::size_t>(ids[k])]);
    }
    return total_r;
  };
  const auto scatter = [&](int traj, std::size_t start, std::size_t len, double coef) {
    const auto& ids = index.ids(static_cast<std::size_t>(traj));
    double disc = 1.0;
    for (std::size_t k = start; k < start + len; ++k, disc *= gamma) {
      upstream[static_cast<std::size_t>(local[static_cast<std::size_t>(ids[k])])] += coef * disc;
    }
  };
  for (const auto& p : pairs) {
    const double ji = segment_return(p.traj_i, p.t_i, p.seg_i.size());
    const double jj = segment_return(p.traj_j, p.t_j, p.seg_j.size());
    const double margin = p.label == 1 ? jj - ji : ji - jj;
    total.loss += softplus(-margin);
    total.accuracy += margin > 0.0 ? 1.0 : 0.0;
    const double dmargin = -sigmoid(-margin) * inv;
    const double d_i = p.label == 1 ? -dmargin : dmargin;
    scatter(p.traj_i, p.t_i, p.seg_i.size(), d_i);
    scatter(p.traj_j, p.t_j, p.seg_j.size(), -d_i);
  }
  total.loss *= inv;
  total.accuracy *= inv;
  total.grad = backward(net, upstream, cache);
  return total;
}

std::vector<Observation> probe_set(const RankedDataset& dataset) {
  std::vector<Observation> probe;
  for (const auto& t : dataset.trajectories) probe.insert(probe.end(), t.observations.begin(), t.observations.end());
  return probe;
}

std::uint64_t probe_fingerprint(std::span<const Observation> probe) {
  std::uint64_t h = fnv1a64({});
  for (const auto& obs : probe) {
    for (const double v : obs) {
      auto bits = std::bit_cast<std::uint64_t>(v);
      char bytes[8];
      for (auto& b : bytes) {
        b = static_cast<char>(bits & 0xff);
        bits >>= 8;
      }
      h = fnv1a64(std::string_view(bytes, 8), h);
    }
  }
  return h;
}

double output_std(const RewardNet& net, std::span<const Observation> probe) {
  if (probe.empty()) throw ValidationError("output_std: empty probe set");
  std::vector<double> out;
  out.reserve(probe.size());
  double mean = 0.0;
  for (const auto& obs : probe) {
    out.push_back(forward(net, obs));
    mean += out.back();
  }
  mean /= static_cast<double>(out.size());
  double ss = 0.0;
  for (const double v : out) ss += (v - mean) * (v - mean);
  return std::sqrt(ss / static_cast<double>(out.size()));
}

namespace {

RewardNet train_member(const RankedDataset& dataset, const ObservationIndex& index,
                       const TrainConfig& cfg, int member, std::vector<TrainLogRow>* log) {
  const std::uint64_t member_seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(member) + 1);
  const auto input_dim = static_cast<int>(dataset.trajectories.front().observations.front().size());
  RewardNet net(layer_sizes(input_dim, cfg.hidden), derive_seed(member_seed, 1));
  Rng pool_rng = make_rng(derive_seed(member_seed, 2));
  std::vector<SegmentPair> pool;
  pool.reserve(static_cast<std::size_t>(cfg.num_pairs));
  for (int k = 0; k < cfg.num_pairs; ++k) pool.push_back(sample_pair(dataset, cfg, pool_rng));

  Rng batch_rng = make_rng(derive_seed(member_seed, 3));
  AdamState adam = AdamState::for_net(net, cfg.lr);
  std::vector<SegmentPair> batch(static_cast<std::size_t>(cfg.batch_size));
  double loss_acc = 0.0, acc_acc = 0.0;
  int window = 0;
  for (int step = 1; step <= cfg.train_steps; ++step) {
    for (auto& p : batch) p = pool[uniform_index(batch_rng, pool.size())];
    LossGrad lg = batch_loss_dedup(net, index, batch, cfg.gamma);
    if (cfg.weight_decay > 0.0) {
      const auto params = net.params();
      for (std::size_t k = 0; k < lg.grad.size(); ++k) lg.grad[k] += cfg.weight_decay * params[k];
    }
    adam_step(net, lg.grad, adam);
    loss_acc += lg.loss;
    acc_acc += lg.accuracy;
    ++window;
    if (log && (step % cfg.log_every == 0 || step == cfg.train_steps)) {
      log->push_back({member, step, loss_acc / window, acc_acc / window});
      loss_acc = acc_acc = 0.0;
      window = 0;
    }
  }
  return net;
}

}  // namespace

Ensemble train_reward(const RankedDataset& dataset, const TrainConfig& cfg, std::vector<TrainLogRow>* log) {
  cfg.validate();
  if (dataset.pairs.empty()) throw ValidationError("train_reward: empty pair pool (dataset has no preferences)");
  if (dataset.trajectories.empty() || dataset.trajectories.front().observations.empty()) {
    throw ValidationError("train_reward: dataset has no observations");
  }
  const ObservationIndex index(dataset.trajectories);
  const auto probe = probe_set(dataset);

  const auto k = static_cast<std::size_t>(cfg.ensemble_size);
  std::vector<RewardNet> nets(k);
  std::vector<std::vector<TrainLogRow>> logs(k);
  const auto work = [&](std::size_t m) {
    nets[m] = train_member(dataset, index, cfg, static_cast<int>(m), log ? &logs[m] : nullptr);
  };
  if (cfg.threads <= 1 || k == 1) {
    for (std::size_t m = 0; m < k; ++m) work(m);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(k);
    std::vector<std::thread> pool;
    for (int t = 0; t < std::min<int>(cfg.threads, static_cast<int>(k)); ++t) {
      pool.emplace_back([&] {
        for (std::size_t m = next++; m < k; m = next++) {
          try {
            work(m);
          } catch (...) {
            errors[m] = std::current_exception();
          }
        }
      });
    }
    for (auto& th : pool) th.join();
    for (const auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }

  Ensemble ens;
  ens.cfg = cfg;
  ens.probe_hash = probe_fingerprint(probe);
  for (std::size_t m = 0; m < k; ++m) {
    const double s = output_std(nets[m], probe);
    if (!(s >= 1e-8)) throw std::runtime_error("degenerate reward net " + std::to_string(m) + ": output std below 1e-8");
    ens.norm_scale.push_back(s);
    if (log) log->insert(log->end(), logs[m].begin(), logs[m].end());
  }
  ens.nets = std::move(nets);
  return ens;
}

double ensemble_reward(const Ensemble& ens, std::span<const double> observation) {
  double total = 0.0;
  for (std::size_t k = 0; k < ens.nets.size(); ++k) total += forward(ens.nets[k], observation) / ens.norm_scale[k];
  return total / static_cast<double>(ens.nets.size());
}

double squashed_reward(const Ensemble& ens, std::span<const double> observation) {
  return sigmoid(ensemble_reward(ens, observation));
}

double ranking_accuracy(const std::function<double(std::span<const double>)>& reward,
                        const RankedDataset& dataset) {
  if (dataset.pairs.empty()) return 1.0;
  std::vector<double> returns;
  for (const auto& t : dataset.trajectories) {
    double total = 0.0;
    for (const auto& obs : t.rewarded()) total += reward(obs);
    returns.push_back(total);
  }
  std::size_t correct = 0;
  for (const auto& [i, j] : dataset.pairs) {
    if (returns[static_cast<std::size_t>(i)] < returns[static_cast<std::size_t>(j)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(dataset.pairs.size());
}

void save_ensemble(const std::filesystem::path& dir, const Ensemble& ens) {
  std::filesystem::create_directories(dir);
  KeyValueDoc meta(std::string(kEnsembleSchema) + "/1");
  meta.set("K", std::to_string(ens.nets.size()));
  meta.set("probe_hash", hex64(ens.probe_hash));
  for (std::size_t k = 0; k < ens.nets.size(); ++k) {
    meta.set("norm_scale." + std::to_string(k), format_double(ens.norm_scale[k]));
  }
  ens.cfg.write(meta, "cfg.");
  write_file(dir / "meta", meta.dump());
  for (std::size_t k = 0; k < ens.nets.size(); ++k) {
    save_model(dir / ("net_" + std::to_string(k) + ".model"), ens.nets[k]);
  }
}

Ensemble load_ensemble(const std::filesystem::path& dir) {
  const auto meta = KeyValueDoc::load(dir / "meta", kEnsembleSchema);
  Ensemble ens;
  const long k = meta.get_long("K");
  if (k < 1) throw ValidationError("ensemble meta: K must be >= 1");
  ens.probe_hash = std::stoull(meta.get("probe_hash"), nullptr, 16);
  KeyValueDoc cfg_doc("trex-train/1");
  for (const auto& key : meta.keys()) {
    if (key.rfind("cfg.", 0) == 0) cfg_doc.set(key.substr(4), meta.get(key));
  }
  ens.cfg.apply(cfg_doc);
  for (long m = 0; m < k; ++m) {
    const double s = meta.get_double("norm_scale." + std::to_string(m));
    if (!(s > 0.0)) throw ValidationError("ensemble meta: norm_scale must be positive");
    ens.norm_scale.push_back(s);
    ens.nets.push_back(load_model(dir / ("net_" + std::to_string(m) + ".model")));
  }
  return ens;
}

std::string format_train_log(const std::vector<TrainLogRow>& log) {
  std::string out = "net,step,mean_loss,pair_accuracy\n";
  for (const auto& r : log) {
    out += std::to_string(r.net) + "," + std::to_string(r.step) + "," + format_double(r.mean_loss) + "," +
           format_double(r.pair_accuracy) + "\n";
  }
  return out;
}

}  // namespace trex

namespace trex {

namespace {

bool near_kink(const RewardNet& net, std::span<const SegmentPair> pairs, double margin) {
  for (const auto& p : pairs) {
    for (const auto seg : {p.seg_i, p.seg_j}) {
      Batch x(static_cast<Eigen::Index>(seg.size()), net.input_dim());
      for (std::size_t r = 0; r < seg.size(); ++r)
        for (int f = 0; f < net.input_dim(); ++f) x(static_cast<Eigen::Index>(r), f) = seg[r][static_cast<std::size_t>(f)];
      ForwardCache cache;
      forward_batch(net, x, &cache);
      for (std::size_t l = 0; l + 1 < cache.pre.size(); ++l) {
        if (cache.pre[l].cwiseAbs().minCoeff() < margin) return true;
      }
    }
  }
  return false;
}

}  // namespace

std::vector<GradCheckTrial> gradient_check(int trials, std::uint64_t seed, double step) {
  if (trials < 1) throw ValidationError("gradient_check: trials must be >= 1");
  std::vector<GradCheckTrial> out;
  for (int trial = 0, attempt = 0; trial < trials; ++attempt) {
    auto rng = make_rng(derive_seed(derive_seed(seed, static_cast<std::uint64_t>(trial)), static_cast<std::uint64_t>(attempt)));
    const int input_dim = static_cast<int>(uniform_int(rng, 2, 8));
    std::vector<int> sizes = {input_dim};
    const long depth = uniform_int(rng, 1, 2);
    for (long d = 0; d < depth; ++d) sizes.push_back(static_cast<int>(uniform_int(rng, 2, 16)));
    sizes.push_back(1);
    const RewardNet net(sizes, rng());

    std::vector<Trajectory> trajs(4);
    for (auto& t : trajs) {
      const long len = uniform_int(rng, 6, 12);
      for (long k = 0; k < len; ++k) {
        Observation obs(static_cast<std::size_t>(input_dim));
        for (auto& v : obs) v = 2.0 * uniform01(rng) - 1.0;
        t.observations.push_back(std::move(obs));
      }
    }
    std::vector<SegmentPair> pairs;
    const int num_pairs = static_cast<int>(uniform_int(rng, 1, 6));
    for (int p = 0; p < num_pairs; ++p) {
      const auto a = uniform_index(rng, trajs.size());
      auto b = uniform_index(rng, trajs.size() - 1);
      if (b >= a) ++b;
      const auto ra = trajs[a].rewarded();
      const auto rb = trajs[b].rewarded();
      const std::size_t len = 1 + uniform_index(rng, std::min(ra.size(), rb.size()));
      const std::size_t ta = uniform_index(rng, ra.size() - len + 1);
      const std::size_t tb = uniform_index(rng, rb.size() - len + 1);
      SegmentPair sp;
      sp.seg_i = ra.subspan(ta, len);
      sp.seg_j = rb.subspan(tb, len);
      sp.traj_i = static_cast<int>(a);
      sp.traj_j = static_cast<int>(b);
      sp.t_i = ta;
      sp.t_j = tb;
      sp.label = static_cast<int>(uniform_index(rng, 2));
      pairs.push_back(sp);
    }
    const double gamma = uniform01(rng) < 0.5 ? 1.0 : 0.9;
    // central differences are meaningless across a LeakyReLU kink; redraw
    if (near_kink(net, pairs, 10.0 * step)) {
      if (attempt > 1000) throw std::runtime_error("gradient_check: no kink-free draw");
      continue;
    }
    const auto analytic = batch_loss(net, pairs, gamma).grad;
    const auto numeric =
        finite_diff_grad([&](const RewardNet& n) { return batch_loss(n, pairs, gamma).loss; }, net, step);
    out.push_back({sizes, num_pairs, max_relative_error(analytic, numeric, 1e-6)});
    ++trial;
    attempt = -1;
  }
  return out;
}

}  // namespace trex
