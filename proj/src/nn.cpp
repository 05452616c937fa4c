#include "trex/nn.hpp"

#include <atomic>
#include <bit>
#include <cmath>
#include <cstring>
#include <sstream>

#include "trex/errors.hpp"
#include "trex/kvfile.hpp"
#include "trex/rng.hpp"

namespace trex {

namespace {

constexpr std::string_view kModelSchema = "trex-model/1";

std::atomic<std::uint64_t> g_next_version{1};

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMatMap = Eigen::Map<const RowMat>;
using MatMap = Eigen::Map<RowMat>;
using ConstVecMap = Eigen::Map<const Eigen::RowVectorXd>;
using VecMap = Eigen::Map<Eigen::RowVectorXd>;

double leaky(double z) { return z > 0.0 ? z : kLeakySlope * z; }

}  // namespace

void RewardNet::layout(std::vector<int> sizes) {
  if (sizes.size() < 2) throw ValidationError("reward net needs at least input and output layers");
  if (sizes.back() != 1) throw ValidationError("reward net output dimension must be 1");
  for (const int s : sizes) {
    if (s < 1) throw ValidationError("layer sizes must be positive");
  }
  sizes_ = std::move(sizes);
  offsets_.clear();
  std::size_t total = 0;
  for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
    offsets_.push_back(total);
    total += static_cast<std::size_t>(sizes_[l] * sizes_[l + 1] + sizes_[l + 1]);
  }
  params_.assign(total, 0.0);
  touch();
}

void RewardNet::touch() { version_ = g_next_version.fetch_add(1, std::memory_order_relaxed); }

RewardNet::RewardNet(std::vector<int> layer_sizes, std::uint64_t seed) : seed_(seed) {
  layout(std::move(layer_sizes));
  Rng rng = make_rng(seed);
  for (std::size_t l = 0; l < num_layers(); ++l) {
    const int fan_in = sizes_[l];
    const int fan_out = sizes_[l + 1];
    const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    double* w = params_.data() + weight_offset(l);
    for (int k = 0; k < fan_in * fan_out; ++k) w[k] = (2.0 * uniform01(rng) - 1.0) * a;
  }
}

RewardNet RewardNet::zeros(std::vector<int> layer_sizes) {
  RewardNet net;
  net.layout(std::move(layer_sizes));
  return net;
}

RewardNet RewardNet::from_params(std::vector<int> layer_sizes, std::vector<double> params,
                                 std::uint64_t seed) {
  RewardNet net;
  net.layout(std::move(layer_sizes));
  if (params.size() != net.params_.size()) {
    throw ValidationError("parameter count does not match layer sizes");
  }
  net.params_ = std::move(params);
  net.seed_ = seed;
  return net;
}

std::span<double> RewardNet::mutable_params() {
  touch();
  return params_;
}

double forward(const RewardNet& net, std::span<const double> observation) {
  const auto& sizes = net.layer_sizes();
  if (observation.size() != static_cast<std::size_t>(sizes.front())) {
    throw ValidationError("forward: observation has " + std::to_string(observation.size()) +
                          " features, net expects " + std::to_string(sizes.front()));
  }
  std::vector<double> act(observation.begin(), observation.end());
  std::vector<double> next;
  const auto params = net.params();
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    const int in = sizes[l];
    const int out = sizes[l + 1];
    const double* w = params.data() + net.weight_offset(l);
    const double* b = params.data() + net.bias_offset(l);
    next.assign(static_cast<std::size_t>(out), 0.0);
    for (int o = 0; o < out; ++o) {
      double z = b[o];
      for (int i = 0; i < in; ++i) z += w[o * in + i] * act[static_cast<std::size_t>(i)];
      next[static_cast<std::size_t>(o)] = l + 1 < net.num_layers() ? leaky(z) : z;
    }
    act.swap(next);
  }
  return act.front();
}

Eigen::VectorXd forward_batch(const RewardNet& net, const Batch& observations, ForwardCache* cache) {
  const auto& sizes = net.layer_sizes();
  if (observations.cols() != sizes.front()) {
    throw ValidationError("forward_batch: observation width does not match the net input");
  }
  if (cache) {
    cache->version = net.version();
    cache->inputs.assign(net.num_layers(), Batch());
    cache->pre.assign(net.num_layers(), Batch());
  }
  const auto params = net.params();
  Batch act = observations;
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    const ConstMatMap w(params.data() + net.weight_offset(l), sizes[l + 1], sizes[l]);
    const ConstVecMap b(params.data() + net.bias_offset(l), sizes[l + 1]);
    Batch z = act * w.transpose();
    z.rowwise() += b;
    if (cache) {
      cache->inputs[l] = std::move(act);
      cache->pre[l] = z;
    }
    if (l + 1 < net.num_layers()) {
      act = z.unaryExpr([](double v) { return leaky(v); });
    } else {
      act = std::move(z);
    }
  }
  return act.col(0);
}

Gradients backward(const RewardNet& net, std::span<const double> upstream, const ForwardCache& cache) {
  if (cache.version != net.version() || cache.pre.size() != net.num_layers()) {
    throw ContractViolation("backward: stale forward cache");
  }
  const auto rows = cache.pre.front().rows();
  if (static_cast<Eigen::Index>(upstream.size()) != rows) {
    throw ContractViolation("backward: upstream gradient size does not match the cached batch");
  }
  const auto& sizes = net.layer_sizes();
  const auto params = net.params();
  Gradients grads(params.size(), 0.0);

  Batch delta = Eigen::Map<const Eigen::VectorXd>(upstream.data(), rows);
  for (std::size_t l = net.num_layers(); l-- > 0;) {
    if (l + 1 < net.num_layers()) {
      delta = delta.cwiseProduct(cache.pre[l].unaryExpr([](double v) { return v > 0.0 ? 1.0 : kLeakySlope; }));
    }
    MatMap gw(grads.data() + net.weight_offset(l), sizes[l + 1], sizes[l]);
    VecMap gb(grads.data() + net.bias_offset(l), sizes[l + 1]);
    gw.noalias() = delta.transpose() * cache.inputs[l];
    gb = delta.colwise().sum();
    if (l > 0) {
      const ConstMatMap w(params.data() + net.weight_offset(l), sizes[l + 1], sizes[l]);
      Batch prev = delta * w;
      delta = std::move(prev);
    }
  }
  return grads;
}

Gradients finite_diff_grad(const std::function<double(const RewardNet&)>& loss, const RewardNet& net,
                           double step) {
  RewardNet probe = net;
  Gradients grads(net.params().size(), 0.0);
  for (std::size_t k = 0; k < grads.size(); ++k) {
    const double original = probe.params()[k];
    probe.mutable_params()[k] = original + step;
    const double up = loss(probe);
    probe.mutable_params()[k] = original - step;
    const double down = loss(probe);
    probe.mutable_params()[k] = original;
    grads[k] = (up - down) / (2.0 * step);
  }
  return grads;
}

double max_relative_error(std::span<const double> a, std::span<const double> b, double floor) {
  if (a.size() != b.size()) throw ContractViolation("max_relative_error: size mismatch");
  double worst = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double denom = std::max({std::abs(a[k]), std::abs(b[k]), floor});
    worst = std::max(worst, std::abs(a[k] - b[k]) / denom);
  }
  return worst;
}

AdamState AdamState::for_net(const RewardNet& net, double lr) {
  AdamState s;
  s.m.assign(net.params().size(), 0.0);
  s.v.assign(net.params().size(), 0.0);
  s.lr = lr;
  return s;
}

void adam_step(RewardNet& net, std::span<const double> grads, AdamState& state) {
  const auto n = net.params().size();
  if (grads.size() != n || state.m.size() != n || state.v.size() != n) {
    throw ValidationError("adam_step: gradient/state shape does not match the net");
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  auto p = net.mutable_params();
  for (std::size_t k = 0; k < n; ++k) {
    const double g = grads[k];
    state.m[k] = state.beta1 * state.m[k] + (1.0 - state.beta1) * g;
    state.v[k] = state.beta2 * state.v[k] + (1.0 - state.beta2) * g * g;
    const double m_hat = state.m[k] / c1;
    const double v_hat = state.v[k] / c2;
    p[k] -= state.lr * m_hat / (std::sqrt(v_hat) + state.eps);
  }
}

std::string serialize_model(const RewardNet& net) {
  std::ostringstream head;
  head << kModelSchema << '\n' << "layers";
  for (const int s : net.layer_sizes()) head << ' ' << s;
  head << '\n'
       << "activation leaky_relu " << format_double(kLeakySlope) << '\n'
       << "seed " << net.seed() << '\n'
       << "params " << net.params().size() << '\n'
       << "data\n";
  std::string out = head.str();
  const auto params = net.params();
  const std::size_t base = out.size();
  out.resize(base + params.size() * sizeof(double));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto bits = std::bit_cast<std::uint64_t>(params[k]);
    for (std::size_t b = 0; b < 8; ++b) {
      out[base + k * 8 + b] = static_cast<char>(bits & 0xff);
      bits >>= 8;
    }
  }
  return out;
}

RewardNet deserialize_model(std::string_view bytes) {
  std::size_t pos = 0;
  auto next_line = [&]() {
    const auto end = bytes.find('\n', pos);
    if (end == std::string_view::npos) throw ValidationError("model file: truncated header");
    const auto line = bytes.substr(pos, end - pos);
    pos = end + 1;
    return std::string(line);
  };
  if (next_line() != kModelSchema) {
    throw ValidationError("model file: expected schema tag '" + std::string(kModelSchema) + "'");
  }
  std::vector<int> sizes;
  {
    std::istringstream in(next_line());
    std::string key;
    in >> key;
    if (key != "layers") throw ValidationError("model file: missing layers line");
    int s = 0;
    while (in >> s) sizes.push_back(s);
  }
  {
    std::istringstream in(next_line());
    std::string key, name, slope;
    in >> key >> name >> slope;
    if (key != "activation" || name != "leaky_relu" || parse_double(slope, "slope") != kLeakySlope) {
      throw ValidationError("model file: unsupported activation");
    }
  }
  std::uint64_t seed = 0;
  std::size_t count = 0;
  {
    std::istringstream in(next_line());
    std::string key;
    in >> key >> seed;
    if (key != "seed" || !in) throw ValidationError("model file: missing seed line");
  }
  {
    std::istringstream in(next_line());
    std::string key;
    in >> key >> count;
    if (key != "params" || !in) throw ValidationError("model file: missing params line");
  }
  if (next_line() != "data") throw ValidationError("model file: missing data marker");

  if (bytes.size() - pos != count * 8) throw ValidationError("model file: parameter payload has the wrong size");
  std::vector<double> params(count);
  for (std::size_t k = 0; k < count; ++k) {
    std::uint64_t bits = 0;
    for (std::size_t b = 8; b-- > 0;) {
      bits = (bits << 8) | static_cast<unsigned char>(bytes[pos + k * 8 + b]);
    }
    params[k] = std::bit_cast<double>(bits);
  }
  try {
    return RewardNet::from_params(std::move(sizes), std::move(params), seed);
  } catch (const ValidationError& e) {
    throw ValidationError(std::string("model file: ") + e.what());
  }
}

void save_model(const std::filesystem::path& path, const RewardNet& net) {
  write_file(path, serialize_model(net));
}

RewardNet load_model(const std::filesystem::path& path) {
  try {
    return deserialize_model(read_file(path));
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

}  // namespace trex
