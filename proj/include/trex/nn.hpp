#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace trex {

inline constexpr double kLeakySlope = 0.01;

// Fully connected reward network [F, h1, ..., 1]: LeakyReLU on hidden layers,
// linear scalar output. Parameters live in one flat buffer, layer by layer,
// each layer as its weight matrix (out x in, row-major) followed by its bias.
class RewardNet {
 public:
  RewardNet() = default;
  // Glorot-uniform weights in [-a, a], a = sqrt(6 / (fan_in + fan_out)); zero biases.
  RewardNet(std::vector<int> layer_sizes, std::uint64_t seed);
  static RewardNet zeros(std::vector<int> layer_sizes);
  static RewardNet from_params(std::vector<int> layer_sizes, std::vector<double> params,
                               std::uint64_t seed);

  const std::vector<int>& layer_sizes() const { return sizes_; }
  int input_dim() const { return sizes_.front(); }
  std::size_t num_layers() const { return sizes_.size() - 1; }
  std::uint64_t seed() const { return seed_; }

  std::span<const double> params() const { return params_; }
  // Any write through this span invalidates outstanding forward caches.
  std::span<double> mutable_params();
  std::uint64_t version() const { return version_; }

  std::size_t weight_offset(std::size_t layer) const { return offsets_[layer]; }
  std::size_t bias_offset(std::size_t layer) const {
    return offsets_[layer] + static_cast<std::size_t>(sizes_[layer] * sizes_[layer + 1]);
  }

 private:
  std::vector<int> sizes_;
  std::vector<double> params_;
  std::vector<std::size_t> offsets_;
  std::uint64_t seed_ = 0;
  std::uint64_t version_ = 0;

  void layout(std::vector<int> sizes);
  void touch();
};

using Gradients = std::vector<double>;
// One observation per row.
using Batch = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Activations recorded by forward_batch for the matching backward pass.
struct ForwardCache {
  std::uint64_t version = 0;
  std::vector<Batch> inputs;  // input to each layer
  std::vector<Batch> pre;     // pre-activation of each layer
};

double forward(const RewardNet& net, std::span<const double> observation);
Eigen::VectorXd forward_batch(const RewardNet& net, const Batch& observations,
                              ForwardCache* cache = nullptr);

// Parameter gradient of sum_r upstream[r] * output[r]. Throws ContractViolation
// if the cache came from a different parameter state or batch size.
Gradients backward(const RewardNet& net, std::span<const double> upstream, const ForwardCache& cache);

// Central differences: (L(p + h) - L(p - h)) / 2h for every parameter.
Gradients finite_diff_grad(const std::function<double(const RewardNet&)>& loss, const RewardNet& net,
                           double step);

// max_k |a_k - b_k| / max(|a_k|, |b_k|, floor)
double max_relative_error(std::span<const double> a, std::span<const double> b, double floor = 1e-8);

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  long step = 0;
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamState for_net(const RewardNet& net, double lr);
};

// Bias-corrected Adam update; increments state.step.
void adam_step(RewardNet& net, std::span<const double> grads, AdamState& state);

// Model file: text header (schema, layers, activation, seed, count) followed
// by the parameters as little-endian IEEE-754 doubles.
std::string serialize_model(const RewardNet& net);
RewardNet deserialize_model(std::string_view bytes);
void save_model(const std::filesystem::path& path, const RewardNet& net);
RewardNet load_model(const std::filesystem::path& path);

}  // namespace trex
