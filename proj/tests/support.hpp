#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>
#include <unistd.h>
#include <string>
#include <vector>

#include "trex/env.hpp"
#include "trex/nn.hpp"

namespace trex::testing {

// Random grid with dyadic features (k/16) and dyadic weights (k/8 in [-1, 1]),
// so sums of rewards are exact in double precision.
inline GridworldSpec random_grid(int width, int height, int num_features, std::uint64_t seed, int horizon = 4,
                                 double slip = 0.0) {
  std::mt19937_64 gen(seed);
  std::uniform_int_distribution<int> feat(0, 16);
  std::uniform_int_distribution<int> weight(-8, 8);
  GridworldSpec spec;
  spec.name = "random";
  spec.width = width;
  spec.height = height;
  spec.num_features = num_features;
  for (int k = 0; k < width * height * num_features; ++k) spec.features.push_back(feat(gen) / 16.0);
  for (int f = 0; f < num_features; ++f) spec.gt_weights.push_back(weight(gen) / 8.0);
  spec.start_cells = {{0, 0}};
  spec.horizon = horizon;
  spec.slip_prob = slip;
  spec.validate();
  return spec;
}

// Independent dot product, written against the documented feature layout.
inline double dot_reward(const GridworldSpec& spec, Cell c) {
  const std::size_t base = static_cast<std::size_t>((c.y * spec.width + c.x) * spec.num_features);
  double r = 0.0;
  for (int f = 0; f < spec.num_features; ++f) r += spec.gt_weights[static_cast<std::size_t>(f)] * spec.features[base + static_cast<std::size_t>(f)];
  return r;
}

// Straight-line forward pass over the flat parameter layout: per layer a
// row-major (out x in) weight block followed by the bias.
inline double forward_reference(const RewardNet& net, const std::vector<double>& x) {
  const auto& sizes = net.layer_sizes();
  const auto p = net.params();
  std::vector<double> act = x;
  std::size_t off = 0;
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    const auto in = static_cast<std::size_t>(sizes[l]);
    const auto out = static_cast<std::size_t>(sizes[l + 1]);
    std::vector<double> next(out);
    for (std::size_t o = 0; o < out; ++o) {
      double z = p[off + in * out + o];
      for (std::size_t i = 0; i < in; ++i) z += p[off + o * in + i] * act[i];
      const bool hidden = l + 2 < sizes.size();
      next[o] = hidden && z < 0.0 ? 0.01 * z : z;
    }
    off += in * out + out;
    act = std::move(next);
  }
  return act[0];
}

// Best total reward over every open-loop action sequence of length horizon
// from `start` (slip must be 0, so open-loop equals closed-loop).
inline double exhaustive_optimum(const GridworldSpec& spec, Cell start) {
  double best = -1e300;
  long sequences = 1;
  for (int t = 0; t < spec.horizon; ++t) sequences *= 5;
  for (long code = 0; code < sequences; ++code) {
    long rest = code;
    Cell c = start;
    double total = 0.0;
    for (int t = 0; t < spec.horizon && !spec.is_terminal(c); ++t) {
      const int a = static_cast<int>(rest % 5);
      rest /= 5;
      Cell n = c;
      if (a == 0) --n.y;
      if (a == 1) ++n.y;
      if (a == 2) --n.x;
      if (a == 3) ++n.x;
      if (n.x >= 0 && n.y >= 0 && n.x < spec.width && n.y < spec.height) c = n;
      total += dot_reward(spec, c);
    }
    best = std::max(best, total);
  }
  return best;
}

// The 3x3, horizon-4 planner battery: random dyadic rewards, slip 0, a random
// start cell and, on every third instance, a terminal cell.
inline std::vector<GridworldSpec> planner_battery(int count) {
  std::vector<GridworldSpec> out;
  for (int k = 0; k < count; ++k) {
    auto spec = random_grid(3, 3, 3, 5000 + static_cast<std::uint64_t>(k), 4, 0.0);
    spec.start_cells = {{k % 3, (k / 3) % 3}};
    if (k % 3 == 2) {
      const Cell term{(k + 1) % 3, (k / 2) % 3};
      if (term != spec.start_cells.front()) spec.terminal_cells = {term};
    }
    spec.validate();
    out.push_back(std::move(spec));
  }
  return out;
}

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("trex-test-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() { std::filesystem::remove_all(path_); }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace trex::testing
