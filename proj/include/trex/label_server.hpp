#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "trex/demos.hpp"
#include "trex/env.hpp"
#include "trex/rng.hpp"

namespace trex {

// One stored vote. `left` / `right` are trajectory indices as shown to the
// rater; choice is a_better (left), b_better (right) or not_sure.
struct VoteEvent {
  long seq = 0;
  std::string pair_id;
  int left = 0;
  int right = 0;
  std::string choice;
  std::string timestamp;
  bool surplus = false;
};

struct Presentation {
  std::string pair_id;  // "i-j" with i < j
  int left = 0;
  int right = 0;
};

class UnknownPair : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Pairwise labelling session over all C(n, 2) demo pairs. Votes go to an
// append-only JSONL log that is replayed on construction.
class LabelSession {
 public:
  LabelSession(GridworldSpec spec, std::vector<Trajectory> demos, std::string dataset_id,
               std::uint64_t seed, std::filesystem::path log_path, int target_votes = 6);

  // Next unretired pair in the shuffled queue, with a fresh left/right draw.
  // Nothing is consumed until a vote arrives. nullopt once every pair is retired.
  std::optional<Presentation> next();

  // Stores the vote durably. The left/right assignment is the latest one
  // presented for this pair (random if it was never presented). Returns the
  // stored event; surplus is set when the pair had already been retired.
  VoteEvent vote(const std::string& pair_id, const std::string& choice);
  VoteEvent vote(const std::string& pair_id, const std::string& choice, int left, int right);

  // First target_votes non-surplus votes per pair, translated to (i, j) order.
  std::vector<VoteRecord> export_records() const;
  std::vector<VoteEvent> events() const;

  std::size_t num_pairs() const { return pairs_.size(); }
  std::size_t retired() const;
  bool complete() const { return retired() == pairs_.size(); }
  int target_votes() const { return target_; }
  const std::string& dataset_id() const { return dataset_id_; }
  const GridworldSpec& spec() const { return spec_; }
  const std::vector<Trajectory>& demos() const { return demos_; }
  const std::vector<Cell>& cells(int trajectory) const { return cells_.at(static_cast<std::size_t>(trajectory)); }

  static std::string pair_id(int i, int j);
  // Throws UnknownPair for ids that do not name a pair of this session.
  std::size_t pair_index(const std::string& pair_id) const;

 private:
  void replay();
  void append(const VoteEvent& ev);
  static std::string now_iso8601();

  GridworldSpec spec_;
  std::vector<Trajectory> demos_;
  std::vector<std::vector<Cell>> cells_;
  std::string dataset_id_;
  std::filesystem::path log_path_;
  int target_;

  mutable std::mutex mu_;
  std::vector<PreferencePair> pairs_;  // canonical (i < j), shuffled queue order
  std::vector<int> counts_;            // non-surplus votes per queue slot
  std::vector<int> last_left_;         // latest presented left index, -1 if none
  std::vector<VoteEvent> events_;
  std::size_t cursor_ = 0;
  Rng rng_;
};

// HTTP front end:
//   GET  /api/pair/next       -> {pair_id, traj_a, traj_b, grid, progress} or {complete: true}
//   POST /api/vote            -> {pair_id, choice} ; 404 unknown pair, 400 malformed
//   GET  /api/session/export  -> [{i, j, votes}]
//   GET  /                    -> static files from static_dir (if set)
// Without a session every /api route answers 409.
class LabelServer {
 public:
  LabelServer(std::shared_ptr<LabelSession> session, std::filesystem::path static_dir = {});
  ~LabelServer();
  LabelServer(const LabelServer&) = delete;
  LabelServer& operator=(const LabelServer&) = delete;

  // Binds (port 0 picks a free port) and returns the bound port; -1 on failure.
  int bind(const std::string& host, int port);
  // Blocks until stop().
  bool listen();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace trex
