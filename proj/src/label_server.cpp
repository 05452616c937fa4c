#include "trex/label_server.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <atomic>
#include <chrono>
#include <thread>
#include <ctime>

#include "httplib.h"
#include "json.hpp"
#include "trex/errors.hpp"
#include "trex/kvfile.hpp"

namespace trex {

using json = nlohmann::json;

namespace {

constexpr const char* kLogSchema = "trex-votelog/1";

bool valid_choice(const std::string& c) { return c == "a_better" || c == "b_better" || c == "not_sure"; }

VoteLabel to_label(const VoteEvent& ev, int i) {
  if (ev.choice == "not_sure") return VoteLabel::not_sure;
  const int winner = ev.choice == "a_better" ? ev.left : ev.right;
  return winner == i ? VoteLabel::i_better : VoteLabel::j_better;
}

json event_json(const VoteEvent& ev) {
  return json{{"seq", ev.seq},     {"pair_id", ev.pair_id},     {"left", ev.left},      {"right", ev.right},
              {"choice", ev.choice}, {"time", ev.timestamp}, {"surplus", ev.surplus}};
}

}  // namespace

LabelSession::LabelSession(GridworldSpec spec, std::vector<Trajectory> demos, std::string dataset_id,
                           std::uint64_t seed, std::filesystem::path log_path, int target_votes)
    : spec_(std::move(spec)),
      demos_(std::move(demos)),
      dataset_id_(std::move(dataset_id)),
      log_path_(std::move(log_path)),
      target_(target_votes),
      rng_(make_rng(seed)) {
  if (demos_.size() < 2) throw ValidationError("label session needs at least two trajectories");
  if (target_ < 1) throw ValidationError("target votes per pair must be >= 1");
  for (const auto& t : demos_) {
    if (!t.cells.empty()) {
      cells_.push_back(t.cells);
      continue;
    }
    std::vector<Cell> cells;
    for (const auto& obs : t.observations) {
      const auto c = locate(spec_, obs);
      if (!c) throw ValidationError("trajectory " + t.id + ": observation does not match any grid cell");
      cells.push_back(*c);
    }
    cells_.push_back(std::move(cells));
  }
  const int n = static_cast<int>(demos_.size());
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) pairs_.emplace_back(i, j);
  }
  for (std::size_t k = pairs_.size(); k > 1; --k) std::swap(pairs_[k - 1], pairs_[uniform_index(rng_, k)]);
  counts_.assign(pairs_.size(), 0);
  last_left_.assign(pairs_.size(), -1);
  replay();
}

std::string LabelSession::pair_id(int i, int j) { return std::to_string(i) + "-" + std::to_string(j); }

std::size_t LabelSession::pair_index(const std::string& id) const {
  const auto dash = id.find('-');
  if (dash == std::string::npos) throw UnknownPair("unknown pair_id '" + id + "'");
  int i = 0, j = 0;
  try {
    i = static_cast<int>(parse_long(id.substr(0, dash), "pair_id"));
    j = static_cast<int>(parse_long(id.substr(dash + 1), "pair_id"));
  } catch (const ValidationError&) {
    throw UnknownPair("unknown pair_id '" + id + "'");
  }
  for (std::size_t k = 0; k < pairs_.size(); ++k) {
    if (pairs_[k] == PreferencePair{i, j}) return k;
  }
  throw UnknownPair("unknown pair_id '" + id + "'");
}

std::optional<Presentation> LabelSession::next() {
  std::lock_guard lock(mu_);
  for (std::size_t step = 0; step < pairs_.size(); ++step) {
    const std::size_t k = (cursor_ + step) % pairs_.size();
    if (counts_[k] >= target_) continue;
    cursor_ = (k + 1) % pairs_.size();
    const auto [i, j] = pairs_[k];
    const bool swap = uniform01(rng_) < 0.5;
    last_left_[k] = swap ? j : i;
    return Presentation{pair_id(i, j), swap ? j : i, swap ? i : j};
  }
  return std::nullopt;
}

VoteEvent LabelSession::vote(const std::string& id, const std::string& choice) {
  const auto k = pair_index(id);
  int left = 0;
  {
    std::lock_guard lock(mu_);
    left = last_left_[k];
    if (left < 0) left = uniform01(rng_) < 0.5 ? pairs_[k].first : pairs_[k].second;
  }
  const int right = left == pairs_[k].first ? pairs_[k].second : pairs_[k].first;
  return vote(id, choice, left, right);
}

VoteEvent LabelSession::vote(const std::string& id, const std::string& choice, int left, int right) {
  const auto k = pair_index(id);
  if (!valid_choice(choice)) throw ValidationError("choice must be a_better, b_better or not_sure");
  const auto [i, j] = pairs_[k];
  if (!((left == i && right == j) || (left == j && right == i))) {
    throw ValidationError("left/right do not match pair " + id);
  }
  std::lock_guard lock(mu_);
  VoteEvent ev;
  ev.seq = static_cast<long>(events_.size());
  ev.pair_id = id;
  ev.left = left;
  ev.right = right;
  ev.choice = choice;
  ev.timestamp = now_iso8601();
  ev.surplus = counts_[k] >= target_;
  append(ev);
  if (!ev.surplus) ++counts_[k];
  events_.push_back(ev);
  return ev;
}

std::vector<VoteRecord> LabelSession::export_records() const {
  std::lock_guard lock(mu_);
  std::vector<std::vector<VoteLabel>> votes(pairs_.size());
  for (const auto& ev : events_) {
    if (ev.surplus) continue;
    const auto k = pair_index(ev.pair_id);
    votes[k].push_back(to_label(ev, pairs_[k].first));
  }
  std::vector<VoteRecord> out;
  for (std::size_t k = 0; k < pairs_.size(); ++k) {
    if (!votes[k].empty()) out.push_back({pairs_[k], votes[k]});
  }
  std::sort(out.begin(), out.end(), [](const VoteRecord& a, const VoteRecord& b) { return a.pair < b.pair; });
  return out;
}

std::vector<VoteEvent> LabelSession::events() const {
  std::lock_guard lock(mu_);
  return events_;
}

std::size_t LabelSession::retired() const {
  std::lock_guard lock(mu_);
  return static_cast<std::size_t>(std::count_if(counts_.begin(), counts_.end(), [&](int c) { return c >= target_; }));
}

void LabelSession::replay() {
  const json header = {{"schema", kLogSchema}, {"dataset", dataset_id_}, {"pairs", pairs_.size()}};
  if (!std::filesystem::exists(log_path_)) {
    write_file(log_path_, header.dump() + "\n");
    return;
  }
  std::string text = read_file(log_path_);
  // A torn final line was never acknowledged; drop it.
  if (!text.empty() && text.back() != '\n') {
    text.erase(text.rfind('\n') == std::string::npos ? 0 : text.rfind('\n') + 1);
    write_file(log_path_, text);
  }
  if (text.empty()) {
    write_file(log_path_, header.dump() + "\n");
    return;
  }
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);
  json head;
  try {
    head = json::parse(line);
  } catch (const json::exception&) {
    throw ValidationError("vote log " + log_path_.string() + ": unreadable header");
  }
  if (head.value("schema", "") != kLogSchema) {
    throw ValidationError("vote log " + log_path_.string() + ": expected schema " + kLogSchema);
  }
  if (head.value("dataset", "") != dataset_id_) {
    throw ValidationError("vote log " + log_path_.string() + " belongs to dataset '" + head.value("dataset", "") +
                          "', not '" + dataset_id_ + "'");
  }
  long lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = json::parse(line);
      VoteEvent ev;
      ev.seq = static_cast<long>(events_.size());
      ev.pair_id = j.at("pair_id").get<std::string>();
      ev.left = j.at("left").get<int>();
      ev.right = j.at("right").get<int>();
      ev.choice = j.at("choice").get<std::string>();
      ev.timestamp = j.value("time", "");
      const auto k = pair_index(ev.pair_id);
      if (!valid_choice(ev.choice)) throw ValidationError("bad choice");
      ev.surplus = counts_[k] >= target_;
      if (!ev.surplus) ++counts_[k];
      events_.push_back(ev);
    } catch (const std::exception& e) {
      throw ValidationError("vote log " + log_path_.string() + " line " + std::to_string(lineno) + ": " + e.what());
    }
  }
}

void LabelSession::append(const VoteEvent& ev) {
  const std::string line = event_json(ev).dump() + "\n";
  const int fd = ::open(log_path_.c_str(), O_WRONLY | O_APPEND | O_CREAT, 0644);
  if (fd < 0) throw std::runtime_error("cannot open vote log " + log_path_.string());
  std::size_t done = 0;
  while (done < line.size()) {
    const auto n = ::write(fd, line.data() + done, line.size() - done);
    if (n <= 0) {
      ::close(fd);
      throw std::runtime_error("write to vote log failed");
    }
    done += static_cast<std::size_t>(n);
  }
  ::fsync(fd);
  ::close(fd);
}

std::string LabelSession::now_iso8601() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[40];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%S", &tm);
  char out[48];
  std::snprintf(out, sizeof(out), "%s.%03dZ", buf, static_cast<int>(ms));
  return out;
}

// ---------------------------------------------------------------------------

struct LabelServer::Impl {
  std::shared_ptr<LabelSession> session;
  httplib::Server http;
  std::atomic<bool> in_listen{false};
  std::atomic<bool> stop_requested{false};
};

namespace {

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

json trajectory_json(const LabelSession& s, int index) {
  json cells = json::array();
  for (const auto& c : s.cells(index)) cells.push_back({c.x, c.y});
  return json{{"index", index}, {"id", s.demos()[static_cast<std::size_t>(index)].id}, {"cells", cells}};
}

json grid_json(const GridworldSpec& spec) {
  json starts = json::array(), terminals = json::array();
  for (const auto& c : spec.start_cells) starts.push_back({c.x, c.y});
  for (const auto& c : spec.terminal_cells) terminals.push_back({c.x, c.y});
  return json{{"width", spec.width}, {"height", spec.height}, {"horizon", spec.horizon},
              {"start_cells", starts}, {"terminal_cells", terminals}};
}

}  // namespace

LabelServer::LabelServer(std::shared_ptr<LabelSession> session, std::filesystem::path static_dir)
    : impl_(std::make_unique<Impl>()) {
  impl_->session = std::move(session);
  auto* impl = impl_.get();

  const auto no_session = [](httplib::Response& res) {
    send_json(res, 409, {{"error", "no labelling session is open"}});
  };

  impl->http.Get("/api/pair/next", [impl, no_session](const httplib::Request&, httplib::Response& res) {
    if (!impl->session) return no_session(res);
    auto& s = *impl->session;
    const json progress = {{"retired", s.retired()}, {"total", s.num_pairs()}};
    const auto p = s.next();
    if (!p) return send_json(res, 200, {{"complete", true}, {"progress", progress}});
    send_json(res, 200,
              {{"complete", false},
               {"pair_id", p->pair_id},
               {"traj_a", trajectory_json(s, p->left)},
               {"traj_b", trajectory_json(s, p->right)},
               {"grid", grid_json(s.spec())},
               {"progress", progress}});
  });

  impl->http.Post("/api/vote", [impl, no_session](const httplib::Request& req, httplib::Response& res) {
    if (!impl->session) return no_session(res);
    json body;
    try {
      body = json::parse(req.body);
    } catch (const json::exception&) {
      return send_json(res, 400, {{"error", "body is not valid JSON"}});
    }
    if (!body.is_object() || !body.contains("pair_id") || !body["pair_id"].is_string() || !body.contains("choice") ||
        !body["choice"].is_string()) {
      return send_json(res, 400, {{"error", "expected {pair_id: string, choice: a_better|b_better|not_sure}"}});
    }
    const auto choice = body["choice"].get<std::string>();
    if (!valid_choice(choice)) return send_json(res, 400, {{"error", "choice must be a_better, b_better or not_sure"}});
    try {
      const auto ev = impl->session->vote(body["pair_id"].get<std::string>(), choice);
      send_json(res, 200, {{"ok", true}, {"seq", ev.seq}, {"surplus", ev.surplus}});
    } catch (const UnknownPair& e) {
      send_json(res, 404, {{"error", e.what()}});
    } catch (const ValidationError& e) {
      send_json(res, 400, {{"error", e.what()}});
    } catch (const std::exception& e) {
      send_json(res, 500, {{"error", e.what()}});
    }
  });

  impl->http.Get("/api/session/export", [impl, no_session](const httplib::Request&, httplib::Response& res) {
    if (!impl->session) return no_session(res);
    json out = json::array();
    for (const auto& r : impl->session->export_records()) {
      json votes = json::array();
      for (const auto v : r.votes) votes.push_back(vote_label_name(v));
      out.push_back({{"i", r.pair.first}, {"j", r.pair.second}, {"votes", votes}});
    }
    send_json(res, 200, out);
  });

  if (!static_dir.empty()) impl->http.set_mount_point("/", static_dir.string());
}

LabelServer::~LabelServer() { stop(); }

int LabelServer::bind(const std::string& host, int port) {
  // httplib's default also sets SO_REUSEPORT, which lets a second server share the port
  impl_->http.set_socket_options([](socket_t sock) {
    int yes = 1;
    ::setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof(yes));
  });
  if (port == 0) return impl_->http.bind_to_any_port(host);
  return impl_->http.bind_to_port(host, port) ? port : -1;
}

bool LabelServer::listen() {
  impl_->in_listen = true;
  bool ok = true;
  if (!impl_->stop_requested) ok = impl_->http.listen_after_bind();
  impl_->in_listen = false;
  return ok;
}

void LabelServer::stop() {
  if (!impl_) return;
  impl_->stop_requested = true;
  // httplib ignores stop() until the accept loop is running
  bool sent = false;
  while (impl_->in_listen) {
    if (!sent && impl_->http.is_running()) {
      impl_->http.stop();
      sent = true;
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(1));
  }
}

}  // namespace trex
