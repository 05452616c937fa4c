#include "run_dir.hpp"

#include <algorithm>

#include "json.hpp"
#include "trex/errors.hpp"

namespace trex::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::string join_doubles(const std::vector<double>& values) {
  std::string out;
  for (const double v : values) out += (out.empty() ? "" : " ") + format_double(v);
  return out;
}

int as_int(const KeyValueDoc& doc, const std::string& key) { return static_cast<int>(doc.get_long(key)); }

}  // namespace

void RunConfig::apply(const KeyValueDoc& doc) {
  KeyValueDoc train_doc("trex-config/1");
  bool any_train = false;
  for (const auto& key : doc.keys()) {
    if (key.rfind("train.", 0) == 0) {
      train_doc.set(key.substr(6), doc.get(key));
      any_train = true;
    } else if (key == "learner.total_updates") learner.total_updates = doc.get_long(key);
    else if (key == "learner.checkpoint_every") learner.checkpoint_every = doc.get_long(key);
    else if (key == "learner.epsilon_start") learner.epsilon_start = doc.get_double(key);
    else if (key == "learner.epsilon_end") learner.epsilon_end = doc.get_double(key);
    else if (key == "learner.learning_rate") learner.learning_rate = doc.get_double(key);
    else if (key == "learner.gamma") learner.gamma = doc.get_double(key);
    else if (key == "demos.stage") stage = as_int(doc, key);
    else if (key == "demos.per_checkpoint") per_checkpoint = as_int(doc, key);
    else if (key == "demos.heldout_per_checkpoint") heldout_per_checkpoint = as_int(doc, key);
    else if (key == "demos.heldout_max_ratio") heldout_max_ratio = doc.get_double(key);
    else if (key == "plan.gamma") plan_gamma = doc.get_double(key);
    else if (key == "plan.tol") plan_tol = doc.get_double(key);
    else if (key == "eval.episodes") eval_episodes = as_int(doc, key);
    else if (key == "sweep.levels") sweep_levels = doc.get_doubles(key);
    else if (key == "sweep.repetitions") sweep_repetitions = as_int(doc, key);
    else if (key == "sweep.threads") sweep_threads = as_int(doc, key);
    else if (key == "label.target_votes") target_votes = as_int(doc, key);
    else throw ValidationError("unknown config key '" + key + "'");
  }
  if (any_train) train.apply(train_doc);
}

KeyValueDoc RunConfig::to_doc() const {
  KeyValueDoc doc("trex-config/1");
  doc.set("learner.total_updates", std::to_string(learner.total_updates));
  doc.set("learner.checkpoint_every", std::to_string(learner.checkpoint_every));
  doc.set("learner.epsilon_start", format_double(learner.epsilon_start));
  doc.set("learner.epsilon_end", format_double(learner.epsilon_end));
  doc.set("learner.learning_rate", format_double(learner.learning_rate));
  doc.set("learner.gamma", format_double(learner.gamma));
  doc.set("demos.stage", std::to_string(stage));
  doc.set("demos.per_checkpoint", std::to_string(per_checkpoint));
  doc.set("demos.heldout_per_checkpoint", std::to_string(heldout_per_checkpoint));
  doc.set("demos.heldout_max_ratio", format_double(heldout_max_ratio));
  train.write(doc, "train.");
  doc.erase("train.seed");
  doc.set("plan.gamma", format_double(plan_gamma));
  doc.set("plan.tol", format_double(plan_tol));
  doc.set("eval.episodes", std::to_string(eval_episodes));
  doc.set("sweep.levels", join_doubles(sweep_levels));
  doc.set("sweep.repetitions", std::to_string(sweep_repetitions));
  doc.set("sweep.threads", std::to_string(sweep_threads));
  doc.set("label.target_votes", std::to_string(target_votes));
  return doc;
}

void RunConfig::validate() const {
  learner.validate();
  train.validate();
  if (stage < 1 || stage > 3) throw ValidationError("demos.stage must be 1, 2 or 3");
  if (per_checkpoint < 1) throw ValidationError("demos.per_checkpoint must be >= 1");
  if (heldout_per_checkpoint < 1) throw ValidationError("demos.heldout_per_checkpoint must be >= 1");
  if (!(heldout_max_ratio > 0.0)) throw ValidationError("demos.heldout_max_ratio must be > 0");
  if (!(plan_gamma > 0.0 && plan_gamma <= 1.0)) throw ValidationError("plan.gamma must be in (0, 1]");
  if (!(plan_tol > 0.0)) throw ValidationError("plan.tol must be > 0");
  if (eval_episodes < 1) throw ValidationError("eval.episodes must be >= 1");
  if (sweep_levels.empty()) throw ValidationError("sweep.levels must list at least one level");
  for (const double l : sweep_levels) {
    if (l < 0.0 || l > 1.0) throw ValidationError("sweep.levels must lie in [0, 1]");
  }
  if (sweep_repetitions < 2) throw ValidationError("sweep.repetitions must be >= 2");
  if (sweep_threads < 1) throw ValidationError("sweep.threads must be >= 1");
  if (target_votes < 1) throw ValidationError("label.target_votes must be >= 1");
}

std::string config_hash(const RunConfig& cfg) { return hex64(fnv1a64(cfg.to_doc().dump())); }

fs::path resolve_spec_path(const fs::path& path) {
  if (fs::is_regular_file(path)) return path;
  fs::path with_suffix = path;
  with_suffix += ".spec";
  if (fs::is_regular_file(with_suffix)) return with_suffix;
  throw ValidationError("spec file not found: " + path.string() + " (also tried " + with_suffix.string() + ")");
}

void require_artifact(const fs::path& path, const std::string& producer) {
  if (!fs::exists(path)) {
    throw ValidationError("missing input artifact " + path.string() + "; run `trex " + producer + "` first");
  }
}

std::string content_hash(const fs::path& path) {
  if (!fs::is_directory(path)) return "fnv1a64:" + hex64(fnv1a64(read_file(path)));
  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(path)) {
    if (entry.is_regular_file()) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  std::string digest;
  for (const auto& f : files) digest += fs::relative(f, path).generic_string() + "\n" + content_hash(f) + "\n";
  return "fnv1a64:" + hex64(fnv1a64(digest));
}

std::string artifact_schema(const fs::path& relative) {
  const auto name = relative.filename().string();
  const auto ext = relative.extension().string();
  if (name == "demos.jsonl" || name == "heldout.jsonl") return "trex-demos/1";
  if (name == "rankings.txt") return "trex-rankings/1";
  if (name == "spec.gridworld") return "trex-gridworld/1";
  if (name == "meta" && relative.parent_path().filename() == "ensemble") return "trex-ensemble/1";
  if (ext == ".model") return "trex-model/1";
  if (name.rfind("policy_", 0) == 0) return "trex-policy/1";
  if (name == "extrapolation.meta") return "trex-extrapolation/1";
  if (name == "config.effective") return "trex-config/1";
  if (name == "votes.log") return "trex-votelog/1";
  return "";
}

void update_manifest(const fs::path& run_dir, const StepRecord& record) {
  const auto path = run_dir / "manifest.json";
  json manifest = {{"schema", "trex-manifest/1"}, {"steps", json::object()}, {"files", json::object()}};
  if (fs::exists(path)) {
    try {
      manifest = json::parse(read_file(path));
    } catch (const json::exception&) {
      throw ValidationError(path.string() + " is not valid JSON");
    }
    if (manifest.value("schema", "") != "trex-manifest/1") {
      throw ValidationError(path.string() + ": expected schema trex-manifest/1");
    }
  }

  json step = {{"seeds", record.seeds}, {"config_hash", record.config_hash}};
  json inputs = json::object();
  for (const auto& in : record.inputs) {
    inputs[fs::relative(in, run_dir).generic_string()] = fs::exists(in) ? content_hash(in) : "missing";
  }
  step["inputs"] = inputs;
  json outputs = json::array();
  for (const auto& out : record.outputs) outputs.push_back(fs::relative(out, run_dir).generic_string());
  step["outputs"] = outputs;
  manifest["steps"][record.command] = step;

  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(run_dir)) {
    if (entry.is_regular_file() && entry.path().filename() != "manifest.json") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  json listed = json::object();
  for (const auto& f : files) {
    const auto rel = fs::relative(f, run_dir);
    json item = {{"hash", content_hash(f)}};
    if (const auto schema = artifact_schema(rel); !schema.empty()) item["schema"] = schema;
    listed[rel.generic_string()] = item;
  }
  manifest["files"] = listed;
  write_file(path, manifest.dump(2) + "\n");
}

}  // namespace trex::cli
