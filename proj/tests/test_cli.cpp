#include <gtest/gtest.h>

#include <json.hpp>

#include <array>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <sys/wait.h>

#include "support.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct Run {
  int code = -1;
  std::string out;
};

Run trex_cli(const std::string& args) {
  const std::string cmd = std::string(TREX_BINARY) + " " + args + " 2>&1";
  Run r;
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return r;
  std::array<char, 4096> buf{};
  while (fgets(buf.data(), static_cast<int>(buf.size()), p)) r.out += buf.data();
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string tiny_spec() { return (fs::path(TREX_SOURCE_DIR) / "specs" / "tiny-4.spec").string(); }

// Independent FNV-1a 64 for manifest checks.
std::string fnv(const std::string& bytes) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char out[32];
  std::snprintf(out, sizeof(out), "fnv1a64:%016llx", static_cast<unsigned long long>(h));
  return out;
}

std::map<std::string, std::string> tree(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) files[fs::relative(e.path(), dir).generic_string()] = slurp(e.path());
  }
  return files;
}

void run_all(const fs::path& dir) {
  const std::string rd = " --run-dir " + dir.string();
  const std::vector<std::string> steps = {
      "gen-demos" + rd + " --spec " + tiny_spec() + " --seed 4 --updates 2200 --checkpoint-every 200 --stage 3",
      "rank --by gt" + rd,
      "train-reward" + rd + " --seed 5 --steps 40 --ensemble-size 2 --num-pairs 100",
      "plan --reward learned" + rd,
      "plan --reward gt" + rd,
      "plan --reward clone" + rd,
      "evaluate --policy trex --episodes 5 --seed 6" + rd,
      "evaluate --policy oracle --episodes 5 --seed 6" + rd,
      "evaluate --policy clone --episodes 5 --seed 6" + rd,
      "extrapolate" + rd,
      "saliency" + rd,
      "summary" + rd,
  };
  for (const auto& s : steps) {
    const auto r = trex_cli(s);
    ASSERT_EQ(r.code, 0) << s << "\n" << r.out;
  }
}

}  // namespace

TEST(Cli, GenDemosIsDeterministic) {
  trex::testing::TempDir a("cli-a"), b("cli-b");
  for (const auto* d : {&a, &b}) {
    const auto r = trex_cli("gen-demos --run-dir " + d->path().string() + " --spec " + tiny_spec() +
                            " --seed 11 --updates 2200 --checkpoint-every 200 --stage 3");
    ASSERT_EQ(r.code, 0) << r.out;
  }
  EXPECT_EQ(slurp(a.path() / "demos.jsonl"), slurp(b.path() / "demos.jsonl"));
  EXPECT_EQ(slurp(a.path() / "heldout.jsonl"), slurp(b.path() / "heldout.jsonl"));
  EXPECT_EQ(slurp(a.path() / "manifest.json"), slurp(b.path() / "manifest.json"));
}

TEST(Cli, RankByGtOnTwelveDistinctDemos) {
  trex::testing::TempDir d("cli-rank");
  // Hand-built demos with distinct returns; the spec is only used for validation elsewhere.
  std::ofstream demos(d.path() / "demos.jsonl");
  demos << "{\"schema\":\"trex-demos/1\"}\n";
  for (int k = 0; k < 12; ++k) {
    demos << "{\"id\":\"d" << k << "\",\"created_step\":" << k << ",\"observations\":[[0],[" << k
          << "]],\"gt_return\":" << k << "}\n";
  }
  demos.close();
  const auto r = trex_cli("rank --by gt --run-dir " + d.path().string());
  ASSERT_EQ(r.code, 0) << r.out;
  const auto text = slurp(d.path() / "rankings.txt");
  int pairs = 0;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && std::isdigit(static_cast<unsigned char>(line[0]))) ++pairs;
  }
  EXPECT_EQ(pairs, 66);
}

TEST(Cli, ExitCodesAndMessages) {
  trex::testing::TempDir d("cli-exit");
  const std::string rd = " --run-dir " + d.path().string();
  EXPECT_EQ(trex_cli("").code, 2);
  EXPECT_EQ(trex_cli("no-such-command").code, 2);
  EXPECT_EQ(trex_cli("gen-demos" + rd).code, 2);  // --seed missing
  EXPECT_EQ(trex_cli("rank --by stars" + rd).code, 2);
  EXPECT_EQ(trex_cli("corrupt --seed 1 --swaps 2 --level 0.5" + rd).code, 2);

  const auto missing = trex_cli("rank --by gt" + rd);
  EXPECT_NE(missing.code, 0);
  EXPECT_NE(missing.out.find("demos.jsonl"), std::string::npos);
  EXPECT_NE(missing.out.find("gen-demos"), std::string::npos);

  const auto bad_spec = trex_cli("gen-demos --seed 1 --spec " + (d.path() / "nope.spec").string() + rd);
  EXPECT_NE(bad_spec.code, 0);
  EXPECT_EQ(bad_spec.out.rfind("error:", 0), 0u) << bad_spec.out;

  EXPECT_EQ(trex_cli("--help").code, 0);
}

TEST(Cli, PlanZeroIsUniform) {
  trex::testing::TempDir d("cli-zero");
  const std::string rd = " --run-dir " + d.path().string();
  ASSERT_EQ(trex_cli("gen-demos --seed 2 --updates 1000 --checkpoint-every 100 --spec " + tiny_spec() + rd).code, 0);
  const auto r = trex_cli("plan --reward zero" + rd);
  ASSERT_EQ(r.code, 0) << r.out;
  std::istringstream policy(slurp(d.path() / "policy_zero.txt"));
  int rows = 0;
  for (std::string line; std::getline(policy, line);) {
    if (line.empty() || !std::isdigit(static_cast<unsigned char>(line[0]))) continue;
    std::istringstream row(line);
    std::string x, y, t;
    row >> x >> y >> t;
    for (double p; row >> p;) EXPECT_DOUBLE_EQ(p, 0.2) << line;
    ++rows;
  }
  EXPECT_EQ(rows, 16);
  EXPECT_EQ(trex_cli("evaluate --policy zero --episodes 3 --seed 1" + rd).code, 0);
  EXPECT_TRUE(fs::exists(d.path() / "eval_zero.csv"));
}

TEST(Cli, GradCheckPasses) {
  trex::testing::TempDir d("cli-grad");
  const auto r = trex_cli("grad-check --seed 3 --trials 10 --run-dir " + d.path().string());
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_TRUE(fs::exists(d.path() / "grad_check.csv"));
}

TEST(Cli, PipelineRerunIsByteIdenticalAndManifestComplete) {
  trex::testing::TempDir a("cli-full-a"), b("cli-full-b");
  run_all(a.path());
  if (HasFatalFailure()) return;
  run_all(b.path());
  if (HasFatalFailure()) return;
  const auto ta = tree(a.path()), tb = tree(b.path());
  ASSERT_EQ(ta.size(), tb.size());
  for (const auto& [name, bytes] : ta) {
    ASSERT_TRUE(tb.count(name)) << name;
    EXPECT_EQ(bytes, tb.at(name)) << name;
  }

  const auto manifest = json::parse(ta.at("manifest.json"));
  EXPECT_EQ(manifest["schema"], "trex-manifest/1");
  for (const auto& [name, bytes] : ta) {
    if (name == "manifest.json") continue;
    ASSERT_TRUE(manifest["files"].contains(name)) << name;
    EXPECT_EQ(manifest["files"][name]["hash"], fnv(bytes)) << name;
  }
  for (const char* cmd : {"gen-demos", "rank", "train-reward", "plan", "evaluate", "extrapolate", "saliency", "summary"}) {
    bool found = false;
    for (const auto& [key, step] : manifest["steps"].items()) found = found || key.rfind(cmd, 0) == 0;
    EXPECT_TRUE(found) << cmd;
  }
  EXPECT_TRUE(ta.count("extrapolation.svg"));
  EXPECT_TRUE(ta.count("summary.csv"));
  EXPECT_TRUE(ta.count("ensemble/meta"));
}

TEST(Cli, LabelServeExportsOnInterrupt) {
  trex::testing::TempDir d("cli-serve");
  const std::string rd = " --run-dir " + d.path().string();
  ASSERT_EQ(trex_cli("gen-demos --seed 2 --updates 1100 --checkpoint-every 100 --stage 3 --spec " + tiny_spec() + rd).code, 0);
  const std::string cmd =
      "timeout --preserve-status -s INT 2 " + std::string(TREX_BINARY) + " label-serve --seed 1 --port 0" + rd + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  EXPECT_TRUE(WIFEXITED(status) && WEXITSTATUS(status) == 0) << status;
  EXPECT_TRUE(fs::exists(d.path() / "votes.log"));
  EXPECT_TRUE(fs::exists(d.path() / "votes.jsonl"));
  const auto exported = trex_cli("label-serve --seed 1 --export-only" + rd);
  EXPECT_EQ(exported.code, 0) << exported.out;
}
