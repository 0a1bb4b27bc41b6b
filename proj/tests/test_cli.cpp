#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>
#include <sys/wait.h>

#include "evloop/dataio.hpp"
#include "support/toy_data.hpp"

using nlohmann::json;

namespace {

struct Run {
  int code = -1;
  std::string out;
};

Run run(const std::string& args) {
  const std::string cmd = std::string(EVLOOP_CLI) + " " + args + " 2>/dev/null";
  Run r;
  FILE* f = popen(cmd.c_str(), "r");
  REQUIRE(f != nullptr);
  char buf[4096];
  std::size_t n;
  while ((n = fread(buf, 1, sizeof buf, f)) > 0) r.out.append(buf, n);
  const int st = pclose(f);
  r.code = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
  return r;
}

std::string fx(const std::string& name) { return std::string(EVLOOP_FIXTURE_DIR) + "/" + name; }

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::filesystem::path fresh_dir(const std::string& name) {
  auto d = std::filesystem::temp_directory_path() / ("evloop-cli-" + name);
  std::filesystem::remove_all(d);
  std::filesystem::create_directories(d);
  return d;
}

}  // namespace

TEST_CASE("solve prints the result block") {
  Run r = run("solve " + fx("case2.lp"));
  CHECK(r.code == 0);
  CHECK(r.out == "STATUS: OPTIMAL\nJust print the best solution: 29\n");
  r = run("solve " + fx("case3.lp"));
  CHECK(r.out == "STATUS: OPTIMAL\nJust print the best solution: 2250\n");

  const auto dir = fresh_dir("solve");
  std::ofstream(dir / "bad.lp") << "maximize\n x * y\nend\n";
  std::ofstream(dir / "inf.lp") << "maximize\n x\nsubject to\n x >= 2\n x <= 1\nend\n";
  CHECK(run("solve " + (dir / "bad.lp").string()).code == 2);
  r = run("solve " + (dir / "inf.lp").string());
  CHECK(r.code == 0);
  CHECK(r.out == "STATUS: INFEASIBLE\nNo Best Solution\n");
  CHECK(run("solve /nonexistent.lp").code == 2);
  std::filesystem::remove_all(dir);
}

TEST_CASE("verify reports the reward breakdown") {
  Run r = run("verify --backend " + fx("backend_b.json") + " --code " + fx("case2.lp") + " --answer 29");
  CHECK(r.code == 0);
  json j = json::parse(r.out);
  CHECK(j["r_ans"] == 1.0);
  CHECK(j["executed"] == true);
  CHECK(j["objective"] == 29.0);
  CHECK(j["r_fmt"].is_null());

  const auto dir = fresh_dir("verify");
  std::ofstream(dir / "resp.txt") << "<think>carts</think>\n<code>" << slurp(fx("case2.lp")) << "</code>";
  r = run("verify --backend " + fx("backend_b.json") + " --raw " + (dir / "resp.txt").string() + " --answer 29");
  j = json::parse(r.out);
  CHECK(j["r_fmt"] == 1.0);
  CHECK(j["reward"] == 2.0);

  std::ofstream(dir / "inf.lp") << "maximize\n x\nsubject to\n x >= 2\n x <= 1\nend\n";
  r = run("verify --backend " + fx("backend_b.json") + " --code " + (dir / "inf.lp").string() + " --answer INFEASIBLE");
  CHECK(json::parse(r.out)["r_ans"] == 1.0);

  std::ofstream(dir / "junk.lp") << "print('hi')\n";
  r = run("verify --backend " + fx("backend_b.json") + " --code " + (dir / "junk.lp").string() + " --answer 3");
  CHECK(r.code == 1);
  CHECK(json::parse(r.out)["executed"] == false);

  CHECK(run("verify --backend " + fx("backend_b.json") + " --code " + fx("case2.lp") + " --answer maybe").code == 2);
  CHECK(run("verify --backend /nonexistent.json --code " + fx("case2.lp") + " --answer 1").code == 2);
  CHECK(run("verify --code " + fx("case2.lp") + " --answer 1").code == 2);
  std::filesystem::remove_all(dir);
}

TEST_CASE("usage errors exit 2, help exits 0") {
  CHECK(run("").code == 2);
  CHECK(run("frobnicate").code == 2);
  CHECK(run("--help").code == 0);
  CHECK(run("train --dataset x.jsonl --backend y.json --algo ppo").code == 2);
}

TEST_CASE("score, train and eval round trip") {
  const auto dir = fresh_dir("flow");
  const auto data = toy::convergence_set(5, 77);
  evloop::write_dataset(dir / "toy.jsonl", data.problems);

  // score: one good candidate, one wrong, rest missing
  std::filesystem::create_directories(dir / "cands");
  std::ofstream(dir / "cands" / "toy0.txt") << data.problems[0].candidate_pool[data.answer_index[0]];
  std::ofstream(dir / "cands" / "toy1.lp") << "maximize\n x\nsubject to\n x <= 1\nend\n";
  Run r = run("score --backend " + fx("backend_b.json") + " --dataset " + (dir / "toy.jsonl").string() +
              " --candidates " + (dir / "cands").string() + " --epsilon 1e-4");
  CHECK(r.code == 1);
  json j = json::parse(r.out);
  CHECK(j["total"] == 5);
  CHECK(j["correct"] == 1);
  CHECK(j["executed"] == 2);

  const std::string train = "train --dataset " + (dir / "toy.jsonl").string() + " --backend " + fx("backend_b.json") +
                            " --algo dapo --steps 10 --group-size 4 --batch 8 --seed 7";
  r = run(train + " --metrics " + (dir / "m1.jsonl").string() + " --policy-out " + (dir / "p1.json").string());
  CHECK(r.code == 0);
  CHECK(json::parse(r.out)["steps"] == 10);
  run(train + " --metrics " + (dir / "m2.jsonl").string() + " --policy-out " + (dir / "p2.json").string());
  CHECK(slurp(dir / "m1.jsonl") == slurp(dir / "m2.jsonl"));
  CHECK(slurp(dir / "p1.json") == slurp(dir / "p2.json"));
  std::size_t lines = 0;
  std::istringstream ms(slurp(dir / "m1.jsonl"));
  for (std::string l; std::getline(ms, l);) ++lines;
  CHECK(lines == 10);

  // continue from the saved policy, then evaluate under both backends
  r = run("train --dataset " + (dir / "toy.jsonl").string() + " --backend " + fx("backend_a.json") +
          " --steps 3 --batch 4 --policy-in " + (dir / "p1.json").string() + " --policy-out " +
          (dir / "p3.json").string());
  CHECK(r.code == 0);
  for (const char* b : {"backend_a.json", "backend_b.json"}) {
    r = run("eval --dataset " + (dir / "toy.jsonl").string() + " --backend " + fx(b) + " --policy " +
            (dir / "p3.json").string() + " --epsilon 1e-4");
    CHECK((r.code == 0 || r.code == 1));
    j = json::parse(r.out);
    CHECK(j["total"] == 5);
  }

  // two backends with explicit weights
  r = run("train --dataset " + (dir / "toy.jsonl").string() + " --backend " + fx("backend_a.json") + " --backend " +
          fx("backend_b.json") + " --solver-weights '{\"backend-a\":0.25,\"backend-b\":0.75}' --steps 2 --batch 4");
  CHECK(r.code == 0);
  r = run("train --dataset " + (dir / "toy.jsonl").string() + " --backend " + fx("backend_b.json") +
          " --solver-weights '{\"ghost\":1}' --steps 1");
  CHECK(r.code == 2);

  // a pool that no longer matches the saved policy is refused
  auto changed = data.problems;
  changed[0].candidate_pool[0] += " ";
  evloop::write_dataset(dir / "changed.jsonl", changed);
  CHECK(run("eval --dataset " + (dir / "changed.jsonl").string() + " --backend " + fx("backend_b.json") +
            " --policy " + (dir / "p1.json").string())
            .code == 2);
  std::filesystem::remove_all(dir);
}
