#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "cts/records.hpp"

namespace fs = std::filesystem;

namespace {

const fs::path kDir = fs::temp_directory_path() / "cts_cli_test";

int run(const std::string& args) {
  std::string cmd = std::string(CALIB_EXE) + " " + args + " >/dev/null 2>&1";
  int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string p(const std::string& name) { return (kDir / name).string(); }

void write(const std::string& name, const std::string& text) {
  std::ofstream out(kDir / name);
  out << text;
}

std::size_t line_count(const std::string& name) {
  std::ifstream in(kDir / name);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) n += !line.empty();
  return n;
}

const char* kConfig = R"({
  "dataset": {"n_per_domain_class": 4},
  "seeds": [0],
  "splits": [{"train_domains": [0, 1, 2], "calib_domains": [0, 1, 2], "target_domain": 3,
              "train_fraction": 0.5, "seed": 0}],
  "training": {"epochs": 2, "batch_size": 8},
  "analysis": {"group_count": 2, "extreme_fraction": 0.1},
  "threads": 1
})";

}  // namespace

TEST_CASE("cli pipeline") {
  fs::remove_all(kDir);
  fs::create_directories(kDir);
  write("c.json", kConfig);
  const std::string cfg = "--config " + p("c.json");

  REQUIRE(run("gen-data " + cfg + " --seed 1 --out " + p("data")) == 0);
  CHECK(line_count("data/images.jsonl") == 64);
  CHECK(fs::exists(kDir / "data/manifest.json"));

  REQUIRE(run("train " + cfg + " --data " + p("data") + " --out " + p("model.json")) == 0);
  REQUIRE(run("export-logits " + cfg + " --data " + p("data") + " --model " + p("model.json") +
              " --out " + p("cache.jsonl") + " --target-out " + p("target.jsonl")) == 0);
  CHECK(line_count("cache.jsonl") == 24 * 3);
  CHECK(line_count("target.jsonl") == 16);
  CHECK_NOTHROW(cts::read_cache(kDir / "cache.jsonl"));

  REQUIRE(run("calibrate " + cfg + " --cache " + p("cache.jsonl") +
              " --method cts --lambda1 0.5 --lambda2 0.25 --out " + p("t.json")) == 0);
  {
    std::ifstream in(kDir / "t.json");
    auto j = nlohmann::json::parse(in);
    CHECK(j.at("method") == "cts");
    CHECK(j.at("lambda1") == 0.5);
    CHECK(j.at("lambda2") == 0.25);
    CHECK(j.at("trace_length").get<int>() > 0);
  }
  CHECK(run("calibrate " + cfg + " --cache " + p("cache.jsonl") + " --method cts --lambda-grid --out " +
            p("tg.json")) == 0);
  CHECK(run("calibrate " + cfg + " --method perturb-ts --model " + p("model.json") + " --data " +
            p("data") + " --out " + p("tp.json")) == 0);

  REQUIRE(run("evaluate --cache " + p("target.jsonl") + " --temperature " + p("t.json") + " --out " +
              p("eval.json")) == 0);
  {
    std::ifstream in(kDir / "eval.json");
    auto j = nlohmann::json::parse(in);
    CHECK(j.contains("rows"));
  }

  CHECK(run("analyze " + cfg + " --data " + p("data") + " --model " + p("model.json") + " --out " +
            p("analysis")) == 0);
  CHECK(fs::exists(kDir / "analysis/analysis.json"));

  CHECK(run("run-all " + cfg + " --out " + p("run")) == 0);
  CHECK(fs::exists(kDir / "run/report.json"));
  CHECK(fs::exists(kDir / "run/report.txt"));
}

TEST_CASE("cli error exit codes") {
  fs::create_directories(kDir);
  write("bad_cache.jsonl", "{\"id\":1}\n");
  write("unknown.json", R"({"bogus": 1})");
  write("diverge.json",
        R"({"dataset": {"n_per_domain_class": 3}, "training": {"epochs": 2, "learning_rate": 1e308}})");

  CHECK(run("") == 2);
  CHECK(run("no-such-command") == 2);
  CHECK(run("calibrate --cache " + p("bad_cache.jsonl") + " --method ts") == 2);
  CHECK(run("calibrate --cache " + p("bad_cache.jsonl") + " --method nope") == 2);
  CHECK(run("calibrate --cache " + p("missing.jsonl") + " --method ts") == 2);
  CHECK(run("calibrate --cache x --lambda1 notanumber") == 2);
  CHECK(run("run-all --config " + p("unknown.json") + " --out " + p("x")) == 2);
  CHECK(run("train --config " + p("diverge.json") + " --out " + p("dm.json")) == 3);
  CHECK(run("--help") == 0);
}
