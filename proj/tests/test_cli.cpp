#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dualslu/cli.hpp"

using namespace dualslu;

namespace {

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

std::filesystem::path fresh_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

int cli(const std::vector<std::string>& args, std::string* out = nullptr) {
  std::vector<const char*> argv;
  argv.push_back("dslu");
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream captured;
  std::streambuf* old = std::cout.rdbuf(captured.rdbuf());
  const int rc = run_cli(int(argv.size()), argv.data());
  std::cout.rdbuf(old);
  if (out) *out = captured.str();
  return rc;
}

std::filesystem::path write_tiny_config(const std::filesystem::path& dir,
                                        const std::string& extra = "") {
  const std::string text = R"({
  "pipeline": "dual",
  "train_languages": ["fr"],
  "slu_languages": ["fr"],
  "target_language": "fr",
  "lambda": 1.0,
  "lambda_grid": [0, 1],
  "epochs": 2,
  "batch_size": 4,
  "seed": 11,
  "model": {
    "model_dim": 12, "enc_layers": 1, "enc_hidden": 10,
    "slu_layers": 1, "slu_hidden": 10
  },
  "data": { "train": 12, "dev": 6, "test": 6, "corpus_seed": 5)" +
                           extra + R"( }
})";
  const auto path = dir / "tiny.json";
  std::ofstream(path, std::ios::binary) << text;
  return path;
}

}  // namespace

TEST_CASE("usage errors exit with code 2") {
  CHECK(cli({}) == 2);
  CHECK(cli({"no-such-command"}) == 2);
  CHECK(cli({"train"}) == 2);                        // missing --config
  CHECK(cli({"train", "--bogus-flag", "x"}) == 2);   // unknown flag
  std::string out;
  CHECK(cli({"--help"}, &out) == 0);
  CHECK(out.find("train") != std::string::npos);
  CHECK(cli({"score", "--help"}, &out) == 0);
}

TEST_CASE("score compares annotation files") {
  const auto dir = fresh_dir("dslu_cli_score");
  std::ofstream(dir / "ref.txt")
      << "yes <reservation> book a room > please\n"
      << "hello <room-number> four two >\n";
  std::ofstream(dir / "same.txt")
      << "yes <reservation> book a room > please\n"
      << "hello <room-number> four two >\n";
  std::ofstream(dir / "worse.txt")
      << "yes <reservation> book a suite > please\n"
      << "hello <room-number> four two\n";  // unclosed span: one repair

  std::string out;
  CHECK(cli({"score", "--ref", (dir / "ref.txt").string(), "--hyp",
             (dir / "same.txt").string(), "--profile", "media"},
            &out) == 0);
  CHECK(out.find("CER") != std::string::npos);
  CHECK(out.find("    0.00") != std::string::npos);
  CHECK(out.find("profile media") != std::string::npos);

  CHECK(cli({"score", "--ref", (dir / "ref.txt").string(), "--hyp",
             (dir / "worse.txt").string(), "--json"},
            &out) == 0);
  const auto j = nlohmann::json::parse(out);
  CHECK(j.at("cer").at("rate").get<double>() == 0.0);
  CHECK(j.at("cver").at("rate").get<double>() > 0.0);
  CHECK(j.at("repairs").get<int>() == 1);

  SUBCASE("errors") {
    CHECK(cli({"score", "--ref", (dir / "missing.txt").string(), "--hyp",
               (dir / "same.txt").string()}) == 1);
    std::ofstream(dir / "short.txt") << "yes\n";
    CHECK(cli({"score", "--ref", (dir / "ref.txt").string(), "--hyp",
               (dir / "short.txt").string()}) == 1);
    // unknown profile names are a config problem, not a runtime failure
    CHECK(cli({"score", "--ref", (dir / "ref.txt").string(), "--hyp",
               (dir / "same.txt").string(), "--profile", "nope"}) == 2);
  }
}

TEST_CASE("gen-corpus is deterministic in its seed") {
  const auto dir = fresh_dir("dslu_cli_gen");
  const auto cfg = write_tiny_config(dir);
  const auto out_a = (dir / "a").string();
  const auto out_b = (dir / "b").string();
  CHECK(cli({"gen-corpus", "--config", cfg.string(), "--out", out_a, "--seed",
             "7"}) == 0);
  CHECK(cli({"gen-corpus", "--config", cfg.string(), "--out", out_b, "--seed",
             "7"}) == 0);
  for (const char* name :
       {"fr_train.jsonl", "fr_train.feat", "fr_dev.jsonl", "fr_test.jsonl",
        "config.json"})
    CHECK(read_file(dir / "a" / name) == read_file(dir / "b" / name));

  std::string out;
  CHECK(cli({"gen-corpus", "--config", cfg.string(), "--out",
             (dir / "c").string(), "--json"},
            &out) == 0);
  const auto j = nlohmann::json::parse(out);
  CHECK(j.at("languages").size() == 1);
  CHECK(j.at("languages")[0].at("train").get<int>() == 12);

  SUBCASE("config errors exit with 2") {
    std::ofstream(dir / "bad.json") << "{\"pipelime\": 1}";
    CHECK(cli({"gen-corpus", "--config", (dir / "bad.json").string()}) == 2);
    std::ofstream(dir / "notjson.json") << "nope";
    CHECK(cli({"gen-corpus", "--config", (dir / "notjson.json").string()}) ==
          2);
    CHECK(cli({"gen-corpus", "--config", (dir / "absent.json").string()}) ==
          2);
  }
}

TEST_CASE("train runs end to end and honors overrides") {
  const auto dir = fresh_dir("dslu_cli_train");
  const auto cfg = write_tiny_config(dir);
  const auto run = (dir / "run").string();
  std::string out;
  CHECK(cli({"train", "--config", cfg.string(), "--out", run, "--quiet"},
            &out) == 0);
  CHECK(out.find("resolved config") != std::string::npos);
  CHECK(out.find("test: CER") != std::string::npos);
  CHECK(std::filesystem::exists(dir / "run" / "report.json"));
  CHECK(std::filesystem::exists(dir / "run" / "final.ckpt"));

  CHECK(cli({"train", "--config", cfg.string(), "--out",
             (dir / "run_json").string(), "--quiet", "--json", "--epochs",
             "1"},
            &out) == 0);
  const auto j = nlohmann::json::parse(out);
  CHECK(j.at("config").at("epochs").get<int>() == 1);
  CHECK(j.at("stages")[0].at("epochs").size() == 1);

  SUBCASE("validation failures exit with 2") {
    CHECK(cli({"train", "--config", cfg.string(), "--out", run, "--quiet",
               "--lambda", "-3"}) == 2);
    CHECK(cli({"train", "--config", cfg.string(), "--out", run, "--quiet",
               "--pipeline", "what"}) == 2);
  }

  SUBCASE("resume and evaluate reuse the run artifacts") {
    const auto short_run = (dir / "short").string();
    CHECK(cli({"train", "--config", cfg.string(), "--out", short_run,
               "--quiet", "--epochs", "1"}) == 0);
    CHECK(cli({"train", "--config", cfg.string(), "--out", short_run,
               "--quiet", "--resume", short_run + "/last.ckpt"}) == 0);
    CHECK(read_file(dir / "short" / "report.json") ==
          read_file(dir / "run" / "report.json"));

    std::string rep;
    CHECK(cli({"evaluate", "--checkpoint", run + "/final.ckpt", "--config",
               cfg.string(), "--split", "test", "--json"},
              &rep) == 0);
    const auto jr = nlohmann::json::parse(rep);
    CHECK(jr.at("utterances").get<int>() == 6);
    CHECK(cli({"evaluate", "--checkpoint", run + "/final.ckpt", "--config",
               cfg.string(), "--split", "dev"},
              &rep) == 0);
    CHECK(rep.find("CER") != std::string::npos);
    CHECK(cli({"evaluate", "--checkpoint", (dir / "nope.ckpt").string(),
               "--config", cfg.string()}) == 1);
  }
}

TEST_CASE("show-params reports the dual parameter advantage") {
  const auto dir = fresh_dir("dslu_cli_params");
  const auto cfg = write_tiny_config(dir);
  std::string out;
  CHECK(cli({"show-params", "--config", cfg.string()}, &out) == 0);
  CHECK(out.find("specialize") != std::string::npos);
  CHECK(out.find("= specialize + slu_finetune: yes") != std::string::npos);

  CHECK(cli({"show-params", "--config", cfg.string(), "--json"}, &out) == 0);
  const auto j = nlohmann::json::parse(out);
  CHECK(j.at("dual_below_sequential_sum").get<bool>());
  const auto spec = j.at("trainable").at("specialize").get<std::size_t>();
  const auto slu = j.at("trainable").at("slu_finetune").get<std::size_t>();
  const auto dual = j.at("trainable").at("dual").get<std::size_t>();
  CHECK(dual < spec + slu);
  CHECK(j.at("model_total").get<std::size_t>() == dual);
}

TEST_CASE("sweep-lambda writes per-trial runs and a summary") {
  const auto dir = fresh_dir("dslu_cli_sweep");
  const auto cfg = write_tiny_config(dir);
  const auto out_dir = (dir / "sweep").string();
  std::string out;
  CHECK(cli({"sweep-lambda", "--config", cfg.string(), "--out", out_dir,
             "--quiet"},
            &out) == 0);
  CHECK(out.find("best lambda") != std::string::npos);
  CHECK(std::filesystem::exists(dir / "sweep" / "sweep.json"));
  CHECK(std::filesystem::exists(dir / "sweep" / "lambda_0" / "report.json"));
  CHECK(std::filesystem::exists(dir / "sweep" / "lambda_1" / "report.json"));

  CHECK(cli({"sweep-lambda", "--config", cfg.string(), "--out",
             (dir / "sweep2").string(), "--quiet", "--grid", "0.5", "--json"},
            &out) == 0);
  const auto j = nlohmann::json::parse(out);
  CHECK(j.at("entries").size() == 1);
  CHECK(j.at("best_lambda").get<double>() == 0.5);
}

TEST_CASE("matrix emits the regime table") {
  const auto dir = fresh_dir("dslu_cli_matrix");
  std::ofstream(dir / "base.json") << R"({
  "pipeline": "dual",
  "train_languages": ["fr", "it", "tu"],
  "target_language": "fr",
  "epochs": 1,
  "batch_size": 4,
  "seed": 11,
  "model": {
    "model_dim": 12, "enc_layers": 1, "enc_hidden": 10,
    "slu_layers": 1, "slu_hidden": 10
  },
  "data": { "train": 6, "dev": 3, "test": 3, "corpus_seed": 5,
            "overlap": { "it": 0.5 } }
})";
  std::string out;
  CHECK(cli({"matrix", "--config", (dir / "base.json").string(), "--out",
             (dir / "m").string(), "--seeds", "1", "--quiet"},
            &out) == 0);
  CHECK(out.find("regime") != std::string::npos);
  CHECK(out.find("dual_then_slu_multi") != std::string::npos);
  CHECK(std::filesystem::exists(dir / "m" / "matrix.json"));
  CHECK(std::filesystem::exists(dir / "m" / "matrix.txt"));
  CHECK(std::filesystem::exists(dir / "m" / "config.json"));
}

TEST_CASE("run root env var anchors default run directories") {
  const auto dir = fresh_dir("dslu_cli_root");
  const auto cfg = write_tiny_config(dir);
  setenv("DSLU_RUN_ROOT", (dir / "root").string().c_str(), 1);
  std::string out;
  CHECK(cli({"train", "--config", cfg.string(), "--quiet", "--epochs", "1"},
            &out) == 0);
  unsetenv("DSLU_RUN_ROOT");
  CHECK(std::filesystem::exists(dir / "root" / "tiny_dual" / "report.json"));
}
