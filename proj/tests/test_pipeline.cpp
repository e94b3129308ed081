#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>

#include "cardio/cli.hpp"
#include "testutil.hpp"

using namespace cardio;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  REQUIRE(is);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

// Tiny end-to-end scale: 64-point inputs, 256-point fine outputs.
GenerateOptions tiny_generate(const std::string& out, std::uint64_t seed) {
  GenerateOptions o;
  o.out = out;
  o.n = 10;
  o.levels = {"mixed"};
  o.seed = seed;
  o.sparse_points = 64;
  o.dense_points = 256;
  o.threads = 2;
  return o;
}

TrainOptions tiny_train(const std::string& train_dir, const std::string& val_dir,
                        const std::string& out) {
  TrainOptions o;
  o.out = out;
  o.config.train_dir = train_dir;
  o.config.val_dir = val_dir;
  o.config.model.feature_width = 16;
  o.config.model.input_points = 64;
  o.config.model.coarse_points = 16;
  o.config.model.k_neighbors = 4;
  o.config.model.depth = 1;
  o.config.model.heads = 2;
  o.config.epochs = 2;
  o.config.batch = 4;
  o.config.seed = 77;
  o.config.threads = 2;
  o.config.warmup_epochs = 1.0;
  return o;
}

struct TempTree {
  fs::path root;
  explicit TempTree(const std::string& name) : root(fs::path("pipeline_tmp") / name) {
    fs::remove_all(root);
    fs::create_directories(root);
  }
  ~TempTree() { fs::remove_all(root); }
  std::string operator/(const std::string& leaf) const { return (root / leaf).string(); }
};

}  // namespace

TEST_CASE("generate is reproducible from its run manifest") {
  TempTree tmp("gen");
  auto a = cmd_generate(tiny_generate(tmp / "a", 5));
  // re-run purely from the manifest echo
  GenerateOptions again = generate_from_kv(KeyValues::from_file(tmp / "a/run_manifest.txt"));
  again.out = tmp / "b";
  auto b = cmd_generate(again);
  REQUIRE(a.records.size() == b.records.size());
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    REQUIRE(a.records[i].digest == b.records[i].digest);
    REQUIRE(a.records[i].level == b.records[i].level);
  }
  // dataset manifests byte-identical
  REQUIRE(slurp(fs::path(tmp / "a") / "manifest.txt") ==
          slurp(fs::path(tmp / "b") / "manifest.txt"));
}

TEST_CASE("mixed levels records a per-record level name") {
  TempTree tmp("genmix");
  auto m = cmd_generate(tiny_generate(tmp / "d", 6));
  std::set<std::string> seen;
  for (const auto& r : m.records) seen.insert(r.level);
  for (const auto& name : seen) REQUIRE_NOTHROW(level_by_name(name));
  REQUIRE(seen.size() >= 2);
}

TEST_CASE("generate into an unwritable directory fails with no partial files") {
  GenerateOptions o = tiny_generate("/proc/cardio_nope/split", 5);
  REQUIRE_THROWS_AS(cmd_generate(o), std::runtime_error);
  REQUIRE(!fs::exists("/proc/cardio_nope"));
}

TEST_CASE("train smoke: csv rows, determinism, resume semantics") {
  TempTree tmp("train");
  cmd_generate(tiny_generate(tmp / "train", 21));
  cmd_generate(tiny_generate(tmp / "val", 22));

  // two epochs -> two validation rows
  auto opts = tiny_train(tmp / "train", tmp / "val", tmp / "runA");
  TrainResult a = cmd_train(opts);
  REQUIRE(a.curve.size() == 2);
  {
    std::ifstream csv(fs::path(tmp / "runA") / "loss_curve.csv");
    std::string line;
    std::size_t rows = 0;
    while (std::getline(csv, line))
      if (!line.empty()) ++rows;
    REQUIRE(rows == 3);  // header + 2 epochs
  }

  // same seed -> byte-identical curve and checkpoint
  opts.out = tmp / "runB";
  cmd_train(opts);
  REQUIRE(slurp(fs::path(tmp / "runA") / "loss_curve.csv") ==
          slurp(fs::path(tmp / "runB") / "loss_curve.csv"));
  REQUIRE(slurp(fs::path(tmp / "runA") / "best.ckpt") ==
          slurp(fs::path(tmp / "runB") / "best.ckpt"));

  // straight 4-epoch run == 2 epochs (of a 4-epoch schedule) + resume
  auto straight = tiny_train(tmp / "train", tmp / "val", tmp / "run4");
  straight.config.epochs = 4;
  cmd_train(straight);

  auto first_leg = tiny_train(tmp / "train", tmp / "val", tmp / "runA");
  first_leg.config.epochs = 2;
  first_leg.config.schedule_epochs = 4;
  cmd_train(first_leg);

  auto resumed = tiny_train(tmp / "train", tmp / "val", tmp / "runA");
  resumed.config.epochs = 4;
  resumed.resume = (fs::path(tmp / "runA") / "last.ckpt").string();
  TrainResult r = cmd_train(resumed);
  REQUIRE(r.curve.size() == 2);          // two new epochs
  REQUIRE(r.curve.front().epoch == 3);   // no schedule reset
  REQUIRE(slurp(fs::path(tmp / "runA") / "loss_curve.csv") ==
          slurp(fs::path(tmp / "run4") / "loss_curve.csv"));
  REQUIRE(slurp(fs::path(tmp / "runA") / "last.ckpt") ==
          slurp(fs::path(tmp / "run4") / "last.ckpt"));
}

TEST_CASE("complete emits the configured fine count, deterministically") {
  TempTree tmp("complete");
  cmd_generate(tiny_generate(tmp / "train", 31));
  cmd_generate(tiny_generate(tmp / "val", 32));
  TrainResult trained = cmd_train(tiny_train(tmp / "train", tmp / "val", tmp / "run"));

  // single-cloud input file from the first record
  auto [sparse, dense] = load_record((fs::path(tmp / "val") / "record_00000.lpc").string());
  save_lpc1(tmp / "input.lpc", sparse);

  CompleteOptions co;
  co.checkpoint = trained.checkpoint_path;
  co.input = tmp / "input.lpc";
  co.out = tmp / "outA";
  co.ply = true;
  LabeledPointCloud fine = cmd_complete(co);
  REQUIRE(fine.size() == 256);  // tiny config fine size

  co.out = tmp / "outB";
  cmd_complete(co);
  REQUIRE(slurp(fs::path(tmp / "outA") / "completed.lpc") ==
          slurp(fs::path(tmp / "outB") / "completed.lpc"));

  // PLY re-imports to the identical cloud
  auto from_ply = load_ply((fs::path(tmp / "outA") / "completed.ply").string());
  auto from_lpc = load_lpc1((fs::path(tmp / "outA") / "completed.lpc").string());
  REQUIRE(from_ply.points == from_lpc.points);
  REQUIRE(from_ply.labels == from_lpc.labels);

  // reproducible from the run manifest
  CompleteOptions again = complete_from_kv(KeyValues::from_file(tmp / "outA/run_manifest.txt"));
  again.out = tmp / "outC";
  cmd_complete(again);
  REQUIRE(slurp(fs::path(tmp / "outA") / "completed.lpc") ==
          slurp(fs::path(tmp / "outC") / "completed.lpc"));
}

TEST_CASE("evaluate writes per-level reports with six class rows") {
  TempTree tmp("eval");
  cmd_generate(tiny_generate(tmp / "train", 41));
  cmd_generate(tiny_generate(tmp / "val", 42));
  TrainResult trained = cmd_train(tiny_train(tmp / "train", tmp / "val", tmp / "run"));

  EvaluateOptions ev;
  ev.checkpoint = trained.checkpoint_path;
  ev.data_dir = tmp / "val";
  ev.out = tmp / "evalA";
  ev.threads = 2;
  auto by_level = cmd_evaluate(ev);
  REQUIRE(!by_level.empty());
  for (const auto& [level, s] : by_level) {
    REQUIRE(s.n > 0);
    const std::string csv = slurp(fs::path(tmp / "evalA") / ("report_" + level + ".csv"));
    for (std::size_t c = 0; c < kNumClasses; ++c)
      REQUIRE(csv.find(std::string(class_name(c)) + ",cd_mm,") != std::string::npos);
  }
  REQUIRE(fs::exists(fs::path(tmp / "evalA") / "summary.json"));

  // reproducible from the run manifest
  EvaluateOptions again = evaluate_from_kv(KeyValues::from_file(tmp / "evalA/run_manifest.txt"));
  again.out = tmp / "evalB";
  cmd_evaluate(again);
  for (const auto& [level, s] : by_level)
    REQUIRE(slurp(fs::path(tmp / "evalA") / ("report_" + level + ".csv")) ==
            slurp(fs::path(tmp / "evalB") / ("report_" + level + ".csv")));
  REQUIRE(slurp(fs::path(tmp / "evalA") / "summary.json") ==
          slurp(fs::path(tmp / "evalB") / "summary.json"));
}

#ifdef CARDIO_CLI_PATH
TEST_CASE("cli binary exit codes") {
  TempTree tmp("exit");
  const std::string bin = CARDIO_CLI_PATH;
  const std::string good = bin + " generate --out " + (tmp / "d") +
                           " --n 2 --levels none --sparse 64 --dense 128 > /dev/null 2>&1";
  REQUIRE(std::system(good.c_str()) == 0);
  const std::string bad =
      bin + " generate --out /proc/cardio_nope_cli/d --n 2 --levels none > /dev/null 2>&1";
  REQUIRE(std::system(bad.c_str()) != 0);
  const std::string unknown_level =
      bin + " generate --out " + (tmp / "e") + " --n 2 --levels bogus > /dev/null 2>&1";
  REQUIRE(std::system(unknown_level.c_str()) != 0);
}
#endif
