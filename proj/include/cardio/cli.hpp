#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "cardio/acquisition.hpp"
#include "cardio/checkpoint.hpp"
#include "cardio/config.hpp"
#include "cardio/metrics.hpp"
#include "cardio/network.hpp"
#include "cardio/phantom.hpp"
#include "cardio/trainer.hpp"

namespace cardio {

// Command implementations behind the CLI. Every command resolves its full
// configuration, writes the outputs under its --out directory, and echoes
// the resolved configuration into <out>/run_manifest.txt; feeding that
// manifest back through --config reproduces the run byte for byte.

namespace clidetail {

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
  os << text;
  if (!os) throw std::runtime_error("write to '" + path + "' failed");
}

inline std::string fmt(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline ModelConfig model_from_kv(const KeyValues& kv, const ModelConfig& base) {
  ModelConfig m = base;
  m.feature_width = kv.u64("model.c", m.feature_width);
  m.input_points = kv.u64("model.input", m.input_points);
  m.coarse_points = kv.u64("model.coarse", m.coarse_points);
  m.up1 = kv.u64("model.up1", m.up1);
  m.up2 = kv.u64("model.up2", m.up2);
  m.k_neighbors = kv.u64("model.k", m.k_neighbors);
  m.depth = kv.u64("model.depth", m.depth);
  m.heads = kv.u64("model.heads", m.heads);
  m.alpha = kv.f64("model.alpha", m.alpha);
  m.jitter_sigma = kv.f64("model.jitter", m.jitter_sigma);
  m.coord_scale = kv.f64("model.coord_scale", m.coord_scale);
  return m;
}

inline LabeledPointCloud fit_cloud(const LabeledPointCloud& cloud, std::size_t n,
                                   std::uint64_t seed) {
  if (cloud.size() == n) return cloud;
  Rng rng(mix64(seed ^ 0xc11f17ull));
  return resample(cloud, n, rng);
}

}  // namespace clidetail

// ---------------------------------------------------------------------------
// generate
// ---------------------------------------------------------------------------

struct GenerateOptions {
  std::string out;
  std::size_t n = 200;
  std::vector<std::string> levels = {"mixed"};
  std::uint64_t seed = 1;
  std::uint64_t model_seed = 7;
  std::size_t sparse_points = 7500;
  std::size_t dense_points = 16384;
  std::size_t threads = 1;
};

inline std::string serialize(const GenerateOptions& o) {
  std::ostringstream os;
  os << "command = generate\n";
  os << "n = " << o.n << "\n";
  os << "seed = " << o.seed << "\n";
  os << "model_seed = " << o.model_seed << "\n";
  os << "levels = ";
  for (std::size_t i = 0; i < o.levels.size(); ++i) os << (i ? "," : "") << o.levels[i];
  os << "\n";
  os << "sparse_points = " << o.sparse_points << "\n";
  os << "dense_points = " << o.dense_points << "\n";
  os << "threads = " << o.threads << "\n";
  return os.str();
}

inline GenerateOptions generate_from_kv(const KeyValues& kv, GenerateOptions o = {}) {
  o.n = kv.u64("n", o.n);
  o.seed = kv.u64("seed", o.seed);
  o.model_seed = kv.u64("model_seed", o.model_seed);
  if (kv.has("levels")) o.levels = split_csv(kv.str("levels", ""));
  o.sparse_points = kv.u64("sparse_points", o.sparse_points);
  o.dense_points = kv.u64("dense_points", o.dense_points);
  o.threads = kv.u64("threads", o.threads);
  return o;
}

inline std::vector<std::string> expand_levels(const std::vector<std::string>& levels) {
  std::vector<std::string> out;
  for (const auto& l : levels) {
    if (l == "mixed") {
      for (const auto& lvl : misalignment_levels()) out.push_back(lvl.name);
    } else {
      level_by_name(l);  // validate
      out.push_back(l);
    }
  }
  return out;
}

inline Manifest cmd_generate(const GenerateOptions& opts) {
  if (opts.out.empty()) throw std::invalid_argument("generate: --out is required");
  const ShapeModel model = build_default_model(opts.model_seed);
  const Manifest manifest =
      generate_split(model, opts.model_seed, opts.n, expand_levels(opts.levels), opts.out,
                     opts.seed, opts.sparse_points, opts.dense_points, opts.threads);
  clidetail::write_text((std::filesystem::path(opts.out) / "run_manifest.txt").string(),
                        serialize(opts));
  return manifest;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainOptions {
  TrainConfig config;
  std::string out;
  std::string resume;

  TrainOptions() {
    // Desk-scale defaults; the full-scale sizes remain configurable.
    config.model.feature_width = 64;
    config.model.input_points = 512;
    config.model.coarse_points = 128;  // mid 256, fine 2048
    config.model.k_neighbors = 16;
    config.epochs = 50;
    config.batch = 8;
    config.warmup_epochs = 5.0;
    config.base_lr = 4e-4;  // desk scale; full-scale protocol uses 2e-4
  }
};

inline TrainOptions train_from_kv(const KeyValues& kv, TrainOptions o = {}) {
  o.config.model = clidetail::model_from_kv(kv, o.config.model);
  o.config.train_dir = kv.str("train_dir", o.config.train_dir);
  o.config.val_dir = kv.str("val_dir", o.config.val_dir);
  o.config.epochs = kv.u64("epochs", o.config.epochs);
  o.config.schedule_epochs = kv.u64("schedule_epochs", o.config.schedule_epochs);
  o.config.batch = kv.u64("batch", o.config.batch);
  o.config.seed = kv.u64("seed", o.config.seed);
  o.config.threads = kv.u64("threads", o.config.threads);
  o.config.max_train = kv.u64("max_train", o.config.max_train);
  o.config.max_val = kv.u64("max_val", o.config.max_val);
  o.config.base_lr = kv.f64("base_lr", o.config.base_lr);
  o.config.min_lr = kv.f64("min_lr", o.config.min_lr);
  o.config.warmup_epochs = kv.f64("warmup_epochs", o.config.warmup_epochs);
  o.config.weight_decay = kv.f64("weight_decay", o.config.weight_decay);
  if (kv.has("stage_mask")) {
    const std::string mask = kv.str("stage_mask", "111");
    if (mask.size() != 3) throw std::invalid_argument("stage_mask must be three 0/1 digits");
    for (int s = 0; s < 3; ++s) o.config.stage_mask[s] = mask[s] == '1';
  }
  return o;
}

inline TrainResult cmd_train(const TrainOptions& opts) {
  if (opts.out.empty()) throw std::invalid_argument("train: --out is required");
  if (opts.config.train_dir.empty() || opts.config.val_dir.empty())
    throw std::invalid_argument("train: train_dir and val_dir are required");
  std::filesystem::create_directories(opts.out);
  clidetail::write_text((std::filesystem::path(opts.out) / "run_manifest.txt").string(),
                        opts.config.serialize());
  TrainResult result = train(opts.config, opts.out, opts.resume);
  if (result.aborted_non_finite)
    throw std::runtime_error("train: aborted (" + result.abort_message +
                             "); last good checkpoint kept at " + result.last_checkpoint_path);
  return result;
}

// ---------------------------------------------------------------------------
// complete
// ---------------------------------------------------------------------------

struct CompleteOptions {
  std::string checkpoint;
  std::string input;
  std::string out;
  bool ply = false;
  std::uint64_t seed = 1;
};

inline std::string serialize(const CompleteOptions& o) {
  std::ostringstream os;
  os << "command = complete\n";
  os << "checkpoint = " << o.checkpoint << "\n";
  os << "input = " << o.input << "\n";
  os << "seed = " << o.seed << "\n";
  os << "ply = " << (o.ply ? 1 : 0) << "\n";
  return os.str();
}

inline CompleteOptions complete_from_kv(const KeyValues& kv, CompleteOptions o = {}) {
  o.checkpoint = kv.str("checkpoint", o.checkpoint);
  o.input = kv.str("input", o.input);
  o.seed = kv.u64("seed", o.seed);
  o.ply = kv.u64("ply", o.ply ? 1 : 0) != 0;
  return o;
}

inline LabeledPointCloud cmd_complete(const CompleteOptions& opts) {
  namespace fs = std::filesystem;
  if (opts.out.empty() || opts.checkpoint.empty() || opts.input.empty())
    throw std::invalid_argument("complete: --checkpoint, --input and --out are required");
  const Checkpoint ckpt = load_checkpoint(opts.checkpoint);
  const ModelConfig model =
      clidetail::model_from_kv(KeyValues::from_text(ckpt.config, "checkpoint"), ModelConfig{});

  const LabeledPointCloud raw = load_lpc1(opts.input);
  const LabeledPointCloud input = clidetail::fit_cloud(raw, model.input_points, opts.seed);
  const StageOutput out = forward(ckpt.params, model, input, RunMode::eval, nullptr);
  const LabeledPointCloud fine = out.fine_cloud();

  fs::create_directories(opts.out);
  save_lpc1((fs::path(opts.out) / "completed.lpc").string(), fine);
  if (opts.ply) save_ply((fs::path(opts.out) / "completed.ply").string(), fine);
  clidetail::write_text((fs::path(opts.out) / "run_manifest.txt").string(), serialize(opts));
  return fine;
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

struct EvaluateOptions {
  std::string checkpoint;
  std::string data_dir;
  std::string out;
  std::uint64_t seed = 1;
  std::size_t threads = 1;
  std::size_t max_records = 0;  // 0 = all
};

inline std::string serialize(const EvaluateOptions& o) {
  std::ostringstream os;
  os << "command = evaluate\n";
  os << "checkpoint = " << o.checkpoint << "\n";
  os << "data_dir = " << o.data_dir << "\n";
  os << "seed = " << o.seed << "\n";
  os << "threads = " << o.threads << "\n";
  os << "max_records = " << o.max_records << "\n";
  return os.str();
}

inline EvaluateOptions evaluate_from_kv(const KeyValues& kv, EvaluateOptions o = {}) {
  o.checkpoint = kv.str("checkpoint", o.checkpoint);
  o.data_dir = kv.str("data_dir", o.data_dir);
  o.seed = kv.u64("seed", o.seed);
  o.threads = kv.u64("threads", o.threads);
  o.max_records = kv.u64("max_records", o.max_records);
  return o;
}

struct LevelSummary {
  std::size_t n = 0;
  double cd = 0, hd = 0, ssd = 0, sa_cd = 0;
  std::map<std::size_t, std::pair<ClassMetrics, std::size_t>> per_class;  // sums + counts
  std::map<std::string, std::pair<double, std::size_t>> volumes;          // sums + counts
};

inline std::map<std::string, LevelSummary> cmd_evaluate(const EvaluateOptions& opts) {
  namespace fs = std::filesystem;
  if (opts.out.empty() || opts.checkpoint.empty() || opts.data_dir.empty())
    throw std::invalid_argument("evaluate: --checkpoint, --data and --out are required");
  const Checkpoint ckpt = load_checkpoint(opts.checkpoint);
  const ModelConfig model =
      clidetail::model_from_kv(KeyValues::from_text(ckpt.config, "checkpoint"), ModelConfig{});

  const Manifest manifest = load_manifest((fs::path(opts.data_dir) / "manifest.txt").string());
  const std::size_t n_records = opts.max_records == 0
                                    ? manifest.records.size()
                                    : std::min(opts.max_records, manifest.records.size());

  std::vector<MetricReport> reports(n_records);
  std::vector<std::string> levels(n_records);
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::mutex mutex;
  std::string error;
  auto worker = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n_records || failed.load()) return;
      try {
        const auto& entry = manifest.records[i];
        auto [sparse, dense] = load_record((fs::path(opts.data_dir) / entry.path).string());
        const LabeledPointCloud input =
            clidetail::fit_cloud(sparse, model.input_points, mix64(opts.seed) + i);
        const LabeledPointCloud gt =
            clidetail::fit_cloud(dense, model.fine_points(), mix64(opts.seed ^ 1) + i);
        const StageOutput out = forward(ckpt.params, model, input, RunMode::eval, nullptr);
        reports[i] = evaluate_pair(out.fine_cloud(), gt);
        levels[i] = entry.level;
      } catch (const std::exception& e) {
        std::lock_guard<std::mutex> lock(mutex);
        failed.store(true);
        if (error.empty()) error = e.what();
      }
    }
  };
  if (opts.threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < opts.threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failed.load()) throw std::runtime_error("evaluate: " + error);

  std::map<std::string, LevelSummary> by_level;
  for (std::size_t i = 0; i < n_records; ++i) {
    LevelSummary& s = by_level[levels[i]];
    ++s.n;
    s.cd += reports[i].cd_mm;
    s.hd += reports[i].hd_mm;
    s.ssd += reports[i].ssd_mm;
    s.sa_cd += reports[i].sa_cd_mm;
    for (const auto& [c, m] : reports[i].per_class) {
      auto& [sums, count] = s.per_class[c];
      sums.cd += m.cd;
      sums.hd += m.hd;
      sums.ssd += m.ssd;
      ++count;
    }
    for (const auto& [name, v] : reports[i].volumes_ml) {
      auto& [sum, count] = s.volumes[name];
      sum += v;
      ++count;
    }
  }

  fs::create_directories(opts.out);
  nlohmann::json summary;
  for (auto& [level, s] : by_level) {
    const double n = static_cast<double>(s.n);
    s.cd /= n;
    s.hd /= n;
    s.ssd /= n;
    s.sa_cd /= n;

    std::ostringstream csv;
    char line[128];
    auto row = [&](const std::string& scope, const char* metric, double value) {
      std::snprintf(line, sizeof(line), "%s,%s,%.9g\n", scope.c_str(), metric, value);
      csv << line;
    };
    row("overall", "cd_mm", s.cd);
    row("overall", "hd_mm", s.hd);
    row("overall", "ssd_mm", s.ssd);
    row("overall", "sa_cd_mm", s.sa_cd);
    for (auto& [c, entry] : s.per_class) {
      auto& [sums, count] = entry;
      row(class_name(c), "cd_mm", sums.cd / static_cast<double>(count));
      row(class_name(c), "hd_mm", sums.hd / static_cast<double>(count));
      row(class_name(c), "ssd_mm", sums.ssd / static_cast<double>(count));
    }
    for (auto& [name, entry] : s.volumes)
      row("overall", (name + "_ml").c_str(), entry.first / static_cast<double>(entry.second));
    clidetail::write_text((fs::path(opts.out) / ("report_" + level + ".csv")).string(), csv.str());

    summary[level] = {{"n", s.n}, {"cd_mm", s.cd},   {"hd_mm", s.hd},
                      {"ssd_mm", s.ssd},             {"sa_cd_mm", s.sa_cd}};
  }
  clidetail::write_text((fs::path(opts.out) / "summary.json").string(), summary.dump(2) + "\n");
  clidetail::write_text((fs::path(opts.out) / "run_manifest.txt").string(), serialize(opts));
  return by_level;
}

}  // namespace cardio
