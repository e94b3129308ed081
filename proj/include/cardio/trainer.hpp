#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "cardio/acquisition.hpp"
#include "cardio/checkpoint.hpp"
#include "cardio/cloud.hpp"
#include "cardio/metrics.hpp"
#include "cardio/network.hpp"
#include "cardio/optim.hpp"

namespace cardio {

// Training loop: data-parallel gradient accumulation across the samples of
// a batch with a fixed reduction order, AdamW with the warmup-cosine
// schedule, per-epoch validation, best-fine-SA-CD checkpointing.

struct TrainConfig {
  ModelConfig model;
  std::string train_dir;
  std::string val_dir;
  std::size_t epochs = 50;          // stop after this many epochs
  std::size_t schedule_epochs = 0;  // cosine horizon; 0 = same as epochs
  std::size_t batch = 8;
  std::uint64_t seed = 1;
  double base_lr = 2e-4;
  double min_lr = 1e-5;
  double warmup_epochs = 20.0;
  double weight_decay = 5e-4;
  std::size_t threads = 1;
  std::array<bool, 3> stage_mask = {true, true, true};
  std::size_t max_train = 0;  // 0 = every record in the manifest
  std::size_t max_val = 0;

  std::string serialize() const {
    std::ostringstream os;
    char num[48];
    auto put = [&](const char* key, double v) {
      std::snprintf(num, sizeof(num), "%.17g", v);
      os << key << " = " << num << "\n";
    };
    os << "command = train\n";
    os << "train_dir = " << train_dir << "\n";
    os << "val_dir = " << val_dir << "\n";
    os << "epochs = " << epochs << "\n";
    os << "schedule_epochs = " << schedule_epochs << "\n";
    os << "batch = " << batch << "\n";
    os << "seed = " << seed << "\n";
    os << "threads = " << threads << "\n";
    os << "max_train = " << max_train << "\n";
    os << "max_val = " << max_val << "\n";
    put("base_lr", base_lr);
    put("min_lr", min_lr);
    put("warmup_epochs", warmup_epochs);
    put("weight_decay", weight_decay);
    os << "stage_mask = " << stage_mask[0] << stage_mask[1] << stage_mask[2] << "\n";
    os << "model.c = " << model.feature_width << "\n";
    os << "model.input = " << model.input_points << "\n";
    os << "model.coarse = " << model.coarse_points << "\n";
    os << "model.up1 = " << model.up1 << "\n";
    os << "model.up2 = " << model.up2 << "\n";
    os << "model.k = " << model.k_neighbors << "\n";
    os << "model.depth = " << model.depth << "\n";
    os << "model.heads = " << model.heads << "\n";
    put("model.alpha", model.alpha);
    put("model.jitter", model.jitter_sigma);
    put("model.coord_scale", model.coord_scale);
    return os.str();
  }
};

struct LoadedDataset {
  std::vector<LabeledPointCloud> sparse;
  std::vector<LabeledPointCloud> dense;
};

inline LoadedDataset load_dataset(const std::string& dir, std::size_t limit = 0) {
  namespace fs = std::filesystem;
  const Manifest manifest = load_manifest((fs::path(dir) / "manifest.txt").string());
  LoadedDataset data;
  const std::size_t n =
      limit == 0 ? manifest.records.size() : std::min(limit, manifest.records.size());
  for (std::size_t i = 0; i < n; ++i) {
    auto [sparse, dense] = load_record((fs::path(dir) / manifest.records[i].path).string());
    data.sparse.push_back(std::move(sparse));
    data.dense.push_back(std::move(dense));
  }
  if (data.sparse.empty()) throw std::runtime_error("dataset '" + dir + "' has no records");
  return data;
}

struct EpochStats {
  std::size_t epoch = 0;
  double lr = 0;
  double train_loss = 0;
  double val_coarse = 0, val_mid = 0, val_fine = 0;
};

struct TrainResult {
  std::vector<EpochStats> curve;
  double best_val_fine = 0;
  std::size_t best_epoch = 0;
  std::string checkpoint_path;       // best validation fine SA-CD
  std::string last_checkpoint_path;  // end of the most recent finished epoch
  bool aborted_non_finite = false;
  std::string abort_message;
};

namespace traindetail {

// Samples are cut to the input size the model expects (records may carry
// more points than a desk-scale config uses).
inline LabeledPointCloud fit_to(const LabeledPointCloud& cloud, std::size_t n,
                                std::uint64_t seed) {
  if (cloud.size() == n) return cloud;
  Rng rng(mix64(seed ^ 0xf17f17ull));
  return resample(cloud, n, rng);
}

// Mean SA-CD of the three stages over a validation set, eval mode.
inline std::array<double, 3> validate(const ParamStore& params, const ModelConfig& cfg,
                                      const LoadedDataset& val, std::uint64_t seed,
                                      std::size_t dense_points, std::size_t threads) {
  std::array<double, 3> sums{0, 0, 0};
  std::mutex mutex;
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::string error;
  auto worker = [&]() {
    std::array<double, 3> local{0, 0, 0};
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= val.sparse.size() || failed.load()) break;
      try {
        const LabeledPointCloud input =
            fit_to(val.sparse[i], cfg.input_points, mix64(seed) + i);
        const LabeledPointCloud gt = fit_to(val.dense[i], dense_points, mix64(seed ^ 1) + i);
        StageOutput out = forward(params, cfg, input, RunMode::eval, nullptr);
        local[0] += sa_cd(out.p_coarse, gt);
        local[1] += sa_cd(out.mid_cloud(), gt);
        local[2] += sa_cd(out.fine_cloud(), gt);
      } catch (const std::exception& e) {
        std::lock_guard<std::mutex> lock(mutex);
        failed.store(true);
        if (error.empty()) error = e.what();
      }
    }
    std::lock_guard<std::mutex> lock(mutex);
    for (int s = 0; s < 3; ++s) sums[s] += local[s];
  };
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failed.load()) throw std::runtime_error("validation failed: " + error);
  const double n = static_cast<double>(val.sparse.size());
  return {sums[0] / n, sums[1] / n, sums[2] / n};
}

}  // namespace traindetail

// The no-learning reference: class-balanced FPS down to the coarse size,
// replicated straight up to the fine size.
inline LabeledPointCloud baseline_fine(const LabeledPointCloud& input, const ModelConfig& cfg) {
  SamplingPlan plan = adaptive_quotas(class_counts(input), cfg.alpha, cfg.coarse_points);
  LabeledPointCloud coarse = class_balanced_fps(input, plan);
  LabeledPointCloud fine;
  const std::size_t factor = cfg.up1 * cfg.up2;
  fine.points.reserve(coarse.size() * factor);
  for (std::size_t i = 0; i < coarse.size(); ++i)
    for (std::size_t r = 0; r < factor; ++r) fine.push_back(coarse.points[i], coarse.labels[i]);
  return fine;
}

inline TrainResult train(const TrainConfig& cfg, const std::string& out_dir,
                         const std::string& resume_path = "") {
  namespace fs = std::filesystem;
  cfg.model.validate();
  if (cfg.batch == 0 || cfg.epochs == 0)
    throw std::invalid_argument("train: batch and epochs must be positive");
  fs::create_directories(out_dir);

  const LoadedDataset train_data = load_dataset(cfg.train_dir, cfg.max_train);
  const LoadedDataset val_data = load_dataset(cfg.val_dir, cfg.max_val);
  const std::size_t n_train = train_data.sparse.size();
  const std::size_t dense_points = cfg.model.fine_points();
  const std::size_t steps_per_epoch = (n_train + cfg.batch - 1) / cfg.batch;

  ParamStore params;
  OptimState optim;
  std::size_t start_epoch = 0;
  if (resume_path.empty()) {
    params = init_params(cfg.model, cfg.seed);
    const std::size_t horizon = cfg.schedule_epochs == 0 ? cfg.epochs : cfg.schedule_epochs;
    optim.schedule = {cfg.base_lr, cfg.min_lr, cfg.warmup_epochs, static_cast<double>(horizon)};
    optim.weight_decay = cfg.weight_decay;
    optim.steps_per_epoch = steps_per_epoch;
  } else {
    Checkpoint ckpt = load_checkpoint(resume_path);
    params = std::move(ckpt.params);
    optim = std::move(ckpt.optim);
    if (optim.steps_per_epoch != steps_per_epoch)
      throw std::runtime_error("train: resume dataset size does not match the checkpoint");
    start_epoch = static_cast<std::size_t>(optim.step / steps_per_epoch);
  }

  const std::string ckpt_path = (fs::path(out_dir) / "best.ckpt").string();
  const std::string last_path = (fs::path(out_dir) / "last.ckpt").string();
  const std::string curve_path = (fs::path(out_dir) / "loss_curve.csv").string();
  std::ofstream curve(curve_path, resume_path.empty() ? std::ios::trunc : std::ios::app);
  if (!curve) throw std::runtime_error("train: cannot open '" + curve_path + "'");
  if (resume_path.empty())
    curve << "epoch,lr,train_loss,val_sacd_coarse,val_sacd_mid,val_sacd_fine\n";

  TrainResult result;
  result.checkpoint_path = ckpt_path;
  result.last_checkpoint_path = last_path;
  result.best_val_fine = std::numeric_limits<double>::infinity();

  auto snapshot = [&](const std::string& path) {
    Checkpoint ckpt;
    ckpt.config = cfg.serialize();
    ckpt.optim = optim;
    for (const auto& [name, t] : params) ckpt.params.add(name, t);
    save_checkpoint(ckpt, path);
  };

  std::vector<std::size_t> order(n_train);

  for (std::size_t epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
    // stateless epoch permutation, so a resumed run shuffles identically
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng = Rng::child(cfg.seed, 0xe90c ^ epoch);
    shuffle_rng.shuffle(order);

    double epoch_loss = 0.0;
    std::size_t seen = 0;
    bool aborted = false;
    for (std::size_t step = 0; step < steps_per_epoch && !aborted; ++step) {
      const std::size_t begin = step * cfg.batch;
      const std::size_t end = std::min(begin + cfg.batch, n_train);
      const std::size_t count = end - begin;

      std::vector<Gradients> sample_grads(count);
      std::vector<double> sample_loss(count, 0.0);
      std::vector<std::string> sample_error(count);
      std::atomic<std::size_t> cursor{0};

      auto worker = [&]() {
        for (;;) {
          const std::size_t s = cursor.fetch_add(1);
          if (s >= count) return;
          try {
            const std::size_t idx = order[begin + s];
            const std::uint64_t sample_tag =
                mix64(cfg.seed ^ (epoch * 1315423911ull) ^ (step * 2654435761ull) ^ idx);
            const LabeledPointCloud input =
                traindetail::fit_to(train_data.sparse[idx], cfg.model.input_points, sample_tag);
            const LabeledPointCloud gt =
                traindetail::fit_to(train_data.dense[idx], dense_points, sample_tag ^ 0xd1ceull);
            Rng jitter_rng(mix64(sample_tag ^ 0x117e4ull));
            StageOutput out = forward(params, cfg.model, input, RunMode::train, &jitter_rng);
            std::vector<StagePrediction> stages = {{out.coarse_coords, out.coarse_labels},
                                                   {out.mid_coords, out.mid_labels},
                                                   {out.fine_coords, out.fine_labels}};
            Tensor loss = total_loss(stages, gt, cfg.stage_mask);
            sample_loss[s] = loss.value();
            sample_grads[s] = backward(loss);
          } catch (const std::exception& e) {
            sample_error[s] = e.what();
          }
        }
      };
      if (cfg.threads <= 1) {
        worker();
      } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < std::min(cfg.threads, count); ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
      }

      for (std::size_t s = 0; s < count; ++s)
        if (!sample_error[s].empty()) {
          // non-finite forward/loss: abort, keep the last good checkpoint
          result.aborted_non_finite = true;
          result.abort_message = sample_error[s];
          aborted = true;
          break;
        }
      if (aborted) break;

      // deterministic reduction: accumulate in sample order
      Gradients total;
      for (std::size_t s = 0; s < count; ++s) {
        for (auto& [node, grad] : sample_grads[s].by_leaf) {
          auto [slot, inserted] = total.by_leaf.try_emplace(node);
          if (inserted) slot->second.assign(grad.size(), 0.0);
          for (std::size_t i = 0; i < grad.size(); ++i) slot->second[i] += grad[i];
        }
        epoch_loss += sample_loss[s];
        ++seen;
      }
      const double inv = 1.0 / static_cast<double>(count);
      for (auto& [node, grad] : total.by_leaf)
        for (double& g : grad) g *= inv;
      optimizer_step(optim, params, total);
    }
    if (aborted) break;

    const auto val = traindetail::validate(params, cfg.model, val_data, cfg.seed, dense_points,
                                           cfg.threads);
    EpochStats stats;
    stats.epoch = epoch + 1;
    stats.lr = optim.current_lr();
    stats.train_loss = epoch_loss / static_cast<double>(std::max<std::size_t>(seen, 1));
    stats.val_coarse = val[0];
    stats.val_mid = val[1];
    stats.val_fine = val[2];
    result.curve.push_back(stats);

    char line[192];
    std::snprintf(line, sizeof(line), "%zu,%.9g,%.9g,%.9g,%.9g,%.9g\n", stats.epoch, stats.lr,
                  stats.train_loss, stats.val_coarse, stats.val_mid, stats.val_fine);
    curve << line;
    curve.flush();

    snapshot(last_path);
    if (val[2] < result.best_val_fine) {
      result.best_val_fine = val[2];
      result.best_epoch = epoch + 1;
      snapshot(ckpt_path);
    }
  }
  return result;
}

}  // namespace cardio
