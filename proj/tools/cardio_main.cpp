// cardio: multi-class cardiac point-cloud completion toolkit.
//
// Subcommands: generate | train | complete | evaluate. Every run writes a
// run_manifest.txt with its resolved configuration; pass that file back
// through --config to reproduce the run.

#include <cstdio>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "cardio/cli.hpp"

namespace {

cardio::KeyValues load_config_if(const std::string& path) {
  if (path.empty()) return {};
  return cardio::KeyValues::from_file(path);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cardio: multi-class cardiac point-cloud completion toolkit"};
  app.require_subcommand(1);

  // ---- generate ----
  auto* gen = app.add_subcommand("generate", "generate a synthetic dataset split");
  std::string gen_config, gen_out;
  cardio::GenerateOptions gen_defaults;
  std::uint64_t gen_n = gen_defaults.n, gen_seed = gen_defaults.seed,
                gen_model_seed = gen_defaults.model_seed;
  std::uint64_t gen_sparse = gen_defaults.sparse_points, gen_dense = gen_defaults.dense_points;
  std::uint64_t gen_threads = 1;
  std::string gen_levels = "mixed";
  gen->add_option("--config", gen_config, "key = value config file");
  gen->add_option("--out", gen_out, "output directory")->required();
  auto* og_n = gen->add_option("--n", gen_n, "number of records");
  auto* og_seed = gen->add_option("--seed", gen_seed, "base seed");
  auto* og_mseed = gen->add_option("--model-seed", gen_model_seed, "shape model seed");
  auto* og_levels = gen->add_option("--levels", gen_levels,
                                    "comma list of levels, or 'mixed' for all five");
  auto* og_sparse = gen->add_option("--sparse", gen_sparse, "sparse points per record");
  auto* og_dense = gen->add_option("--dense", gen_dense, "dense GT points per record");
  auto* og_threads = gen->add_option("--threads", gen_threads, "worker threads");

  // ---- train ----
  auto* tr = app.add_subcommand("train", "train a completion model");
  std::string tr_config, tr_out, tr_resume, tr_train_dir, tr_val_dir, tr_mask;
  std::uint64_t tr_epochs = 0, tr_batch = 0, tr_seed = 0, tr_threads = 0, tr_max_train = 0,
                tr_max_val = 0;
  std::uint64_t tr_c = 0, tr_input = 0, tr_coarse = 0, tr_k = 0;
  double tr_lr = 0, tr_warmup = -1;
  tr->add_option("--config", tr_config, "key = value config file");
  tr->add_option("--out", tr_out, "output directory")->required();
  tr->add_option("--resume", tr_resume, "checkpoint to resume from");
  auto* ot_train = tr->add_option("--train", tr_train_dir, "training dataset directory");
  auto* ot_val = tr->add_option("--val", tr_val_dir, "validation dataset directory");
  auto* ot_epochs = tr->add_option("--epochs", tr_epochs, "training epochs");
  auto* ot_batch = tr->add_option("--batch", tr_batch, "batch size");
  auto* ot_seed = tr->add_option("--seed", tr_seed, "training seed");
  auto* ot_threads = tr->add_option("--threads", tr_threads, "worker threads");
  auto* ot_max_train = tr->add_option("--max-train", tr_max_train, "cap on training records");
  auto* ot_max_val = tr->add_option("--max-val", tr_max_val, "cap on validation records");
  auto* ot_c = tr->add_option("--model-c", tr_c, "feature width");
  auto* ot_input = tr->add_option("--model-input", tr_input, "network input points");
  auto* ot_coarse = tr->add_option("--model-coarse", tr_coarse, "coarse points");
  auto* ot_k = tr->add_option("--model-k", tr_k, "kNN group size");
  auto* ot_lr = tr->add_option("--lr", tr_lr, "base learning rate");
  auto* ot_warmup = tr->add_option("--warmup", tr_warmup, "warmup epochs");
  auto* ot_mask = tr->add_option("--stage-mask", tr_mask, "loss stage mask, e.g. 111 or 001");

  // ---- complete ----
  auto* co = app.add_subcommand("complete", "complete a sparse cloud with a trained model");
  std::string co_config, co_out, co_ckpt, co_input;
  std::uint64_t co_seed = 1;
  bool co_ply = false;
  co->add_option("--config", co_config, "key = value config file");
  co->add_option("--out", co_out, "output directory")->required();
  auto* oc_ckpt = co->add_option("--checkpoint", co_ckpt, "trained checkpoint");
  auto* oc_input = co->add_option("--input", co_input, "input LPC1 cloud file");
  auto* oc_seed = co->add_option("--seed", co_seed, "resampling seed");
  auto* oc_ply = co->add_flag("--ply", co_ply, "also export a labeled PLY");

  // ---- evaluate ----
  auto* ev = app.add_subcommand("evaluate", "evaluate a checkpoint on a dataset split");
  std::string ev_config, ev_out, ev_ckpt, ev_data;
  std::uint64_t ev_seed = 1, ev_threads = 1, ev_max = 0;
  ev->add_option("--config", ev_config, "key = value config file");
  ev->add_option("--out", ev_out, "output directory")->required();
  auto* oe_ckpt = ev->add_option("--checkpoint", ev_ckpt, "trained checkpoint");
  auto* oe_data = ev->add_option("--data", ev_data, "dataset directory with manifest.txt");
  auto* oe_seed = ev->add_option("--seed", ev_seed, "resampling seed");
  auto* oe_threads = ev->add_option("--threads", ev_threads, "worker threads");
  auto* oe_max = ev->add_option("--max-records", ev_max, "cap on evaluated records");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      cardio::GenerateOptions opts = cardio::generate_from_kv(load_config_if(gen_config));
      opts.out = gen_out;
      if (*og_n) opts.n = gen_n;
      if (*og_seed) opts.seed = gen_seed;
      if (*og_mseed) opts.model_seed = gen_model_seed;
      if (*og_levels) opts.levels = cardio::split_csv(gen_levels);
      if (*og_sparse) opts.sparse_points = gen_sparse;
      if (*og_dense) opts.dense_points = gen_dense;
      if (*og_threads) opts.threads = gen_threads;
      const cardio::Manifest manifest = cardio::cmd_generate(opts);
      std::printf("generated %zu records under %s\n", manifest.records.size(), gen_out.c_str());
    } else if (*tr) {
      cardio::TrainOptions opts = cardio::train_from_kv(load_config_if(tr_config));
      opts.out = tr_out;
      opts.resume = tr_resume;
      if (*ot_train) opts.config.train_dir = tr_train_dir;
      if (*ot_val) opts.config.val_dir = tr_val_dir;
      if (*ot_epochs) opts.config.epochs = tr_epochs;
      if (*ot_batch) opts.config.batch = tr_batch;
      if (*ot_seed) opts.config.seed = tr_seed;
      if (*ot_threads) opts.config.threads = tr_threads;
      if (*ot_max_train) opts.config.max_train = tr_max_train;
      if (*ot_max_val) opts.config.max_val = tr_max_val;
      if (*ot_c) opts.config.model.feature_width = tr_c;
      if (*ot_input) opts.config.model.input_points = tr_input;
      if (*ot_coarse) opts.config.model.coarse_points = tr_coarse;
      if (*ot_k) opts.config.model.k_neighbors = tr_k;
      if (*ot_lr) opts.config.base_lr = tr_lr;
      if (*ot_warmup) opts.config.warmup_epochs = tr_warmup;
      if (*ot_mask) {
        if (tr_mask.size() != 3) throw std::invalid_argument("--stage-mask needs 3 digits");
        for (int s = 0; s < 3; ++s) opts.config.stage_mask[s] = tr_mask[s] == '1';
      }
      const cardio::TrainResult result = cardio::cmd_train(opts);
      std::printf("trained %zu epochs; best val fine SA-CD %.6g at epoch %zu -> %s\n",
                  result.curve.size(), result.best_val_fine, result.best_epoch,
                  result.checkpoint_path.c_str());
    } else if (*co) {
      cardio::CompleteOptions opts = cardio::complete_from_kv(load_config_if(co_config));
      opts.out = co_out;
      if (*oc_ckpt) opts.checkpoint = co_ckpt;
      if (*oc_input) opts.input = co_input;
      if (*oc_seed) opts.seed = co_seed;
      if (*oc_ply) opts.ply = co_ply;
      const cardio::LabeledPointCloud fine = cardio::cmd_complete(opts);
      std::printf("completed cloud with %zu points -> %s\n", fine.size(), co_out.c_str());
    } else if (*ev) {
      cardio::EvaluateOptions opts = cardio::evaluate_from_kv(load_config_if(ev_config));
      opts.out = ev_out;
      if (*oe_ckpt) opts.checkpoint = ev_ckpt;
      if (*oe_data) opts.data_dir = ev_data;
      if (*oe_seed) opts.seed = ev_seed;
      if (*oe_threads) opts.threads = ev_threads;
      if (*oe_max) opts.max_records = ev_max;
      const auto by_level = cardio::cmd_evaluate(opts);
      for (const auto& [level, s] : by_level)
        std::printf("%-7s n=%zu cd=%.4g hd=%.4g ssd=%.4g sa_cd=%.4g\n", level.c_str(), s.n, s.cd,
                    s.hd, s.ssd, s.sa_cd);
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
