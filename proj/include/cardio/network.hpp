#pragma once

#include <array>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "cardio/cloud.hpp"
#include "cardio/geometry.hpp"
#include "cardio/kdtree.hpp"
#include "cardio/optim.hpp"
#include "cardio/rng.hpp"
#include "cardio/tensor.hpp"

namespace cardio {

// Dual-branch completion network. A global branch (class-agnostic FPS +
// jitter) and a substructure branch (class-balanced adaptive FPS) each
// produce half of a labeled coarse cloud plus per-keypoint features; two
// refinement stages then upsample and predict coordinate offsets under
// cross-attention guidance from those features. Labels ride along as
// discrete conditioning: refined points inherit their parent's label.

struct ModelConfig {
  std::size_t feature_width = 128;  // C
  std::size_t input_points = 7500;  // N_s
  std::size_t coarse_points = 1024; // N_c; each branch contributes N_c/2
  std::size_t up1 = 2;              // coarse -> mid
  std::size_t up2 = 8;              // mid -> fine
  std::size_t k_neighbors = 16;
  std::size_t depth = 2;            // encoder transformer layers per branch
  std::size_t heads = 4;
  double alpha = 0.5;               // class-balance coefficient
  double jitter_sigma = 0.5;        // mm, training only
  double coord_scale = 0.02;        // mm -> feature conditioning scale

  std::size_t half_coarse() const { return coarse_points / 2; }
  std::size_t mid_points() const { return coarse_points * up1; }
  std::size_t fine_points() const { return mid_points() * up2; }

  void validate() const {
    if (coarse_points == 0 || coarse_points % 2 != 0)
      throw std::invalid_argument("config: coarse_points must be even and positive");
    if (feature_width == 0 || heads == 0 || feature_width % heads != 0)
      throw std::invalid_argument("config: heads must divide feature_width");
    if (up1 == 0 || up2 == 0) throw std::invalid_argument("config: upsampling factors must be > 0");
    if (k_neighbors == 0) throw std::invalid_argument("config: k_neighbors must be > 0");
    if (input_points < half_coarse())
      throw std::invalid_argument("config: input_points below half the coarse size");
  }
};

enum class RunMode { train, eval };

struct BranchOutput {
  LabeledPointCloud keypoints;  // N_c/2, labels from the input
  Tensor features;              // [N_c/2, C]
};

struct StageOutput {
  LabeledPointCloud p_glo, p_sub, p_coarse;
  Tensor f_glo, f_sub;
  Tensor coarse_coords, mid_coords, fine_coords;  // [*,3]; coarse is constant
  std::vector<std::uint8_t> coarse_labels, mid_labels, fine_labels;

  LabeledPointCloud cloud_at(const Tensor& coords, const std::vector<std::uint8_t>& labels) const {
    LabeledPointCloud out;
    out.points.resize(labels.size());
    out.labels = labels;
    for (std::size_t i = 0; i < labels.size(); ++i)
      out.points[i] = {coords.at(i, 0), coords.at(i, 1), coords.at(i, 2)};
    return out;
  }
  LabeledPointCloud mid_cloud() const { return cloud_at(mid_coords, mid_labels); }
  LabeledPointCloud fine_cloud() const { return cloud_at(fine_coords, fine_labels); }
};

// ---------------------------------------------------------------------------
// parameters
// ---------------------------------------------------------------------------

namespace netdetail {

constexpr std::size_t kPointFeatures = 3 + kNumClasses;       // scaled xyz + one-hot
constexpr std::size_t kGroupFeatures = 3 + kPointFeatures;    // scaled offset + point

inline void add_linear(ParamStore& params, Rng& rng, const std::string& name, std::size_t fan_in,
                       std::size_t fan_out, bool zero = false) {
  std::vector<double> w(fan_in * fan_out, 0.0);
  if (!zero) {
    const double std = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (double& v : w) v = rng.gaussian(0.0, std);
  }
  params.add(name + ".w", Tensor::param({fan_in, fan_out}, std::move(w)));
  params.add(name + ".b", Tensor::param({fan_out}, std::vector<double>(fan_out, 0.0)));
}

inline void add_attention(ParamStore& params, Rng& rng, const std::string& prefix,
                          const ModelConfig& cfg) {
  const std::size_t dh = cfg.feature_width / cfg.heads;
  const double std = std::sqrt(1.0 / static_cast<double>(cfg.feature_width));
  for (std::size_t h = 0; h < cfg.heads; ++h)
    for (const char* role : {"q", "k", "v"}) {
      std::vector<double> w(cfg.feature_width * dh);
      for (double& v : w) v = rng.gaussian(0.0, std);
      params.add(prefix + "." + role + std::to_string(h) + ".w",
                 Tensor::param({cfg.feature_width, dh}, std::move(w)));
    }
  add_linear(params, rng, prefix + ".o", cfg.feature_width, cfg.feature_width);
  add_linear(params, rng, prefix + ".ff1", cfg.feature_width, 2 * cfg.feature_width);
  add_linear(params, rng, prefix + ".ff2", 2 * cfg.feature_width, cfg.feature_width);
}

inline void add_branch(ParamStore& params, Rng& rng, const std::string& prefix,
                       const ModelConfig& cfg) {
  add_linear(params, rng, prefix + ".mlp1", kGroupFeatures, cfg.feature_width);
  add_linear(params, rng, prefix + ".mlp2", cfg.feature_width, cfg.feature_width);
  add_linear(params, rng, prefix + ".pos", kPointFeatures, cfg.feature_width);
  for (std::size_t d = 0; d < cfg.depth; ++d)
    add_attention(params, rng, prefix + ".t" + std::to_string(d), cfg);
}

}  // namespace netdetail

inline ParamStore init_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ParamStore params;
  Rng rng(mix64(seed ^ 0x11e7f0a3ull));
  const std::size_t c = cfg.feature_width;
  netdetail::add_branch(params, rng, "gsa", cfg);
  netdetail::add_branch(params, rng, "ssa", cfg);

  netdetail::add_linear(params, rng, "r1.embed1", netdetail::kPointFeatures, c);
  netdetail::add_linear(params, rng, "r1.embed2", c, c);
  netdetail::add_linear(params, rng, "r1.expand_g1", c, c);
  netdetail::add_linear(params, rng, "r1.expand_g2", c, c);
  netdetail::add_linear(params, rng, "r1.expand_s1", c, c);
  netdetail::add_linear(params, rng, "r1.expand_s2", c, c);
  netdetail::add_attention(params, rng, "r1.maa_g", cfg);
  netdetail::add_attention(params, rng, "r1.maa_s", cfg);
  netdetail::add_linear(params, rng, "r1.off1", 2 * c, c);
  netdetail::add_linear(params, rng, "r1.off2", c, cfg.up1 * 3, /*zero=*/true);

  netdetail::add_linear(params, rng, "r2.embed1", netdetail::kPointFeatures, c);
  netdetail::add_linear(params, rng, "r2.embed2", c, c);
  netdetail::add_attention(params, rng, "r2.att", cfg);
  netdetail::add_linear(params, rng, "r2.off1", c, c);
  netdetail::add_linear(params, rng, "r2.off2", c, cfg.up2 * 3, /*zero=*/true);
  return params;
}

// ---------------------------------------------------------------------------
// building blocks
// ---------------------------------------------------------------------------

namespace netdetail {

inline std::vector<double> onehot_rows(const std::vector<std::uint8_t>& labels) {
  std::vector<double> rows(labels.size() * kNumClasses, 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) rows[i * kNumClasses + labels[i]] = 1.0;
  return rows;
}

// Constant [N, 9] embedding of a cloud: scaled coords + one-hot label.
inline Tensor embed_cloud(const LabeledPointCloud& cloud, double scale) {
  std::vector<double> rows(cloud.size() * kPointFeatures, 0.0);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    rows[i * kPointFeatures + 0] = cloud.points[i].x * scale;
    rows[i * kPointFeatures + 1] = cloud.points[i].y * scale;
    rows[i * kPointFeatures + 2] = cloud.points[i].z * scale;
    rows[i * kPointFeatures + 3 + cloud.labels[i]] = 1.0;
  }
  return Tensor::from({cloud.size(), kPointFeatures}, std::move(rows));
}

inline Tensor linear(const ParamStore& params, const std::string& name, const Tensor& x) {
  return add(matmul(x, params.get(name + ".w")), params.get(name + ".b"));
}

inline Tensor mlp2(const ParamStore& params, const std::string& prefix, const Tensor& x) {
  return linear(params, prefix + "2", relu(linear(params, prefix + "1", x)));
}

// Pre-norm multi-head attention + feed-forward. Self-attention when
// queries and keys/values come from the same tensor.
inline Tensor attention_block(const ParamStore& params, const std::string& prefix,
                              const ModelConfig& cfg, const Tensor& query_src,
                              const Tensor& kv_src) {
  const std::size_t dh = cfg.feature_width / cfg.heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  const Tensor qn = layer_norm(query_src);
  const Tensor kn = layer_norm(kv_src);
  std::vector<Tensor> heads;
  for (std::size_t h = 0; h < cfg.heads; ++h) {
    const std::string hs = std::to_string(h);
    Tensor q = matmul(qn, params.get(prefix + ".q" + hs + ".w"));
    Tensor k = matmul(kn, params.get(prefix + ".k" + hs + ".w"));
    Tensor v = matmul(kn, params.get(prefix + ".v" + hs + ".w"));
    Tensor attn = softmax(scale(matmul(q, transpose(k)), inv_sqrt), 1);
    heads.push_back(matmul(attn, v));
  }
  Tensor mixed = linear(params, prefix + ".o", concat(heads, 1));
  Tensor x = add(query_src, mixed);
  Tensor ff = linear(params, prefix + ".ff2",
                     relu(linear(params, prefix + ".ff1", layer_norm(x))));
  return add(x, ff);
}

inline Tensor encoder_stack(const ParamStore& params, const std::string& prefix,
                            const ModelConfig& cfg, Tensor x) {
  for (std::size_t d = 0; d < cfg.depth; ++d)
    x = attention_block(params, prefix + ".t" + std::to_string(d), cfg, x, x);
  return x;
}

// Shared grouping + feature path of both encoder blocks: kNN groups around
// the keypoints, per-neighbor [scaled offset, scaled point, one-hot] rows,
// point-wise MLP, per-group max pool, learned positional term, transformer.
inline Tensor branch_features(const ParamStore& params, const std::string& prefix,
                              const ModelConfig& cfg, const LabeledPointCloud& cloud,
                              const LabeledPointCloud& keypoints) {
  const GroupedNeighborhood groups = knn_group(cloud, keypoints, cfg.k_neighbors);
  const std::size_t n = keypoints.size(), k = cfg.k_neighbors;
  std::vector<double> rows(n * k * kGroupFeatures, 0.0);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t i = 0; i < k; ++i) {
      double* r = rows.data() + (j * k + i) * kGroupFeatures;
      const Vec3& off = groups.offset(j, i);
      const std::size_t src = groups.neighbor(j, i);
      r[0] = off.x * cfg.coord_scale;
      r[1] = off.y * cfg.coord_scale;
      r[2] = off.z * cfg.coord_scale;
      r[3] = cloud.points[src].x * cfg.coord_scale;
      r[4] = cloud.points[src].y * cfg.coord_scale;
      r[5] = cloud.points[src].z * cfg.coord_scale;
      r[6 + cloud.labels[src]] = 1.0;
    }
  Tensor g = Tensor::from({n * k, kGroupFeatures}, std::move(rows));
  Tensor h = mlp2(params, prefix + ".mlp", g);
  Tensor pooled = max_over_axis(reshape(h, {n, k, cfg.feature_width}), 1);
  Tensor pos = linear(params, prefix + ".pos", embed_cloud(keypoints, cfg.coord_scale));
  return encoder_stack(params, prefix, cfg, add(pooled, pos));
}

// Nearest keypoint index for every coarse point (pure geometry).
inline std::vector<std::size_t> nearest_parent(const LabeledPointCloud& coarse,
                                               const LabeledPointCloud& keypoints) {
  KdTree tree(keypoints.points);
  std::vector<std::size_t> idx(coarse.size());
  for (std::size_t i = 0; i < coarse.size(); ++i)
    idx[i] = tree.nearest(coarse.points[i]).index;
  return idx;
}

}  // namespace netdetail

// ---------------------------------------------------------------------------
// encoder branches
// ---------------------------------------------------------------------------

// Global branch: class-agnostic FPS (+ jitter in training), kNN grouping,
// per-group encoder, transformer over the pooled group features.
inline BranchOutput encode_global(const ParamStore& params, const ModelConfig& cfg,
                                  const LabeledPointCloud& cloud, RunMode mode, Rng* rng) {
  if (cloud.size() < cfg.half_coarse())
    throw std::invalid_argument("encode_global: input has " + std::to_string(cloud.size()) +
                                " points, need at least " + std::to_string(cfg.half_coarse()));
  const auto picks = fps_auto(cloud, cfg.half_coarse());
  LabeledPointCloud keypoints;
  for (std::size_t i : picks) keypoints.push_back(cloud.points[i], cloud.labels[i]);
  if (mode == RunMode::train) {
    if (!rng) throw std::invalid_argument("encode_global: training mode needs an rng");
    keypoints = jitter(keypoints, cfg.jitter_sigma, *rng);
  }
  return {keypoints, netdetail::branch_features(params, "gsa", cfg, cloud, keypoints)};
}

// Substructure branch: class-balanced adaptive FPS (each input class keeps
// at least one keypoint), kNN grouping over the full cloud, same feature
// path with separate weights. No jitter here.
inline BranchOutput encode_substructure(const ParamStore& params, const ModelConfig& cfg,
                                        const LabeledPointCloud& cloud) {
  if (cloud.size() < cfg.half_coarse())
    throw std::invalid_argument("encode_substructure: input has " + std::to_string(cloud.size()) +
                                " points, need at least " + std::to_string(cfg.half_coarse()));
  SamplingPlan plan = adaptive_quotas(class_counts(cloud), cfg.alpha, cfg.half_coarse());
  const auto counts = class_counts(cloud);
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    while (counts[c] > 0 && plan.quotas[c] == 0) {
      std::size_t donor = 0;
      for (std::size_t d = 1; d < kNumClasses; ++d)
        if (plan.quotas[d] > plan.quotas[donor]) donor = d;
      if (plan.quotas[donor] <= 1) break;
      --plan.quotas[donor];
      ++plan.quotas[c];
    }
  }
  LabeledPointCloud keypoints = class_balanced_fps(cloud, plan);
  return {keypoints, netdetail::branch_features(params, "ssa", cfg, cloud, keypoints)};
}

// Concatenation along the point dimension: global block then substructure
// block.
inline LabeledPointCloud fuse_coarse(const LabeledPointCloud& glo, const LabeledPointCloud& sub) {
  if (glo.size() != sub.size())
    throw std::invalid_argument("fuse_coarse: halves differ, " + std::to_string(glo.size()) +
                                " vs " + std::to_string(sub.size()));
  LabeledPointCloud out = glo;
  for (std::size_t i = 0; i < sub.size(); ++i) out.push_back(sub.points[i], sub.labels[i]);
  return out;
}

// ---------------------------------------------------------------------------
// refinement stages
// ---------------------------------------------------------------------------

// Stage 1: embed the coarse cloud, expand each branch's features to the
// coarse resolution by nearest-parent lookup + MLP, fuse them with the
// coarse features through cross-attention, and predict up1 offsets per
// coarse point. Offsets apply to coordinates only; labels are inherited.
inline std::pair<Tensor, std::vector<std::uint8_t>> refine_stage1(
    const ParamStore& params, const ModelConfig& cfg, const LabeledPointCloud& coarse,
    const LabeledPointCloud& p_glo, const LabeledPointCloud& p_sub, const Tensor& f_glo,
    const Tensor& f_sub) {
  using namespace netdetail;
  Tensor f_coarse = mlp2(params, "r1.embed", embed_cloud(coarse, cfg.coord_scale));

  Tensor expanded_g = gather_rows(f_glo, nearest_parent(coarse, p_glo));
  expanded_g = mlp2(params, "r1.expand_g", expanded_g);
  Tensor expanded_s = gather_rows(f_sub, nearest_parent(coarse, p_sub));
  expanded_s = mlp2(params, "r1.expand_s", expanded_s);

  Tensor refined_g = attention_block(params, "r1.maa_g", cfg, f_coarse, expanded_g);
  Tensor refined_s = attention_block(params, "r1.maa_s", cfg, f_coarse, expanded_s);
  Tensor fused = concat({refined_g, refined_s}, 1);

  Tensor offsets = linear(params, "r1.off2", relu(linear(params, "r1.off1", fused)));
  offsets = reshape(offsets, {coarse.size() * cfg.up1, 3});

  std::vector<double> flat(coarse.size() * 3);
  for (std::size_t i = 0; i < coarse.size(); ++i) {
    flat[i * 3 + 0] = coarse.points[i].x;
    flat[i * 3 + 1] = coarse.points[i].y;
    flat[i * 3 + 2] = coarse.points[i].z;
  }
  Tensor up = repeat_rows(Tensor::from({coarse.size(), 3}, std::move(flat)), cfg.up1);
  Tensor mid = add(up, offsets);

  std::vector<std::uint8_t> labels;
  labels.reserve(coarse.size() * cfg.up1);
  for (std::size_t i = 0; i < coarse.size(); ++i)
    for (std::size_t r = 0; r < cfg.up1; ++r) labels.push_back(coarse.labels[i]);
  return {mid, labels};
}

// Stage 2: self-attention over the mid points, up2 offsets per point on
// top of pure replication. Gradients flow through the mid coordinates.
inline std::pair<Tensor, std::vector<std::uint8_t>> refine_stage2(
    const ParamStore& params, const ModelConfig& cfg, const Tensor& mid_coords,
    const std::vector<std::uint8_t>& mid_labels) {
  using namespace netdetail;
  if (mid_coords.ndim() != 2 || mid_coords.size(1) != 3 || mid_coords.size(0) != mid_labels.size())
    throw std::invalid_argument("refine_stage2: bad mid coordinates " +
                                shape_str(mid_coords.shape()));
  Tensor onehot = Tensor::from({mid_labels.size(), kNumClasses}, onehot_rows(mid_labels));
  Tensor embedded = concat({scale(mid_coords, cfg.coord_scale), onehot}, 1);
  Tensor features = mlp2(params, "r2.embed", embedded);
  features = attention_block(params, "r2.att", cfg, features, features);

  Tensor offsets = linear(params, "r2.off2", relu(linear(params, "r2.off1", features)));
  offsets = reshape(offsets, {mid_labels.size() * cfg.up2, 3});
  Tensor fine = add(repeat_rows(mid_coords, cfg.up2), offsets);

  std::vector<std::uint8_t> labels;
  labels.reserve(mid_labels.size() * cfg.up2);
  for (std::uint8_t l : mid_labels)
    for (std::size_t r = 0; r < cfg.up2; ++r) labels.push_back(l);
  return {fine, labels};
}

// ---------------------------------------------------------------------------
// full forward pass
// ---------------------------------------------------------------------------

inline StageOutput forward(const ParamStore& params, const ModelConfig& cfg,
                           const LabeledPointCloud& sparse, RunMode mode = RunMode::eval,
                           Rng* rng = nullptr) {
  cfg.validate();
  sparse.validate();
  StageOutput out;
  BranchOutput glo = encode_global(params, cfg, sparse, mode, rng);
  BranchOutput sub = encode_substructure(params, cfg, sparse);
  out.p_glo = std::move(glo.keypoints);
  out.p_sub = std::move(sub.keypoints);
  out.f_glo = std::move(glo.features);
  out.f_sub = std::move(sub.features);
  out.p_coarse = fuse_coarse(out.p_glo, out.p_sub);
  out.coarse_labels = out.p_coarse.labels;
  {
    std::vector<double> flat(out.p_coarse.size() * 3);
    for (std::size_t i = 0; i < out.p_coarse.size(); ++i) {
      flat[i * 3 + 0] = out.p_coarse.points[i].x;
      flat[i * 3 + 1] = out.p_coarse.points[i].y;
      flat[i * 3 + 2] = out.p_coarse.points[i].z;
    }
    out.coarse_coords = Tensor::from({out.p_coarse.size(), 3}, std::move(flat));
  }
  auto [mid, mid_labels] =
      refine_stage1(params, cfg, out.p_coarse, out.p_glo, out.p_sub, out.f_glo, out.f_sub);
  out.mid_coords = std::move(mid);
  out.mid_labels = std::move(mid_labels);
  auto [fine, fine_labels] = refine_stage2(params, cfg, out.mid_coords, out.mid_labels);
  out.fine_coords = std::move(fine);
  out.fine_labels = std::move(fine_labels);
  return out;
}

}  // namespace cardio
