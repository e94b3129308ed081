#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "cardio/cloud.hpp"
#include "cardio/rng.hpp"

namespace cardio {

// ---------------------------------------------------------------------------
// farthest-point sampling
// ---------------------------------------------------------------------------

// Index (into `candidates`' values) of the point nearest the candidate
// centroid; the deterministic FPS start rule.
inline std::size_t nearest_to_centroid(const std::vector<Vec3>& points,
                                       const std::vector<std::size_t>& candidates) {
  if (candidates.empty()) throw std::invalid_argument("nearest_to_centroid: no candidates");
  Vec3 c;
  for (std::size_t i : candidates) c += points[i];
  const double n = static_cast<double>(candidates.size());
  c = {c.x / n, c.y / n, c.z / n};
  std::size_t best = candidates[0];
  double best_d2 = std::numeric_limits<double>::infinity();
  for (std::size_t i : candidates) {
    const double d2 = dist2(points[i], c);
    if (d2 < best_d2 || (d2 == best_d2 && i < best)) {
      best_d2 = d2;
      best = i;
    }
  }
  return best;
}

// Greedy max-min selection over a candidate subset. `start` must be one of
// the candidates. Distance ties break toward the smaller point index.
inline std::vector<std::size_t> fps_subset(const std::vector<Vec3>& points,
                                           const std::vector<std::size_t>& candidates,
                                           std::size_t n, std::size_t start) {
  if (n == 0 || n > candidates.size())
    throw std::invalid_argument("fps: requested " + std::to_string(n) + " of " +
                                std::to_string(candidates.size()) + " points");
  if (std::find(candidates.begin(), candidates.end(), start) == candidates.end())
    throw std::invalid_argument("fps: start index is not a candidate");

  std::vector<std::size_t> picked{start};
  std::vector<double> min_d2(candidates.size());
  std::vector<bool> used(candidates.size(), false);
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    min_d2[i] = dist2(points[candidates[i]], points[start]);
    if (candidates[i] == start) used[i] = true;
  }

  while (picked.size() < n) {
    std::size_t arg = candidates.size();
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      if (used[i]) continue;
      if (arg == candidates.size() || min_d2[i] > min_d2[arg] ||
          (min_d2[i] == min_d2[arg] && candidates[i] < candidates[arg]))
        arg = i;
    }
    const std::size_t pick = candidates[arg];
    used[arg] = true;
    picked.push_back(pick);
    for (std::size_t i = 0; i < candidates.size(); ++i)
      min_d2[i] = std::min(min_d2[i], dist2(points[candidates[i]], points[pick]));
  }
  return picked;
}

inline std::vector<std::size_t> fps(const LabeledPointCloud& cloud, std::size_t n,
                                    std::size_t start_index) {
  std::vector<std::size_t> all(cloud.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return fps_subset(cloud.points, all, n, start_index);
}

// Start at the point nearest the cloud centroid, which makes the selection
// invariant to input point order.
inline std::vector<std::size_t> fps_auto(const LabeledPointCloud& cloud, std::size_t n) {
  std::vector<std::size_t> all(cloud.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return fps_subset(cloud.points, all, n, nearest_to_centroid(cloud.points, all));
}

// ---------------------------------------------------------------------------
// kNN grouping with centroid-aligned frames
// ---------------------------------------------------------------------------

struct GroupedNeighborhood {
  LabeledPointCloud centroids;               // n grouped centers (coords + label)
  std::size_t k = 0;
  std::vector<std::size_t> neighbor_indices;  // n*k, row-major into the source cloud
  std::vector<Vec3> offsets;                  // n*k centroid-aligned frames

  std::size_t group_count() const { return centroids.size(); }
  std::size_t neighbor(std::size_t group, std::size_t i) const {
    return neighbor_indices[group * k + i];
  }
  const Vec3& offset(std::size_t group, std::size_t i) const { return offsets[group * k + i]; }
};

// Exact k nearest neighbors of every centroid over the full cloud, ordered
// by (distance, index); offsets are neighbor minus centroid, exactly.
inline GroupedNeighborhood knn_group(const LabeledPointCloud& cloud,
                                     const LabeledPointCloud& centroids, std::size_t k) {
  if (k == 0 || k > cloud.size())
    throw std::invalid_argument("knn_group: k=" + std::to_string(k) + " with " +
                                std::to_string(cloud.size()) + " points");
  GroupedNeighborhood group;
  group.centroids = centroids;
  group.k = k;
  group.neighbor_indices.resize(centroids.size() * k);
  group.offsets.resize(centroids.size() * k);

  std::vector<std::pair<double, std::size_t>> scratch(cloud.size());
  for (std::size_t j = 0; j < centroids.size(); ++j) {
    const Vec3& c = centroids.points[j];
    for (std::size_t i = 0; i < cloud.size(); ++i) scratch[i] = {dist2(cloud.points[i], c), i};
    std::partial_sort(scratch.begin(), scratch.begin() + static_cast<std::ptrdiff_t>(k),
                      scratch.end());
    for (std::size_t i = 0; i < k; ++i) {
      const std::size_t idx = scratch[i].second;
      group.neighbor_indices[j * k + i] = idx;
      group.offsets[j * k + i] = cloud.points[idx] - c;
    }
  }
  return group;
}

// ---------------------------------------------------------------------------
// class-balanced adaptive sampling
// ---------------------------------------------------------------------------

struct SamplingPlan {
  double alpha = 0.5;
  std::array<std::size_t, kNumClasses> quotas{};
  std::size_t total = 0;

  std::size_t quota_sum() const {
    std::size_t s = 0;
    for (std::size_t q : quotas) s += q;
    return s;
  }
};

// Quotas n_c = floor(r_c * target) with r_c proportional to count^-alpha
// over the nonempty classes; the floored remainder goes one point at a
// time to the classes with the largest fractional part (ties to the lower
// class index). The quota sum always equals min(target, total points).
inline SamplingPlan adaptive_quotas(const std::array<std::size_t, kNumClasses>& counts,
                                    double alpha, std::size_t target) {
  if (alpha < 0.0) throw std::invalid_argument("adaptive_quotas: alpha must be >= 0");
  std::size_t population = 0;
  for (std::size_t c : counts) population += c;
  if (population == 0) throw std::invalid_argument("adaptive_quotas: all classes empty");
  const std::size_t goal = std::min(target, population);

  std::array<double, kNumClasses> ratio{};
  double normalizer = 0.0;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    if (counts[c] == 0) continue;
    ratio[c] = std::pow(static_cast<double>(counts[c]), -alpha);
    normalizer += ratio[c];
  }

  SamplingPlan plan;
  plan.alpha = alpha;
  plan.total = goal;
  std::array<double, kNumClasses> fractional{};
  std::size_t assigned = 0;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    if (counts[c] == 0) continue;
    const double share = ratio[c] / normalizer * static_cast<double>(goal);
    plan.quotas[c] = static_cast<std::size_t>(std::floor(share));
    fractional[c] = share - std::floor(share);
    assigned += plan.quotas[c];
  }
  while (assigned < goal) {
    std::size_t best = kNumClasses;
    for (std::size_t c = 0; c < kNumClasses; ++c) {
      if (counts[c] == 0) continue;
      if (best == kNumClasses || fractional[c] > fractional[best]) best = c;
    }
    ++plan.quotas[best];
    fractional[best] = -1.0;
    ++assigned;
  }
  return plan;
}

// Per-class FPS under the plan's quotas. A quota exceeding its class count
// is clipped; the excess moves to classes with spare capacity, largest
// spare first. Output order: class 0 picks, then class 1, ...
inline LabeledPointCloud class_balanced_fps(const LabeledPointCloud& cloud,
                                            const SamplingPlan& plan) {
  const auto counts = class_counts(cloud);
  std::array<std::size_t, kNumClasses> quotas = plan.quotas;
  // Clip and redistribute.
  std::size_t excess = 0;
  for (std::size_t c = 0; c < kNumClasses; ++c)
    if (quotas[c] > counts[c]) {
      excess += quotas[c] - counts[c];
      quotas[c] = counts[c];
    }
  while (excess > 0) {
    std::size_t best = kNumClasses;
    std::size_t best_spare = 0;
    for (std::size_t c = 0; c < kNumClasses; ++c) {
      const std::size_t spare = counts[c] - quotas[c];
      if (spare > best_spare) {
        best_spare = spare;
        best = c;
      }
    }
    if (best == kNumClasses) break;  // cloud smaller than the plan total
    ++quotas[best];
    --excess;
  }

  LabeledPointCloud out;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    if (quotas[c] == 0) continue;
    const auto subset = indices_of_class(cloud, c);
    const auto picks =
        fps_subset(cloud.points, subset, quotas[c], nearest_to_centroid(cloud.points, subset));
    for (std::size_t i : picks) {
      out.points.push_back(cloud.points[i]);
      out.labels.push_back(cloud.labels[i]);
      out.provenance.push_back(cloud.provenance.empty() ? static_cast<std::uint32_t>(i)
                                                        : cloud.provenance[i]);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// jitter augmentation
// ---------------------------------------------------------------------------

// Gaussian coordinate noise; labels untouched. Training-time only.
inline LabeledPointCloud jitter(const LabeledPointCloud& cloud, double sigma_mm, Rng& rng) {
  if (sigma_mm < 0.0) throw std::invalid_argument("jitter: sigma must be >= 0");
  LabeledPointCloud out = cloud;
  if (sigma_mm == 0.0) return out;
  for (Vec3& p : out.points) {
    p.x += rng.gaussian(0.0, sigma_mm);
    p.y += rng.gaussian(0.0, sigma_mm);
    p.z += rng.gaussian(0.0, sigma_mm);
  }
  return out;
}

}  // namespace cardio
