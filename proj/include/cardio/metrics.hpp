#pragma once

#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "cardio/cloud.hpp"
#include "cardio/hull.hpp"
#include "cardio/kdtree.hpp"
#include "cardio/rng.hpp"
#include "cardio/tensor.hpp"

namespace cardio {

// ---------------------------------------------------------------------------
// semantic-aware chamfer distance
// ---------------------------------------------------------------------------

// Per-class symmetric mean nearest-neighbor L2 distance, averaged with
// 1/(2K') over the K' classes nonempty in BOTH clouds. Classes present on
// one side only are skipped and reported.
struct SaCdResult {
  double value = 0.0;
  std::size_t common_classes = 0;
  std::vector<std::size_t> skipped;  // classes nonempty on exactly one side
};

inline SaCdResult sa_cd_detailed(const LabeledPointCloud& predicted,
                                 const LabeledPointCloud& reference) {
  const auto pc = class_counts(predicted);
  const auto gc = class_counts(reference);
  SaCdResult result;
  double total = 0.0;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    if (pc[c] == 0 && gc[c] == 0) continue;
    if (pc[c] == 0 || gc[c] == 0) {
      result.skipped.push_back(c);
      continue;
    }
    const auto pi = indices_of_class(predicted, c);
    const auto gi = indices_of_class(reference, c);
    KdTree ptree(predicted.points, pi);
    KdTree gtree(reference.points, gi);
    double fwd = 0.0;
    for (std::size_t i : pi) fwd += std::sqrt(gtree.nearest(predicted.points[i]).dist2);
    double bwd = 0.0;
    for (std::size_t i : gi) bwd += std::sqrt(ptree.nearest(reference.points[i]).dist2);
    total += fwd / static_cast<double>(pi.size()) + bwd / static_cast<double>(gi.size());
    ++result.common_classes;
  }
  if (result.common_classes == 0)
    throw std::invalid_argument("sa_cd: no class is present in both clouds");
  result.value = total / (2.0 * static_cast<double>(result.common_classes));
  return result;
}

inline double sa_cd(const LabeledPointCloud& predicted, const LabeledPointCloud& reference) {
  return sa_cd_detailed(predicted, reference).value;
}

// Differentiable form: `coords` is an [N,3] tensor carrying the predicted
// coordinates (labels are fixed conditioning). Gradient flows to the
// predicted side only; zero-distance pairs contribute zero gradient, so
// the gradient at P == G is exactly zero.
inline Tensor sa_cd_loss(const Tensor& coords, const std::vector<std::uint8_t>& labels,
                         const LabeledPointCloud& reference) {
  if (coords.ndim() != 2 || coords.size(1) != 3)
    throw std::invalid_argument("sa_cd_loss: coords must be [N,3], got " +
                                shape_str(coords.shape()));
  if (coords.size(0) != labels.size())
    throw std::invalid_argument("sa_cd_loss: coords/labels size mismatch");

  const std::size_t n = coords.size(0);
  LabeledPointCloud predicted;
  predicted.points.resize(n);
  predicted.labels = labels;
  for (std::size_t i = 0; i < n; ++i)
    predicted.points[i] = {coords.at(i, 0), coords.at(i, 1), coords.at(i, 2)};

  const auto pc = class_counts(predicted);
  const auto gc = class_counts(reference);

  // Saved for the backward pass: per-term (point index, target point, weight).
  struct Pull {
    std::size_t point;
    Vec3 target;
    double inv_count;  // 1/|side| for the term's mean
  };
  auto pulls = std::make_shared<std::vector<Pull>>();
  double total = 0.0;
  std::size_t common = 0;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    if (pc[c] == 0 || gc[c] == 0) continue;
    const auto pi = indices_of_class(predicted, c);
    const auto gi = indices_of_class(reference, c);
    KdTree ptree(predicted.points, pi);
    KdTree gtree(reference.points, gi);
    double fwd = 0.0;
    for (std::size_t i : pi) {
      const auto hit = gtree.nearest(predicted.points[i]);
      fwd += std::sqrt(hit.dist2);
      pulls->push_back({i, reference.points[hit.index], 1.0 / static_cast<double>(pi.size())});
    }
    double bwd = 0.0;
    for (std::size_t i : gi) {
      const auto hit = ptree.nearest(reference.points[i]);
      bwd += std::sqrt(hit.dist2);
      pulls->push_back({hit.index, reference.points[i], 1.0 / static_cast<double>(gi.size())});
    }
    total += fwd / static_cast<double>(pi.size()) + bwd / static_cast<double>(gi.size());
    ++common;
  }
  if (common == 0) throw std::invalid_argument("sa_cd: no class is present in both clouds");
  const double value = total / (2.0 * static_cast<double>(common));
  const double norm = 1.0 / (2.0 * static_cast<double>(common));
  auto saved_coords = coords.storage();

  return make_tracked(
      "sa_cd", {coords}, {1}, {value},
      [pulls, saved_coords, norm](const std::vector<double>& g,
                                  const std::vector<std::vector<double>*>& gin) {
        if (!gin[0]) return;
        for (const Pull& pull : *pulls) {
          const Vec3 x{(*saved_coords)[pull.point * 3 + 0], (*saved_coords)[pull.point * 3 + 1],
                       (*saved_coords)[pull.point * 3 + 2]};
          const Vec3 d = x - pull.target;
          const double dist = d.norm();
          if (dist == 0.0) continue;
          const double w = g[0] * norm * pull.inv_count / dist;
          (*gin[0])[pull.point * 3 + 0] += w * d.x;
          (*gin[0])[pull.point * 3 + 1] += w * d.y;
          (*gin[0])[pull.point * 3 + 2] += w * d.z;
        }
      });
}

// One stage of network output in loss form.
struct StagePrediction {
  Tensor coords;  // [N,3]
  std::vector<std::uint8_t> labels;
};

// Sum of SA-CD over the enabled stages (coarse, mid, fine), equal weights.
inline Tensor total_loss(const std::vector<StagePrediction>& stages, const LabeledPointCloud& gt,
                         const std::array<bool, 3>& stage_mask = {true, true, true}) {
  if (stages.size() != 3) throw std::invalid_argument("total_loss: expected 3 stages");
  Tensor acc;
  bool any = false;
  for (std::size_t s = 0; s < 3; ++s) {
    if (!stage_mask[s]) continue;
    Tensor term = sa_cd_loss(stages[s].coords, stages[s].labels, gt);
    acc = any ? add(acc, term) : term;
    any = true;
  }
  if (!any) throw std::invalid_argument("total_loss: all stages masked out");
  return acc;
}

// ---------------------------------------------------------------------------
// plain geometric metrics
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<Vec3> filtered_points(const LabeledPointCloud& cloud,
                                         std::optional<std::size_t> class_filter) {
  std::vector<Vec3> pts;
  for (std::size_t i = 0; i < cloud.size(); ++i)
    if (!class_filter || cloud.labels[i] == *class_filter) pts.push_back(cloud.points[i]);
  return pts;
}

inline void require_nonempty(const std::vector<Vec3>& pts, const char* metric,
                             std::optional<std::size_t> class_filter) {
  if (!pts.empty()) return;
  std::string msg = std::string(metric) + ": empty point set";
  if (class_filter) msg += std::string(" for class ") + class_name(*class_filter);
  throw std::invalid_argument(msg);
}

}  // namespace detail

// Symmetric mean nearest-neighbor L2 distance.
inline double cd(const LabeledPointCloud& a, const LabeledPointCloud& b,
                 std::optional<std::size_t> class_filter = std::nullopt) {
  const auto pa = detail::filtered_points(a, class_filter);
  const auto pb = detail::filtered_points(b, class_filter);
  detail::require_nonempty(pa, "cd", class_filter);
  detail::require_nonempty(pb, "cd", class_filter);
  KdTree ta(pa), tb(pb);
  double fwd = 0.0;
  for (const Vec3& p : pa) fwd += std::sqrt(tb.nearest(p).dist2);
  double bwd = 0.0;
  for (const Vec3& p : pb) bwd += std::sqrt(ta.nearest(p).dist2);
  return 0.5 * (fwd / static_cast<double>(pa.size()) + bwd / static_cast<double>(pb.size()));
}

// Max over both directions of nearest-neighbor distances.
inline double hd(const LabeledPointCloud& a, const LabeledPointCloud& b,
                 std::optional<std::size_t> class_filter = std::nullopt) {
  const auto pa = detail::filtered_points(a, class_filter);
  const auto pb = detail::filtered_points(b, class_filter);
  detail::require_nonempty(pa, "hd", class_filter);
  detail::require_nonempty(pb, "hd", class_filter);
  KdTree ta(pa), tb(pb);
  double worst = 0.0;
  for (const Vec3& p : pa) worst = std::max(worst, tb.nearest(p).dist2);
  for (const Vec3& p : pb) worst = std::max(worst, ta.nearest(p).dist2);
  return std::sqrt(worst);
}

// Surface-to-surface proxy: both clouds resampled to the smaller count
// (fixed internal seed), then symmetric mean nearest distance. Documented
// stand-in for mesh-based SSD; meshing is out of scope here.
inline double ssd(const LabeledPointCloud& a, const LabeledPointCloud& b,
                  std::optional<std::size_t> class_filter = std::nullopt) {
  LabeledPointCloud fa, fb;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (!class_filter || a.labels[i] == *class_filter) fa.push_back(a.points[i], a.labels[i]);
  for (std::size_t i = 0; i < b.size(); ++i)
    if (!class_filter || b.labels[i] == *class_filter) fb.push_back(b.points[i], b.labels[i]);
  detail::require_nonempty(fa.points, "ssd", class_filter);
  detail::require_nonempty(fb.points, "ssd", class_filter);
  const std::size_t n = std::min(fa.size(), fb.size());
  Rng ra(0x55dcafe), rb(0x55dcafe);
  const LabeledPointCloud ea = fa.size() == n ? fa : resample(fa, n, ra);
  const LabeledPointCloud eb = fb.size() == n ? fb : resample(fb, n, rb);
  return cd(ea, eb);
}

// ---------------------------------------------------------------------------
// volumetric clinical metrics
// ---------------------------------------------------------------------------

// Convex-hull volume of one chamber's points, ml. Hull overestimates
// concave chambers slightly; adequate for sanity-band checks.
inline double chamber_volume_ml(const LabeledPointCloud& cloud, std::size_t chamber_class) {
  std::vector<Vec3> pts;
  for (std::size_t i = 0; i < cloud.size(); ++i)
    if (cloud.labels[i] == chamber_class) pts.push_back(cloud.points[i]);
  if (pts.size() < 4)
    throw std::invalid_argument(std::string("chamber_volume: class ") +
                                class_name(chamber_class) + " has fewer than 4 points");
  try {
    return ConvexHull(pts).volume() / 1000.0;  // mm^3 -> ml
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument(std::string("chamber_volume: class ") +
                                class_name(chamber_class) + ": " + e.what());
  }
}

inline double ejection_fraction(double edv_ml, double esv_ml) {
  if (edv_ml <= 0.0) throw std::invalid_argument("ejection_fraction: EDV must be > 0");
  if (esv_ml < 0.0 || esv_ml > edv_ml)
    throw std::invalid_argument("ejection_fraction: need 0 <= ESV <= EDV");
  return 100.0 * (edv_ml - esv_ml) / edv_ml;
}

// ---------------------------------------------------------------------------
// reports
// ---------------------------------------------------------------------------

struct ClassMetrics {
  double cd = 0, hd = 0, ssd = 0;
};

struct MetricReport {
  double cd_mm = 0, hd_mm = 0, ssd_mm = 0;
  double sa_cd_mm = 0;
  std::map<std::size_t, ClassMetrics> per_class;
  std::map<std::string, double> volumes_ml;     // lvv / rvv / lav / rav
  std::vector<std::size_t> degenerate_classes;  // skipped class indices
};

// Chambers reported at end-diastole: LV endo, RV endo, LA, RA.
inline const std::array<std::pair<const char*, std::size_t>, 4>& chamber_classes() {
  static const std::array<std::pair<const char*, std::size_t>, 4> chambers = {
      {{"lvv", 0}, {"rvv", 2}, {"lav", 4}, {"rav", 5}}};
  return chambers;
}

inline MetricReport evaluate_pair(const LabeledPointCloud& predicted,
                                  const LabeledPointCloud& reference) {
  MetricReport report;
  report.cd_mm = cd(predicted, reference);
  report.hd_mm = hd(predicted, reference);
  report.ssd_mm = ssd(predicted, reference);
  const auto sa = sa_cd_detailed(predicted, reference);
  report.sa_cd_mm = sa.value;
  report.degenerate_classes = sa.skipped;
  const auto pc = class_counts(predicted);
  const auto gc = class_counts(reference);
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    if (pc[c] == 0 || gc[c] == 0) continue;
    report.per_class[c] = {cd(predicted, reference, c), hd(predicted, reference, c),
                           ssd(predicted, reference, c)};
  }
  for (const auto& [name, cls] : chamber_classes())
    if (pc[cls] >= 4) {
      try {
        report.volumes_ml[name] = chamber_volume_ml(predicted, cls);
      } catch (const std::invalid_argument&) {
        // degenerate chamber: volume omitted, class already flagged upstream
      }
    }
  return report;
}

// CSV rows: scope,metric,value with scope = "overall" or a class name.
// Column order is fixed.
inline void write_report_csv(const MetricReport& report, std::ostream& os) {
  char line[96];
  auto row = [&](const std::string& scope, const char* metric, double value) {
    std::snprintf(line, sizeof(line), "%s,%s,%.9g\n", scope.c_str(), metric, value);
    os << line;
  };
  row("overall", "cd_mm", report.cd_mm);
  row("overall", "hd_mm", report.hd_mm);
  row("overall", "ssd_mm", report.ssd_mm);
  row("overall", "sa_cd_mm", report.sa_cd_mm);
  for (const auto& [c, m] : report.per_class) {
    row(class_name(c), "cd_mm", m.cd);
    row(class_name(c), "hd_mm", m.hd);
    row(class_name(c), "ssd_mm", m.ssd);
  }
  for (const auto& [name, v] : report.volumes_ml) row("overall", (std::string(name) + "_ml").c_str(), v);
}

inline nlohmann::json report_to_json(const MetricReport& report) {
  nlohmann::json j;
  j["cd_mm"] = report.cd_mm;
  j["hd_mm"] = report.hd_mm;
  j["ssd_mm"] = report.ssd_mm;
  j["sa_cd_mm"] = report.sa_cd_mm;
  for (const auto& [c, m] : report.per_class) {
    j["per_class"][class_name(c)] = {{"cd_mm", m.cd}, {"hd_mm", m.hd}, {"ssd_mm", m.ssd}};
  }
  for (const auto& [name, v] : report.volumes_ml) j["volumes_ml"][name] = v;
  j["degenerate_classes"] = nlohmann::json::array();
  for (std::size_t c : report.degenerate_classes) j["degenerate_classes"].push_back(class_name(c));
  return j;
}

}  // namespace cardio
