#pragma once

#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "cardio/cloud.hpp"
#include "cardio/phantom.hpp"
#include "cardio/rng.hpp"

namespace cardio {

// Simulates the cine-MRI sampling process: slab slicing along clinical
// plane stacks, per-slice rigid misalignment at five severities, and
// emission of (sparse input, dense ground truth) records.

// ---------------------------------------------------------------------------
// slice plans
// ---------------------------------------------------------------------------

// A slab: points within +-thickness/2 of the plane belong to the slice.
// (u, v) is an in-plane basis derived from the anatomy, so misalignment is
// equivariant under global rigid motion of the instance.
struct Plane {
  Vec3 origin;
  Vec3 normal;
  Vec3 u, v;
  double thickness = 6.0;
};

struct SlicePlan {
  std::vector<Plane> sax;
  Plane lax_2ch;
  Plane lax_4ch;

  std::size_t plane_count() const { return sax.size() + 2; }

  const Plane& plane(std::size_t i) const {
    if (i < sax.size()) return sax[i];
    if (i == sax.size()) return lax_2ch;
    if (i == sax.size() + 1) return lax_4ch;
    throw std::invalid_argument("slice plan: plane index out of range");
  }

  void validate() const {
    if (sax.empty()) throw std::invalid_argument("slice plan: no SAX planes");
    for (const Plane& p : sax) {
      if (p.thickness <= 0.0) throw std::invalid_argument("slice plan: slab thickness must be > 0");
      if ((p.normal - sax.front().normal).norm() > 1e-12)
        throw std::invalid_argument("slice plan: SAX normals differ across the stack");
    }
    if (sax.size() >= 3) {
      const double step = (sax[1].origin - sax[0].origin).dot(sax[0].normal);
      for (std::size_t i = 2; i < sax.size(); ++i) {
        const double s = (sax[i].origin - sax[i - 1].origin).dot(sax[0].normal);
        if (std::abs(s - step) > 1e-9)
          throw std::invalid_argument("slice plan: SAX origins not equally spaced");
      }
    }
    if (lax_2ch.thickness <= 0.0 || lax_4ch.thickness <= 0.0)
      throw std::invalid_argument("slice plan: slab thickness must be > 0");
  }
};

// Routine protocol: a SAX stack along the apex->mitral axis centered on the
// ventricles plus 2CH/4CH long-axis planes containing that axis. The
// in-plane reference direction comes from the LV->RV centroid line.
inline SlicePlan default_slice_plan(const HeartInstance& instance, std::size_t n_sax = 10,
                                    double spacing_mm = 8.0, double thickness_mm = 6.0,
                                    double lax_azimuth_deg = 60.0) {
  const Vec3 axis = (instance.mitral_center - instance.apex).normalized();
  std::vector<Vec3> lv, rv;
  for (std::size_t i = 0; i < instance.surface.size(); ++i) {
    if (instance.surface.labels[i] == 0) lv.push_back(instance.surface.points[i]);
    if (instance.surface.labels[i] == 2) rv.push_back(instance.surface.points[i]);
  }
  Vec3 ref = rv.empty() || lv.empty() ? Vec3{1, 0, 0} : centroid(rv) - centroid(lv);
  ref = ref - axis * ref.dot(axis);
  if (ref.norm() < 1e-9) ref = std::abs(axis.x) < 0.9 ? Vec3{1, 0, 0} : Vec3{0, 1, 0};
  const Vec3 u = ref.normalized();
  const Vec3 v = axis.cross(u);

  SlicePlan plan;
  // SAX stack from just above the apex toward the base
  for (std::size_t i = 0; i < n_sax; ++i) {
    Plane p;
    p.origin = instance.apex + axis * (spacing_mm * 0.5 + static_cast<double>(i) * spacing_mm);
    p.normal = axis;
    p.u = u;
    p.v = v;
    p.thickness = thickness_mm;
    plan.sax.push_back(p);
  }
  auto lax = [&](double azimuth_deg) {
    const double a = azimuth_deg * std::numbers::pi / 180.0;
    const Vec3 w = u * std::cos(a) + v * std::sin(a);
    Plane p;
    p.origin = instance.apex;
    p.normal = axis.cross(w);
    p.u = axis;
    p.v = w;
    p.thickness = thickness_mm;
    return p;
  };
  plan.lax_2ch = lax(0.0);
  plan.lax_4ch = lax(lax_azimuth_deg);
  plan.validate();
  return plan;
}

// ---------------------------------------------------------------------------
// slicing
// ---------------------------------------------------------------------------

struct SliceSet {
  struct Slice {
    std::size_t plane_id = 0;
    LabeledPointCloud points;  // provenance = source vertex index
  };
  std::vector<Slice> slices;
  bool empty_slice_warning = false;

  LabeledPointCloud merged() const {
    LabeledPointCloud out;
    for (const Slice& s : slices)
      for (std::size_t i = 0; i < s.points.size(); ++i) {
        out.points.push_back(s.points.points[i]);
        out.labels.push_back(s.points.labels[i]);
        out.provenance.push_back(s.points.provenance[i]);
      }
    return out;
  }
};

// A point belongs to slice s iff its signed distance to plane s is within
// +-thickness/2. Points can appear in several slices (SAX/LAX crossings).
inline SliceSet slice(const HeartInstance& instance, const SlicePlan& plan) {
  plan.validate();
  SliceSet out;
  for (std::size_t s = 0; s < plan.plane_count(); ++s) {
    const Plane& p = plan.plane(s);
    SliceSet::Slice sl;
    sl.plane_id = s;
    for (std::size_t i = 0; i < instance.surface.size(); ++i) {
      const double d = (instance.surface.points[i] - p.origin).dot(p.normal);
      if (std::abs(d) <= p.thickness * 0.5) {
        sl.points.points.push_back(instance.surface.points[i]);
        sl.points.labels.push_back(instance.surface.labels[i]);
        sl.points.provenance.push_back(static_cast<std::uint32_t>(i));
      }
    }
    if (sl.points.size() == 0) out.empty_slice_warning = true;
    out.slices.push_back(std::move(sl));
  }
  return out;
}

// ---------------------------------------------------------------------------
// misalignment
// ---------------------------------------------------------------------------

struct MisalignmentLevel {
  std::string name;
  double sigma_trans_mm = 0.0;
  double sigma_rot_deg = 0.0;
};

inline const std::vector<MisalignmentLevel>& misalignment_levels() {
  static const std::vector<MisalignmentLevel> levels = {
      {"none", 0.0, 0.0}, {"mild", 1.0, 1.0},   {"medium", 2.0, 2.0},
      {"strong", 3.0, 3.0}, {"severe", 4.0, 4.0},
  };
  return levels;
}

inline const MisalignmentLevel& level_by_name(const std::string& name) {
  for (const auto& l : misalignment_levels())
    if (l.name == name) return l;
  throw std::invalid_argument("unknown misalignment level '" + name + "'");
}

// In-plane rigid transform: rotation about the plane normal through the
// slice centroid, then translation along the plane basis.
inline void apply_in_plane_rigid(LabeledPointCloud& points, const Plane& plane, double shift_u,
                                 double shift_v, double rot_rad) {
  if (points.size() == 0) return;
  const Vec3 c = centroid(points.points);
  const Vec3 shift = plane.u * shift_u + plane.v * shift_v;
  const double cos_r = std::cos(rot_rad), sin_r = std::sin(rot_rad);
  for (Vec3& x : points.points) {
    const Vec3 d = x - c;
    const double du = d.dot(plane.u), dv = d.dot(plane.v);
    const double dn = d.dot(plane.normal);
    const Vec3 rotated = plane.u * (cos_r * du - sin_r * dv) +
                         plane.v * (sin_r * du + cos_r * dv) + plane.normal * dn;
    x = c + rotated + shift;
  }
}

// Independent rigid in-plane transform per slice: translation N(0, s_t^2)
// along each in-plane axis, rotation N(0, s_r^2) degrees about the plane
// normal through the slice centroid. Labels untouched. The same number of
// gaussians is drawn at every level, so paired records across levels share
// all downstream sampling.
inline SliceSet misalign(const SliceSet& slices, const SlicePlan& plan,
                         const MisalignmentLevel& level, Rng& rng) {
  SliceSet out = slices;
  for (auto& sl : out.slices) {
    const Plane& p = plan.plane(sl.plane_id);
    const double tu = rng.gaussian(0.0, level.sigma_trans_mm);
    const double tv = rng.gaussian(0.0, level.sigma_trans_mm);
    const double rot = rng.gaussian(0.0, level.sigma_rot_deg) * std::numbers::pi / 180.0;
    if (level.sigma_trans_mm == 0.0 && level.sigma_rot_deg == 0.0) continue;
    apply_in_plane_rigid(sl.points, p, tu, tv, rot);
  }
  return out;
}

// ---------------------------------------------------------------------------
// records
// ---------------------------------------------------------------------------

struct DatasetRecord {
  LabeledPointCloud sparse;    // resampled slice output
  LabeledPointCloud dense_gt;  // resampled dense surface sampling
  std::string level;
  std::uint64_t instance_seed = 0;
  std::vector<double> coefficients;
  bool degenerate = false;  // fewer than 6 classes survived slicing
};

inline DatasetRecord make_record(const ShapeModel& model, const HeartInstance& instance,
                                 const SlicePlan& plan, const MisalignmentLevel& level, Rng& rng,
                                 std::size_t sparse_points = 7500,
                                 std::size_t dense_points = 16384) {
  DatasetRecord rec;
  rec.level = level.name;
  rec.coefficients = instance.coefficients;

  const SliceSet sliced = misalign(slice(instance, plan), plan, level, rng);
  const LabeledPointCloud merged = sliced.merged();
  if (merged.size() == 0) throw std::runtime_error("make_record: slicing produced no points");
  const auto counts = class_counts(merged);
  for (std::size_t c = 0; c < kNumClasses; ++c)
    if (counts[c] == 0) rec.degenerate = true;

  rec.sparse = resample(merged, sparse_points, rng);
  rec.dense_gt = resample(densify(model, instance, dense_points, rng), dense_points, rng);
  return rec;
}

inline void save_record(const std::string& path, const DatasetRecord& rec) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("record: cannot open '" + path + "' for writing");
  write_lpc1(os, rec.sparse);
  write_lpc1(os, rec.dense_gt);
  if (!os) throw std::runtime_error("record: write to '" + path + "' failed");
}

inline std::pair<LabeledPointCloud, LabeledPointCloud> load_record(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("record: cannot open '" + path + "'");
  LabeledPointCloud sparse = read_lpc1(is);
  LabeledPointCloud dense = read_lpc1(is);
  return {std::move(sparse), std::move(dense)};
}

// ---------------------------------------------------------------------------
// split generation with a self-describing manifest
// ---------------------------------------------------------------------------

struct ManifestEntry {
  std::string path;  // relative to the manifest directory
  std::uint64_t seed = 0;
  std::string level;
  std::string digest;
  bool degenerate = false;
};

struct Manifest {
  std::uint64_t model_seed = 0;
  std::uint64_t base_seed = 0;
  std::size_t sparse_points = 7500;
  std::size_t dense_points = 16384;
  std::vector<std::string> level_mix;
  std::vector<ManifestEntry> records;
};

inline void save_manifest(const Manifest& m, const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("manifest: cannot open '" + path + "' for writing");
  os << "CARDIO-MANIFEST 1\n";
  os << "meta model_seed " << m.model_seed << "\n";
  os << "meta base_seed " << m.base_seed << "\n";
  os << "meta sparse_points " << m.sparse_points << "\n";
  os << "meta dense_points " << m.dense_points << "\n";
  os << "meta level_mix";
  for (const auto& l : m.level_mix) os << ' ' << l;
  os << "\n";
  os << "meta level_sigmas";
  for (const auto& l : misalignment_levels())
    os << ' ' << l.name << ':' << l.sigma_trans_mm << ':' << l.sigma_rot_deg;
  os << "\n";
  for (const auto& r : m.records)
    os << "record " << r.path << ' ' << hex64(r.seed) << ' ' << r.level << ' ' << r.digest << ' '
       << (r.degenerate ? "degenerate" : "-") << "\n";
}

inline Manifest load_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("manifest: cannot open '" + path + "'");
  std::string header;
  int version = 0;
  is >> header >> version;
  if (header != "CARDIO-MANIFEST" || version != 1)
    throw std::runtime_error("manifest: unknown header in '" + path + "'");
  Manifest m;
  std::string line;
  std::getline(is, line);
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string kind;
    ls >> kind;
    if (kind == "meta") {
      std::string key;
      ls >> key;
      if (key == "model_seed") ls >> m.model_seed;
      else if (key == "base_seed") ls >> m.base_seed;
      else if (key == "sparse_points") ls >> m.sparse_points;
      else if (key == "dense_points") ls >> m.dense_points;
      else if (key == "level_mix") {
        std::string l;
        while (ls >> l) m.level_mix.push_back(l);
      }
      // level_sigmas line is informational
    } else if (kind == "record") {
      ManifestEntry e;
      std::string seed_hex, flags;
      ls >> e.path >> seed_hex >> e.level >> e.digest >> flags;
      e.seed = std::stoull(seed_hex, nullptr, 16);
      e.degenerate = flags == "degenerate";
      m.records.push_back(std::move(e));
    }
  }
  return m;
}

// Writes one record file per sample plus a manifest. Every record derives
// from (base_seed, index), so output is independent of the worker count.
inline Manifest generate_split(const ShapeModel& model, std::uint64_t model_seed,
                               std::size_t n_samples, const std::vector<std::string>& level_mix,
                               const std::string& out_dir, std::uint64_t base_seed,
                               std::size_t sparse_points = 7500, std::size_t dense_points = 16384,
                               std::size_t threads = 1) {
  if (n_samples == 0) throw std::invalid_argument("generate_split: need at least one sample");
  if (level_mix.empty()) throw std::invalid_argument("generate_split: empty level mix");
  for (const auto& l : level_mix) level_by_name(l);  // validate names early

  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  {
    // fail before any work if the directory is not writable
    const std::string probe = (fs::path(out_dir) / ".write_probe").string();
    std::ofstream p(probe, std::ios::trunc);
    if (!p) throw std::runtime_error("generate_split: cannot write to '" + out_dir + "'");
    p.close();
    fs::remove(probe, ec);
  }

  Manifest manifest;
  manifest.model_seed = model_seed;
  manifest.base_seed = base_seed;
  manifest.sparse_points = sparse_points;
  manifest.dense_points = dense_points;
  manifest.level_mix = level_mix;
  manifest.records.resize(n_samples);

  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::string error_message;
  std::mutex error_mutex;

  auto worker = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n_samples || failed.load()) return;
      try {
        Rng rng = Rng::child(base_seed, i);
        const std::string level_name =
            level_mix[static_cast<std::size_t>(rng.uniform_below(level_mix.size()))];
        const std::uint64_t instance_seed = rng.next_u64();
        const HeartInstance instance = sample_instance(model, instance_seed);
        const SlicePlan plan = default_slice_plan(instance);
        const DatasetRecord rec = make_record(model, instance, plan, level_by_name(level_name),
                                              rng, sparse_points, dense_points);
        char name[32];
        std::snprintf(name, sizeof(name), "record_%05zu.lpc", i);
        const std::string path = (fs::path(out_dir) / name).string();
        save_record(path, rec);
        ManifestEntry& e = manifest.records[i];
        e.path = name;
        e.seed = instance_seed;
        e.level = level_name;
        e.digest = digest_file(path);
        e.degenerate = rec.degenerate;
      } catch (const std::exception& ex) {
        std::lock_guard<std::mutex> lock(error_mutex);
        failed.store(true);
        if (error_message.empty()) error_message = ex.what();
      }
    }
  };

  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failed.load()) throw std::runtime_error("generate_split: " + error_message);

  save_manifest(manifest, (fs::path(out_dir) / "manifest.txt").string());
  return manifest;
}

}  // namespace cardio
