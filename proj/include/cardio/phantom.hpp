#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "cardio/cloud.hpp"
#include "cardio/rng.hpp"

namespace cardio {

// Procedural statistical shape model: six superellipsoid shells (one per
// cardiac substructure) with smooth orthonormal deformation modes. Stands
// in for an atlas-derived PCA model at desk scale.

struct ShapeModel {
  LabeledPointCloud mean;                      // labeled vertices, mm
  std::vector<std::array<std::uint32_t, 3>> triangles;
  std::vector<std::vector<Vec3>> modes;        // M orthonormal fields over vertices
  std::vector<double> sigmas;                  // M, mm-scale weights
  std::size_t apex_vertex = 0;                 // LV endo bottom pole
  std::size_t mitral_vertex = 0;               // LV endo top pole

  std::size_t vertex_count() const { return mean.size(); }
  std::size_t mode_count() const { return modes.size(); }
};

struct HeartInstance {
  LabeledPointCloud surface;
  std::vector<double> coefficients;  // in units of mode sigmas
  Vec3 apex;
  Vec3 mitral_center;
};

namespace detail {

struct ShellSpec {
  std::uint8_t label;
  Vec3 semi_axes;
  Vec3 center;
  double power;  // superellipsoid exponent; 2 = ellipsoid
};

// Default shells sized so hull volumes land in physiological ranges
// (LV ~120 ml, RV ~130 ml, atria ~60-70 ml).
inline std::vector<ShellSpec> default_shells() {
  return {
      {0, {26, 26, 42}, {0, 0, 0}, 2.0},     // LV endocardium
      {1, {34, 34, 50}, {0, 0, 0}, 2.0},     // LV epicardium
      {2, {27, 27, 42}, {46, 0, 0}, 2.2},    // RV endocardium
      {3, {31, 31, 46}, {46, 0, 0}, 2.2},    // RV epicardium
      {4, {25, 25, 24}, {0, 8, 68}, 1.8},    // left atrium
      {5, {26, 26, 24}, {46, 4, 68}, 1.8},   // right atrium
  };
}

inline double shape_pow(double u, double e) {
  return u >= 0 ? std::pow(u, e) : -std::pow(-u, e);
}

// Appends one UV-tessellated superellipsoid shell; returns (top pole,
// bottom pole) vertex indices.
inline std::pair<std::size_t, std::size_t> append_shell(const ShellSpec& spec, std::size_t rings,
                                                        std::size_t segments,
                                                        LabeledPointCloud& mean,
                                                        std::vector<std::array<std::uint32_t, 3>>& tris) {
  const double e = 2.0 / spec.power;
  const std::uint32_t base = static_cast<std::uint32_t>(mean.size());
  auto emit = [&](double theta, double phi) {
    const double sx = std::sin(theta) * std::cos(phi);
    const double sy = std::sin(theta) * std::sin(phi);
    const double sz = std::cos(theta);
    Vec3 p{spec.semi_axes.x * shape_pow(sx, e), spec.semi_axes.y * shape_pow(sy, e),
           spec.semi_axes.z * shape_pow(sz, e)};
    mean.push_back(p + spec.center, spec.label);
  };

  emit(0.0, 0.0);  // top pole (+z)
  for (std::size_t r = 1; r < rings; ++r) {
    const double theta = std::numbers::pi * static_cast<double>(r) / static_cast<double>(rings);
    for (std::size_t s = 0; s < segments; ++s)
      emit(theta, 2.0 * std::numbers::pi * static_cast<double>(s) / static_cast<double>(segments));
  }
  emit(std::numbers::pi, 0.0);  // bottom pole (-z)

  const std::uint32_t bottom = static_cast<std::uint32_t>(mean.size()) - 1;
  auto ring_vertex = [&](std::size_t r, std::size_t s) {
    return base + 1 + static_cast<std::uint32_t>((r - 1) * segments + s % segments);
  };
  for (std::size_t s = 0; s < segments; ++s) {
    tris.push_back({base, ring_vertex(1, s + 1), ring_vertex(1, s)});
    tris.push_back({bottom, ring_vertex(rings - 1, s), ring_vertex(rings - 1, s + 1)});
  }
  for (std::size_t r = 1; r + 1 < rings; ++r)
    for (std::size_t s = 0; s < segments; ++s) {
      const auto a = ring_vertex(r, s), b = ring_vertex(r, s + 1);
      const auto c = ring_vertex(r + 1, s), d = ring_vertex(r + 1, s + 1);
      tris.push_back({a, b, c});
      tris.push_back({b, d, c});
    }
  return {base, bottom};
}

inline double field_dot(const std::vector<Vec3>& a, const std::vector<Vec3>& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i].dot(b[i]);
  return acc;
}

}  // namespace detail

// Deterministic model for a seed: six shells plus M smoothed random
// deformation fields, Gram-Schmidt orthonormalized under the vertex inner
// product.
inline ShapeModel build_default_model(std::uint64_t seed, std::size_t n_modes = 50,
                                      std::size_t rings = 20, std::size_t segments = 30) {
  ShapeModel model;
  const auto shells = detail::default_shells();
  for (const auto& spec : shells) {
    auto [top, bottom] = detail::append_shell(spec, rings, segments, model.mean, model.triangles);
    if (spec.label == 0) {
      model.mitral_vertex = top;    // base of the LV long axis
      model.apex_vertex = bottom;   // apex of the heart
    }
  }
  model.mean.validate();

  const std::size_t n_vertices = model.mean.size();
  Rng rng(mix64(seed ^ 0x5badc0deull));
  const std::size_t n_bumps = 6;
  const double length_scale = 25.0;  // mm, keeps the fields smooth

  model.modes.reserve(n_modes);
  for (std::size_t m = 0; m < n_modes; ++m) {
    std::vector<Vec3> field(n_vertices);
    for (std::size_t b = 0; b < n_bumps; ++b) {
      // random bump center near the anatomy, random direction
      const Vec3 center{rng.gaussian(20, 40), rng.gaussian(0, 30), rng.gaussian(20, 45)};
      const Vec3 dir{rng.gaussian(), rng.gaussian(), rng.gaussian()};
      for (std::size_t v = 0; v < n_vertices; ++v) {
        const double w = std::exp(-dist2(model.mean.points[v], center) /
                                  (2.0 * length_scale * length_scale));
        field[v] += dir * w;
      }
    }
    model.modes.push_back(std::move(field));
  }

  // Modified Gram-Schmidt, applied twice for 1e-8-grade orthonormality.
  for (int pass = 0; pass < 2; ++pass)
    for (std::size_t m = 0; m < n_modes; ++m) {
      auto& mode = model.modes[m];
      for (std::size_t p = 0; p < m; ++p) {
        const double proj = detail::field_dot(mode, model.modes[p]);
        for (std::size_t v = 0; v < mode.size(); ++v) mode[v] += model.modes[p][v] * -proj;
      }
      const double norm = std::sqrt(detail::field_dot(mode, mode));
      if (norm < 1e-12)
        throw std::runtime_error("shape model: degenerate deformation field, change the seed");
      for (Vec3& d : mode) d = d * (1.0 / norm);
    }

  // Unit-norm fields spread over V vertices displace each vertex by about
  // 1/sqrt(V); scale sigmas so one sigma moves vertices ~1.5 mm RMS on the
  // leading mode, decaying across modes.
  const double vertex_scale = std::sqrt(static_cast<double>(n_vertices));
  model.sigmas.reserve(n_modes);
  for (std::size_t m = 0; m < n_modes; ++m)
    model.sigmas.push_back(1.5 * vertex_scale * std::exp(-static_cast<double>(m) / 15.0));
  return model;
}

// Surface and landmarks for explicit mode coefficients (sigma units).
inline HeartInstance instance_from_coefficients(const ShapeModel& model,
                                                const std::vector<double>& coefficients) {
  if (coefficients.size() != model.mode_count())
    throw std::invalid_argument("instance: expected " + std::to_string(model.mode_count()) +
                                " coefficients, got " + std::to_string(coefficients.size()));
  HeartInstance inst;
  inst.surface = model.mean;
  inst.coefficients = coefficients;
  for (std::size_t m = 0; m < model.mode_count(); ++m) {
    const double w = coefficients[m] * model.sigmas[m];
    if (w == 0.0) continue;
    for (std::size_t v = 0; v < inst.surface.size(); ++v)
      inst.surface.points[v] += model.modes[m][v] * w;
  }
  inst.apex = inst.surface.points[model.apex_vertex];
  inst.mitral_center = inst.surface.points[model.mitral_vertex];
  if ((inst.mitral_center - inst.apex).norm() <= 0.0)
    throw std::runtime_error("instance: degenerate apex-mitral axis");
  return inst;
}

// Gaussian displacement of the two landmarks only; the surface is untouched.
inline HeartInstance perturb_landmarks(HeartInstance instance, double sigma_mm, Rng& rng) {
  if (sigma_mm < 0.0) throw std::invalid_argument("perturb_landmarks: sigma must be >= 0");
  instance.apex += {rng.gaussian(0, sigma_mm), rng.gaussian(0, sigma_mm), rng.gaussian(0, sigma_mm)};
  instance.mitral_center +=
      {rng.gaussian(0, sigma_mm), rng.gaussian(0, sigma_mm), rng.gaussian(0, sigma_mm)};
  return instance;
}

// Standard-normal coefficients clipped to +-coeff_clip, then landmark
// perturbation (default 1 mm).
inline HeartInstance sample_instance(const ShapeModel& model, std::uint64_t rng_seed,
                                     double coeff_clip = 3.0, double landmark_sigma_mm = 1.0) {
  if (coeff_clip <= 0.0) throw std::invalid_argument("sample_instance: coeff_clip must be > 0");
  Rng rng(mix64(rng_seed ^ 0x9027ab11ull));
  std::vector<double> coeffs(model.mode_count());
  for (double& c : coeffs) c = std::clamp(rng.gaussian(), -coeff_clip, coeff_clip);
  HeartInstance inst = instance_from_coefficients(model, coeffs);
  return perturb_landmarks(std::move(inst), landmark_sigma_mm, rng);
}

// Projects a surface back through the orthonormal modes; inverse of
// instance_from_coefficients up to numerical error.
inline std::vector<double> project_coefficients(const ShapeModel& model,
                                                const LabeledPointCloud& surface) {
  if (surface.size() != model.vertex_count())
    throw std::invalid_argument("project: vertex count mismatch");
  std::vector<Vec3> delta(surface.size());
  for (std::size_t v = 0; v < surface.size(); ++v)
    delta[v] = surface.points[v] - model.mean.points[v];
  std::vector<double> coeffs(model.mode_count());
  for (std::size_t m = 0; m < model.mode_count(); ++m)
    coeffs[m] = detail::field_dot(delta, model.modes[m]) / model.sigmas[m];
  return coeffs;
}

namespace detail {

inline double triangle_area(const Vec3& a, const Vec3& b, const Vec3& c) {
  return 0.5 * (b - a).cross(c - a).norm();
}

// Largest-remainder allocation proportional to per-class area, minimum one
// point per class present in the model.
inline std::array<std::size_t, kNumClasses> densify_allocation(
    const std::array<double, kNumClasses>& areas, std::size_t n_points) {
  double total = 0.0;
  for (double a : areas) total += a;
  std::array<std::size_t, kNumClasses> alloc{};
  std::array<double, kNumClasses> frac{};
  std::size_t assigned = 0;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    const double share = areas[c] / total * static_cast<double>(n_points);
    alloc[c] = static_cast<std::size_t>(std::floor(share));
    frac[c] = share - std::floor(share);
    assigned += alloc[c];
  }
  while (assigned < n_points) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < kNumClasses; ++c)
      if (frac[c] > frac[best]) best = c;
    ++alloc[best];
    frac[best] = -1.0;
    ++assigned;
  }
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    while (alloc[c] == 0 && areas[c] > 0.0) {
      std::size_t donor = 0;
      for (std::size_t d = 1; d < kNumClasses; ++d)
        if (alloc[d] > alloc[donor]) donor = d;
      if (alloc[donor] <= 1) throw std::invalid_argument("densify: too few points for 6 classes");
      --alloc[donor];
      ++alloc[c];
    }
  }
  return alloc;
}

}  // namespace detail

// Area-weighted uniform surface sampling, labels inherited from the
// substructure, exactly n_points total (at least one per class).
inline LabeledPointCloud densify(const ShapeModel& model, const HeartInstance& instance,
                                 std::size_t n_points, Rng& rng) {
  if (n_points < kNumClasses)
    throw std::invalid_argument("densify: need at least " + std::to_string(kNumClasses) +
                                " points, got " + std::to_string(n_points));
  if (instance.surface.size() != model.vertex_count())
    throw std::invalid_argument("densify: instance does not match the model topology");

  const auto& pts = instance.surface.points;
  std::array<double, kNumClasses> class_area{};
  std::vector<double> tri_area(model.triangles.size());
  for (std::size_t t = 0; t < model.triangles.size(); ++t) {
    const auto& tri = model.triangles[t];
    tri_area[t] = detail::triangle_area(pts[tri[0]], pts[tri[1]], pts[tri[2]]);
    class_area[instance.surface.labels[tri[0]]] += tri_area[t];
  }
  const auto alloc = detail::densify_allocation(class_area, n_points);

  // per-class cumulative area tables
  std::array<std::vector<std::pair<double, std::size_t>>, kNumClasses> cumulative;
  for (std::size_t t = 0; t < model.triangles.size(); ++t) {
    const std::uint8_t label = instance.surface.labels[model.triangles[t][0]];
    auto& table = cumulative[label];
    const double prev = table.empty() ? 0.0 : table.back().first;
    table.emplace_back(prev + tri_area[t], t);
  }

  LabeledPointCloud out;
  out.points.reserve(n_points);
  out.labels.reserve(n_points);
  out.provenance.reserve(n_points);
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    const auto& table = cumulative[c];
    if (alloc[c] > 0 && table.empty())
      throw std::invalid_argument("densify: class " + std::string(class_name(c)) +
                                  " has no surface");
    for (std::size_t i = 0; i < alloc[c]; ++i) {
      const double target = rng.uniform() * table.back().first;
      auto it = std::lower_bound(table.begin(), table.end(), target,
                                 [](const auto& row, double v) { return row.first < v; });
      if (it == table.end()) --it;
      const auto& tri = model.triangles[it->second];
      double u = rng.uniform(), v = rng.uniform();
      if (u + v > 1.0) {
        u = 1.0 - u;
        v = 1.0 - v;
      }
      const Vec3 p = pts[tri[0]] + (pts[tri[1]] - pts[tri[0]]) * u + (pts[tri[2]] - pts[tri[0]]) * v;
      out.points.push_back(p);
      out.labels.push_back(static_cast<std::uint8_t>(c));
      out.provenance.push_back(static_cast<std::uint32_t>(it->second));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// model export/import: labeled PLY (double precision, with faces) for the
// mean surface, plus a versioned sidecar for modes/sigmas/landmarks.
// ---------------------------------------------------------------------------

inline void save_shape_model(const ShapeModel& model, const std::string& ply_path,
                             const std::string& sidecar_path) {
  {
    std::ofstream os(ply_path, std::ios::trunc);
    if (!os) throw std::runtime_error("model: cannot open '" + ply_path + "'");
    os << "ply\nformat ascii 1.0\n";
    os << "element vertex " << model.mean.size() << "\n";
    os << "property double x\nproperty double y\nproperty double z\nproperty uchar label\n";
    os << "element face " << model.triangles.size() << "\n";
    os << "property list uchar uint vertex_indices\nend_header\n";
    char line[128];
    for (std::size_t v = 0; v < model.mean.size(); ++v) {
      const Vec3& p = model.mean.points[v];
      std::snprintf(line, sizeof(line), "%.17g %.17g %.17g %u\n", p.x, p.y, p.z,
                    static_cast<unsigned>(model.mean.labels[v]));
      os << line;
    }
    for (const auto& tri : model.triangles)
      os << "3 " << tri[0] << ' ' << tri[1] << ' ' << tri[2] << "\n";
  }
  {
    std::ofstream os(sidecar_path, std::ios::trunc);
    if (!os) throw std::runtime_error("model: cannot open '" + sidecar_path + "'");
    os << "CARDIO-SSM 1\n";
    os << "modes " << model.mode_count() << "\n";
    os << "vertices " << model.vertex_count() << "\n";
    os << "apex_vertex " << model.apex_vertex << "\n";
    os << "mitral_vertex " << model.mitral_vertex << "\n";
    char num[32];
    os << "sigmas";
    for (double s : model.sigmas) {
      std::snprintf(num, sizeof(num), " %.17g", s);
      os << num;
    }
    os << "\n";
    for (const auto& mode : model.modes) {
      os << "mode";
      for (const Vec3& d : mode) {
        std::snprintf(num, sizeof(num), " %.17g", d.x);
        os << num;
        std::snprintf(num, sizeof(num), " %.17g", d.y);
        os << num;
        std::snprintf(num, sizeof(num), " %.17g", d.z);
        os << num;
      }
      os << "\n";
    }
  }
}

inline ShapeModel load_shape_model(const std::string& ply_path, const std::string& sidecar_path) {
  ShapeModel model;
  {
    std::ifstream is(ply_path);
    if (!is) throw std::runtime_error("model: cannot open '" + ply_path + "'");
    std::string line;
    std::size_t n_vertices = 0, n_faces = 0;
    while (std::getline(is, line)) {
      std::istringstream ls(line);
      std::string tok;
      ls >> tok;
      if (tok == "element") {
        std::string what;
        std::size_t count;
        ls >> what >> count;
        if (what == "vertex") n_vertices = count;
        else if (what == "face") n_faces = count;
      } else if (tok == "end_header") {
        break;
      }
    }
    for (std::size_t v = 0; v < n_vertices; ++v) {
      if (!std::getline(is, line)) throw std::runtime_error("model: truncated vertex list");
      std::istringstream ls(line);
      Vec3 p;
      unsigned label;
      if (!(ls >> p.x >> p.y >> p.z >> label)) throw std::runtime_error("model: bad vertex line");
      model.mean.push_back(p, static_cast<std::uint8_t>(label));
    }
    for (std::size_t f = 0; f < n_faces; ++f) {
      if (!std::getline(is, line)) throw std::runtime_error("model: truncated face list");
      std::istringstream ls(line);
      unsigned n, a, b, c;
      if (!(ls >> n >> a >> b >> c) || n != 3) throw std::runtime_error("model: bad face line");
      model.triangles.push_back({a, b, c});
    }
  }
  {
    std::ifstream is(sidecar_path);
    if (!is) throw std::runtime_error("model: cannot open '" + sidecar_path + "'");
    std::string header;
    int version = 0;
    is >> header >> version;
    if (header != "CARDIO-SSM" || version != 1)
      throw std::runtime_error("model: sidecar has unknown header '" + header + "'");
    std::string key;
    std::size_t n_modes = 0, n_vertices = 0;
    is >> key >> n_modes;
    is >> key >> n_vertices;
    is >> key >> model.apex_vertex;
    is >> key >> model.mitral_vertex;
    if (n_vertices != model.mean.size())
      throw std::runtime_error("model: sidecar vertex count does not match the PLY");
    is >> key;  // "sigmas"
    model.sigmas.resize(n_modes);
    for (double& s : model.sigmas) is >> s;
    model.modes.assign(n_modes, std::vector<Vec3>(n_vertices));
    for (auto& mode : model.modes) {
      is >> key;  // "mode"
      for (Vec3& d : mode) is >> d.x >> d.y >> d.z;
    }
    if (!is) throw std::runtime_error("model: truncated sidecar");
  }
  model.mean.validate();
  return model;
}

}  // namespace cardio
