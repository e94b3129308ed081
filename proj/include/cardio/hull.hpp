#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <unordered_map>
#include <vector>

#include "cardio/cloud.hpp"

namespace cardio {

// 3-d convex hull (quickhull with conflict lists, deterministic insertion
// order). Exact enough for volume and containment queries on well-spread
// point sets; coplanar input is rejected.
class ConvexHull {
 public:
  explicit ConvexHull(const std::vector<Vec3>& points) : points_(points) { build(); }

  // Signed-tet sum over outward-oriented faces.
  double volume() const {
    double six_v = 0.0;
    for (const Face& f : faces_)
      if (f.alive) six_v += points_[f.v[0]].dot(points_[f.v[1]].cross(points_[f.v[2]]));
    return six_v / 6.0;
  }

  bool contains(const Vec3& p, double tol = 1e-9) const {
    for (const Face& f : faces_)
      if (f.alive && f.normal.dot(p) - f.offset > tol) return false;
    return true;
  }

  std::size_t face_count() const {
    std::size_t n = 0;
    for (const Face& f : faces_)
      if (f.alive) ++n;
    return n;
  }

 private:
  struct Face {
    std::array<std::size_t, 3> v;
    std::array<int, 3> neighbor;  // across edge (v[i], v[i+1])
    Vec3 normal;                  // unit, outward
    double offset;                // plane: normal . x = offset
    std::vector<std::size_t> conflicts;
    bool alive = true;
  };

  const std::vector<Vec3>& points_;
  std::vector<Face> faces_;
  double eps_ = 0.0;

  double dist_above(const Face& f, std::size_t p) const {
    return f.normal.dot(points_[p]) - f.offset;
  }

  int make_face(std::size_t a, std::size_t b, std::size_t c) {
    Face f;
    f.v = {a, b, c};
    f.neighbor = {-1, -1, -1};
    const Vec3 n = (points_[b] - points_[a]).cross(points_[c] - points_[a]);
    const double len = n.norm();
    if (len <= 0.0) throw std::runtime_error("hull: degenerate face");
    f.normal = n * (1.0 / len);
    f.offset = f.normal.dot(points_[a]);
    faces_.push_back(std::move(f));
    return static_cast<int>(faces_.size()) - 1;
  }

  void build() {
    const std::size_t n = points_.size();
    if (n < 4) throw std::invalid_argument("hull: need at least 4 points");

    Vec3 mn = points_[0], mx = points_[0];
    for (const Vec3& p : points_) {
      mn = {std::min(mn.x, p.x), std::min(mn.y, p.y), std::min(mn.z, p.z)};
      mx = {std::max(mx.x, p.x), std::max(mx.y, p.y), std::max(mx.z, p.z)};
    }
    const double span = std::max({mx.x - mn.x, mx.y - mn.y, mx.z - mn.z, 1e-300});
    eps_ = 1e-9 * span;

    // Initial simplex from extreme points.
    std::size_t i0 = 0;
    for (std::size_t i = 1; i < n; ++i) {
      const Vec3 &a = points_[i], &b = points_[i0];
      if (a.x < b.x || (a.x == b.x && (a.y < b.y || (a.y == b.y && a.z < b.z)))) i0 = i;
    }
    std::size_t i1 = i0;
    double best = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double d = dist2(points_[i], points_[i0]);
      if (d > best) {
        best = d;
        i1 = i;
      }
    }
    if (best <= eps_ * eps_) throw std::invalid_argument("hull: degenerate input (single point)");
    std::size_t i2 = i0;
    best = -1.0;
    const Vec3 edge = points_[i1] - points_[i0];
    for (std::size_t i = 0; i < n; ++i) {
      const double a2 = edge.cross(points_[i] - points_[i0]).norm2();
      if (a2 > best) {
        best = a2;
        i2 = i;
      }
    }
    if (best <= eps_ * eps_ * edge.norm2())
      throw std::invalid_argument("hull: degenerate input (collinear points)");
    std::size_t i3 = i0;
    best = 0.0;
    const Vec3 base_n = edge.cross(points_[i2] - points_[i0]);
    for (std::size_t i = 0; i < n; ++i) {
      const double v = std::abs(base_n.dot(points_[i] - points_[i0]));
      if (v > best) {
        best = v;
        i3 = i;
      }
    }
    if (best <= eps_ * base_n.norm())
      throw std::invalid_argument("hull: degenerate input (coplanar points)");

    if (base_n.dot(points_[i3] - points_[i0]) > 0.0) std::swap(i1, i2);
    const int f0 = make_face(i0, i1, i2);
    const int f1 = make_face(i0, i3, i1);
    const int f2 = make_face(i1, i3, i2);
    const int f3 = make_face(i0, i2, i3);
    faces_[f0].neighbor = {f1, f2, f3};
    faces_[f1].neighbor = {f3, f2, f0};
    faces_[f2].neighbor = {f1, f3, f0};
    faces_[f3].neighbor = {f0, f2, f1};

    std::vector<int> pending;
    for (std::size_t p = 0; p < n; ++p) {
      if (p == i0 || p == i1 || p == i2 || p == i3) continue;
      for (int f = 0; f < 4; ++f)
        if (dist_above(faces_[f], p) > eps_) {
          faces_[f].conflicts.push_back(p);
          break;
        }
    }
    for (int f = 0; f < 4; ++f)
      if (!faces_[f].conflicts.empty()) pending.push_back(f);

    while (!pending.empty()) {
      const int fid = pending.back();
      pending.pop_back();
      if (!faces_[fid].alive || faces_[fid].conflicts.empty()) continue;

      // farthest conflict point of this face
      std::size_t apex = faces_[fid].conflicts[0];
      double apex_d = dist_above(faces_[fid], apex);
      for (std::size_t p : faces_[fid].conflicts) {
        const double d = dist_above(faces_[fid], p);
        if (d > apex_d || (d == apex_d && p < apex)) {
          apex_d = d;
          apex = p;
        }
      }

      // visible set via BFS over face adjacency
      std::vector<int> visible{fid};
      std::vector<char> mark(faces_.size(), 0);
      mark[fid] = 1;
      std::vector<std::array<std::size_t, 2>> horizon;      // directed (a,b)
      std::vector<int> horizon_outside;                     // face beyond each edge
      for (std::size_t q = 0; q < visible.size(); ++q) {
        const Face f = faces_[visible[q]];
        for (int e = 0; e < 3; ++e) {
          const int g = f.neighbor[e];
          if (mark[g]) continue;
          if (dist_above(faces_[g], apex) > eps_) {
            mark[g] = 1;
            visible.push_back(g);
          } else {
            horizon.push_back({f.v[e], f.v[(e + 1) % 3]});
            horizon_outside.push_back(g);
          }
        }
      }

      // gather orphaned conflict points
      std::vector<std::size_t> orphans;
      for (int v : visible) {
        for (std::size_t p : faces_[v].conflicts)
          if (p != apex) orphans.push_back(p);
        faces_[v].alive = false;
        faces_[v].conflicts.clear();
      }

      // new cone of faces: one per horizon edge
      std::unordered_map<std::size_t, int> by_start;
      std::vector<int> fresh;
      for (std::size_t h = 0; h < horizon.size(); ++h) {
        const int nf = make_face(horizon[h][0], horizon[h][1], apex);
        fresh.push_back(nf);
        by_start[horizon[h][0]] = nf;
      }
      for (std::size_t h = 0; h < horizon.size(); ++h) {
        const int nf = fresh[h];
        Face& f = faces_[nf];
        f.neighbor[0] = horizon_outside[h];
        // fix the outside face's link back to us
        Face& out = faces_[horizon_outside[h]];
        for (int e = 0; e < 3; ++e)
          if (out.v[e] == horizon[h][1] && out.v[(e + 1) % 3] == horizon[h][0]) out.neighbor[e] = nf;
        f.neighbor[1] = by_start.at(horizon[h][1]);   // edge (b, apex)
        // edge (apex, a): face whose edge ends at a, i.e. starts at a's
        // predecessor; resolved below by scanning starts
      }
      for (std::size_t h = 0; h < horizon.size(); ++h) {
        Face& f = faces_[fresh[h]];
        // neighbor across (apex, a) is the new face with end vertex == a
        for (std::size_t g = 0; g < horizon.size(); ++g)
          if (horizon[g][1] == horizon[h][0]) f.neighbor[2] = fresh[g];
      }

      // redistribute orphans
      for (std::size_t p : orphans) {
        for (int nf : fresh)
          if (dist_above(faces_[nf], p) > eps_) {
            faces_[nf].conflicts.push_back(p);
            break;
          }
      }
      for (int nf : fresh)
        if (!faces_[nf].conflicts.empty()) pending.push_back(nf);
    }
  }
};

// Hull volume in the input's cubic unit.
inline double convex_hull_volume(const std::vector<Vec3>& points) {
  return ConvexHull(points).volume();
}

}  // namespace cardio
