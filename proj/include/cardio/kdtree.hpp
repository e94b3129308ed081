#pragma once

#include <algorithm>
#include <limits>
#include <stdexcept>
#include <vector>

#include "cardio/cloud.hpp"

namespace cardio {

// Exact 3-d kd-tree for nearest-neighbor queries. Results are identical to
// a linear scan ordered by (distance, original index): distance ties go to
// the smaller index.
class KdTree {
 public:
  KdTree() = default;

  explicit KdTree(const std::vector<Vec3>& points) {
    std::vector<std::size_t> idx(points.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    init(points, std::move(idx));
  }

  KdTree(const std::vector<Vec3>& points, std::vector<std::size_t> subset) {
    init(points, std::move(subset));
  }

  std::size_t size() const { return nodes_.size(); }

  struct Hit {
    std::size_t index = 0;  // index into the ORIGINAL point vector
    double dist2 = std::numeric_limits<double>::infinity();
  };

  Hit nearest(const Vec3& query) const {
    if (nodes_.empty()) throw std::invalid_argument("kdtree: empty tree");
    Hit best;
    search(root_, query, best);
    return best;
  }

 private:
  struct Node {
    Vec3 point;
    std::size_t index;
    int axis;
    int left = -1, right = -1;
  };

  void init(const std::vector<Vec3>& points, std::vector<std::size_t> subset) {
    for (std::size_t i : subset)
      if (i >= points.size()) throw std::invalid_argument("kdtree: subset index out of range");
    nodes_.reserve(subset.size());
    root_ = build(points, subset, 0, subset.size());
  }

  int build(const std::vector<Vec3>& points, std::vector<std::size_t>& subset, std::size_t lo,
            std::size_t hi) {
    if (lo >= hi) return -1;
    // Split on the widest axis for balanced query pruning.
    Vec3 mn{1e300, 1e300, 1e300}, mx{-1e300, -1e300, -1e300};
    for (std::size_t i = lo; i < hi; ++i) {
      const Vec3& p = points[subset[i]];
      mn = {std::min(mn.x, p.x), std::min(mn.y, p.y), std::min(mn.z, p.z)};
      mx = {std::max(mx.x, p.x), std::max(mx.y, p.y), std::max(mx.z, p.z)};
    }
    const Vec3 extent = mx - mn;
    int axis;
    if (extent.x >= extent.y && extent.x >= extent.z) axis = 0;
    else if (extent.y >= extent.z) axis = 1;
    else axis = 2;

    const std::size_t mid = (lo + hi) / 2;
    auto coord = [&](std::size_t i) {
      const Vec3& p = points[i];
      return axis == 0 ? p.x : axis == 1 ? p.y : p.z;
    };
    std::nth_element(subset.begin() + lo, subset.begin() + mid, subset.begin() + hi,
                     [&](std::size_t a, std::size_t b) {
                       const double ca = coord(a), cb = coord(b);
                       return ca < cb || (ca == cb && a < b);
                     });
    const int id = static_cast<int>(nodes_.size());
    nodes_.push_back({points[subset[mid]], subset[mid], axis, -1, -1});
    const int left = build(points, subset, lo, mid);
    const int right = build(points, subset, mid + 1, hi);
    nodes_[id].left = left;
    nodes_[id].right = right;
    return id;
  }

  void search(int id, const Vec3& query, Hit& best) const {
    if (id < 0) return;
    const Node& node = nodes_[id];
    const double d2 = dist2(node.point, query);
    if (d2 < best.dist2 || (d2 == best.dist2 && node.index < best.index)) {
      best.dist2 = d2;
      best.index = node.index;
    }
    const double delta = (node.axis == 0   ? query.x - node.point.x
                          : node.axis == 1 ? query.y - node.point.y
                                           : query.z - node.point.z);
    const int near = delta < 0 ? node.left : node.right;
    const int far = delta < 0 ? node.right : node.left;
    search(near, query, best);
    if (delta * delta <= best.dist2) search(far, query, best);
  }

  std::vector<Node> nodes_;
  int root_ = -1;
};

// Per-class trees over one labeled cloud; classes with no points have an
// empty tree.
struct ClassIndex {
  std::vector<KdTree> trees;

  explicit ClassIndex(const LabeledPointCloud& cloud) {
    trees.reserve(kNumClasses);
    for (std::size_t c = 0; c < kNumClasses; ++c)
      trees.emplace_back(cloud.points, indices_of_class(cloud, c));
  }
};

}  // namespace cardio
