#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace cardio {

using Shape = std::vector<std::size_t>;

inline std::size_t numel_of(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

struct Node;
using NodePtr = std::shared_ptr<Node>;

// Dense row-major tensor of 64-bit reals. Values are immutable after
// creation; ops produce fresh tensors and record a Node whenever any
// input participates in gradient tracking.
class Tensor {
 public:
  Tensor() = default;

  static Tensor from(Shape shape, std::vector<double> values) {
    if (numel_of(shape) != values.size())
      throw std::invalid_argument("tensor: shape " + shape_str(shape) + " does not match " +
                                  std::to_string(values.size()) + " values");
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = std::make_shared<const std::vector<double>>(std::move(values));
    return t;
  }

  static Tensor zeros(Shape shape) {
    const std::size_t n = numel_of(shape);
    return from(std::move(shape), std::vector<double>(n, 0.0));
  }

  static Tensor scalar(double v) { return from({1}, {v}); }

  // Leaf with gradient tracking enabled (a trainable parameter or any
  // input a gradient is requested for).
  static Tensor param(Shape shape, std::vector<double> values);

  const Shape& shape() const { return shape_; }
  std::size_t ndim() const { return shape_.size(); }
  std::size_t numel() const { return data_ ? data_->size() : 0; }
  std::size_t size(std::size_t axis) const { return shape_.at(axis); }
  const std::vector<double>& data() const { return *data_; }
  const std::shared_ptr<const std::vector<double>>& storage() const { return data_; }
  bool defined() const { return static_cast<bool>(data_); }

  double value() const {
    if (numel() != 1) throw std::invalid_argument("tensor: value() on non-scalar " + shape_str(shape_));
    return (*data_)[0];
  }

  double at(std::size_t r, std::size_t c) const { return (*data_)[r * shape_.at(1) + c]; }

  bool requires_grad() const { return requires_grad_; }
  const NodePtr& node() const { return node_; }

 private:
  friend Tensor make_tracked(const char* op, std::vector<Tensor> inputs, Shape shape,
                             std::vector<double> values,
                             std::function<void(const std::vector<double>&,
                                                const std::vector<std::vector<double>*>&)>
                                 backprop);

  Shape shape_;
  std::shared_ptr<const std::vector<double>> data_;
  NodePtr node_;
  bool requires_grad_ = false;
};

// One recorded operation. `inputs` keeps the upstream graph alive;
// `backprop` adds this node's contribution into the input grad buffers
// (null pointer for inputs that are not tracked).
struct Node {
  const char* op = "";
  std::vector<Tensor> inputs;
  std::function<void(const std::vector<double>& grad_out,
                     const std::vector<std::vector<double>*>& grad_in)>
      backprop;
  bool leaf = false;
  bool consumed = false;
};

inline Tensor Tensor::param(Shape shape, std::vector<double> values) {
  Tensor t = from(std::move(shape), std::move(values));
  t.requires_grad_ = true;
  t.node_ = std::make_shared<Node>();
  t.node_->op = "leaf";
  t.node_->leaf = true;
  return t;
}

inline void check_finite(const char* op, const std::vector<double>& values) {
  for (double v : values)
    if (!std::isfinite(v))
      throw std::runtime_error(std::string("op '") + op + "' produced a non-finite value");
}

// Central factory: validates finiteness and records the op when any
// input is tracked.
inline Tensor make_tracked(const char* op, std::vector<Tensor> inputs, Shape shape,
                           std::vector<double> values,
                           std::function<void(const std::vector<double>&,
                                              const std::vector<std::vector<double>*>&)>
                               backprop) {
  check_finite(op, values);
  Tensor out = Tensor::from(std::move(shape), std::move(values));
  bool tracked = false;
  for (const Tensor& in : inputs)
    if (in.requires_grad()) tracked = true;
  if (tracked) {
    out.requires_grad_ = true;
    out.node_ = std::make_shared<Node>();
    out.node_->op = op;
    out.node_->inputs = std::move(inputs);
    out.node_->backprop = std::move(backprop);
  }
  return out;
}

// ---------------------------------------------------------------------------
// backward
// ---------------------------------------------------------------------------

// Gradients keyed by leaf node identity.
class Gradients {
 public:
  std::unordered_map<const Node*, std::vector<double>> by_leaf;

  bool contains(const Tensor& param) const {
    return param.node() && by_leaf.count(param.node().get()) > 0;
  }

  Tensor get(const Tensor& param) const {
    auto it = by_leaf.find(param.node().get());
    if (it == by_leaf.end())
      throw std::invalid_argument("gradients: no entry for the given parameter");
    return Tensor::from(param.shape(), it->second);
  }
};

inline Gradients backward(const Tensor& loss) {
  if (loss.numel() != 1)
    throw std::invalid_argument("backward: loss must be scalar, got " + shape_str(loss.shape()));
  Gradients grads;
  if (!loss.node()) return grads;  // constant loss, nothing reaches a parameter

  // Iterative post-order DFS for a topological order.
  // Leaf nodes persist across graphs (parameters are re-used by every
  // forward pass); only op nodes are single-use.
  std::vector<Node*> topo;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{loss.node().get(), 0}};
  seen.insert(loss.node().get());
  if (!loss.node()->leaf && loss.node()->consumed)
    throw std::runtime_error("backward: graph already consumed");
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].node().get();
      if (child && !seen.count(child)) {
        if (!child->leaf && child->consumed)
          throw std::runtime_error("backward: graph already consumed");
        seen.insert(child);
        stack.emplace_back(child, 0);
      }
    } else {
      topo.push_back(node);
      stack.pop_back();
    }
  }

  std::unordered_map<const Node*, std::vector<double>> buffers;
  buffers[loss.node().get()] = {1.0};

  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    Node* node = *it;
    if (!node->leaf) node->consumed = true;
    auto found = buffers.find(node);
    if (found == buffers.end()) continue;  // no gradient reached this node
    if (node->leaf) {
      grads.by_leaf.emplace(node, std::move(found->second));
      buffers.erase(found);
      continue;
    }
    std::vector<std::vector<double>*> sinks(node->inputs.size(), nullptr);
    for (std::size_t i = 0; i < node->inputs.size(); ++i) {
      const Tensor& in = node->inputs[i];
      if (!in.node()) continue;
      auto [slot, inserted] = buffers.try_emplace(in.node().get());
      if (inserted) slot->second.assign(in.numel(), 0.0);
      sinks[i] = &slot->second;
    }
    node->backprop(found->second, sinks);
    buffers.erase(found);
  }
  return grads;
}

// ---------------------------------------------------------------------------
// small gemm helpers (row-major)
// ---------------------------------------------------------------------------

namespace detail {

inline void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b,
                    double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// c[m,k] += a[m,n] * b[k,n]^T
inline void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
                    double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * n;
    double* crow = c + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double* brow = b + p * n;
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += arow[j] * brow[j];
      crow[p] += acc;
    }
  }
}

// c[k,n] += a[m,k]^T * b[m,n]
inline void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b,
                    double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    const double* brow = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      double* crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// Decompose `shape` around `axis` for strided walks.
struct AxisSplit {
  std::size_t outer = 1, axis = 1, inner = 1;
};

inline AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  if (axis >= shape.size())
    throw std::invalid_argument("axis " + std::to_string(axis) + " out of range for " +
                                shape_str(shape));
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.axis = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// forward ops
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.size(1) != b.size(0))
    throw std::invalid_argument("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                                shape_str(b.shape()));
  const std::size_t m = a.size(0), k = a.size(1), n = b.size(1);
  std::vector<double> out(m * n, 0.0);
  detail::gemm_nn(m, k, n, a.data().data(), b.data().data(), out.data());
  auto asaved = a.storage();
  auto bsaved = b.storage();
  return make_tracked("matmul", {a, b}, {m, n}, std::move(out),
                      [m, k, n, asaved, bsaved](const std::vector<double>& g,
                                                const std::vector<std::vector<double>*>& gin) {
                        if (gin[0]) detail::gemm_nt(m, n, k, g.data(), bsaved->data(), gin[0]->data());
                        if (gin[1]) detail::gemm_tn(m, k, n, asaved->data(), g.data(), gin[1]->data());
                      });
}

inline Tensor transpose(const Tensor& a) {
  if (a.ndim() != 2) throw std::invalid_argument("transpose: expected 2-d, got " + shape_str(a.shape()));
  const std::size_t m = a.size(0), n = a.size(1);
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a.data()[i * n + j];
  return make_tracked("transpose", {a}, {n, m}, std::move(out),
                      [m, n](const std::vector<double>& g,
                             const std::vector<std::vector<double>*>& gin) {
                        if (!gin[0]) return;
                        for (std::size_t i = 0; i < m; ++i)
                          for (std::size_t j = 0; j < n; ++j) (*gin[0])[i * n + j] += g[j * m + i];
                      });
}

namespace detail {

// add/mul support equal shapes or a trailing-row broadcast: b is [n] or
// [1,n] against a [m,n]. Returns rows of a, or 0 on mismatch.
inline std::size_t broadcast_rows(const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) return 1;
  if (a.ndim() == 2) {
    if (b.ndim() == 1 && b.size(0) == a.size(1)) return a.size(0);
    if (b.ndim() == 2 && b.size(0) == 1 && b.size(1) == a.size(1)) return a.size(0);
  }
  return 0;
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
  const std::size_t rows = detail::broadcast_rows(a, b);
  if (rows == 0)
    throw std::invalid_argument("add: incompatible shapes " + shape_str(a.shape()) + " and " +
                                shape_str(b.shape()));
  const std::size_t width = b.numel();
  std::vector<double> out(a.data());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < width; ++j) out[r * width + j] += b.data()[j];
  return make_tracked("add", {a, b}, a.shape(), std::move(out),
                      [rows, width](const std::vector<double>& g,
                                    const std::vector<std::vector<double>*>& gin) {
                        if (gin[0])
                          for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i];
                        if (gin[1])
                          for (std::size_t r = 0; r < rows; ++r)
                            for (std::size_t j = 0; j < width; ++j) (*gin[1])[j] += g[r * width + j];
                      });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  const std::size_t rows = detail::broadcast_rows(a, b);
  if (rows == 0)
    throw std::invalid_argument("mul: incompatible shapes " + shape_str(a.shape()) + " and " +
                                shape_str(b.shape()));
  const std::size_t width = b.numel();
  std::vector<double> out(a.data());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < width; ++j) out[r * width + j] *= b.data()[j];
  auto asaved = a.storage();
  auto bsaved = b.storage();
  return make_tracked("mul", {a, b}, a.shape(), std::move(out),
                      [rows, width, asaved, bsaved](const std::vector<double>& g,
                                                    const std::vector<std::vector<double>*>& gin) {
                        if (gin[0])
                          for (std::size_t r = 0; r < rows; ++r)
                            for (std::size_t j = 0; j < width; ++j)
                              (*gin[0])[r * width + j] += g[r * width + j] * (*bsaved)[j];
                        if (gin[1])
                          for (std::size_t r = 0; r < rows; ++r)
                            for (std::size_t j = 0; j < width; ++j)
                              (*gin[1])[j] += g[r * width + j] * (*asaved)[r * width + j];
                      });
}

inline Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.data());
  for (double& v : out) v *= factor;
  return make_tracked("scale", {a}, a.shape(), std::move(out),
                      [factor](const std::vector<double>& g,
                               const std::vector<std::vector<double>*>& gin) {
                        if (!gin[0]) return;
                        for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += factor * g[i];
                      });
}

inline Tensor sub(const Tensor& a, const Tensor& b) { return add(a, scale(b, -1.0)); }

inline Tensor relu(const Tensor& a) {
  std::vector<double> out(a.data());
  for (double& v : out) v = v > 0.0 ? v : 0.0;
  auto asaved = a.storage();
  return make_tracked("relu", {a}, a.shape(), std::move(out),
                      [asaved](const std::vector<double>& g,
                               const std::vector<std::vector<double>*>& gin) {
                        if (!gin[0]) return;
                        for (std::size_t i = 0; i < g.size(); ++i)
                          if ((*asaved)[i] > 0.0) (*gin[0])[i] += g[i];
                      });
}

inline Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  const Shape& base = parts.front().shape();
  Shape out_shape = base;
  std::size_t total_axis = 0;
  for (const Tensor& p : parts) {
    if (p.ndim() != base.size())
      throw std::invalid_argument("concat: rank mismatch " + shape_str(base) + " vs " +
                                  shape_str(p.shape()));
    for (std::size_t d = 0; d < base.size(); ++d)
      if (d != axis && p.shape()[d] != base[d])
        throw std::invalid_argument("concat: incompatible shapes " + shape_str(base) + " and " +
                                    shape_str(p.shape()));
    total_axis += p.shape().at(axis);
  }
  out_shape[axis] = total_axis;

  const auto split = detail::split_axis(out_shape, axis);
  std::vector<double> out(numel_of(out_shape));
  std::vector<std::size_t> axis_sizes;
  std::size_t offset = 0;
  for (const Tensor& p : parts) {
    const std::size_t pa = p.shape()[axis];
    axis_sizes.push_back(pa);
    for (std::size_t o = 0; o < split.outer; ++o) {
      const double* src = p.data().data() + o * pa * split.inner;
      double* dst = out.data() + (o * split.axis + offset) * split.inner;
      std::copy(src, src + pa * split.inner, dst);
    }
    offset += pa;
  }
  return make_tracked("concat", parts, out_shape, std::move(out),
                      [split, axis_sizes](const std::vector<double>& g,
                                          const std::vector<std::vector<double>*>& gin) {
                        std::size_t off = 0;
                        for (std::size_t i = 0; i < axis_sizes.size(); ++i) {
                          const std::size_t pa = axis_sizes[i];
                          if (gin[i]) {
                            for (std::size_t o = 0; o < split.outer; ++o) {
                              const double* src = g.data() + (o * split.axis + off) * split.inner;
                              double* dst = gin[i]->data() + o * pa * split.inner;
                              for (std::size_t t = 0; t < pa * split.inner; ++t) dst[t] += src[t];
                            }
                          }
                          off += pa;
                        }
                      });
}

// Reduces `axis` away, keeping the first maximum on ties.
inline Tensor max_over_axis(const Tensor& a, std::size_t axis) {
  const auto split = detail::split_axis(a.shape(), axis);
  Shape out_shape;
  for (std::size_t d = 0; d < a.ndim(); ++d)
    if (d != axis) out_shape.push_back(a.shape()[d]);
  if (out_shape.empty()) out_shape = {1};

  std::vector<double> out(split.outer * split.inner, -std::numeric_limits<double>::infinity());
  auto argmax = std::make_shared<std::vector<std::size_t>>(split.outer * split.inner, 0);
  for (std::size_t o = 0; o < split.outer; ++o)
    for (std::size_t x = 0; x < split.axis; ++x)
      for (std::size_t i = 0; i < split.inner; ++i) {
        const double v = a.data()[(o * split.axis + x) * split.inner + i];
        double& best = out[o * split.inner + i];
        if (v > best) {
          best = v;
          (*argmax)[o * split.inner + i] = x;
        }
      }
  return make_tracked("max_over_axis", {a}, out_shape, std::move(out),
                      [split, argmax](const std::vector<double>& g,
                                      const std::vector<std::vector<double>*>& gin) {
                        if (!gin[0]) return;
                        for (std::size_t o = 0; o < split.outer; ++o)
                          for (std::size_t i = 0; i < split.inner; ++i) {
                            const std::size_t x = (*argmax)[o * split.inner + i];
                            (*gin[0])[(o * split.axis + x) * split.inner + i] += g[o * split.inner + i];
                          }
                      });
}

inline Tensor softmax(const Tensor& a, std::size_t axis) {
  const auto split = detail::split_axis(a.shape(), axis);
  std::vector<double> out(a.numel());
  for (std::size_t o = 0; o < split.outer; ++o)
    for (std::size_t i = 0; i < split.inner; ++i) {
      double peak = -std::numeric_limits<double>::infinity();
      for (std::size_t x = 0; x < split.axis; ++x)
        peak = std::max(peak, a.data()[(o * split.axis + x) * split.inner + i]);
      double total = 0.0;
      for (std::size_t x = 0; x < split.axis; ++x) {
        const std::size_t idx = (o * split.axis + x) * split.inner + i;
        out[idx] = std::exp(a.data()[idx] - peak);
        total += out[idx];
      }
      for (std::size_t x = 0; x < split.axis; ++x) out[(o * split.axis + x) * split.inner + i] /= total;
    }
  auto saved = std::make_shared<std::vector<double>>(out);
  return make_tracked("softmax", {a}, a.shape(), std::move(out),
                      [split, saved](const std::vector<double>& g,
                                     const std::vector<std::vector<double>*>& gin) {
                        if (!gin[0]) return;
                        for (std::size_t o = 0; o < split.outer; ++o)
                          for (std::size_t i = 0; i < split.inner; ++i) {
                            double dot = 0.0;
                            for (std::size_t x = 0; x < split.axis; ++x) {
                              const std::size_t idx = (o * split.axis + x) * split.inner + i;
                              dot += g[idx] * (*saved)[idx];
                            }
                            for (std::size_t x = 0; x < split.axis; ++x) {
                              const std::size_t idx = (o * split.axis + x) * split.inner + i;
                              (*gin[0])[idx] += (*saved)[idx] * (g[idx] - dot);
                            }
                          }
                      });
}

// Select rows of a 2-d (or flattened-first-axis) tensor.
inline Tensor gather_rows(const Tensor& a, std::vector<std::size_t> indices) {
  if (a.ndim() == 0 || a.shape().empty())
    throw std::invalid_argument("gather_rows: undefined input");
  const std::size_t rows = a.shape()[0];
  const std::size_t width = a.numel() / std::max<std::size_t>(rows, 1);
  for (std::size_t idx : indices)
    if (idx >= rows)
      throw std::invalid_argument("gather_rows: index " + std::to_string(idx) +
                                  " out of range for " + shape_str(a.shape()));
  Shape out_shape = a.shape();
  out_shape[0] = indices.size();
  std::vector<double> out(indices.size() * width);
  for (std::size_t r = 0; r < indices.size(); ++r)
    std::copy_n(a.data().data() + indices[r] * width, width, out.data() + r * width);
  auto idx_saved = std::make_shared<std::vector<std::size_t>>(std::move(indices));
  return make_tracked("gather_rows", {a}, out_shape, std::move(out),
                      [idx_saved, width](const std::vector<double>& g,
                                         const std::vector<std::vector<double>*>& gin) {
                        if (!gin[0]) return;
                        for (std::size_t r = 0; r < idx_saved->size(); ++r) {
                          double* dst = gin[0]->data() + (*idx_saved)[r] * width;
                          const double* src = g.data() + r * width;
                          for (std::size_t j = 0; j < width; ++j) dst[j] += src[j];
                        }
                      });
}

// Each row repeated `times` consecutively (rows i*t .. i*t+t-1 come from row i).
inline Tensor repeat_rows(const Tensor& a, std::size_t times) {
  const std::size_t rows = a.shape().at(0);
  std::vector<std::size_t> idx;
  idx.reserve(rows * times);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t t = 0; t < times; ++t) idx.push_back(r);
  return gather_rows(a, std::move(idx));
}

inline Tensor reshape(const Tensor& a, Shape shape) {
  if (numel_of(shape) != a.numel())
    throw std::invalid_argument("reshape: cannot view " + shape_str(a.shape()) + " as " +
                                shape_str(shape));
  return make_tracked("reshape", {a}, std::move(shape), std::vector<double>(a.data()),
                      [](const std::vector<double>& g,
                         const std::vector<std::vector<double>*>& gin) {
                        if (!gin[0]) return;
                        for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i];
                      });
}

inline Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (double v : a.data()) total += v;
  const std::size_t n = a.numel();
  return make_tracked("sum", {a}, {1}, {total},
                      [n](const std::vector<double>& g,
                          const std::vector<std::vector<double>*>& gin) {
                        if (!gin[0]) return;
                        for (std::size_t i = 0; i < n; ++i) (*gin[0])[i] += g[0];
                      });
}

// Row-wise normalization to zero mean / unit variance over the last axis.
inline Tensor layer_norm(const Tensor& a, double eps = 1e-5) {
  if (a.ndim() < 1) throw std::invalid_argument("layer_norm: undefined input");
  const std::size_t width = a.shape().back();
  const std::size_t rows = a.numel() / width;
  std::vector<double> out(a.numel());
  auto normalized = std::make_shared<std::vector<double>>(a.numel());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = a.data().data() + r * width;
    double mean = 0.0;
    for (std::size_t j = 0; j < width; ++j) mean += x[j];
    mean /= static_cast<double>(width);
    double var = 0.0;
    for (std::size_t j = 0; j < width; ++j) var += (x[j] - mean) * (x[j] - mean);
    var /= static_cast<double>(width);
    const double inv = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = inv;
    for (std::size_t j = 0; j < width; ++j) {
      const double y = (x[j] - mean) * inv;
      out[r * width + j] = y;
      (*normalized)[r * width + j] = y;
    }
  }
  return make_tracked("layer_norm", {a}, a.shape(), std::move(out),
                      [rows, width, normalized, inv_std](
                          const std::vector<double>& g,
                          const std::vector<std::vector<double>*>& gin) {
                        if (!gin[0]) return;
                        for (std::size_t r = 0; r < rows; ++r) {
                          const double* gr = g.data() + r * width;
                          const double* y = normalized->data() + r * width;
                          double gmean = 0.0, gymean = 0.0;
                          for (std::size_t j = 0; j < width; ++j) {
                            gmean += gr[j];
                            gymean += gr[j] * y[j];
                          }
                          gmean /= static_cast<double>(width);
                          gymean /= static_cast<double>(width);
                          const double inv = (*inv_std)[r];
                          for (std::size_t j = 0; j < width; ++j)
                            (*gin[0])[r * width + j] += inv * (gr[j] - gmean - y[j] * gymean);
                        }
                      });
}

}  // namespace cardio
