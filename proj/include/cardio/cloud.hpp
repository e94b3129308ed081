#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "cardio/rng.hpp"

namespace cardio {

constexpr std::size_t kNumClasses = 6;

inline const char* class_name(std::size_t c) {
  static const char* names[kNumClasses] = {"lv_endo", "lv_epi", "rv_endo",
                                           "rv_epi",  "la",     "ra"};
  if (c >= kNumClasses) throw std::invalid_argument("class index out of range");
  return names[c];
}

struct Vec3 {
  double x = 0, y = 0, z = 0;

  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  Vec3& operator+=(const Vec3& o) {
    x += o.x;
    y += o.y;
    z += o.z;
    return *this;
  }
  double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
  Vec3 cross(const Vec3& o) const {
    return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x};
  }
  double norm2() const { return dot(*this); }
  double norm() const { return std::sqrt(norm2()); }
  Vec3 normalized() const {
    const double n = norm();
    if (n == 0.0) throw std::invalid_argument("cannot normalize a zero vector");
    return {x / n, y / n, z / n};
  }
  bool operator==(const Vec3& o) const { return x == o.x && y == o.y && z == o.z; }
};

inline double dist2(const Vec3& a, const Vec3& b) { return (a - b).norm2(); }

// Points with anatomical class labels; the common currency of the whole
// pipeline. `provenance` optionally tracks each point's source index.
struct LabeledPointCloud {
  std::vector<Vec3> points;
  std::vector<std::uint8_t> labels;
  std::vector<std::uint32_t> provenance;

  std::size_t size() const { return points.size(); }

  void push_back(const Vec3& p, std::uint8_t label) {
    points.push_back(p);
    labels.push_back(label);
  }

  void validate() const {
    if (labels.size() != points.size())
      throw std::invalid_argument("cloud: " + std::to_string(points.size()) + " points but " +
                                  std::to_string(labels.size()) + " labels");
    for (std::uint8_t l : labels)
      if (l >= kNumClasses)
        throw std::invalid_argument("cloud: label " + std::to_string(l) + " out of range");
    for (const Vec3& p : points)
      if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.z))
        throw std::invalid_argument("cloud: non-finite coordinate");
  }
};

inline std::array<std::size_t, kNumClasses> class_counts(const LabeledPointCloud& cloud) {
  std::array<std::size_t, kNumClasses> counts{};
  for (std::uint8_t l : cloud.labels) ++counts[l];
  return counts;
}

inline std::vector<std::size_t> indices_of_class(const LabeledPointCloud& cloud, std::size_t c) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < cloud.size(); ++i)
    if (cloud.labels[i] == c) idx.push_back(i);
  return idx;
}

inline Vec3 centroid(const std::vector<Vec3>& points) {
  Vec3 c;
  for (const Vec3& p : points) c += p;
  const double n = static_cast<double>(points.size());
  return {c.x / n, c.y / n, c.z / n};
}

// Uniform resample to exactly n points: without replacement when the cloud
// is large enough, with replacement when short.
inline LabeledPointCloud resample(const LabeledPointCloud& cloud, std::size_t n, Rng& rng) {
  if (cloud.size() == 0) throw std::invalid_argument("resample: empty cloud");
  std::vector<std::size_t> picks;
  picks.reserve(n);
  if (cloud.size() >= n) {
    std::vector<std::size_t> pool(cloud.size());
    for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = i;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng.uniform_below(pool.size() - i));
      std::swap(pool[i], pool[j]);
      picks.push_back(pool[i]);
    }
  } else {
    for (std::size_t i = 0; i < n; ++i)
      picks.push_back(static_cast<std::size_t>(rng.uniform_below(cloud.size())));
  }
  LabeledPointCloud out;
  out.points.reserve(n);
  out.labels.reserve(n);
  out.provenance.reserve(n);
  for (std::size_t i : picks) {
    out.points.push_back(cloud.points[i]);
    out.labels.push_back(cloud.labels[i]);
    out.provenance.push_back(cloud.provenance.empty() ? static_cast<std::uint32_t>(i)
                                                      : cloud.provenance[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// LPC1 container: magic "LPC1" | u16 version | u32 count
//                 | per point: f32 x, f32 y, f32 z, u8 label
// ---------------------------------------------------------------------------

inline void write_lpc1(std::ostream& os, const LabeledPointCloud& cloud) {
  cloud.validate();
  os.write("LPC1", 4);
  const std::uint16_t version = 1;
  os.write(reinterpret_cast<const char*>(&version), 2);
  const std::uint32_t count = static_cast<std::uint32_t>(cloud.size());
  os.write(reinterpret_cast<const char*>(&count), 4);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const float xyz[3] = {static_cast<float>(cloud.points[i].x),
                          static_cast<float>(cloud.points[i].y),
                          static_cast<float>(cloud.points[i].z)};
    os.write(reinterpret_cast<const char*>(xyz), 12);
    os.write(reinterpret_cast<const char*>(&cloud.labels[i]), 1);
  }
}

inline LabeledPointCloud read_lpc1(std::istream& is) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "LPC1", 4) != 0)
    throw std::runtime_error("lpc1: wrong magic bytes");
  std::uint16_t version = 0;
  is.read(reinterpret_cast<char*>(&version), 2);
  if (version != 1) throw std::runtime_error("lpc1: unsupported version");
  std::uint32_t count = 0;
  is.read(reinterpret_cast<char*>(&count), 4);
  LabeledPointCloud cloud;
  cloud.points.resize(count);
  cloud.labels.resize(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    float xyz[3];
    is.read(reinterpret_cast<char*>(xyz), 12);
    is.read(reinterpret_cast<char*>(&cloud.labels[i]), 1);
    cloud.points[i] = {xyz[0], xyz[1], xyz[2]};
  }
  if (!is) throw std::runtime_error("lpc1: truncated stream");
  cloud.validate();
  return cloud;
}

inline void save_lpc1(const std::string& path, const LabeledPointCloud& cloud) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("lpc1: cannot open '" + path + "' for writing");
  write_lpc1(os, cloud);
  if (!os) throw std::runtime_error("lpc1: write to '" + path + "' failed");
}

inline LabeledPointCloud load_lpc1(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("lpc1: cannot open '" + path + "'");
  return read_lpc1(is);
}

// ---------------------------------------------------------------------------
// ASCII PLY with a per-vertex uchar "label" property, for external viewers.
// ---------------------------------------------------------------------------

inline void save_ply(const std::string& path, const LabeledPointCloud& cloud) {
  cloud.validate();
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("ply: cannot open '" + path + "' for writing");
  os << "ply\nformat ascii 1.0\n";
  os << "element vertex " << cloud.size() << "\n";
  os << "property float x\nproperty float y\nproperty float z\n";
  os << "property uchar label\nend_header\n";
  char line[96];
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    // %.9g preserves float32 exactly, so PLY -> LPC1 round-trips.
    std::snprintf(line, sizeof(line), "%.9g %.9g %.9g %u\n",
                  static_cast<double>(static_cast<float>(cloud.points[i].x)),
                  static_cast<double>(static_cast<float>(cloud.points[i].y)),
                  static_cast<double>(static_cast<float>(cloud.points[i].z)),
                  static_cast<unsigned>(cloud.labels[i]));
    os << line;
  }
}

inline LabeledPointCloud load_ply(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("ply: cannot open '" + path + "'");
  std::string line;
  std::size_t count = 0;
  bool in_header = true;
  std::vector<std::string> properties;
  while (in_header && std::getline(is, line)) {
    std::istringstream ls(line);
    std::string tok;
    ls >> tok;
    if (tok == "element") {
      std::string what;
      ls >> what >> count;
      if (what != "vertex") throw std::runtime_error("ply: only vertex elements supported");
    } else if (tok == "property") {
      std::string type, name;
      ls >> type >> name;
      properties.push_back(name);
    } else if (tok == "format") {
      std::string fmt;
      ls >> fmt;
      if (fmt != "ascii") throw std::runtime_error("ply: only ascii format supported");
    } else if (tok == "end_header") {
      in_header = false;
    }
  }
  if (properties.size() < 4 || properties[0] != "x" || properties[1] != "y" ||
      properties[2] != "z" || properties[3] != "label")
    throw std::runtime_error("ply: expected x y z label vertex properties");
  LabeledPointCloud cloud;
  cloud.points.reserve(count);
  cloud.labels.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    if (!std::getline(is, line)) throw std::runtime_error("ply: truncated vertex list");
    std::istringstream ls(line);
    double x, y, z;
    unsigned label;
    if (!(ls >> x >> y >> z >> label)) throw std::runtime_error("ply: malformed vertex line");
    cloud.points.push_back({static_cast<float>(x), static_cast<float>(y), static_cast<float>(z)});
    cloud.labels.push_back(static_cast<std::uint8_t>(label));
  }
  cloud.validate();
  return cloud;
}

// ---------------------------------------------------------------------------
// FNV-1a content digests (used by dataset manifests).
// ---------------------------------------------------------------------------

inline std::uint64_t fnv1a64(const void* bytes, std::size_t n, std::uint64_t seed = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(bytes);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::string digest_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("digest: cannot open '" + path + "'");
  std::uint64_t h = 0xcbf29ce484222325ull;
  char buf[65536];
  while (is.read(buf, sizeof(buf)) || is.gcount() > 0)
    h = fnv1a64(buf, static_cast<std::size_t>(is.gcount()), h);
  return hex64(h);
}

}  // namespace cardio
