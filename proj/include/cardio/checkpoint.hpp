#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "cardio/optim.hpp"
#include "cardio/tensor.hpp"

namespace cardio {

// Binary checkpoint container, little-endian throughout:
//   magic "CPT1" | u16 version | u32 config_len | config bytes
//   | u64 step | u32 steps_per_epoch
//   | f64 base_lr, min_lr, warmup_epochs, total_epochs, beta1, beta2, eps, weight_decay
//   | u32 n_params | for each (sorted by name):
//       u16 name_len | name | u8 ndim | u64 dims[] | f64 values[]
//       | u8 has_moments | [f64 m1[], f64 m2[]]
// Round-trips are bit-exact.
struct Checkpoint {
  std::string config;  // resolved key=value text, free-form
  OptimState optim;
  ParamStore params;
};

namespace detail {

template <typename T>
void put(std::ostream& os, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T take(std::istream& is) {
  T value{};
  is.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  return value;
}

inline void put_doubles(std::ostream& os, const std::vector<double>& v) {
  os.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * 8));
}

inline std::vector<double> take_doubles(std::istream& is, std::size_t n) {
  std::vector<double> v(n);
  is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * 8));
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  return v;
}

}  // namespace detail

inline void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("checkpoint: cannot open '" + path + "' for writing");
  os.write("CPT1", 4);
  detail::put<std::uint16_t>(os, 1);
  detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(ckpt.config.size()));
  os.write(ckpt.config.data(), static_cast<std::streamsize>(ckpt.config.size()));
  detail::put<std::uint64_t>(os, ckpt.optim.step);
  detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(ckpt.optim.steps_per_epoch));
  detail::put<double>(os, ckpt.optim.schedule.base_lr);
  detail::put<double>(os, ckpt.optim.schedule.min_lr);
  detail::put<double>(os, ckpt.optim.schedule.warmup_epochs);
  detail::put<double>(os, ckpt.optim.schedule.total_epochs);
  detail::put<double>(os, ckpt.optim.beta1);
  detail::put<double>(os, ckpt.optim.beta2);
  detail::put<double>(os, ckpt.optim.eps);
  detail::put<double>(os, ckpt.optim.weight_decay);
  detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(ckpt.params.size()));
  for (const auto& [name, tensor] : ckpt.params) {
    detail::put<std::uint16_t>(os, static_cast<std::uint16_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::put<std::uint8_t>(os, static_cast<std::uint8_t>(tensor.ndim()));
    for (std::size_t d : tensor.shape()) detail::put<std::uint64_t>(os, d);
    detail::put_doubles(os, tensor.data());
    const auto m1 = ckpt.optim.moment1.find(name);
    const auto m2 = ckpt.optim.moment2.find(name);
    const bool has_moments = m1 != ckpt.optim.moment1.end() && m2 != ckpt.optim.moment2.end();
    detail::put<std::uint8_t>(os, has_moments ? 1 : 0);
    if (has_moments) {
      detail::put_doubles(os, m1->second);
      detail::put_doubles(os, m2->second);
    }
  }
  if (!os) throw std::runtime_error("checkpoint: write to '" + path + "' failed");
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open '" + path + "'");
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "CPT1", 4) != 0)
    throw std::runtime_error("checkpoint: '" + path + "' has wrong magic bytes");
  const auto version = detail::take<std::uint16_t>(is);
  if (version != 1)
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));

  Checkpoint ckpt;
  const auto config_len = detail::take<std::uint32_t>(is);
  ckpt.config.resize(config_len);
  is.read(ckpt.config.data(), config_len);
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  ckpt.optim.step = detail::take<std::uint64_t>(is);
  ckpt.optim.steps_per_epoch = detail::take<std::uint32_t>(is);
  ckpt.optim.schedule.base_lr = detail::take<double>(is);
  ckpt.optim.schedule.min_lr = detail::take<double>(is);
  ckpt.optim.schedule.warmup_epochs = detail::take<double>(is);
  ckpt.optim.schedule.total_epochs = detail::take<double>(is);
  ckpt.optim.beta1 = detail::take<double>(is);
  ckpt.optim.beta2 = detail::take<double>(is);
  ckpt.optim.eps = detail::take<double>(is);
  ckpt.optim.weight_decay = detail::take<double>(is);
  const auto n_params = detail::take<std::uint32_t>(is);
  for (std::uint32_t p = 0; p < n_params; ++p) {
    const auto name_len = detail::take<std::uint16_t>(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    const auto ndim = detail::take<std::uint8_t>(is);
    Shape shape(ndim);
    for (auto& d : shape) d = static_cast<std::size_t>(detail::take<std::uint64_t>(is));
    ckpt.params.add(name, Tensor::param(shape, detail::take_doubles(is, numel_of(shape))));
    if (detail::take<std::uint8_t>(is)) {
      ckpt.optim.moment1[name] = detail::take_doubles(is, numel_of(shape));
      ckpt.optim.moment2[name] = detail::take_doubles(is, numel_of(shape));
    }
  }
  return ckpt;
}

}  // namespace cardio
