#pragma once

#include <cmath>
#include <map>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "cardio/tensor.hpp"

namespace cardio {

// Named trainable parameters. Iteration order is the lexicographic name
// order, which fixes the update order and keeps runs reproducible.
class ParamStore {
 public:
  Tensor& add(const std::string& name, Tensor param) {
    if (params_.count(name)) throw std::invalid_argument("param '" + name + "' already registered");
    return params_.emplace(name, std::move(param)).first->second;
  }

  Tensor& get(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::invalid_argument("unknown param '" + name + "'");
    return it->second;
  }

  const Tensor& get(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::invalid_argument("unknown param '" + name + "'");
    return it->second;
  }

  bool contains(const std::string& name) const { return params_.count(name) > 0; }
  std::size_t size() const { return params_.size(); }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::map<std::string, Tensor> params_;
};

// Linear warmup from 0 to the base rate over `warmup_epochs`, then cosine
// decay from base to min over the remaining epochs. `t` is measured in
// (possibly fractional) epochs.
struct LrSchedule {
  double base_lr = 2e-4;
  double min_lr = 1e-5;
  double warmup_epochs = 20.0;
  double total_epochs = 420.0;

  double at(double t) const {
    if (warmup_epochs > 0.0 && t < warmup_epochs) return base_lr * (t / warmup_epochs);
    const double span = total_epochs - warmup_epochs;
    if (span <= 0.0) return min_lr;
    const double phase = std::min(1.0, (t - warmup_epochs) / span);
    return min_lr + 0.5 * (base_lr - min_lr) * (1.0 + std::cos(std::numbers::pi * phase));
  }
};

// AdamW state: per-parameter moments plus the schedule position.
struct OptimState {
  LrSchedule schedule;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 5e-4;
  std::size_t steps_per_epoch = 1;
  std::uint64_t step = 0;

  std::map<std::string, std::vector<double>> moment1;
  std::map<std::string, std::vector<double>> moment2;

  double current_lr() const {
    return schedule.at(static_cast<double>(step) / static_cast<double>(steps_per_epoch));
  }
};

// One AdamW step over every parameter in `params`. Parameters without a
// gradient entry must be listed in `frozen`; a non-finite gradient rejects
// the whole step. Decoupled weight decay, standard bias correction.
inline void optimizer_step(OptimState& state, ParamStore& params, const Gradients& grads,
                           const std::vector<std::string>& frozen = {}) {
  for (auto& [name, param] : params) {
    if (!grads.contains(param)) {
      bool is_frozen = false;
      for (const auto& f : frozen)
        if (f == name) is_frozen = true;
      if (!is_frozen)
        throw std::invalid_argument("optimizer_step: no gradient for param '" + name +
                                    "' and it is not frozen");
      continue;
    }
    const Tensor g = grads.get(param);
    for (double v : g.data())
      if (!std::isfinite(v))
        throw std::runtime_error("optimizer_step: non-finite gradient for param '" + name +
                                 "', step rejected");
  }

  const double lr = state.current_lr();
  const std::uint64_t t = state.step + 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(t));

  for (auto& [name, param] : params) {
    if (!grads.contains(param)) continue;
    const Tensor g = grads.get(param);
    auto& m1 = state.moment1[name];
    auto& m2 = state.moment2[name];
    if (m1.empty()) m1.assign(param.numel(), 0.0);
    if (m2.empty()) m2.assign(param.numel(), 0.0);

    std::vector<double> updated(param.data());
    for (std::size_t i = 0; i < updated.size(); ++i) {
      const double gi = g.data()[i];
      m1[i] = state.beta1 * m1[i] + (1.0 - state.beta1) * gi;
      m2[i] = state.beta2 * m2[i] + (1.0 - state.beta2) * gi * gi;
      const double mhat = m1[i] / bc1;
      const double vhat = m2[i] / bc2;
      updated[i] -= lr * (mhat / (std::sqrt(vhat) + state.eps) + state.weight_decay * updated[i]);
    }
    param = Tensor::param(param.shape(), std::move(updated));
  }
  state.step = t;
}

}  // namespace cardio
