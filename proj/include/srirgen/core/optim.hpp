#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "srirgen/core/layers.hpp"

namespace srirgen {

struct LrSchedule {
  double initial = 3e-4;
  double factor = 0.98;
  int every_n_epochs = 2;

  // initial * factor^floor(epoch / every_n_epochs)
  double at(int epoch) const {
    if (epoch < 0) throw std::invalid_argument("lr schedule: negative epoch");
    return initial * std::pow(factor, epoch / every_n_epochs);
  }
};

inline double lr_decay(const LrSchedule& schedule, int epoch) {
  return schedule.at(epoch);
}

template <typename T>
struct AdamState {
  std::vector<Tensor<T>> first_moment;
  std::vector<Tensor<T>> second_moment;
  long step = 0;
  double lr = 3e-4;
  LrSchedule schedule;
};

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// One bias-corrected Adam update over `params` using their accumulated grads.
template <typename T>
void adam_step(AdamState<T>& state, const std::vector<Param<T>*>& params,
               const AdamHyper& hp = {}) {
  if (state.first_moment.empty()) {
    for (auto* p : params) {
      state.first_moment.emplace_back(p->value.shape());
      state.second_moment.emplace_back(p->value.shape());
    }
  }
  if (state.first_moment.size() != params.size()) {
    throw ShapeError("adam: optimizer state holds " +
                     std::to_string(state.first_moment.size()) +
                     " moments for " + std::to_string(params.size()) + " parameters");
  }
  for (auto* p : params) {
    if (!p->grad.all_finite()) {
      throw NumericError("adam: non-finite gradient in parameter " + p->name);
    }
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(hp.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(hp.beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Param<T>& p = *params[k];
    Tensor<T>& m = state.first_moment[k];
    Tensor<T>& v = state.second_moment[k];
    p.grad.require_same_shape(m, "adam moment");
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      const double mi = hp.beta1 * m[i] + (1.0 - hp.beta1) * g;
      const double vi = hp.beta2 * v[i] + (1.0 - hp.beta2) * g * g;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double mhat = mi / c1, vhat = vi / c2;
      p.value[i] = static_cast<T>(p.value[i] - state.lr * mhat / (std::sqrt(vhat) + hp.eps));
    }
  }
}

}  // namespace srirgen
