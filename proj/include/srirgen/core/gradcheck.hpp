#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "srirgen/core/layers.hpp"

namespace srirgen {

// A differentiable computation exposed for finite-difference checking.
// `forward` reads the current values of `inputs` and `params`; `backward`
// receives the upstream gradient, returns one gradient per input, and
// accumulates parameter gradients (they are zeroed before the call).
struct GradCheckTarget {
  std::vector<Tensor<double>*> inputs;
  std::vector<Param<double>*> params;
  std::function<Tensor<double>()> forward;
  std::function<std::vector<Tensor<double>>(const Tensor<double>&)> backward;
};

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::string worst;  // "<input|param> <name>[index]"
  std::size_t checked = 0;
};

// Components with both values below `floor` are judged on absolute error
// scaled by the floor, so that roundoff residue on a structurally zero
// gradient does not count as a 100% mismatch.
inline double relative_error(double analytic, double numeric, double floor = 1e-8) {
  return std::abs(analytic - numeric) /
         std::max({std::abs(analytic), std::abs(numeric), floor});
}

// Compares analytic gradients of sum(r * forward()) against central
// differences, for a fixed random projection r (r = 1 for scalar outputs).
// `stride` > 1 checks every stride-th element of each tensor.
inline GradCheckReport grad_check_report(GradCheckTarget& target, double epsilon,
                                         std::uint64_t seed = 7,
                                         std::size_t stride = 1) {
  Tensor<double> y = target.forward();
  if (!y.all_finite()) throw NumericError("grad_check: non-finite forward output");
  Tensor<double> r(y.shape(), 1.0);
  if (y.size() > 1) {
    Rng rng(seed);
    for (auto& v : r) v = rng.normal();
  }
  auto loss = [&]() {
    Tensor<double> out = target.forward();
    if (!out.all_finite()) {
      throw NumericError("grad_check: non-finite intermediate during perturbation");
    }
    double acc = 0;
    for (std::size_t i = 0; i < out.size(); ++i) acc += r[i] * out[i];
    return acc;
  };
  for (auto* p : target.params) p->zero_grad();
  target.forward();
  std::vector<Tensor<double>> input_grads = target.backward(r);
  std::vector<Tensor<double>> param_grads;
  for (auto* p : target.params) param_grads.push_back(p->grad);

  // Backprop roundoff grows with the gradient scale, so the floor does too.
  double scale = 1.0;
  for (const auto& g : input_grads) {
    for (double v : g) scale = std::max(scale, std::abs(v));
  }
  for (const auto& g : param_grads) {
    for (double v : g) scale = std::max(scale, std::abs(v));
  }
  const double floor = 1e-8 * scale;

  GradCheckReport rep;
  auto probe = [&](double& slot, double analytic, const std::string& label) {
    const double saved = slot;
    slot = saved + epsilon;
    const double lp = loss();
    slot = saved - epsilon;
    const double lm = loss();
    slot = saved;
    const double fd = (lp - lm) / (2.0 * epsilon);
    const double err = relative_error(analytic, fd, floor);
    ++rep.checked;
    if (err > rep.max_relative_error) {
      rep.max_relative_error = err;
      rep.worst = label;
    }
  };
  for (std::size_t k = 0; k < target.inputs.size(); ++k) {
    Tensor<double>& x = *target.inputs[k];
    for (std::size_t i = 0; i < x.size(); i += stride) {
      probe(x[i], input_grads.at(k)[i],
            "input " + std::to_string(k) + "[" + std::to_string(i) + "]");
    }
  }
  for (std::size_t k = 0; k < target.params.size(); ++k) {
    Param<double>& p = *target.params[k];
    for (std::size_t i = 0; i < p.value.size(); i += stride) {
      probe(p.value[i], param_grads[k][i],
            "param " + p.name + "[" + std::to_string(i) + "]");
    }
  }
  return rep;
}

// Finite-difference check of a single-input layer (64-bit only).
inline double grad_check(Layer<double>& layer, Tensor<double> input,
                         double epsilon = 1e-6, Mode mode = Mode::kTrain,
                         std::uint64_t seed = 7) {
  Cache<double> cache;
  GradCheckTarget t;
  t.inputs = {&input};
  t.params = layer.params();
  t.forward = [&]() {
    Rng rng(seed);  // identical dropout masks on every evaluation
    return layer.forward(input, cache, mode, &rng);
  };
  t.backward = [&](const Tensor<double>& g) {
    return std::vector<Tensor<double>>{layer.backward(cache, g)};
  };
  return grad_check_report(t, epsilon, seed).max_relative_error;
}

}  // namespace srirgen
