#pragma once

#include <functional>
#include <vector>

#include "mvsc/errors.hpp"
#include "mvsc/tensor.hpp"

namespace mvsc {

// Compares reverse-mode gradients of a scalar-valued function against
// central finite differences. `f` must rebuild its graph from the current
// values of `inputs` on every call; inputs must be leaf tensors with
// requires_grad set. Returns the max over all coordinates of
//   |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
inline double grad_check(const std::function<Tensor()>& f,
                         const std::vector<Tensor>& inputs,
                         double step = 1e-5) {
  for (const Tensor& in : inputs) {
    require(in.requires_grad(), "grad_check: inputs must require gradients");
  }
  for (Tensor in : inputs) in.zero_grad();
  Tensor loss = f();
  require(loss.size() == 1, "grad_check: f must be scalar-valued");
  backward(loss);

  std::vector<std::vector<double>> analytic;
  analytic.reserve(inputs.size());
  for (const Tensor& in : inputs) analytic.push_back(in.grad());

  double max_rel = 0.0;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    Tensor in = inputs[t];
    std::vector<double>& vals = in.mutable_values();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const double saved = vals[i];
      vals[i] = saved + step;
      const double up = f().item();
      vals[i] = saved - step;
      const double down = f().item();
      vals[i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double a = analytic[t][i];
      const double denom = std::max(1e-8, std::abs(a) + std::abs(numeric));
      max_rel = std::max(max_rel, std::abs(a - numeric) / denom);
    }
  }
  return max_rel;
}

}  // namespace mvsc
