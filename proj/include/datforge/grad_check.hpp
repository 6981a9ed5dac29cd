// Central finite-difference verification of analytic gradients.
#pragma once

#include <cmath>
#include <vector>

#include "datforge/tensor.hpp"

namespace datforge::numerics {

// f: (ModelState<T>&, Tape<T>*) -> scalar Tensor<T>. Evaluates the analytic
// gradient once via the tape, then perturbs every parameter element by +-step
// and returns the maximum relative error
//   |analytic - central| / max(|analytic|, |central|, 1e-12).
template <std::floating_point T, typename F>
double grad_check(F&& f, ModelState<T>& point, T step) {
  point.zero_grads();
  Tape<T> tape;
  Tensor<T> loss = f(point, &tape);
  if (!std::isfinite(static_cast<double>(loss.scalar())))
    raise(ErrorKind::numeric, "grad_check: non-finite loss at evaluation point");
  tape.backward(loss);

  std::vector<std::vector<T>> analytic;
  analytic.reserve(point.size());
  for (auto& [name, t] : point) {
    t.ensure_grad();
    analytic.emplace_back(t.grad().begin(), t.grad().end());
  }

  double worst = 0.0;
  std::size_t pi = 0;
  for (auto& [name, t] : point) {
    auto values = t.values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const T saved = values[i];
      values[i] = saved + step;
      const double up = static_cast<double>(f(point, nullptr).scalar());
      values[i] = saved - step;
      const double down = static_cast<double>(f(point, nullptr).scalar());
      values[i] = saved;
      if (!std::isfinite(up) || !std::isfinite(down))
        raise(ErrorKind::numeric, "grad_check: non-finite loss while perturbing '", name, "'");
      const double central = (up - down) / (2.0 * static_cast<double>(step));
      const double a = static_cast<double>(analytic[pi][i]);
      const double denom = std::max({std::abs(a), std::abs(central), 1e-12});
      worst = std::max(worst, std::abs(a - central) / denom);
    }
    ++pi;
  }
  return worst;
}

}  // namespace datforge::numerics
