// SGD with classical momentum: v <- momentum * v + g; theta <- theta - lr * v.
#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "datforge/tensor.hpp"

namespace datforge::numerics {

template <std::floating_point T>
class SgdOptimizer {
 public:
  explicit SgdOptimizer(T momentum = T(0.9)) : momentum_(momentum) {}

  T momentum() const { return momentum_; }

  // Applies one step to every parameter in `params` that requires a gradient.
  // Momentum buffers persist across calls, keyed by parameter name.
  void step(ModelState<T>& params, T lr) {
    if (lr <= T(0)) raise(ErrorKind::argument, "sgd_step: lr must be > 0");
    for (auto& [name, t] : params) {
      if (!t.requires_grad()) continue;
      if (!t.has_grad())
        raise(ErrorKind::missing, "sgd_step: missing gradient for parameter '", name, "'");
      auto& v = velocity_[name];
      if (v.empty()) v.assign(static_cast<std::size_t>(t.size()), T(0));
      if (v.size() != static_cast<std::size_t>(t.size()))
        raise(ErrorKind::shape, "sgd_step: momentum buffer size mismatch for '", name, "'");
      auto g = t.grad();
      auto theta = t.values();
      for (std::size_t i = 0; i < v.size(); ++i) {
        v[i] = momentum_ * v[i] + g[i];
        theta[i] -= lr * v[i];
      }
    }
  }

  // Velocity access for checkpointing.
  bool has_velocity(const std::string& name) const { return velocity_.count(name) != 0; }
  const std::vector<T>& velocity(const std::string& name) const { return velocity_.at(name); }
  void set_velocity(const std::string& name, std::vector<T> v) {
    velocity_[name] = std::move(v);
  }

 private:
  T momentum_;
  std::unordered_map<std::string, std::vector<T>> velocity_;
};

}  // namespace datforge::numerics
