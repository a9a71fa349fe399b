#pragma once

#include "wcell/graph.hpp"

#include <cmath>
#include <cstdint>
#include <map>
#include <string>

namespace wcell {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const {
    if (!(lr >= 0)) throw std::invalid_argument("learning rate must be >= 0");
    if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1) throw std::invalid_argument("betas must be in [0, 1)");
    if (!(eps > 0)) throw std::invalid_argument("adam eps must be > 0");
  }
};

/// First/second moment estimates per trainable parameter, keyed by name.
template <typename Scalar>
struct AdamState {
  std::map<std::string, Tensor<Scalar>> first;
  std::map<std::string, Tensor<Scalar>> second;
  std::int64_t step = 0;
};

/// One bias-corrected Adam update over every trainable parameter, then zeroes the gradients.
template <typename Scalar>
void adam_step(ParamStore<Scalar>& params, AdamState<Scalar>& state, const AdamConfig& config) {
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(config.beta1, t);
  const double correction2 = 1.0 - std::pow(config.beta2, t);
  const auto b1 = static_cast<Scalar>(config.beta1);
  const auto b2 = static_cast<Scalar>(config.beta2);
  const auto step_size = static_cast<Scalar>(config.lr / correction1);
  const auto inv_sqrt_c2 = static_cast<Scalar>(1.0 / std::sqrt(correction2));
  const auto eps = static_cast<Scalar>(config.eps);
  params.for_each([&](Parameter<Scalar>& p) {
    if (!p.trainable) return;
    p.value.require_same_shape(p.grad, "adam_step");
    auto [it1, fresh1] = state.first.try_emplace(p.name, p.value.shape());
    auto [it2, fresh2] = state.second.try_emplace(p.name, p.value.shape());
    it1->second.require_same_shape(p.value, "adam_step moment");
    it2->second.require_same_shape(p.value, "adam_step moment");
    auto m = it1->second.array();
    auto v = it2->second.array();
    auto g = p.grad.array();
    m = b1 * m + (Scalar(1) - b1) * g;
    v = b2 * v + (Scalar(1) - b2) * g.square();
    p.value.array() -= step_size * m / (v.sqrt() * inv_sqrt_c2 + eps);
    p.grad.set_zero();
  });
}

}  // namespace wcell
