#pragma once

// Finite-difference verification of reverse-mode gradients. Analytic gradients come from
// the f32 engine; central differences are taken on the same expression instantiated in f64.

#include "wcell/graph.hpp"
#include "wcell/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace wcell {

struct GradCheckOptions {
  double delta = 1e-3;
  double rtol = 1e-3;
  double atol = 1e-4;
  /// Elements checked per input; 0 checks every element.
  std::size_t max_elements = 0;
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  std::string name;
  std::size_t checked = 0;
  std::size_t failed = 0;
  double worst_excess = 0.0;  ///< max of |analytic - numeric| / tolerance
  bool ok() const { return checked > 0 && failed == 0; }
};

/// Compares `analytic[i]` with (f(x_i + δ) - f(x_i - δ)) / 2δ for every slot, where each
/// slot points into the f64 state read by `evaluate`.
inline GradCheckResult compare_with_central_differences(std::string name, const std::vector<double*>& slots,
                                                        const std::vector<double>& analytic,
                                                        const std::function<double()>& evaluate,
                                                        const GradCheckOptions& opt) {
  GradCheckResult r;
  r.name = std::move(name);
  for (std::size_t i = 0; i < slots.size(); ++i) {
    double& x = *slots[i];
    const double saved = x;
    x = saved + opt.delta;
    const double up = evaluate();
    x = saved - opt.delta;
    const double down = evaluate();
    x = saved;
    const double numeric = (up - down) / (2.0 * opt.delta);
    const double tol = std::max(opt.rtol * std::abs(numeric), opt.atol);
    const double excess = std::abs(analytic[i] - numeric) / tol;
    r.worst_excess = std::max(r.worst_excess, excess);
    ++r.checked;
    if (excess > 1.0) ++r.failed;
  }
  return r;
}

/// Chooses which flat indices of an n-element tensor to probe.
inline std::vector<Index> probe_indices(Index n, std::size_t max_elements, std::mt19937_64& rng) {
  std::vector<Index> idx(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
  if (max_elements == 0 || idx.size() <= max_elements) return idx;
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(max_elements);
  std::sort(idx.begin(), idx.end());
  return idx;
}

/// Gradient check of a scalar expression of free inputs. `build` is a generic callable
/// `(Graph<S>&, const std::vector<Var<S>>&) -> Var<S>` instantiated for S = float and double.
template <typename Build>
GradCheckResult check_gradients(std::string name, Build build, std::vector<TensorD> inputs,
                                const GradCheckOptions& opt = {}) {
  Graph<float> gf;
  std::vector<Var<float>> vf;
  for (const auto& t : inputs) vf.push_back(gf.leaf(t.cast<float>()));
  Var<float> loss = build(gf, vf);
  gf.backward(loss);

  std::mt19937_64 rng(opt.seed);
  std::vector<double*> slots;
  std::vector<double> analytic;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const TensorF& grad = gf.grad(vf[k]);
    for (Index i : probe_indices(inputs[k].size(), opt.max_elements, rng)) {
      slots.push_back(inputs[k].data() + i);
      analytic.push_back(static_cast<double>(grad[i]));
    }
  }
  auto evaluate = [&]() {
    Graph<double> gd;
    std::vector<Var<double>> vd;
    for (const auto& t : inputs) vd.push_back(gd.constant(t));
    return build(gd, vd).value().item();
  };
  return compare_with_central_differences(std::move(name), slots, analytic, evaluate, opt);
}

/// Contracts an arbitrary-shape output with a fixed random tensor so any op can be checked
/// through a scalar.
template <typename Scalar>
Var<Scalar> random_projection(Var<Scalar> out, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Tensor<double> weights = Tensor<double>::normal(out.shape(), rng);
  return sum(mul(out, out.graph->constant(weights.template cast<Scalar>())));
}

/// Runs the built-in suite: every differentiable op plus a full small-network objective.
std::vector<GradCheckResult> run_gradcheck_suite(std::uint64_t seed);

}  // namespace wcell
