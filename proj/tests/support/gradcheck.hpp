#pragma once

// Central finite-difference oracle, kept independent of the graph's backward rules.

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "artemis/common/rng.hpp"
#include "artemis/tensor/graph.hpp"
#include "artemis/tensor/ops.hpp"
#include "artemis/tensor/tensor.hpp"

namespace artemis::testing {

struct GradCheckResult {
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  std::size_t checked = 0;
};

inline double rel_err(double analytic, double numeric, double floor = 1e-3) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Compares `analytic` against central differences of `loss` over the values in `x`.
/// `loss` must read `x` afresh on every call. At most `max_checks` evenly spaced entries are probed.
inline GradCheckResult finite_difference_check(const std::function<double()>& loss, std::span<double> x,
                                               std::span<const double> analytic, double eps = 1e-6,
                                               std::size_t max_checks = 64) {
  GradCheckResult r;
  const std::size_t stride = std::max<std::size_t>(1, x.size() / max_checks);
  for (std::size_t i = 0; i < x.size(); i += stride) {
    const double saved = x[i];
    x[i] = saved + eps;
    const double up = loss();
    x[i] = saved - eps;
    const double down = loss();
    x[i] = saved;
    const double numeric = (up - down) / (2.0 * eps);
    r.max_rel_err = std::max(r.max_rel_err, rel_err(analytic[i], numeric));
    r.max_abs_err = std::max(r.max_abs_err, std::abs(analytic[i] - numeric));
    ++r.checked;
  }
  return r;
}

/// Runs `build` once with gradients to get the analytic parameter gradients, then
/// probes every parameter of `params` with finite differences.
inline GradCheckResult check_parameter_gradients(ParameterSet& params, const std::function<Var(Graph&)>& build,
                                                 double eps = 1e-6, std::size_t max_checks_per_param = 24) {
  params.zero_grad();
  {
    Graph g;
    Var loss = build(g);
    g.backward(loss);
  }
  auto eval = [&]() {
    Graph g(false);
    return build(g).value().item();
  };
  GradCheckResult total;
  for (auto& p : params) {
    const std::vector<double> analytic = p.grad.values();
    auto r = finite_difference_check(eval, p.value.data(), analytic, eps, max_checks_per_param);
    total.max_rel_err = std::max(total.max_rel_err, r.max_rel_err);
    total.max_abs_err = std::max(total.max_abs_err, r.max_abs_err);
    total.checked += r.checked;
  }
  return total;
}

/// Same as above but for graph inputs: each tensor in `inputs` becomes a leaf.
inline GradCheckResult check_input_gradients(std::vector<Tensor>& inputs,
                                             const std::function<Var(Graph&, std::span<const Var>)>& build,
                                             double eps = 1e-6, std::size_t max_checks_per_input = 64) {
  std::vector<std::vector<double>> analytic;
  {
    Graph g;
    std::vector<Var> leaves;
    for (const auto& t : inputs) {
      leaves.push_back(g.leaf(t));
    }
    Var loss = build(g, leaves);
    g.backward(loss);
    for (const auto& l : leaves) {
      analytic.push_back(l.grad().values());
    }
  }
  auto eval = [&]() {
    Graph g(false);
    std::vector<Var> leaves;
    for (const auto& t : inputs) {
      leaves.push_back(g.constant(t));
    }
    return build(g, leaves).value().item();
  };
  GradCheckResult total;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    auto r = finite_difference_check(eval, inputs[i].data(), analytic[i], eps, max_checks_per_input);
    total.max_rel_err = std::max(total.max_rel_err, r.max_rel_err);
    total.max_abs_err = std::max(total.max_abs_err, r.max_abs_err);
    total.checked += r.checked;
  }
  return total;
}

/// Weighted sum with fixed pseudo-random coefficients, so every output entry matters.
inline Var probe_loss(Var y, std::uint64_t seed = 99) {
  Rng rng(seed);
  Tensor w(y.shape().empty() ? Shape{} : y.shape(), 0.0);
  for (auto& v : w.values()) {
    v = rng.uniform(-1.0, 1.0);
  }
  return sum(mul(y, y.graph()->constant(std::move(w))));
}

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape), 0.0);
  for (auto& v : t.values()) {
    v = rng.uniform(lo, hi);
  }
  return t;
}

}  // namespace artemis::testing
