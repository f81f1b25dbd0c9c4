#include "artemis/training/losses.hpp"

#include <cmath>
#include <numbers>

#include "artemis/common/errors.hpp"
#include "artemis/tensor/ops.hpp"

namespace artemis {

namespace {

// Residual with the heading channel wrapped to (-pi, pi].
Var residual(Var pred, Var gt) {
  const Shape& s = pred.shape();
  if (s.size() != 3 || s[2] != 3 || gt.shape() != s) {
    throw DimensionError("trajectory loss: prediction " + shape_str(s) + " and target " + shape_str(gt.shape()));
  }
  Var d = sub(pred, gt);
  Var parts[] = {slice(d, 2, 0, 2), wrap_angle(slice(d, 2, 2, 1))};
  return concat(parts, 2);
}

}  // namespace

void LossWeights::validate() const {
  for (double w : {sem, cls, box, traj, nll}) {
    if (!(w >= 0.0) || !std::isfinite(w)) {
      throw ConfigError("loss weights must be finite and nonnegative");
    }
  }
}

Var traj_l1_loss(Var pred, Var gt) { return mean(abs(residual(pred, gt))); }

Var nll_loss(Var mu, Var sigma, Var gt) {
  Var r = residual(mu, gt);
  if (sigma.shape() != mu.shape()) {
    throw DimensionError("nll_loss: sigma " + shape_str(sigma.shape()) + " for mu " + shape_str(mu.shape()));
  }
  Var log_sigma = log(sigma);
  Var z = mul(r, exp(scale(log_sigma, -1.0)));
  Var per = add(scale(square(z), 0.5), log_sigma);
  return add_scalar(mean(per), 0.5 * std::log(2.0 * std::numbers::pi));
}

Var total_loss(Graph& g, const LossTerms& terms, const LossWeights& w) {
  w.validate();
  Var total = g.constant(Tensor::scalar(0.0));
  auto add_term = [&](const std::optional<Var>& term, double weight) {
    if (term && weight != 0.0) {
      total = add(total, scale(*term, weight));
    }
  };
  add_term(terms.traj, w.traj);
  add_term(terms.nll, w.nll);
  add_term(terms.sem, w.sem);
  add_term(terms.cls, w.cls);
  add_term(terms.box, w.box);
  return total;
}

}  // namespace artemis
