#pragma once

#include <optional>

#include "artemis/tensor/graph.hpp"

namespace artemis {

struct LossWeights {
  double sem = 1.0;
  double cls = 1.0;
  double box = 0.5;
  double traj = 15.0;
  double nll = 0.2;

  /// Throws ConfigError on a negative weight.
  void validate() const;
};

/// Mean absolute error over every component; heading errors are wrapped first.
/// pred and gt are [B x H x 3].
Var traj_l1_loss(Var pred, Var gt);

/// Mean Gaussian negative log-likelihood, 0.5 z^2 + log sigma + 0.5 log 2 pi,
/// with the heading residual wrapped.
Var nll_loss(Var mu, Var sigma, Var gt);

/// Absent terms contribute nothing whatever their weight.
struct LossTerms {
  std::optional<Var> traj;
  std::optional<Var> nll;
  std::optional<Var> sem;
  std::optional<Var> cls;
  std::optional<Var> box;
};

/// Weighted sum of the present terms; a constant zero when none are present.
Var total_loss(Graph& g, const LossTerms& terms, const LossWeights& w);

}  // namespace artemis
