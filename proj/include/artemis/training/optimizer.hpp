#pragma once

#include <functional>
#include <vector>

#include "artemis/tensor/graph.hpp"

namespace artemis {

struct AdamWConfig {
  double lr = 2e-4;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with decoupled weight decay, applied only to parameters flagged `decay`.
class AdamW {
 public:
  AdamW(ParameterSet& params, AdamWConfig cfg);

  /// Updates every parameter accepted by `filter` (all when empty) from its grad.
  void step(const std::function<bool(const Parameter&)>& filter = {});
  std::size_t steps() const { return t_; }
  const AdamWConfig& config() const { return cfg_; }

 private:
  ParameterSet& params_;
  AdamWConfig cfg_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  std::vector<std::size_t> counts_;  // per-parameter step count for bias correction
  std::size_t t_ = 0;
};

/// Scales gradients of the filtered parameters so their global L2 norm is at
/// most `max_norm`. Returns the norm before clipping.
double clip_grad_norm(ParameterSet& params, double max_norm, const std::function<bool(const Parameter&)>& filter = {});

}  // namespace artemis
