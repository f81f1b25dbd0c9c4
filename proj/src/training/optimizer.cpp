#include "artemis/training/optimizer.hpp"

#include <cmath>

namespace artemis {

AdamW::AdamW(ParameterSet& params, AdamWConfig cfg) : params_(params), cfg_(cfg) {
  for (const Parameter& p : params_) {
    m_.emplace_back(p.value.shape(), 0.0);
    v_.emplace_back(p.value.shape(), 0.0);
    counts_.push_back(0);
  }
}

void AdamW::step(const std::function<bool(const Parameter&)>& filter) {
  ++t_;
  std::size_t i = 0;
  for (Parameter& p : params_) {
    const std::size_t idx = i++;
    if (filter && !filter(p)) {
      continue;
    }
    const std::size_t n = ++counts_[idx];
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(n));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(n));
    auto& m = m_[idx].values();
    auto& v = v_[idx].values();
    auto& w = p.value.values();
    const auto& gr = p.grad.values();
    const double decay = p.decay ? cfg_.lr * cfg_.weight_decay : 0.0;
    for (std::size_t k = 0; k < w.size(); ++k) {
      const double gk = gr.empty() ? 0.0 : gr[k];
      m[k] = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * gk;
      v[k] = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * gk * gk;
      w[k] -= decay * w[k];
      w[k] -= cfg_.lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + cfg_.eps);
    }
  }
}

double clip_grad_norm(ParameterSet& params, double max_norm, const std::function<bool(const Parameter&)>& filter) {
  double sq = 0.0;
  for (const Parameter& p : params) {
    if (filter && !filter(p)) {
      continue;
    }
    for (double g : p.grad.values()) {
      sq += g * g;
    }
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double s = max_norm / norm;
    for (Parameter& p : params) {
      if (filter && !filter(p)) {
        continue;
      }
      for (double& g : p.grad.values()) {
        g *= s;
      }
    }
  }
  return norm;
}

}  // namespace artemis
