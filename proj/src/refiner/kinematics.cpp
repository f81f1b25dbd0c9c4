#include "artemis/refiner/kinematics.hpp"

#include <cmath>
#include <algorithm>
#include <memory>
#include <stdexcept>

#include "artemis/tensor/tensor.hpp"

namespace artemis {

namespace {

constexpr std::size_t kVars = 2 * kHorizon;

// Forward-mode dual number; nesting two of them gives the Hessian.
template <class T, std::size_t N>
struct Dual {
  T v{};
  std::array<T, N> d{};
};

inline double value_of(double x) { return x; }
template <class T, std::size_t N>
double value_of(const Dual<T, N>& x) {
  return value_of(x.v);
}

template <class T, std::size_t N>
Dual<T, N> operator+(const Dual<T, N>& a, const Dual<T, N>& b) {
  Dual<T, N> r{a.v + b.v, {}};
  for (std::size_t i = 0; i < N; ++i) {
    r.d[i] = a.d[i] + b.d[i];
  }
  return r;
}
template <class T, std::size_t N>
Dual<T, N> operator-(const Dual<T, N>& a, const Dual<T, N>& b) {
  Dual<T, N> r{a.v - b.v, {}};
  for (std::size_t i = 0; i < N; ++i) {
    r.d[i] = a.d[i] - b.d[i];
  }
  return r;
}
template <class T, std::size_t N>
Dual<T, N> operator*(const Dual<T, N>& a, const Dual<T, N>& b) {
  Dual<T, N> r{a.v * b.v, {}};
  for (std::size_t i = 0; i < N; ++i) {
    r.d[i] = a.d[i] * b.v + a.v * b.d[i];
  }
  return r;
}
template <class T, std::size_t N>
Dual<T, N> operator*(const Dual<T, N>& a, double s) {
  Dual<T, N> r{a.v * s, {}};
  for (std::size_t i = 0; i < N; ++i) {
    r.d[i] = a.d[i] * s;
  }
  return r;
}
template <class T, std::size_t N>
Dual<T, N> operator-(const Dual<T, N>& a, double s) {
  Dual<T, N> r = a;
  r.v = r.v - s;
  return r;
}
template <class T, std::size_t N>
Dual<T, N> operator+(const Dual<T, N>& a, double s) {
  Dual<T, N> r = a;
  r.v = r.v + s;
  return r;
}
template <class T, std::size_t N>
Dual<T, N> operator/(const Dual<T, N>& a, const Dual<T, N>& b) {
  const T inv = T{} + 1.0 / b.v;  // T{} + keeps nested types on the dual path
  Dual<T, N> r{a.v * inv, {}};
  for (std::size_t i = 0; i < N; ++i) {
    r.d[i] = (a.d[i] - r.v * b.d[i]) * inv;
  }
  return r;
}
template <class T, std::size_t N>
Dual<T, N> sqrt(const Dual<T, N>& a) {
  using std::sqrt;
  const T s = sqrt(a.v);
  const T half_inv = T{} + 0.5 / s;
  Dual<T, N> r{s, {}};
  for (std::size_t i = 0; i < N; ++i) {
    r.d[i] = a.d[i] * half_inv;
  }
  return r;
}
template <class T, std::size_t N>
Dual<T, N> abs(const Dual<T, N>& a) {
  return value_of(a.v) < 0.0 ? a * -1.0 : a;
}

template <class T, std::size_t N>
Dual<T, N> operator/(double s, const Dual<T, N>& b) {
  Dual<T, N> one{};
  one.v = one.v + s;
  return one / b;
}

// Arithmetic on the inner dual type used above.
template <std::size_t N>
Dual<double, N> operator/(double s, const Dual<double, N>& b) {
  Dual<double, N> r{s / b.v, {}};
  for (std::size_t i = 0; i < N; ++i) {
    r.d[i] = -r.v * b.d[i] / b.v;
  }
  return r;
}

template <class T>
std::array<T, 4> terms_of(const std::array<T, kVars>& p, const PointBlock& anchor, const ProjectionConfig& cfg) {
  using std::abs;
  using std::sqrt;
  T smooth{}, curv{}, accel{}, prox{};
  const double dt2 = cfg.dt * cfg.dt;
  for (std::size_t i = 1; i + 1 < kHorizon; ++i) {
    const T ddx = p[2 * (i + 1)] - p[2 * i] * 2.0 + p[2 * (i - 1)];
    const T ddy = p[2 * (i + 1) + 1] - p[2 * i + 1] * 2.0 + p[2 * (i - 1) + 1];
    smooth = smooth + ddx * ddx + ddy * ddy;

    const T d1x = (p[2 * (i + 1)] - p[2 * (i - 1)]) * (0.5 / cfg.dt);
    const T d1y = (p[2 * (i + 1) + 1] - p[2 * (i - 1) + 1]) * (0.5 / cfg.dt);
    const T d2x = ddx * (1.0 / dt2);
    const T d2y = ddy * (1.0 / dt2);
    const T speed2 = d1x * d1x + d1y * d1y + cfg.speed_eps;
    const T kappa = abs(d1x * d2y - d1y * d2x) / (speed2 * sqrt(speed2));
    if (value_of(kappa) > cfg.kappa_max) {
      const T v = kappa - cfg.kappa_max;
      curv = curv + v * v;
    }
    const T a2 = d2x * d2x + d2y * d2y;
    if (value_of(a2) > cfg.accel_max * cfg.accel_max) {
      const T v = sqrt(a2) - cfg.accel_max;
      accel = accel + v * v;
    }
  }
  for (std::size_t j = 0; j < kVars; ++j) {
    const T e = p[j] - anchor[j];
    prox = prox + e * e;
  }
  return {smooth, curv, accel, prox};
}

double combine(const std::array<double, 4>& t, const ConstraintWeights& w) {
  return w.smooth * t[0] + w.curv * t[1] + w.accel * t[2] + t[3];
}

using H = Dual<Dual<double, kVars>, kVars>;

struct Curvature {
  std::array<PointBlock, 4> grad{};
  std::array<std::array<double, kVars * kVars>, 4> hess{};
};

Curvature term_curvature(const PointBlock& p, const PointBlock& anchor, const ProjectionConfig& cfg) {
  std::array<H, kVars> x{};
  for (std::size_t j = 0; j < kVars; ++j) {
    x[j].v.v = p[j];
    x[j].v.d[j] = 1.0;
    x[j].d[j].v = 1.0;
  }
  const auto t = terms_of(x, anchor, cfg);
  Curvature out;
  for (std::size_t k = 0; k < 4; ++k) {
    for (std::size_t i = 0; i < kVars; ++i) {
      out.grad[k][i] = t[k].d[i].v;
      for (std::size_t j = 0; j < kVars; ++j) {
        out.hess[k][i * kVars + j] = t[k].d[i].d[j];
      }
    }
  }
  return out;
}

using Matrix = std::array<double, kVars * kVars>;

Matrix weighted_hessian(const Curvature& c, const ConstraintWeights& w) {
  Matrix m;
  for (std::size_t i = 0; i < m.size(); ++i) {
    m[i] = w.smooth * c.hess[0][i] + w.curv * c.hess[1][i] + w.accel * c.hess[2][i] + c.hess[3][i];
  }
  return m;
}

// Cholesky solve of (m + shift I) x = rhs; false when not positive definite.
bool cholesky_solve(const Matrix& m, double shift, const PointBlock& rhs, PointBlock& x) {
  Matrix l{};
  for (std::size_t i = 0; i < kVars; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      double s = m[i * kVars + j] + (i == j ? shift : 0.0);
      for (std::size_t k = 0; k < j; ++k) {
        s -= l[i * kVars + k] * l[j * kVars + k];
      }
      if (i == j) {
        if (!(s > 0.0)) {
          return false;
        }
        l[i * kVars + i] = std::sqrt(s);
      } else {
        l[i * kVars + j] = s / l[j * kVars + j];
      }
    }
  }
  PointBlock z;
  for (std::size_t i = 0; i < kVars; ++i) {
    double s = rhs[i];
    for (std::size_t k = 0; k < i; ++k) {
      s -= l[i * kVars + k] * z[k];
    }
    z[i] = s / l[i * kVars + i];
  }
  for (std::size_t i = kVars; i-- > 0;) {
    double s = z[i];
    for (std::size_t k = i + 1; k < kVars; ++k) {
      s -= l[k * kVars + i] * x[k];
    }
    x[i] = s / l[i * kVars + i];
  }
  return true;
}

// Smallest shift (0 first, then growing) that makes the system solvable.
double regularized_solve(const Matrix& m, const PointBlock& rhs, PointBlock& x) {
  double scale = 0.0;
  for (std::size_t i = 0; i < kVars; ++i) {
    scale = std::max(scale, std::abs(m[i * kVars + i]));
  }
  double shift = 0.0;
  for (int attempt = 0; attempt < 40; ++attempt) {
    if (cholesky_solve(m, shift, rhs, x)) {
      return shift;
    }
    shift = shift == 0.0 ? 1e-10 * std::max(scale, 1.0) : shift * 10.0;
  }
  throw std::runtime_error("kinematic projection: Hessian could not be regularized");
}

PointBlock descend(const PointBlock& start, const ConstraintWeights& w, const ProjectionConfig& cfg,
                ProjectionTrace* trace) {
  PointBlock y = start;
  double j0 = combine(projection_terms(y, start, cfg), w);
  if (trace != nullptr) {
    trace->objective.push_back(j0);
  }
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    const Curvature c = term_curvature(y, start, cfg);
    PointBlock g;
    double gnorm = 0.0;
    for (std::size_t i = 0; i < kVars; ++i) {
      g[i] = w.smooth * c.grad[0][i] + w.curv * c.grad[1][i] + w.accel * c.grad[2][i] + c.grad[3][i];
      gnorm = std::max(gnorm, std::abs(g[i]));
    }
    double accepted = 0.0;
    if (gnorm > 0.0) {
      PointBlock dir;
      regularized_solve(weighted_hessian(c, w), g, dir);
      double alpha = cfg.step;
      for (std::size_t h = 0; h <= cfg.max_halvings; ++h, alpha *= 0.5) {
        PointBlock trial;
        for (std::size_t j = 0; j < kVars; ++j) {
          trial[j] = y[j] - alpha * dir[j];
        }
        const double jt = combine(projection_terms(trial, start, cfg), w);
        if (jt <= j0) {
          accepted = alpha;
          y = trial;
          j0 = jt;
          break;
        }
      }
    }
    if (trace != nullptr) {
      trace->objective.push_back(j0);
      trace->steps.push_back(accepted);
    }
  }
  return y;
}

}  // namespace

double point_curvature(const PointBlock& p, std::size_t i, double dt, double speed_eps) {
  const double d1x = (p[2 * (i + 1)] - p[2 * (i - 1)]) / (2.0 * dt);
  const double d1y = (p[2 * (i + 1) + 1] - p[2 * (i - 1) + 1]) / (2.0 * dt);
  const double d2x = (p[2 * (i + 1)] - 2.0 * p[2 * i] + p[2 * (i - 1)]) / (dt * dt);
  const double d2y = (p[2 * (i + 1) + 1] - 2.0 * p[2 * i + 1] + p[2 * (i - 1) + 1]) / (dt * dt);
  const double s2 = d1x * d1x + d1y * d1y + speed_eps;
  return std::abs(d1x * d2y - d1y * d2x) / (s2 * std::sqrt(s2));
}

double point_acceleration(const PointBlock& p, std::size_t i, double dt) {
  const double d2x = (p[2 * (i + 1)] - 2.0 * p[2 * i] + p[2 * (i - 1)]) / (dt * dt);
  const double d2y = (p[2 * (i + 1) + 1] - 2.0 * p[2 * i + 1] + p[2 * (i - 1) + 1]) / (dt * dt);
  return std::hypot(d2x, d2y);
}

std::array<double, 4> projection_terms(const PointBlock& p, const PointBlock& anchor, const ProjectionConfig& cfg) {
  std::array<double, kVars> x = p;
  return terms_of(x, anchor, cfg);
}

double projection_objective(const PointBlock& p, const PointBlock& anchor, const ConstraintWeights& w,
                            const ProjectionConfig& cfg) {
  return combine(projection_terms(p, anchor, cfg), w);
}

PointBlock project_points(const PointBlock& start, const ConstraintWeights& w, const ProjectionConfig& cfg,
                          ProjectionTrace* trace) {
  return descend(start, w, cfg, trace);
}

Var kinematic_project(Var y, Var weights, const ProjectionConfig& cfg) {
  Graph& g = *y.graph();
  if (weights.graph() != &g) {
    throw std::invalid_argument("kinematic_project: inputs live in different graphs");
  }
  const Shape& s = y.shape();
  if (s.size() != 3 || s[1] != kHorizon || s[2] != 3 || weights.value().size() != 3) {
    throw DimensionError("kinematic_project: trajectories " + shape_str(s) + " must be [B x 8 x 3], weights [3]");
  }
  const std::size_t batch = s[0];
  const Tensor& wv = weights.value();
  const ConstraintWeights w{wv[0], wv[1], wv[2]};
  auto solutions = std::make_shared<std::vector<PointBlock>>();
  solutions->reserve(batch);
  Tensor out = y.value();
  for (std::size_t b = 0; b < batch; ++b) {
    PointBlock start;
    for (std::size_t t = 0; t < kHorizon; ++t) {
      start[2 * t] = out[(b * kHorizon + t) * 3];
      start[2 * t + 1] = out[(b * kHorizon + t) * 3 + 1];
    }
    solutions->push_back(descend(start, w, cfg, nullptr));
    const PointBlock& r = solutions->back();
    for (std::size_t t = 0; t < kHorizon; ++t) {
      out[(b * kHorizon + t) * 3] = r[2 * t];
      out[(b * kHorizon + t) * 3 + 1] = r[2 * t + 1];
    }
  }
  const auto iy = y.id();
  const auto iw = weights.id();
  // Implicit differentiation at the minimizer: grad J(y*) = 0 gives
  // dy*/dy' = 2 H^-1 and dy*/dw_j = -H^-1 grad T_j.
  return g.push("kinematic_project", std::move(out), {iy, iw}, [=](Graph& gr, std::uint32_t self) {
    const Tensor& gout = gr.grad(self);
    const Tensor& yin = gr.value(iy);
    double* gy = gr.grad_buffer(iy);
    double* gw = gr.grad_buffer(iw);
    for (std::size_t b = 0; b < batch; ++b) {
      PointBlock lambda;
      PointBlock anchor;
      for (std::size_t t = 0; t < kHorizon; ++t) {
        lambda[2 * t] = gout[(b * kHorizon + t) * 3];
        lambda[2 * t + 1] = gout[(b * kHorizon + t) * 3 + 1];
        anchor[2 * t] = yin[(b * kHorizon + t) * 3];
        anchor[2 * t + 1] = yin[(b * kHorizon + t) * 3 + 1];
      }
      const Curvature c = term_curvature((*solutions)[b], anchor, cfg);
      PointBlock u;
      regularized_solve(weighted_hessian(c, w), lambda, u);
      if (gy != nullptr) {
        for (std::size_t t = 0; t < kHorizon; ++t) {
          gy[(b * kHorizon + t) * 3] += 2.0 * u[2 * t];
          gy[(b * kHorizon + t) * 3 + 1] += 2.0 * u[2 * t + 1];
          gy[(b * kHorizon + t) * 3 + 2] += gout[(b * kHorizon + t) * 3 + 2];
        }
      }
      if (gw != nullptr) {
        for (std::size_t j = 0; j < 3; ++j) {
          double dot = 0.0;
          for (std::size_t i = 0; i < kVars; ++i) {
            dot += u[i] * c.grad[j][i];
          }
          gw[j] -= dot;
        }
      }
    }
  });
}

}  // namespace artemis
