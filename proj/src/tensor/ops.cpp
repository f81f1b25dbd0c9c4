#include "artemis/tensor/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <stdexcept>

#include "artemis/common/angles.hpp"
#include "artemis/tensor/kernels.hpp"

namespace artemis {

namespace {

Graph& graph_of(Var a) {
  if (!a.valid()) {
    throw std::invalid_argument("operation on an empty Var");
  }
  return *a.graph();
}

Graph& graph_of(Var a, Var b) {
  if (a.graph() != b.graph() || !a.valid()) {
    throw std::invalid_argument("operands belong to different graphs");
  }
  return *a.graph();
}

void require_same_shape(const char* op, Var a, Var b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

std::size_t normalize_axis(int axis, std::size_t rank, const char* op) {
  const int r = static_cast<int>(rank);
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for rank " +
                         std::to_string(rank));
  }
  return static_cast<std::size_t>(a);
}

struct AxisSplit {
  std::size_t outer = 1;
  std::size_t n = 1;
  std::size_t inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) {
    s.outer *= shape[i];
  }
  s.n = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) {
    s.inner *= shape[i];
  }
  return s;
}

// y = f(x) elementwise with dy/dx = df(x, y).
template <typename F, typename DF>
Var unary(const char* kind, Var x, F f, DF df) {
  Graph& g = graph_of(x);
  const Tensor& xv = x.value();
  Tensor y(xv.shape(), 0.0);
  for (std::size_t i = 0; i < xv.size(); ++i) {
    y[i] = f(xv[i]);
  }
  const auto xid = x.id();
  return g.push(kind, std::move(y), {xid}, [xid, df](Graph& gr, std::uint32_t self) {
    double* gx = gr.grad_buffer(xid);
    if (gx == nullptr) {
      return;
    }
    const Tensor& gy = gr.grad(self);
    const Tensor& xv2 = gr.value(xid);
    const Tensor& yv = gr.value(self);
    for (std::size_t i = 0; i < gy.size(); ++i) {
      gx[i] += gy[i] * df(xv2[i], yv[i]);
    }
  });
}

void add_into(double* dst, const Tensor& src, double s = 1.0) {
  if (dst == nullptr) {
    return;
  }
  for (std::size_t i = 0; i < src.size(); ++i) {
    dst[i] += s * src[i];
  }
}

double stable_sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Var add(Var a, Var b) {
  Graph& g = graph_of(a, b);
  require_same_shape("add", a, b);
  Tensor y = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) {
    y[i] += bv[i];
  }
  const auto ia = a.id();
  const auto ib = b.id();
  return g.push("add", std::move(y), {ia, ib}, [ia, ib](Graph& gr, std::uint32_t self) {
    const Tensor& gy = gr.grad(self);
    add_into(gr.grad_buffer(ia), gy);
    add_into(gr.grad_buffer(ib), gy);
  });
}

Var sub(Var a, Var b) {
  Graph& g = graph_of(a, b);
  require_same_shape("sub", a, b);
  Tensor y = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) {
    y[i] -= bv[i];
  }
  const auto ia = a.id();
  const auto ib = b.id();
  return g.push("sub", std::move(y), {ia, ib}, [ia, ib](Graph& gr, std::uint32_t self) {
    const Tensor& gy = gr.grad(self);
    add_into(gr.grad_buffer(ia), gy);
    add_into(gr.grad_buffer(ib), gy, -1.0);
  });
}

Var mul(Var a, Var b) {
  Graph& g = graph_of(a, b);
  require_same_shape("mul", a, b);
  Tensor y = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) {
    y[i] *= bv[i];
  }
  const auto ia = a.id();
  const auto ib = b.id();
  return g.push("mul", std::move(y), {ia, ib}, [ia, ib](Graph& gr, std::uint32_t self) {
    const Tensor& gy = gr.grad(self);
    const Tensor& av = gr.value(ia);
    const Tensor& bv2 = gr.value(ib);
    if (double* ga = gr.grad_buffer(ia)) {
      for (std::size_t i = 0; i < gy.size(); ++i) {
        ga[i] += gy[i] * bv2[i];
      }
    }
    if (double* gb = gr.grad_buffer(ib)) {
      for (std::size_t i = 0; i < gy.size(); ++i) {
        gb[i] += gy[i] * av[i];
      }
    }
  });
}

Var scale(Var a, double s) {
  return unary("scale", a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Var add_scalar(Var a, double s) {
  return unary("add_scalar", a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Var add_row(Var a, Var b) {
  Graph& g = graph_of(a, b);
  const std::size_t n = a.value().cols();
  if (b.value().size() != n) {
    throw DimensionError("add_row: row of " + shape_str(b.shape()) + " does not match " + shape_str(a.shape()));
  }
  Tensor y = a.value();
  const Tensor& bv = b.value();
  for (std::size_t r = 0; r < y.rows(); ++r) {
    for (std::size_t c = 0; c < n; ++c) {
      y[r * n + c] += bv[c];
    }
  }
  const auto ia = a.id();
  const auto ib = b.id();
  return g.push("add_row", std::move(y), {ia, ib}, [ia, ib, n](Graph& gr, std::uint32_t self) {
    const Tensor& gy = gr.grad(self);
    add_into(gr.grad_buffer(ia), gy);
    if (double* gb = gr.grad_buffer(ib)) {
      for (std::size_t r = 0; r < gy.rows(); ++r) {
        for (std::size_t c = 0; c < n; ++c) {
          gb[c] += gy[r * n + c];
        }
      }
    }
  });
}

Var matmul(Var a, Var b) {
  Graph& g = graph_of(a, b);
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0]) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(sa) + " and " + shape_str(sb));
  }
  const std::size_t m = sa[0];
  const std::size_t k = sa[1];
  const std::size_t n = sb[1];
  Tensor y(Shape{m, n}, 0.0);
  kernels::gemm_nn(a.value().data().data(), b.value().data().data(), y.data().data(), m, k, n, false);
  const auto ia = a.id();
  const auto ib = b.id();
  return g.push("matmul", std::move(y), {ia, ib}, [ia, ib, m, k, n](Graph& gr, std::uint32_t self) {
    const double* gy = gr.grad(self).data().data();
    if (double* ga = gr.grad_buffer(ia)) {
      kernels::gemm_nt(gy, gr.value(ib).data().data(), ga, m, n, k, true);
    }
    if (double* gb = gr.grad_buffer(ib)) {
      kernels::gemm_tn(gr.value(ia).data().data(), gy, gb, k, m, n, true);
    }
  });
}

Var affine(Var x, Var w, Var b) {
  Graph& g = graph_of(x, w);
  graph_of(x, b);
  const Tensor& xv = x.value();
  const Shape& sw = w.shape();
  if (sw.size() != 2 || xv.rank() == 0 || xv.cols() != sw[0] || b.value().size() != sw[1]) {
    throw DimensionError("affine: input " + shape_str(xv.shape()) + " weight " + shape_str(sw) + " bias " +
                         shape_str(b.shape()));
  }
  const std::size_t rows = xv.rows();
  const std::size_t in = sw[0];
  const std::size_t out = sw[1];
  Shape ys = xv.shape();
  ys.back() = out;
  Tensor y(ys, 0.0);
  const double* bias = b.value().data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy(bias, bias + out, y.data().data() + r * out);
  }
  kernels::gemm_nn(xv.data().data(), w.value().data().data(), y.data().data(), rows, in, out, true);
  const auto ix = x.id();
  const auto iw = w.id();
  const auto ib = b.id();
  return g.push("affine", std::move(y), {ix, iw, ib}, [ix, iw, ib, rows, in, out](Graph& gr, std::uint32_t self) {
    const double* gy = gr.grad(self).data().data();
    if (double* gx = gr.grad_buffer(ix)) {
      kernels::gemm_nt(gy, gr.value(iw).data().data(), gx, rows, out, in, true);
    }
    if (double* gw = gr.grad_buffer(iw)) {
      kernels::gemm_tn(gr.value(ix).data().data(), gy, gw, in, rows, out, true);
    }
    if (double* gb = gr.grad_buffer(ib)) {
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < out; ++c) {
          gb[c] += gy[r * out + c];
        }
      }
    }
  });
}

Var relu(Var x) {
  return unary("relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
               [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Var sigmoid(Var x) {
  return unary("sigmoid", x, stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Var tanh(Var x) {
  return unary("tanh", x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Var softplus(Var x) {
  return unary(
      "softplus", x,
      [](double v) { return v > 0.0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v)); },
      [](double v, double) { return stable_sigmoid(v); });
}

Var exp(Var x) {
  return unary("exp", x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Var log(Var x) {
  return unary("log", x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Var square(Var x) {
  return unary("square", x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Var abs(Var x) {
  return unary("abs", x, [](double v) { return std::abs(v); },
               [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Var wrap_angle(Var x) {
  return unary("wrap_angle", x, wrap_to_pi, [](double, double) { return 1.0; });
}

Var sum(Var x) {
  Graph& g = graph_of(x);
  double s = 0.0;
  for (double v : x.value().data()) {
    s += v;
  }
  const auto ix = x.id();
  return g.push("sum", Tensor::scalar(s), {ix}, [ix](Graph& gr, std::uint32_t self) {
    double* gx = gr.grad_buffer(ix);
    if (gx == nullptr) {
      return;
    }
    const double gy = gr.grad(self)[0];
    const std::size_t n = gr.value(ix).size();
    for (std::size_t i = 0; i < n; ++i) {
      gx[i] += gy;
    }
  });
}

Var mean(Var x) { return scale(sum(x), 1.0 / static_cast<double>(x.value().size())); }

Var mean_last(Var x) {
  Graph& g = graph_of(x);
  const Tensor& xv = x.value();
  if (xv.rank() == 0) {
    throw DimensionError("mean_last: scalar input");
  }
  Shape ys(xv.shape().begin(), xv.shape().end() - 1);
  const std::size_t n = xv.cols();
  Tensor y(ys, 0.0);
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
      s += xv[r * n + c];
    }
    y[r] = s / static_cast<double>(n);
  }
  const auto ix = x.id();
  return g.push("mean_last", std::move(y), {ix}, [ix, n](Graph& gr, std::uint32_t self) {
    double* gx = gr.grad_buffer(ix);
    if (gx == nullptr) {
      return;
    }
    const Tensor& gy = gr.grad(self);
    const double inv = 1.0 / static_cast<double>(n);
    for (std::size_t r = 0; r < gy.size(); ++r) {
      for (std::size_t c = 0; c < n; ++c) {
        gx[r * n + c] += gy[r] * inv;
      }
    }
  });
}

Var softmax(Var x, int axis) {
  Graph& g = graph_of(x);
  const Tensor& xv = x.value();
  const std::size_t ax = normalize_axis(axis, xv.rank(), "softmax");
  const AxisSplit s = split_at(xv.shape(), ax);
  Tensor y(xv.shape(), 0.0);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.n * s.inner + in;
      double mx = xv[base];
      for (std::size_t j = 1; j < s.n; ++j) {
        mx = std::max(mx, xv[base + j * s.inner]);
      }
      double z = 0.0;
      for (std::size_t j = 0; j < s.n; ++j) {
        const double e = std::exp(xv[base + j * s.inner] - mx);
        y[base + j * s.inner] = e;
        z += e;
      }
      for (std::size_t j = 0; j < s.n; ++j) {
        y[base + j * s.inner] /= z;
      }
    }
  }
  const auto ix = x.id();
  return g.push("softmax", std::move(y), {ix}, [ix, s](Graph& gr, std::uint32_t self) {
    double* gx = gr.grad_buffer(ix);
    if (gx == nullptr) {
      return;
    }
    const Tensor& gy = gr.grad(self);
    const Tensor& yv = gr.value(self);
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t in = 0; in < s.inner; ++in) {
        const std::size_t base = o * s.n * s.inner + in;
        double dot = 0.0;
        for (std::size_t j = 0; j < s.n; ++j) {
          dot += gy[base + j * s.inner] * yv[base + j * s.inner];
        }
        for (std::size_t j = 0; j < s.n; ++j) {
          const std::size_t idx = base + j * s.inner;
          gx[idx] += yv[idx] * (gy[idx] - dot);
        }
      }
    }
  });
}

Var log_softmax(Var x) {
  Graph& g = graph_of(x);
  const Tensor& xv = x.value();
  const std::size_t n = xv.cols();
  Tensor y(xv.shape(), 0.0);
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    const double* row = xv.data().data() + r * n;
    const double mx = *std::max_element(row, row + n);
    double z = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
      z += std::exp(row[c] - mx);
    }
    const double lz = mx + std::log(z);
    for (std::size_t c = 0; c < n; ++c) {
      y[r * n + c] = row[c] - lz;
    }
  }
  const auto ix = x.id();
  return g.push("log_softmax", std::move(y), {ix}, [ix, n](Graph& gr, std::uint32_t self) {
    double* gx = gr.grad_buffer(ix);
    if (gx == nullptr) {
      return;
    }
    const Tensor& gy = gr.grad(self);
    const Tensor& yv = gr.value(self);
    for (std::size_t r = 0; r < gy.rows(); ++r) {
      double gs = 0.0;
      for (std::size_t c = 0; c < n; ++c) {
        gs += gy[r * n + c];
      }
      for (std::size_t c = 0; c < n; ++c) {
        gx[r * n + c] += gy[r * n + c] - std::exp(yv[r * n + c]) * gs;
      }
    }
  });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  Graph& g = graph_of(x, gain);
  graph_of(x, bias);
  const Tensor& xv = x.value();
  const std::size_t n = xv.cols();
  if (gain.value().size() != n || bias.value().size() != n) {
    throw DimensionError("layer_norm: gain/bias " + shape_str(gain.shape()) + "/" + shape_str(bias.shape()) +
                         " do not match " + shape_str(xv.shape()));
  }
  const std::size_t rows = xv.rows();
  auto xhat = std::make_shared<std::vector<double>>(xv.size());
  auto rstd = std::make_shared<std::vector<double>>(rows);
  Tensor y(xv.shape(), 0.0);
  const Tensor& gv = gain.value();
  const Tensor& bv = bias.value();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.data().data() + r * n;
    double mu = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
      mu += row[c];
    }
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
      const double d = row[c] - mu;
      var += d * d;
    }
    var /= static_cast<double>(n);
    const double rs = 1.0 / std::sqrt(var + eps);
    (*rstd)[r] = rs;
    for (std::size_t c = 0; c < n; ++c) {
      const double h = (row[c] - mu) * rs;
      (*xhat)[r * n + c] = h;
      y[r * n + c] = h * gv[c] + bv[c];
    }
  }
  const auto ix = x.id();
  const auto ig = gain.id();
  const auto ib = bias.id();
  return g.push("layer_norm", std::move(y), {ix, ig, ib},
                [ix, ig, ib, n, rows, xhat, rstd](Graph& gr, std::uint32_t self) {
                  const Tensor& gy = gr.grad(self);
                  const Tensor& gv2 = gr.value(ig);
                  if (double* gg = gr.grad_buffer(ig)) {
                    for (std::size_t r = 0; r < rows; ++r) {
                      for (std::size_t c = 0; c < n; ++c) {
                        gg[c] += gy[r * n + c] * (*xhat)[r * n + c];
                      }
                    }
                  }
                  if (double* gb = gr.grad_buffer(ib)) {
                    for (std::size_t r = 0; r < rows; ++r) {
                      for (std::size_t c = 0; c < n; ++c) {
                        gb[c] += gy[r * n + c];
                      }
                    }
                  }
                  double* gx = gr.grad_buffer(ix);
                  if (gx == nullptr) {
                    return;
                  }
                  const double inv_n = 1.0 / static_cast<double>(n);
                  for (std::size_t r = 0; r < rows; ++r) {
                    double m1 = 0.0;
                    double m2 = 0.0;
                    for (std::size_t c = 0; c < n; ++c) {
                      const double dh = gy[r * n + c] * gv2[c];
                      m1 += dh;
                      m2 += dh * (*xhat)[r * n + c];
                    }
                    m1 *= inv_n;
                    m2 *= inv_n;
                    for (std::size_t c = 0; c < n; ++c) {
                      const double dh = gy[r * n + c] * gv2[c];
                      gx[r * n + c] += (*rstd)[r] * (dh - m1 - (*xhat)[r * n + c] * m2);
                    }
                  }
                });
}

Var attention(Var q, Var k, Var v, std::span<const std::uint8_t> allowed) {
  const Shape& sq = q.shape();
  const Shape& sk = k.shape();
  const Shape& sv = v.shape();
  if (sq.size() != 2 || sk.size() != 2 || sv.size() != 2 || sq[1] != sk[1] || sk[0] != sv[0]) {
    throw DimensionError("attention: incompatible shapes q" + shape_str(sq) + " k" + shape_str(sk) + " v" +
                         shape_str(sv));
  }
  AttentionMask mask;
  if (!allowed.empty()) {
    if (allowed.size() != sq[0] * sk[0]) {
      throw DimensionError("attention: mask has " + std::to_string(allowed.size()) + " entries, expected " +
                           std::to_string(sq[0] * sk[0]));
    }
    mask = AttentionMask::explicit_mask(std::vector<std::uint8_t>(allowed.begin(), allowed.end()));
  }
  Var q3 = reshape(q, {1, sq[0], sq[1]});
  Var k3 = reshape(k, {1, sk[0], sk[1]});
  Var v3 = reshape(v, {1, sv[0], sv[1]});
  Var out = multi_head_attention(q3, k3, v3, 1, mask);
  return reshape(out, {sq[0], sv[1]});
}

Var multi_head_attention(Var q, Var k, Var v, std::size_t heads, const AttentionMask& mask) {
  Graph& g = graph_of(q, k);
  graph_of(q, v);
  const Shape& sq = q.shape();
  const Shape& sk = k.shape();
  const Shape& sv = v.shape();
  if (sq.size() != 3 || sk.size() != 3 || sv.size() != 3 || sq[0] != sk[0] || sk[0] != sv[0] || sq[2] != sk[2] ||
      sk[1] != sv[1] || heads == 0 || sq[2] % heads != 0 || sv[2] % heads != 0) {
    throw DimensionError("multi_head_attention: incompatible shapes q" + shape_str(sq) + " k" + shape_str(sk) +
                         " v" + shape_str(sv) + " heads " + std::to_string(heads));
  }
  const std::size_t batch = sq[0];
  const std::size_t lq = sq[1];
  const std::size_t lk = sk[1];
  const std::size_t d = sq[2];
  const std::size_t dv = sv[2];
  const std::size_t dh = d / heads;
  const std::size_t dvh = dv / heads;
  const double scale_factor = 1.0 / std::sqrt(static_cast<double>(dh));

  using Kind = AttentionMask::Kind;
  if (mask.kind == Kind::kKeyLengths && mask.key_lengths.size() != batch) {
    throw DimensionError("multi_head_attention: key_lengths has " + std::to_string(mask.key_lengths.size()) +
                         " entries for batch " + std::to_string(batch));
  }
  if (mask.kind == Kind::kExplicit && mask.allowed.size() != batch * lq * lk) {
    throw DimensionError("multi_head_attention: explicit mask size mismatch");
  }
  if (mask.kind == Kind::kCausal && lq != lk) {
    throw DimensionError("multi_head_attention: causal mask needs square attention");
  }

  auto permitted = [&mask, lq, lk](std::size_t b, std::size_t i, std::size_t j) {
    switch (mask.kind) {
      case Kind::kNone:
        return true;
      case Kind::kCausal:
        return j <= i;
      case Kind::kKeyLengths:
        return j < mask.key_lengths[b];
      case Kind::kExplicit:
        return mask.allowed[(b * lq + i) * lk + j] != 0;
    }
    return true;
  };

  // Probabilities are kept for backward: [B, heads, Lq, Lk].
  auto probs = std::make_shared<std::vector<double>>(batch * heads * lq * lk, 0.0);
  auto empty_batch = std::make_shared<std::vector<std::uint8_t>>(batch, 0);
  Tensor out(Shape{batch, lq, dv}, 0.0);

  std::vector<double> qh(lq * dh);
  std::vector<double> kh(lk * dh);
  std::vector<double> vh(lk * dvh);
  std::vector<double> oh(lq * dvh);
  const Tensor& qv = q.value();
  const Tensor& kv = k.value();
  const Tensor& vv = v.value();

  for (std::size_t b = 0; b < batch; ++b) {
    if (mask.kind == Kind::kKeyLengths && mask.key_lengths[b] == 0) {
      (*empty_batch)[b] = 1;
      continue;
    }
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t i = 0; i < lq; ++i) {
        std::copy_n(qv.data().data() + (b * lq + i) * d + h * dh, dh, qh.data() + i * dh);
      }
      for (std::size_t j = 0; j < lk; ++j) {
        std::copy_n(kv.data().data() + (b * lk + j) * d + h * dh, dh, kh.data() + j * dh);
        std::copy_n(vv.data().data() + (b * lk + j) * dv + h * dvh, dvh, vh.data() + j * dvh);
      }
      double* p = probs->data() + ((b * heads + h) * lq) * lk;
      kernels::gemm_nt(qh.data(), kh.data(), p, lq, dh, lk, false);
      for (std::size_t i = 0; i < lq; ++i) {
        double* row = p + i * lk;
        bool any = false;
        for (std::size_t j = 0; j < lk; ++j) {
          row[j] *= scale_factor;
          if (permitted(b, i, j)) {
            any = true;
          } else {
            row[j] += kMaskedLogit;
          }
        }
        if (!any) {
          throw std::domain_error("attention: query row " + std::to_string(i) + " of batch entry " +
                                  std::to_string(b) + " has every key masked");
        }
        const double mx = *std::max_element(row, row + lk);
        double z = 0.0;
        for (std::size_t j = 0; j < lk; ++j) {
          row[j] = std::exp(row[j] - mx);
          z += row[j];
        }
        for (std::size_t j = 0; j < lk; ++j) {
          row[j] /= z;
        }
      }
      kernels::gemm_nn(p, vh.data(), oh.data(), lq, lk, dvh, false);
      for (std::size_t i = 0; i < lq; ++i) {
        std::copy_n(oh.data() + i * dvh, dvh, out.data().data() + (b * lq + i) * dv + h * dvh);
      }
    }
  }

  const auto iq = q.id();
  const auto ik = k.id();
  const auto iv = v.id();
  return g.push(
      "multi_head_attention", std::move(out), {iq, ik, iv},
      [=](Graph& gr, std::uint32_t self) {
        const Tensor& gy = gr.grad(self);
        const Tensor& qv2 = gr.value(iq);
        const Tensor& kv2 = gr.value(ik);
        const Tensor& vv2 = gr.value(iv);
        double* gq = gr.grad_buffer(iq);
        double* gk = gr.grad_buffer(ik);
        double* gvb = gr.grad_buffer(iv);
        std::vector<double> qh2(lq * dh);
        std::vector<double> kh2(lk * dh);
        std::vector<double> vh2(lk * dvh);
        std::vector<double> go(lq * dvh);
        std::vector<double> dp(lq * lk);
        std::vector<double> dqh(lq * dh);
        std::vector<double> dkh(lk * dh);
        std::vector<double> dvh2(lk * dvh);
        for (std::size_t b = 0; b < batch; ++b) {
          if ((*empty_batch)[b] != 0) {
            continue;
          }
          for (std::size_t h = 0; h < heads; ++h) {
            for (std::size_t i = 0; i < lq; ++i) {
              std::copy_n(qv2.data().data() + (b * lq + i) * d + h * dh, dh, qh2.data() + i * dh);
              std::copy_n(gy.data().data() + (b * lq + i) * dv + h * dvh, dvh, go.data() + i * dvh);
            }
            for (std::size_t j = 0; j < lk; ++j) {
              std::copy_n(kv2.data().data() + (b * lk + j) * d + h * dh, dh, kh2.data() + j * dh);
              std::copy_n(vv2.data().data() + (b * lk + j) * dv + h * dvh, dvh, vh2.data() + j * dvh);
            }
            const double* p = probs->data() + ((b * heads + h) * lq) * lk;
            if (gvb != nullptr) {
              kernels::gemm_tn(p, go.data(), dvh2.data(), lk, lq, dvh, false);
              for (std::size_t j = 0; j < lk; ++j) {
                double* dst = gvb + (b * lk + j) * dv + h * dvh;
                for (std::size_t c = 0; c < dvh; ++c) {
                  dst[c] += dvh2[j * dvh + c];
                }
              }
            }
            if (gq == nullptr && gk == nullptr) {
              continue;
            }
            kernels::gemm_nt(go.data(), vh2.data(), dp.data(), lq, dvh, lk, false);
            for (std::size_t i = 0; i < lq; ++i) {
              double dot = 0.0;
              for (std::size_t j = 0; j < lk; ++j) {
                dot += dp[i * lk + j] * p[i * lk + j];
              }
              for (std::size_t j = 0; j < lk; ++j) {
                dp[i * lk + j] = p[i * lk + j] * (dp[i * lk + j] - dot) * scale_factor;
              }
            }
            if (gq != nullptr) {
              kernels::gemm_nn(dp.data(), kh2.data(), dqh.data(), lq, lk, dh, false);
              for (std::size_t i = 0; i < lq; ++i) {
                double* dst = gq + (b * lq + i) * d + h * dh;
                for (std::size_t c = 0; c < dh; ++c) {
                  dst[c] += dqh[i * dh + c];
                }
              }
            }
            if (gk != nullptr) {
              kernels::gemm_tn(dp.data(), qh2.data(), dkh.data(), lk, lq, dh, false);
              for (std::size_t j = 0; j < lk; ++j) {
                double* dst = gk + (b * lk + j) * d + h * dh;
                for (std::size_t c = 0; c < dh; ++c) {
                  dst[c] += dkh[j * dh + c];
                }
              }
            }
          }
        }
      });
}

Var concat(std::span<const Var> parts, int axis) {
  if (parts.empty()) {
    throw std::invalid_argument("concat: no inputs");
  }
  Graph& g = graph_of(parts[0]);
  const Shape& s0 = parts[0].shape();
  const std::size_t ax = normalize_axis(axis, s0.size(), "concat");
  Shape ys = s0;
  ys[ax] = 0;
  std::vector<std::uint32_t> ids;
  std::vector<std::size_t> widths;
  for (const Var& p : parts) {
    graph_of(parts[0], p);
    const Shape& sp = p.shape();
    bool ok = sp.size() == s0.size();
    for (std::size_t i = 0; ok && i < sp.size(); ++i) {
      ok = i == ax || sp[i] == s0[i];
    }
    if (!ok) {
      throw DimensionError("concat: " + shape_str(sp) + " incompatible with " + shape_str(s0) + " on axis " +
                           std::to_string(ax));
    }
    ys[ax] += sp[ax];
    ids.push_back(p.id());
  }
  const AxisSplit total = split_at(ys, ax);
  for (const Var& p : parts) {
    widths.push_back(p.shape()[ax] * total.inner);
  }
  Tensor y(ys, 0.0);
  const std::size_t row = total.n * total.inner;
  std::size_t offset = 0;
  for (std::size_t pi = 0; pi < parts.size(); ++pi) {
    const Tensor& pv = parts[pi].value();
    for (std::size_t o = 0; o < total.outer; ++o) {
      std::copy_n(pv.data().data() + o * widths[pi], widths[pi], y.data().data() + o * row + offset);
    }
    offset += widths[pi];
  }
  return g.push("concat", std::move(y), ids, [ids, widths, total, row](Graph& gr, std::uint32_t self) {
    const Tensor& gy = gr.grad(self);
    std::size_t off = 0;
    for (std::size_t pi = 0; pi < ids.size(); ++pi) {
      if (double* gp = gr.grad_buffer(ids[pi])) {
        for (std::size_t o = 0; o < total.outer; ++o) {
          const double* src = gy.data().data() + o * row + off;
          double* dst = gp + o * widths[pi];
          for (std::size_t c = 0; c < widths[pi]; ++c) {
            dst[c] += src[c];
          }
        }
      }
      off += widths[pi];
    }
  });
}

Var slice(Var x, int axis, std::size_t start, std::size_t length) {
  Graph& g = graph_of(x);
  const Shape& sx = x.shape();
  const std::size_t ax = normalize_axis(axis, sx.size(), "slice");
  if (length == 0 || start + length > sx[ax]) {
    throw DimensionError("slice: [" + std::to_string(start) + ", " + std::to_string(start + length) +
                         ") out of range for " + shape_str(sx) + " axis " + std::to_string(ax));
  }
  const AxisSplit s = split_at(sx, ax);
  Shape ys = sx;
  ys[ax] = length;
  Tensor y(ys, 0.0);
  const std::size_t src_row = s.n * s.inner;
  const std::size_t dst_row = length * s.inner;
  const std::size_t off = start * s.inner;
  for (std::size_t o = 0; o < s.outer; ++o) {
    std::copy_n(x.value().data().data() + o * src_row + off, dst_row, y.data().data() + o * dst_row);
  }
  const auto ix = x.id();
  return g.push("slice", std::move(y), {ix}, [ix, s, src_row, dst_row, off](Graph& gr, std::uint32_t self) {
    double* gx = gr.grad_buffer(ix);
    if (gx == nullptr) {
      return;
    }
    const Tensor& gy = gr.grad(self);
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t c = 0; c < dst_row; ++c) {
        gx[o * src_row + off + c] += gy[o * dst_row + c];
      }
    }
  });
}

Var gather(Var x, std::span<const std::size_t> index) {
  Graph& g = graph_of(x);
  const Shape& sx = x.shape();
  if (sx.empty() || index.empty()) {
    throw DimensionError("gather: needs a non-scalar input and a non-empty index");
  }
  const std::size_t row = x.value().size() / sx[0];
  for (auto i : index) {
    if (i >= sx[0]) {
      throw DimensionError("gather: index " + std::to_string(i) + " out of range for " + shape_str(sx));
    }
  }
  Shape ys = sx;
  ys[0] = index.size();
  Tensor y(ys, 0.0);
  for (std::size_t r = 0; r < index.size(); ++r) {
    std::copy_n(x.value().data().data() + index[r] * row, row, y.data().data() + r * row);
  }
  std::vector<std::size_t> idx(index.begin(), index.end());
  const auto ix = x.id();
  return g.push("gather", std::move(y), {ix}, [ix, idx = std::move(idx), row](Graph& gr, std::uint32_t self) {
    double* gx = gr.grad_buffer(ix);
    if (gx == nullptr) {
      return;
    }
    const Tensor& gy = gr.grad(self);
    for (std::size_t r = 0; r < idx.size(); ++r) {
      double* dst = gx + idx[r] * row;
      const double* src = gy.data().data() + r * row;
      for (std::size_t c = 0; c < row; ++c) {
        dst[c] += src[c];
      }
    }
  });
}

Var gather_cols(Var x, std::span<const std::size_t> index) {
  Graph& g = graph_of(x);
  const Tensor& xv = x.value();
  const std::size_t n = xv.cols();
  if (xv.rank() == 0 || index.empty()) {
    throw DimensionError("gather_cols: needs a non-scalar input and a non-empty index");
  }
  for (auto i : index) {
    if (i >= n) {
      throw DimensionError("gather_cols: index " + std::to_string(i) + " out of range for " +
                           shape_str(xv.shape()));
    }
  }
  const std::size_t m = index.size();
  Shape ys = xv.shape();
  ys.back() = m;
  Tensor y(ys, 0.0);
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    for (std::size_t c = 0; c < m; ++c) {
      y[r * m + c] = xv[r * n + index[c]];
    }
  }
  std::vector<std::size_t> idx(index.begin(), index.end());
  const auto ix = x.id();
  return g.push("gather_cols", std::move(y), {ix}, [ix, idx = std::move(idx), n](Graph& gr, std::uint32_t self) {
    double* gx = gr.grad_buffer(ix);
    if (gx == nullptr) {
      return;
    }
    const Tensor& gy = gr.grad(self);
    const std::size_t m2 = idx.size();
    for (std::size_t r = 0; r < gy.rows(); ++r) {
      for (std::size_t c = 0; c < m2; ++c) {
        gx[r * n + idx[c]] += gy[r * m2 + c];
      }
    }
  });
}

Var take_per_row(Var x, std::span<const std::size_t> index, std::size_t per_row) {
  Graph& g = graph_of(x);
  const Tensor& xv = x.value();
  if (xv.rank() != 2 || per_row == 0 || index.size() != xv.rows() * per_row) {
    throw DimensionError("take_per_row: " + std::to_string(index.size()) + " indices for " + shape_str(xv.shape()) +
                         " with " + std::to_string(per_row) + " per row");
  }
  const std::size_t n = xv.cols();
  for (auto i : index) {
    if (i >= n) {
      throw DimensionError("take_per_row: index " + std::to_string(i) + " out of range for " + shape_str(xv.shape()));
    }
  }
  const std::size_t rows = xv.rows();
  Tensor y(Shape{rows, per_row}, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < per_row; ++c) {
      y[r * per_row + c] = xv[r * n + index[r * per_row + c]];
    }
  }
  std::vector<std::size_t> idx(index.begin(), index.end());
  const auto ix = x.id();
  return g.push("take_per_row", std::move(y), {ix},
                [ix, idx = std::move(idx), n, rows, per_row](Graph& gr, std::uint32_t self) {
                  double* gx = gr.grad_buffer(ix);
                  if (gx == nullptr) {
                    return;
                  }
                  const Tensor& gy = gr.grad(self);
                  for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t c = 0; c < per_row; ++c) {
                      gx[r * n + idx[r * per_row + c]] += gy[r * per_row + c];
                    }
                  }
                });
}

Var reshape(Var x, Shape shape) {
  Graph& g = graph_of(x);
  Tensor y = x.value().reshaped(std::move(shape));
  const auto ix = x.id();
  return g.push("reshape", std::move(y), {ix}, [ix](Graph& gr, std::uint32_t self) {
    add_into(gr.grad_buffer(ix), gr.grad(self));
  });
}

Var scale_groups(Var x, Var w) {
  Graph& g = graph_of(x, w);
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  if (xv.rank() == 0 || wv.size() != xv.dim(0)) {
    throw DimensionError("scale_groups: weights " + shape_str(wv.shape()) + " for input " + shape_str(xv.shape()));
  }
  const std::size_t groups = xv.dim(0);
  const std::size_t row = xv.size() / groups;
  Tensor y = xv;
  for (std::size_t gi = 0; gi < groups; ++gi) {
    for (std::size_t c = 0; c < row; ++c) {
      y[gi * row + c] *= wv[gi];
    }
  }
  const auto ix = x.id();
  const auto iw = w.id();
  return g.push("scale_groups", std::move(y), {ix, iw}, [ix, iw, groups, row](Graph& gr, std::uint32_t self) {
    const Tensor& gy = gr.grad(self);
    if (double* gx = gr.grad_buffer(ix)) {
      const Tensor& wv2 = gr.value(iw);
      for (std::size_t gi = 0; gi < groups; ++gi) {
        for (std::size_t c = 0; c < row; ++c) {
          gx[gi * row + c] += gy[gi * row + c] * wv2[gi];
        }
      }
    }
    if (double* gw = gr.grad_buffer(iw)) {
      const Tensor& xv2 = gr.value(ix);
      for (std::size_t gi = 0; gi < groups; ++gi) {
        double s = 0.0;
        for (std::size_t c = 0; c < row; ++c) {
          s += gy[gi * row + c] * xv2[gi * row + c];
        }
        gw[gi] += s;
      }
    }
  });
}

Var select_groups(std::span<const std::uint8_t> take_a, Var a, Var b) {
  Graph& g = graph_of(a, b);
  require_same_shape("select_groups", a, b);
  const Tensor& av = a.value();
  if (av.rank() == 0 || take_a.size() != av.dim(0)) {
    throw DimensionError("select_groups: selector of " + std::to_string(take_a.size()) + " for " +
                         shape_str(av.shape()));
  }
  const std::size_t row = av.size() / av.dim(0);
  Tensor y = b.value();
  for (std::size_t gi = 0; gi < take_a.size(); ++gi) {
    if (take_a[gi] != 0) {
      std::copy_n(av.data().data() + gi * row, row, y.data().data() + gi * row);
    }
  }
  std::vector<std::uint8_t> sel(take_a.begin(), take_a.end());
  const auto ia = a.id();
  const auto ib = b.id();
  return g.push("select_groups", std::move(y), {ia, ib}, [ia, ib, sel = std::move(sel), row](Graph& gr,
                                                                                             std::uint32_t self) {
    const Tensor& gy = gr.grad(self);
    double* ga = gr.grad_buffer(ia);
    double* gb = gr.grad_buffer(ib);
    for (std::size_t gi = 0; gi < sel.size(); ++gi) {
      double* dst = sel[gi] != 0 ? ga : gb;
      if (dst == nullptr) {
        continue;
      }
      for (std::size_t c = 0; c < row; ++c) {
        dst[gi * row + c] += gy[gi * row + c];
      }
    }
  });
}

Var conv2d(Var x, Var w, Var b, std::size_t stride, std::size_t pad) {
  Graph& g = graph_of(x, w);
  graph_of(x, b);
  const Shape& sx = x.shape();
  const Shape& sw = w.shape();
  if (sx.size() != 4 || sw.size() != 4 || sx[1] != sw[1] || b.value().size() != sw[0] || stride == 0 ||
      sx[2] + 2 * pad < sw[2] || sx[3] + 2 * pad < sw[3]) {
    throw DimensionError("conv2d: input " + shape_str(sx) + " weight " + shape_str(sw) + " bias " +
                         shape_str(b.shape()));
  }
  const std::size_t batch = sx[0];
  const std::size_t cin = sx[1];
  const std::size_t h = sx[2];
  const std::size_t wd = sx[3];
  const std::size_t cout = sw[0];
  const std::size_t kh = sw[2];
  const std::size_t kw = sw[3];
  const std::size_t ho = (h + 2 * pad - kh) / stride + 1;
  const std::size_t wo = (wd + 2 * pad - kw) / stride + 1;
  Tensor y(Shape{batch, cout, ho, wo}, 0.0);
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  const Tensor& bv = b.value();
  const auto ipad = static_cast<std::ptrdiff_t>(pad);
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t co = 0; co < cout; ++co) {
      for (std::size_t oy = 0; oy < ho; ++oy) {
        for (std::size_t ox = 0; ox < wo; ++ox) {
          double acc = bv[co];
          for (std::size_t ci = 0; ci < cin; ++ci) {
            for (std::size_t ky = 0; ky < kh; ++ky) {
              const auto iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - ipad;
              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) {
                continue;
              }
              for (std::size_t kx = 0; kx < kw; ++kx) {
                const auto ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - ipad;
                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(wd)) {
                  continue;
                }
                acc += wv[((co * cin + ci) * kh + ky) * kw + kx] *
                       xv[((n * cin + ci) * h + static_cast<std::size_t>(iy)) * wd + static_cast<std::size_t>(ix)];
              }
            }
          }
          y[((n * cout + co) * ho + oy) * wo + ox] = acc;
        }
      }
    }
  }
  const auto ixd = x.id();
  const auto iw = w.id();
  const auto ib = b.id();
  return g.push("conv2d", std::move(y), {ixd, iw, ib}, [=](Graph& gr, std::uint32_t self) {
    const Tensor& gy = gr.grad(self);
    const Tensor& xv2 = gr.value(ixd);
    const Tensor& wv2 = gr.value(iw);
    double* gx = gr.grad_buffer(ixd);
    double* gw = gr.grad_buffer(iw);
    double* gb = gr.grad_buffer(ib);
    for (std::size_t n = 0; n < batch; ++n) {
      for (std::size_t co = 0; co < cout; ++co) {
        for (std::size_t oy = 0; oy < ho; ++oy) {
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const double go = gy[((n * cout + co) * ho + oy) * wo + ox];
            if (gb != nullptr) {
              gb[co] += go;
            }
            if (go == 0.0) {
              continue;
            }
            for (std::size_t ci = 0; ci < cin; ++ci) {
              for (std::size_t ky = 0; ky < kh; ++ky) {
                const auto iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - ipad;
                if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) {
                  continue;
                }
                for (std::size_t kx = 0; kx < kw; ++kx) {
                  const auto ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - ipad;
                  if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(wd)) {
                    continue;
                  }
                  const std::size_t xi =
                      ((n * cin + ci) * h + static_cast<std::size_t>(iy)) * wd + static_cast<std::size_t>(ix);
                  const std::size_t wi = ((co * cin + ci) * kh + ky) * kw + kx;
                  if (gw != nullptr) {
                    gw[wi] += go * xv2[xi];
                  }
                  if (gx != nullptr) {
                    gx[xi] += go * wv2[wi];
                  }
                }
              }
            }
          }
        }
      }
    }
  });
}

Var cross_entropy(Var logits, std::span<const int> labels) {
  Graph& g = graph_of(logits);
  const Tensor& lv = logits.value();
  if (lv.rank() != 2 || labels.size() != lv.dim(0)) {
    throw DimensionError("cross_entropy: logits " + shape_str(lv.shape()) + " with " +
                         std::to_string(labels.size()) + " labels");
  }
  const std::size_t n = lv.dim(0);
  const std::size_t c = lv.dim(1);
  auto probs = std::make_shared<std::vector<double>>(n * c);
  double total = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    const auto label = static_cast<std::size_t>(labels[r]);
    if (labels[r] < 0 || label >= c) {
      throw DimensionError("cross_entropy: label " + std::to_string(labels[r]) + " out of range");
    }
    const double* row = lv.data().data() + r * c;
    const double mx = *std::max_element(row, row + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      (*probs)[r * c + j] = std::exp(row[j] - mx);
      z += (*probs)[r * c + j];
    }
    for (std::size_t j = 0; j < c; ++j) {
      (*probs)[r * c + j] /= z;
    }
    total += -(row[label] - mx - std::log(z));
  }
  std::vector<int> lab(labels.begin(), labels.end());
  const auto il = logits.id();
  return g.push("cross_entropy", Tensor::scalar(total / static_cast<double>(n)), {il},
                [il, probs, lab = std::move(lab), n, c](Graph& gr, std::uint32_t self) {
                  double* gl = gr.grad_buffer(il);
                  if (gl == nullptr) {
                    return;
                  }
                  const double gs = gr.grad(self)[0] / static_cast<double>(n);
                  for (std::size_t r = 0; r < n; ++r) {
                    for (std::size_t j = 0; j < c; ++j) {
                      const double onehot = static_cast<std::size_t>(lab[r]) == j ? 1.0 : 0.0;
                      gl[r * c + j] += gs * ((*probs)[r * c + j] - onehot);
                    }
                  }
                });
}

}  // namespace artemis
