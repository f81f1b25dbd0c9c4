#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "artemis/tensor/graph.hpp"

// Differentiable operations over Graph nodes. Every op records its own
// backward rule; shapes are validated eagerly and reported as DimensionError.
namespace artemis {

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
/// a[..., n] + b[n]
Var add_row(Var a, Var b);

Var matmul(Var a, Var b);
/// x[..., in] * w[in, out] + b[out] -> [..., out]
Var affine(Var x, Var w, Var b);

Var relu(Var x);
Var sigmoid(Var x);
Var tanh(Var x);
Var softplus(Var x);
Var exp(Var x);
Var log(Var x);
Var square(Var x);
Var abs(Var x);
/// Maps to (-pi, pi]; the derivative is taken as 1 everywhere.
Var wrap_angle(Var x);

Var sum(Var x);
Var mean(Var x);
/// Mean over the last axis: [..., n] -> [...] (rank-1 input gives a scalar).
Var mean_last(Var x);

/// Softmax along `axis` (negative counts from the back), max-subtracted.
Var softmax(Var x, int axis = -1);
Var log_softmax(Var x);
/// Row-wise layer normalization over the last axis with epsilon added to the variance.
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);

/// Which keys each query may attend to.
struct AttentionMask {
  enum class Kind { kNone, kCausal, kKeyLengths, kExplicit };
  Kind kind = Kind::kNone;
  /// kKeyLengths: number of leading valid keys per batch entry (0 gives zero output rows).
  std::vector<std::size_t> key_lengths;
  /// kExplicit: [B x Lq x Lk], nonzero = attend allowed.
  std::vector<std::uint8_t> allowed;

  static AttentionMask none() { return {}; }
  static AttentionMask causal() { return {Kind::kCausal, {}, {}}; }
  static AttentionMask lengths(std::vector<std::size_t> n) { return {Kind::kKeyLengths, std::move(n), {}}; }
  static AttentionMask explicit_mask(std::vector<std::uint8_t> a) { return {Kind::kExplicit, {}, std::move(a)}; }
};

constexpr double kMaskedLogit = -1e9;

/// softmax(q k^T / sqrt(d) + mask) v for q[Lq x d], k[Lk x d], v[Lk x d].
/// `allowed`, when non-empty, is [Lq x Lk]; a fully masked row is an error.
Var attention(Var q, Var k, Var v, std::span<const std::uint8_t> allowed = {});

/// Batched multi-head attention, q[B x Lq x D], k[B x Lk x D], v[B x Lk x Dv];
/// heads split D and Dv evenly.
Var multi_head_attention(Var q, Var k, Var v, std::size_t heads, const AttentionMask& mask);

/// Concatenate along `axis` (negative counts from the back).
Var concat(std::span<const Var> parts, int axis);
Var slice(Var x, int axis, std::size_t start, std::size_t length);
/// Rows of x along axis 0, in `index` order (indices may repeat).
Var gather(Var x, std::span<const std::size_t> index);
/// Entries of the last axis, in `index` order.
Var gather_cols(Var x, std::span<const std::size_t> index);
/// y[r, c] = x[r, index[r * per_row + c]] for x[R x N] -> [R x per_row].
Var take_per_row(Var x, std::span<const std::size_t> index, std::size_t per_row);
Var reshape(Var x, Shape shape);

/// x[G, ...] with group g multiplied by w[g].
Var scale_groups(Var x, Var w);
/// Per group along axis 0: take a where take_a[g] != 0, else b.
Var select_groups(std::span<const std::uint8_t> take_a, Var a, Var b);

/// x[B, Cin, H, W] convolved with w[Cout, Cin, kh, kw] plus b[Cout].
Var conv2d(Var x, Var w, Var b, std::size_t stride, std::size_t pad);

/// Mean cross-entropy of logits[N x C] against integer labels.
Var cross_entropy(Var logits, std::span<const int> labels);

}  // namespace artemis
