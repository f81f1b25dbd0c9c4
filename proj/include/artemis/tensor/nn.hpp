#pragma once

#include <cstddef>
#include <string>

#include "artemis/common/rng.hpp"
#include "artemis/tensor/graph.hpp"
#include "artemis/tensor/ops.hpp"

// Parameterized building blocks. Each holds non-owning pointers into a
// ParameterSet and binds them into whichever graph its input lives in.
namespace artemis::nn {

enum class Init { kXavier, kZero };

struct Linear {
  Parameter* weight = nullptr;  // [in x out]
  Parameter* bias = nullptr;    // [out]

  static Linear create(ParameterSet& params, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
                       Init init = Init::kXavier);
  Var operator()(Var x) const;
  std::size_t in() const { return weight->value.dim(0); }
  std::size_t out() const { return weight->value.dim(1); }
};

struct LayerNorm {
  Parameter* gain = nullptr;
  Parameter* bias = nullptr;

  static LayerNorm create(ParameterSet& params, const std::string& name, std::size_t n);
  Var operator()(Var x) const;
};

/// Two affine layers with a ReLU between them.
struct Mlp {
  Linear hidden;
  Linear output;

  static Mlp create(ParameterSet& params, const std::string& name, std::size_t in, std::size_t hidden_dim,
                    std::size_t out, Rng& rng, Init output_init = Init::kXavier);
  Var operator()(Var x) const;
};

/// Gated recurrent unit, gate order (reset, update, candidate):
///   r = sig(Wir x + bir + Whr h + bhr), z = sig(Wiz x + biz + Whz h + bhz)
///   n = tanh(Win x + bin + r * (Whn h + bhn)),  h' = (1 - z) * n + z * h
struct GruCell {
  Linear input;   // [in x 3H]
  Linear hidden;  // [H x 3H]

  static GruCell create(ParameterSet& params, const std::string& name, std::size_t in, std::size_t hidden_dim,
                        Rng& rng);
  Var operator()(Var x, Var h) const;
  std::size_t hidden_dim() const { return hidden.in(); }
};

/// Projected multi-head attention over batched token sets.
struct MultiHeadAttention {
  Linear query;
  Linear key;
  Linear value;
  Linear output;
  std::size_t heads = 1;

  static MultiHeadAttention create(ParameterSet& params, const std::string& name, std::size_t d_model,
                                   std::size_t heads, Rng& rng, Init output_init = Init::kXavier);
  /// tokens [B x Lq x D] attend to memory [B x Lk x D].
  Var operator()(Var tokens, Var memory, const AttentionMask& mask) const;
};

/// 2-D convolution with square kernels, He-uniform init.
struct Conv2d {
  Parameter* weight = nullptr;  // [out x in x k x k]
  Parameter* bias = nullptr;    // [out]
  std::size_t stride = 1;
  std::size_t pad = 0;

  static Conv2d create(ParameterSet& params, const std::string& name, std::size_t in, std::size_t out,
                       std::size_t kernel, std::size_t stride, std::size_t pad, Rng& rng);
  Var operator()(Var x) const;
};

/// Binds an embedding-style table parameter (no decay) into a graph.
Parameter& add_table(ParameterSet& params, const std::string& name, Shape shape, Rng& rng, double stddev);

}  // namespace artemis::nn
