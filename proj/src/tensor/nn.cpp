#include "artemis/tensor/nn.hpp"

#include <cmath>

namespace artemis::nn {

Linear Linear::create(ParameterSet& params, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
                      Init init) {
  Tensor w(Shape{in, out}, 0.0);
  if (init == Init::kXavier) {
    const double a = std::sqrt(6.0 / static_cast<double>(in + out));
    for (auto& v : w.values()) {
      v = rng.uniform(-a, a);
    }
  }
  Linear l;
  l.weight = &params.add(name + ".weight", std::move(w), true);
  l.bias = &params.add(name + ".bias", Tensor(Shape{out}, 0.0), false);
  return l;
}

Var Linear::operator()(Var x) const {
  Graph& g = *x.graph();
  return affine(x, g.param(*weight), g.param(*bias));
}

LayerNorm LayerNorm::create(ParameterSet& params, const std::string& name, std::size_t n) {
  LayerNorm ln;
  ln.gain = &params.add(name + ".gain", Tensor(Shape{n}, 1.0), false);
  ln.bias = &params.add(name + ".bias", Tensor(Shape{n}, 0.0), false);
  return ln;
}

Var LayerNorm::operator()(Var x) const {
  Graph& g = *x.graph();
  return layer_norm(x, g.param(*gain), g.param(*bias));
}

Mlp Mlp::create(ParameterSet& params, const std::string& name, std::size_t in, std::size_t hidden_dim,
                std::size_t out, Rng& rng, Init output_init) {
  Mlp m;
  m.hidden = Linear::create(params, name + ".0", in, hidden_dim, rng);
  m.output = Linear::create(params, name + ".1", hidden_dim, out, rng, output_init);
  return m;
}

Var Mlp::operator()(Var x) const { return output(relu(hidden(x))); }

GruCell GruCell::create(ParameterSet& params, const std::string& name, std::size_t in, std::size_t hidden_dim,
                        Rng& rng) {
  GruCell c;
  c.input = Linear::create(params, name + ".input", in, 3 * hidden_dim, rng);
  c.hidden = Linear::create(params, name + ".hidden", hidden_dim, 3 * hidden_dim, rng);
  return c;
}

Var GruCell::operator()(Var x, Var h) const {
  const std::size_t hd = hidden_dim();
  Var gx = input(x);
  Var gh = hidden(h);
  Var r = sigmoid(add(slice(gx, -1, 0, hd), slice(gh, -1, 0, hd)));
  Var z = sigmoid(add(slice(gx, -1, hd, hd), slice(gh, -1, hd, hd)));
  Var n = tanh(add(slice(gx, -1, 2 * hd, hd), mul(r, slice(gh, -1, 2 * hd, hd))));
  // (1 - z) * n + z * h  ==  n + z * (h - n)
  return add(n, mul(z, sub(h, n)));
}

MultiHeadAttention MultiHeadAttention::create(ParameterSet& params, const std::string& name, std::size_t d_model,
                                              std::size_t heads, Rng& rng, Init output_init) {
  MultiHeadAttention a;
  a.query = Linear::create(params, name + ".q", d_model, d_model, rng);
  a.key = Linear::create(params, name + ".k", d_model, d_model, rng);
  a.value = Linear::create(params, name + ".v", d_model, d_model, rng);
  a.output = Linear::create(params, name + ".o", d_model, d_model, rng, output_init);
  a.heads = heads;
  return a;
}

Var MultiHeadAttention::operator()(Var tokens, Var memory, const AttentionMask& mask) const {
  return output(multi_head_attention(query(tokens), key(memory), value(memory), heads, mask));
}

Conv2d Conv2d::create(ParameterSet& params, const std::string& name, std::size_t in, std::size_t out,
                      std::size_t kernel, std::size_t stride, std::size_t pad, Rng& rng) {
  Tensor w(Shape{out, in, kernel, kernel}, 0.0);
  const double a = std::sqrt(6.0 / static_cast<double>(in * kernel * kernel));
  for (auto& v : w.values()) {
    v = rng.uniform(-a, a);
  }
  Conv2d c;
  c.weight = &params.add(name + ".weight", std::move(w), true);
  c.bias = &params.add(name + ".bias", Tensor(Shape{out}, 0.0), false);
  c.stride = stride;
  c.pad = pad;
  return c;
}

Var Conv2d::operator()(Var x) const {
  Graph& g = *x.graph();
  return conv2d(x, g.param(*weight), g.param(*bias), stride, pad);
}

Parameter& add_table(ParameterSet& params, const std::string& name, Shape shape, Rng& rng, double stddev) {
  Tensor t(std::move(shape), 0.0);
  for (auto& v : t.values()) {
    v = stddev * rng.normal();
  }
  return params.add(name, std::move(t), false);
}

}  // namespace artemis::nn
