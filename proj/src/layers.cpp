#include "stket/layers.hpp"

#include <cmath>

#include "stket/errors.hpp"

namespace stket {

Tensor xavier(std::size_t in, std::size_t out, std::mt19937_64& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(in + out));
  std::uniform_real_distribution<double> u(-a, a);
  Tensor t({in, out});
  for (auto& v : t.data()) v = u(rng);
  return t;
}

Tensor normal_tensor(Shape shape, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, stddev);
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = n(rng);
  return t;
}

void add_linear(ParamStore& store, const std::string& prefix, std::size_t in, std::size_t out,
                std::mt19937_64& rng) {
  store.add(prefix + ".w", xavier(in, out, rng));
  store.add(prefix + ".b", Tensor({1, out}));
}

Var apply_linear(Tape& tape, ParamStore& store, const std::string& prefix, Var x) {
  return linear(x, tape.parameter(store.get(prefix + ".w")),
                tape.parameter(store.get(prefix + ".b")));
}

void add_mlp(ParamStore& store, const std::string& prefix, const std::vector<std::size_t>& widths,
             std::mt19937_64& rng) {
  if (widths.size() < 2) throw ConfigError("an MLP needs at least input and output widths");
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    add_linear(store, prefix + "." + std::to_string(i), widths[i], widths[i + 1], rng);
  }
}

Var apply_mlp(Tape& tape, ParamStore& store, const std::string& prefix, std::size_t layers, Var x) {
  for (std::size_t i = 0; i < layers; ++i) {
    x = apply_linear(tape, store, prefix + "." + std::to_string(i), x);
    if (i + 1 < layers) x = relu(x);
  }
  return x;
}

Var DropoutContext::apply(Var x) {
  if (!active_) return x;
  Tensor mask(x.shape());
  std::bernoulli_distribution keep(1.0 - rate_);
  for (auto& v : mask.data()) v = keep(rng_) ? 1.0 : 0.0;
  return dropout(x, mask, rate_);
}

void add_attention(ParamStore& store, const std::string& prefix, std::size_t width,
                   std::mt19937_64& rng) {
  for (const char* name : {".q", ".k", ".v", ".o"}) add_linear(store, prefix + name, width, width, rng);
}

Var apply_attention(Tape& tape, ParamStore& store, const std::string& prefix, Var x,
                    std::optional<Var> qk_bias, std::size_t heads, const Tensor* mask,
                    AttentionWeights* weights) {
  const std::size_t width = x.cols();
  if (heads == 0 || width % heads != 0) {
    throw ConfigError("width " + std::to_string(width) + " is not divisible by " +
                      std::to_string(heads) + " heads");
  }
  Var q = apply_linear(tape, store, prefix + ".q", x);
  Var k = apply_linear(tape, store, prefix + ".k", x);
  const Var v = apply_linear(tape, store, prefix + ".v", x);
  if (qk_bias) {
    q = add(q, *qk_bias);
    k = add(k, *qk_bias);
  }
  const std::size_t dh = width / heads;
  const double scale_factor = 1.0 / std::sqrt(static_cast<double>(dh));
  std::optional<Var> mask_var;
  if (mask) mask_var = tape.constant(*mask);
  std::vector<Var> outs;
  for (std::size_t h = 0; h < heads; ++h) {
    const Var qh = slice_cols(q, h * dh, (h + 1) * dh);
    const Var kh = slice_cols(k, h * dh, (h + 1) * dh);
    const Var vh = slice_cols(v, h * dh, (h + 1) * dh);
    Var scores = scale(matmul(qh, transpose(kh)), scale_factor);
    if (mask_var) scores = add(scores, *mask_var);
    const Var attn = softmax_rows(scores);
    if (weights) weights->per_head.push_back(attn.value());
    outs.push_back(matmul(attn, vh));
  }
  const Var merged = heads == 1 ? outs.front() : concat(outs, 1);
  return apply_linear(tape, store, prefix + ".o", merged);
}

void add_transformer_layer(ParamStore& store, const std::string& prefix, std::size_t width,
                           std::size_t ffn_width, std::mt19937_64& rng) {
  add_attention(store, prefix + ".attn", width, rng);
  add_linear(store, prefix + ".ff1", width, ffn_width, rng);
  add_linear(store, prefix + ".ff2", ffn_width, width, rng);
  for (const char* ln : {".ln1", ".ln2"}) {
    store.add(prefix + ln + ".g", Tensor({1, width}, 1.0));
    store.add(prefix + ln + ".b", Tensor({1, width}));
  }
}

Var apply_transformer_layer(Tape& tape, ParamStore& store, const std::string& prefix, Var x,
                            std::optional<Var> qk_bias, std::size_t heads, DropoutContext& drop,
                            const Tensor* mask, AttentionWeights* weights) {
  const auto norm = [&](const std::string& name, Var v) {
    return layer_norm(v, tape.parameter(store.get(prefix + name + ".g")),
                      tape.parameter(store.get(prefix + name + ".b")));
  };
  const Var attn = apply_attention(tape, store, prefix + ".attn", x, qk_bias, heads, mask, weights);
  const Var h = norm(".ln1", add(x, drop.apply(attn)));
  const Var ff = apply_linear(tape, store, prefix + ".ff2",
                              relu(apply_linear(tape, store, prefix + ".ff1", h)));
  return norm(".ln2", add(h, drop.apply(ff)));
}

}  // namespace stket
