#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "stket/autograd.hpp"

namespace stket {

// Xavier-uniform [in x out] weight.
Tensor xavier(std::size_t in, std::size_t out, std::mt19937_64& rng);
Tensor normal_tensor(Shape shape, double stddev, std::mt19937_64& rng);

// Registers `{prefix}.w` [in x out] and `{prefix}.b` [1 x out].
void add_linear(ParamStore& store, const std::string& prefix, std::size_t in, std::size_t out,
                std::mt19937_64& rng);
Var apply_linear(Tape& tape, ParamStore& store, const std::string& prefix, Var x);

// Stack of affine layers with ReLU between them and nothing after the last.
// widths = {in, h1, ..., out}; layers are named `{prefix}.{i}`.
void add_mlp(ParamStore& store, const std::string& prefix, const std::vector<std::size_t>& widths,
             std::mt19937_64& rng);
Var apply_mlp(Tape& tape, ParamStore& store, const std::string& prefix, std::size_t layers, Var x);

// Training-time randomness. Masks are drawn from a seeded stream in call
// order, so a forward pass is reproducible from (seed, call sequence).
class DropoutContext {
 public:
  DropoutContext() = default;  // inactive
  DropoutContext(double rate, std::uint64_t seed) : rate_(rate), rng_(seed), active_(rate > 0.0) {}

  bool active() const { return active_; }
  Var apply(Var x);

 private:
  double rate_ = 0.0;
  std::mt19937_64 rng_;
  bool active_ = false;
};

struct AttentionWeights {
  std::vector<Tensor> per_head;  // [rows x rows] softmax weights
};

// Multi-head self-attention with an additive Q/K bias:
//   Q = x Wq + bq + bias, K = x Wk + bk + bias, V = x Wv + bv,
//   out = concat_h softmax(Q_h K_h^T / sqrt(d_h) + mask) V_h  Wo + bo.
// `mask` (optional, [rows x rows]) holds 0 or -inf style penalties.
void add_attention(ParamStore& store, const std::string& prefix, std::size_t width,
                   std::mt19937_64& rng);
Var apply_attention(Tape& tape, ParamStore& store, const std::string& prefix, Var x,
                    std::optional<Var> qk_bias, std::size_t heads, const Tensor* mask = nullptr,
                    AttentionWeights* weights = nullptr);

// Post-norm transformer layer:
//   h = LN(x + drop(attn(x))), y = LN(h + drop(W2 relu(W1 h))).
void add_transformer_layer(ParamStore& store, const std::string& prefix, std::size_t width,
                           std::size_t ffn_width, std::mt19937_64& rng);
Var apply_transformer_layer(Tape& tape, ParamStore& store, const std::string& prefix, Var x,
                            std::optional<Var> qk_bias, std::size_t heads, DropoutContext& drop,
                            const Tensor* mask = nullptr, AttentionWeights* weights = nullptr);

// Penalty used for masked attention logits.
inline constexpr double kMaskedLogit = -1e30;

}  // namespace stket
