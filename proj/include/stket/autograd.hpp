#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "stket/tensor.hpp"

namespace stket {

// A learnable weight and its accumulated gradient. The gradient buffer is
// allocated on first use so large inference-only models stay lean.
struct Parameter {
  Tensor value;
  Tensor grad;

  void zero_grad();
  Tensor& ensure_grad();
};

// Named, ordered collection of parameters. std::map keeps addresses stable
// and gives a deterministic iteration order for clipping, AdamW and
// checkpoints.
class ParamStore {
 public:
  Parameter& add(const std::string& name, Tensor value);
  Parameter& get(const std::string& name);
  const Parameter& get(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.count(name) != 0; }

  void zero_grad();
  std::size_t parameter_count() const;

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }
  std::size_t size() const { return params_.size(); }

 private:
  std::map<std::string, Parameter> params_;
};

class Tape;

// Handle to a value recorded on a tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

// Reverse-mode tape. Nodes are appended in execution order, so the recording
// order is a topological order and backward is a single reverse sweep.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Var constant(Tensor value);
  // Leaf that reads p.value in place and accumulates into p.grad during
  // backward; p must outlive the tape and stay unchanged while it is in use.
  // Repeated calls with the same parameter return the same node.
  Var parameter(Parameter& p);
  // Leaf with its own gradient (used by the finite-difference checker).
  Var leaf(Tensor value);

  Var record(Tensor value, std::vector<std::size_t> inputs, BackwardFn backward);

  const Tensor& value(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.param != nullptr ? n.param->value : n.value;
  }
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }
  // Gradient buffer of a node, zero-initialised on first access.
  Tensor& grad(std::size_t id);
  const Tensor& grad_of(Var v) const { return nodes_[v.id].grad; }

  // Populates gradients for every node reachable from `loss` (a 1x1 value)
  // and accumulates leaf gradients into their Parameters.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    Parameter* param = nullptr;
    bool needs_grad = false;
  };

  std::deque<Node> nodes_;
  std::unordered_map<const Parameter*, std::size_t> param_nodes_;
};

// ---- differentiable operations ---------------------------------------------

Var matmul(Var a, Var b);
Var transpose(Var a);
Var add(Var a, Var b);
// a [m x n] + row [1 x n] broadcast over rows.
Var add_row(Var a, Var row);
Var scale(Var a, double factor);
Var relu(Var a);
Var sigmoid(Var a);
// log(max(x, 1e-12)).
Var log_clamped(Var a);
// a * mask / (1 - rate); identity when rate == 0. The mask is an explicit
// 0/1 tensor so callers control the random stream.
Var dropout(Var a, const Tensor& mask, double rate);
Var softmax_rows(Var a);
Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);
Var concat(const std::vector<Var>& parts, std::size_t axis);
Var slice_cols(Var a, std::size_t begin, std::size_t end);
Var gather_rows(Var a, const std::vector<std::size_t>& rows);
Var reshape(Var a, Shape shape);
Var sum(Var a);
// Divides every row by its sum (rows must have positive sums).
Var normalize_rows(Var a);
// -sum( y*log(p) + (1-y)*log(1-p) ), probabilities clamped to [1e-12, 1-1e-12].
Var bce_sum(Var probs, const Tensor& targets);
// sum over rows of -log softmax(logits)[target].
Var softmax_cross_entropy(Var logits, const std::vector<std::size_t>& targets);

// x W + b, with W stored [in x out] and b [1 x out].
Var linear(Var x, Var weight, Var bias);

// ---- gradient checking ------------------------------------------------------

inline constexpr double kProbabilityClamp = 1e-12;

// Max over coordinates of |analytic - central difference| / max(1, |central|).
// Throws ContractError when f is not deterministic.
double finite_diff_check(const std::function<Var(Tape&, Var)>& f, const Tensor& x,
                         double eps = 1e-5);

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_parameter;
  std::size_t coordinates_checked = 0;
};

// Same criterion applied to parameters of a store. At most
// `max_coords_per_param` randomly chosen coordinates are perturbed per
// parameter (0 means all of them).
GradCheckReport check_parameter_gradients(ParamStore& store,
                                          const std::function<Var(Tape&)>& loss_fn,
                                          double eps = 1e-5,
                                          std::size_t max_coords_per_param = 0,
                                          std::uint64_t seed = 0);

}  // namespace stket
