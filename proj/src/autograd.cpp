#include "stket/autograd.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "stket/errors.hpp"

namespace stket {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

ConstMap as_matrix(const Tensor& t) { return ConstMap(t.data().data(), t.rows(), t.cols()); }
MutMap as_matrix(Tensor& t) { return MutMap(t.data().data(), t.rows(), t.cols()); }

void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + " expects a matrix, got " + shape_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                         " vs " + shape_string(b.shape()));
  }
}

Tape& tape_of(Var v) {
  if (v.tape == nullptr) throw ContractError("variable is not attached to a tape");
  return *v.tape;
}

void accumulate(Tensor& dst, const Tensor& src) {
  auto d = dst.data();
  auto s = src.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

}  // namespace

// ---- Parameter / ParamStore -------------------------------------------------

void Parameter::zero_grad() {
  if (grad.shape() == value.shape()) {
    grad.fill(0.0);
  } else {
    grad = Tensor(value.shape());
  }
}

Tensor& Parameter::ensure_grad() {
  if (grad.shape() != value.shape()) grad = Tensor(value.shape());
  return grad;
}

Parameter& ParamStore::add(const std::string& name, Tensor value) {
  auto [it, inserted] = params_.try_emplace(name);
  if (!inserted) throw ContractError("duplicate parameter name " + name);
  it->second.value = std::move(value);
  return it->second;
}

Parameter& ParamStore::get(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw ContractError("unknown parameter " + name);
  return it->second;
}

const Parameter& ParamStore::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw ContractError("unknown parameter " + name);
  return it->second;
}

void ParamStore::zero_grad() {
  for (auto& [name, p] : params_) p.zero_grad();
}

std::size_t ParamStore::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, p] : params_) n += p.value.size();
  return n;
}

// ---- Tape -------------------------------------------------------------------

const Tensor& Var::value() const { return tape_of(*this).value(id); }

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, {}, {}, nullptr, false});
  return Var{this, nodes_.size() - 1};
}

Var Tape::parameter(Parameter& p) {
  auto it = param_nodes_.find(&p);
  if (it != param_nodes_.end()) return Var{this, it->second};
  nodes_.push_back(Node{Tensor(), {}, {}, {}, &p, true});
  param_nodes_.emplace(&p, nodes_.size() - 1);
  return Var{this, nodes_.size() - 1};
}

Var Tape::leaf(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, {}, {}, nullptr, true});
  return Var{this, nodes_.size() - 1};
}

Var Tape::record(Tensor value, std::vector<std::size_t> inputs, BackwardFn backward) {
  bool needs = false;
  for (auto i : inputs) needs = needs || nodes_[i].needs_grad;
  nodes_.push_back(
      Node{std::move(value), {}, std::move(inputs), needs ? std::move(backward) : BackwardFn{},
           nullptr, needs});
  return Var{this, nodes_.size() - 1};
}

Tensor& Tape::grad(std::size_t id) {
  Node& n = nodes_[id];
  const Shape& shape = value(id).shape();
  if (n.grad.shape() != shape) n.grad = Tensor(shape);
  return n.grad;
}

void Tape::backward(Var loss) {
  if (loss.tape != this) throw ContractError("loss belongs to a different tape");
  if (value(loss.id).size() != 1) {
    throw ContractError("backward requires a scalar loss, got " +
                        shape_string(value(loss.id).shape()));
  }
  for (auto& n : nodes_) n.grad = Tensor();
  grad(loss.id)[0] = 1.0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.needs_grad || n.grad.empty()) continue;
    if (n.backward) n.backward(*this, i);
    if (n.param != nullptr) accumulate(n.param->ensure_grad(), n.grad);
  }
}

// ---- operations -------------------------------------------------------------

Var matmul(Var a, Var b) {
  Tape& t = tape_of(a);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_matrix(av, "matmul");
  require_matrix(bv, "matmul");
  if (av.cols() != bv.rows()) {
    throw DimensionError("matmul: inner dimensions differ " + shape_string(av.shape()) + " x " +
                         shape_string(bv.shape()));
  }
  Tensor out({av.rows(), bv.cols()});
  as_matrix(out).noalias() = as_matrix(av) * as_matrix(bv);
  return t.record(std::move(out), {a.id, b.id}, [ia = a.id, ib = b.id](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad(self);
    if (tp.needs_grad(ia)) {
      as_matrix(tp.grad(ia)).noalias() += as_matrix(g) * as_matrix(tp.value(ib)).transpose();
    }
    if (tp.needs_grad(ib)) {
      as_matrix(tp.grad(ib)).noalias() += as_matrix(tp.value(ia)).transpose() * as_matrix(g);
    }
  });
}

Var transpose(Var a) {
  Tape& t = tape_of(a);
  const Tensor& av = a.value();
  require_matrix(av, "transpose");
  Tensor out({av.cols(), av.rows()});
  as_matrix(out) = as_matrix(av).transpose();
  return t.record(std::move(out), {a.id}, [ia = a.id](Tape& tp, std::size_t self) {
    as_matrix(tp.grad(ia)) += as_matrix(tp.grad(self)).transpose();
  });
}

Var add(Var a, Var b) {
  Tape& t = tape_of(a);
  require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  accumulate(out, b.value());
  return t.record(std::move(out), {a.id, b.id}, [ia = a.id, ib = b.id](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad(self);
    if (tp.needs_grad(ia)) accumulate(tp.grad(ia), g);
    if (tp.needs_grad(ib)) accumulate(tp.grad(ib), g);
  });
}

Var add_row(Var a, Var row) {
  Tape& t = tape_of(a);
  const Tensor& av = a.value();
  const Tensor& rv = row.value();
  require_matrix(av, "add_row");
  if (rv.size() != av.cols()) {
    throw DimensionError("add_row: row " + shape_string(rv.shape()) + " does not broadcast over " +
                         shape_string(av.shape()));
  }
  Tensor out = av;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto dst = out.row_span(r);
    for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += rv[c];
  }
  return t.record(std::move(out), {a.id, row.id}, [ia = a.id, ir = row.id](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad(self);
    if (tp.needs_grad(ia)) accumulate(tp.grad(ia), g);
    if (tp.needs_grad(ir)) {
      Tensor& gr = tp.grad(ir);
      for (std::size_t r = 0; r < g.rows(); ++r) {
        auto src = g.row_span(r);
        for (std::size_t c = 0; c < src.size(); ++c) gr[c] += src[c];
      }
    }
  });
}

Var scale(Var a, double factor) {
  Tape& t = tape_of(a);
  Tensor out = a.value();
  for (auto& v : out.data()) v *= factor;
  return t.record(std::move(out), {a.id}, [ia = a.id, factor](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad(self);
    Tensor& ga = tp.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += factor * g[i];
  });
}

Var relu(Var a) {
  Tape& t = tape_of(a);
  Tensor out = a.value();
  for (auto& v : out.data()) v = v > 0.0 ? v : 0.0;
  return t.record(std::move(out), {a.id}, [ia = a.id](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad(self);
    const Tensor& x = tp.value(ia);
    Tensor& ga = tp.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (x[i] > 0.0) ga[i] += g[i];
    }
  });
}

Var sigmoid(Var a) {
  Tape& t = tape_of(a);
  Tensor out = a.value();
  for (auto& v : out.data()) {
    if (std::isnan(v)) throw NumericError("sigmoid: NaN input");
    v = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  }
  return t.record(std::move(out), {a.id}, [ia = a.id](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad(self);
    const Tensor& y = tp.value(self);
    Tensor& ga = tp.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i] * (1.0 - y[i]);
  });
}

Var log_clamped(Var a) {
  Tape& t = tape_of(a);
  Tensor out = a.value();
  for (auto& v : out.data()) v = std::log(std::max(v, kProbabilityClamp));
  return t.record(std::move(out), {a.id}, [ia = a.id](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad(self);
    const Tensor& x = tp.value(ia);
    Tensor& ga = tp.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (x[i] > kProbabilityClamp) ga[i] += g[i] / x[i];
    }
  });
}

Var dropout(Var a, const Tensor& mask, double rate) {
  if (rate == 0.0) return a;
  if (rate < 0.0 || rate >= 1.0) throw ContractError("dropout rate must lie in [0, 1)");
  Tape& t = tape_of(a);
  require_same_shape(a.value(), mask, "dropout");
  const double keep = 1.0 / (1.0 - rate);
  Tensor factors = mask;
  for (auto& v : factors.data()) v *= keep;
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= factors[i];
  return t.record(std::move(out), {a.id},
                  [ia = a.id, factors = std::move(factors)](Tape& tp, std::size_t self) {
                    const Tensor& g = tp.grad(self);
                    Tensor& ga = tp.grad(ia);
                    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factors[i];
                  });
}

Var softmax_rows(Var a) {
  Tape& t = tape_of(a);
  const Tensor& av = a.value();
  require_matrix(av, "softmax_rows");
  Tensor out = av;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row_span(r);
    double mx = -INFINITY;
    for (double v : row) {
      if (std::isnan(v)) throw NumericError("softmax_rows: NaN input");
      mx = std::max(mx, v);
    }
    double total = 0.0;
    for (auto& v : row) {
      v = std::exp(v - mx);
      total += v;
    }
    for (auto& v : row) v /= total;
  }
  return t.record(std::move(out), {a.id}, [ia = a.id](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad(self);
    const Tensor& y = tp.value(self);
    Tensor& ga = tp.grad(ia);
    for (std::size_t r = 0; r < y.rows(); ++r) {
      auto yr = y.row_span(r);
      auto gr = g.row_span(r);
      double dot = 0.0;
      for (std::size_t c = 0; c < yr.size(); ++c) dot += yr[c] * gr[c];
      auto dst = ga.row_span(r);
      for (std::size_t c = 0; c < yr.size(); ++c) dst[c] += yr[c] * (gr[c] - dot);
    }
  });
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
  Tape& t = tape_of(x);
  const Tensor& xv = x.value();
  require_matrix(xv, "layer_norm");
  const std::size_t m = xv.rows();
  const std::size_t d = xv.cols();
  if (d == 0) throw DimensionError("layer_norm: zero-width rows");
  if (gamma.value().size() != d || beta.value().size() != d) {
    throw DimensionError("layer_norm: gain/bias width does not match " + shape_string(xv.shape()));
  }
  Tensor normed({m, d});
  std::vector<double> inv_std(m);
  for (std::size_t r = 0; r < m; ++r) {
    auto row = xv.row_span(r);
    double mean = 0.0;
    for (double v : row) mean += v;
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (double v : row) var += (v - mean) * (v - mean);
    var /= static_cast<double>(d);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    auto dst = normed.row_span(r);
    for (std::size_t c = 0; c < d; ++c) dst[c] = (row[c] - mean) * inv_std[r];
  }
  const Tensor& gv = gamma.value();
  const Tensor& bv = beta.value();
  Tensor out({m, d});
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t c = 0; c < d; ++c) out.at(r, c) = normed.at(r, c) * gv[c] + bv[c];
  }
  return t.record(
      std::move(out), {x.id, gamma.id, beta.id},
      [ix = x.id, ig = gamma.id, ib = beta.id, normed = std::move(normed),
       inv_std = std::move(inv_std)](Tape& tp, std::size_t self) {
        const Tensor& g = tp.grad(self);
        const Tensor& gv = tp.value(ig);
        const std::size_t m = normed.rows();
        const std::size_t d = normed.cols();
        if (tp.needs_grad(ig) || tp.needs_grad(ib)) {
          Tensor& gg = tp.grad(ig);
          Tensor& gb = tp.grad(ib);
          for (std::size_t r = 0; r < m; ++r) {
            for (std::size_t c = 0; c < d; ++c) {
              gg[c] += g.at(r, c) * normed.at(r, c);
              gb[c] += g.at(r, c);
            }
          }
        }
        if (tp.needs_grad(ix)) {
          Tensor& gx = tp.grad(ix);
          std::vector<double> dxhat(d);
          for (std::size_t r = 0; r < m; ++r) {
            double sum_d = 0.0;
            double sum_dx = 0.0;
            for (std::size_t c = 0; c < d; ++c) {
              dxhat[c] = g.at(r, c) * gv[c];
              sum_d += dxhat[c];
              sum_dx += dxhat[c] * normed.at(r, c);
            }
            const double n = static_cast<double>(d);
            for (std::size_t c = 0; c < d; ++c) {
              gx.at(r, c) += inv_std[r] / n * (n * dxhat[c] - sum_d - normed.at(r, c) * sum_dx);
            }
          }
        }
      });
}

Var concat(const std::vector<Var>& parts, std::size_t axis) {
  if (parts.empty()) throw ContractError("concat of an empty list");
  if (parts.size() == 1) return parts.front();
  Tape& t = tape_of(parts.front());
  if (axis > 1) throw DimensionError("concat axis must be 0 or 1");
  const Tensor& first = parts.front().value();
  require_matrix(first, "concat");
  std::size_t rows = 0;
  std::size_t cols = 0;
  for (const auto& p : parts) {
    const Tensor& v = p.value();
    require_matrix(v, "concat");
    const bool ok = axis == 0 ? v.cols() == first.cols() : v.rows() == first.rows();
    if (!ok) {
      throw DimensionError("concat: incompatible shapes " + shape_string(first.shape()) + " and " +
                           shape_string(v.shape()) + " along axis " + std::to_string(axis));
    }
    rows += axis == 0 ? v.rows() : 0;
    cols += axis == 1 ? v.cols() : 0;
  }
  if (axis == 0) cols = first.cols();
  if (axis == 1) rows = first.rows();
  Tensor out({rows, cols});
  std::vector<std::size_t> ids;
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const Tensor& v = p.value();
    ids.push_back(p.id);
    offsets.push_back(offset);
    for (std::size_t r = 0; r < v.rows(); ++r) {
      auto src = v.row_span(r);
      double* dst = axis == 0 ? &out.at(offset + r, 0) : &out.at(r, offset);
      std::copy(src.begin(), src.end(), dst);
    }
    offset += axis == 0 ? v.rows() : v.cols();
  }
  return t.record(std::move(out), ids,
                  [ids, offsets, axis](Tape& tp, std::size_t self) {
                    const Tensor& g = tp.grad(self);
                    for (std::size_t k = 0; k < ids.size(); ++k) {
                      if (!tp.needs_grad(ids[k])) continue;
                      Tensor& gp = tp.grad(ids[k]);
                      for (std::size_t r = 0; r < gp.rows(); ++r) {
                        for (std::size_t c = 0; c < gp.cols(); ++c) {
                          gp.at(r, c) += axis == 0 ? g.at(offsets[k] + r, c)
                                                   : g.at(r, offsets[k] + c);
                        }
                      }
                    }
                  });
}

Var slice_cols(Var a, std::size_t begin, std::size_t end) {
  Tape& t = tape_of(a);
  const Tensor& av = a.value();
  require_matrix(av, "slice_cols");
  if (begin > end || end > av.cols()) {
    throw DimensionError("slice_cols: range [" + std::to_string(begin) + ", " +
                         std::to_string(end) + ") outside " + shape_string(av.shape()));
  }
  const std::size_t w = end - begin;
  Tensor out({av.rows(), w});
  for (std::size_t r = 0; r < av.rows(); ++r) {
    for (std::size_t c = 0; c < w; ++c) out.at(r, c) = av.at(r, begin + c);
  }
  return t.record(std::move(out), {a.id}, [ia = a.id, begin](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad(self);
    Tensor& ga = tp.grad(ia);
    for (std::size_t r = 0; r < g.rows(); ++r) {
      for (std::size_t c = 0; c < g.cols(); ++c) ga.at(r, begin + c) += g.at(r, c);
    }
  });
}

Var gather_rows(Var a, const std::vector<std::size_t>& rows) {
  Tape& t = tape_of(a);
  const Tensor& av = a.value();
  require_matrix(av, "gather_rows");
  Tensor out({rows.size(), av.cols()});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= av.rows()) {
      throw DimensionError("gather_rows: row " + std::to_string(rows[i]) + " outside " +
                           shape_string(av.shape()));
    }
    auto src = av.row_span(rows[i]);
    std::copy(src.begin(), src.end(), out.row_span(i).begin());
  }
  return t.record(std::move(out), {a.id}, [ia = a.id, rows](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad(self);
    Tensor& ga = tp.grad(ia);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      auto src = g.row_span(i);
      auto dst = ga.row_span(rows[i]);
      for (std::size_t c = 0; c < src.size(); ++c) dst[c] += src[c];
    }
  });
}

Var reshape(Var a, Shape shape) {
  Tape& t = tape_of(a);
  Tensor out = a.value().reshaped(std::move(shape));
  return t.record(std::move(out), {a.id}, [ia = a.id](Tape& tp, std::size_t self) {
    accumulate(tp.grad(ia), tp.grad(self));
  });
}

Var sum(Var a) {
  Tape& t = tape_of(a);
  const Tensor& av = a.value();
  double total = 0.0;
  for (double v : av.data()) total += v;
  return t.record(Tensor({1, 1}, {total}), {a.id}, [ia = a.id](Tape& tp, std::size_t self) {
    const double g = tp.grad(self)[0];
    for (auto& v : tp.grad(ia).data()) v += g;
  });
}

Var normalize_rows(Var a) {
  Tape& t = tape_of(a);
  const Tensor& av = a.value();
  require_matrix(av, "normalize_rows");
  Tensor out = av;
  std::vector<double> totals(av.rows());
  for (std::size_t r = 0; r < av.rows(); ++r) {
    double total = 0.0;
    for (double v : av.row_span(r)) total += v;
    if (!(total > 0.0)) throw NumericError("normalize_rows: row sum must be positive");
    totals[r] = total;
    for (auto& v : out.row_span(r)) v /= total;
  }
  return t.record(std::move(out), {a.id},
                  [ia = a.id, totals = std::move(totals)](Tape& tp, std::size_t self) {
                    const Tensor& g = tp.grad(self);
                    const Tensor& y = tp.value(self);
                    Tensor& ga = tp.grad(ia);
                    for (std::size_t r = 0; r < y.rows(); ++r) {
                      double dot = 0.0;
                      for (std::size_t c = 0; c < y.cols(); ++c) dot += g.at(r, c) * y.at(r, c);
                      for (std::size_t c = 0; c < y.cols(); ++c) {
                        ga.at(r, c) += (g.at(r, c) - dot) / totals[r];
                      }
                    }
                  });
}

Var bce_sum(Var probs, const Tensor& targets) {
  Tape& t = tape_of(probs);
  const Tensor& pv = probs.value();
  require_same_shape(pv, targets, "bce_sum");
  const double lo = kProbabilityClamp;
  const double hi = 1.0 - kProbabilityClamp;
  double total = 0.0;
  for (std::size_t i = 0; i < pv.size(); ++i) {
    const double p = std::clamp(pv[i], lo, hi);
    const double y = targets[i];
    total -= y * std::log(p) + (1.0 - y) * std::log(1.0 - p);
  }
  return t.record(Tensor({1, 1}, {total}), {probs.id},
                  [ip = probs.id, targets, lo, hi](Tape& tp, std::size_t self) {
                    const double g = tp.grad(self)[0];
                    const Tensor& pv = tp.value(ip);
                    Tensor& gp = tp.grad(ip);
                    for (std::size_t i = 0; i < pv.size(); ++i) {
                      const double p = pv[i];
                      if (p < lo || p > hi) continue;
                      const double y = targets[i];
                      gp[i] += g * (-y / p + (1.0 - y) / (1.0 - p));
                    }
                  });
}

Var softmax_cross_entropy(Var logits, const std::vector<std::size_t>& targets) {
  Tape& t = tape_of(logits);
  const Tensor& lv = logits.value();
  require_matrix(lv, "softmax_cross_entropy");
  if (targets.size() != lv.rows()) {
    throw DimensionError("softmax_cross_entropy: " + std::to_string(targets.size()) +
                         " targets for " + shape_string(lv.shape()));
  }
  Tensor probs = lv;
  double total = 0.0;
  for (std::size_t r = 0; r < lv.rows(); ++r) {
    if (targets[r] >= lv.cols()) throw DimensionError("softmax_cross_entropy: target out of range");
    auto row = probs.row_span(r);
    double mx = -INFINITY;
    for (double v : row) mx = std::max(mx, v);
    double z = 0.0;
    for (double v : row) z += std::exp(v - mx);
    total -= row[targets[r]] - mx - std::log(z);
    for (auto& v : row) v = std::exp(v - mx) / z;
  }
  return t.record(Tensor({1, 1}, {total}), {logits.id},
                  [il = logits.id, targets, probs = std::move(probs)](Tape& tp, std::size_t self) {
                    const double g = tp.grad(self)[0];
                    Tensor& gl = tp.grad(il);
                    for (std::size_t r = 0; r < probs.rows(); ++r) {
                      for (std::size_t c = 0; c < probs.cols(); ++c) {
                        gl.at(r, c) += g * (probs.at(r, c) - (c == targets[r] ? 1.0 : 0.0));
                      }
                    }
                  });
}

Var linear(Var x, Var weight, Var bias) { return add_row(matmul(x, weight), bias); }

// ---- gradient checking ------------------------------------------------------

namespace {

double scalar_of(const Tensor& t) {
  if (t.size() != 1) throw ContractError("gradient check requires a scalar function");
  return t[0];
}

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1.0, std::abs(numeric));
}

}  // namespace

double finite_diff_check(const std::function<Var(Tape&, Var)>& f, const Tensor& x, double eps) {
  auto evaluate = [&](const Tensor& point) {
    Tape tape;
    Var v = tape.constant(point);
    return scalar_of(f(tape, v).value());
  };
  if (evaluate(x) != evaluate(x)) {
    throw ContractError("finite_diff_check: function is not deterministic");
  }
  Tape tape;
  Var xv = tape.leaf(x);
  Var y = f(tape, xv);
  scalar_of(y.value());
  tape.backward(y);
  Tensor analytic = tape.grad_of(xv);
  if (analytic.empty()) analytic = Tensor(x.shape());

  double worst = 0.0;
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + eps;
    const double up = evaluate(probe);
    probe[i] = x[i] - eps;
    const double down = evaluate(probe);
    probe[i] = x[i];
    worst = std::max(worst, relative_error(analytic[i], (up - down) / (2.0 * eps)));
  }
  return worst;
}

GradCheckReport check_parameter_gradients(ParamStore& store,
                                          const std::function<Var(Tape&)>& loss_fn, double eps,
                                          std::size_t max_coords_per_param, std::uint64_t seed) {
  auto evaluate = [&]() {
    Tape tape;
    return scalar_of(loss_fn(tape).value());
  };
  if (evaluate() != evaluate()) {
    throw ContractError("check_parameter_gradients: loss is not deterministic");
  }
  store.zero_grad();
  {
    Tape tape;
    Var loss = loss_fn(tape);
    tape.backward(loss);
  }
  std::mt19937_64 rng(seed);
  GradCheckReport report;
  for (auto& [name, p] : store) {
    const Tensor analytic = p.grad.empty() ? Tensor(p.value.shape()) : p.grad;
    std::vector<std::size_t> coords(p.value.size());
    std::iota(coords.begin(), coords.end(), 0);
    if (max_coords_per_param != 0 && coords.size() > max_coords_per_param) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(max_coords_per_param);
    }
    for (auto i : coords) {
      const double original = p.value[i];
      p.value[i] = original + eps;
      const double up = evaluate();
      p.value[i] = original - eps;
      const double down = evaluate();
      p.value[i] = original;
      const double err = relative_error(analytic[i], (up - down) / (2.0 * eps));
      if (err > report.max_rel_error) {
        report.max_rel_error = err;
        report.worst_parameter = name + "[" + std::to_string(i) + "]";
      }
      ++report.coordinates_checked;
    }
  }
  return report;
}

}  // namespace stket
