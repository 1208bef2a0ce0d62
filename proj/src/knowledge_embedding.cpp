#include "stket/knowledge_embedding.hpp"

#include <algorithm>

#include "stket/errors.hpp"
#include "stket/layers.hpp"

namespace stket {

TemporalRowMode parse_temporal_row_mode(const std::string& text) {
  if (text == "argmax") return TemporalRowMode::kArgmax;
  if (text == "expected") return TemporalRowMode::kExpected;
  throw ConfigError("unknown temporal row mode '" + text + "' (expected argmax or expected)");
}

std::string to_string(TemporalRowMode mode) {
  return mode == TemporalRowMode::kArgmax ? "argmax" : "expected";
}

std::vector<std::size_t> KnowledgeEmbedderShape::widths() const {
  std::vector<std::size_t> w{num_predicates};
  w.insert(w.end(), hidden.begin(), hidden.end());
  w.push_back(width);
  return w;
}

void add_knowledge_embedder(ParamStore& store, const KnowledgeEmbedderShape& shape,
                            std::mt19937_64& rng) {
  add_mlp(store, "kn.spa", shape.widths(), rng);
  add_mlp(store, "kn.tem", shape.widths(), rng);
  add_linear(store, "kn.spk_head", shape.width, shape.num_predicates, rng);
  add_linear(store, "kn.tpk_head", shape.width, shape.num_predicates, rng);
}

Tensor spatial_knowledge_rows(const SpatialMatrixBank& bank, const std::vector<PairKey>& pairs) {
  const std::size_t c = bank.num_predicates();
  Tensor rows({pairs.size(), c});
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    if (const auto* e = bank.find(pairs[k])) {
      std::copy(e->probabilities.begin(), e->probabilities.end(), rows.row_span(k).begin());
    }
  }
  return rows;
}

Var temporal_knowledge_rows(Tape& tape, const TemporalMatrixBank& bank,
                            const std::vector<PairKey>& pairs, Var coarse, TemporalRowMode mode) {
  const std::size_t c = bank.num_predicates();
  if (coarse.rows() != pairs.size() || coarse.cols() != c) {
    throw DimensionError("temporal_knowledge_rows: coarse predictions " +
                         shape_string(coarse.shape()) + " for " + std::to_string(pairs.size()) +
                         " pairs and " + std::to_string(c) + " predicates");
  }
  if (mode == TemporalRowMode::kArgmax) {
    Tensor rows({pairs.size(), c});
    for (std::size_t k = 0; k < pairs.size(); ++k) {
      const auto* e = bank.find(pairs[k]);
      if (!e) continue;
      const auto phi = coarse.value().row_span(k);
      const auto x = static_cast<std::size_t>(std::max_element(phi.begin(), phi.end()) - phi.begin());
      const auto src = e->probabilities.row_span(x);
      std::copy(src.begin(), src.end(), rows.row_span(k).begin());
    }
    return tape.constant(std::move(rows));
  }
  const Var weights = normalize_rows(coarse);
  std::vector<Var> rows;
  rows.reserve(pairs.size());
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    rows.push_back(matmul(gather_rows(weights, {k}), tape.constant(bank.matrix(pairs[k].subject,
                                                                               pairs[k].object))));
  }
  return rows.size() == 1 ? rows.front() : concat(rows, 0);
}

Var spatial_embedding(Tape& tape, ParamStore& store, const KnowledgeEmbedderShape& shape,
                      Var rows) {
  return apply_mlp(tape, store, "kn.spa", shape.hidden.size() + 1, rows);
}

Var temporal_embedding(Tape& tape, ParamStore& store, const KnowledgeEmbedderShape& shape,
                       Var rows) {
  return apply_mlp(tape, store, "kn.tem", shape.hidden.size() + 1, rows);
}

Var spatial_knowledge_head(Tape& tape, ParamStore& store, Var embedding) {
  return sigmoid(apply_linear(tape, store, "kn.spk_head", embedding));
}

Var temporal_knowledge_head(Tape& tape, ParamStore& store, Var embedding) {
  return sigmoid(apply_linear(tape, store, "kn.tpk_head", embedding));
}

Var spatial_knowledge_loss(Tape& tape, ParamStore& store, Var embedding, const Tensor& labels) {
  return bce_sum(spatial_knowledge_head(tape, store, embedding), labels);
}

std::optional<Var> temporal_knowledge_loss(Tape& tape, ParamStore& store, Var embedding,
                                           const std::vector<std::optional<std::size_t>>& successor,
                                           const Tensor& next_labels) {
  std::vector<std::size_t> rows;
  std::vector<std::size_t> targets;
  for (std::size_t k = 0; k < successor.size(); ++k) {
    if (!successor[k]) continue;
    rows.push_back(k);
    targets.push_back(*successor[k]);
  }
  if (rows.empty()) return std::nullopt;
  const std::size_t c = next_labels.cols();
  Tensor y({rows.size(), c});
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const auto src = next_labels.row_span(targets[i]);
    std::copy(src.begin(), src.end(), y.row_span(i).begin());
  }
  return bce_sum(temporal_knowledge_head(tape, store, gather_rows(embedding, rows)), y);
}

}  // namespace stket
