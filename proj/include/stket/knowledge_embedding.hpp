#pragma once

#include <cstddef>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "stket/autograd.hpp"
#include "stket/knowledge.hpp"

namespace stket {

enum class TemporalRowMode { kArgmax, kExpected };

TemporalRowMode parse_temporal_row_mode(const std::string& text);
std::string to_string(TemporalRowMode mode);

// f_spa / f_tem: C -> hidden... -> d, plus the auxiliary sigmoid heads.
struct KnowledgeEmbedderShape {
  std::size_t num_predicates = 26;
  std::vector<std::size_t> hidden = {256, 512, 1024};
  std::size_t width = 1936;

  std::vector<std::size_t> widths() const;
};

// Registers kn.spa.*, kn.tem.*, kn.spk_head and kn.tpk_head.
void add_knowledge_embedder(ParamStore& store, const KnowledgeEmbedderShape& shape,
                            std::mt19937_64& rng);

// Stacked E^{i,j} rows, one per pair ([K x C]); unseen pairs give zeros.
Tensor spatial_knowledge_rows(const SpatialMatrixBank& bank, const std::vector<PairKey>& pairs);

// Row of Ê^{i,j} selected by the coarse predictions φ̂ ([K x C]): the row of
// argmax φ̂ (a constant), or Σ_x normalize(φ̂)_x Ê[x] (differentiable in φ̂).
Var temporal_knowledge_rows(Tape& tape, const TemporalMatrixBank& bank,
                            const std::vector<PairKey>& pairs, Var coarse, TemporalRowMode mode);

Var spatial_embedding(Tape& tape, ParamStore& store, const KnowledgeEmbedderShape& shape,
                      Var rows);
Var temporal_embedding(Tape& tape, ParamStore& store, const KnowledgeEmbedderShape& shape,
                       Var rows);

// Sigmoid auxiliary predictions from the embeddings.
Var spatial_knowledge_head(Tape& tape, ParamStore& store, Var embedding);
Var temporal_knowledge_head(Tape& tape, ParamStore& store, Var embedding);

// L_spk for one frame: BCE of the spatial head against the frame's labels.
Var spatial_knowledge_loss(Tape& tape, ParamStore& store, Var embedding, const Tensor& labels);
// L_tpk for one frame: BCE of the temporal head against the labels of each
// pair's successor in the next frame; rows without a successor contribute 0.
// `successor[k]` indexes rows of `next_labels`. Returns nullopt when no row
// has a successor.
std::optional<Var> temporal_knowledge_loss(Tape& tape, ParamStore& store, Var embedding,
                                           const std::vector<std::optional<std::size_t>>& successor,
                                           const Tensor& next_labels);

}  // namespace stket
