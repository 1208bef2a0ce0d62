#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <vector>

#include "stket/scenegraph.hpp"
#include "stket/tensor.hpp"

namespace stket {

struct PairKey {
  std::size_t subject = 0;
  std::size_t object = 0;
  friend auto operator<=>(const PairKey&, const PairKey&) = default;
};

// Per class pair: how often the pair was annotated and how often each
// predicate appeared with it; probability = count / pair_count.
struct SpatialEntry {
  std::uint64_t pair_count = 0;
  std::vector<std::uint64_t> predicate_counts;
  std::vector<double> probabilities;
};

class SpatialMatrixBank {
 public:
  explicit SpatialMatrixBank(std::size_t num_predicates = 0) : num_predicates_(num_predicates) {}

  std::size_t num_predicates() const { return num_predicates_; }
  const std::map<PairKey, SpatialEntry>& entries() const { return entries_; }
  const SpatialEntry* find(PairKey key) const;
  // E^{i,j}; zero vector for pairs never observed.
  std::vector<double> lookup(std::size_t subject, std::size_t object) const;

  void add_occurrence(PairKey key, const std::vector<std::size_t>& predicates);
  void merge(const SpatialMatrixBank& other);
  void finalize();
  void drop_rare_pairs(std::uint64_t min_pair_count);
  void set_entry(PairKey key, SpatialEntry entry) { entries_[key] = std::move(entry); }

  friend bool operator==(const SpatialMatrixBank& a, const SpatialMatrixBank& b);

 private:
  std::size_t num_predicates_;
  std::map<PairKey, SpatialEntry> entries_;
};

// Per class pair: transition counts between predicates of consecutive frames
// and, per source predicate, the number of occurrences with a tracked
// successor. probability(x, y) = transitions(x, y) / source(x).
struct TemporalEntry {
  std::vector<std::uint64_t> transition_counts;  // row-major C x C
  std::vector<std::uint64_t> source_counts;
  Tensor probabilities;                          // C x C
};

class TemporalMatrixBank {
 public:
  explicit TemporalMatrixBank(std::size_t num_predicates = 0) : num_predicates_(num_predicates) {}

  std::size_t num_predicates() const { return num_predicates_; }
  const std::map<PairKey, TemporalEntry>& entries() const { return entries_; }
  const TemporalEntry* find(PairKey key) const;
  // Ê^{i,j}; zero matrix for pairs never observed.
  Tensor matrix(std::size_t subject, std::size_t object) const;

  void add_transition(PairKey key, const std::vector<std::size_t>& previous,
                      const std::vector<std::size_t>& current);
  void merge(const TemporalMatrixBank& other);
  void finalize();
  void drop_pairs_not_in(const SpatialMatrixBank& spatial);
  void set_entry(PairKey key, TemporalEntry entry) { entries_[key] = std::move(entry); }

  friend bool operator==(const TemporalMatrixBank& a, const TemporalMatrixBank& b);

 private:
  std::size_t num_predicates_;
  std::map<PairKey, TemporalEntry> entries_;
};

// Counting passes over ground-truth annotations; `jobs` > 1 splits videos
// across threads and merges the partial counts.
SpatialMatrixBank build_spatial_matrix(const Dataset& dataset, std::size_t jobs = 1);
TemporalMatrixBank build_temporal_matrix(const Dataset& dataset, bool prefer_track_ids = true,
                                         std::size_t jobs = 1);

struct KnowledgeBanks {
  SpatialMatrixBank spatial;
  TemporalMatrixBank temporal;
};

KnowledgeBanks build_knowledge(const Dataset& dataset, std::uint64_t min_pair_count = 1,
                               std::size_t jobs = 1);

// Directory layout: knowledge.json (index + raw counts) and one tensor file
// per pair and matrix.
void save_knowledge(const KnowledgeBanks& banks, const std::filesystem::path& dir);
KnowledgeBanks load_knowledge(const std::filesystem::path& dir);

// Shannon entropy (bits) of every temporal row with a nonzero source count,
// after normalising the row to sum to one.
struct EntropyRow {
  PairKey pair;
  std::size_t predicate = 0;
  std::uint64_t source_count = 0;
  double entropy_bits = 0.0;

  friend bool operator==(const EntropyRow&, const EntropyRow&) = default;
};
std::vector<EntropyRow> transition_entropy(const TemporalMatrixBank& bank);

}  // namespace stket
