#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "stket/knowledge.hpp"
#include "stket/model.hpp"

namespace stket {

struct ScoredTriplet {
  std::size_t pair = 0;  // candidate row within the frame
  std::size_t subject = 0;  // proposal indices
  std::size_t object = 0;
  std::size_t subject_class = 0;
  std::size_t object_class = 0;
  Box subject_box;
  Box object_box;
  std::size_t predicate = 0;
  double confidence = 0.0;
};

struct GroundTruthTriplet {
  std::size_t subject = 0;
  std::size_t object = 0;
  std::size_t subject_class = 0;
  std::size_t object_class = 0;
  Box subject_box;
  Box object_box;
  std::size_t predicate = 0;
};

struct FrameEval {
  std::string video_id;
  std::int64_t frame_index = 0;
  std::vector<ScoredTriplet> predictions;
  std::vector<GroundTruthTriplet> ground_truth;
};

// Higher confidence first, then lower predicate id, then lower pair index.
bool ranks_before(const ScoredTriplet& a, const ScoredTriplet& b);
void sort_predictions(std::vector<ScoredTriplet>& predictions);

std::vector<GroundTruthTriplet> ground_truth_triplets(const FrameAnnotation& frame);

inline constexpr double kMatchIou = 0.5;

bool triplet_matches(const ScoredTriplet& p, const GroundTruthTriplet& g, Task task);

// hits[i][g]: ground-truth triplet g is hit within the top ks[i] predictions.
// Predictions must be sorted; each prediction claims at most one
// ground-truth triplet, greedily in rank order.
std::vector<std::vector<bool>> match_triplets(const std::vector<ScoredTriplet>& predictions,
                                              const std::vector<GroundTruthTriplet>& ground_truth,
                                              Task task, const std::vector<std::size_t>& ks);

struct RecallCounts {
  std::vector<std::size_t> ks;
  std::vector<std::uint64_t> hits;  // per K
  std::uint64_t ground_truth = 0;
  // per predicate
  std::vector<std::vector<std::uint64_t>> predicate_hits;  // [predicate][K]
  std::vector<std::uint64_t> predicate_ground_truth;

  void merge(const RecallCounts& other);
};

RecallCounts count_hits(const std::vector<FrameEval>& frames, Task task,
                        const std::vector<std::size_t>& ks, std::size_t num_predicates);

// Micro-averaged R@K in percent; throws DataError without ground truth.
double recall_at_k(const RecallCounts& counts, std::size_t k_index);
// Unweighted mean of per-predicate recall over predicates with ground truth.
double mean_recall_at_k(const RecallCounts& counts, std::size_t k_index);

// Candidate predictions of the trained model for every annotated frame.
// Confidence = predicate confidence x subject class confidence x object
// class confidence (class confidences are 1 in PredCls).
std::vector<FrameEval> predict(StketModel& model, const KnowledgeBanks& knowledge,
                               const Dataset& inputs, Task task, const Dataset& ground_truth,
                               std::size_t jobs = 1);

// PredCls reference predictor: each ground-truth pair scores predicates with
// its spatial co-occurrence vector, uniform 1/C for unseen pairs.
std::vector<FrameEval> frequency_prior_baseline(const SpatialMatrixBank& bank,
                                                const Dataset& dataset);

struct PredicateRecall {
  std::size_t id = 0;
  std::string name;
  std::uint64_t gt_count = 0;
  std::map<std::size_t, double> r_at;

  friend bool operator==(const PredicateRecall&, const PredicateRecall&) = default;
};

struct MetricsReport {
  std::string task;
  std::vector<std::size_t> ks;
  std::map<std::size_t, double> recall;
  std::map<std::size_t, double> mean_recall;
  std::vector<PredicateRecall> per_predicate;
  std::vector<EntropyRow> entropy;

  friend bool operator==(const MetricsReport&, const MetricsReport&) = default;
};

MetricsReport make_report(const RecallCounts& counts, Task task,
                          const std::vector<std::string>& predicate_names);

nlohmann::json to_json(const MetricsReport& report);
MetricsReport report_from_json(const nlohmann::json& j);
void save_report(const MetricsReport& report, const std::filesystem::path& path);
MetricsReport load_report(const std::filesystem::path& path);
// id,name,gt_count,R@k... one row per predicate.
std::string per_predicate_csv(const MetricsReport& report);

MetricsReport evaluate(StketModel& model, const KnowledgeBanks& knowledge, const Dataset& inputs,
                       Task task, const Dataset& ground_truth, const std::vector<std::size_t>& ks,
                       std::size_t jobs = 1);

}  // namespace stket
