#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "stket/scenegraph.hpp"
#include "stket/tensor.hpp"

namespace stket {

// Dynamics of one (subject class, object class) pair type. Each predicate
// type (attention / spatial / contact for Action Genome) runs its own Markov
// chain, so a pair carries exactly one predicate of every type per frame.
struct PairDynamics {
  std::size_t subject_class = 0;
  std::size_t object_class = 1;
  std::vector<Tensor> transitions;           // one row-stochastic [n_g x n_g] per type
  std::vector<std::vector<double>> initial;  // per type; empty -> stationary
};

struct SyntheticConfig {
  std::vector<std::string> class_names;
  std::vector<std::string> predicate_names;  // generated when empty
  std::vector<std::size_t> predicate_type_sizes;
  std::vector<PairDynamics> pairs;

  std::size_t videos = 20;
  std::size_t frames_per_video = 8;
  std::size_t relationships_per_video = 2;
  std::uint64_t seed = 0;

  bool with_features = true;
  std::size_t visual_dim = 2048;
  std::size_t union_channels = 256;
  std::size_t union_grid = 7;
  double class_signal = 1.0;      // std of class-mean entries of visual features
  double predicate_signal = 1.0;  // std of per-predicate union-feature directions
  double feature_noise = 1.0;
  double occlusion_prob = 0.0;  // chance a frame's union feature carries no predicate signal
  double box_step = 2.0;        // random-walk std in pixels

  // Detector-style proposals for scene-graph generation (boxes jittered, class
  // distributions noisy, every ordered object pair listed as a candidate).
  bool emit_detections = false;
  double detection_jitter = 3.0;
  double detection_misclass = 0.1;
};

// Power-law stationary Metropolis chains mixed with the identity.
struct DynamicsOptions {
  std::size_t object_classes = 3;  // excluding the subject class 0
  std::vector<std::size_t> predicate_type_sizes = {3, 6, 17};
  double skew = 0.0;        // stationary mass of rank r within a type ~ r^-skew
  double stickiness = 0.5;  // weight of the identity in every transition block
  bool pair_permute = false;  // shuffle which predicate is frequent per pair type
  std::uint64_t seed = 0;
};

std::vector<PairDynamics> make_dynamics(const DynamicsOptions& options);

struct PairTruth {
  std::size_t subject_class = 0;
  std::size_t object_class = 0;
  std::vector<double> spatial;  // P(x present in a frame)
  Tensor temporal;              // P(y present at t | x present at t-1), [C x C]
};

struct GroundTruthDynamics {
  std::vector<PairTruth> pairs;
  const PairTruth* find(std::size_t subject_class, std::size_t object_class) const;
};

struct SyntheticDataset {
  Dataset dataset;
  std::optional<Dataset> detections;
  GroundTruthDynamics truth;
};

// Throws ConfigError naming the pair, type and row of the first invalid
// stochastic matrix.
void validate(const SyntheticConfig& config);
std::vector<double> stationary_distribution(const Tensor& transition);
GroundTruthDynamics true_dynamics(const SyntheticConfig& config);
SyntheticDataset generate_synthetic_dataset(const SyntheticConfig& config);

nlohmann::json to_json(const SyntheticConfig& config);
SyntheticConfig synthetic_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const GroundTruthDynamics& truth);

}  // namespace stket
