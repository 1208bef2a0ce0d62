#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "stket/autograd.hpp"
#include "stket/knowledge.hpp"
#include "stket/knowledge_embedding.hpp"
#include "stket/layers.hpp"
#include "stket/scenegraph.hpp"

namespace stket {

enum class Task { kPredCls, kSGCls, kSGGen };
Task parse_task(const std::string& text);
std::string to_string(Task task);

enum class ClassifierMode { kSingleHead, kThreeHead };
enum class FirstFrameMode { kSolo, kDuplicate };

struct ModelConfig {
  std::size_t visual_dim = 2048;
  std::size_t union_channels = 256;
  std::size_t union_grid = 7;
  std::size_t object_proj = 512;
  std::size_t union_proj = 512;
  std::size_t semantic_dim = 200;
  std::size_t d = 1936;
  std::size_t heads = 8;
  std::size_t ffn_width = 2048;
  double dropout = 0.1;
  std::size_t spatial_layers = 2;
  std::size_t temporal_layers = 2;
  std::size_t window = 4;
  std::size_t num_predicates = 26;
  std::size_t num_classes = 36;
  std::vector<std::size_t> predicate_type_sizes = {3, 6, 17};
  std::vector<std::size_t> knowledge_hidden = {256, 512, 1024};
  ClassifierMode classifier_mode = ClassifierMode::kThreeHead;
  FirstFrameMode tkel_first_frame = FirstFrameMode::kSolo;
  TemporalRowMode temporal_row_mode = TemporalRowMode::kArgmax;
  bool causal_tkel = false;
  // Ablation switch: false zeroes every knowledge embedding and drops the
  // knowledge losses.
  bool use_knowledge = true;

  std::size_t union_dim() const { return union_channels * union_grid * union_grid; }
  KnowledgeEmbedderShape knowledge_shape() const { return {num_predicates, knowledge_hidden, d}; }
  // Throws ConfigError on inconsistent sizes.
  void validate() const;
};

nlohmann::json to_json(const ModelConfig& config);
// Missing keys keep the values already in `base`.
ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig base = {});

// Model inputs for one frame, one row per candidate relationship.
struct FrameSample {
  std::int64_t frame_index = 0;
  std::vector<std::size_t> subject_index;
  std::vector<std::size_t> object_index;
  Tensor subject_visual;  // [K x visual_dim]
  Tensor object_visual;
  Tensor union_features;  // [K x union_dim]
  Tensor box_masks;       // [K x 2 grid^2], subject mask then object mask
  Tensor subject_dist;    // [K x classes]
  Tensor object_dist;
  // Ground-truth classes in PredCls/SGCls, detector argmax in SGGen.
  std::vector<std::size_t> subject_class;
  std::vector<std::size_t> object_class;
  std::vector<double> subject_confidence;
  std::vector<double> object_confidence;
  Tensor labels;  // [K x C] multi-hot
  // Row of the same pair in the previous sample frame, when that frame is
  // the directly preceding annotated frame.
  std::vector<std::optional<std::size_t>> prev;
  bool has_previous = false;

  std::size_t size() const { return subject_index.size(); }
};

struct VideoSample {
  std::string video_id;
  Task task = Task::kPredCls;
  std::vector<FrameSample> frames;  // frames without candidates are dropped
};

// PredCls/SGCls read ground-truth relationships of `video`. SGGen reads the
// detector candidates of `video` and, when `ground_truth` is given, labels
// each candidate with the predicates of the ground-truth pair whose subject
// and object share its class and overlap it with IoU >= 0.5.
VideoSample prepare_sample(const Dataset& inputs, const VideoAnnotation& video, Task task,
                           const ModelConfig& config,
                           const VideoAnnotation* ground_truth = nullptr);

class StketModel {
 public:
  explicit StketModel(ModelConfig config, std::uint64_t seed = 0);
  // Empty parameter set; filled by checkpoint loading.
  StketModel(ModelConfig config, ParamStore params);

  const ModelConfig& config() const { return config_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

 private:
  ModelConfig config_;
  ParamStore params_;
};

// ---- components ---------------------------------------------------------------

// f_box: the two occupancy masks ([2 x grid^2] row-major in `masks`)
// projected to union_channels; returns [channels x grid^2].
Var box_feature_map(Tape& tape, ParamStore& store, const ModelConfig& config,
                    std::span<const double> masks);

// x = [f_s(v_s), f_o(v_o), f_u(u + f_box(b_s, b_o)), dist_s E, dist_o E].
Var build_representation(Tape& tape, ParamStore& store, const ModelConfig& config,
                         const FrameSample& frame, Var subject_dist, Var object_dist);

Var skel_forward(Tape& tape, ParamStore& store, const ModelConfig& config, Var x, Var knowledge,
                 DropoutContext& drop, std::vector<AttentionWeights>* weights = nullptr);

// Predicate confidences in (0, 1); `head` is head.spatial, head.temporal or
// head.final.
Var classify_predicates(Tape& tape, ParamStore& store, const ModelConfig& config,
                        const std::string& head, Var representation);

// One TKEL window over [prev; curr] rows with Q/K bias [prev_bias; curr_bias]
// plus frame encodings e_1 / e_2. Without a previous block the window is
// the current frame alone with e_2. Returns the rows of the current frame.
Var tkel_window(Tape& tape, ParamStore& store, const ModelConfig& config,
                std::optional<Var> prev_rows, std::optional<Var> prev_bias, Var curr_rows,
                Var curr_bias, DropoutContext& drop, Var* window_out = nullptr);

// Per frame F^T_t. spatial[t] = F^S_t, spatial_knowledge[t] = S_t,
// temporal_knowledge[t] = T_t (built from frame t's coarse predictions).
std::vector<Var> tkel_forward(Tape& tape, ParamStore& store, const ModelConfig& config,
                              const VideoSample& sample, const std::vector<Var>& spatial,
                              const std::vector<Var>& spatial_knowledge,
                              const std::vector<Var>& temporal_knowledge, DropoutContext& drop);

// Window covering element i of a chain of `length` elements for window size
// tau: the earliest sliding window that contains i.
struct ChainWindow {
  std::size_t begin = 0;
  std::size_t length = 0;
};
ChainWindow sta_window(std::size_t index, std::size_t length, std::size_t tau);

// Per frame final representations [K x d] from tracked pair chains.
std::vector<Var> sta_forward(Tape& tape, ParamStore& store, const ModelConfig& config,
                             const VideoSample& sample, const std::vector<Var>& spatial,
                             const std::vector<Var>& temporal, DropoutContext& drop);

// ---- full model ---------------------------------------------------------------

struct ForwardOptions {
  bool train = false;
  std::uint64_t dropout_seed = 0;
};

struct FrameOutput {
  Var spatial;       // F^S
  Var temporal;      // F^T
  Var final_repr;
  Var spatial_probs;  // coarse head
  Var temporal_probs;
  Var final_probs;
  Var spatial_knowledge;   // S_t
  Var temporal_knowledge;  // T_t
  std::optional<Var> subject_class_probs;  // SGCls
  std::optional<Var> object_class_probs;
};

struct LossTerms {
  Var spatial;
  Var temporal;
  Var final_term;
  Var spatial_knowledge;
  Var temporal_knowledge;
  Var object;
  Var total;
};

struct VideoForward {
  std::vector<FrameOutput> frames;
  LossTerms loss;
};

VideoForward forward(Tape& tape, StketModel& model, const KnowledgeBanks& knowledge,
                     const VideoSample& sample, const ForwardOptions& options = {});

}  // namespace stket
