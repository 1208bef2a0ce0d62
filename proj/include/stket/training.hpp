#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "stket/model.hpp"

namespace stket {

struct AdamWConfig {
  double lr = 2e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

struct OptimizerState {
  AdamWConfig hyper;
  std::uint64_t step = 0;
  std::map<std::string, Tensor> m;
  std::map<std::string, Tensor> v;
};

double global_grad_norm(const ParamStore& params);
// Scales every gradient by max_norm / norm when the global L2 norm exceeds
// max_norm. Returns the applied factor (1 when nothing was clipped).
double clip_gradients(ParamStore& params, double max_norm);

// One bias-corrected AdamW step with decoupled weight decay. Parameters
// without a gradient buffer are treated as having a zero gradient.
void adamw_step(ParamStore& params, OptimizerState& state);

struct TrainConfig {
  std::size_t epochs = 10;
  std::uint64_t seed = 0;
  AdamWConfig optimizer;
  double clip_norm = 5.0;
  bool shuffle = true;  // per-epoch video order drawn from (seed, epoch)
  void validate() const;
};

nlohmann::json to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});

struct LossValues {
  double spatial = 0.0;
  double temporal = 0.0;
  double final_term = 0.0;
  double spatial_knowledge = 0.0;
  double temporal_knowledge = 0.0;
  double object = 0.0;
  double total = 0.0;
};

nlohmann::json to_json(const LossValues& v);

struct ProgressRecord {
  std::size_t epoch = 0;  // 1-based
  std::string video_id;
  LossValues loss;
  double clip_factor = 1.0;
};

struct EpochSummary {
  std::size_t epoch = 0;
  std::size_t videos = 0;
  LossValues mean;
};

using ProgressFn = std::function<void(const ProgressRecord&)>;

// Batch size 1: forward, backward, clip and step for every video. `epoch`
// is 1-based and feeds the shuffle and dropout seeds. Throws NumericError
// naming the video and loss term on a non-finite loss.
EpochSummary train_epoch(StketModel& model, OptimizerState& state, const KnowledgeBanks& knowledge,
                         const std::vector<VideoSample>& videos, const TrainConfig& config,
                         std::size_t epoch, const ProgressFn& progress = {});

// Runs epochs start_epoch + 1 .. config.epochs.
std::vector<EpochSummary> train(StketModel& model, OptimizerState& state,
                                const KnowledgeBanks& knowledge,
                                const std::vector<VideoSample>& videos, const TrainConfig& config,
                                std::size_t start_epoch = 0, const ProgressFn& progress = {});

struct Checkpoint {
  ModelConfig model;
  TrainConfig train;
  std::size_t epoch = 0;
  ParamStore params;
  OptimizerState optimizer;
  Task task = Task::kPredCls;
};

inline constexpr int kCheckpointVersion = 1;

// Directory with checkpoint.json and float64 tensor files under params/,
// adam_m/ and adam_v/.
void save_checkpoint(const std::filesystem::path& dir, const StketModel& model,
                     const OptimizerState& state, const TrainConfig& train, std::size_t epoch,
                     Task task);
// Throws DataError on a missing or corrupt file, ConfigError on a version
// mismatch or inconsistent parameter shapes.
Checkpoint load_checkpoint(const std::filesystem::path& dir);
// Also checks the checkpoint against an expected predicate / class count.
Checkpoint load_checkpoint(const std::filesystem::path& dir, std::size_t num_predicates,
                           std::size_t num_classes);

// Samples for every video of `dataset`; SGGen pairs each detection video with
// the ground-truth video of the same id.
std::vector<VideoSample> prepare_samples(const Dataset& inputs, Task task, const ModelConfig& config,
                                         const Dataset* ground_truth = nullptr);

}  // namespace stket
