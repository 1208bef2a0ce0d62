#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "stket/evaluation.hpp"
#include "stket/synthetic.hpp"
#include "stket/training.hpp"

namespace stket {

// Skewed synthetic PredCls benchmark: STKET against the frequency prior and
// the no-knowledge ablation on a held-out split of the same generator.
struct BenchmarkConfig {
  SyntheticConfig synthetic;
  double test_fraction = 0.25;  // trailing videos held out
  ModelConfig model;
  TrainConfig train;
  std::vector<std::size_t> ks = {10, 20, 50};
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
};

BenchmarkConfig benchmark_config_from_json(const nlohmann::json& j);
BenchmarkConfig load_benchmark_config(const std::filesystem::path& path);
nlohmann::json to_json(const BenchmarkConfig& config);

// First (1 - fraction) of the videos for training, the rest for testing.
// Both halves share the feature store.
std::pair<Dataset, Dataset> split_dataset(const Dataset& dataset, double test_fraction);

struct BenchmarkRun {
  std::uint64_t seed = 0;
  MetricsReport stket;
  MetricsReport ablation;
  MetricsReport baseline;
  std::vector<EpochSummary> stket_epochs;
  std::vector<EpochSummary> ablation_epochs;
  double seconds = 0.0;
};

// The seed drives data generation, parameter initialisation and training.
BenchmarkRun run_benchmark_seed(const BenchmarkConfig& config, std::uint64_t seed,
                                std::size_t jobs = 1);

nlohmann::json to_json(const BenchmarkRun& run);

}  // namespace stket
