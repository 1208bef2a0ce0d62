#include "stket/benchmark.hpp"

#include <chrono>
#include <fstream>

#include "stket/errors.hpp"
#include "stket/json_keys.hpp"

namespace stket {

using nlohmann::json;

BenchmarkConfig benchmark_config_from_json(const json& j) {
  BenchmarkConfig c;
  reject_unknown_keys(j, to_json(c), "benchmark config");
  try {
    c.synthetic = synthetic_config_from_json(j.at("synthetic"));
    c.test_fraction = j.value("test_fraction", c.test_fraction);
    c.model = model_config_from_json(j.value("model", json::object()));
    c.train = train_config_from_json(j.value("train", json::object()));
    c.ks = j.value("ks", c.ks);
    c.seeds = j.value("seeds", c.seeds);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("benchmark config: ") + e.what());
  }
  if (!(c.test_fraction > 0.0 && c.test_fraction < 1.0)) {
    throw ConfigError("benchmark config: test_fraction must lie in (0, 1)");
  }
  c.model.validate();
  validate(c.synthetic);
  return c;
}

BenchmarkConfig load_benchmark_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  return benchmark_config_from_json(j);
}

json to_json(const BenchmarkConfig& c) {
  return {{"synthetic", to_json(c.synthetic)},
          {"test_fraction", c.test_fraction},
          {"model", to_json(c.model)},
          {"train", to_json(c.train)},
          {"ks", c.ks},
          {"seeds", c.seeds}};
}

std::pair<Dataset, Dataset> split_dataset(const Dataset& dataset, double test_fraction) {
  Dataset train = dataset;
  Dataset test = dataset;
  const auto n = dataset.videos.size();
  if (n < 2) throw DataError("need at least two videos to split");
  auto n_test = static_cast<std::size_t>(static_cast<double>(n) * test_fraction + 0.5);
  n_test = std::min(std::max<std::size_t>(n_test, 1), n - 1);
  train.videos.assign(dataset.videos.begin(), dataset.videos.end() - static_cast<std::ptrdiff_t>(n_test));
  test.videos.assign(dataset.videos.end() - static_cast<std::ptrdiff_t>(n_test), dataset.videos.end());
  return {std::move(train), std::move(test)};
}

BenchmarkRun run_benchmark_seed(const BenchmarkConfig& config, std::uint64_t seed, std::size_t jobs) {
  const auto start = std::chrono::steady_clock::now();
  SyntheticConfig sc = config.synthetic;
  sc.seed = seed;
  const auto data = generate_synthetic_dataset(sc);
  const auto [train_set, test_set] = split_dataset(data.dataset, config.test_fraction);
  const KnowledgeBanks banks = build_knowledge(train_set, 1, jobs);

  TrainConfig tc = config.train;
  tc.seed = seed;
  BenchmarkRun run;
  run.seed = seed;
  const auto fit = [&](bool use_knowledge, std::vector<EpochSummary>& epochs) {
    ModelConfig mc = config.model;
    mc.use_knowledge = use_knowledge;
    StketModel model(mc, seed);
    const auto samples = prepare_samples(train_set, Task::kPredCls, mc);
    OptimizerState state;
    epochs = train(model, state, banks, samples, tc);
    return evaluate(model, banks, test_set, Task::kPredCls, test_set, config.ks, jobs);
  };
  run.stket = fit(true, run.stket_epochs);
  run.ablation = fit(false, run.ablation_epochs);
  run.baseline = make_report(
      count_hits(frequency_prior_baseline(banks.spatial, test_set), Task::kPredCls, config.ks,
                 test_set.num_predicates()),
      Task::kPredCls, test_set.predicate_names);
  run.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return run;
}

json to_json(const BenchmarkRun& run) {
  const auto epochs = [](const std::vector<EpochSummary>& e) {
    json a = json::array();
    for (const auto& s : e) a.push_back({{"epoch", s.epoch}, {"loss", to_json(s.mean)}});
    return a;
  };
  return {{"seed", run.seed},
          {"stket", to_json(run.stket)},
          {"ablation", to_json(run.ablation)},
          {"baseline", to_json(run.baseline)},
          {"stket_epochs", epochs(run.stket_epochs)},
          {"ablation_epochs", epochs(run.ablation_epochs)},
          {"seconds", run.seconds}};
}

}  // namespace stket
