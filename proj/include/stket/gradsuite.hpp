#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "stket/knowledge.hpp"
#include "stket/model.hpp"
#include "stket/synthetic.hpp"

namespace stket {

// A tiny synthetic video with a matching small model, for gradient checks
// and architecture tests.
struct ToyOptions {
  Task task = Task::kPredCls;
  TemporalRowMode row_mode = TemporalRowMode::kArgmax;
  std::size_t frames = 2;
  std::size_t pairs = 3;
  bool use_knowledge = true;
};

struct ToyProblem {
  SyntheticDataset data;
  std::unique_ptr<StketModel> model;
  KnowledgeBanks knowledge;
  VideoSample sample;
};

// d = 16 with 2 heads, C = 26 in three predicate types, 4 object classes.
ModelConfig toy_model_config();
ToyProblem make_toy_problem(std::uint64_t seed, const ToyOptions& options = {});

struct GradCase {
  std::string name;
  double max_rel_error = 0.0;
  std::string worst;  // parameter coordinate or seed of the worst error
};

struct GradSuiteReport {
  std::vector<GradCase> cases;
  double tolerance = 1e-4;
  std::size_t seeds = 0;
  double seconds = 0.0;

  bool passed() const;
};

// Finite-difference checks of every differentiable op, a full SKEL layer and
// the end-to-end loss on the toy problem (PredCls with both temporal row
// modes and SGCls), each over `seeds` seeds.
GradSuiteReport run_gradient_suite(std::size_t seeds = 20, double tolerance = 1e-4,
                                   const std::function<void(const GradCase&)>& progress = {});

}  // namespace stket
