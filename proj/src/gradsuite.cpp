#include "stket/gradsuite.hpp"

#include <chrono>
#include <cmath>
#include <random>

#include "stket/layers.hpp"

namespace stket {

ModelConfig toy_model_config() {
  ModelConfig c;
  c.visual_dim = 6;
  c.union_channels = 2;
  c.union_grid = 2;
  c.object_proj = 4;
  c.union_proj = 4;
  c.semantic_dim = 2;
  c.d = 16;
  c.heads = 2;
  c.ffn_width = 8;
  c.num_classes = 4;
  c.knowledge_hidden = {4, 6, 8};
  return c;
}

ToyProblem make_toy_problem(std::uint64_t seed, const ToyOptions& options) {
  SyntheticConfig sc;
  sc.class_names = {"person", "cup", "phone", "book"};
  sc.predicate_type_sizes = {3, 6, 17};
  DynamicsOptions dyn;
  dyn.skew = 1.0;
  dyn.seed = seed;
  sc.pairs = make_dynamics(dyn);
  sc.videos = 8;
  sc.frames_per_video = options.frames;
  sc.relationships_per_video = options.pairs;
  sc.seed = seed;
  sc.visual_dim = 6;
  sc.union_channels = 2;
  sc.union_grid = 2;

  ToyProblem p;
  p.data = generate_synthetic_dataset(sc);
  ModelConfig mc = toy_model_config();
  mc.temporal_row_mode = options.row_mode;
  mc.use_knowledge = options.use_knowledge;
  p.model = std::make_unique<StketModel>(mc, seed);
  p.knowledge = build_knowledge(p.data.dataset);
  p.sample = prepare_sample(p.data.dataset, p.data.dataset.videos[0], options.task, mc);
  return p;
}

bool GradSuiteReport::passed() const {
  for (const auto& c : cases) {
    if (!(c.max_rel_error <= tolerance)) return false;
  }
  return !cases.empty();
}

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng) {
  return normal_tensor(std::move(shape), 1.0, rng);
}

// Random linear functional of y, so every output coordinate matters.
Var weighted_sum(Var y, std::uint64_t seed) {
  std::mt19937_64 rng(seed * 7919 + 11);
  const Tensor w = random_tensor({y.value().size(), 1}, rng);
  return sum(matmul(reshape(y, {1, y.value().size()}), y.tape->constant(w)));
}

void record(GradCase& c, double err, const std::string& where) {
  if (err > c.max_rel_error || std::isnan(err)) {
    c.max_rel_error = std::isnan(err) ? INFINITY : err;
    c.worst = where;
  }
}

std::vector<GradCase> op_cases(std::size_t seeds) {
  using Fn = std::function<Var(Tape&, Var)>;
  std::vector<GradCase> cases;
  const auto find = [&](const std::string& name) -> GradCase& {
    for (auto& c : cases) {
      if (c.name == name) return c;
    }
    cases.push_back({name, 0.0, ""});
    return cases.back();
  };
  for (std::uint64_t seed = 0; seed < seeds; ++seed) {
    std::mt19937_64 rng(seed + 1000);
    const Tensor x = random_tensor({3, 4}, rng);
    const Tensor other = random_tensor({3, 4}, rng);
    const Tensor right = random_tensor({4, 2}, rng);
    const Tensor left = random_tensor({2, 3}, rng);
    const Tensor row = random_tensor({1, 4}, rng);
    const Tensor bias = random_tensor({1, 5}, rng);
    const Tensor weight = random_tensor({4, 5}, rng);
    Tensor targets({3, 4});
    for (auto& v : targets.data()) v = rng() % 2 ? 1.0 : 0.0;
    Tensor mask({3, 4});
    for (auto& v : mask.data()) v = rng() % 2 ? 1.0 : 0.0;
    Tensor positive = x;
    for (auto& v : positive.data()) v = std::abs(v) + 0.5;
    const std::string where = "seed " + std::to_string(seed);

    const std::vector<std::tuple<std::string, Fn, const Tensor*>> list = {
        {"op matmul (left)", [&](Tape& t, Var v) { return weighted_sum(matmul(v, t.constant(right)), seed); }, &x},
        {"op matmul (right)", [&](Tape& t, Var v) { return weighted_sum(matmul(t.constant(left), v), seed); }, &x},
        {"op transpose", [&](Tape&, Var v) { return weighted_sum(transpose(v), seed); }, &x},
        {"op add", [&](Tape& t, Var v) { return weighted_sum(add(v, t.constant(other)), seed); }, &x},
        {"op add_row", [&](Tape& t, Var v) { return weighted_sum(add_row(t.constant(other), gather_rows(v, {1})), seed); }, &x},
        {"op scale", [&](Tape&, Var v) { return weighted_sum(scale(v, -2.5), seed); }, &x},
        {"op relu", [&](Tape&, Var v) { return weighted_sum(relu(v), seed); }, &x},
        {"op sigmoid", [&](Tape&, Var v) { return weighted_sum(sigmoid(v), seed); }, &x},
        {"op log", [&](Tape&, Var v) { return weighted_sum(log_clamped(v), seed); }, &positive},
        {"op dropout", [&](Tape&, Var v) { return weighted_sum(dropout(v, mask, 0.1), seed); }, &x},
        {"op softmax_rows", [&](Tape&, Var v) { return weighted_sum(softmax_rows(v), seed); }, &x},
        {"op layer_norm (input)", [&](Tape& t, Var v) { return weighted_sum(layer_norm(v, t.constant(row), t.constant(row)), seed); }, &x},
        {"op layer_norm (gain)", [&](Tape& t, Var v) { return weighted_sum(layer_norm(t.constant(other), gather_rows(v, {0}), gather_rows(v, {2})), seed); }, &x},
        {"op concat", [&](Tape& t, Var v) { return weighted_sum(concat({v, t.constant(other), v}, 1), seed); }, &x},
        {"op slice_cols", [&](Tape&, Var v) { return weighted_sum(slice_cols(v, 1, 3), seed); }, &x},
        {"op gather_rows", [&](Tape&, Var v) { return weighted_sum(gather_rows(v, {2, 0, 2}), seed); }, &x},
        {"op reshape", [&](Tape&, Var v) { return weighted_sum(reshape(v, {6, 2}), seed); }, &x},
        {"op sum", [&](Tape&, Var v) { return scale(sum(sigmoid(v)), 3.0); }, &x},
        {"op normalize_rows", [&](Tape&, Var v) { return weighted_sum(normalize_rows(v), seed); }, &positive},
        {"op bce_sum", [&](Tape&, Var v) { return bce_sum(sigmoid(v), targets); }, &x},
        {"op softmax_cross_entropy", [&](Tape&, Var v) { return softmax_cross_entropy(v, {0, 3, 1}); }, &x},
        {"op linear", [&](Tape& t, Var v) { return weighted_sum(linear(v, t.constant(weight), t.constant(bias)), seed); }, &x},
    };
    for (const auto& [name, fn, input] : list) record(find(name), finite_diff_check(fn, *input), where);
  }
  return cases;
}

GradCase skel_layer_case(std::size_t seeds, std::size_t coords) {
  GradCase c{"SKEL layer parameters", 0.0, ""};
  for (std::uint64_t seed = 0; seed < seeds; ++seed) {
    std::mt19937_64 rng(seed + 2000);
    ParamStore store;
    add_transformer_layer(store, "skel.0", 8, 12, rng);
    // Spread the layer-norm parameters away from their identity init.
    for (auto& [name, p] : store) {
      if (name.find(".ln") != std::string::npos) {
        for (auto& v : p.value.data()) v += std::normal_distribution<double>(0.0, 0.3)(rng);
      }
    }
    const Tensor x = random_tensor({4, 8}, rng);
    const Tensor s = random_tensor({4, 8}, rng);
    const auto loss = [&](Tape& tape) {
      DropoutContext drop(0.1, seed);
      const Var out = apply_transformer_layer(tape, store, "skel.0", tape.constant(x),
                                              tape.constant(s), 2, drop);
      return weighted_sum(out, seed);
    };
    const auto r = check_parameter_gradients(store, loss, 1e-5, coords, seed);
    record(c, r.max_rel_error, "seed " + std::to_string(seed) + " " + r.worst_parameter);
  }
  return c;
}

GradCase model_case(const std::string& name, std::size_t seeds, std::size_t coords,
                    ToyOptions options) {
  GradCase c{name, 0.0, ""};
  for (std::uint64_t seed = 0; seed < seeds; ++seed) {
    ToyProblem p = make_toy_problem(seed + 3000, options);
    // Zero-initialised biases put ReLUs fed by all-zero knowledge rows
    // exactly on their kink; check at a generic point instead.
    std::mt19937_64 rng(seed + 4000);
    std::normal_distribution<double> jitter(0.0, 0.1);
    for (auto& [pname, param] : p.model->params()) {
      if (pname.ends_with(".b")) {
        for (auto& v : param.value.data()) v += jitter(rng);
      }
    }
    const auto loss = [&](Tape& tape) {
      return forward(tape, *p.model, p.knowledge, p.sample, {true, seed}).loss.total;
    };
    const auto r = check_parameter_gradients(p.model->params(), loss, 1e-5, coords, seed);
    record(c, r.max_rel_error, "seed " + std::to_string(seed) + " " + r.worst_parameter);
  }
  return c;
}

}  // namespace

GradSuiteReport run_gradient_suite(std::size_t seeds, double tolerance,
                                   const std::function<void(const GradCase&)>& progress) {
  const auto start = std::chrono::steady_clock::now();
  GradSuiteReport report;
  report.tolerance = tolerance;
  report.seeds = seeds;
  const auto add = [&](GradCase c) {
    if (progress) progress(c);
    report.cases.push_back(std::move(c));
  };
  for (auto& c : op_cases(seeds)) add(std::move(c));
  add(skel_layer_case(seeds, 0));
  add(model_case("end-to-end PredCls (argmax rows)", seeds, 6, {}));
  add(model_case("end-to-end PredCls (expected rows)", seeds, 6,
                 {Task::kPredCls, TemporalRowMode::kExpected}));
  add(model_case("end-to-end SGCls", seeds, 6, {Task::kSGCls}));
  report.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

}  // namespace stket
