// Acceptance runner: one PASS/FAIL line per criterion, exit status 0 only
// when all of them pass. Optional arguments select criteria by number.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "stket/benchmark.hpp"
#include "stket/errors.hpp"
#include "stket/evaluation.hpp"
#include "stket/gradsuite.hpp"
#include "stket/knowledge.hpp"
#include "stket/model.hpp"
#include "stket/synthetic.hpp"
#include "stket/training.hpp"
#include "test_util.hpp"

#ifndef STKET_CONFIG_DIR
#define STKET_CONFIG_DIR "configs"
#endif

using namespace stket;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

struct Outcome {
  bool pass = true;
  std::vector<std::string> notes;

  void check(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      notes.push_back("FAILED: " + what);
    }
  }
  void note(const std::string& what) { notes.push_back(what); }
};

// R@K of every evaluation performed in this run, checked by criterion 4.
std::vector<std::pair<std::string, MetricsReport>> g_evaluated;

void record(const std::string& name, const MetricsReport& r) { g_evaluated.emplace_back(name, r); }

fs::path config_dir;

nlohmann::json read_json(const fs::path& p) { return nlohmann::json::parse(testing::read_file(p)); }

ModelConfig sized_for(ModelConfig m, const Dataset& ds) {
  m.num_classes = ds.num_classes();
  m.num_predicates = ds.num_predicates();
  m.predicate_type_sizes = ds.predicate_type_sizes;
  m.validate();
  return m;
}

bool same_params(const ParamStore& a, const ParamStore& b) {
  if (a.size() != b.size()) return false;
  for (const auto& [name, p] : a) {
    if (!b.contains(name) || !(b.get(name).value == p.value)) return false;
  }
  return true;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return INFINITY;
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// ---- 1 ------------------------------------------------------------------------------

Outcome gradient_suite() {
  Outcome o;
  const auto report = run_gradient_suite(20, 1e-4);
  double worst = 0.0;
  for (const auto& c : report.cases) {
    worst = std::max(worst, c.max_rel_error);
    o.check(c.max_rel_error <= 1e-4, c.name + " rel err " + fmt("%.3g", c.max_rel_error) + " at " + c.worst);
  }
  o.check(report.seeds == 20, "seed count");
  o.check(report.seconds < 120.0, "runtime " + fmt("%.1f", report.seconds) + " s");
  o.note(std::to_string(report.cases.size()) + " cases x 20 seeds, worst rel err " + fmt("%.2g", worst) +
         " <= 1e-4, " + fmt("%.1f", report.seconds) + " s < 120 s");
  return o;
}

// ---- 2 ------------------------------------------------------------------------------

Outcome knowledge_recovery() {
  Outcome o;
  const auto synth = generate_synthetic_dataset(oracle::recovery_config(50000, 0));
  const Dataset& ds = synth.dataset;
  std::size_t transitions = 0;
  for (const auto& v : ds.videos) {
    for (std::size_t t = 1; t < v.frames.size(); ++t) {
      for (const auto& r : v.frames[t].relationships) {
        for (const auto& q : v.frames[t - 1].relationships) transitions += q.track_id == r.track_id;
      }
    }
  }
  o.check(transitions >= 50000, "only " + std::to_string(transitions) + " transitions");
  const double ls = oracle::linf_spatial(build_spatial_matrix(ds), synth.truth);
  const double lt = oracle::linf_temporal(build_temporal_matrix(ds), synth.truth);
  o.check(ls <= 0.02, "spatial L_inf " + fmt("%.4f", ls));
  o.check(lt <= 0.02, "temporal L_inf " + fmt("%.4f", lt));

  // First 1000 frames of the same data, and 1000 random multi-label frames.
  Dataset subset = ds;
  subset.videos.clear();
  std::size_t frames = 0;
  for (const auto& v : ds.videos) {
    VideoAnnotation cut = v;
    cut.frames.resize(std::min(v.frames.size(), 1000 - frames));
    frames += cut.frames.size();
    subset.videos.push_back(cut);
    if (frames == 1000) break;
  }
  const Dataset random = oracle::random_dataset(100, 10, 17);
  for (const Dataset* d : {static_cast<const Dataset*>(&subset), &random}) {
    const std::string tag = d == &subset ? "synthetic subset" : "random subset";
    const auto s = oracle::compare_spatial(build_spatial_matrix(*d, 3), *d);
    const auto t = oracle::compare_temporal(build_temporal_matrix(*d, true, 3), *d);
    o.check(s.empty(), tag + " spatial: " + s);
    o.check(t.empty(), tag + " temporal: " + t);
  }
  o.note(std::to_string(transitions) + " transitions, L_inf spatial " + fmt("%.4f", ls) + " temporal " +
         fmt("%.4f", lt) + " <= 0.02; both banks equal brute-force counts on 2 x 1000 frames");
  return o;
}

// ---- 3 ------------------------------------------------------------------------------

Outcome person_cup() {
  Outcome o;
  using namespace oracle;
  const auto e = build_spatial_matrix(oracle::person_cup({{kHold}, {kHold, kDrink}})).lookup(kPerson, kCup);
  o.check(e == std::vector<double>{1.0, 0.5, 0.0}, "spatial person-cup vector");
  const Tensor m = build_temporal_matrix(oracle::person_cup({{kHold}, {kDrink}})).matrix(kPerson, kCup);
  for (std::size_t x = 0; x < 3; ++x) {
    for (std::size_t y = 0; y < 3; ++y) {
      o.check(m.at(x, y) == (x == kHold && y == kDrink ? 1.0 : 0.0),
              "temporal entry " + std::to_string(x) + "," + std::to_string(y));
    }
  }
  o.note("e_hold = " + fmt("%.1f", e[kHold]) + ", e_drink = " + fmt("%.1f", e[kDrink]) +
         ", e_hat(hold, drink) = " + fmt("%.1f", m.at(kHold, kDrink)) + ", all other entries 0 (exact)");
  return o;
}

// ---- 4 ------------------------------------------------------------------------------

Outcome metric_oracle() {
  Outcome o;
  std::mt19937_64 rng(2024);
  const std::vector<std::size_t> ks = {1, 2, 3, 5, 8};
  std::size_t agree = 0;
  std::vector<FrameEval> pooled;
  for (int trial = 0; trial < 1000; ++trial) {
    const auto inst = oracle::micro_instance(rng, trial);
    auto sorted = inst.predictions;
    std::shuffle(sorted.begin(), sorted.end(), rng);
    sort_predictions(sorted);
    bool ok = true;
    for (std::size_t i = 0; i < sorted.size(); ++i) ok = ok && sorted[i].pair == inst.predictions[i].pair;
    const auto hits = match_triplets(inst.predictions, inst.ground_truth, inst.task, ks);
    for (std::size_t i = 0; i < ks.size(); ++i) {
      const auto expect = oracle::greedy_hits(inst.predictions, inst.ground_truth, inst.task, ks[i]);
      const auto n = static_cast<std::size_t>(std::count(hits[i].begin(), hits[i].end(), true));
      const auto best = oracle::max_matching(inst.predictions, inst.ground_truth, inst.task, ks[i]);
      ok = ok && hits[i] == expect && n <= best && (inst.task == Task::kSGGen || n == best);
    }
    agree += ok;
    if (inst.task == Task::kPredCls) {
      pooled.push_back({"micro", trial, inst.predictions, inst.ground_truth});
    }
  }
  o.check(agree == 1000, std::to_string(1000 - agree) + " micro-instances disagree");
  const std::vector<std::size_t> report_ks = {10, 20, 50};
  record("pooled micro-instances", make_report(count_hits(pooled, Task::kPredCls, report_ks, 3), Task::kPredCls,
                                               {"p0", "p1", "p2"}));
  o.note(std::to_string(agree) + "/1000 micro-instances match the enumerated greedy oracle and the exhaustive bound");
  return o;
}

// Deferred: runs after every other criterion has evaluated its datasets.
void recall_monotone(Outcome& o) {
  for (const auto& [name, r] : g_evaluated) {
    const bool ok = r.recall.at(10) <= r.recall.at(20) && r.recall.at(20) <= r.recall.at(50) &&
                    r.mean_recall.at(10) <= r.mean_recall.at(20) && r.mean_recall.at(20) <= r.mean_recall.at(50);
    o.check(ok, "R@K not monotone on " + name);
  }
  o.note("R@10 <= R@20 <= R@50 (and mR) on all " + std::to_string(g_evaluated.size()) + " evaluated datasets");
}

// ---- 5 ------------------------------------------------------------------------------

Tensor permute_rows(const Tensor& t, const std::vector<std::size_t>& perm) {
  Tensor out(t.shape());
  for (std::size_t i = 0; i < perm.size(); ++i) {
    std::copy(t.row_span(perm[i]).begin(), t.row_span(perm[i]).end(), out.row_span(i).begin());
  }
  return out;
}

Outcome architecture() {
  Outcome o;
  ToyProblem p = make_toy_problem(3);
  ParamStore& store = p.model->params();
  const ModelConfig& cfg = p.model->config();
  std::mt19937_64 rng(9);
  double equi = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t k = 2 + trial % 5;
    const Tensor x = normal_tensor({k, cfg.d}, 1.0, rng);
    const Tensor s = normal_tensor({k, cfg.d}, 1.0, rng);
    std::vector<std::size_t> perm(k);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    DropoutContext drop;
    Tape tape;
    const Var a = skel_forward(tape, store, cfg, tape.constant(x), tape.constant(s), drop);
    const Var b = skel_forward(tape, store, cfg, tape.constant(permute_rows(x, perm)),
                               tape.constant(permute_rows(s, perm)), drop);
    equi = std::max(equi, max_abs_diff(permute_rows(a.value(), perm), b.value()));
  }
  o.check(equi <= 1e-9, "SKEL permutation error " + fmt("%.3g", equi));

  // Zero knowledge (and zero frame encodings for TKEL) against loop attention.
  double plain = 0.0;
  {
    const Tensor x = normal_tensor({4, cfg.d}, 1.0, rng);
    Tape tape;
    DropoutContext drop;
    const Var out = skel_forward(tape, store, cfg, tape.constant(x), tape.constant(Tensor({4, cfg.d})), drop);
    Tensor ref = x;
    for (std::size_t l = 0; l < cfg.spatial_layers; ++l) {
      ref = oracle::reference_transformer_layer(store, "skel." + std::to_string(l), ref, cfg.heads);
    }
    plain = std::max(plain, max_abs_diff(out.value(), ref));
  }
  {
    ParamStore zeroed = store;
    zeroed.get("tkel.frame_enc").value = Tensor(zeroed.get("tkel.frame_enc").value.shape());
    const Tensor prev = normal_tensor({2, cfg.d}, 1.0, rng);
    const Tensor curr = normal_tensor({3, cfg.d}, 1.0, rng);
    Tape tape;
    DropoutContext drop;
    Var window;
    tkel_window(tape, zeroed, cfg, tape.constant(prev), tape.constant(Tensor({2, cfg.d})), tape.constant(curr),
                tape.constant(Tensor({3, cfg.d})), drop, &window);
    Tensor ref({5, cfg.d});
    std::copy(prev.data().begin(), prev.data().end(), ref.data().begin());
    std::copy(curr.data().begin(), curr.data().end(), ref.data().begin() + static_cast<std::ptrdiff_t>(prev.size()));
    for (std::size_t l = 0; l < cfg.temporal_layers; ++l) {
      ref = oracle::reference_transformer_layer(zeroed, "tkel." + std::to_string(l), ref, cfg.heads);
    }
    plain = std::max(plain, max_abs_diff(window.value(), ref));
  }
  o.check(plain <= 1e-9, "plain-attention reduction error " + fmt("%.3g", plain));

  // Full-size model on a 2-frame, 2-pair video.
  SyntheticConfig sc;
  sc.class_names = {"person", "cup"};
  sc.predicate_type_sizes = {3, 6, 17};
  DynamicsOptions d;
  d.object_classes = 1;
  sc.pairs = make_dynamics(d);
  sc.videos = 1;
  sc.frames_per_video = 2;
  sc.relationships_per_video = 2;
  sc.seed = 1;
  const auto data = generate_synthetic_dataset(sc);
  const ModelConfig full = sized_for(ModelConfig{}, data.dataset);
  StketModel model(full, 0);
  const auto& ps = model.params();
  const auto shape_is = [&](const std::string& name, Shape s) {
    o.check(ps.get(name).value.shape() == s, name + " shape");
  };
  shape_is("skel.0.attn.q.w", {1936, 1936});
  shape_is("skel.0.ff1.w", {1936, 2048});
  shape_is("skel.0.ff2.w", {2048, 1936});
  shape_is("tkel.frame_enc", {2, 1936});
  shape_is("sta.frame_enc", {4, 3872});
  shape_is("sta.attn.q.w", {3872, 3872});
  shape_is("sta.proj.w", {3872, 1936});
  std::size_t head_total = 0;
  for (std::size_t g = 0; g < 3; ++g) head_total += ps.get("head.final." + std::to_string(g) + ".w").value.cols();
  o.check(head_total == 26, "final heads sum to " + std::to_string(head_total));
  o.check(full.num_predicates == 26 && full.predicate_type_sizes == std::vector<std::size_t>{3, 6, 17},
          "26 = 3 + 6 + 17");
  const KnowledgeBanks banks = build_knowledge(data.dataset);
  const auto sample = prepare_sample(data.dataset, data.dataset.videos[0], Task::kPredCls, full);
  Tape tape;
  const auto fwd = forward(tape, model, banks, sample);
  for (const auto& f : fwd.frames) {
    const std::size_t k = f.spatial.rows();
    o.check(f.spatial.shape() == Shape{k, 1936}, "F^S width");
    o.check(f.temporal.shape() == Shape{k, 1936}, "F^T width");
    o.check(f.final_repr.shape() == Shape{k, 1936}, "STA output width");
    o.check(f.spatial_knowledge.shape() == Shape{k, 1936}, "spatial knowledge width");
    o.check(f.temporal_knowledge.shape() == Shape{k, 1936}, "temporal knowledge width");
    o.check(f.final_probs.shape() == Shape{k, 26}, "final confidences");
  }
  o.note("equivariance err " + fmt("%.1g", equi) + ", plain-attention err " + fmt("%.1g", plain) +
         " (<= 1e-9); full-size d 1936, STA 3872 -> 1936, heads 3 + 6 + 17 = 26");
  return o;
}

// ---- 6 ------------------------------------------------------------------------------

Outcome learning_signal() {
  Outcome o;
  const auto start = Clock::now();
  const BenchmarkConfig c = load_benchmark_config(config_dir / "desk_benchmark.json");
  o.check(c.train.epochs == 10, "benchmark must use 10 epochs");
  std::size_t both = 0;
  std::size_t over_prior = 0;
  std::size_t over_ablation = 0;
  for (auto seed : c.seeds) {
    const BenchmarkRun r = run_benchmark_seed(c, seed);
    record("benchmark seed " + std::to_string(seed) + " (STKET)", r.stket);
    record("benchmark seed " + std::to_string(seed) + " (no knowledge)", r.ablation);
    record("benchmark seed " + std::to_string(seed) + " (frequency prior)", r.baseline);
    const double s = r.stket.mean_recall.at(10);
    const double a = r.ablation.mean_recall.at(10);
    const double b = r.baseline.mean_recall.at(10);
    over_prior += s > b;
    over_ablation += s > a;
    both += s > b && s > a;
    o.note("seed " + std::to_string(seed) + ": mR@10 STKET " + fmt("%.2f", s) + ", no knowledge " + fmt("%.2f", a) +
           ", frequency prior " + fmt("%.2f", b));
  }
  const double secs = seconds_since(start);
  o.check(both >= 4, "STKET beats both references on " + std::to_string(both) + "/" +
                         std::to_string(c.seeds.size()) + " seeds (need 4)");
  o.check(secs < 600.0, "runtime " + fmt("%.0f", secs) + " s");
  o.notes.insert(o.notes.begin(), "beats prior " + std::to_string(over_prior) + "/5, beats no-knowledge " +
                                      std::to_string(over_ablation) + "/5, both " + std::to_string(both) +
                                      "/5 (need 4), " + fmt("%.0f", secs) + " s < 600 s");
  return o;
}

// ---- 7 ------------------------------------------------------------------------------

Outcome overfit() {
  Outcome o;
  const auto data = generate_synthetic_dataset(synthetic_config_from_json(read_json(config_dir / "memorize.json")));
  const Dataset& ds = data.dataset;
  const auto micro = read_json(config_dir / "micro_model.json");
  StketModel model(sized_for(model_config_from_json(micro.at("model")), ds), 0);
  TrainConfig tc = train_config_from_json(micro.at("train"));
  tc.epochs = 100;
  const KnowledgeBanks banks = build_knowledge(ds);
  OptimizerState state;
  const auto epochs = train(model, state, banks, prepare_samples(ds, Task::kPredCls, model.config()), tc);
  const auto r = evaluate(model, banks, ds, Task::kPredCls, ds, {10, 20, 50});
  record("memorizable training set", r);
  o.check(ds.videos.size() == 5, "dataset must have 5 videos");
  o.check(r.recall.at(50) == 100.0, "training R@50 " + fmt("%.2f", r.recall.at(50)));
  o.note("5 videos, 100 epochs, loss " + fmt("%.1f", epochs.front().mean.total) + " -> " +
         fmt("%.1f", epochs.back().mean.total) + ", training R@50 " + fmt("%.2f", r.recall.at(50)));
  return o;
}

// ---- 8 ------------------------------------------------------------------------------

Outcome persistence() {
  Outcome o;
  const testing::TempDir tmp("acceptance");
  const auto data =
      generate_synthetic_dataset(synthetic_config_from_json(read_json(config_dir / "micro_synthetic.json")));
  const Dataset& ds = data.dataset;
  const auto micro = read_json(config_dir / "micro_model.json");
  const ModelConfig mc = sized_for(model_config_from_json(micro.at("model")), ds);
  TrainConfig tc = train_config_from_json(micro.at("train"));
  tc.epochs = 2;
  tc.seed = 7;
  const KnowledgeBanks banks = build_knowledge(ds);
  const auto samples = prepare_samples(ds, Task::kPredCls, mc);

  // Same-seed training twice.
  StketModel a(mc, 7);
  StketModel b(mc, 7);
  OptimizerState sa;
  OptimizerState sb;
  train(a, sa, banks, samples, tc);
  train(b, sb, banks, samples, tc);
  o.check(same_params(a.params(), b.params()), "same-seed training differs");

  // Resume: one epoch, checkpoint, reload, second epoch.
  StketModel c(mc, 7);
  OptimizerState sc;
  TrainConfig first = tc;
  first.epochs = 1;
  train(c, sc, banks, samples, first);
  save_checkpoint(tmp / "epoch1", c, sc, tc, 1, Task::kPredCls);
  Checkpoint ck = load_checkpoint(tmp / "epoch1", ds.num_predicates(), ds.num_classes());
  StketModel resumed(ck.model, std::move(ck.params));
  train(resumed, ck.optimizer, banks, samples, tc, ck.epoch);
  o.check(same_params(a.params(), resumed.params()), "resumed training differs");
  o.check(ck.optimizer.step == sa.step, "resumed optimizer step");

  // Round trips: checkpoint, annotations with features, knowledge, report, configs.
  save_checkpoint(tmp / "ck", a, sa, tc, 2, Task::kPredCls);
  Checkpoint back = load_checkpoint(tmp / "ck");
  StketModel reloaded(back.model, std::move(back.params));
  save_checkpoint(tmp / "ck2", reloaded, back.optimizer, back.train, back.epoch, back.task);
  o.check(testing::tree_bytes(tmp / "ck") == testing::tree_bytes(tmp / "ck2"), "checkpoint bytes");

  save_annotations(ds, tmp / "ann" / "annotations.json");
  const Dataset ds2 = load_annotations(tmp / "ann" / "annotations.json");
  save_annotations(ds2, tmp / "ann2" / "annotations.json");
  o.check(testing::tree_bytes(tmp / "ann") == testing::tree_bytes(tmp / "ann2"), "annotation bytes");
  const auto s1 = prepare_samples(ds, Task::kPredCls, mc);
  const auto s2 = prepare_samples(ds2, Task::kPredCls, mc);
  bool same_features = s1.size() == s2.size();
  for (std::size_t v = 0; same_features && v < s1.size(); ++v) {
    for (std::size_t f = 0; f < s1[v].frames.size(); ++f) {
      same_features = same_features && s1[v].frames[f].subject_visual == s2[v].frames[f].subject_visual &&
                      s1[v].frames[f].union_features == s2[v].frames[f].union_features;
    }
  }
  o.check(same_features, "features after reload");

  save_knowledge(banks, tmp / "kn");
  const KnowledgeBanks banks2 = load_knowledge(tmp / "kn");
  o.check(banks2.spatial == banks.spatial && banks2.temporal == banks.temporal, "knowledge reload");
  save_knowledge(banks2, tmp / "kn2");
  o.check(testing::tree_bytes(tmp / "kn") == testing::tree_bytes(tmp / "kn2"), "knowledge bytes");

  const MetricsReport r = evaluate(a, banks, ds, Task::kPredCls, ds, {10, 20, 50});
  record("micro training set", r);
  save_report(r, tmp / "report.json");
  o.check(load_report(tmp / "report.json") == r, "report reload");
  o.check(report_from_json(to_json(r)) == r, "report JSON");

  o.check(to_json(model_config_from_json(to_json(mc))) == to_json(mc), "model config JSON");
  o.check(to_json(train_config_from_json(to_json(tc))) == to_json(tc), "train config JSON");
  const SyntheticConfig syn = synthetic_config_from_json(read_json(config_dir / "micro_synthetic.json"));
  o.check(to_json(synthetic_config_from_json(to_json(syn))) == to_json(syn), "synthetic config JSON");
  const BenchmarkConfig bc = load_benchmark_config(config_dir / "desk_benchmark.json");
  o.check(to_json(benchmark_config_from_json(to_json(bc))) == to_json(bc), "benchmark config JSON");

  std::mt19937_64 rng(4);
  const Tensor t = normal_tensor({3, 5}, 1.0, rng);
  save_tensor(tmp / "t64.stkt", t);
  o.check(load_tensor(tmp / "t64.stkt") == t, "float64 tensor file");
  Tensor t32 = t;
  for (auto& v : t32.data()) v = static_cast<double>(static_cast<float>(v));
  save_tensor(tmp / "t32.stkt", t32, DType::kFloat32);
  o.check(load_tensor(tmp / "t32.stkt") == t32, "float32 tensor file");

  o.note("same-seed training and 1 + resume + 1 epochs bit-identical; checkpoint, annotation, feature, "
         "knowledge, report, config and tensor files round-trip exactly");
  return o;
}

struct Criterion {
  int id;
  std::string name;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  config_dir = STKET_CONFIG_DIR;
  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--configs" && i + 1 < argc) {
      config_dir = argv[++i];
    } else {
      only.insert(std::stoi(arg));
    }
  }
  const std::vector<Criterion> criteria = {
      {1, "gradient suite", gradient_suite},
      {2, "knowledge recovery", knowledge_recovery},
      {3, "person-cup micro-cases", person_cup},
      {4, "metric oracle", metric_oracle},
      {5, "architecture invariants", architecture},
      {6, "learning signal", learning_signal},
      {7, "overfit sanity", overfit},
      {8, "determinism and persistence", persistence},
  };
  std::vector<std::pair<const Criterion*, Outcome>> results;
  for (const auto& c : criteria) {
    if (!only.empty() && !only.count(c.id)) continue;
    std::cerr << "running " << c.id << " " << c.name << "...\n";
    const auto start = Clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o.check(false, std::string("exception: ") + e.what());
    }
    o.note(fmt("%.1f s", seconds_since(start)));
    results.emplace_back(&c, std::move(o));
  }
  for (auto& [c, o] : results) {
    if (c->id == 4) recall_monotone(o);
  }

  bool all = true;
  for (const auto& [c, o] : results) {
    all = all && o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  " << c->id << "  " << c->name << "\n";
    for (const auto& n : o.notes) std::cout << "        " << n << "\n";
  }
  std::cout << (all ? "all criteria passed" : "some criteria FAILED") << "\n";
  return all ? 0 : 1;
}
