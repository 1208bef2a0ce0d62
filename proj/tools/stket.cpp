#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "stket/benchmark.hpp"
#include "stket/errors.hpp"
#include "stket/evaluation.hpp"
#include "stket/gradsuite.hpp"
#include "stket/json_keys.hpp"
#include "stket/knowledge.hpp"
#include "stket/synthetic.hpp"
#include "stket/training.hpp"

using namespace stket;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

enum ExitCode { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

struct Globals {
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::size_t jobs = 1;
  std::string log = "text";
};

void emit(const Globals& g, const json& record, const std::string& text) {
  if (g.log == "json") {
    std::cout << record.dump() << '\n';
  } else {
    std::cout << text << '\n';
  }
  std::cout.flush();
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

std::string fixed(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

// ---- gen-synth --------------------------------------------------------------

struct GenOptions {
  std::string config;
  std::string out;
  std::optional<std::size_t> videos;
  std::optional<std::size_t> frames;
  std::optional<std::size_t> relationships;
  std::optional<double> skew;
  std::optional<double> stickiness;
  bool pair_permute = false;
  std::optional<double> occlusion;
  bool detections = false;
};

int cmd_gen_synth(const Globals& g, const GenOptions& o) {
  SyntheticConfig c = synthetic_config_from_json(read_json_file(o.config));
  if (g.seed_given) c.seed = g.seed;
  if (o.videos) c.videos = *o.videos;
  if (o.frames) c.frames_per_video = *o.frames;
  if (o.relationships) c.relationships_per_video = *o.relationships;
  if (o.occlusion) c.occlusion_prob = *o.occlusion;
  if (o.detections) c.emit_detections = true;
  if (c.pairs.empty() || o.skew || o.stickiness || o.pair_permute) {
    DynamicsOptions d;
    d.object_classes = c.class_names.size() - 1;
    d.predicate_type_sizes = c.predicate_type_sizes;
    d.skew = o.skew.value_or(d.skew);
    d.stickiness = o.stickiness.value_or(d.stickiness);
    d.pair_permute = o.pair_permute;
    d.seed = c.seed;
    c.pairs = make_dynamics(d);
  }
  const SyntheticDataset data = generate_synthetic_dataset(c);
  const fs::path out(o.out);
  fs::create_directories(out);
  save_annotations(data.dataset, out / "annotations.json");
  if (data.detections) save_annotations(*data.detections, out / "detections.json");
  write_text(out / "dynamics.json", to_json(data.truth).dump(2) + "\n");
  write_text(out / "synthetic_config.json", to_json(c).dump(2) + "\n");
  std::size_t relationships = 0;
  for (const auto& v : data.dataset.videos) {
    for (const auto& f : v.frames) relationships += f.relationships.size();
  }
  emit(g, {{"command", "gen-synth"}, {"out", out.string()}, {"videos", c.videos}, {"relationships", relationships}},
       "wrote " + std::to_string(c.videos) + " videos (" + std::to_string(relationships) +
           " relationships) to " + out.string());
  return kOk;
}

// ---- build-knowledge ----------------------------------------------------------

struct KnowledgeOptions {
  std::string annotations;
  std::string out;
  std::uint64_t min_pair_count = 1;
};

int cmd_build_knowledge(const Globals& g, const KnowledgeOptions& o) {
  const Dataset ds = load_annotations(o.annotations);
  const KnowledgeBanks banks = build_knowledge(ds, o.min_pair_count, g.jobs);
  save_knowledge(banks, o.out);
  emit(g,
       {{"command", "build-knowledge"}, {"pairs", banks.spatial.entries().size()}, {"out", o.out}},
       "built knowledge for " + std::to_string(banks.spatial.entries().size()) + " class pairs in " + o.out);
  return kOk;
}

// ---- train ----------------------------------------------------------------------

struct TrainOptions {
  std::string annotations;
  std::string detections;
  std::string knowledge_dir;
  std::string out;
  std::string task = "predcls";
  std::optional<std::size_t> epochs;
  std::optional<double> lr;
  std::optional<double> clip_norm;
  std::string config;
  std::size_t checkpoint_every = 0;
  std::string resume;
};

ModelConfig model_for_dataset(ModelConfig m, const Dataset& ds) {
  m.num_classes = ds.num_classes();
  m.num_predicates = ds.num_predicates();
  m.predicate_type_sizes = ds.predicate_type_sizes;
  m.validate();
  return m;
}

int cmd_train(const Globals& g, const TrainOptions& o) {
  const Task task = parse_task(o.task);
  const Dataset gt = load_annotations(o.annotations);
  std::optional<Dataset> det;
  if (task == Task::kSGGen) {
    if (o.detections.empty()) throw ConfigError("--task sggen needs --detections");
    det = load_annotations(o.detections);
  }
  const KnowledgeBanks banks = load_knowledge(o.knowledge_dir);

  json overrides = o.config.empty() ? json::object() : read_json_file(o.config);
  reject_unknown_keys(overrides, {{"model", nullptr}, {"train", nullptr}}, o.config);
  std::optional<Checkpoint> resume;
  if (!o.resume.empty()) resume = load_checkpoint(o.resume, gt.num_predicates(), gt.num_classes());
  TrainConfig tc = train_config_from_json(overrides.value("train", json::object()),
                                          resume ? resume->train : TrainConfig{});
  if (o.epochs) tc.epochs = *o.epochs;
  if (o.lr) tc.optimizer.lr = *o.lr;
  if (o.clip_norm) tc.clip_norm = *o.clip_norm;
  if (g.seed_given) tc.seed = g.seed;
  tc.validate();

  std::optional<StketModel> model;
  OptimizerState state;
  std::size_t start_epoch = 0;
  if (resume) {
    model.emplace(resume->model, std::move(resume->params));
    state = std::move(resume->optimizer);
    start_epoch = resume->epoch;
  } else {
    const ModelConfig mc =
        model_for_dataset(model_config_from_json(overrides.value("model", json::object())), gt);
    model.emplace(mc, tc.seed);
  }
  const auto samples = prepare_samples(det ? *det : gt, task, model->config(), det ? &gt : nullptr);

  const auto progress = [&](const ProgressRecord& r) {
    emit(g, {{"epoch", r.epoch}, {"video", r.video_id}, {"loss", to_json(r.loss)}, {"clip_factor", r.clip_factor}},
         "epoch " + std::to_string(r.epoch) + " video " + r.video_id + " loss " + fixed(r.loss.total));
  };
  for (std::size_t e = start_epoch + 1; e <= tc.epochs; ++e) {
    const EpochSummary s = train_epoch(*model, state, banks, samples, tc, e, progress);
    emit(g, {{"epoch", e}, {"videos", s.videos}, {"mean_loss", to_json(s.mean)}},
         "epoch " + std::to_string(e) + " mean loss " + fixed(s.mean.total));
    if (o.checkpoint_every > 0 && e % o.checkpoint_every == 0 && e < tc.epochs) {
      save_checkpoint(fs::path(o.out) / ("epoch_" + std::to_string(e)), *model, state, tc, e, task);
    }
  }
  save_checkpoint(o.out, *model, state, tc, std::max(start_epoch, tc.epochs), task);
  emit(g, {{"command", "train"}, {"checkpoint", o.out}}, "saved checkpoint to " + o.out);
  return kOk;
}

// ---- eval -------------------------------------------------------------------------

struct EvalOptions {
  std::string checkpoint;
  std::string annotations;
  std::string detections;
  std::string knowledge_dir;
  std::string task;
  std::vector<std::size_t> ks = {10, 20, 50};
  std::string report;
  std::string per_predicate_csv;
};

int cmd_eval(const Globals& g, const EvalOptions& o) {
  const Dataset gt = load_annotations(o.annotations);
  Checkpoint c = load_checkpoint(o.checkpoint, gt.num_predicates(), gt.num_classes());
  const Task task = o.task.empty() ? c.task : parse_task(o.task);
  std::optional<Dataset> det;
  if (task == Task::kSGGen) {
    if (o.detections.empty()) throw ConfigError("--task sggen needs --detections");
    det = load_annotations(o.detections);
  }
  const KnowledgeBanks banks = load_knowledge(o.knowledge_dir);
  StketModel model(c.model, std::move(c.params));
  const MetricsReport r = evaluate(model, banks, det ? *det : gt, task, gt, o.ks, g.jobs);
  if (!o.report.empty()) save_report(r, o.report);
  if (!o.per_predicate_csv.empty()) write_text(o.per_predicate_csv, per_predicate_csv(r));
  std::string text = to_string(task);
  for (auto k : o.ks) text += "  R@" + std::to_string(k) + " " + fixed(r.recall.at(k), 2);
  for (auto k : o.ks) text += "  mR@" + std::to_string(k) + " " + fixed(r.mean_recall.at(k), 2);
  json j = to_json(r);
  j.erase("per_predicate");
  j.erase("entropy");
  emit(g, j, text);
  return kOk;
}

// ---- gradcheck --------------------------------------------------------------------

struct GradOptions {
  std::size_t seeds = 20;
  double tolerance = 1e-4;
};

int cmd_gradcheck(const Globals& g, const GradOptions& o) {
  const auto report = run_gradient_suite(o.seeds, o.tolerance, [&](const GradCase& c) {
    const bool ok = c.max_rel_error <= o.tolerance;
    emit(g, {{"case", c.name}, {"max_rel_error", c.max_rel_error}, {"worst", c.worst}, {"passed", ok}},
         (ok ? "ok    " : "FAIL  ") + c.name + "  " + fixed(c.max_rel_error, 12) + (ok ? "" : "  " + c.worst));
  });
  emit(g, {{"passed", report.passed()}, {"seeds", report.seeds}, {"seconds", report.seconds}},
       std::string(report.passed() ? "gradient suite passed" : "gradient suite FAILED") + " (" +
           std::to_string(report.seeds) + " seeds, " + fixed(report.seconds, 1) + " s)");
  return report.passed() ? kOk : kNumeric;
}

// ---- report -----------------------------------------------------------------------

struct ReportOptions {
  std::string annotations;
  std::string knowledge_dir;
  std::string eval_report;
  std::string out;
};

int cmd_report(const Globals& g, const ReportOptions& o) {
  const fs::path out(o.out);
  fs::create_directories(out);
  std::vector<std::string> written;
  if (!o.annotations.empty()) {
    const Dataset ds = load_annotations(o.annotations);
    std::vector<std::uint64_t> counts(ds.num_predicates(), 0);
    for (const auto& v : ds.videos) {
      for (const auto& f : v.frames) {
        for (const auto& r : f.relationships) {
          for (auto p : r.predicates) ++counts.at(p);
        }
      }
    }
    std::string csv = "id,name,count\n";
    for (std::size_t p = 0; p < counts.size(); ++p) {
      csv += std::to_string(p) + "," + ds.predicate_names[p] + "," + std::to_string(counts[p]) + "\n";
    }
    write_text(out / "relationship_distribution.csv", csv);
    written.push_back("relationship_distribution.csv");
  }
  if (!o.knowledge_dir.empty()) {
    const KnowledgeBanks banks = load_knowledge(o.knowledge_dir);
    std::string csv = "subject,object,predicate,source_count,entropy_bits\n";
    for (const auto& e : transition_entropy(banks.temporal)) {
      csv += std::to_string(e.pair.subject) + "," + std::to_string(e.pair.object) + "," +
             std::to_string(e.predicate) + "," + std::to_string(e.source_count) + "," +
             fixed(e.entropy_bits, 6) + "\n";
    }
    write_text(out / "transition_entropy.csv", csv);
    written.push_back("transition_entropy.csv");
  }
  if (!o.eval_report.empty()) {
    write_text(out / "per_predicate_recall.csv", per_predicate_csv(load_report(o.eval_report)));
    written.push_back("per_predicate_recall.csv");
  }
  if (written.empty()) throw ConfigError("nothing to report: pass --annotations, --knowledge-dir or --eval-report");
  std::string text = "wrote";
  for (const auto& w : written) text += " " + (out / w).string();
  emit(g, {{"command", "report"}, {"files", written}}, text);
  return kOk;
}

// ---- bench ------------------------------------------------------------------------

struct BenchOptions {
  std::string config;
  std::vector<std::uint64_t> seeds;
  std::string out;
};

int cmd_bench(const Globals& g, const BenchOptions& o) {
  const BenchmarkConfig c = load_benchmark_config(o.config);
  const auto seeds = o.seeds.empty() ? c.seeds : o.seeds;
  json runs = json::array();
  for (auto s : seeds) {
    const BenchmarkRun r = run_benchmark_seed(c, s, g.jobs);
    emit(g,
         {{"seed", s},
          {"stket_mR@10", r.stket.mean_recall.at(10)},
          {"ablation_mR@10", r.ablation.mean_recall.at(10)},
          {"baseline_mR@10", r.baseline.mean_recall.at(10)},
          {"seconds", r.seconds}},
         "seed " + std::to_string(s) + "  mR@10 stket " + fixed(r.stket.mean_recall.at(10), 2) +
             "  no-knowledge " + fixed(r.ablation.mean_recall.at(10), 2) + "  frequency prior " +
             fixed(r.baseline.mean_recall.at(10), 2) + "  (" + fixed(r.seconds, 1) + " s)");
    runs.push_back(to_json(r));
  }
  if (!o.out.empty()) write_text(o.out, json{{"config", to_json(c)}, {"runs", runs}}.dump(2) + "\n");
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spatial-temporal knowledge-embedded transformer for video scene graph generation", "stket"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  auto* seed_opt = app.add_option("--seed", g.seed, "Random seed")->capture_default_str();
  app.add_option("--jobs", g.jobs, "Worker threads for knowledge building and evaluation")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  app.add_option("--log", g.log, "Output format")->capture_default_str()->check(CLI::IsMember({"json", "text"}));

  GenOptions gen;
  auto* gen_cmd = app.add_subcommand("gen-synth", "Generate a synthetic dataset from Markov predicate dynamics");
  gen_cmd->add_option("--config", gen.config, "Synthetic config JSON")->required();
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();
  gen_cmd->add_option("--videos", gen.videos, "Number of videos");
  gen_cmd->add_option("--frames", gen.frames, "Frames per video");
  gen_cmd->add_option("--relationships", gen.relationships, "Relationships per video");
  gen_cmd->add_option("--skew", gen.skew, "Power-law exponent of predicate frequencies (regenerates dynamics)");
  gen_cmd->add_option("--stickiness", gen.stickiness, "Identity weight in every transition block (regenerates dynamics)");
  gen_cmd->add_flag("--pair-permute", gen.pair_permute, "Shuffle frequent predicates per class pair");
  gen_cmd->add_option("--occlusion", gen.occlusion, "Probability that a union feature carries no predicate signal");
  gen_cmd->add_flag("--detections", gen.detections, "Also write detector-style proposals for sggen");

  KnowledgeOptions kn;
  auto* kn_cmd = app.add_subcommand("build-knowledge", "Count spatial co-occurrence and temporal transition statistics");
  kn_cmd->add_option("--annotations", kn.annotations, "Training annotation JSON")->required();
  kn_cmd->add_option("--out", kn.out, "Output knowledge directory")->required();
  kn_cmd->add_option("--min-pair-count", kn.min_pair_count, "Drop class pairs seen fewer times")->capture_default_str();

  TrainOptions tr;
  auto* tr_cmd = app.add_subcommand("train", "Train the model; progress is printed per video");
  tr_cmd->add_option("--annotations", tr.annotations, "Training annotation JSON (ground truth)")->required();
  tr_cmd->add_option("--detections", tr.detections, "Detector proposals JSON (sggen)");
  tr_cmd->add_option("--knowledge-dir", tr.knowledge_dir, "Knowledge built from the training split")->required();
  tr_cmd->add_option("--out", tr.out, "Checkpoint directory")->required();
  tr_cmd->add_option("--task", tr.task, "Task")->capture_default_str()->check(CLI::IsMember({"predcls", "sgcls", "sggen"}));
  tr_cmd->add_option("--epochs", tr.epochs, "Epochs (default 10)");
  tr_cmd->add_option("--lr", tr.lr, "AdamW learning rate (default 2e-5)");
  tr_cmd->add_option("--clip-norm", tr.clip_norm, "Global gradient norm limit (default 5)");
  tr_cmd->add_option("--config", tr.config, "JSON with \"model\" and \"train\" overrides");
  tr_cmd->add_option("--checkpoint-every", tr.checkpoint_every, "Also save <out>/epoch_N every N epochs (0 = off)")
      ->capture_default_str();
  tr_cmd->add_option("--resume", tr.resume, "Continue from a checkpoint directory");

  EvalOptions ev;
  auto* ev_cmd = app.add_subcommand("eval", "Score a checkpoint with R@K and mR@K (No Constraint)");
  ev_cmd->add_option("--checkpoint", ev.checkpoint, "Checkpoint directory")->required();
  ev_cmd->add_option("--annotations", ev.annotations, "Ground-truth annotation JSON")->required();
  ev_cmd->add_option("--detections", ev.detections, "Detector proposals JSON (sggen)");
  ev_cmd->add_option("--knowledge-dir", ev.knowledge_dir, "Knowledge built from the training split")->required();
  ev_cmd->add_option("--task", ev.task, "Task (default: the checkpoint's)")
      ->check(CLI::IsMember({"predcls", "sgcls", "sggen"}));
  ev_cmd->add_option("--k", ev.ks, "Comma-separated K values")->delimiter(',')->capture_default_str();
  ev_cmd->add_option("--report", ev.report, "Write the full report JSON here");
  ev_cmd->add_option("--per-predicate-csv", ev.per_predicate_csv, "Write per-predicate recall CSV here");

  GradOptions gr;
  auto* gr_cmd = app.add_subcommand("gradcheck", "Finite-difference check of every op and the end-to-end loss");
  gr_cmd->add_option("--seeds", gr.seeds, "Seeds per case")->capture_default_str()->check(CLI::PositiveNumber);
  gr_cmd->add_option("--tolerance", gr.tolerance, "Maximum relative error")->capture_default_str();

  ReportOptions rp;
  auto* rp_cmd = app.add_subcommand("report", "Write CSV tables for plotting");
  rp_cmd->add_option("--annotations", rp.annotations, "Annotation JSON: relationship distribution");
  rp_cmd->add_option("--knowledge-dir", rp.knowledge_dir, "Knowledge directory: transition-row entropy");
  rp_cmd->add_option("--eval-report", rp.eval_report, "Report JSON from eval: per-predicate recall");
  rp_cmd->add_option("--out", rp.out, "Output directory")->required();

  BenchOptions bn;
  auto* bn_cmd = app.add_subcommand("bench", "Compare against the frequency prior and the no-knowledge ablation");
  bn_cmd->add_option("--config", bn.config, "Benchmark config JSON")->required();
  bn_cmd->add_option("--seeds", bn.seeds, "Seeds (default: from the config)")->delimiter(',');
  bn_cmd->add_option("--out", bn.out, "Write all run reports as JSON here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }
  g.seed_given = seed_opt->count() > 0;

  try {
    if (*gen_cmd) return cmd_gen_synth(g, gen);
    if (*kn_cmd) return cmd_build_knowledge(g, kn);
    if (*tr_cmd) return cmd_train(g, tr);
    if (*ev_cmd) return cmd_eval(g, ev);
    if (*gr_cmd) return cmd_gradcheck(g, gr);
    if (*rp_cmd) return cmd_report(g, rp);
    if (*bn_cmd) return cmd_bench(g, bn);
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return kNumeric;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kData;
  }
  return kUsage;
}
