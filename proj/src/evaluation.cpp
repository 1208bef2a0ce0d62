#include "stket/evaluation.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <fstream>
#include <sstream>
#include <thread>

#include "stket/errors.hpp"

namespace stket {

using nlohmann::json;

bool ranks_before(const ScoredTriplet& a, const ScoredTriplet& b) {
  if (a.confidence != b.confidence) return a.confidence > b.confidence;
  if (a.predicate != b.predicate) return a.predicate < b.predicate;
  return a.pair < b.pair;
}

void sort_predictions(std::vector<ScoredTriplet>& predictions) {
  std::stable_sort(predictions.begin(), predictions.end(), ranks_before);
}

std::vector<GroundTruthTriplet> ground_truth_triplets(const FrameAnnotation& frame) {
  std::vector<GroundTruthTriplet> out;
  for (const auto& r : frame.relationships) {
    const auto& s = frame.proposals[r.subject];
    const auto& o = frame.proposals[r.object];
    for (auto p : r.predicates) {
      out.push_back({r.subject, r.object, s.predicted_class(), o.predicted_class(), s.box, o.box, p});
    }
  }
  return out;
}

bool triplet_matches(const ScoredTriplet& p, const GroundTruthTriplet& g, Task task) {
  if (p.predicate != g.predicate) return false;
  if (p.subject_class != g.subject_class || p.object_class != g.object_class) return false;
  if (task == Task::kSGGen) {
    return iou(p.subject_box, g.subject_box) >= kMatchIou && iou(p.object_box, g.object_box) >= kMatchIou;
  }
  return p.subject == g.subject && p.object == g.object;
}

std::vector<std::vector<bool>> match_triplets(const std::vector<ScoredTriplet>& predictions,
                                              const std::vector<GroundTruthTriplet>& ground_truth,
                                              Task task, const std::vector<std::size_t>& ks) {
  // rank at which each ground-truth triplet is claimed
  std::vector<std::size_t> claimed(ground_truth.size(), SIZE_MAX);
  const std::size_t max_k = ks.empty() ? 0 : *std::max_element(ks.begin(), ks.end());
  const std::size_t limit = std::min(max_k, predictions.size());
  std::size_t open = ground_truth.size();
  for (std::size_t r = 0; r < limit && open > 0; ++r) {
    for (std::size_t g = 0; g < ground_truth.size(); ++g) {
      if (claimed[g] == SIZE_MAX && triplet_matches(predictions[r], ground_truth[g], task)) {
        claimed[g] = r;
        --open;
        break;
      }
    }
  }
  std::vector<std::vector<bool>> hits(ks.size(), std::vector<bool>(ground_truth.size(), false));
  for (std::size_t i = 0; i < ks.size(); ++i) {
    for (std::size_t g = 0; g < ground_truth.size(); ++g) hits[i][g] = claimed[g] < ks[i];
  }
  return hits;
}

void RecallCounts::merge(const RecallCounts& other) {
  if (other.ks != ks || other.predicate_ground_truth.size() != predicate_ground_truth.size()) {
    throw ContractError("RecallCounts::merge: incompatible counts");
  }
  for (std::size_t i = 0; i < ks.size(); ++i) hits[i] += other.hits[i];
  ground_truth += other.ground_truth;
  for (std::size_t p = 0; p < predicate_ground_truth.size(); ++p) {
    predicate_ground_truth[p] += other.predicate_ground_truth[p];
    for (std::size_t i = 0; i < ks.size(); ++i) predicate_hits[p][i] += other.predicate_hits[p][i];
  }
}

RecallCounts count_hits(const std::vector<FrameEval>& frames, Task task,
                        const std::vector<std::size_t>& ks, std::size_t num_predicates) {
  RecallCounts c;
  c.ks = ks;
  c.hits.assign(ks.size(), 0);
  c.predicate_hits.assign(num_predicates, std::vector<std::uint64_t>(ks.size(), 0));
  c.predicate_ground_truth.assign(num_predicates, 0);
  for (const auto& f : frames) {
    if (f.ground_truth.empty()) continue;
    const auto hits = match_triplets(f.predictions, f.ground_truth, task, ks);
    c.ground_truth += f.ground_truth.size();
    for (std::size_t g = 0; g < f.ground_truth.size(); ++g) {
      const std::size_t p = f.ground_truth[g].predicate;
      if (p >= num_predicates) throw DataError("predicate id out of range in " + f.video_id);
      ++c.predicate_ground_truth[p];
      for (std::size_t i = 0; i < ks.size(); ++i) {
        if (hits[i][g]) {
          ++c.hits[i];
          ++c.predicate_hits[p][i];
        }
      }
    }
  }
  return c;
}

double recall_at_k(const RecallCounts& counts, std::size_t k_index) {
  if (counts.ground_truth == 0) throw DataError("recall is undefined without ground-truth triplets");
  return 100.0 * static_cast<double>(counts.hits.at(k_index)) / static_cast<double>(counts.ground_truth);
}

double mean_recall_at_k(const RecallCounts& counts, std::size_t k_index) {
  double total = 0.0;
  std::size_t n = 0;
  for (std::size_t p = 0; p < counts.predicate_ground_truth.size(); ++p) {
    if (counts.predicate_ground_truth[p] == 0) continue;
    total += 100.0 * static_cast<double>(counts.predicate_hits[p].at(k_index)) /
             static_cast<double>(counts.predicate_ground_truth[p]);
    ++n;
  }
  if (n == 0) throw DataError("mean recall is undefined without ground-truth triplets");
  return total / static_cast<double>(n);
}

namespace {

const FrameSample* find_sample_frame(const VideoSample& s, std::int64_t frame_index) {
  for (const auto& f : s.frames) {
    if (f.frame_index == frame_index) return &f;
  }
  return nullptr;
}

const FrameAnnotation* find_annotation_frame(const VideoAnnotation& v, std::int64_t frame_index) {
  for (const auto& f : v.frames) {
    if (f.frame_index == frame_index) return &f;
  }
  return nullptr;
}

template <typename Fn>
void parallel_for(std::size_t n, std::size_t jobs, Fn fn) {
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(jobs);
  std::vector<std::thread> workers;
  for (std::size_t w = 0; w < jobs; ++w) {
    workers.emplace_back([&, w] {
      try {
        for (std::size_t i; (i = next.fetch_add(1)) < n;) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
        next = n;
      }
    });
  }
  for (auto& t : workers) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

std::vector<FrameEval> predict_video(StketModel& model, const KnowledgeBanks& knowledge,
                                     const Dataset& inputs, const VideoAnnotation* input_video,
                                     Task task, const VideoAnnotation& gt_video) {
  const ModelConfig& cfg = model.config();
  std::vector<FrameEval> out;
  VideoSample sample;
  if (input_video != nullptr) sample = prepare_sample(inputs, *input_video, task, cfg, &gt_video);
  Tape tape;
  VideoForward fwd;
  if (!sample.frames.empty()) fwd = forward(tape, model, knowledge, sample);
  for (const auto& gt_frame : gt_video.frames) {
    FrameEval fe;
    fe.video_id = gt_video.video_id;
    fe.frame_index = gt_frame.frame_index;
    fe.ground_truth = ground_truth_triplets(gt_frame);
    const FrameSample* fs = find_sample_frame(sample, gt_frame.frame_index);
    if (fs != nullptr) {
      const std::size_t t = static_cast<std::size_t>(fs - sample.frames.data());
      const FrameOutput& fo = fwd.frames[t];
      const Tensor& probs = fo.final_probs.value();
      const FrameAnnotation* in_frame = find_annotation_frame(*input_video, gt_frame.frame_index);
      for (std::size_t k = 0; k < fs->size(); ++k) {
        ScoredTriplet base;
        base.pair = k;
        base.subject = fs->subject_index[k];
        base.object = fs->object_index[k];
        base.subject_box = in_frame->proposals[base.subject].box;
        base.object_box = in_frame->proposals[base.object].box;
        double class_conf = 1.0;
        if (task == Task::kSGCls) {
          const auto srow = fo.subject_class_probs->value().row_span(k);
          const auto orow = fo.object_class_probs->value().row_span(k);
          const auto smax = std::max_element(srow.begin(), srow.end());
          const auto omax = std::max_element(orow.begin(), orow.end());
          base.subject_class = static_cast<std::size_t>(smax - srow.begin());
          base.object_class = static_cast<std::size_t>(omax - orow.begin());
          class_conf = *smax * *omax;
        } else {
          base.subject_class = fs->subject_class[k];
          base.object_class = fs->object_class[k];
          class_conf = fs->subject_confidence[k] * fs->object_confidence[k];
        }
        for (std::size_t c = 0; c < probs.cols(); ++c) {
          ScoredTriplet p = base;
          p.predicate = c;
          p.confidence = probs.at(k, c) * class_conf;
          fe.predictions.push_back(p);
        }
      }
      sort_predictions(fe.predictions);
    }
    out.push_back(std::move(fe));
  }
  return out;
}

}  // namespace

std::vector<FrameEval> predict(StketModel& model, const KnowledgeBanks& knowledge,
                               const Dataset& inputs, Task task, const Dataset& ground_truth,
                               std::size_t jobs) {
  std::map<std::string, const VideoAnnotation*> by_id;
  for (const auto& v : inputs.videos) by_id[v.video_id] = &v;
  std::vector<std::vector<FrameEval>> per_video(ground_truth.videos.size());
  parallel_for(ground_truth.videos.size(), jobs, [&](std::size_t i) {
    const auto& gt = ground_truth.videos[i];
    const auto it = by_id.find(gt.video_id);
    per_video[i] = predict_video(model, knowledge, inputs, it == by_id.end() ? nullptr : it->second,
                                 task, gt);
  });
  std::vector<FrameEval> out;
  for (auto& v : per_video) {
    for (auto& f : v) out.push_back(std::move(f));
  }
  return out;
}

std::vector<FrameEval> frequency_prior_baseline(const SpatialMatrixBank& bank, const Dataset& dataset) {
  const std::size_t n_pred = bank.num_predicates();
  std::vector<FrameEval> out;
  for (const auto& v : dataset.videos) {
    for (const auto& f : v.frames) {
      FrameEval fe;
      fe.video_id = v.video_id;
      fe.frame_index = f.frame_index;
      fe.ground_truth = ground_truth_triplets(f);
      for (std::size_t k = 0; k < f.relationships.size(); ++k) {
        const auto& r = f.relationships[k];
        const auto& s = f.proposals[r.subject];
        const auto& o = f.proposals[r.object];
        std::vector<double> e(n_pred, 1.0 / static_cast<double>(n_pred));
        if (bank.find({s.predicted_class(), o.predicted_class()}) != nullptr) {
          e = bank.lookup(s.predicted_class(), o.predicted_class());
        }
        for (std::size_t c = 0; c < n_pred; ++c) {
          fe.predictions.push_back(
              {k, r.subject, r.object, s.predicted_class(), o.predicted_class(), s.box, o.box, c, e[c]});
        }
      }
      sort_predictions(fe.predictions);
      out.push_back(std::move(fe));
    }
  }
  return out;
}

MetricsReport make_report(const RecallCounts& counts, Task task,
                          const std::vector<std::string>& predicate_names) {
  MetricsReport r;
  r.task = to_string(task);
  r.ks = counts.ks;
  for (std::size_t i = 0; i < counts.ks.size(); ++i) {
    r.recall[counts.ks[i]] = recall_at_k(counts, i);
    r.mean_recall[counts.ks[i]] = mean_recall_at_k(counts, i);
  }
  for (std::size_t p = 0; p < counts.predicate_ground_truth.size(); ++p) {
    PredicateRecall pr;
    pr.id = p;
    pr.name = p < predicate_names.size() ? predicate_names[p] : std::to_string(p);
    pr.gt_count = counts.predicate_ground_truth[p];
    if (pr.gt_count > 0) {
      for (std::size_t i = 0; i < counts.ks.size(); ++i) {
        pr.r_at[counts.ks[i]] = 100.0 * static_cast<double>(counts.predicate_hits[p][i]) /
                                static_cast<double>(pr.gt_count);
      }
    }
    r.per_predicate.push_back(std::move(pr));
  }
  return r;
}

namespace {

json k_map(const std::map<std::size_t, double>& m) {
  json j = json::object();
  for (const auto& [k, v] : m) j[std::to_string(k)] = v;
  return j;
}

std::map<std::size_t, double> k_map_from(const json& j) {
  std::map<std::size_t, double> m;
  for (const auto& [k, v] : j.items()) m[std::stoul(k)] = v.get<double>();
  return m;
}

}  // namespace

json to_json(const MetricsReport& r) {
  json per = json::array();
  for (const auto& p : r.per_predicate) {
    per.push_back({{"id", p.id}, {"name", p.name}, {"gt_count", p.gt_count}, {"r_at", k_map(p.r_at)}});
  }
  json entropy = json::array();
  for (const auto& e : r.entropy) {
    entropy.push_back({{"subject", e.pair.subject},
                       {"object", e.pair.object},
                       {"predicate", e.predicate},
                       {"source_count", e.source_count},
                       {"entropy_bits", e.entropy_bits}});
  }
  return {{"task", r.task},
          {"ks", r.ks},
          {"recall", k_map(r.recall)},
          {"mean_recall", k_map(r.mean_recall)},
          {"per_predicate", per},
          {"entropy", entropy}};
}

MetricsReport report_from_json(const json& j) {
  MetricsReport r;
  try {
    r.task = j.at("task").get<std::string>();
    r.ks = j.at("ks").get<std::vector<std::size_t>>();
    r.recall = k_map_from(j.at("recall"));
    r.mean_recall = k_map_from(j.at("mean_recall"));
    for (const auto& p : j.at("per_predicate")) {
      r.per_predicate.push_back({p.at("id").get<std::size_t>(), p.at("name").get<std::string>(),
                                 p.at("gt_count").get<std::uint64_t>(), k_map_from(p.at("r_at"))});
    }
    if (j.contains("entropy")) {
      for (const auto& e : j.at("entropy")) {
        r.entropy.push_back({{e.at("subject").get<std::size_t>(), e.at("object").get<std::size_t>()},
                             e.at("predicate").get<std::size_t>(),
                             e.at("source_count").get<std::uint64_t>(),
                             e.at("entropy_bits").get<double>()});
      }
    }
  } catch (const json::exception& e) {
    throw ParseError(std::string("metrics report: ") + e.what());
  } catch (const std::logic_error& e) {
    throw ParseError(std::string("metrics report: bad K key: ") + e.what());
  }
  return r;
}

void save_report(const MetricsReport& report, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << to_json(report).dump(2) << '\n';
}

MetricsReport load_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  return report_from_json(j);
}

std::string per_predicate_csv(const MetricsReport& report) {
  std::ostringstream out;
  out.precision(17);
  out << "id,name,gt_count";
  for (auto k : report.ks) out << ",R@" << k;
  out << '\n';
  for (const auto& p : report.per_predicate) {
    out << p.id << ',' << p.name << ',' << p.gt_count;
    for (auto k : report.ks) {
      out << ',';
      const auto it = p.r_at.find(k);
      if (it != p.r_at.end()) out << it->second;
    }
    out << '\n';
  }
  return out.str();
}

MetricsReport evaluate(StketModel& model, const KnowledgeBanks& knowledge, const Dataset& inputs,
                       Task task, const Dataset& ground_truth, const std::vector<std::size_t>& ks,
                       std::size_t jobs) {
  const ModelConfig& cfg = model.config();
  if (ground_truth.num_predicates() != cfg.num_predicates || ground_truth.num_classes() != cfg.num_classes) {
    throw ConfigError("ground truth has " + std::to_string(ground_truth.num_classes()) + " classes and " +
                      std::to_string(ground_truth.num_predicates()) + " predicates; model expects " +
                      std::to_string(cfg.num_classes) + " and " + std::to_string(cfg.num_predicates));
  }
  const auto frames = predict(model, knowledge, inputs, task, ground_truth, jobs);
  MetricsReport r =
      make_report(count_hits(frames, task, ks, cfg.num_predicates), task, ground_truth.predicate_names);
  r.entropy = transition_entropy(knowledge.temporal);
  return r;
}

}  // namespace stket
