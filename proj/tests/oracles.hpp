#pragma once

// Reference implementations shared by the unit tests and the acceptance
// runner. Only data types and accessors of the library are used.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "stket/evaluation.hpp"
#include "stket/knowledge.hpp"
#include "stket/model.hpp"
#include "stket/synthetic.hpp"

namespace stket::oracle {

inline ObjectProposal proposal(Box b, std::size_t cls, std::size_t classes) {
  ObjectProposal p;
  p.box = b;
  p.class_distribution.assign(classes, 0.0);
  p.class_distribution[cls] = 1.0;
  return p;
}

// ---- knowledge ------------------------------------------------------------------

inline constexpr std::size_t kPerson = 0;
inline constexpr std::size_t kCup = 1;
inline constexpr std::size_t kHold = 0;
inline constexpr std::size_t kDrink = 1;

// One tracked person-cup relationship; frame t carries predicates_per_frame[t]
// out of {hold, drink, look}.
inline Dataset person_cup(const std::vector<std::vector<std::size_t>>& predicates_per_frame) {
  Dataset ds;
  ds.class_names = {"person", "cup"};
  ds.predicate_names = {"hold", "drink", "look"};
  ds.predicate_type_sizes = {3};
  VideoAnnotation v;
  v.video_id = "v";
  for (std::size_t t = 0; t < predicates_per_frame.size(); ++t) {
    FrameAnnotation f;
    f.frame_index = static_cast<std::int64_t>(t);
    f.proposals = {proposal({0, 0, 100, 100}, kPerson, 2), proposal({50, 50, 90, 90}, kCup, 2)};
    RelationshipInstance r;
    r.subject = 0;
    r.object = 1;
    r.predicates = predicates_per_frame[t];
    r.track_id = 0;
    f.relationships.push_back(r);
    v.frames.push_back(f);
  }
  ds.videos.push_back(v);
  return ds;
}

// Random multi-label annotations over 4 classes and 5 predicates; every
// relationship is tracked by its (subject, object) slot.
inline Dataset random_dataset(std::size_t videos, std::size_t frames, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Dataset ds;
  ds.class_names = {"a", "b", "c", "d"};
  ds.predicate_names = {"p0", "p1", "p2", "p3", "p4"};
  ds.predicate_type_sizes = {5};
  std::uniform_int_distribution<std::size_t> cls(0, 3);
  std::bernoulli_distribution coin(0.4);
  for (std::size_t v = 0; v < videos; ++v) {
    VideoAnnotation video;
    video.video_id = "r" + std::to_string(v);
    const std::size_t n = 3;
    std::vector<std::size_t> classes(n);
    for (auto& c : classes) c = cls(rng);
    for (std::size_t t = 0; t < frames; ++t) {
      FrameAnnotation f;
      f.frame_index = static_cast<std::int64_t>(t);
      for (std::size_t i = 0; i < n; ++i) {
        f.proposals.push_back(proposal({100.0 * i, 0, 100.0 * i + 50, 50}, classes[i], 4));
      }
      std::int64_t id = 0;
      for (std::size_t s = 0; s < n; ++s) {
        for (std::size_t o = 0; o < n; ++o, ++id) {
          if (s == o || !coin(rng)) continue;
          RelationshipInstance r;
          r.subject = s;
          r.object = o;
          r.track_id = id;
          for (std::size_t p = 0; p < 5; ++p) {
            if (coin(rng)) r.predicates.push_back(p);
          }
          f.relationships.push_back(r);
        }
      }
      video.frames.push_back(f);
    }
    ds.videos.push_back(video);
  }
  return ds;
}

using ClassPair = std::pair<std::size_t, std::size_t>;

struct BruteSpatial {
  std::map<ClassPair, std::uint64_t> n;
  std::map<std::tuple<std::size_t, std::size_t, std::size_t>, std::uint64_t> count;
};

inline BruteSpatial brute_spatial(const Dataset& ds) {
  BruteSpatial out;
  for (const auto& v : ds.videos) {
    for (const auto& f : v.frames) {
      for (const auto& r : f.relationships) {
        const auto i = f.proposals[r.subject].predicted_class();
        const auto j = f.proposals[r.object].predicted_class();
        out.n[{i, j}] += 1;
        for (auto p : r.predicates) out.count[{i, j, p}] += 1;
      }
    }
  }
  return out;
}

// Transitions between consecutive frames of a video, linking relationships
// with equal track ids by linear search; keyed by the classes at t-1.
struct BruteTemporal {
  std::map<ClassPair, std::map<std::size_t, std::uint64_t>> source;
  std::map<ClassPair, std::map<ClassPair, std::uint64_t>> transition;  // (x, y) -> count
};

inline BruteTemporal brute_temporal(const Dataset& ds) {
  BruteTemporal out;
  for (const auto& v : ds.videos) {
    for (std::size_t t = 1; t < v.frames.size(); ++t) {
      const auto& prev = v.frames[t - 1];
      const auto& curr = v.frames[t];
      for (const auto& r : curr.relationships) {
        for (const auto& q : prev.relationships) {
          if (q.track_id != r.track_id) continue;
          const ClassPair key{prev.proposals[q.subject].predicted_class(),
                              prev.proposals[q.object].predicted_class()};
          for (auto x : q.predicates) {
            out.source[key][x] += 1;
            for (auto y : r.predicates) out.transition[key][{x, y}] += 1;
          }
          if (q.predicates.empty()) out.source[key];
          break;
        }
      }
    }
  }
  return out;
}

// Every count and probability of the spatial bank equals the brute-force one;
// returns a description of the first mismatch, empty when equal.
inline std::string compare_spatial(const SpatialMatrixBank& bank, const Dataset& ds) {
  const auto brute = brute_spatial(ds);
  const std::size_t c = ds.num_predicates();
  if (bank.entries().size() != brute.n.size()) return "pair count differs";
  for (const auto& [key, n] : brute.n) {
    const auto* e = bank.find({key.first, key.second});
    if (e == nullptr) return "missing pair";
    if (e->pair_count != n) return "pair_count differs";
    for (std::size_t p = 0; p < c; ++p) {
      const auto it = brute.count.find({key.first, key.second, p});
      const std::uint64_t k = it == brute.count.end() ? 0 : it->second;
      if (e->predicate_counts[p] != k) return "predicate count differs";
      if (e->probabilities[p] != static_cast<double>(k) / static_cast<double>(n)) return "probability differs";
    }
  }
  return {};
}

inline std::string compare_temporal(const TemporalMatrixBank& bank, const Dataset& ds) {
  const auto brute = brute_temporal(ds);
  const std::size_t c = ds.num_predicates();
  if (bank.entries().size() != brute.source.size()) return "pair count differs";
  for (const auto& [key, sources] : brute.source) {
    const auto* e = bank.find({key.first, key.second});
    if (e == nullptr) return "missing pair";
    const auto& trans = brute.transition.count(key) ? brute.transition.at(key)
                                                    : std::map<ClassPair, std::uint64_t>{};
    for (std::size_t x = 0; x < c; ++x) {
      const std::uint64_t sx = sources.count(x) ? sources.at(x) : 0;
      if (e->source_counts[x] != sx) return "source count differs";
      for (std::size_t y = 0; y < c; ++y) {
        const std::uint64_t k = trans.count({x, y}) ? trans.at({x, y}) : 0;
        if (e->transition_counts[x * c + y] != k) return "transition count differs";
        const double expect = sx == 0 ? 0.0 : static_cast<double>(k) / static_cast<double>(sx);
        if (e->probabilities[x * c + y] != expect) return "probability differs";
      }
    }
  }
  return {};
}

inline double linf_spatial(const SpatialMatrixBank& bank, const GroundTruthDynamics& truth) {
  double worst = 0.0;
  for (const auto& pt : truth.pairs) {
    const auto e = bank.lookup(pt.subject_class, pt.object_class);
    for (std::size_t i = 0; i < e.size(); ++i) worst = std::max(worst, std::abs(e[i] - pt.spatial[i]));
  }
  return worst;
}

inline double linf_temporal(const TemporalMatrixBank& bank, const GroundTruthDynamics& truth) {
  double worst = 0.0;
  for (const auto& pt : truth.pairs) {
    const Tensor m = bank.matrix(pt.subject_class, pt.object_class);
    for (std::size_t i = 0; i < m.size(); ++i) worst = std::max(worst, std::abs(m[i] - pt.temporal[i]));
  }
  return worst;
}

// One person-cup pair type, predicate types of 3 and 4, about `transitions`
// consecutive-pair transitions.
inline SyntheticConfig recovery_config(std::size_t transitions, std::uint64_t seed) {
  SyntheticConfig c;
  c.class_names = {"person", "cup"};
  c.predicate_type_sizes = {3, 4};
  DynamicsOptions o;
  o.object_classes = 1;
  o.predicate_type_sizes = c.predicate_type_sizes;
  o.stickiness = 0.5;
  o.seed = seed;
  c.pairs = make_dynamics(o);
  c.frames_per_video = 11;
  c.relationships_per_video = 1;
  c.videos = transitions / 10;
  c.seed = seed;
  c.with_features = false;
  return c;
}

// ---- matching ---------------------------------------------------------------------

inline double overlap_ratio(const Box& a, const Box& b) {
  const double w = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
  const double h = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
  const double inter = w * h;
  const double uni = (a.x2 - a.x1) * (a.y2 - a.y1) + (b.x2 - b.x1) * (b.y2 - b.y1) - inter;
  return inter / uni;
}

inline bool compatible(const ScoredTriplet& p, const GroundTruthTriplet& g, Task task) {
  const bool same_classes = p.subject_class == g.subject_class && p.object_class == g.object_class;
  if (task == Task::kSGGen) {
    return p.predicate == g.predicate && same_classes && overlap_ratio(p.subject_box, g.subject_box) >= 0.5 &&
           overlap_ratio(p.object_box, g.object_box) >= 0.5;
  }
  return p.predicate == g.predicate && same_classes && p.subject == g.subject && p.object == g.object;
}

// Enumerates every (prediction, ground truth) pair of the top-k pool in rank
// order and lets each prediction claim its first unclaimed compatible
// ground-truth triplet.
inline std::vector<bool> greedy_hits(const std::vector<ScoredTriplet>& preds,
                                     const std::vector<GroundTruthTriplet>& gts, Task task, std::size_t k) {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t r = 0; r < preds.size() && r < k; ++r) {
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (compatible(preds[r], gts[g], task)) pairs.emplace_back(r, g);
    }
  }
  std::set<std::size_t> used_pred;
  std::vector<bool> hit(gts.size(), false);
  for (const auto& [r, g] : pairs) {
    if (used_pred.count(r) || hit[g]) continue;
    used_pred.insert(r);
    hit[g] = true;
  }
  return hit;
}

// Size of a maximum matching by exhaustive assignment.
inline std::size_t max_matching(const std::vector<ScoredTriplet>& preds,
                                const std::vector<GroundTruthTriplet>& gts, Task task, std::size_t k) {
  const std::size_t n = std::min(k, preds.size());
  std::vector<bool> taken(gts.size(), false);
  std::function<std::size_t(std::size_t)> rec = [&](std::size_t r) -> std::size_t {
    if (r == n) return 0;
    std::size_t best = rec(r + 1);
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (!taken[g] && compatible(preds[r], gts[g], task)) {
        taken[g] = true;
        best = std::max(best, 1 + rec(r + 1));
        taken[g] = false;
      }
    }
    return best;
  };
  return rec(0);
}

inline Box random_box(std::mt19937_64& rng) {
  const double x = static_cast<double>(rng() % 4) * 10.0;
  const double y = static_cast<double>(rng() % 3) * 10.0;
  return {x, y, x + 20.0 + static_cast<double>(rng() % 3) * 5.0, y + 20.0};
}

struct MicroInstance {
  Task task = Task::kPredCls;
  std::vector<ScoredTriplet> predictions;  // sorted
  std::vector<GroundTruthTriplet> ground_truth;
};

// Up to 8 predictions against 1 to 4 ground-truth triplets over 3 proposals,
// 2 classes and 3 predicates; half of the predictions copy a ground-truth
// triplet so that hits are common. The task cycles with `trial`.
inline MicroInstance micro_instance(std::mt19937_64& rng, int trial) {
  MicroInstance m;
  m.task = trial % 3 == 0 ? Task::kPredCls : trial % 3 == 1 ? Task::kSGCls : Task::kSGGen;
  const std::size_t n_gt = 1 + rng() % 4;
  const std::size_t n_pred = rng() % 9;
  std::set<std::tuple<std::size_t, std::size_t, std::size_t>> seen;
  while (m.ground_truth.size() < n_gt) {
    GroundTruthTriplet g;
    g.subject = rng() % 3;
    g.object = rng() % 3;
    g.predicate = rng() % 3;
    if (m.task != Task::kSGGen && !seen.insert({g.subject, g.object, g.predicate}).second) continue;
    g.subject_class = g.subject % 2;
    g.object_class = g.object % 2;
    g.subject_box = random_box(rng);
    g.object_box = random_box(rng);
    m.ground_truth.push_back(g);
  }
  for (std::size_t i = 0; i < n_pred; ++i) {
    ScoredTriplet p;
    p.pair = i;
    p.subject = rng() % 3;
    p.object = rng() % 3;
    p.predicate = rng() % 3;
    p.confidence = static_cast<double>(rng() % 4) / 4.0;
    p.subject_class = m.task == Task::kPredCls ? p.subject % 2 : rng() % 2;
    p.object_class = m.task == Task::kPredCls ? p.object % 2 : rng() % 2;
    if (rng() % 2 == 0) {
      const auto& g = m.ground_truth[rng() % m.ground_truth.size()];
      p.subject = g.subject;
      p.object = g.object;
      p.predicate = g.predicate;
      p.subject_box = g.subject_box;
      p.object_box = g.object_box;
    } else {
      p.subject_box = random_box(rng);
      p.object_box = random_box(rng);
    }
    m.predictions.push_back(p);
  }
  std::sort(m.predictions.begin(), m.predictions.end(), [](const ScoredTriplet& a, const ScoredTriplet& b) {
    return std::tie(b.confidence, a.predicate, a.pair) < std::tie(a.confidence, b.predicate, b.pair);
  });
  return m;
}

// ---- attention -------------------------------------------------------------------

// Straightforward loops over the stored weights: x W + b per projection,
// per-head softmax(QK^T / sqrt(dh)) V, output projection, no bias terms
// from knowledge.
inline Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b) {
  Tensor out({x.rows(), w.cols()});
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (std::size_t c = 0; c < w.cols(); ++c) {
      double s = b[c];
      for (std::size_t i = 0; i < x.cols(); ++i) s += x.at(r, i) * w.at(i, c);
      out.at(r, c) = s;
    }
  }
  return out;
}

inline Tensor reference_attention(const ParamStore& store, const std::string& prefix, const Tensor& x,
                                  std::size_t heads) {
  const auto proj = [&](const char* n) {
    return affine(x, store.get(prefix + n + std::string(".w")).value,
                  store.get(prefix + n + std::string(".b")).value);
  };
  const Tensor q = proj(".q");
  const Tensor k = proj(".k");
  const Tensor v = proj(".v");
  const std::size_t n = x.rows();
  const std::size_t d = x.cols();
  const std::size_t dh = d / heads;
  Tensor merged({n, d});
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> s(n);
      for (std::size_t j = 0; j < n; ++j) {
        double dot = 0.0;
        for (std::size_t c = h * dh; c < (h + 1) * dh; ++c) dot += q.at(i, c) * k.at(j, c);
        s[j] = dot / std::sqrt(static_cast<double>(dh));
      }
      const double mx = *std::max_element(s.begin(), s.end());
      double z = 0.0;
      for (auto& e : s) z += (e = std::exp(e - mx));
      for (std::size_t c = h * dh; c < (h + 1) * dh; ++c) {
        double acc = 0.0;
        for (std::size_t j = 0; j < n; ++j) acc += s[j] / z * v.at(j, c);
        merged.at(i, c) = acc;
      }
    }
  }
  return affine(merged, store.get(prefix + ".o.w").value, store.get(prefix + ".o.b").value);
}

inline Tensor reference_layer_norm(const Tensor& x, const Tensor& g, const Tensor& b) {
  Tensor out(x.shape());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double mean = 0.0;
    for (double v : x.row_span(r)) mean += v;
    mean /= static_cast<double>(x.cols());
    double var = 0.0;
    for (double v : x.row_span(r)) var += (v - mean) * (v - mean);
    var /= static_cast<double>(x.cols());
    for (std::size_t c = 0; c < x.cols(); ++c) {
      out.at(r, c) = (x.at(r, c) - mean) / std::sqrt(var + 1e-5) * g[c] + b[c];
    }
  }
  return out;
}

inline Tensor reference_transformer_layer(const ParamStore& store, const std::string& prefix,
                                          const Tensor& x, std::size_t heads) {
  const Tensor a = reference_attention(store, prefix + ".attn", x, heads);
  Tensor h = x;
  for (std::size_t i = 0; i < h.size(); ++i) h[i] += a[i];
  h = reference_layer_norm(h, store.get(prefix + ".ln1.g").value, store.get(prefix + ".ln1.b").value);
  Tensor f = affine(h, store.get(prefix + ".ff1.w").value, store.get(prefix + ".ff1.b").value);
  for (auto& v : f.data()) v = std::max(v, 0.0);
  f = affine(f, store.get(prefix + ".ff2.w").value, store.get(prefix + ".ff2.b").value);
  for (std::size_t i = 0; i < f.size(); ++i) f[i] += h[i];
  return reference_layer_norm(f, store.get(prefix + ".ln2.g").value, store.get(prefix + ".ln2.b").value);
}

}  // namespace stket::oracle
