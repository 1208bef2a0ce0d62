#include "stket/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "stket/errors.hpp"
#include "stket/json_keys.hpp"

namespace stket {

using nlohmann::json;

namespace {

std::size_t sample_categorical(std::span<const double> probs, std::mt19937_64& rng) {
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  double acc = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    acc += probs[i];
    if (u < acc) return i;
  }
  // Rounding can leave u above the final cumulative sum; fall back to the
  // last state with positive mass.
  for (std::size_t i = probs.size(); i-- > 0;) {
    if (probs[i] > 0.0) return i;
  }
  return probs.size() - 1;
}

std::vector<std::size_t> type_offsets(const std::vector<std::size_t>& sizes) {
  std::vector<std::size_t> offsets(sizes.size(), 0);
  for (std::size_t g = 1; g < sizes.size(); ++g) offsets[g] = offsets[g - 1] + sizes[g - 1];
  return offsets;
}

void check_distribution(std::span<const double> row, const std::string& where) {
  double total = 0.0;
  for (double v : row) {
    if (!(v >= 0.0 && v <= 1.0)) throw ConfigError(where + ": entry outside [0, 1]");
    total += v;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError(where + ": entries do not sum to 1");
}

Box random_walk(const Box& b, double step, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, step);
  const double dx = n(rng);
  const double dy = n(rng);
  Box out{b.x1 + dx, b.y1 + dy, b.x2 + dx, b.y2 + dy};
  const double sx = std::clamp(out.x1, 0.0, 640.0 - out.width()) - out.x1;
  const double sy = std::clamp(out.y1, 0.0, 480.0 - out.height()) - out.y1;
  return Box{out.x1 + sx, out.y1 + sy, out.x2 + sx, out.y2 + sy};
}

std::vector<double> one_hot(std::size_t n, std::size_t k) {
  std::vector<double> v(n, 0.0);
  v[k] = 1.0;
  return v;
}

}  // namespace

// ---- dynamics ---------------------------------------------------------------------

std::vector<PairDynamics> make_dynamics(const DynamicsOptions& options) {
  if (options.stickiness < 0.0 || options.stickiness > 1.0) {
    throw ConfigError("stickiness must lie in [0, 1]");
  }
  std::mt19937_64 rng(options.seed ^ 0x5eed'd1ce'0000'0001ULL);
  std::vector<PairDynamics> pairs;
  for (std::size_t obj = 1; obj <= options.object_classes; ++obj) {
    PairDynamics pd;
    pd.subject_class = 0;
    pd.object_class = obj;
    for (auto n : options.predicate_type_sizes) {
      std::vector<double> target(n);
      for (std::size_t r = 0; r < n; ++r) {
        target[r] = std::pow(static_cast<double>(r + 1), -options.skew);
      }
      if (options.pair_permute) std::shuffle(target.begin(), target.end(), rng);
      const double z = std::accumulate(target.begin(), target.end(), 0.0);
      for (auto& v : target) v /= z;
      // Metropolis chain with a uniform proposal has `target` as its
      // stationary distribution; mixing in the identity preserves it.
      Tensor p({n, n});
      for (std::size_t x = 0; x < n; ++x) {
        double off = 0.0;
        for (std::size_t y = 0; y < n; ++y) {
          if (x == y) continue;
          const double move = std::min(1.0, target[y] / target[x]) / static_cast<double>(n - 1);
          p.at(x, y) = (1.0 - options.stickiness) * move;
          off += p.at(x, y);
        }
        p.at(x, x) = 1.0 - off;
      }
      pd.transitions.push_back(std::move(p));
    }
    pairs.push_back(std::move(pd));
  }
  return pairs;
}

std::vector<double> stationary_distribution(const Tensor& transition) {
  const std::size_t n = transition.rows();
  std::vector<double> pi(n, 1.0 / static_cast<double>(n));
  std::vector<double> next(n);
  const auto step = [&](const std::vector<double>& from, std::vector<double>& to) {
    std::fill(to.begin(), to.end(), 0.0);
    for (std::size_t x = 0; x < n; ++x) {
      for (std::size_t y = 0; y < n; ++y) to[y] += from[x] * transition.at(x, y);
    }
  };
  for (int it = 0; it < 200000; ++it) {
    step(pi, next);
    double delta = 0.0;
    for (std::size_t i = 0; i < n; ++i) delta = std::max(delta, std::abs(next[i] - pi[i]));
    pi.swap(next);
    if (delta < 1e-15) return pi;
  }
  // Periodic chain: the Cesaro average converges where the iterates cycle.
  std::vector<double> avg(n, 0.0);
  std::vector<double> cur(n, 1.0 / static_cast<double>(n));
  const int steps = 100000;
  for (int it = 0; it < steps; ++it) {
    for (std::size_t i = 0; i < n; ++i) avg[i] += cur[i] / steps;
    step(cur, next);
    cur.swap(next);
  }
  return avg;
}

void validate(const SyntheticConfig& c) {
  if (c.class_names.size() < 2) throw ConfigError("need at least two object classes");
  if (c.predicate_type_sizes.empty()) throw ConfigError("predicate_type_sizes is empty");
  for (auto n : c.predicate_type_sizes) {
    if (n == 0) throw ConfigError("predicate type of size 0");
  }
  const std::size_t total =
      std::accumulate(c.predicate_type_sizes.begin(), c.predicate_type_sizes.end(), std::size_t{0});
  if (!c.predicate_names.empty() && c.predicate_names.size() != total) {
    throw ConfigError("predicate_names does not match predicate_type_sizes");
  }
  if (c.pairs.empty()) throw ConfigError("no pair dynamics configured");
  if (c.frames_per_video == 0 || c.relationships_per_video == 0) {
    throw ConfigError("frames_per_video and relationships_per_video must be positive");
  }
  if (c.union_grid == 0 || c.union_channels == 0 || c.visual_dim == 0) {
    throw ConfigError("feature dimensions must be positive");
  }
  if (c.occlusion_prob < 0.0 || c.occlusion_prob > 1.0) {
    throw ConfigError("occlusion_prob must lie in [0, 1]");
  }
  for (std::size_t p = 0; p < c.pairs.size(); ++p) {
    const auto& pd = c.pairs[p];
    const std::string pw = "pair " + std::to_string(p);
    if (pd.subject_class >= c.class_names.size() || pd.object_class >= c.class_names.size()) {
      throw ConfigError(pw + ": class index out of range");
    }
    if (pd.transitions.size() != c.predicate_type_sizes.size()) {
      throw ConfigError(pw + ": expected one transition block per predicate type");
    }
    if (!pd.initial.empty() && pd.initial.size() != c.predicate_type_sizes.size()) {
      throw ConfigError(pw + ": expected one initial distribution per predicate type");
    }
    for (std::size_t g = 0; g < pd.transitions.size(); ++g) {
      const auto n = c.predicate_type_sizes[g];
      const auto& t = pd.transitions[g];
      const std::string tw = pw + " type " + std::to_string(g);
      if (t.rank() != 2 || t.rows() != n || t.cols() != n) {
        throw ConfigError(tw + ": transition block must be " + std::to_string(n) + "x" +
                          std::to_string(n));
      }
      for (std::size_t r = 0; r < n; ++r) check_distribution(t.row_span(r), tw + " row " + std::to_string(r));
      if (!pd.initial.empty()) {
        if (pd.initial[g].size() != n) throw ConfigError(tw + ": initial distribution has wrong length");
        check_distribution(pd.initial[g], tw + " initial distribution");
      }
    }
  }
}

const PairTruth* GroundTruthDynamics::find(std::size_t s, std::size_t o) const {
  for (const auto& p : pairs) {
    if (p.subject_class == s && p.object_class == o) return &p;
  }
  return nullptr;
}

GroundTruthDynamics true_dynamics(const SyntheticConfig& c) {
  validate(c);
  const auto offsets = type_offsets(c.predicate_type_sizes);
  const std::size_t total = offsets.back() + c.predicate_type_sizes.back();
  GroundTruthDynamics truth;
  for (const auto& pd : c.pairs) {
    if (truth.find(pd.subject_class, pd.object_class) != nullptr) {
      throw ConfigError("duplicate dynamics for one pair type");
    }
    PairTruth pt;
    pt.subject_class = pd.subject_class;
    pt.object_class = pd.object_class;
    pt.spatial.assign(total, 0.0);
    pt.temporal = Tensor({total, total});
    std::vector<std::vector<double>> marginals;
    for (std::size_t g = 0; g < pd.transitions.size(); ++g) {
      marginals.push_back(pd.initial.empty() ? stationary_distribution(pd.transitions[g])
                                             : pd.initial[g]);
    }
    for (std::size_t g = 0; g < marginals.size(); ++g) {
      for (std::size_t x = 0; x < marginals[g].size(); ++x) pt.spatial[offsets[g] + x] = marginals[g][x];
    }
    // Chains of different predicate types are independent, so the cross-type
    // conditional is simply the target type's marginal.
    for (std::size_t g = 0; g < marginals.size(); ++g) {
      for (std::size_t x = 0; x < marginals[g].size(); ++x) {
        for (std::size_t h = 0; h < marginals.size(); ++h) {
          for (std::size_t y = 0; y < marginals[h].size(); ++y) {
            pt.temporal.at(offsets[g] + x, offsets[h] + y) =
                g == h ? pd.transitions[g].at(x, y) : marginals[h][y];
          }
        }
      }
    }
    truth.pairs.push_back(std::move(pt));
  }
  return truth;
}

// ---- generation ---------------------------------------------------------------------

SyntheticDataset generate_synthetic_dataset(const SyntheticConfig& c) {
  SyntheticDataset out;
  out.truth = true_dynamics(c);
  const auto offsets = type_offsets(c.predicate_type_sizes);
  const std::size_t num_predicates = offsets.back() + c.predicate_type_sizes.back();
  const std::size_t num_classes = c.class_names.size();
  const std::size_t union_dim = c.union_channels * c.union_grid * c.union_grid;

  Dataset& ds = out.dataset;
  ds.class_names = c.class_names;
  ds.predicate_type_sizes = c.predicate_type_sizes;
  ds.predicate_names = c.predicate_names;
  if (ds.predicate_names.empty()) {
    for (std::size_t p = 0; p < num_predicates; ++p) ds.predicate_names.push_back("pred" + std::to_string(p));
  }
  ds.features = std::make_shared<FeatureStore>();

  std::mt19937_64 global(c.seed);
  std::normal_distribution<double> unit(0.0, 1.0);
  Tensor class_means({num_classes, c.visual_dim});
  for (auto& v : class_means.data()) v = unit(global) * c.class_signal;
  Tensor predicate_dirs({num_predicates, union_dim});
  for (auto& v : predicate_dirs.data()) v = unit(global) * c.predicate_signal;

  // Initial and stationary distributions, resolved once per pair type.
  std::vector<std::vector<std::vector<double>>> initial(c.pairs.size());
  for (std::size_t p = 0; p < c.pairs.size(); ++p) {
    for (std::size_t g = 0; g < c.predicate_type_sizes.size(); ++g) {
      initial[p].push_back(c.pairs[p].initial.empty()
                               ? stationary_distribution(c.pairs[p].transitions[g])
                               : c.pairs[p].initial[g]);
    }
  }

  std::vector<double> visual_rows;
  std::vector<double> union_rows;
  std::size_t visual_count = 0;
  std::size_t union_count = 0;
  std::vector<double> det_visual_rows;
  std::vector<double> det_union_rows;
  std::size_t det_visual_count = 0;
  std::size_t det_union_count = 0;

  const auto add_visual = [&](std::vector<double>& rows, std::size_t& count, std::size_t cls,
                              std::mt19937_64& rng, const std::string& file) {
    if (!c.with_features) return FeatureRef{};
    for (std::size_t d = 0; d < c.visual_dim; ++d) {
      rows.push_back(class_means.at(cls, d) + unit(rng) * c.feature_noise);
    }
    return FeatureRef{file, count++};
  };
  const auto add_union = [&](std::vector<double>& rows, std::size_t& count,
                             const std::vector<std::size_t>& predicates, bool signal,
                             std::mt19937_64& rng, const std::string& file) {
    if (!c.with_features) return FeatureRef{};
    for (std::size_t d = 0; d < union_dim; ++d) {
      double v = unit(rng) * c.feature_noise;
      if (signal) {
        for (auto p : predicates) v += predicate_dirs.at(p, d);
      }
      rows.push_back(v);
    }
    return FeatureRef{file, count++};
  };

  Dataset detections;
  if (c.emit_detections) {
    detections.class_names = ds.class_names;
    detections.predicate_names = ds.predicate_names;
    detections.predicate_type_sizes = ds.predicate_type_sizes;
    detections.features = ds.features;
  }

  for (std::size_t v = 0; v < c.videos; ++v) {
    std::seed_seq seq{c.seed, static_cast<std::uint64_t>(v), std::uint64_t{0x5717}};
    std::mt19937_64 rng(seq);
    VideoAnnotation video;
    video.video_id = "synth_" + std::to_string(v);

    // Pick pair types, then lay out proposals: one per distinct subject
    // class, one object per relationship.
    std::uniform_int_distribution<std::size_t> pick(0, c.pairs.size() - 1);
    std::vector<std::size_t> pair_types(c.relationships_per_video);
    for (auto& pt : pair_types) pt = pick(rng);
    std::vector<std::size_t> proposal_class;
    std::vector<std::size_t> rel_subject(pair_types.size());
    std::vector<std::size_t> rel_object(pair_types.size());
    for (std::size_t k = 0; k < pair_types.size(); ++k) {
      const auto sc = c.pairs[pair_types[k]].subject_class;
      auto it = std::find(proposal_class.begin(), proposal_class.end(), sc);
      if (it == proposal_class.end()) {
        proposal_class.push_back(sc);
        it = proposal_class.end() - 1;
      }
      rel_subject[k] = static_cast<std::size_t>(it - proposal_class.begin());
    }
    for (std::size_t k = 0; k < pair_types.size(); ++k) {
      proposal_class.push_back(c.pairs[pair_types[k]].object_class);
      rel_object[k] = proposal_class.size() - 1;
    }
    std::uniform_real_distribution<double> side(60.0, 160.0);
    std::vector<Box> boxes;
    for (std::size_t i = 0; i < proposal_class.size(); ++i) {
      const double w = side(rng);
      const double h = side(rng);
      const double x = std::uniform_real_distribution<double>(0.0, 640.0 - w)(rng);
      const double y = std::uniform_real_distribution<double>(0.0, 480.0 - h)(rng);
      boxes.push_back(Box{x, y, x + w, y + h});
    }
    // Chain states per relationship and predicate type.
    std::vector<std::vector<std::size_t>> state(pair_types.size(),
                                                std::vector<std::size_t>(offsets.size()));
    for (std::size_t k = 0; k < pair_types.size(); ++k) {
      for (std::size_t g = 0; g < offsets.size(); ++g) {
        state[k][g] = sample_categorical(initial[pair_types[k]][g], rng);
      }
    }

    VideoAnnotation det_video;
    det_video.video_id = video.video_id;
    for (std::size_t t = 0; t < c.frames_per_video; ++t) {
      if (t > 0) {
        for (auto& b : boxes) b = random_walk(b, c.box_step, rng);
        for (std::size_t k = 0; k < pair_types.size(); ++k) {
          for (std::size_t g = 0; g < offsets.size(); ++g) {
            state[k][g] = sample_categorical(
                c.pairs[pair_types[k]].transitions[g].row_span(state[k][g]), rng);
          }
        }
      }
      FrameAnnotation frame;
      frame.frame_index = static_cast<std::int64_t>(t);
      for (std::size_t i = 0; i < proposal_class.size(); ++i) {
        ObjectProposal p;
        p.box = boxes[i];
        p.class_distribution = one_hot(num_classes, proposal_class[i]);
        p.feature = add_visual(visual_rows, visual_count, proposal_class[i], rng, "visual.stkt");
        frame.proposals.push_back(std::move(p));
      }
      std::vector<FeatureRef> union_refs;
      for (std::size_t k = 0; k < pair_types.size(); ++k) {
        RelationshipInstance r;
        r.subject = rel_subject[k];
        r.object = rel_object[k];
        for (std::size_t g = 0; g < offsets.size(); ++g) r.predicates.push_back(offsets[g] + state[k][g]);
        const bool visible = std::uniform_real_distribution<double>(0.0, 1.0)(rng) >= c.occlusion_prob;
        r.union_feature = add_union(union_rows, union_count, r.predicates, visible, rng, "union.stkt");
        r.track_id = static_cast<std::int64_t>(k);
        union_refs.push_back(r.union_feature);
        frame.relationships.push_back(std::move(r));
      }

      if (c.emit_detections) {
        FrameAnnotation det;
        det.frame_index = frame.frame_index;
        std::normal_distribution<double> jitter(0.0, c.detection_jitter);
        std::uniform_real_distribution<double> conf_dist(0.6, 0.95);
        for (std::size_t i = 0; i < proposal_class.size(); ++i) {
          ObjectProposal p;
          Box b = boxes[i];
          b = Box{b.x1 + jitter(rng), b.y1 + jitter(rng), b.x2 + jitter(rng), b.y2 + jitter(rng)};
          if (!b.valid()) b = boxes[i];
          p.box = b;
          std::size_t cls = proposal_class[i];
          if (std::uniform_real_distribution<double>(0.0, 1.0)(rng) < c.detection_misclass) {
            cls = (cls + 1 + rng() % (num_classes - 1)) % num_classes;
          }
          const double conf = conf_dist(rng);
          p.class_distribution.assign(num_classes, (1.0 - conf) / static_cast<double>(num_classes - 1));
          p.class_distribution[cls] = conf;
          p.feature = add_visual(det_visual_rows, det_visual_count, cls, rng, "det_visual.stkt");
          det.proposals.push_back(std::move(p));
        }
        for (std::size_t i = 0; i < proposal_class.size(); ++i) {
          for (std::size_t j = 0; j < proposal_class.size(); ++j) {
            if (i == j) continue;
            RelationshipInstance r;
            r.subject = i;
            r.object = j;
            r.track_id = static_cast<std::int64_t>(i * proposal_class.size() + j);
            r.union_feature = FeatureRef{};
            for (std::size_t k = 0; k < pair_types.size(); ++k) {
              if (rel_subject[k] == i && rel_object[k] == j) r.union_feature = union_refs[k];
            }
            if (r.union_feature.empty()) {
              r.union_feature = add_union(det_union_rows, det_union_count, {}, false, rng,
                                          "det_union.stkt");
            }
            det.relationships.push_back(std::move(r));
          }
        }
        det_video.frames.push_back(std::move(det));
      }
      video.frames.push_back(std::move(frame));
    }
    ds.videos.push_back(std::move(video));
    if (c.emit_detections) detections.videos.push_back(std::move(det_video));
  }

  if (c.with_features) {
    ds.features->put("visual.stkt", Tensor({visual_count, c.visual_dim}, std::move(visual_rows)));
    ds.features->put("union.stkt", Tensor({union_count, union_dim}, std::move(union_rows)));
    if (c.emit_detections) {
      ds.features->put("det_visual.stkt",
                       Tensor({det_visual_count, c.visual_dim}, std::move(det_visual_rows)));
      ds.features->put("det_union.stkt",
                       Tensor({det_union_count, union_dim}, std::move(det_union_rows)));
    }
  }
  validate(ds);
  if (c.emit_detections) {
    validate(detections);
    out.detections = std::move(detections);
  }
  return out;
}

// ---- JSON ---------------------------------------------------------------------------

json to_json(const SyntheticConfig& c) {
  json pairs = json::array();
  for (const auto& pd : c.pairs) {
    json blocks = json::array();
    for (const auto& t : pd.transitions) {
      json rows = json::array();
      for (std::size_t r = 0; r < t.rows(); ++r) {
        rows.push_back(std::vector<double>(t.row_span(r).begin(), t.row_span(r).end()));
      }
      blocks.push_back(std::move(rows));
    }
    json jp = {{"subject_class", pd.subject_class},
               {"object_class", pd.object_class},
               {"transitions", std::move(blocks)}};
    if (!pd.initial.empty()) jp["initial"] = pd.initial;
    pairs.push_back(std::move(jp));
  }
  return json{{"class_names", c.class_names},
              {"predicate_names", c.predicate_names},
              {"predicate_type_sizes", c.predicate_type_sizes},
              {"pairs", std::move(pairs)},
              {"videos", c.videos},
              {"frames_per_video", c.frames_per_video},
              {"relationships_per_video", c.relationships_per_video},
              {"seed", c.seed},
              {"with_features", c.with_features},
              {"visual_dim", c.visual_dim},
              {"union_channels", c.union_channels},
              {"union_grid", c.union_grid},
              {"class_signal", c.class_signal},
              {"predicate_signal", c.predicate_signal},
              {"feature_noise", c.feature_noise},
              {"occlusion_prob", c.occlusion_prob},
              {"box_step", c.box_step},
              {"emit_detections", c.emit_detections},
              {"detection_jitter", c.detection_jitter},
              {"detection_misclass", c.detection_misclass}};
}

SyntheticConfig synthetic_config_from_json(const json& j) {
  SyntheticConfig c;
  json known = to_json(c);
  known["dynamics"] = nullptr;
  reject_unknown_keys(j, known, "synthetic config");
  try {
    c.class_names = j.value("class_names", c.class_names);
    c.predicate_names = j.value("predicate_names", c.predicate_names);
    c.predicate_type_sizes = j.value("predicate_type_sizes", c.predicate_type_sizes);
    c.videos = j.value("videos", c.videos);
    c.frames_per_video = j.value("frames_per_video", c.frames_per_video);
    c.relationships_per_video = j.value("relationships_per_video", c.relationships_per_video);
    c.seed = j.value("seed", c.seed);
    c.with_features = j.value("with_features", c.with_features);
    c.visual_dim = j.value("visual_dim", c.visual_dim);
    c.union_channels = j.value("union_channels", c.union_channels);
    c.union_grid = j.value("union_grid", c.union_grid);
    c.class_signal = j.value("class_signal", c.class_signal);
    c.predicate_signal = j.value("predicate_signal", c.predicate_signal);
    c.feature_noise = j.value("feature_noise", c.feature_noise);
    c.occlusion_prob = j.value("occlusion_prob", c.occlusion_prob);
    c.box_step = j.value("box_step", c.box_step);
    c.emit_detections = j.value("emit_detections", c.emit_detections);
    c.detection_jitter = j.value("detection_jitter", c.detection_jitter);
    c.detection_misclass = j.value("detection_misclass", c.detection_misclass);
    if (j.contains("pairs")) {
      for (const auto& jp : j.at("pairs")) {
        PairDynamics pd;
        pd.subject_class = jp.at("subject_class").get<std::size_t>();
        pd.object_class = jp.at("object_class").get<std::size_t>();
        for (const auto& block : jp.at("transitions")) {
          const auto rows = block.get<std::vector<std::vector<double>>>();
          Tensor t({rows.size(), rows.empty() ? 0 : rows.front().size()});
          for (std::size_t r = 0; r < rows.size(); ++r) {
            if (rows[r].size() != t.cols()) {
              throw ConfigError("ragged transition block, row " + std::to_string(r));
            }
            std::copy(rows[r].begin(), rows[r].end(), t.row_span(r).begin());
          }
          pd.transitions.push_back(std::move(t));
        }
        if (jp.contains("initial")) pd.initial = jp.at("initial").get<std::vector<std::vector<double>>>();
        c.pairs.push_back(std::move(pd));
      }
    } else if (j.contains("dynamics")) {
      const auto& jd = j.at("dynamics");
      reject_unknown_keys(jd, {{"skew", 0}, {"stickiness", 0}, {"pair_permute", 0}, {"seed", 0}},
                          "synthetic dynamics");
      DynamicsOptions o;
      o.object_classes = c.class_names.empty() ? o.object_classes : c.class_names.size() - 1;
      o.predicate_type_sizes = c.predicate_type_sizes;
      o.skew = jd.value("skew", o.skew);
      o.stickiness = jd.value("stickiness", o.stickiness);
      o.pair_permute = jd.value("pair_permute", o.pair_permute);
      o.seed = jd.value("seed", c.seed);
      c.pairs = make_dynamics(o);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("synthetic config: ") + e.what());
  }
  return c;
}

json to_json(const GroundTruthDynamics& truth) {
  json pairs = json::array();
  for (const auto& p : truth.pairs) {
    json temporal = json::array();
    for (std::size_t r = 0; r < p.temporal.rows(); ++r) {
      temporal.push_back(std::vector<double>(p.temporal.row_span(r).begin(), p.temporal.row_span(r).end()));
    }
    pairs.push_back({{"subject_class", p.subject_class},
                     {"object_class", p.object_class},
                     {"spatial", p.spatial},
                     {"temporal", std::move(temporal)}});
  }
  return json{{"pairs", std::move(pairs)}};
}

}  // namespace stket
