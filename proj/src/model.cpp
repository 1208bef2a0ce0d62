#include "stket/model.hpp"

#include <algorithm>
#include <map>
#include <numeric>

#include "stket/errors.hpp"
#include "stket/json_keys.hpp"

namespace stket {

using nlohmann::json;

Task parse_task(const std::string& text) {
  if (text == "predcls") return Task::kPredCls;
  if (text == "sgcls") return Task::kSGCls;
  if (text == "sggen") return Task::kSGGen;
  throw ConfigError("unknown task '" + text + "' (expected predcls, sgcls or sggen)");
}

std::string to_string(Task task) {
  switch (task) {
    case Task::kPredCls: return "predcls";
    case Task::kSGCls: return "sgcls";
    case Task::kSGGen: return "sggen";
  }
  return "predcls";
}

void ModelConfig::validate() const {
  const auto fail = [](const std::string& msg) { throw ConfigError("model config: " + msg); };
  if (d != 2 * object_proj + union_proj + 2 * semantic_dim) {
    fail("d = " + std::to_string(d) + " must equal 2*object_proj + union_proj + 2*semantic_dim = " +
         std::to_string(2 * object_proj + union_proj + 2 * semantic_dim));
  }
  if (heads == 0 || d % heads != 0) fail("d must be divisible by heads");
  if (window == 0) fail("window must be at least 1");
  if (spatial_layers == 0 || temporal_layers == 0) fail("layer counts must be at least 1");
  if (dropout < 0.0 || dropout >= 1.0) fail("dropout must lie in [0, 1)");
  if (num_predicates == 0 || num_classes == 0) fail("predicate and class counts must be positive");
  if (visual_dim == 0 || union_channels == 0 || union_grid == 0 || ffn_width == 0) {
    fail("feature and layer widths must be positive");
  }
  if (classifier_mode == ClassifierMode::kThreeHead &&
      std::accumulate(predicate_type_sizes.begin(), predicate_type_sizes.end(), std::size_t{0}) !=
          num_predicates) {
    fail("predicate_type_sizes must sum to num_predicates in three-head mode");
  }
}

json to_json(const ModelConfig& c) {
  return json{{"visual_dim", c.visual_dim},
              {"union_channels", c.union_channels},
              {"union_grid", c.union_grid},
              {"object_proj", c.object_proj},
              {"union_proj", c.union_proj},
              {"semantic_dim", c.semantic_dim},
              {"d", c.d},
              {"heads", c.heads},
              {"ffn_width", c.ffn_width},
              {"dropout", c.dropout},
              {"spatial_layers", c.spatial_layers},
              {"temporal_layers", c.temporal_layers},
              {"window", c.window},
              {"num_predicates", c.num_predicates},
              {"num_classes", c.num_classes},
              {"predicate_type_sizes", c.predicate_type_sizes},
              {"knowledge_hidden", c.knowledge_hidden},
              {"classifier_mode",
               c.classifier_mode == ClassifierMode::kThreeHead ? "three-head" : "single-head"},
              {"tkel_first_frame", c.tkel_first_frame == FirstFrameMode::kSolo ? "solo" : "duplicate"},
              {"temporal_row_mode", to_string(c.temporal_row_mode)},
              {"causal_tkel", c.causal_tkel},
              {"use_knowledge", c.use_knowledge}};
}

ModelConfig model_config_from_json(const json& j, ModelConfig c) {
  reject_unknown_keys(j, to_json(ModelConfig{}), "model config");
  try {
    c.visual_dim = j.value("visual_dim", c.visual_dim);
    c.union_channels = j.value("union_channels", c.union_channels);
    c.union_grid = j.value("union_grid", c.union_grid);
    c.object_proj = j.value("object_proj", c.object_proj);
    c.union_proj = j.value("union_proj", c.union_proj);
    c.semantic_dim = j.value("semantic_dim", c.semantic_dim);
    c.d = j.value("d", c.d);
    c.heads = j.value("heads", c.heads);
    c.ffn_width = j.value("ffn_width", c.ffn_width);
    c.dropout = j.value("dropout", c.dropout);
    c.spatial_layers = j.value("spatial_layers", c.spatial_layers);
    c.temporal_layers = j.value("temporal_layers", c.temporal_layers);
    c.window = j.value("window", c.window);
    c.num_predicates = j.value("num_predicates", c.num_predicates);
    c.num_classes = j.value("num_classes", c.num_classes);
    c.predicate_type_sizes = j.value("predicate_type_sizes", c.predicate_type_sizes);
    c.knowledge_hidden = j.value("knowledge_hidden", c.knowledge_hidden);
    if (j.contains("classifier_mode")) {
      const auto m = j.at("classifier_mode").get<std::string>();
      if (m == "three-head") {
        c.classifier_mode = ClassifierMode::kThreeHead;
      } else if (m == "single-head") {
        c.classifier_mode = ClassifierMode::kSingleHead;
      } else {
        throw ConfigError("unknown classifier_mode '" + m + "'");
      }
    }
    if (j.contains("tkel_first_frame")) {
      const auto m = j.at("tkel_first_frame").get<std::string>();
      if (m == "solo") {
        c.tkel_first_frame = FirstFrameMode::kSolo;
      } else if (m == "duplicate") {
        c.tkel_first_frame = FirstFrameMode::kDuplicate;
      } else {
        throw ConfigError("unknown tkel_first_frame '" + m + "'");
      }
    }
    if (j.contains("temporal_row_mode")) {
      c.temporal_row_mode = parse_temporal_row_mode(j.at("temporal_row_mode").get<std::string>());
    }
    c.causal_tkel = j.value("causal_tkel", c.causal_tkel);
    c.use_knowledge = j.value("use_knowledge", c.use_knowledge);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  return c;
}

// ---- samples ------------------------------------------------------------------

namespace {

void copy_row(std::span<const double> src, Tensor& dst, std::size_t row, const std::string& what,
              const std::string& video) {
  if (src.size() != dst.cols()) {
    throw ConfigError("video " + video + ": " + what + " has width " + std::to_string(src.size()) +
                      ", model expects " + std::to_string(dst.cols()));
  }
  std::copy(src.begin(), src.end(), dst.row_span(row).begin());
}

const FrameAnnotation* find_frame(const VideoAnnotation& video, std::int64_t index) {
  for (const auto& f : video.frames) {
    if (f.frame_index == index) return &f;
  }
  return nullptr;
}

// Predicates of the ground-truth pair best matching a detector candidate.
std::vector<std::size_t> matched_predicates(const FrameAnnotation* gt, const ObjectProposal& subj,
                                            const ObjectProposal& obj) {
  if (!gt) return {};
  double best = -1.0;
  const RelationshipInstance* hit = nullptr;
  for (const auto& r : gt->relationships) {
    const auto& gs = gt->proposals[r.subject];
    const auto& go = gt->proposals[r.object];
    if (gs.predicted_class() != subj.predicted_class() ||
        go.predicted_class() != obj.predicted_class()) {
      continue;
    }
    const double a = iou(gs.box, subj.box);
    const double b = iou(go.box, obj.box);
    if (a < 0.5 || b < 0.5) continue;
    if (a + b > best) {
      best = a + b;
      hit = &r;
    }
  }
  return hit ? hit->predicates : std::vector<std::size_t>{};
}

}  // namespace

VideoSample prepare_sample(const Dataset& inputs, const VideoAnnotation& video, Task task,
                           const ModelConfig& config, const VideoAnnotation* ground_truth) {
  if (inputs.num_classes() != config.num_classes ||
      inputs.num_predicates() != config.num_predicates) {
    throw ConfigError("dataset has " + std::to_string(inputs.num_classes()) + " classes and " +
                      std::to_string(inputs.num_predicates()) + " predicates; model expects " +
                      std::to_string(config.num_classes) + " and " +
                      std::to_string(config.num_predicates));
  }
  if (!inputs.features) throw DataError("dataset has no feature store");
  const auto links = link_video_pairs(video, true);
  const std::size_t g2 = config.union_grid * config.union_grid;
  VideoSample sample;
  sample.video_id = video.video_id;
  sample.task = task;
  std::optional<std::size_t> last_kept;
  for (std::size_t t = 0; t < video.frames.size(); ++t) {
    const auto& frame = video.frames[t];
    const std::size_t k_count = frame.relationships.size();
    if (k_count == 0) continue;
    FrameSample fs;
    fs.frame_index = frame.frame_index;
    fs.subject_visual = Tensor({k_count, config.visual_dim});
    fs.object_visual = Tensor({k_count, config.visual_dim});
    fs.union_features = Tensor({k_count, config.union_dim()});
    fs.box_masks = Tensor({k_count, 2 * g2});
    fs.subject_dist = Tensor({k_count, config.num_classes});
    fs.object_dist = Tensor({k_count, config.num_classes});
    fs.labels = Tensor({k_count, config.num_predicates});
    fs.has_previous = t > 0 && last_kept == t - 1;
    const FrameAnnotation* gt_frame =
        task == Task::kSGGen && ground_truth ? find_frame(*ground_truth, frame.frame_index) : nullptr;
    for (std::size_t k = 0; k < k_count; ++k) {
      const auto& r = frame.relationships[k];
      const auto& subj = frame.proposals[r.subject];
      const auto& obj = frame.proposals[r.object];
      fs.subject_index.push_back(r.subject);
      fs.object_index.push_back(r.object);
      copy_row(inputs.features->row(subj.feature), fs.subject_visual, k, "visual feature",
               video.video_id);
      copy_row(inputs.features->row(obj.feature), fs.object_visual, k, "visual feature",
               video.video_id);
      copy_row(inputs.features->row(r.union_feature), fs.union_features, k, "union feature",
               video.video_id);
      const Tensor masks = occupancy_masks(subj.box, obj.box, config.union_grid);
      std::copy(masks.data().begin(), masks.data().end(), fs.box_masks.row_span(k).begin());
      fs.subject_class.push_back(subj.predicted_class());
      fs.object_class.push_back(obj.predicted_class());
      if (task == Task::kSGGen) {
        copy_row(subj.class_distribution, fs.subject_dist, k, "class distribution", video.video_id);
        copy_row(obj.class_distribution, fs.object_dist, k, "class distribution", video.video_id);
        fs.subject_confidence.push_back(subj.class_confidence());
        fs.object_confidence.push_back(obj.class_confidence());
      } else {
        fs.subject_dist.at(k, fs.subject_class.back()) = 1.0;
        fs.object_dist.at(k, fs.object_class.back()) = 1.0;
        fs.subject_confidence.push_back(1.0);
        fs.object_confidence.push_back(1.0);
      }
      const auto predicates =
          task == Task::kSGGen ? matched_predicates(gt_frame, subj, obj) : r.predicates;
      for (auto p : predicates) fs.labels.at(k, p) = 1.0;
      fs.prev.push_back(fs.has_previous ? links[t][k] : std::nullopt);
    }
    sample.frames.push_back(std::move(fs));
    last_kept = t;
  }
  return sample;
}

// ---- parameters -----------------------------------------------------------------

StketModel::StketModel(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  const auto& c = config_;
  std::mt19937_64 rng(seed);
  add_linear(params_, "repr.f_s", c.visual_dim, c.object_proj, rng);
  add_linear(params_, "repr.f_o", c.visual_dim, c.object_proj, rng);
  add_linear(params_, "repr.f_u", c.union_dim(), c.union_proj, rng);
  params_.add("repr.f_box.w", xavier(2, c.union_channels, rng));
  params_.add("repr.semantic", normal_tensor({c.num_classes, c.semantic_dim}, 1.0, rng));
  add_linear(params_, "obj_cls", c.visual_dim, c.num_classes, rng);
  add_knowledge_embedder(params_, c.knowledge_shape(), rng);
  for (std::size_t l = 0; l < c.spatial_layers; ++l) {
    add_transformer_layer(params_, "skel." + std::to_string(l), c.d, c.ffn_width, rng);
  }
  for (std::size_t l = 0; l < c.temporal_layers; ++l) {
    add_transformer_layer(params_, "tkel." + std::to_string(l), c.d, c.ffn_width, rng);
  }
  params_.add("tkel.frame_enc", normal_tensor({2, c.d}, 0.1, rng));
  add_attention(params_, "sta.attn", 2 * c.d, rng);
  params_.add("sta.ln.g", Tensor({1, 2 * c.d}, 1.0));
  params_.add("sta.ln.b", Tensor({1, 2 * c.d}));
  params_.add("sta.frame_enc", normal_tensor({c.window, 2 * c.d}, 0.1, rng));
  add_linear(params_, "sta.proj", 2 * c.d, c.d, rng);
  for (const char* head : {"head.spatial", "head.temporal", "head.final"}) {
    if (c.classifier_mode == ClassifierMode::kThreeHead) {
      for (std::size_t g = 0; g < c.predicate_type_sizes.size(); ++g) {
        add_linear(params_, std::string(head) + "." + std::to_string(g), c.d,
                   c.predicate_type_sizes[g], rng);
      }
    } else {
      add_linear(params_, head, c.d, c.num_predicates, rng);
    }
  }
}

StketModel::StketModel(ModelConfig config, ParamStore params)
    : config_(std::move(config)), params_(std::move(params)) {
  config_.validate();
}

// ---- components -------------------------------------------------------------------

Var box_feature_map(Tape& tape, ParamStore& store, const ModelConfig& config,
                    std::span<const double> masks) {
  const std::size_t g2 = config.union_grid * config.union_grid;
  if (masks.size() != 2 * g2) throw DimensionError("box masks must hold 2 x grid^2 cells");
  const Var w = transpose(tape.parameter(store.get("repr.f_box.w")));  // [channels x 2]
  return matmul(w, tape.constant(Tensor({2, g2}, std::vector<double>(masks.begin(), masks.end()))));
}

Var build_representation(Tape& tape, ParamStore& store, const ModelConfig& config,
                         const FrameSample& frame, Var subject_dist, Var object_dist) {
  const std::size_t k_count = frame.size();
  const Var fs = apply_linear(tape, store, "repr.f_s", tape.constant(frame.subject_visual));
  const Var fo = apply_linear(tape, store, "repr.f_o", tape.constant(frame.object_visual));
  std::vector<Var> box_rows;
  box_rows.reserve(k_count);
  for (std::size_t k = 0; k < k_count; ++k) {
    box_rows.push_back(reshape(box_feature_map(tape, store, config, frame.box_masks.row_span(k)),
                               {1, config.union_dim()}));
  }
  const Var boxes = k_count == 1 ? box_rows.front() : concat(box_rows, 0);
  const Var fu =
      apply_linear(tape, store, "repr.f_u", add(tape.constant(frame.union_features), boxes));
  const Var table = tape.parameter(store.get("repr.semantic"));
  return concat({fs, fo, fu, matmul(subject_dist, table), matmul(object_dist, table)}, 1);
}

Var skel_forward(Tape& tape, ParamStore& store, const ModelConfig& config, Var x, Var knowledge,
                 DropoutContext& drop, std::vector<AttentionWeights>* weights) {
  for (std::size_t l = 0; l < config.spatial_layers; ++l) {
    AttentionWeights w;
    x = apply_transformer_layer(tape, store, "skel." + std::to_string(l), x, knowledge,
                                config.heads, drop, nullptr, weights ? &w : nullptr);
    if (weights) weights->push_back(std::move(w));
  }
  return x;
}

Var classify_predicates(Tape& tape, ParamStore& store, const ModelConfig& config,
                        const std::string& head, Var representation) {
  if (config.classifier_mode == ClassifierMode::kSingleHead) {
    return sigmoid(apply_linear(tape, store, head, representation));
  }
  std::vector<Var> parts;
  for (std::size_t g = 0; g < config.predicate_type_sizes.size(); ++g) {
    parts.push_back(apply_linear(tape, store, head + "." + std::to_string(g), representation));
  }
  return sigmoid(parts.size() == 1 ? parts.front() : concat(parts, 1));
}

Var tkel_window(Tape& tape, ParamStore& store, const ModelConfig& config,
                std::optional<Var> prev_rows, std::optional<Var> prev_bias, Var curr_rows,
                Var curr_bias, DropoutContext& drop, Var* window_out) {
  const Var enc = tape.parameter(store.get("tkel.frame_enc"));
  const Var e2 = gather_rows(enc, {1});
  Var x = curr_rows;
  Var bias = add_row(curr_bias, e2);
  std::size_t offset = 0;
  Tensor mask;
  if (prev_rows) {
    offset = prev_rows->rows();
    const Var e1 = gather_rows(enc, {0});
    x = concat({*prev_rows, curr_rows}, 0);
    bias = concat({add_row(*prev_bias, e1), bias}, 0);
    if (config.causal_tkel) {
      const std::size_t n = x.rows();
      mask = Tensor({n, n});
      for (std::size_t i = 0; i < offset; ++i) {
        for (std::size_t j = offset; j < n; ++j) mask.at(i, j) = kMaskedLogit;
      }
    }
  }
  for (std::size_t l = 0; l < config.temporal_layers; ++l) {
    x = apply_transformer_layer(tape, store, "tkel." + std::to_string(l), x, bias, config.heads,
                                drop, mask.empty() ? nullptr : &mask);
  }
  if (window_out) *window_out = x;
  if (offset == 0) return x;
  std::vector<std::size_t> rows(curr_rows.rows());
  std::iota(rows.begin(), rows.end(), offset);
  return gather_rows(x, rows);
}

std::vector<Var> tkel_forward(Tape& tape, ParamStore& store, const ModelConfig& config,
                              const VideoSample& sample, const std::vector<Var>& spatial,
                              const std::vector<Var>& spatial_knowledge,
                              const std::vector<Var>& temporal_knowledge, DropoutContext& drop) {
  std::vector<Var> out;
  for (std::size_t t = 0; t < sample.frames.size(); ++t) {
    if (sample.frames[t].has_previous) {
      out.push_back(tkel_window(tape, store, config, spatial[t - 1], temporal_knowledge[t - 1],
                                spatial[t], spatial_knowledge[t], drop));
    } else if (config.tkel_first_frame == FirstFrameMode::kDuplicate) {
      out.push_back(tkel_window(tape, store, config, spatial[t], temporal_knowledge[t], spatial[t],
                                spatial_knowledge[t], drop));
    } else {
      out.push_back(tkel_window(tape, store, config, std::nullopt, std::nullopt, spatial[t],
                                spatial_knowledge[t], drop));
    }
  }
  return out;
}

ChainWindow sta_window(std::size_t index, std::size_t length, std::size_t tau) {
  if (index >= length) throw ContractError("chain index outside chain");
  if (length <= tau) return {0, length};
  return {index < tau ? 0 : index - tau + 1, tau};
}

std::vector<Var> sta_forward(Tape& tape, ParamStore& store, const ModelConfig& config,
                             const VideoSample& sample, const std::vector<Var>& spatial,
                             const std::vector<Var>& temporal, DropoutContext& drop) {
  // Chains of (frame, row) linked through `prev`.
  using Element = std::pair<std::size_t, std::size_t>;
  std::vector<std::vector<Element>> chains;
  std::vector<std::vector<std::size_t>> chain_of(sample.frames.size());
  for (std::size_t t = 0; t < sample.frames.size(); ++t) {
    const auto& f = sample.frames[t];
    chain_of[t].resize(f.size());
    for (std::size_t k = 0; k < f.size(); ++k) {
      if (f.prev[k]) {
        chain_of[t][k] = chain_of[t - 1][*f.prev[k]];
      } else {
        chain_of[t][k] = chains.size();
        chains.emplace_back();
      }
      chains[chain_of[t][k]].push_back({t, k});
    }
  }

  const Var enc = tape.parameter(store.get("sta.frame_enc"));
  std::vector<std::vector<std::optional<Var>>> rows(sample.frames.size());
  for (std::size_t t = 0; t < sample.frames.size(); ++t) rows[t].resize(sample.frames[t].size());
  for (const auto& chain : chains) {
    std::map<std::size_t, Var> window_out;  // keyed by window begin
    for (std::size_t i = 0; i < chain.size(); ++i) {
      const ChainWindow w = sta_window(i, chain.size(), config.window);
      auto it = window_out.find(w.begin);
      if (it == window_out.end()) {
        std::vector<Var> parts;
        for (std::size_t j = w.begin; j < w.begin + w.length; ++j) {
          const auto [t, k] = chain[j];
          parts.push_back(concat({gather_rows(spatial[t], {k}), gather_rows(temporal[t], {k})}, 1));
        }
        const Var x = parts.size() == 1 ? parts.front() : concat(parts, 0);
        std::vector<std::size_t> positions(w.length);
        std::iota(positions.begin(), positions.end(), std::size_t{0});
        const Var bias = gather_rows(enc, positions);
        const Var attn = apply_attention(tape, store, "sta.attn", x, bias, config.heads);
        const Var h = layer_norm(add(x, drop.apply(attn)), tape.parameter(store.get("sta.ln.g")),
                                 tape.parameter(store.get("sta.ln.b")));
        it = window_out.emplace(w.begin, apply_linear(tape, store, "sta.proj", h)).first;
      }
      const auto [t, k] = chain[i];
      rows[t][k] = gather_rows(it->second, {i - w.begin});
    }
  }
  std::vector<Var> out;
  for (auto& frame_rows : rows) {
    std::vector<Var> parts;
    for (auto& r : frame_rows) parts.push_back(*r);
    out.push_back(parts.size() == 1 ? parts.front() : concat(parts, 0));
  }
  return out;
}

// ---- full model -----------------------------------------------------------------------

namespace {

Var sum_terms(Tape& tape, const std::vector<Var>& terms) {
  if (terms.empty()) return tape.constant(Tensor({1, 1}));
  Var total = terms.front();
  for (std::size_t i = 1; i < terms.size(); ++i) total = add(total, terms[i]);
  return total;
}

std::vector<std::size_t> argmax_rows(const Tensor& t) {
  std::vector<std::size_t> out(t.rows());
  for (std::size_t r = 0; r < t.rows(); ++r) {
    const auto row = t.row_span(r);
    out[r] = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

}  // namespace

VideoForward forward(Tape& tape, StketModel& model, const KnowledgeBanks& knowledge,
                     const VideoSample& sample, const ForwardOptions& options) {
  const ModelConfig& c = model.config();
  ParamStore& store = model.params();
  if (knowledge.spatial.num_predicates() != c.num_predicates ||
      knowledge.temporal.num_predicates() != c.num_predicates) {
    throw ConfigError("knowledge banks cover " + std::to_string(knowledge.spatial.num_predicates()) +
                      " predicates; model expects " + std::to_string(c.num_predicates));
  }
  DropoutContext drop = options.train ? DropoutContext(c.dropout, options.dropout_seed)
                                      : DropoutContext();
  const KnowledgeEmbedderShape kshape = c.knowledge_shape();
  const std::size_t n_frames = sample.frames.size();
  VideoForward out;
  out.frames.resize(n_frames);
  std::vector<Var> spatial(n_frames);
  std::vector<Var> s_know(n_frames);
  std::vector<Var> t_know(n_frames);
  std::vector<Var> object_terms;

  for (std::size_t t = 0; t < n_frames; ++t) {
    const FrameSample& f = sample.frames[t];
    FrameOutput& fo = out.frames[t];
    Var subj_dist = tape.constant(f.subject_dist);
    Var obj_dist = tape.constant(f.object_dist);
    std::vector<PairKey> keys(f.size());
    for (std::size_t k = 0; k < f.size(); ++k) keys[k] = {f.subject_class[k], f.object_class[k]};
    if (sample.task == Task::kSGCls) {
      const Var ls = apply_linear(tape, store, "obj_cls", tape.constant(f.subject_visual));
      const Var lo = apply_linear(tape, store, "obj_cls", tape.constant(f.object_visual));
      subj_dist = softmax_rows(ls);
      obj_dist = softmax_rows(lo);
      fo.subject_class_probs = subj_dist;
      fo.object_class_probs = obj_dist;
      object_terms.push_back(softmax_cross_entropy(ls, f.subject_class));
      object_terms.push_back(softmax_cross_entropy(lo, f.object_class));
      const auto ps = argmax_rows(subj_dist.value());
      const auto po = argmax_rows(obj_dist.value());
      for (std::size_t k = 0; k < f.size(); ++k) keys[k] = {ps[k], po[k]};
    }
    const Var x = build_representation(tape, store, c, f, subj_dist, obj_dist);
    s_know[t] = c.use_knowledge
                    ? spatial_embedding(tape, store, kshape,
                                        tape.constant(spatial_knowledge_rows(knowledge.spatial, keys)))
                    : tape.constant(Tensor({f.size(), c.d}));
    spatial[t] = skel_forward(tape, store, c, x, s_know[t], drop);
    fo.spatial = spatial[t];
    fo.spatial_probs = classify_predicates(tape, store, c, "head.spatial", spatial[t]);
    fo.spatial_knowledge = s_know[t];
    t_know[t] = c.use_knowledge
                    ? temporal_embedding(tape, store, kshape,
                                         temporal_knowledge_rows(tape, knowledge.temporal, keys,
                                                                 fo.spatial_probs,
                                                                 c.temporal_row_mode))
                    : tape.constant(Tensor({f.size(), c.d}));
    fo.temporal_knowledge = t_know[t];
  }

  const auto temporal = tkel_forward(tape, store, c, sample, spatial, s_know, t_know, drop);
  for (std::size_t t = 0; t < n_frames; ++t) {
    out.frames[t].temporal = temporal[t];
    out.frames[t].temporal_probs = classify_predicates(tape, store, c, "head.temporal", temporal[t]);
  }
  const auto final_repr = sta_forward(tape, store, c, sample, spatial, temporal, drop);
  for (std::size_t t = 0; t < n_frames; ++t) {
    out.frames[t].final_repr = final_repr[t];
    out.frames[t].final_probs = classify_predicates(tape, store, c, "head.final", final_repr[t]);
  }

  std::vector<Var> ls, lt, lc, lspk, ltpk;
  for (std::size_t t = 0; t < n_frames; ++t) {
    const auto& f = sample.frames[t];
    const auto& fo = out.frames[t];
    ls.push_back(bce_sum(fo.spatial_probs, f.labels));
    lt.push_back(bce_sum(fo.temporal_probs, f.labels));
    lc.push_back(bce_sum(fo.final_probs, f.labels));
    if (!c.use_knowledge) continue;
    lspk.push_back(spatial_knowledge_loss(tape, store, s_know[t], f.labels));
    if (t + 1 < n_frames && sample.frames[t + 1].has_previous) {
      const auto& next = sample.frames[t + 1];
      std::vector<std::optional<std::size_t>> successor(f.size());
      for (std::size_t k = 0; k < next.size(); ++k) {
        if (next.prev[k]) successor[*next.prev[k]] = k;
      }
      if (auto term = temporal_knowledge_loss(tape, store, t_know[t], successor, next.labels)) {
        ltpk.push_back(*term);
      }
    }
  }
  LossTerms& L = out.loss;
  L.spatial = sum_terms(tape, ls);
  L.temporal = sum_terms(tape, lt);
  L.final_term = sum_terms(tape, lc);
  L.spatial_knowledge = sum_terms(tape, lspk);
  L.temporal_knowledge = sum_terms(tape, ltpk);
  L.object = sum_terms(tape, object_terms);
  L.total = sum_terms(tape, {L.spatial, L.temporal, L.final_term, L.spatial_knowledge,
                             L.temporal_knowledge, L.object});
  return out;
}

}  // namespace stket
