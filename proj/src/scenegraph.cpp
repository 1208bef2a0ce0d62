#include "stket/scenegraph.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <tuple>

#include "json.hpp"
#include "stket/errors.hpp"

namespace stket {

using nlohmann::json;

double iou(const Box& a, const Box& b) {
  const double ix = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
  const double iy = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
  const double inter = ix * iy;
  if (inter <= 0.0) return 0.0;
  // Symmetric by construction: every term is order-independent.
  return inter / (a.area() + b.area() - inter);
}

Box union_box(const Box& a, const Box& b) {
  return Box{std::min(a.x1, b.x1), std::min(a.y1, b.y1), std::max(a.x2, b.x2),
             std::max(a.y2, b.y2)};
}

Tensor occupancy_masks(const Box& subject, const Box& object, std::size_t grid) {
  if (grid == 0) throw ContractError("occupancy grid must be at least 1x1");
  const Box u = union_box(subject, object);
  if (!(u.area() > 0.0)) throw ContractError("union box has zero area");
  Tensor masks({2, grid * grid});
  const double cw = u.width() / static_cast<double>(grid);
  const double ch = u.height() / static_cast<double>(grid);
  for (std::size_t r = 0; r < grid; ++r) {
    const double cy = u.y1 + (static_cast<double>(r) + 0.5) * ch;
    for (std::size_t c = 0; c < grid; ++c) {
      const double cx = u.x1 + (static_cast<double>(c) + 0.5) * cw;
      const auto inside = [&](const Box& b) {
        return cx >= b.x1 && cx < b.x2 && cy >= b.y1 && cy < b.y2 ? 1.0 : 0.0;
      };
      masks.at(0, r * grid + c) = inside(subject);
      masks.at(1, r * grid + c) = inside(object);
    }
  }
  return masks;
}

// ---- FeatureRef / FeatureStore ----------------------------------------------

std::string FeatureRef::str() const { return file + "#" + std::to_string(row); }

FeatureRef FeatureRef::parse(const std::string& text) {
  const auto hash = text.rfind('#');
  if (hash == std::string::npos || hash == 0 || hash + 1 == text.size()) {
    throw ParseError("malformed feature reference '" + text + "' (expected file#row)");
  }
  FeatureRef ref;
  ref.file = text.substr(0, hash);
  const std::string digits = text.substr(hash + 1);
  if (!std::all_of(digits.begin(), digits.end(), [](char ch) { return ch >= '0' && ch <= '9'; })) {
    throw ParseError("malformed feature row in '" + text + "'");
  }
  ref.row = std::stoull(digits);
  return ref;
}

FeatureStore::FeatureStore(std::filesystem::path base_dir) : base_dir_(std::move(base_dir)) {}

void FeatureStore::put(const std::string& file, Tensor table) {
  if (table.rank() != 2) throw DimensionError("feature table " + file + " must be rank 2");
  std::lock_guard lock(mutex_);
  tables_[file] = std::make_shared<const Tensor>(std::move(table));
}

std::shared_ptr<const Tensor> FeatureStore::table(const std::string& file) const {
  std::lock_guard lock(mutex_);
  auto it = tables_.find(file);
  if (it != tables_.end()) return it->second;
  const auto path = base_dir_ / file;
  if (!std::filesystem::exists(path)) throw DataError("missing feature file " + path.string());
  auto loaded = std::make_shared<const Tensor>(load_tensor(path));
  if (loaded->rank() != 2) throw DataError("feature file " + path.string() + " is not rank 2");
  tables_.emplace(file, loaded);
  return loaded;
}

std::span<const double> FeatureStore::row(const FeatureRef& ref) const {
  if (ref.empty()) throw DataError("missing feature payload");
  auto t = table(ref.file);
  if (ref.row >= t->rows()) {
    throw DataError("feature row " + ref.str() + " outside table of " + std::to_string(t->rows()) +
                    " rows");
  }
  // The cache keeps the table alive for the lifetime of the store.
  return t->row_span(ref.row);
}

std::size_t FeatureStore::width(const std::string& file) const { return table(file)->cols(); }

std::vector<std::string> FeatureStore::files() const {
  std::lock_guard lock(mutex_);
  std::vector<std::string> names;
  for (const auto& [name, t] : tables_) names.push_back(name);
  return names;
}

void FeatureStore::save(const std::vector<std::string>& files, const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  for (const auto& name : files) save_tensor(dir / name, *table(name));
}

// ---- proposals ----------------------------------------------------------------

std::size_t ObjectProposal::predicted_class() const {
  return static_cast<std::size_t>(
      std::max_element(class_distribution.begin(), class_distribution.end()) -
      class_distribution.begin());
}

double ObjectProposal::class_confidence() const {
  return *std::max_element(class_distribution.begin(), class_distribution.end());
}

// ---- validation -----------------------------------------------------------------

void validate(const Dataset& ds) {
  const std::size_t classes = ds.num_classes();
  const std::size_t predicates = ds.num_predicates();
  if (classes == 0) throw IntegrityError("dataset declares no object classes");
  if (predicates == 0) throw IntegrityError("dataset declares no predicates");
  if (!ds.predicate_type_sizes.empty()) {
    const auto total = std::accumulate(ds.predicate_type_sizes.begin(),
                                       ds.predicate_type_sizes.end(), std::size_t{0});
    if (total != predicates) {
      throw IntegrityError("predicate_type_sizes sum to " + std::to_string(total) + " but " +
                           std::to_string(predicates) + " predicates are declared");
    }
  }
  for (const auto& video : ds.videos) {
    const auto where = [&](const FrameAnnotation& f) {
      return "video " + video.video_id + " frame " + std::to_string(f.frame_index);
    };
    for (std::size_t t = 0; t < video.frames.size(); ++t) {
      const auto& frame = video.frames[t];
      if (t > 0 && frame.frame_index <= video.frames[t - 1].frame_index) {
        throw IntegrityError("video " + video.video_id + ": frame indices not strictly increasing");
      }
      for (const auto& p : frame.proposals) {
        if (!p.box.valid()) throw IntegrityError(where(frame) + ": degenerate box");
        if (p.class_distribution.size() != classes) {
          throw IntegrityError(where(frame) + ": class_distribution has " +
                               std::to_string(p.class_distribution.size()) + " entries, expected " +
                               std::to_string(classes));
        }
        double total = 0.0;
        for (double v : p.class_distribution) {
          if (!(v >= 0.0)) throw IntegrityError(where(frame) + ": negative class probability");
          total += v;
        }
        if (std::abs(total - 1.0) > 1e-6) {
          throw IntegrityError(where(frame) + ": class_distribution does not sum to 1");
        }
      }
      std::vector<std::int64_t> track_ids;
      for (const auto& r : frame.relationships) {
        if (r.track_id) track_ids.push_back(*r.track_id);
        if (r.subject >= frame.proposals.size() || r.object >= frame.proposals.size()) {
          throw IntegrityError(where(frame) + ": relationship references missing proposal");
        }
        if (r.subject == r.object) {
          throw IntegrityError(where(frame) + ": subject_index equals object_index");
        }
        auto sorted = r.predicates;
        std::sort(sorted.begin(), sorted.end());
        if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
          throw IntegrityError(where(frame) + ": repeated predicate id");
        }
        for (auto p : r.predicates) {
          if (p >= predicates) {
            throw IntegrityError(where(frame) + ": predicate id " + std::to_string(p) +
                                 " out of range");
          }
        }
      }
      std::sort(track_ids.begin(), track_ids.end());
      if (std::adjacent_find(track_ids.begin(), track_ids.end()) != track_ids.end()) {
        throw IntegrityError(where(frame) + ": duplicate track_id");
      }
    }
  }
}

// ---- JSON ---------------------------------------------------------------------

namespace {

template <typename T>
T field(const json& obj, const char* name, const std::string& context) {
  if (!obj.is_object() || !obj.contains(name)) {
    throw ParseError(context + ": missing field '" + name + "'");
  }
  try {
    return obj.at(name).get<T>();
  } catch (const json::exception& e) {
    throw ParseError(context + ": field '" + name + "' has the wrong type (" + e.what() + ")");
  }
}

Box parse_box(const json& j, const std::string& context) {
  if (!j.is_array() || j.size() != 4) throw ParseError(context + ": field 'box' must hold 4 numbers");
  try {
    return Box{j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
  } catch (const json::exception&) {
    throw ParseError(context + ": field 'box' must hold 4 numbers");
  }
}

}  // namespace

Dataset load_annotations(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open annotation file " + path.string());
  json root;
  try {
    root = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  Dataset ds;
  const std::string top = path.filename().string();
  ds.class_names = field<std::vector<std::string>>(root, "class_names", top);
  ds.predicate_names = field<std::vector<std::string>>(root, "predicate_names", top);
  if (root.contains("predicate_type_sizes")) {
    ds.predicate_type_sizes = field<std::vector<std::size_t>>(root, "predicate_type_sizes", top);
  }
  const auto videos = field<json>(root, "videos", top);
  if (!videos.is_array()) throw ParseError(top + ": field 'videos' must be an array");
  for (const auto& jv : videos) {
    VideoAnnotation video;
    video.video_id = field<std::string>(jv, "video_id", top);
    const std::string vctx = "video_id " + video.video_id;
    for (const auto& jf : field<json>(jv, "frames", vctx)) {
      FrameAnnotation frame;
      frame.frame_index = field<std::int64_t>(jf, "frame_index", vctx);
      const std::string fctx = vctx + " frame " + std::to_string(frame.frame_index);
      for (const auto& jp : field<json>(jf, "proposals", fctx)) {
        ObjectProposal p;
        p.box = parse_box(field<json>(jp, "box", fctx), fctx);
        p.class_distribution = field<std::vector<double>>(jp, "class_distribution", fctx);
        p.feature = FeatureRef::parse(field<std::string>(jp, "feature_ref", fctx));
        frame.proposals.push_back(std::move(p));
      }
      for (const auto& jr : field<json>(jf, "relationships", fctx)) {
        RelationshipInstance r;
        r.subject = field<std::size_t>(jr, "subject", fctx);
        r.object = field<std::size_t>(jr, "object", fctx);
        r.predicates = field<std::vector<std::size_t>>(jr, "predicates", fctx);
        r.union_feature = FeatureRef::parse(field<std::string>(jr, "union_feature_ref", fctx));
        if (jr.contains("track_id")) r.track_id = field<std::int64_t>(jr, "track_id", fctx);
        frame.relationships.push_back(std::move(r));
      }
      video.frames.push_back(std::move(frame));
    }
    ds.videos.push_back(std::move(video));
  }
  ds.features = std::make_shared<FeatureStore>(path.parent_path());
  validate(ds);
  return ds;
}

void save_annotations(const Dataset& ds, const std::filesystem::path& path) {
  validate(ds);
  json root;
  root["class_names"] = ds.class_names;
  root["predicate_names"] = ds.predicate_names;
  root["predicate_type_sizes"] = ds.predicate_type_sizes;
  json videos = json::array();
  for (const auto& video : ds.videos) {
    json jv;
    jv["video_id"] = video.video_id;
    json frames = json::array();
    for (const auto& frame : video.frames) {
      json jf;
      jf["frame_index"] = frame.frame_index;
      json props = json::array();
      for (const auto& p : frame.proposals) {
        props.push_back({{"box", {p.box.x1, p.box.y1, p.box.x2, p.box.y2}},
                         {"class_distribution", p.class_distribution},
                         {"feature_ref", p.feature.str()}});
      }
      json rels = json::array();
      for (const auto& r : frame.relationships) {
        json jr = {{"subject", r.subject},
                   {"object", r.object},
                   {"predicates", r.predicates},
                   {"union_feature_ref", r.union_feature.str()}};
        if (r.track_id) jr["track_id"] = *r.track_id;
        rels.push_back(std::move(jr));
      }
      jf["proposals"] = std::move(props);
      jf["relationships"] = std::move(rels);
      frames.push_back(std::move(jf));
    }
    jv["frames"] = std::move(frames);
    videos.push_back(std::move(jv));
  }
  root["videos"] = std::move(videos);
  const auto dir = path.parent_path().empty() ? std::filesystem::path(".") : path.parent_path();
  std::filesystem::create_directories(dir);
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << root.dump(1) << '\n';
  if (ds.features) {
    std::set<std::string> files;
    for (const auto& video : ds.videos) {
      for (const auto& frame : video.frames) {
        for (const auto& p : frame.proposals) {
          if (!p.feature.empty()) files.insert(p.feature.file);
        }
        for (const auto& r : frame.relationships) {
          if (!r.union_feature.empty()) files.insert(r.union_feature.file);
        }
      }
    }
    ds.features->save({files.begin(), files.end()}, dir);
  }
}

// ---- tracking -----------------------------------------------------------------

std::vector<std::optional<std::size_t>> track_pairs(const FrameAnnotation& prev,
                                                    const FrameAnnotation& curr) {
  struct Candidate {
    double score;
    std::size_t curr;
    std::size_t prev;
  };
  const auto object_iou = [](const ObjectProposal& a, const ObjectProposal& b) -> double {
    if (a.predicted_class() != b.predicted_class()) return -1.0;
    const double v = iou(a.box, b.box);
    return v > kTrackIouThreshold ? v : -1.0;
  };
  std::vector<Candidate> candidates;
  for (std::size_t k = 0; k < curr.relationships.size(); ++k) {
    const auto& rc = curr.relationships[k];
    for (std::size_t j = 0; j < prev.relationships.size(); ++j) {
      const auto& rp = prev.relationships[j];
      const double s = object_iou(prev.proposals[rp.subject], curr.proposals[rc.subject]);
      const double o = object_iou(prev.proposals[rp.object], curr.proposals[rc.object]);
      if (s < 0.0 || o < 0.0) continue;
      candidates.push_back({s + o, k, j});
    }
  }
  std::sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
    return std::tie(b.score, a.curr, a.prev) < std::tie(a.score, b.curr, b.prev);
  });
  std::vector<std::optional<std::size_t>> mapping(curr.relationships.size());
  std::vector<bool> taken(prev.relationships.size(), false);
  for (const auto& c : candidates) {
    if (mapping[c.curr] || taken[c.prev]) continue;
    mapping[c.curr] = c.prev;
    taken[c.prev] = true;
  }
  return mapping;
}

PairLinks link_video_pairs(const VideoAnnotation& video, bool prefer_track_ids) {
  PairLinks links(video.frames.size());
  if (video.frames.empty()) return links;
  links[0].assign(video.frames[0].relationships.size(), std::nullopt);
  for (std::size_t t = 1; t < video.frames.size(); ++t) {
    const auto& prev = video.frames[t - 1];
    const auto& curr = video.frames[t];
    const auto all_tracked = [](const FrameAnnotation& f) {
      return std::all_of(f.relationships.begin(), f.relationships.end(),
                         [](const RelationshipInstance& r) { return r.track_id.has_value(); });
    };
    if (prefer_track_ids && all_tracked(prev) && all_tracked(curr)) {
      std::map<std::int64_t, std::size_t> by_id;
      for (std::size_t j = 0; j < prev.relationships.size(); ++j) {
        by_id.emplace(*prev.relationships[j].track_id, j);
      }
      auto& row = links[t];
      row.assign(curr.relationships.size(), std::nullopt);
      for (std::size_t k = 0; k < curr.relationships.size(); ++k) {
        auto it = by_id.find(*curr.relationships[k].track_id);
        if (it != by_id.end()) row[k] = it->second;
      }
    } else {
      links[t] = track_pairs(prev, curr);
    }
  }
  return links;
}

}  // namespace stket
