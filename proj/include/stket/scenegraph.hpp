#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "stket/tensor.hpp"

namespace stket {

// Pixel box, corners (x1, y1) top-left and (x2, y2) bottom-right.
struct Box {
  double x1 = 0.0;
  double y1 = 0.0;
  double x2 = 0.0;
  double y2 = 0.0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }
  bool valid() const { return x1 < x2 && y1 < y2; }

  friend bool operator==(const Box&, const Box&) = default;
};

double iou(const Box& a, const Box& b);
Box union_box(const Box& a, const Box& b);

// Two binary grid x grid occupancy masks (subject row 0, object row 1) laid
// out over the union box; a cell is occupied when its centre falls inside the
// half-open box. Returns a [2 x grid*grid] tensor.
Tensor occupancy_masks(const Box& subject, const Box& object, std::size_t grid);

// "file#row": a row of a rank-2 tensor file next to the annotation JSON.
struct FeatureRef {
  std::string file;
  std::size_t row = 0;

  std::string str() const;
  static FeatureRef parse(const std::string& text);
  bool empty() const { return file.empty(); }
  friend bool operator==(const FeatureRef&, const FeatureRef&) = default;
};

// Resolves feature refs. Files are read on first access and cached; in-memory
// tables (from the synthetic generator) can be registered directly.
class FeatureStore {
 public:
  explicit FeatureStore(std::filesystem::path base_dir = {});

  void put(const std::string& file, Tensor table);
  std::span<const double> row(const FeatureRef& ref) const;
  std::size_t width(const std::string& file) const;
  std::vector<std::string> files() const;
  // Writes the named tables into `dir`, reading any not yet loaded.
  void save(const std::vector<std::string>& files, const std::filesystem::path& dir) const;

 private:
  std::shared_ptr<const Tensor> table(const std::string& file) const;

  std::filesystem::path base_dir_;
  mutable std::mutex mutex_;
  mutable std::map<std::string, std::shared_ptr<const Tensor>> tables_;
};

struct ObjectProposal {
  Box box;
  std::vector<double> class_distribution;
  FeatureRef feature;

  std::size_t predicted_class() const;
  double class_confidence() const;
};

struct RelationshipInstance {
  std::size_t subject = 0;
  std::size_t object = 0;
  std::vector<std::size_t> predicates;
  FeatureRef union_feature;
  std::optional<std::int64_t> track_id;
};

struct FrameAnnotation {
  std::int64_t frame_index = 0;
  std::vector<ObjectProposal> proposals;
  std::vector<RelationshipInstance> relationships;
};

struct VideoAnnotation {
  std::string video_id;
  std::vector<FrameAnnotation> frames;
};

struct Dataset {
  std::vector<std::string> class_names;
  std::vector<std::string> predicate_names;
  std::vector<std::size_t> predicate_type_sizes;
  std::vector<VideoAnnotation> videos;
  std::shared_ptr<FeatureStore> features;

  std::size_t num_classes() const { return class_names.size(); }
  std::size_t num_predicates() const { return predicate_names.size(); }
};

// Checks every type invariant; throws IntegrityError or ParseError.
void validate(const Dataset& dataset);

Dataset load_annotations(const std::filesystem::path& path);
// Writes the JSON to `path` and all feature tables next to it.
void save_annotations(const Dataset& dataset, const std::filesystem::path& path);

// Maps each relationship of `curr` to the relationship of `prev` describing
// the same subject-object pair, or nullopt. Both endpoints must keep their
// predicted class and overlap their previous box with IoU above 0.8;
// candidates are ranked by summed IoU and the mapping is injective.
inline constexpr double kTrackIouThreshold = 0.8;
std::vector<std::optional<std::size_t>> track_pairs(const FrameAnnotation& prev,
                                                    const FrameAnnotation& curr);

// Predecessor links for every frame of a video: links[t][k] is the index of
// relationship k's pair in frame t-1. Ground-truth track ids win when both
// frames carry them; otherwise track_pairs decides.
using PairLinks = std::vector<std::vector<std::optional<std::size_t>>>;
PairLinks link_video_pairs(const VideoAnnotation& video, bool prefer_track_ids = true);

}  // namespace stket
