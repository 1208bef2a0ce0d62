#include <fstream>
#include <random>

#include "doctest.h"
#include "stket/errors.hpp"
#include "stket/scenegraph.hpp"
#include "stket/synthetic.hpp"
#include "test_util.hpp"

using namespace stket;

namespace {

Box random_box(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> pos(0.0, 500.0);
  std::uniform_real_distribution<double> side(1.0, 150.0);
  const double x = pos(rng);
  const double y = pos(rng);
  return Box{x, y, x + side(rng), y + side(rng)};
}

ObjectProposal proposal(Box b, std::size_t cls, std::size_t classes = 3) {
  ObjectProposal p;
  p.box = b;
  p.class_distribution.assign(classes, 0.0);
  p.class_distribution[cls] = 1.0;
  return p;
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream(path) << text;
}

const char* kMinimal = R"({
  "class_names": ["person", "cup"],
  "predicate_names": ["hold", "drink"],
  "predicate_type_sizes": [2],
  "videos": [{"video_id": "v0", "frames": [{"frame_index": 0,
    "proposals": [
      {"box": [0, 0, 10, 10], "class_distribution": [1, 0], "feature_ref": "vis.stkt#0"},
      {"box": [5, 5, 20, 20], "class_distribution": [0, 1], "feature_ref": "vis.stkt#1"}],
    "relationships": [{"subject": SUBJ, "object": 1, "predicates": [0], "union_feature_ref": "uni.stkt#0"}]
  }]}]
})";

std::string minimal(int subject) {
  std::string s = kMinimal;
  s.replace(s.find("SUBJ"), 4, std::to_string(subject));
  return s;
}

void check_same(const Dataset& a, const Dataset& b) {
  REQUIRE(a.class_names == b.class_names);
  REQUIRE(a.predicate_names == b.predicate_names);
  REQUIRE(a.predicate_type_sizes == b.predicate_type_sizes);
  REQUIRE(a.videos.size() == b.videos.size());
  for (std::size_t v = 0; v < a.videos.size(); ++v) {
    const auto& va = a.videos[v];
    const auto& vb = b.videos[v];
    REQUIRE(va.video_id == vb.video_id);
    REQUIRE(va.frames.size() == vb.frames.size());
    for (std::size_t t = 0; t < va.frames.size(); ++t) {
      const auto& fa = va.frames[t];
      const auto& fb = vb.frames[t];
      REQUIRE(fa.frame_index == fb.frame_index);
      REQUIRE(fa.proposals.size() == fb.proposals.size());
      for (std::size_t i = 0; i < fa.proposals.size(); ++i) {
        CHECK(fa.proposals[i].box == fb.proposals[i].box);
        CHECK(fa.proposals[i].class_distribution == fb.proposals[i].class_distribution);
        CHECK(fa.proposals[i].feature == fb.proposals[i].feature);
        const auto ra = a.features->row(fa.proposals[i].feature);
        const auto rb = b.features->row(fb.proposals[i].feature);
        CHECK(std::equal(ra.begin(), ra.end(), rb.begin(), rb.end()));
      }
      REQUIRE(fa.relationships.size() == fb.relationships.size());
      for (std::size_t k = 0; k < fa.relationships.size(); ++k) {
        const auto& x = fa.relationships[k];
        const auto& y = fb.relationships[k];
        CHECK(x.subject == y.subject);
        CHECK(x.object == y.object);
        CHECK(x.predicates == y.predicates);
        CHECK(x.union_feature == y.union_feature);
        CHECK(x.track_id == y.track_id);
        const auto ra = a.features->row(x.union_feature);
        const auto rb = b.features->row(y.union_feature);
        CHECK(std::equal(ra.begin(), ra.end(), rb.begin(), rb.end()));
      }
    }
  }
}

SyntheticConfig small_config(std::size_t videos) {
  SyntheticConfig c;
  c.class_names = {"person", "cup", "phone", "book"};
  c.predicate_type_sizes = {3, 6, 17};
  DynamicsOptions o;
  o.skew = 1.0;
  c.pairs = make_dynamics(o);
  c.videos = videos;
  c.frames_per_video = 4;
  c.visual_dim = 16;
  c.union_channels = 4;
  c.union_grid = 2;
  return c;
}

}  // namespace

TEST_CASE("iou examples and symmetry") {
  const Box a{0, 0, 2, 2};
  CHECK(iou(a, a) == 1.0);
  CHECK(iou(a, Box{5, 5, 6, 6}) == 0.0);
  CHECK(iou(a, Box{2, 0, 4, 2}) == 0.0);
  CHECK(iou(a, Box{1, 0, 3, 2}) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

  std::mt19937_64 rng(3);
  for (int i = 0; i < 2000; ++i) {
    const Box x = random_box(rng);
    const Box y = random_box(rng);
    const double v = iou(x, y);
    CHECK(v == iou(y, x));
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("union box covers both boxes") {
  const Box u = union_box(Box{0, 1, 2, 3}, Box{1, 0, 5, 2});
  CHECK(u == Box{0, 0, 5, 3});
}

TEST_CASE("occupancy masks") {
  SUBCASE("identical boxes give identical masks") {
    const Box b{10, 10, 50, 40};
    const Tensor m = occupancy_masks(b, b, 7);
    REQUIRE(m.shape() == Shape{2, 49});
    for (std::size_t c = 0; c < 49; ++c) {
      CHECK(m.at(0, c) == m.at(1, c));
      CHECK(m.at(0, c) == 1.0);
    }
  }
  SUBCASE("disjoint boxes give disjoint masks") {
    const Tensor m = occupancy_masks(Box{0, 0, 10, 10}, Box{20, 20, 30, 30}, 7);
    double subj = 0.0;
    double obj = 0.0;
    for (std::size_t c = 0; c < 49; ++c) {
      CHECK(m.at(0, c) * m.at(1, c) == 0.0);
      subj += m.at(0, c);
      obj += m.at(1, c);
    }
    CHECK(subj > 0.0);
    CHECK(obj > 0.0);
  }
  SUBCASE("masks are binary on random boxes") {
    std::mt19937_64 rng(11);
    for (int i = 0; i < 200; ++i) {
      const Tensor m = occupancy_masks(random_box(rng), random_box(rng), 7);
      for (double v : m.data()) CHECK((v == 0.0 || v == 1.0));
    }
  }
  SUBCASE("zero-area union is a contract error") {
    CHECK_THROWS_AS(occupancy_masks(Box{1, 1, 1, 1}, Box{1, 1, 1, 1}, 7), ContractError);
  }
}

TEST_CASE("feature refs") {
  const auto r = FeatureRef::parse("feats/vis.stkt#12");
  CHECK(r.file == "feats/vis.stkt");
  CHECK(r.row == 12);
  CHECK(r.str() == "feats/vis.stkt#12");
  CHECK_THROWS_AS(FeatureRef::parse("vis.stkt"), ParseError);
  CHECK_THROWS_AS(FeatureRef::parse("vis.stkt#x"), ParseError);
}

TEST_CASE("load minimal annotation file") {
  testing::TempDir dir("sg_min");
  save_tensor(dir / "vis.stkt", Tensor({2, 3}, {1, 2, 3, 4, 5, 6}));
  save_tensor(dir / "uni.stkt", Tensor({1, 2}, {7, 8}));
  write_file(dir / "ann.json", minimal(0));
  const Dataset ds = load_annotations(dir / "ann.json");
  REQUIRE(ds.videos.size() == 1);
  REQUIRE(ds.videos[0].frames.size() == 1);
  CHECK(ds.videos[0].frames[0].proposals.size() == 2);
  CHECK(ds.videos[0].frames[0].relationships.size() == 1);
  const auto row = ds.features->row(ds.videos[0].frames[0].proposals[1].feature);
  CHECK(row[0] == 4.0);
  CHECK(row[2] == 6.0);
}

TEST_CASE("load rejects invalid annotations") {
  testing::TempDir dir("sg_bad");
  SUBCASE("subject equals object") {
    write_file(dir / "ann.json", minimal(1));
    CHECK_THROWS_AS(load_annotations(dir / "ann.json"), IntegrityError);
  }
  SUBCASE("dangling proposal index") {
    write_file(dir / "ann.json", minimal(5));
    CHECK_THROWS_AS(load_annotations(dir / "ann.json"), IntegrityError);
  }
  SUBCASE("schema violation names the field and the video") {
    std::string text = minimal(0);
    text.replace(text.find("\"predicates\""), 12, "\"predicatez\"");
    write_file(dir / "ann.json", text);
    try {
      load_annotations(dir / "ann.json");
      FAIL("expected a parse error");
    } catch (const ParseError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("predicates") != std::string::npos);
      CHECK(msg.find("v0") != std::string::npos);
    }
  }
  SUBCASE("missing feature file surfaces on access") {
    write_file(dir / "ann.json", minimal(0));
    const Dataset ds = load_annotations(dir / "ann.json");
    CHECK_THROWS_AS(ds.features->row(ds.videos[0].frames[0].proposals[0].feature), DataError);
  }
}

TEST_CASE("validate catches broken invariants") {
  auto c = small_config(1);
  Dataset ds = generate_synthetic_dataset(c).dataset;
  CHECK_NOTHROW(validate(ds));
  SUBCASE("degenerate box") {
    ds.videos[0].frames[0].proposals[0].box = Box{5, 5, 5, 9};
    CHECK_THROWS_AS(validate(ds), IntegrityError);
  }
  SUBCASE("distribution not summing to one") {
    ds.videos[0].frames[0].proposals[0].class_distribution[0] = 0.5;
    CHECK_THROWS_AS(validate(ds), IntegrityError);
  }
  SUBCASE("predicate out of range") {
    ds.videos[0].frames[0].relationships[0].predicates.push_back(26);
    CHECK_THROWS_AS(validate(ds), IntegrityError);
  }
  SUBCASE("frame indices not increasing") {
    ds.videos[0].frames[1].frame_index = ds.videos[0].frames[0].frame_index;
    CHECK_THROWS_AS(validate(ds), IntegrityError);
  }
}

TEST_CASE("save then load is the identity on a 10-video synthetic set") {
  const auto synth = generate_synthetic_dataset(small_config(10));
  testing::TempDir dir("sg_rt");
  save_annotations(synth.dataset, dir / "ann.json");
  const Dataset loaded = load_annotations(dir / "ann.json");
  check_same(synth.dataset, loaded);
  // Re-saving elsewhere must carry the lazily loaded feature tables along.
  save_annotations(loaded, dir / "again" / "ann.json");
  CHECK(testing::tree_bytes(dir / "again") ==
        [&] {
          auto all = testing::tree_bytes(dir.path());
          std::map<std::string, std::string> top;
          for (auto& [k, v] : all) {
            if (k.find('/') == std::string::npos) top[k] = v;
          }
          return top;
        }());
  check_same(synth.dataset, load_annotations(dir / "again" / "ann.json"));
}

TEST_CASE("track_pairs") {
  FrameAnnotation prev;
  prev.proposals = {proposal({0, 0, 100, 100}, 0), proposal({200, 200, 300, 300}, 1),
                    proposal({400, 0, 500, 100}, 2)};
  RelationshipInstance r01;
  r01.subject = 0;
  r01.object = 1;
  RelationshipInstance r02 = r01;
  r02.object = 2;
  prev.relationships = {r01, r02};

  SUBCASE("identical frames map to the identity") {
    const auto m = track_pairs(prev, prev);
    REQUIRE(m.size() == 2);
    CHECK(m[0] == std::optional<std::size_t>(0));
    CHECK(m[1] == std::optional<std::size_t>(1));
  }
  SUBCASE("IoU 0.5 does not match") {
    FrameAnnotation curr = prev;
    // Shifting a 100-wide box by 100/3 gives IoU (200/3) / (400/3) = 0.5.
    curr.proposals[1].box = Box{200 + 100.0 / 3.0, 200, 300 + 100.0 / 3.0, 300};
    REQUIRE(iou(curr.proposals[1].box, prev.proposals[1].box) == doctest::Approx(0.5));
    const auto m = track_pairs(prev, curr);
    CHECK_FALSE(m[0].has_value());
    CHECK(m[1] == std::optional<std::size_t>(1));
  }
  SUBCASE("class change does not match") {
    FrameAnnotation curr = prev;
    curr.proposals[1] = proposal(prev.proposals[1].box, 2);
    CHECK_FALSE(track_pairs(prev, curr)[0].has_value());
  }
  SUBCASE("highest IoU candidate wins") {
    // Two previous cups with IoU 0.85 and 0.95 against the current one.
    FrameAnnotation p2;
    const Box cup{200, 200, 300, 300};
    const auto shifted = [&](double target) {
      // Horizontal shift s of a 100x100 box: IoU = (100 - s) / (100 + s).
      const double s = 100.0 * (1.0 - target) / (1.0 + target);
      return Box{cup.x1 + s, cup.y1, cup.x2 + s, cup.y2};
    };
    p2.proposals = {proposal({0, 0, 100, 100}, 0), proposal(shifted(0.85), 1),
                    proposal(shifted(0.95), 1)};
    RelationshipInstance a = r01;
    RelationshipInstance b = r01;
    b.object = 2;
    p2.relationships = {a, b};
    FrameAnnotation curr;
    curr.proposals = {proposal({0, 0, 100, 100}, 0), proposal(cup, 1)};
    curr.relationships = {r01};
    REQUIRE(iou(p2.proposals[1].box, cup) == doctest::Approx(0.85));
    REQUIRE(iou(p2.proposals[2].box, cup) == doctest::Approx(0.95));
    const auto m = track_pairs(p2, curr);
    CHECK(m[0] == std::optional<std::size_t>(1));
  }
}

TEST_CASE("track_pairs is injective on random frames") {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 200; ++trial) {
    FrameAnnotation prev;
    FrameAnnotation curr;
    const Box base{100, 100, 200, 200};
    std::normal_distribution<double> jitter(0.0, 2.0);
    for (int i = 0; i < 6; ++i) {
      // All proposals nearly coincide, so many candidates compete.
      const Box b{base.x1 + jitter(rng), base.y1 + jitter(rng), base.x2 + jitter(rng),
                  base.y2 + jitter(rng)};
      prev.proposals.push_back(proposal(b, i % 2));
      const Box c{b.x1 + jitter(rng), b.y1 + jitter(rng), b.x2 + jitter(rng), b.y2 + jitter(rng)};
      curr.proposals.push_back(proposal(c, i % 2));
    }
    for (std::size_t s = 0; s < 6; ++s) {
      for (std::size_t o = 0; o < 6; ++o) {
        if (s == o) continue;
        RelationshipInstance r;
        r.subject = s;
        r.object = o;
        prev.relationships.push_back(r);
        curr.relationships.push_back(r);
      }
    }
    const auto m = track_pairs(prev, curr);
    std::vector<int> used(prev.relationships.size(), 0);
    for (const auto& v : m) {
      if (v) ++used[*v];
    }
    for (int u : used) CHECK(u <= 1);
    // Identical frames are always tracked to themselves.
    const auto self = track_pairs(prev, prev);
    for (std::size_t k = 0; k < self.size(); ++k) CHECK(self[k] == std::optional<std::size_t>(k));
  }
}

TEST_CASE("link_video_pairs prefers track ids") {
  auto c = small_config(1);
  const auto synth = generate_synthetic_dataset(c);
  const auto& video = synth.dataset.videos[0];
  const auto links = link_video_pairs(video, true);
  REQUIRE(links.size() == video.frames.size());
  for (std::size_t t = 1; t < links.size(); ++t) {
    for (std::size_t k = 0; k < links[t].size(); ++k) {
      REQUIRE(links[t][k].has_value());
      CHECK(video.frames[t - 1].relationships[*links[t][k]].track_id ==
            video.frames[t].relationships[k].track_id);
    }
  }
}
