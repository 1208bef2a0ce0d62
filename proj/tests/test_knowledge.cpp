#include <algorithm>
#include <cmath>
#include <map>
#include <random>

#include "doctest.h"
#include "stket/errors.hpp"
#include "stket/knowledge.hpp"
#include "stket/synthetic.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace stket;

using namespace stket::oracle;

TEST_CASE("spatial matrix: person-cup counting") {
  const Dataset ds = person_cup({{kHold}, {kHold, kDrink}});
  const auto bank = build_spatial_matrix(ds);
  const auto e = bank.lookup(kPerson, kCup);
  CHECK(e[kHold] == 1.0);
  CHECK(e[kDrink] == 0.5);
  CHECK(e[2] == 0.0);
  CHECK(bank.find({kPerson, kCup})->pair_count == 2);
  CHECK(bank.find({kCup, kPerson}) == nullptr);
  CHECK(bank.lookup(kCup, kPerson) == std::vector<double>(3, 0.0));
}

TEST_CASE("spatial matrix on an empty dataset is empty") {
  Dataset ds;
  ds.class_names = {"a", "b"};
  ds.predicate_names = {"x"};
  const auto bank = build_spatial_matrix(ds);
  CHECK(bank.entries().empty());
}

TEST_CASE("both banks equal brute-force counting on 1000 random frames") {
  const Dataset ds = random_dataset(100, 10, 17);
  CHECK(compare_spatial(build_spatial_matrix(ds), ds) == "");
  CHECK(compare_temporal(build_temporal_matrix(ds), ds) == "");
  const auto brute = brute_temporal(ds);
  CHECK(brute.source.size() > 5);
}

TEST_CASE("temporal matrix: hold then drink") {
  const Dataset ds = person_cup({{kHold}, {kDrink}});
  const auto bank = build_temporal_matrix(ds);
  const Tensor m = bank.matrix(kPerson, kCup);
  for (std::size_t x = 0; x < 3; ++x) {
    for (std::size_t y = 0; y < 3; ++y) {
      CHECK(m.at(x, y) == (x == kHold && y == kDrink ? 1.0 : 0.0));
    }
  }
  // Predicates never seen at t-1 keep an all-zero row.
  CHECK(bank.find({kPerson, kCup})->source_counts == std::vector<std::uint64_t>{1, 0, 0});
  CHECK(bank.matrix(kCup, kPerson) == Tensor({3, 3}));
}

TEST_CASE("temporal matrix uses box tracking without track ids") {
  Dataset ds = person_cup({{kHold}, {kDrink}, {kDrink}});
  for (auto& f : ds.videos[0].frames) f.relationships[0].track_id.reset();
  const auto bank = build_temporal_matrix(ds);
  const Tensor m = bank.matrix(kPerson, kCup);
  CHECK(m.at(kHold, kDrink) == 1.0);
  CHECK(m.at(kDrink, kDrink) == 1.0);
}

TEST_CASE("bank invariants on random data") {
  const Dataset ds = random_dataset(60, 8, 99);
  const auto spatial = build_spatial_matrix(ds);
  const auto temporal = build_temporal_matrix(ds);
  for (const auto& [key, e] : spatial.entries()) {
    for (std::size_t p = 0; p < 5; ++p) {
      CHECK(e.predicate_counts[p] <= e.pair_count);
      const double v = e.probabilities[p];
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
      const double recovered = v * static_cast<double>(e.pair_count);
      CHECK(std::abs(recovered - std::round(recovered)) < 1e-9);
    }
  }
  for (const auto& [key, e] : temporal.entries()) {
    for (std::size_t x = 0; x < 5; ++x) {
      for (std::size_t y = 0; y < 5; ++y) {
        CHECK(e.transition_counts[x * 5 + y] <= e.source_counts[x]);
        CHECK(e.probabilities.at(x, y) >= 0.0);
        CHECK(e.probabilities.at(x, y) <= 1.0);
      }
    }
  }
}

TEST_CASE("banks do not depend on video order or thread count") {
  const Dataset ds = random_dataset(40, 6, 7);
  Dataset shuffled = ds;
  std::mt19937_64 rng(1);
  std::shuffle(shuffled.videos.begin(), shuffled.videos.end(), rng);
  CHECK(build_spatial_matrix(ds) == build_spatial_matrix(shuffled));
  CHECK(build_temporal_matrix(ds) == build_temporal_matrix(shuffled));
  CHECK(build_spatial_matrix(ds, 1) == build_spatial_matrix(ds, 4));
  CHECK(build_temporal_matrix(ds, true, 1) == build_temporal_matrix(ds, true, 3));
}

TEST_CASE("adding a video never decreases a raw count") {
  Dataset ds = random_dataset(30, 6, 3);
  const auto extra = random_dataset(1, 6, 4);
  auto before_s = build_spatial_matrix(ds);
  auto before_t = build_temporal_matrix(ds);
  ds.videos.push_back(extra.videos[0]);
  const auto after_s = build_spatial_matrix(ds);
  const auto after_t = build_temporal_matrix(ds);
  for (const auto& [key, e] : before_s.entries()) {
    const auto* a = after_s.find(key);
    REQUIRE(a != nullptr);
    CHECK(a->pair_count >= e.pair_count);
    for (std::size_t p = 0; p < 5; ++p) CHECK(a->predicate_counts[p] >= e.predicate_counts[p]);
  }
  for (const auto& [key, e] : before_t.entries()) {
    const auto* a = after_t.find(key);
    REQUIRE(a != nullptr);
    for (std::size_t i = 0; i < 25; ++i) CHECK(a->transition_counts[i] >= e.transition_counts[i]);
    for (std::size_t x = 0; x < 5; ++x) CHECK(a->source_counts[x] >= e.source_counts[x]);
  }
}

TEST_CASE("temporal matrix recovers 50k synthetic transitions") {
  const auto c = recovery_config(50000, 0);
  const auto synth = generate_synthetic_dataset(c);
  CHECK(linf_temporal(build_temporal_matrix(synth.dataset), synth.truth) <= 0.02);
  CHECK(linf_spatial(build_spatial_matrix(synth.dataset), synth.truth) <= 0.02);
}

TEST_CASE("temporal estimates tighten from 5k to 50k transitions") {
  double small = 0.0;
  double large = 0.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto a = generate_synthetic_dataset(recovery_config(5000, seed));
    const auto b = generate_synthetic_dataset(recovery_config(50000, seed));
    small += linf_temporal(build_temporal_matrix(a.dataset), a.truth);
    large += linf_temporal(build_temporal_matrix(b.dataset), b.truth);
  }
  CHECK(large <= small);
}

TEST_CASE("min pair count drops rare pairs from both banks") {
  const Dataset ds = random_dataset(20, 5, 8);
  const auto all = build_knowledge(ds, 1);
  std::uint64_t threshold = 0;
  for (const auto& [key, e] : all.spatial.entries()) threshold = std::max(threshold, e.pair_count);
  const auto few = build_knowledge(ds, threshold);
  REQUIRE(!few.spatial.entries().empty());
  for (const auto& [key, e] : few.spatial.entries()) CHECK(e.pair_count >= threshold);
  for (const auto& [key, e] : few.temporal.entries()) CHECK(few.spatial.find(key) != nullptr);
  CHECK(few.spatial.entries().size() < all.spatial.entries().size());
}

TEST_CASE("knowledge save and load round trip") {
  const Dataset ds = random_dataset(20, 5, 12);
  const auto banks = build_knowledge(ds);
  testing::TempDir dir("kn_rt");
  save_knowledge(banks, dir.path());
  const auto back = load_knowledge(dir.path());
  CHECK(back.spatial == banks.spatial);
  CHECK(back.temporal == banks.temporal);
  CHECK_THROWS_AS(load_knowledge(dir / "missing"), DataError);
}

TEST_CASE("transition entropy") {
  // hold -> drink always: zero bits. drink -> {drink, look} evenly: one bit.
  Dataset ds = person_cup({{kHold}, {kDrink}, {kDrink}, {2}});
  const auto bank = build_temporal_matrix(ds);
  const auto rows = transition_entropy(bank);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].predicate == kHold);
  CHECK(rows[0].entropy_bits == 0.0);
  CHECK(rows[1].predicate == kDrink);
  CHECK(rows[1].source_count == 2);
  CHECK(rows[1].entropy_bits == doctest::Approx(1.0).epsilon(1e-15));
}
