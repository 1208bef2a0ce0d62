#include "stket/knowledge.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <thread>

#include "json.hpp"
#include "stket/errors.hpp"

namespace stket {

using nlohmann::json;

// ---- spatial ------------------------------------------------------------------

const SpatialEntry* SpatialMatrixBank::find(PairKey key) const {
  auto it = entries_.find(key);
  return it == entries_.end() ? nullptr : &it->second;
}

std::vector<double> SpatialMatrixBank::lookup(std::size_t subject, std::size_t object) const {
  const auto* e = find({subject, object});
  return e ? e->probabilities : std::vector<double>(num_predicates_, 0.0);
}

void SpatialMatrixBank::add_occurrence(PairKey key, const std::vector<std::size_t>& predicates) {
  auto& e = entries_[key];
  if (e.predicate_counts.empty()) e.predicate_counts.assign(num_predicates_, 0);
  ++e.pair_count;
  for (auto p : predicates) ++e.predicate_counts.at(p);
}

void SpatialMatrixBank::merge(const SpatialMatrixBank& other) {
  for (const auto& [key, src] : other.entries_) {
    auto& e = entries_[key];
    if (e.predicate_counts.empty()) e.predicate_counts.assign(num_predicates_, 0);
    e.pair_count += src.pair_count;
    for (std::size_t p = 0; p < num_predicates_; ++p) e.predicate_counts[p] += src.predicate_counts[p];
  }
}

void SpatialMatrixBank::finalize() {
  for (auto& [key, e] : entries_) {
    e.probabilities.assign(num_predicates_, 0.0);
    for (std::size_t p = 0; p < num_predicates_; ++p) {
      e.probabilities[p] =
          static_cast<double>(e.predicate_counts[p]) / static_cast<double>(e.pair_count);
    }
  }
}

void SpatialMatrixBank::drop_rare_pairs(std::uint64_t min_pair_count) {
  std::erase_if(entries_, [&](const auto& kv) { return kv.second.pair_count < min_pair_count; });
}

bool operator==(const SpatialMatrixBank& a, const SpatialMatrixBank& b) {
  if (a.num_predicates_ != b.num_predicates_ || a.entries_.size() != b.entries_.size()) return false;
  for (const auto& [key, ea] : a.entries_) {
    const auto* eb = b.find(key);
    if (!eb || ea.pair_count != eb->pair_count || ea.predicate_counts != eb->predicate_counts ||
        ea.probabilities != eb->probabilities) {
      return false;
    }
  }
  return true;
}

// ---- temporal -----------------------------------------------------------------

const TemporalEntry* TemporalMatrixBank::find(PairKey key) const {
  auto it = entries_.find(key);
  return it == entries_.end() ? nullptr : &it->second;
}

Tensor TemporalMatrixBank::matrix(std::size_t subject, std::size_t object) const {
  const auto* e = find({subject, object});
  return e ? e->probabilities : Tensor({num_predicates_, num_predicates_});
}

void TemporalMatrixBank::add_transition(PairKey key, const std::vector<std::size_t>& previous,
                                        const std::vector<std::size_t>& current) {
  auto& e = entries_[key];
  const std::size_t c = num_predicates_;
  if (e.source_counts.empty()) {
    e.source_counts.assign(c, 0);
    e.transition_counts.assign(c * c, 0);
  }
  for (auto x : previous) {
    ++e.source_counts.at(x);
    for (auto y : current) ++e.transition_counts.at(x * c + y);
  }
}

void TemporalMatrixBank::merge(const TemporalMatrixBank& other) {
  const std::size_t c = num_predicates_;
  for (const auto& [key, src] : other.entries_) {
    auto& e = entries_[key];
    if (e.source_counts.empty()) {
      e.source_counts.assign(c, 0);
      e.transition_counts.assign(c * c, 0);
    }
    for (std::size_t i = 0; i < c; ++i) e.source_counts[i] += src.source_counts[i];
    for (std::size_t i = 0; i < c * c; ++i) e.transition_counts[i] += src.transition_counts[i];
  }
}

void TemporalMatrixBank::finalize() {
  const std::size_t c = num_predicates_;
  for (auto& [key, e] : entries_) {
    e.probabilities = Tensor({c, c});
    for (std::size_t x = 0; x < c; ++x) {
      if (e.source_counts[x] == 0) continue;
      for (std::size_t y = 0; y < c; ++y) {
        e.probabilities.at(x, y) = static_cast<double>(e.transition_counts[x * c + y]) /
                                   static_cast<double>(e.source_counts[x]);
      }
    }
  }
}

void TemporalMatrixBank::drop_pairs_not_in(const SpatialMatrixBank& spatial) {
  std::erase_if(entries_, [&](const auto& kv) { return spatial.find(kv.first) == nullptr; });
}

bool operator==(const TemporalMatrixBank& a, const TemporalMatrixBank& b) {
  if (a.num_predicates_ != b.num_predicates_ || a.entries_.size() != b.entries_.size()) return false;
  for (const auto& [key, ea] : a.entries_) {
    const auto* eb = b.find(key);
    if (!eb || ea.source_counts != eb->source_counts ||
        ea.transition_counts != eb->transition_counts || !(ea.probabilities == eb->probabilities)) {
      return false;
    }
  }
  return true;
}

// ---- building -------------------------------------------------------------------

namespace {

PairKey key_of(const FrameAnnotation& frame, const RelationshipInstance& r) {
  return {frame.proposals[r.subject].predicted_class(), frame.proposals[r.object].predicted_class()};
}

// Runs `count(video, partial)` over contiguous video chunks and merges the
// partials in chunk order.
template <typename Bank, typename Fn>
Bank parallel_count(const Dataset& ds, std::size_t jobs, Fn count) {
  const std::size_t n = ds.videos.size();
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  std::vector<Bank> partials(jobs, Bank(ds.num_predicates()));
  const auto work = [&](std::size_t j) {
    for (std::size_t v = j * n / jobs; v < (j + 1) * n / jobs; ++v) count(ds.videos[v], partials[j]);
  };
  if (jobs == 1) {
    work(0);
  } else {
    std::vector<std::thread> threads;
    for (std::size_t j = 0; j < jobs; ++j) threads.emplace_back(work, j);
    for (auto& t : threads) t.join();
  }
  Bank out(ds.num_predicates());
  for (const auto& p : partials) out.merge(p);
  out.finalize();
  return out;
}

}  // namespace

SpatialMatrixBank build_spatial_matrix(const Dataset& ds, std::size_t jobs) {
  return parallel_count<SpatialMatrixBank>(ds, jobs, [](const VideoAnnotation& video,
                                                        SpatialMatrixBank& bank) {
    for (const auto& frame : video.frames) {
      for (const auto& r : frame.relationships) bank.add_occurrence(key_of(frame, r), r.predicates);
    }
  });
}

TemporalMatrixBank build_temporal_matrix(const Dataset& ds, bool prefer_track_ids,
                                         std::size_t jobs) {
  return parallel_count<TemporalMatrixBank>(
      ds, jobs, [prefer_track_ids](const VideoAnnotation& video, TemporalMatrixBank& bank) {
        const auto links = link_video_pairs(video, prefer_track_ids);
        for (std::size_t t = 1; t < video.frames.size(); ++t) {
          const auto& prev = video.frames[t - 1];
          const auto& curr = video.frames[t];
          for (std::size_t k = 0; k < curr.relationships.size(); ++k) {
            if (!links[t][k]) continue;
            const auto& before = prev.relationships[*links[t][k]];
            bank.add_transition(key_of(prev, before), before.predicates,
                                curr.relationships[k].predicates);
          }
        }
      });
}

KnowledgeBanks build_knowledge(const Dataset& ds, std::uint64_t min_pair_count, std::size_t jobs) {
  KnowledgeBanks banks{build_spatial_matrix(ds, jobs), build_temporal_matrix(ds, true, jobs)};
  if (min_pair_count > 1) {
    banks.spatial.drop_rare_pairs(min_pair_count);
    banks.temporal.drop_pairs_not_in(banks.spatial);
  }
  return banks;
}

// ---- persistence ------------------------------------------------------------------

namespace {

std::string pair_stem(PairKey k) {
  return std::to_string(k.subject) + "_" + std::to_string(k.object);
}

}  // namespace

void save_knowledge(const KnowledgeBanks& banks, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const std::size_t c = banks.spatial.num_predicates();
  json pairs = json::array();
  for (const auto& [key, e] : banks.spatial.entries()) {
    const std::string stem = pair_stem(key);
    json jp = {{"subject", key.subject},
               {"object", key.object},
               {"pair_count", e.pair_count},
               {"predicate_counts", e.predicate_counts},
               {"spatial", "spatial_" + stem + ".stkt"}};
    save_tensor(dir / ("spatial_" + stem + ".stkt"), Tensor({c}, e.probabilities));
    if (const auto* te = banks.temporal.find(key)) {
      jp["source_counts"] = te->source_counts;
      jp["transition_counts"] = te->transition_counts;
      jp["temporal"] = "temporal_" + stem + ".stkt";
      save_tensor(dir / ("temporal_" + stem + ".stkt"), te->probabilities);
    }
    pairs.push_back(std::move(jp));
  }
  // Temporal-only pairs cannot arise from build_knowledge, but keep the
  // format total.
  for (const auto& [key, te] : banks.temporal.entries()) {
    if (banks.spatial.find(key)) continue;
    const std::string stem = pair_stem(key);
    pairs.push_back({{"subject", key.subject},
                     {"object", key.object},
                     {"source_counts", te.source_counts},
                     {"transition_counts", te.transition_counts},
                     {"temporal", "temporal_" + stem + ".stkt"}});
    save_tensor(dir / ("temporal_" + stem + ".stkt"), te.probabilities);
  }
  json root = {{"version", 1}, {"num_predicates", c}, {"pairs", std::move(pairs)}};
  std::ofstream out(dir / "knowledge.json", std::ios::trunc);
  if (!out) throw DataError("cannot write " + (dir / "knowledge.json").string());
  out << root.dump(1) << '\n';
}

KnowledgeBanks load_knowledge(const std::filesystem::path& dir) {
  std::ifstream in(dir / "knowledge.json");
  if (!in) throw DataError("cannot open " + (dir / "knowledge.json").string());
  json root;
  try {
    root = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError("knowledge.json: " + std::string(e.what()));
  }
  try {
    if (root.at("version").get<int>() != 1) throw DataError("unsupported knowledge version");
    const auto c = root.at("num_predicates").get<std::size_t>();
    SpatialMatrixBank spatial(c);
    TemporalMatrixBank temporal(c);
    for (const auto& jp : root.at("pairs")) {
      const PairKey key{jp.at("subject").get<std::size_t>(), jp.at("object").get<std::size_t>()};
      if (jp.contains("spatial")) {
        SpatialEntry e;
        e.pair_count = jp.at("pair_count").get<std::uint64_t>();
        e.predicate_counts = jp.at("predicate_counts").get<std::vector<std::uint64_t>>();
        const Tensor probs = load_tensor(dir / jp.at("spatial").get<std::string>());
        if (e.predicate_counts.size() != c || probs.size() != c) {
          throw DataError("knowledge: spatial entry has inconsistent sizes");
        }
        e.probabilities.assign(probs.data().begin(), probs.data().end());
        spatial.set_entry(key, std::move(e));
      }
      if (jp.contains("temporal")) {
        TemporalEntry e;
        e.source_counts = jp.at("source_counts").get<std::vector<std::uint64_t>>();
        e.transition_counts = jp.at("transition_counts").get<std::vector<std::uint64_t>>();
        e.probabilities = load_tensor(dir / jp.at("temporal").get<std::string>());
        if (e.source_counts.size() != c || e.transition_counts.size() != c * c ||
            e.probabilities.shape() != Shape{c, c}) {
          throw DataError("knowledge: temporal entry has inconsistent sizes");
        }
        temporal.set_entry(key, std::move(e));
      }
    }
    return {std::move(spatial), std::move(temporal)};
  } catch (const json::exception& e) {
    throw ParseError("knowledge.json: " + std::string(e.what()));
  }
}

std::vector<EntropyRow> transition_entropy(const TemporalMatrixBank& bank) {
  std::vector<EntropyRow> rows;
  const std::size_t c = bank.num_predicates();
  for (const auto& [key, e] : bank.entries()) {
    for (std::size_t x = 0; x < c; ++x) {
      if (e.source_counts[x] == 0) continue;
      double total = 0.0;
      for (std::size_t y = 0; y < c; ++y) total += e.probabilities.at(x, y);
      double h = 0.0;
      for (std::size_t y = 0; y < c; ++y) {
        const double p = e.probabilities.at(x, y) / total;
        if (p > 0.0) h -= p * std::log2(p);
      }
      rows.push_back({key, x, e.source_counts[x], h});
    }
  }
  return rows;
}

}  // namespace stket
