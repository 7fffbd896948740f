#include <catch2/catch_amalgamated.hpp>

#include <map>
#include <set>

#include "fscil/batching.hpp"
#include "oracles.hpp"

using namespace fscil;

namespace {

// Batch with explicit labels, one source per label entry, no augmentation
// randomness needed by these tests beyond structure.
MultiViewBatch structural_batch(const std::vector<int>& labels, int m, std::uint64_t seed = 0) {
  std::vector<LabeledSample> samples(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    samples[i].label = labels[i];
    samples[i].source_id = static_cast<std::int64_t>(i);
    samples[i].features = {static_cast<double>(i), 1.0};
  }
  AugmentationConfig aug;  // empty op list: views are identical copies
  aug.seed = seed;
  return build_multiview_batch(samples, m, aug, seed);
}

}  // namespace

TEST_CASE("block layout: item (k-1)n+i is view k of source i") {
  MultiViewBatch b = structural_batch({0, 1}, 2);
  REQUIRE(b.items.size() == 4);
  CHECK(b.items[0].source_id == 0);
  CHECK(b.items[1].source_id == 1);
  CHECK(b.items[2].source_id == 0);
  CHECK(b.items[3].source_id == 1);
  CHECK(b.items[0].view_index == 1);
  CHECK(b.items[2].view_index == 2);
  CHECK(b.items[0].label == 0);
  CHECK(b.items[3].label == 1);
}

TEST_CASE("single source, three views") {
  MultiViewBatch b = structural_batch({5}, 3);
  REQUIRE(b.items.size() == 3);
  for (const auto& it : b.items) CHECK(it.source_id == 0);
}

TEST_CASE("counting: 64 sources, 3 views") {
  std::vector<int> labels(64);
  for (std::size_t i = 0; i < 64; ++i) labels[i] = static_cast<int>(i % 7);
  MultiViewBatch b = structural_batch(labels, 3);
  CHECK(b.items.size() == 192);
  std::map<std::int64_t, int> counts;
  for (const auto& it : b.items) counts[it.source_id]++;
  CHECK(counts.size() == 64);
  for (const auto& [id, n] : counts) CHECK(n == 3);
}

TEST_CASE("m < 2 is rejected") {
  std::vector<LabeledSample> samples(2);
  samples[0].features = samples[1].features = {1.0};
  AugmentationConfig aug;
  CHECK_THROWS_AS(build_multiview_batch(samples, 1, aug, 0), ConfigError);
}

TEST_CASE("anchor sets: forced small cases") {
  SECTION("n=2, m=2, labels {0,1}, anchor 0") {
    MultiViewBatch b = structural_batch({0, 1}, 2);
    AnchorSets s = anchor_sets(b, 0);
    CHECK(s.positives_aug == std::vector<std::size_t>{2});
    CHECK(s.positives_diffsrc.empty());
    CHECK(s.negatives == std::vector<std::size_t>{1, 3});
  }
  SECTION("n=3, m=3, labels {0,0,1}, anchor 0") {
    MultiViewBatch b = structural_batch({0, 0, 1}, 3);
    AnchorSets s = anchor_sets(b, 0);
    CHECK(s.positives_aug == std::vector<std::size_t>{3, 6});
    CHECK(s.positives_diffsrc == std::vector<std::size_t>{1, 4, 7});
    CHECK(s.negatives == std::vector<std::size_t>{2, 5, 8});
  }
  SECTION("all labels equal: no negatives anywhere") {
    MultiViewBatch b = structural_batch({4, 4, 4}, 2);
    for (std::size_t j = 0; j < b.items.size(); ++j) {
      CHECK(anchor_sets(b, j).negatives.empty());
    }
  }
  SECTION("out of range anchor") {
    MultiViewBatch b = structural_batch({0}, 2);
    CHECK_THROWS_AS(anchor_sets(b, 2), BoundsError);
  }
}

TEST_CASE("property: P/Q/R partition, |P| = m-1, symmetry, relabeling invariance") {
  Rng rng(4242);
  for (int trial = 0; trial < 60; ++trial) {
    std::size_t n = 1 + rng.below(8);
    int m = 2 + static_cast<int>(rng.below(3));
    std::vector<int> labels(n);
    for (auto& l : labels) l = static_cast<int>(rng.below(4));
    MultiViewBatch b = structural_batch(labels, m, 100 + trial);
    std::size_t total = b.items.size();

    std::vector<AnchorSets> sets = all_anchor_sets(b);
    for (std::size_t j = 0; j < total; ++j) {
      const AnchorSets& s = sets[j];
      CHECK(s.positives_aug.size() == static_cast<std::size_t>(m - 1));
      std::set<std::size_t> uni;
      uni.insert(j);
      uni.insert(s.positives_aug.begin(), s.positives_aug.end());
      uni.insert(s.positives_diffsrc.begin(), s.positives_diffsrc.end());
      uni.insert(s.negatives.begin(), s.negatives.end());
      CHECK(uni.size() == total);  // partition with anchor, all disjoint
      CHECK(s.positives_aug.size() + s.positives_diffsrc.size() + s.negatives.size() + 1 == total);
    }

    // symmetry of each relation
    auto contains = [](const std::vector<std::size_t>& v, std::size_t x) {
      return std::find(v.begin(), v.end(), x) != v.end();
    };
    for (std::size_t j = 0; j < total; ++j) {
      for (std::size_t q : sets[j].positives_diffsrc) CHECK(contains(sets[q].positives_diffsrc, j));
      for (std::size_t p : sets[j].positives_aug) CHECK(contains(sets[p].positives_aug, j));
      for (std::size_t r : sets[j].negatives) CHECK(contains(sets[r].negatives, j));
    }

    // consistent relabeling leaves membership unchanged
    std::map<int, int> relabel;
    for (int l : labels) {
      if (!relabel.count(l)) relabel[l] = 1000 + 7 * l;
    }
    std::vector<int> new_labels;
    for (int l : labels) new_labels.push_back(relabel[l]);
    MultiViewBatch b2 = structural_batch(new_labels, m, 100 + trial);
    std::vector<AnchorSets> sets2 = all_anchor_sets(b2);
    for (std::size_t j = 0; j < total; ++j) {
      CHECK(sets[j].positives_aug == sets2[j].positives_aug);
      CHECK(sets[j].positives_diffsrc == sets2[j].positives_diffsrc);
      CHECK(sets[j].negatives == sets2[j].negatives);
    }
  }
}

TEST_CASE("views differ under a stochastic augmentation config") {
  std::vector<LabeledSample> samples(2);
  for (std::size_t i = 0; i < 2; ++i) {
    samples[i].label = 0;
    samples[i].source_id = static_cast<std::int64_t>(i);
    samples[i].features.assign(8, 1.0);
  }
  AugmentationConfig aug;
  AugmentationOp op;
  op.kind = AugmentationOp::Kind::kGaussianNoise;
  op.sigma = 0.1;
  aug.ops = {op};
  aug.seed = 77;
  MultiViewBatch b = build_multiview_batch(samples, 3, aug, 5);
  CHECK(b.items[0].features != b.items[2].features);
  CHECK(b.items[0].features != b.items[4].features);

  MultiViewBatch b2 = build_multiview_batch(samples, 3, aug, 5);
  for (std::size_t i = 0; i < b.items.size(); ++i) CHECK(b.items[i].features == b2.items[i].features);
}
