#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fscil/data.hpp"
#include "fscil/error.hpp"
#include "fscil/tensor.hpp"

namespace fscil {

struct BatchItem {
  std::vector<double> features;
  int label = 0;
  std::int64_t source_id = 0;
  int view_index = 0;  // 1..m
};

// m augmented views of n source samples in block layout: item (k-1)*n + i is
// view k of source i.
struct MultiViewBatch {
  std::vector<BatchItem> items;
  int views = 0;
  std::size_t sources = 0;

  std::size_t size() const { return items.size(); }

  Tensor feature_matrix() const {
    if (items.empty()) throw CapacityError("feature_matrix on empty batch");
    std::size_t d = items[0].features.size();
    Tensor m({items.size(), d});
    for (std::size_t i = 0; i < items.size(); ++i) {
      for (std::size_t j = 0; j < d; ++j) m.at(i, j) = items[i].features[j];
    }
    return m;
  }

  std::vector<int> labels() const {
    std::vector<int> out;
    out.reserve(items.size());
    for (const auto& it : items) out.push_back(it.label);
    return out;
  }
};

// Index sets around one anchor: same-source views (positives_aug), same
// label from other sources (positives_diffsrc), different label (negatives).
// Together with the anchor they partition the batch.
struct AnchorSets {
  std::size_t anchor = 0;
  std::vector<std::size_t> positives_aug;
  std::vector<std::size_t> positives_diffsrc;
  std::vector<std::size_t> negatives;
};

inline MultiViewBatch build_multiview_batch(std::span<const LabeledSample> samples, int m,
                                            const AugmentationConfig& aug, std::uint64_t draw_seed,
                                            const std::optional<GridShape>& grid = std::nullopt) {
  if (m < 2) throw ConfigError("multi-view batch needs m >= 2 views");
  if (samples.empty()) throw CapacityError("multi-view batch needs at least one sample");
  MultiViewBatch batch;
  batch.views = m;
  batch.sources = samples.size();
  batch.items.reserve(samples.size() * static_cast<std::size_t>(m));
  for (int k = 0; k < m; ++k) {
    for (const auto& s : samples) {
      BatchItem item;
      item.features = augment(s, aug, draw_seed * static_cast<std::uint64_t>(m) + static_cast<std::uint64_t>(k), grid);
      item.label = s.label;
      item.source_id = s.source_id;
      item.view_index = k + 1;
      batch.items.push_back(std::move(item));
    }
  }
  return batch;
}

inline AnchorSets anchor_sets(const MultiViewBatch& batch, std::size_t j) {
  if (j >= batch.items.size()) throw BoundsError("anchor index out of range");
  AnchorSets sets;
  sets.anchor = j;
  const auto& a = batch.items[j];
  for (std::size_t i = 0; i < batch.items.size(); ++i) {
    if (i == j) continue;
    const auto& it = batch.items[i];
    if (it.source_id == a.source_id) {
      sets.positives_aug.push_back(i);
    } else if (it.label == a.label) {
      sets.positives_diffsrc.push_back(i);
    } else {
      sets.negatives.push_back(i);
    }
  }
  return sets;
}

inline std::vector<AnchorSets> all_anchor_sets(const MultiViewBatch& batch) {
  std::vector<AnchorSets> out;
  out.reserve(batch.items.size());
  for (std::size_t j = 0; j < batch.items.size(); ++j) out.push_back(anchor_sets(batch, j));
  return out;
}

}  // namespace fscil
