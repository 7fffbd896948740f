#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <vector>

#include "fscil/batching.hpp"
#include "fscil/error.hpp"
#include "fscil/graph.hpp"
#include "fscil/model.hpp"
#include "fscil/rng.hpp"
#include "fscil/tensor.hpp"

namespace fscil {

struct ContrastiveConfig {
  double tau = 0.07;   // temperature
  double alpha = 1.2;  // positives-aug weight
  int views = 3;       // m

  void validate() const {
    if (!(tau > 0.0)) throw ConfigError("contrastive: tau must be positive");
    if (!(alpha > 0.0)) throw ConfigError("contrastive: alpha must be positive");
    if (views < 2) throw ConfigError("contrastive: needs m >= 2 views");
  }
};

// log [ exp(sim(h_p, h_j)/tau) / sum_{a != j} exp(sim(h_a, h_j)/tau) ],
// computed with max subtraction. Always <= 0 since p is in the sum.
inline double softmax_term(const Tensor& projections, std::size_t j, std::size_t p, double tau) {
  if (projections.rank() != 2) throw DimensionError("softmax_term: projections must be a matrix");
  std::size_t n = projections.rows();
  if (n < 2) throw DegenerateBatchError("softmax_term: need at least two items");
  if (j >= n || p >= n) throw BoundsError("softmax_term: index out of range");
  if (p == j) throw BoundsError("softmax_term: target must differ from anchor");
  if (!(tau > 0.0)) throw ConfigError("softmax_term: tau must be positive");

  Tensor hj = projections.row(j);
  std::vector<double> scaled;
  scaled.reserve(n - 1);
  double target = 0.0;
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t a = 0; a < n; ++a) {
    if (a == j) continue;
    double s = cosine_sim(projections.row(a), hj) / tau;
    if (a == p) target = s;
    scaled.push_back(s);
    if (s > mx) mx = s;
  }
  double denom = 0.0;
  for (double s : scaled) denom += std::exp(s - mx);
  return target - (mx + std::log(denom));
}

namespace detail {

// Loss = sum(W .* masked-log-softmax(S)) where S is the cosine similarity
// matrix over tau and W carries the per-anchor positive weights. Shared by
// the contrastive variants, which only differ in W.
inline Var weighted_contrastive_loss(Graph& g, Var projections, const Tensor& weights, double tau) {
  Var h = g.l2_normalize_rows(projections);
  Var sims = g.scale(g.matmul_nt(h, h), 1.0 / tau);
  std::size_t n = g.value(projections).rows();
  Tensor mask = Tensor::full({n, n}, 1.0);
  for (std::size_t i = 0; i < n; ++i) mask.at(i, i) = 0.0;
  Var terms = g.masked_log_softmax_rows(sims, mask);
  return g.sum(g.mul_const(terms, weights));
}

inline void check_projections(const Graph& g, const MultiViewBatch& batch, Var projections) {
  const Tensor& p = g.value(projections);
  if (p.rank() != 2 || p.rows() != batch.size()) {
    throw DimensionError("contrastive loss: projections must have one row per batch item");
  }
  if (batch.size() < 2) throw DegenerateBatchError("contrastive loss: batch has fewer than two items");
}

}  // namespace detail

// Balanced supervised contrastive loss: per anchor, positives-aug terms get
// weight alpha and the normalizer is alpha|P| + |Q|.
inline Var bsc_loss(Graph& g, const MultiViewBatch& batch, Var projections, const ContrastiveConfig& cfg) {
  cfg.validate();
  detail::check_projections(g, batch, projections);
  std::size_t n = batch.size();
  Tensor weights({n, n});
  double inv_batch = 1.0 / static_cast<double>(n);
  for (std::size_t j = 0; j < n; ++j) {
    AnchorSets sets = anchor_sets(batch, j);
    double denom = cfg.alpha * static_cast<double>(sets.positives_aug.size()) +
                   static_cast<double>(sets.positives_diffsrc.size());
    if (!(denom > 0.0)) {
      throw DegenerateBatchError("bsc_loss: anchor " + std::to_string(j) + " has no positives");
    }
    double base = inv_batch / denom;
    for (std::size_t p : sets.positives_aug) weights.at(j, p) = -cfg.alpha * base;
    for (std::size_t q : sets.positives_diffsrc) weights.at(j, q) = -base;
  }
  return detail::weighted_contrastive_loss(g, projections, weights, cfg.tau);
}

// SupCon is the alpha = 1 special case.
inline Var supcon_loss(Graph& g, const MultiViewBatch& batch, Var projections, double tau) {
  ContrastiveConfig cfg;
  cfg.tau = tau;
  cfg.alpha = 1.0;
  cfg.views = batch.views;
  return bsc_loss(g, batch, projections, cfg);
}

// Label-free variant: only same-source views count as positives, everything
// else (same class or not) sits in the denominator as a negative.
inline Var simclr_loss(Graph& g, const MultiViewBatch& batch, Var projections, double tau) {
  if (!(tau > 0.0)) throw ConfigError("simclr_loss: tau must be positive");
  detail::check_projections(g, batch, projections);
  std::size_t n = batch.size();
  Tensor weights({n, n});
  double inv_batch = 1.0 / static_cast<double>(n);
  for (std::size_t j = 0; j < n; ++j) {
    AnchorSets sets = anchor_sets(batch, j);
    if (sets.positives_aug.empty()) {
      throw DegenerateBatchError("simclr_loss: anchor " + std::to_string(j) + " has no augmented positives");
    }
    double base = inv_batch / static_cast<double>(sets.positives_aug.size());
    for (std::size_t p : sets.positives_aug) weights.at(j, p) = -base;
  }
  return detail::weighted_contrastive_loss(g, projections, weights, tau);
}

// Value-level wrappers for callers that only want the number.
inline double bsc_loss_value(const MultiViewBatch& batch, const Tensor& projections, const ContrastiveConfig& cfg) {
  Graph g;
  return g.value(bsc_loss(g, batch, g.constant(projections), cfg))[0];
}

inline double supcon_loss_value(const MultiViewBatch& batch, const Tensor& projections, double tau) {
  Graph g;
  return g.value(supcon_loss(g, batch, g.constant(projections), tau))[0];
}

inline double simclr_loss_value(const MultiViewBatch& batch, const Tensor& projections, double tau) {
  Graph g;
  return g.value(simclr_loss(g, batch, g.constant(projections), tau))[0];
}

// ---------------------------------------------------------------------------
// Cross-entropy
// ---------------------------------------------------------------------------

inline double cross_entropy_loss(const LogitDistribution& dist, int true_class) {
  if (dist.logits.size() != dist.class_ids.size() || dist.logits.empty()) {
    throw DimensionError("cross_entropy_loss: malformed logit distribution");
  }
  std::size_t idx = dist.class_ids.size();
  for (std::size_t i = 0; i < dist.class_ids.size(); ++i) {
    if (dist.class_ids[i] == true_class) {
      idx = i;
      break;
    }
  }
  if (idx == dist.class_ids.size()) {
    throw LabelError("cross_entropy_loss: class " + std::to_string(true_class) + " not among logits");
  }
  double mx = *std::max_element(dist.logits.begin(), dist.logits.end());
  double denom = 0.0;
  for (double v : dist.logits) denom += std::exp(v - mx);
  return mx + std::log(denom) - dist.logits[idx];
}

// Mean cross-entropy over logit rows; labels map into columns via
// col_of_class.
inline Var ce_loss_graph(Graph& g, Var logits, const std::vector<int>& labels,
                         const std::map<int, std::size_t>& col_of_class) {
  const std::vector<std::size_t> shape = g.value(logits).shape();
  if (shape.size() != 2 || shape[0] != labels.size()) {
    throw DimensionError("ce_loss_graph: need one logit row per label");
  }
  Tensor mask = Tensor::full(shape, 1.0);
  Var logsm = g.masked_log_softmax_rows(logits, mask);
  Tensor weights(shape);
  double inv = -1.0 / static_cast<double>(shape[0]);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto it = col_of_class.find(labels[i]);
    if (it == col_of_class.end()) {
      throw LabelError("ce_loss_graph: label " + std::to_string(labels[i]) + " has no classifier column");
    }
    weights.at(i, it->second) = inv;
  }
  return g.sum(g.mul_const(logsm, weights));
}

// ---------------------------------------------------------------------------
// cs-kd: KL(teacher || student), teacher rows are fixed probabilities from
// the frozen parameter copy evaluated on each anchor's paired positive.
// ---------------------------------------------------------------------------

inline Tensor softmax_rows_value(const Tensor& logits) {
  Tensor out(logits.shape());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    double mx = logits.at(i, 0);
    for (std::size_t j = 1; j < logits.cols(); ++j) mx = std::max(mx, logits.at(i, j));
    double denom = 0.0;
    for (std::size_t j = 0; j < logits.cols(); ++j) denom += std::exp(logits.at(i, j) - mx);
    for (std::size_t j = 0; j < logits.cols(); ++j) out.at(i, j) = std::exp(logits.at(i, j) - mx) / denom;
  }
  return out;
}

inline double cskd_loss(const std::vector<double>& student_logits, const std::vector<double>& teacher_logits) {
  if (student_logits.size() != teacher_logits.size() || student_logits.empty()) {
    throw DimensionError("cskd_loss: logit length mismatch");
  }
  std::size_t k = student_logits.size();
  Tensor t({1, k}, std::vector<double>(teacher_logits));
  Tensor s({1, k}, std::vector<double>(student_logits));
  Tensor tp = softmax_rows_value(t);
  // log-softmax of student
  double mx = *std::max_element(student_logits.begin(), student_logits.end());
  double denom = 0.0;
  for (double v : student_logits) denom += std::exp(v - mx);
  double lse = mx + std::log(denom);
  double kl = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    double ti = tp[i];
    if (ti > 0.0) kl += ti * (std::log(ti) - (student_logits[i] - lse));
  }
  return kl;
}

// Batch-mean KL against constant teacher probabilities. Gradients flow only
// through the student logits.
inline Var cskd_loss_graph(Graph& g, Var student_logits, const Tensor& teacher_probs) {
  if (!g.value(student_logits).same_shape(teacher_probs)) {
    throw DimensionError("cskd_loss_graph: teacher/student shape mismatch");
  }
  std::size_t n = teacher_probs.rows();
  std::size_t cols = teacher_probs.cols();
  Tensor mask = Tensor::full(teacher_probs.shape(), 1.0);
  Var logsm = g.masked_log_softmax_rows(student_logits, mask);
  Tensor weights(teacher_probs.shape());
  double inv = 1.0 / static_cast<double>(n);
  double entropy_term = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      double t = teacher_probs.at(i, j);
      weights.at(i, j) = -t * inv;
      if (t > 0.0) entropy_term += t * std::log(t) * inv;
    }
  }
  return g.add_scalar(g.sum(g.mul_const(logsm, weights)), entropy_term);
}

// Uniform draw of each anchor's paired positive from P(j).
inline std::vector<std::size_t> choose_cskd_pairs(const MultiViewBatch& batch, std::uint64_t seed) {
  std::vector<std::size_t> pairs(batch.size());
  Rng rng(combine_seed(seed, 0x70616972ULL));
  for (std::size_t j = 0; j < batch.size(); ++j) {
    AnchorSets sets = anchor_sets(batch, j);
    if (sets.positives_aug.empty()) {
      throw DegenerateBatchError("cskd pairing: anchor " + std::to_string(j) + " has no augmented positive");
    }
    pairs[j] = sets.positives_aug[rng.below(sets.positives_aug.size())];
  }
  return pairs;
}

// L_ft = L_ce + lambda * L_cs over one multi-view batch of logits.
inline Var finetune_loss_graph(Graph& g, Var student_logits, const std::vector<int>& labels,
                               const std::map<int, std::size_t>& col_of_class,
                               const std::optional<Tensor>& teacher_pair_probs, double lambda) {
  Var ce = ce_loss_graph(g, student_logits, labels, col_of_class);
  if (!teacher_pair_probs || lambda == 0.0) return ce;
  Var kd = cskd_loss_graph(g, student_logits, *teacher_pair_probs);
  return g.add(ce, g.scale(kd, lambda));
}

}  // namespace fscil
