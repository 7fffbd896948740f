// Independent reference computations for the test suites. Everything here
// is written the naive way on purpose: plain loops, no shared code with the
// library's loss or gradient paths.
#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "fscil/batching.hpp"
#include "fscil/rng.hpp"
#include "fscil/tensor.hpp"

namespace oracles {

inline double rel_err(double a, double b) {
  double denom = std::max({std::fabs(a), std::fabs(b), 1e-8});
  return std::fabs(a - b) / denom;
}

// Central-difference gradient of f at x, one coordinate at a time.
inline fscil::Tensor fd_grad(const std::function<double(const fscil::Tensor&)>& f, const fscil::Tensor& x,
                             double eps = 1e-5) {
  fscil::Tensor g(x.shape());
  fscil::Tensor probe = x;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    double saved = probe[i];
    probe[i] = saved + eps;
    double up = f(probe);
    probe[i] = saved - eps;
    double down = f(probe);
    probe[i] = saved;
    g[i] = (up - down) / (2.0 * eps);
  }
  return g;
}

inline double max_rel_err(const fscil::Tensor& a, const fscil::Tensor& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) worst = std::max(worst, rel_err(a[i], b[i]));
  return worst;
}

inline double cosine(const std::vector<double>& u, const std::vector<double>& v) {
  double uv = 0.0, uu = 0.0, vv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    uv += u[i] * v[i];
    uu += u[i] * u[i];
    vv += v[i] * v[i];
  }
  return uv / std::sqrt(uu * vv);
}

enum class ContrastiveMode { kBsc, kSupCon, kSimClr };

// Direct per-anchor summation of the contrastive losses from raw projection
// rows, labels and source ids. No log-sum-exp tricks.
inline double contrastive_loss(const std::vector<std::vector<double>>& projections, const std::vector<int>& labels,
                               const std::vector<std::int64_t>& sources, double tau, double alpha,
                               ContrastiveMode mode) {
  std::size_t n = projections.size();
  double total = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    double denom = 0.0;
    for (std::size_t a = 0; a < n; ++a) {
      if (a == j) continue;
      denom += std::exp(cosine(projections[a], projections[j]) / tau);
    }
    auto term = [&](std::size_t p) {
      return std::log(std::exp(cosine(projections[p], projections[j]) / tau) / denom);
    };
    double pos_aug = 0.0, pos_diff = 0.0;
    std::size_t n_aug = 0, n_diff = 0;
    for (std::size_t a = 0; a < n; ++a) {
      if (a == j) continue;
      if (sources[a] == sources[j]) {
        pos_aug += term(a);
        ++n_aug;
      } else if (labels[a] == labels[j]) {
        pos_diff += term(a);
        ++n_diff;
      }
    }
    double anchor = 0.0;
    switch (mode) {
      case ContrastiveMode::kBsc:
        anchor = -(alpha * pos_aug + pos_diff) / (alpha * static_cast<double>(n_aug) + static_cast<double>(n_diff));
        break;
      case ContrastiveMode::kSupCon:
        anchor = -(pos_aug + pos_diff) / static_cast<double>(n_aug + n_diff);
        break;
      case ContrastiveMode::kSimClr:
        anchor = -pos_aug / static_cast<double>(n_aug);
        break;
    }
    total += anchor;
  }
  return total / static_cast<double>(n);
}

inline double contrastive_loss(const fscil::MultiViewBatch& batch,
                               const std::vector<std::vector<double>>& projections, double tau, double alpha,
                               ContrastiveMode mode) {
  std::vector<int> labels;
  std::vector<std::int64_t> sources;
  for (const auto& it : batch.items) {
    labels.push_back(it.label);
    sources.push_back(it.source_id);
  }
  return contrastive_loss(projections, labels, sources, tau, alpha, mode);
}

// Same loss computed from an explicit similarity matrix; lets property
// tests perturb a single pairwise similarity while holding the rest fixed.
inline double contrastive_from_sims(const fscil::Tensor& sims, const std::vector<int>& labels,
                                    const std::vector<std::int64_t>& sources, double tau, double alpha,
                                    ContrastiveMode mode) {
  std::size_t n = labels.size();
  double total = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    double denom = 0.0;
    for (std::size_t a = 0; a < n; ++a) {
      if (a == j) continue;
      denom += std::exp(sims.at(a, j) / tau);
    }
    double pos_aug = 0.0, pos_diff = 0.0;
    std::size_t n_aug = 0, n_diff = 0;
    for (std::size_t a = 0; a < n; ++a) {
      if (a == j) continue;
      double term = std::log(std::exp(sims.at(a, j) / tau) / denom);
      if (sources[a] == sources[j]) {
        pos_aug += term;
        ++n_aug;
      } else if (labels[a] == labels[j]) {
        pos_diff += term;
        ++n_diff;
      }
    }
    switch (mode) {
      case ContrastiveMode::kBsc:
        total += -(alpha * pos_aug + pos_diff) / (alpha * static_cast<double>(n_aug) + static_cast<double>(n_diff));
        break;
      case ContrastiveMode::kSupCon:
        total += -(pos_aug + pos_diff) / static_cast<double>(n_aug + n_diff);
        break;
      case ContrastiveMode::kSimClr:
        total += -pos_aug / static_cast<double>(n_aug);
        break;
    }
  }
  return total / static_cast<double>(n);
}

// Random unit-ish projection rows (not normalized; the losses normalize).
inline std::vector<std::vector<double>> random_projections(std::size_t n, std::size_t d, std::uint64_t seed) {
  fscil::Rng rng(seed);
  std::vector<std::vector<double>> out(n, std::vector<double>(d));
  for (auto& row : out) {
    for (auto& v : row) v = rng.normal();
  }
  return out;
}

inline fscil::Tensor to_matrix(const std::vector<std::vector<double>>& rows) {
  fscil::Tensor m({rows.size(), rows[0].size()});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < rows[i].size(); ++j) m.at(i, j) = rows[i][j];
  }
  return m;
}

}  // namespace oracles
