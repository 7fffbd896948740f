#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "fscil/data.hpp"
#include "fscil/error.hpp"
#include "fscil/model.hpp"
#include "fscil/rng.hpp"
#include "fscil/tensor.hpp"

namespace fscil {

constexpr double kRadToDeg = 180.0 / 3.14159265358979323846;

struct AngleReport {
  double psi_degrees = 0.0;
  std::vector<double> mean_feature_norms;
  std::size_t class_count = 0;
  std::size_t feature_dim = 0;
};

// Raw (un-normalized) per-class mean features of the training split.
inline std::map<int, Tensor> class_mean_features(const Network& net, const Dataset& ds,
                                                 const std::map<int, std::vector<std::size_t>>& ids_by_class) {
  std::map<int, Tensor> out;
  for (const auto& [class_id, ids] : ids_by_class) {
    if (ids.empty()) throw CapacityError("class_mean_features: class " + std::to_string(class_id) + " is empty");
    Tensor Z = net.features_value(ds.feature_matrix(ids));
    Tensor mean({Z.cols()});
    for (std::size_t r = 0; r < Z.rows(); ++r) {
      for (std::size_t c = 0; c < Z.cols(); ++c) mean[c] += Z.at(r, c);
    }
    double inv = 1.0 / static_cast<double>(Z.rows());
    for (std::size_t c = 0; c < mean.numel(); ++c) mean[c] *= inv;
    out.emplace(class_id, std::move(mean));
  }
  return out;
}

// Mean pairwise angle between class mean features, in degrees. Means are
// normalized before the dot product so arccos sees a true cosine.
inline double psi(const std::vector<Tensor>& means) {
  if (means.size() < 2) throw CapacityError("psi needs at least two class means");
  std::vector<Tensor> unit;
  unit.reserve(means.size());
  for (const auto& m : means) unit.push_back(l2_normalize(m));
  double total = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < unit.size(); ++i) {
    for (std::size_t j = i + 1; j < unit.size(); ++j) {
      double c = std::clamp(dot(unit[i].data(), unit[j].data()), -1.0, 1.0);
      total += std::acos(c) * kRadToDeg;
      ++pairs;
    }
  }
  return total / static_cast<double>(pairs);
}

inline AngleReport angle_report(const Network& net, const Dataset& ds,
                                const std::map<int, std::vector<std::size_t>>& ids_by_class) {
  auto means = class_mean_features(net, ds, ids_by_class);
  AngleReport report;
  report.class_count = means.size();
  report.feature_dim = net.config().feature_dim();
  std::vector<Tensor> vecs;
  vecs.reserve(means.size());
  for (const auto& [c, m] : means) {
    report.mean_feature_norms.push_back(norm(m.data()));
    vecs.push_back(m);
  }
  report.psi_degrees = psi(vecs);
  return report;
}

// n unit vectors with standard-normal coordinates, rows of an {n, d} matrix.
inline Tensor random_unit_vectors(std::size_t n, std::size_t d, std::uint64_t seed) {
  Tensor v({n, d});
  Rng rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      double x = rng.normal();
      v.at(i, j) = x;
      s += x * x;
    }
    double r = std::sqrt(s);
    if (r <= kDegenerateNormFloor) {
      // redraw-free fallback; probability is effectively zero
      v.at(i, 0) = 1.0;
      r = 1.0;
    }
    for (std::size_t j = 0; j < d; ++j) v.at(i, j) /= r;
  }
  return v;
}

// Mean over vectors of each one's minimum pairwise angle, in degrees.
// The pairwise pass is tiled so peak memory stays under memory_cap_bytes.
inline double mean_min_angle(const Tensor& v, std::size_t memory_cap_bytes = 256u << 20) {
  std::size_t n = v.rows();
  if (n < 2) throw CapacityError("mean_min_angle needs at least two vectors");
  std::size_t tile = static_cast<std::size_t>(std::sqrt(static_cast<double>(memory_cap_bytes / sizeof(double))));
  tile = std::clamp<std::size_t>(tile, 16, 1024);

  // min angle == arccos of max cosine; track per-vector max dot products
  std::vector<double> max_dot(n, -2.0);
  for (std::size_t bi = 0; bi < n; bi += tile) {
    std::size_t ei = std::min(n, bi + tile);
    for (std::size_t bj = bi; bj < n; bj += tile) {
      std::size_t ej = std::min(n, bj + tile);
      for (std::size_t i = bi; i < ei; ++i) {
        const double* vi = v.row_ptr(i);
        std::size_t j0 = bj == bi ? i + 1 : bj;
        for (std::size_t j = j0; j < ej; ++j) {
          const double* vj = v.row_ptr(j);
          double s = 0.0;
          for (std::size_t k = 0; k < v.cols(); ++k) s += vi[k] * vj[k];
          if (s > max_dot[i]) max_dot[i] = s;
          if (s > max_dot[j]) max_dot[j] = s;
        }
      }
    }
  }
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    total += std::acos(std::clamp(max_dot[i], -1.0, 1.0)) * kRadToDeg;
  }
  return total / static_cast<double>(n);
}

inline double min_angle_study(std::size_t n, std::size_t d, std::uint64_t seed,
                              std::size_t memory_cap_bytes = 256u << 20) {
  if (n < 2 || d < 2) throw ConfigError("min_angle_study needs n >= 2 and d >= 2");
  Tensor v = random_unit_vectors(n, d, seed);
  return mean_min_angle(v, memory_cap_bytes);
}

// psi evaluated at each saved checkpoint.
inline std::vector<double> psi_trace(const std::vector<std::string>& checkpoint_paths, const Dataset& ds,
                                     const std::map<int, std::vector<std::size_t>>& ids_by_class) {
  std::vector<double> out;
  out.reserve(checkpoint_paths.size());
  for (const auto& path : checkpoint_paths) {
    Network net = Network::load(path);
    out.push_back(angle_report(net, ds, ids_by_class).psi_degrees);
  }
  return out;
}

// CSV of (id, label, feature columns); values are exact on reload.
inline void export_embeddings(const Network& net, const Dataset& ds, const std::vector<std::size_t>& indices,
                              const std::string& path) {
  if (indices.empty()) throw CapacityError("export_embeddings: empty split");
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  std::size_t d = net.config().feature_dim();
  out << "id,label";
  for (std::size_t j = 0; j < d; ++j) out << ",z" << j;
  out << "\n";
  constexpr std::size_t kChunk = 256;
  for (std::size_t lo = 0; lo < indices.size(); lo += kChunk) {
    std::size_t hi = std::min(indices.size(), lo + kChunk);
    std::vector<std::size_t> chunk(indices.begin() + static_cast<std::ptrdiff_t>(lo),
                                   indices.begin() + static_cast<std::ptrdiff_t>(hi));
    Tensor Z = net.features_value(ds.feature_matrix(chunk));
    for (std::size_t r = 0; r < chunk.size(); ++r) {
      const auto& s = ds.samples[chunk[r]];
      out << s.source_id << "," << s.label;
      for (std::size_t j = 0; j < d; ++j) out << "," << detail::format_double(Z.at(r, j));
      out << "\n";
    }
  }
  if (!out) throw IoError("short write to " + path);
}

}  // namespace fscil
