#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fscil/error.hpp"
#include "fscil/rng.hpp"
#include "fscil/tensor.hpp"

namespace fscil {

struct LabeledSample {
  std::vector<double> features;
  int label = 0;
  std::int64_t source_id = 0;
};

struct GridShape {
  std::size_t rows = 0;
  std::size_t cols = 0;
};

struct Dataset {
  std::size_t d_in = 0;
  std::optional<GridShape> grid;  // set for image-like data
  std::vector<LabeledSample> samples;

  std::vector<int> class_ids() const {
    std::set<int> ids;
    for (const auto& s : samples) ids.insert(s.label);
    return {ids.begin(), ids.end()};
  }

  std::map<int, std::vector<std::size_t>> indices_by_class() const {
    std::map<int, std::vector<std::size_t>> out;
    for (std::size_t i = 0; i < samples.size(); ++i) out[samples[i].label].push_back(i);
    return out;
  }

  // Row-major feature matrix for a subset of sample indices.
  Tensor feature_matrix(const std::vector<std::size_t>& idx) const {
    if (idx.empty()) throw CapacityError("feature_matrix: empty index set");
    Tensor m({idx.size(), d_in});
    for (std::size_t r = 0; r < idx.size(); ++r) {
      const auto& f = samples[idx[r]].features;
      for (std::size_t c = 0; c < d_in; ++c) m.at(r, c) = f[c];
    }
    return m;
  }
};

// ---------------------------------------------------------------------------
// Synthetic clusters: class means uniform on the unit sphere, isotropic
// gaussian noise around each mean.
// ---------------------------------------------------------------------------

inline Dataset generate_gaussian_clusters(std::size_t num_classes, std::size_t d_in,
                                          std::size_t samples_per_class, double cluster_std,
                                          std::uint64_t seed) {
  if (num_classes == 0 || d_in == 0 || samples_per_class == 0) {
    throw ConfigError("generate_gaussian_clusters: counts must be positive");
  }
  if (!(cluster_std >= 0.0)) throw ConfigError("generate_gaussian_clusters: cluster_std must be >= 0");
  Rng rng(seed);
  std::vector<std::vector<double>> means(num_classes, std::vector<double>(d_in));
  for (auto& m : means) {
    double s = 0.0;
    for (auto& x : m) {
      x = rng.normal();
      s += x * x;
    }
    double r = std::sqrt(s);
    if (r <= kDegenerateNormFloor) r = 1.0;  // astronomically unlikely
    for (auto& x : m) x /= r;
  }
  Dataset ds;
  ds.d_in = d_in;
  ds.samples.reserve(num_classes * samples_per_class);
  std::int64_t next_id = 0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    for (std::size_t k = 0; k < samples_per_class; ++k) {
      LabeledSample s;
      s.label = static_cast<int>(c);
      s.source_id = next_id++;
      s.features.resize(d_in);
      for (std::size_t j = 0; j < d_in; ++j) s.features[j] = means[c][j] + cluster_std * rng.normal();
      ds.samples.push_back(std::move(s));
    }
  }
  return ds;
}

// ---------------------------------------------------------------------------
// CSV: optional header; first column integer label, rest decimal features.
// Doubles are written with shortest round-trip formatting so export/load is
// value-exact.
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  out.push_back(cur);
  for (auto& f : out) {
    std::size_t b = f.find_first_not_of(" \t");
    std::size_t e = f.find_last_not_of(" \t");
    f = b == std::string::npos ? std::string{} : f.substr(b, e - b + 1);
  }
  return out;
}

inline bool parse_double(const std::string& s, double& out) {
  const char* b = s.data();
  const char* e = s.data() + s.size();
  auto [p, ec] = std::from_chars(b, e, out);
  return ec == std::errc{} && p == e && !s.empty();
}

inline bool parse_int(const std::string& s, long long& out) {
  const char* b = s.data();
  const char* e = s.data() + s.size();
  auto [p, ec] = std::from_chars(b, e, out);
  return ec == std::errc{} && p == e && !s.empty();
}

inline std::string format_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, p);
}

}  // namespace detail

inline Dataset load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  Dataset ds;
  std::string line;
  std::size_t line_no = 0;
  std::int64_t next_id = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    auto fields = detail::split_csv_line(line);
    long long label;
    if (!detail::parse_int(fields[0], label)) {
      if (line_no == 1) continue;  // header row
      throw ParseError(path + ":" + std::to_string(line_no) + ": label is not an integer");
    }
    if (label < 0) {
      throw ParseError(path + ":" + std::to_string(line_no) + ": label must be non-negative");
    }
    if (fields.size() < 2) {
      throw ParseError(path + ":" + std::to_string(line_no) + ": row has no feature columns");
    }
    LabeledSample s;
    s.label = static_cast<int>(label);
    s.source_id = next_id++;
    s.features.reserve(fields.size() - 1);
    for (std::size_t i = 1; i < fields.size(); ++i) {
      double v;
      if (!detail::parse_double(fields[i], v)) {
        throw ParseError(path + ":" + std::to_string(line_no) + ": bad feature value '" + fields[i] + "'");
      }
      s.features.push_back(v);
    }
    if (ds.samples.empty()) {
      ds.d_in = s.features.size();
    } else if (s.features.size() != ds.d_in) {
      throw SchemaError(path + ":" + std::to_string(line_no) + ": expected " + std::to_string(ds.d_in) +
                        " features, got " + std::to_string(s.features.size()));
    }
    ds.samples.push_back(std::move(s));
  }
  if (ds.samples.empty()) throw SchemaError(path + ": no data rows");
  return ds;
}

inline void save_csv(const Dataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << "label";
  for (std::size_t j = 0; j < ds.d_in; ++j) out << ",f" << j;
  out << "\n";
  for (const auto& s : ds.samples) {
    out << s.label;
    for (double v : s.features) out << "," << detail::format_double(v);
    out << "\n";
  }
  if (!out) throw IoError("short write to " + path);
}

// ---------------------------------------------------------------------------
// IDX: big-endian magic-prefixed tensors, images and labels in separate
// files. Pixels are scaled to [0,1].
// ---------------------------------------------------------------------------

namespace detail {

inline std::uint32_t read_be32(std::istream& in, const std::string& path) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw ParseError(path + ": truncated idx header");
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) | (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

}  // namespace detail

inline Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
  std::ifstream imgs(images_path, std::ios::binary);
  if (!imgs) throw IoError("cannot open " + images_path);
  std::ifstream labs(labels_path, std::ios::binary);
  if (!labs) throw IoError("cannot open " + labels_path);

  std::uint32_t img_magic = detail::read_be32(imgs, images_path);
  if (img_magic != 0x00000803u) throw ParseError(images_path + ": expected idx3-ubyte magic 0x803");
  std::uint32_t n = detail::read_be32(imgs, images_path);
  std::uint32_t rows = detail::read_be32(imgs, images_path);
  std::uint32_t cols = detail::read_be32(imgs, images_path);

  std::uint32_t lab_magic = detail::read_be32(labs, labels_path);
  if (lab_magic != 0x00000801u) throw ParseError(labels_path + ": expected idx1-ubyte magic 0x801");
  std::uint32_t n_lab = detail::read_be32(labs, labels_path);
  if (n != n_lab) {
    throw SchemaError("idx image/label counts differ: " + std::to_string(n) + " vs " + std::to_string(n_lab));
  }
  if (n == 0) throw SchemaError(images_path + ": zero samples");

  Dataset ds;
  ds.d_in = static_cast<std::size_t>(rows) * cols;
  ds.grid = GridShape{rows, cols};
  ds.samples.reserve(n);
  std::vector<unsigned char> buf(ds.d_in);
  for (std::uint32_t i = 0; i < n; ++i) {
    imgs.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    int lab = labs.get();
    if (!imgs || lab == EOF) throw ParseError("truncated idx payload at sample " + std::to_string(i));
    LabeledSample s;
    s.label = lab;
    s.source_id = static_cast<std::int64_t>(i);
    s.features.resize(ds.d_in);
    for (std::size_t j = 0; j < ds.d_in; ++j) s.features[j] = static_cast<double>(buf[j]) / 255.0;
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

inline Dataset load_dataset(const std::string& path, const std::string& format) {
  if (format == "csv") return load_csv(path);
  throw ConfigError("load_dataset: format must be 'csv' here; idx needs load_idx(images, labels)");
}

// ---------------------------------------------------------------------------
// Session plan: base/incremental class partition plus per-class splits and
// the K-shot draws for incremental sessions.
// ---------------------------------------------------------------------------

struct SessionPlan {
  std::vector<int> base_classes;                    // sorted
  std::vector<std::vector<int>> incremental;        // sessions t = 2..T, each sorted
  int ways = 0;
  int shots = 0;
  std::uint64_t seed = 0;
  std::map<int, std::vector<std::size_t>> train_ids;  // per class, dataset indices
  std::map<int, std::vector<std::size_t>> test_ids;
  std::map<int, std::vector<std::size_t>> shot_ids;   // per incremental class, K indices

  std::size_t num_sessions() const { return 1 + incremental.size(); }

  const std::vector<int>& session_classes(std::size_t t) const {
    if (t == 1) return base_classes;
    if (t < 2 || t > num_sessions()) throw BoundsError("session index out of range");
    return incremental[t - 2];
  }

  std::vector<int> classes_up_to(std::size_t t) const {
    std::vector<int> out = base_classes;
    for (std::size_t s = 2; s <= t; ++s) {
      const auto& c = incremental[s - 2];
      out.insert(out.end(), c.begin(), c.end());
    }
    std::sort(out.begin(), out.end());
    return out;
  }

  std::vector<int> incremental_up_to(std::size_t t) const {
    std::vector<int> out;
    for (std::size_t s = 2; s <= t; ++s) {
      const auto& c = incremental[s - 2];
      out.insert(out.end(), c.begin(), c.end());
    }
    std::sort(out.begin(), out.end());
    return out;
  }

  // Training indices for session t: full train split for the base session,
  // the K-shot draw for incremental sessions.
  std::vector<std::size_t> session_train_indices(std::size_t t) const {
    std::vector<std::size_t> out;
    if (t == 1) {
      for (int c : base_classes) {
        const auto& ids = train_ids.at(c);
        out.insert(out.end(), ids.begin(), ids.end());
      }
    } else {
      for (int c : session_classes(t)) {
        const auto& ids = shot_ids.at(c);
        out.insert(out.end(), ids.begin(), ids.end());
      }
    }
    return out;
  }

  std::vector<std::size_t> test_indices_for(const std::vector<int>& classes) const {
    std::vector<std::size_t> out;
    for (int c : classes) {
      auto it = test_ids.find(c);
      if (it == test_ids.end()) throw CapacityError("no test split for class " + std::to_string(c));
      out.insert(out.end(), it->second.begin(), it->second.end());
    }
    return out;
  }

  std::map<int, std::vector<std::size_t>> train_ids_for(const std::vector<int>& classes, bool shots_only) const {
    std::map<int, std::vector<std::size_t>> out;
    for (int c : classes) out[c] = shots_only ? shot_ids.at(c) : train_ids.at(c);
    return out;
  }
};

inline SessionPlan make_session_plan(const Dataset& ds, std::size_t num_base_classes, int ways, int shots,
                                     std::size_t num_sessions, std::uint64_t seed, double train_fraction = 0.8) {
  if (num_sessions == 0) throw ConfigError("make_session_plan: need at least one session");
  if (ways <= 0 || shots <= 0) throw ConfigError("make_session_plan: ways and shots must be positive");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ConfigError("make_session_plan: train_fraction must lie in (0,1)");
  }
  std::vector<int> classes = ds.class_ids();
  std::size_t needed = num_base_classes + static_cast<std::size_t>(ways) * (num_sessions - 1);
  if (needed > classes.size()) {
    throw CapacityError("make_session_plan: need " + std::to_string(needed) + " classes, dataset has " +
                        std::to_string(classes.size()));
  }
  if (num_base_classes == 0) throw ConfigError("make_session_plan: need at least one base class");

  SessionPlan plan;
  plan.ways = ways;
  plan.shots = shots;
  plan.seed = seed;

  Rng class_rng(combine_seed(seed, 0x636c73ULL));
  std::vector<int> order = classes;
  class_rng.shuffle(order);
  plan.base_classes.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(num_base_classes));
  std::sort(plan.base_classes.begin(), plan.base_classes.end());
  std::size_t cursor = num_base_classes;
  for (std::size_t t = 2; t <= num_sessions; ++t) {
    std::vector<int> sess(order.begin() + static_cast<std::ptrdiff_t>(cursor),
                          order.begin() + static_cast<std::ptrdiff_t>(cursor + static_cast<std::size_t>(ways)));
    std::sort(sess.begin(), sess.end());
    plan.incremental.push_back(std::move(sess));
    cursor += static_cast<std::size_t>(ways);
  }

  auto by_class = ds.indices_by_class();
  std::set<int> used(plan.base_classes.begin(), plan.base_classes.end());
  for (const auto& sess : plan.incremental) used.insert(sess.begin(), sess.end());

  for (int c : used) {
    auto ids = by_class.at(c);
    Rng split_rng(combine_seed(seed, 0x73706c69ULL, static_cast<std::uint64_t>(c)));
    split_rng.shuffle(ids);
    std::size_t n_train = static_cast<std::size_t>(std::lround(train_fraction * static_cast<double>(ids.size())));
    n_train = std::clamp<std::size_t>(n_train, 1, ids.size() - 1);
    if (ids.size() < 2) {
      throw CapacityError("make_session_plan: class " + std::to_string(c) + " needs >=2 samples for a split");
    }
    plan.train_ids[c] = {ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_train)};
    plan.test_ids[c] = {ids.begin() + static_cast<std::ptrdiff_t>(n_train), ids.end()};
    std::sort(plan.train_ids[c].begin(), plan.train_ids[c].end());
    std::sort(plan.test_ids[c].begin(), plan.test_ids[c].end());
  }

  for (const auto& sess : plan.incremental) {
    for (int c : sess) {
      const auto& tr = plan.train_ids.at(c);
      if (tr.size() < static_cast<std::size_t>(shots)) {
        throw CapacityError("make_session_plan: class " + std::to_string(c) + " has " + std::to_string(tr.size()) +
                            " train samples, needs " + std::to_string(shots));
      }
      auto pick = tr;
      Rng shot_rng(combine_seed(seed, 0x73686f74ULL, static_cast<std::uint64_t>(c)));
      shot_rng.shuffle(pick);
      pick.resize(static_cast<std::size_t>(shots));
      std::sort(pick.begin(), pick.end());
      plan.shot_ids[c] = std::move(pick);
    }
  }
  return plan;
}

// ---------------------------------------------------------------------------
// Vector-space augmentation. Randomness is keyed by (config seed, source id,
// draw index) so a given view of a given sample is reproducible in isolation.
// ---------------------------------------------------------------------------

struct AugmentationOp {
  enum class Kind { kGaussianNoise, kRandomScale, kCoordinateMask, kCropShift, kHorizontalFlip };
  Kind kind = Kind::kGaussianNoise;
  double sigma = 0.0;        // gaussian noise
  double lo = 1.0, hi = 1.0; // random scale
  double probability = 0.0;  // coordinate mask / flip
  int max_shift = 0;         // crop shift
};

struct AugmentationConfig {
  std::vector<AugmentationOp> ops;
  std::uint64_t seed = 0;

  void validate() const {
    for (const auto& op : ops) {
      switch (op.kind) {
        case AugmentationOp::Kind::kGaussianNoise:
          if (op.sigma < 0.0) throw ConfigError("gaussian-noise sigma must be >= 0");
          break;
        case AugmentationOp::Kind::kRandomScale:
          if (!(op.lo > 0.0) || op.lo > op.hi) throw ConfigError("random-scale needs 0 < lo <= hi");
          break;
        case AugmentationOp::Kind::kCoordinateMask:
        case AugmentationOp::Kind::kHorizontalFlip:
          if (op.probability < 0.0 || op.probability > 1.0) throw ConfigError("probability must lie in [0,1]");
          break;
        case AugmentationOp::Kind::kCropShift:
          if (op.max_shift < 0) throw ConfigError("crop-shift max_shift must be >= 0");
          break;
      }
    }
  }
};

inline std::vector<double> augment(const LabeledSample& sample, const AugmentationConfig& config,
                                   std::uint64_t draw_index, const std::optional<GridShape>& grid = std::nullopt) {
  config.validate();
  Rng rng(combine_seed(config.seed, static_cast<std::uint64_t>(sample.source_id), draw_index));
  std::vector<double> x = sample.features;
  for (const auto& op : config.ops) {
    switch (op.kind) {
      case AugmentationOp::Kind::kGaussianNoise:
        for (auto& v : x) v += op.sigma * rng.normal();
        break;
      case AugmentationOp::Kind::kRandomScale: {
        double s = rng.uniform(op.lo, op.hi);
        for (auto& v : x) v *= s;
        break;
      }
      case AugmentationOp::Kind::kCoordinateMask:
        for (auto& v : x) {
          if (rng.bernoulli(op.probability)) v = 0.0;
        }
        break;
      case AugmentationOp::Kind::kCropShift: {
        if (!grid) throw DimensionError("crop-shift requires grid-shaped data");
        long h = static_cast<long>(grid->rows), w = static_cast<long>(grid->cols);
        long dy = static_cast<long>(rng.below(static_cast<std::uint64_t>(2 * op.max_shift + 1))) - op.max_shift;
        long dx = static_cast<long>(rng.below(static_cast<std::uint64_t>(2 * op.max_shift + 1))) - op.max_shift;
        std::vector<double> shifted(x.size(), 0.0);
        for (long r = 0; r < h; ++r) {
          long sr = r - dy;
          if (sr < 0 || sr >= h) continue;
          for (long c = 0; c < w; ++c) {
            long sc = c - dx;
            if (sc < 0 || sc >= w) continue;
            shifted[static_cast<std::size_t>(r * w + c)] = x[static_cast<std::size_t>(sr * w + sc)];
          }
        }
        x = std::move(shifted);
        break;
      }
      case AugmentationOp::Kind::kHorizontalFlip: {
        if (!grid) throw DimensionError("horizontal-flip requires grid-shaped data");
        if (rng.bernoulli(op.probability)) {
          long h = static_cast<long>(grid->rows), w = static_cast<long>(grid->cols);
          for (long r = 0; r < h; ++r) {
            for (long c = 0; c < w / 2; ++c) {
              std::swap(x[static_cast<std::size_t>(r * w + c)], x[static_cast<std::size_t>(r * w + (w - 1 - c))]);
            }
          }
        }
        break;
      }
    }
  }
  return x;
}

}  // namespace fscil
