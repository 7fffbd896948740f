#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "fscil/data.hpp"
#include "fscil/error.hpp"
#include "fscil/graph.hpp"
#include "fscil/optim.hpp"
#include "fscil/params.hpp"
#include "fscil/rng.hpp"
#include "fscil/tensor.hpp"

namespace fscil {

struct LogitDistribution {
  std::vector<double> logits;
  std::vector<int> class_ids;  // ascending
};

enum class ClassifierOrigin { kMeanInit, kOptimizedFromMean, kRandomInit };

inline std::string to_string(ClassifierOrigin o) {
  switch (o) {
    case ClassifierOrigin::kMeanInit: return "mean-init";
    case ClassifierOrigin::kOptimizedFromMean: return "optimized-from-mean";
    case ClassifierOrigin::kRandomInit: return "random-init";
  }
  throw ConfigError("unknown classifier origin");
}

inline ClassifierOrigin origin_from_string(const std::string& s) {
  if (s == "mean-init") return ClassifierOrigin::kMeanInit;
  if (s == "optimized-from-mean") return ClassifierOrigin::kOptimizedFromMean;
  if (s == "random-init") return ClassifierOrigin::kRandomInit;
  throw ParseError("unknown classifier origin: " + s);
}

// Per-class weight vectors in session insertion order.
class ClassifierBank {
 public:
  struct Entry {
    int class_id;
    Tensor weight;
    ClassifierOrigin origin;
  };

  void add(int class_id, Tensor weight, ClassifierOrigin origin) {
    if (index_.count(class_id)) {
      throw ConflictError("classifier already present for class " + std::to_string(class_id));
    }
    index_[class_id] = entries_.size();
    entries_.push_back(Entry{class_id, std::move(weight), origin});
  }

  bool has(int class_id) const { return index_.count(class_id) > 0; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const std::vector<Entry>& entries() const { return entries_; }

  const Entry& entry(int class_id) const {
    auto it = index_.find(class_id);
    if (it == index_.end()) throw ConflictError("no classifier for class " + std::to_string(class_id));
    return entries_[it->second];
  }

  void set_weight(int class_id, Tensor weight, std::optional<ClassifierOrigin> origin = std::nullopt) {
    auto it = index_.find(class_id);
    if (it == index_.end()) throw ConflictError("no classifier for class " + std::to_string(class_id));
    entries_[it->second].weight = std::move(weight);
    if (origin) entries_[it->second].origin = *origin;
  }

  void clear() {
    entries_.clear();
    index_.clear();
  }

  // Rows stacked in the order of class_ids.
  Tensor matrix(const std::vector<int>& class_ids) const {
    if (class_ids.empty()) throw ConfigError("classifier matrix over empty class set");
    std::size_t d = entry(class_ids.front()).weight.numel();
    Tensor m({class_ids.size(), d});
    for (std::size_t r = 0; r < class_ids.size(); ++r) {
      const Tensor& w = entry(class_ids[r]).weight;
      for (std::size_t c = 0; c < d; ++c) m.at(r, c) = w[c];
    }
    return m;
  }

 private:
  std::vector<Entry> entries_;
  std::map<int, std::size_t> index_;
};

struct NetworkConfig {
  std::size_t d_in = 32;
  std::vector<std::size_t> extractor_dims = {64, 64, 64};  // each affine followed by ReLU
  std::size_t head_hidden = 64;
  std::size_t head_dim = 32;
  double tau_ce = 0.1;
  enum class Scoring { kCosine, kDot };
  Scoring scoring = Scoring::kCosine;

  std::size_t feature_dim() const { return extractor_dims.back(); }

  void validate() const {
    if (d_in == 0) throw ConfigError("model: d_in must be positive");
    if (extractor_dims.empty()) throw ConfigError("model: extractor needs at least one layer");
    for (std::size_t d : extractor_dims) {
      if (d == 0) throw ConfigError("model: extractor dims must be positive");
    }
    if (head_hidden == 0 || head_dim == 0) throw ConfigError("model: head dims must be positive");
    if (!(tau_ce > 0.0)) throw ConfigError("model: tau_ce must be positive");
  }
};

// z = f(x): affine + ReLU stack, final layer included, so features are
// elementwise non-negative.
inline Var forward_features_graph(Graph& g, const NetworkConfig& cfg, const GraphBind& bind, const Tensor& X) {
  if (X.rank() != 2 || X.cols() != cfg.d_in) {
    throw DimensionError("forward_features: input must be {n, " + std::to_string(cfg.d_in) + "}");
  }
  Var h = g.constant(X);
  for (std::size_t i = 0; i < cfg.extractor_dims.size(); ++i) {
    std::string base = "extractor." + std::to_string(i);
    h = g.relu(g.add_rowvec(g.matmul(h, bind.at(base + ".weight")), bind.at(base + ".bias")));
  }
  return h;
}

// h = head(z), rows l2-normalized.
inline Var forward_projection_graph(Graph& g, const NetworkConfig& cfg, const GraphBind& bind, Var features) {
  (void)cfg;
  Var u = g.relu(g.add_rowvec(g.matmul(features, bind.at("head.0.weight")), bind.at("head.0.bias")));
  Var v = g.add_rowvec(g.matmul(u, bind.at("head.1.weight")), bind.at("head.1.bias"));
  return g.l2_normalize_rows(v);
}

// Logit matrix {n, C} of feature rows against classifier rows. Cosine
// scoring normalizes both sides; either way logits are scaled by 1/tau_ce.
inline Var classifier_logits_graph(Graph& g, const NetworkConfig& cfg, Var features, Var classifiers) {
  if (cfg.scoring == NetworkConfig::Scoring::kCosine) {
    Var zn = g.l2_normalize_rows(features);
    Var wn = g.l2_normalize_rows(classifiers);
    return g.scale(g.matmul_nt(zn, wn), 1.0 / cfg.tau_ce);
  }
  return g.scale(g.matmul_nt(features, classifiers), 1.0 / cfg.tau_ce);
}

// Binds a plain name->tensor map as constants (teacher snapshots).
inline GraphBind bind_constants(Graph& g, const std::map<std::string, Tensor>& params) {
  GraphBind bind;
  bind.graph = &g;
  for (const auto& [name, t] : params) bind.vars.emplace(name, g.constant(t));
  return bind;
}

// Feature extractor + projection head parameters plus the classifier bank.
class Network {
 public:
  explicit Network(NetworkConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

  const NetworkConfig& config() const { return cfg_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }
  ClassifierBank& bank() { return bank_; }
  const ClassifierBank& bank() const { return bank_; }

  std::vector<std::string> extractor_param_names() const {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < cfg_.extractor_dims.size(); ++i) {
      out.push_back("extractor." + std::to_string(i) + ".weight");
      out.push_back("extractor." + std::to_string(i) + ".bias");
    }
    return out;
  }

  std::vector<std::string> head_param_names() const {
    return {"head.0.weight", "head.0.bias", "head.1.weight", "head.1.bias"};
  }

  // Xavier-uniform weights; biases uniform in +-1/sqrt(fan_in).
  void init(std::uint64_t seed) {
    store_ = ParamStore{};
    std::size_t in = cfg_.d_in;
    for (std::size_t i = 0; i < cfg_.extractor_dims.size(); ++i) {
      std::size_t out = cfg_.extractor_dims[i];
      add_affine("extractor." + std::to_string(i), in, out, seed);
      in = out;
    }
    add_affine("head.0", cfg_.feature_dim(), cfg_.head_hidden, seed);
    add_affine("head.1", cfg_.head_hidden, cfg_.head_dim, seed);
  }

  Tensor features_value(const Tensor& X) const {
    Graph g;
    GraphBind bind = bind_params(g, store_, extractor_param_names());
    return g.value(forward_features_graph(g, cfg_, bind, X));
  }

  Tensor projections_value(const Tensor& X) const {
    Graph g;
    auto names = extractor_param_names();
    auto head = head_param_names();
    names.insert(names.end(), head.begin(), head.end());
    GraphBind bind = bind_params(g, store_, names);
    Var z = forward_features_graph(g, cfg_, bind, X);
    return g.value(forward_projection_graph(g, cfg_, bind, z));
  }

  Tensor logits_matrix_value(const Tensor& features, const std::vector<int>& active) const {
    if (active.empty()) throw ConfigError("logits: active class set is empty");
    for (int c : active) {
      if (!bank_.has(c)) throw ConflictError("logits: class " + std::to_string(c) + " missing from bank");
    }
    Graph g;
    Var z = g.constant(features);
    Var w = g.constant(bank_.matrix(active));
    return g.value(classifier_logits_graph(g, cfg_, z, w));
  }

  LogitDistribution logits_for(const Tensor& feature_row, const std::vector<int>& active) const {
    Tensor f({1, feature_row.numel()}, std::vector<double>(feature_row.data().begin(), feature_row.data().end()));
    Tensor m = logits_matrix_value(f, active);
    LogitDistribution out;
    out.class_ids = active;
    out.logits.assign(m.data().begin(), m.data().end());
    return out;
  }

  // argmax over active classes; ties go to the lowest class id (active must
  // be ascending).
  std::vector<int> predict_from_features(const Tensor& features, const std::vector<int>& active) const {
    Tensor L = logits_matrix_value(features, active);
    std::vector<int> out(L.rows());
    for (std::size_t i = 0; i < L.rows(); ++i) {
      std::size_t best = 0;
      for (std::size_t j = 1; j < L.cols(); ++j) {
        if (L.at(i, j) > L.at(i, best)) best = j;
      }
      out[i] = active[best];
    }
    return out;
  }

  std::vector<int> predict(const Tensor& inputs, const std::vector<int>& active) const {
    return predict_from_features(features_value(inputs), active);
  }

  void save(const std::string& path) const;
  static Network load(const std::string& path);

 private:
  void add_affine(const std::string& base, std::size_t in, std::size_t out, std::uint64_t seed) {
    store_.add(base + ".weight",
               xavier_uniform_init({in, out}, combine_seed(seed, hash_name(base + ".weight"))));
    Tensor bias({out});
    Rng rng(combine_seed(seed, hash_name(base + ".bias")));
    double bound = 1.0 / std::sqrt(static_cast<double>(in));
    for (std::size_t i = 0; i < out; ++i) bias[i] = rng.uniform(-bound, bound);
    store_.add(base + ".bias", std::move(bias));
  }

  NetworkConfig cfg_;
  ParamStore store_;
  ClassifierBank bank_;
};

// ---------------------------------------------------------------------------
// Classifier initialization
// ---------------------------------------------------------------------------

// w_c = mean over the class's training samples of z/||z||. Norms land in
// (0, 1], hitting 1 only when all normalized features coincide.
inline void init_classifiers_from_means(Network& net, const Dataset& ds,
                                        const std::map<int, std::vector<std::size_t>>& ids_by_class,
                                        ClassifierOrigin origin = ClassifierOrigin::kMeanInit) {
  for (const auto& [class_id, ids] : ids_by_class) {
    if (net.bank().has(class_id)) {
      throw ConflictError("classifier already present for class " + std::to_string(class_id));
    }
    if (ids.empty()) throw CapacityError("no training samples for class " + std::to_string(class_id));
  }
  for (const auto& [class_id, ids] : ids_by_class) {
    Tensor Z = net.features_value(ds.feature_matrix(ids));
    Tensor w({Z.cols()});
    for (std::size_t r = 0; r < Z.rows(); ++r) {
      Tensor zr = l2_normalize(Z.row(r));  // throws on degenerate feature rows
      for (std::size_t c = 0; c < Z.cols(); ++c) w[c] += zr[c];
    }
    double inv = 1.0 / static_cast<double>(Z.rows());
    for (std::size_t c = 0; c < w.numel(); ++c) w[c] *= inv;
    net.bank().add(class_id, std::move(w), origin);
  }
}

inline void init_classifiers_random(Network& net, const std::vector<int>& classes, std::uint64_t seed) {
  for (int c : classes) {
    if (net.bank().has(c)) throw ConflictError("classifier already present for class " + std::to_string(c));
  }
  std::size_t d = net.config().feature_dim();
  // fans follow a D -> |C| linear map, matching a jointly xavier-initialized
  // classifier matrix
  for (int c : classes) {
    Tensor w = xavier_uniform_init({d}, combine_seed(seed, static_cast<std::uint64_t>(c)), d, classes.size());
    net.bank().add(c, std::move(w), ClassifierOrigin::kRandomInit);
  }
}

// ---------------------------------------------------------------------------
// Checkpoints: JSON, value-exact round trip.
// ---------------------------------------------------------------------------

inline void Network::save(const std::string& path) const {
  nlohmann::json j;
  j["format"] = "fscil-checkpoint-v1";
  j["config"] = {
      {"d_in", cfg_.d_in},
      {"extractor_dims", cfg_.extractor_dims},
      {"head_hidden", cfg_.head_hidden},
      {"head_dim", cfg_.head_dim},
      {"tau_ce", cfg_.tau_ce},
      {"scoring", cfg_.scoring == NetworkConfig::Scoring::kCosine ? "cosine" : "dot"},
  };
  nlohmann::json params = nlohmann::json::object();
  for (const auto& name : store_.names()) {
    const Tensor& t = store_.param(name);
    if (!t.all_finite()) throw NumericError("checkpoint: parameter " + name + " has non-finite values");
    params[name] = {{"shape", t.shape()}, {"values", t.values()}};
  }
  j["params"] = std::move(params);
  nlohmann::json clf = nlohmann::json::array();
  for (const auto& e : bank_.entries()) {
    clf.push_back({{"class_id", e.class_id}, {"origin", to_string(e.origin)}, {"values", e.weight.values()}});
  }
  j["classifiers"] = std::move(clf);
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << j.dump(2) << "\n";
  if (!out) throw IoError("short write to " + path);
}

inline Network Network::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
  try {
    if (j.at("format").get<std::string>() != "fscil-checkpoint-v1") {
      throw ParseError(path + ": unknown checkpoint format");
    }
    const auto& jc = j.at("config");
    NetworkConfig cfg;
    cfg.d_in = jc.at("d_in").get<std::size_t>();
    cfg.extractor_dims = jc.at("extractor_dims").get<std::vector<std::size_t>>();
    cfg.head_hidden = jc.at("head_hidden").get<std::size_t>();
    cfg.head_dim = jc.at("head_dim").get<std::size_t>();
    cfg.tau_ce = jc.at("tau_ce").get<double>();
    cfg.scoring = jc.at("scoring").get<std::string>() == "dot" ? NetworkConfig::Scoring::kDot
                                                               : NetworkConfig::Scoring::kCosine;
    Network net(cfg);
    for (const auto& [name, jt] : j.at("params").items()) {
      Tensor t(jt.at("shape").get<std::vector<std::size_t>>(), jt.at("values").get<std::vector<double>>());
      net.store_.add(name, std::move(t));
    }
    for (const auto& je : j.at("classifiers")) {
      Tensor w({je.at("values").size()}, je.at("values").get<std::vector<double>>());
      net.bank_.add(je.at("class_id").get<int>(), std::move(w), origin_from_string(je.at("origin").get<std::string>()));
    }
    return net;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(path + ": " + e.what());
  }
}

}  // namespace fscil
