#pragma once

#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <type_traits>
#include <vector>

#include <json.hpp>

#include "fscil/data.hpp"
#include "fscil/error.hpp"
#include "fscil/protocol.hpp"

namespace fscil {

namespace detail {

// Wrapper enforcing that every key in a JSON object is consumed; unknown
// keys are reported with their full path.
class StrictObject {
 public:
  StrictObject(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  bool contains(const std::string& key) const { return j_.contains(key); }

  template <typename T>
  T get(const std::string& key, const T& fallback) {
    seen_.insert(key);
    if (!j_.contains(key)) return fallback;
    return convert<T>(key);
  }

  template <typename T>
  T require(const std::string& key) {
    seen_.insert(key);
    if (!j_.contains(key)) throw ConfigError(path_ + "." + key + ": required field missing");
    return convert<T>(key);
  }

  const nlohmann::json* child(const std::string& key) {
    seen_.insert(key);
    if (!j_.contains(key)) return nullptr;
    return &j_.at(key);
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError(path_ + "." + key + ": unknown key");
    }
  }

  const std::string& path() const { return path_; }

 private:
  template <typename T>
  T convert(const std::string& key) {
    const nlohmann::json& v = j_.at(key);
    try {
      if constexpr (std::is_same_v<T, double>) {
        if (!v.is_number()) throw ConfigError(path_ + "." + key + ": expected a number");
      } else if constexpr (std::is_integral_v<T> && !std::is_same_v<T, bool>) {
        if (!v.is_number_integer() && !v.is_number_unsigned()) {
          throw ConfigError(path_ + "." + key + ": expected an integer");
        }
      } else if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw ConfigError(path_ + "." + key + ": expected a boolean");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) throw ConfigError(path_ + "." + key + ": expected a string");
      }
      return v.get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(path_ + "." + key + ": " + e.what());
    }
  }

  const nlohmann::json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace detail

struct DataSettings {
  enum class Kind { kSynthetic, kCsv, kIdx };
  Kind kind = Kind::kSynthetic;
  std::size_t num_classes = 20;
  std::size_t d_in = 32;
  std::size_t samples_per_class = 50;
  double cluster_std = 0.1;
  std::string csv_path;
  std::string idx_images;
  std::string idx_labels;
  AugmentationConfig augmentation;  // seed resolved from the seeds section
};

struct PlanSettings {
  std::size_t num_base_classes = 10;
  int ways = 5;
  int shots = 5;
  std::size_t num_sessions = 3;
  double train_fraction = 0.8;
};

struct AnalysisSettings {
  bool psi_trace = false;
  bool export_embeddings = false;
};

struct RunSettings {
  DataSettings data;
  PlanSettings plan;
  NetworkConfig model;  // d_in filled after the dataset is materialized
  PretrainConfig pretrain;
  FinetuneConfig finetune;
  AnalysisSettings analysis;
  Seeds seeds;
  std::string output_dir = "out";
  std::size_t eval_batch_rows = 256;

  Dataset load_data() const {
    switch (data.kind) {
      case DataSettings::Kind::kSynthetic:
        return generate_gaussian_clusters(data.num_classes, data.d_in, data.samples_per_class, data.cluster_std,
                                          seeds.data);
      case DataSettings::Kind::kCsv:
        return load_csv(data.csv_path);
      case DataSettings::Kind::kIdx:
        return load_idx(data.idx_images, data.idx_labels);
    }
    throw ConfigError("unknown data kind");
  }

  SessionPlan build_plan(const Dataset& ds) const {
    return make_session_plan(ds, plan.num_base_classes, plan.ways, plan.shots, plan.num_sessions, seeds.plan,
                             plan.train_fraction);
  }

  ProtocolConfig protocol_config(const Dataset& ds) const {
    ProtocolConfig cfg;
    cfg.model = model;
    cfg.model.d_in = ds.d_in;
    cfg.pretrain = pretrain;
    cfg.finetune = finetune;
    cfg.augmentation = data.augmentation;
    cfg.seeds = seeds;
    cfg.output_dir = output_dir;
    cfg.eval_batch_rows = eval_batch_rows;
    return cfg;
  }
};

namespace detail {

inline AugmentationOp parse_augmentation_op(const nlohmann::json& j, const std::string& path) {
  StrictObject o(j, path);
  std::string kind = o.require<std::string>("kind");
  AugmentationOp op;
  if (kind == "gaussian_noise") {
    op.kind = AugmentationOp::Kind::kGaussianNoise;
    op.sigma = o.require<double>("sigma");
  } else if (kind == "random_scale") {
    op.kind = AugmentationOp::Kind::kRandomScale;
    op.lo = o.require<double>("lo");
    op.hi = o.require<double>("hi");
  } else if (kind == "coordinate_mask") {
    op.kind = AugmentationOp::Kind::kCoordinateMask;
    op.probability = o.require<double>("probability");
  } else if (kind == "crop_shift") {
    op.kind = AugmentationOp::Kind::kCropShift;
    op.max_shift = o.require<int>("max_shift");
  } else if (kind == "horizontal_flip") {
    op.kind = AugmentationOp::Kind::kHorizontalFlip;
    op.probability = o.require<double>("probability");
  } else {
    throw ConfigError(path + ".kind: unknown augmentation op '" + kind + "'");
  }
  o.finish();
  return op;
}

inline nlohmann::json augmentation_op_json(const AugmentationOp& op) {
  switch (op.kind) {
    case AugmentationOp::Kind::kGaussianNoise:
      return {{"kind", "gaussian_noise"}, {"sigma", op.sigma}};
    case AugmentationOp::Kind::kRandomScale:
      return {{"kind", "random_scale"}, {"lo", op.lo}, {"hi", op.hi}};
    case AugmentationOp::Kind::kCoordinateMask:
      return {{"kind", "coordinate_mask"}, {"probability", op.probability}};
    case AugmentationOp::Kind::kCropShift:
      return {{"kind", "crop_shift"}, {"max_shift", op.max_shift}};
    case AugmentationOp::Kind::kHorizontalFlip:
      return {{"kind", "horizontal_flip"}, {"probability", op.probability}};
  }
  throw ConfigError("unknown augmentation op kind");
}

inline std::vector<AugmentationOp> parse_augmentation_ops(const nlohmann::json* j, const std::string& path,
                                                          std::vector<AugmentationOp> fallback) {
  if (!j) return fallback;
  StrictObject o(*j, path);
  const nlohmann::json* ops = o.child("ops");
  std::vector<AugmentationOp> out;
  if (ops) {
    if (!ops->is_array()) throw ConfigError(path + ".ops: expected an array");
    for (std::size_t i = 0; i < ops->size(); ++i) {
      out.push_back(parse_augmentation_op((*ops)[i], path + ".ops[" + std::to_string(i) + "]"));
    }
  } else {
    out = std::move(fallback);
  }
  o.finish();
  return out;
}

inline PhaseOptimizer parse_optimizer(const nlohmann::json* j, const std::string& path, PhaseOptimizer defaults) {
  if (!j) return defaults;
  StrictObject o(*j, path);
  PhaseOptimizer opt = defaults;
  opt.learning_rate = o.get<double>("lr", defaults.learning_rate);
  opt.momentum = o.get<double>("momentum", defaults.momentum);
  opt.weight_decay = o.get<double>("weight_decay", defaults.weight_decay);
  std::string sched = o.get<std::string>("schedule",
                                         defaults.schedule == PhaseOptimizer::Schedule::kCosine ? "cosine" : "step");
  if (sched == "step") {
    opt.schedule = PhaseOptimizer::Schedule::kStepDecay;
  } else if (sched == "cosine") {
    opt.schedule = PhaseOptimizer::Schedule::kCosine;
  } else {
    throw ConfigError(path + ".schedule: expected 'step' or 'cosine'");
  }
  opt.gamma = o.get<double>("gamma", defaults.gamma);
  opt.decay_every_epochs = o.get<std::size_t>("decay_every_epochs", defaults.decay_every_epochs);
  o.finish();
  return opt;
}

inline nlohmann::json optimizer_json(const PhaseOptimizer& opt) {
  return {{"lr", opt.learning_rate},
          {"momentum", opt.momentum},
          {"weight_decay", opt.weight_decay},
          {"schedule", opt.schedule == PhaseOptimizer::Schedule::kCosine ? "cosine" : "step"},
          {"gamma", opt.gamma},
          {"decay_every_epochs", opt.decay_every_epochs}};
}

}  // namespace detail

inline std::vector<AugmentationOp> default_augmentation_ops() {
  AugmentationOp noise;
  noise.kind = AugmentationOp::Kind::kGaussianNoise;
  noise.sigma = 0.1;
  AugmentationOp scale;
  scale.kind = AugmentationOp::Kind::kRandomScale;
  scale.lo = 0.9;
  scale.hi = 1.1;
  return {noise, scale};
}

inline RunSettings parse_run_config(const nlohmann::json& j) {
  detail::StrictObject root(j, "config");
  RunSettings s;

  if (const nlohmann::json* jd = root.child("data")) {
    detail::StrictObject o(*jd, "config.data");
    std::string kind = o.get<std::string>("kind", "synthetic");
    if (kind == "synthetic") {
      s.data.kind = DataSettings::Kind::kSynthetic;
    } else if (kind == "csv") {
      s.data.kind = DataSettings::Kind::kCsv;
    } else if (kind == "idx") {
      s.data.kind = DataSettings::Kind::kIdx;
    } else {
      throw ConfigError("config.data.kind: expected synthetic|csv|idx");
    }
    if (const nlohmann::json* js = o.child("synthetic")) {
      detail::StrictObject so(*js, "config.data.synthetic");
      s.data.num_classes = so.get<std::size_t>("num_classes", s.data.num_classes);
      s.data.d_in = so.get<std::size_t>("d_in", s.data.d_in);
      s.data.samples_per_class = so.get<std::size_t>("samples_per_class", s.data.samples_per_class);
      s.data.cluster_std = so.get<double>("cluster_std", s.data.cluster_std);
      so.finish();
    }
    if (const nlohmann::json* jc = o.child("csv")) {
      detail::StrictObject co(*jc, "config.data.csv");
      s.data.csv_path = co.get<std::string>("path", "");
      co.finish();
    }
    if (const nlohmann::json* ji = o.child("idx")) {
      detail::StrictObject io(*ji, "config.data.idx");
      s.data.idx_images = io.get<std::string>("images", "");
      s.data.idx_labels = io.get<std::string>("labels", "");
      io.finish();
    }
    s.data.augmentation.ops =
        detail::parse_augmentation_ops(o.child("augmentation"), "config.data.augmentation", default_augmentation_ops());
    o.finish();
  } else {
    s.data.augmentation.ops = default_augmentation_ops();
  }
  if (s.data.kind == DataSettings::Kind::kCsv && s.data.csv_path.empty()) {
    throw ConfigError("config.data.csv.path: required for csv data");
  }
  if (s.data.kind == DataSettings::Kind::kIdx && (s.data.idx_images.empty() || s.data.idx_labels.empty())) {
    throw ConfigError("config.data.idx: images and labels are required for idx data");
  }

  if (const nlohmann::json* jp = root.child("session_plan")) {
    detail::StrictObject o(*jp, "config.session_plan");
    s.plan.num_base_classes = o.get<std::size_t>("num_base_classes", s.plan.num_base_classes);
    s.plan.ways = o.get<int>("ways", s.plan.ways);
    s.plan.shots = o.get<int>("shots", s.plan.shots);
    s.plan.num_sessions = o.get<std::size_t>("num_sessions", s.plan.num_sessions);
    s.plan.train_fraction = o.get<double>("train_fraction", s.plan.train_fraction);
    o.finish();
  }

  if (const nlohmann::json* jm = root.child("model")) {
    detail::StrictObject o(*jm, "config.model");
    s.model.extractor_dims = o.get<std::vector<std::size_t>>("extractor_dims", s.model.extractor_dims);
    s.model.head_hidden = o.get<std::size_t>("head_hidden", s.model.head_hidden);
    s.model.head_dim = o.get<std::size_t>("head_dim", s.model.head_dim);
    s.model.tau_ce = o.get<double>("tau_ce", s.model.tau_ce);
    std::string scoring = o.get<std::string>("scoring", "cosine");
    if (scoring == "cosine") {
      s.model.scoring = NetworkConfig::Scoring::kCosine;
    } else if (scoring == "dot") {
      s.model.scoring = NetworkConfig::Scoring::kDot;
    } else {
      throw ConfigError("config.model.scoring: expected cosine|dot");
    }
    o.finish();
  }

  if (const nlohmann::json* jt = root.child("pretrain")) {
    detail::StrictObject o(*jt, "config.pretrain");
    s.pretrain.loss = loss_variant_from_string(o.get<std::string>("loss", "bsc"));
    s.pretrain.epochs = o.get<std::size_t>("epochs", s.pretrain.epochs);
    s.pretrain.batch_size = o.get<std::size_t>("batch_size", s.pretrain.batch_size);
    s.pretrain.contrastive.views = o.get<int>("views", s.pretrain.contrastive.views);
    s.pretrain.contrastive.alpha = o.get<double>("alpha", s.pretrain.contrastive.alpha);
    s.pretrain.contrastive.tau = o.get<double>("tau", s.pretrain.contrastive.tau);
    s.pretrain.use_projection_head = o.get<bool>("use_projection_head", s.pretrain.use_projection_head);
    s.pretrain.checkpoint_every_epochs = o.get<std::size_t>("checkpoint_every_epochs", 0);
    s.pretrain.optimizer = detail::parse_optimizer(o.child("optimizer"), "config.pretrain.optimizer", s.pretrain.optimizer);
    o.finish();
  }

  if (const nlohmann::json* jf = root.child("finetune")) {
    detail::StrictObject o(*jf, "config.finetune");
    s.finetune.enabled = o.get<bool>("enabled", s.finetune.enabled);
    s.finetune.epochs = o.get<std::size_t>("epochs", s.finetune.epochs);
    s.finetune.batch_size = o.get<std::size_t>("batch_size", s.finetune.batch_size);
    s.finetune.lambda = o.get<double>("lambda", s.finetune.lambda);
    s.finetune.cskd = o.get<bool>("cskd", s.finetune.cskd);
    std::string init = o.get<std::string>("base_init", "mean");
    if (init == "mean") {
      s.finetune.base_init = FinetuneConfig::BaseInit::kMean;
    } else if (init == "random") {
      s.finetune.base_init = FinetuneConfig::BaseInit::kRandom;
    } else {
      throw ConfigError("config.finetune.base_init: expected mean|random");
    }
    s.finetune.optimizer = detail::parse_optimizer(o.child("optimizer"), "config.finetune.optimizer", s.finetune.optimizer);
    if (const nlohmann::json* ja = o.child("augmentation")) {
      if (!ja->is_null()) {
        AugmentationConfig aug;
        aug.ops = detail::parse_augmentation_ops(ja, "config.finetune.augmentation", {});
        s.finetune.augmentation_override = std::move(aug);
      }
    }
    o.finish();
  }

  if (const nlohmann::json* je = root.child("evaluation")) {
    detail::StrictObject o(*je, "config.evaluation");
    s.eval_batch_rows = o.get<std::size_t>("batch_rows", s.eval_batch_rows);
    o.finish();
  }

  if (const nlohmann::json* ja = root.child("analysis")) {
    detail::StrictObject o(*ja, "config.analysis");
    s.analysis.psi_trace = o.get<bool>("psi_trace", false);
    s.analysis.export_embeddings = o.get<bool>("export_embeddings", false);
    o.finish();
  }

  if (const nlohmann::json* js = root.child("seeds")) {
    detail::StrictObject o(*js, "config.seeds");
    s.seeds.data = o.get<std::uint64_t>("data", s.seeds.data);
    s.seeds.plan = o.get<std::uint64_t>("plan", s.seeds.plan);
    s.seeds.init = o.get<std::uint64_t>("init", s.seeds.init);
    s.seeds.train = o.get<std::uint64_t>("train", s.seeds.train);
    s.seeds.augmentation = o.get<std::uint64_t>("augmentation", s.seeds.augmentation);
    o.finish();
  }

  s.output_dir = root.get<std::string>("output_dir", s.output_dir);
  root.finish();

  s.data.augmentation.seed = s.seeds.augmentation;
  if (s.finetune.augmentation_override) s.finetune.augmentation_override->seed = s.seeds.augmentation;
  return s;
}

// Fully resolved config with every default materialized; written next to
// all outputs so a run can be reproduced from its artifacts alone.
inline nlohmann::json resolved_config_json(const RunSettings& s) {
  nlohmann::json j;
  nlohmann::json data;
  data["kind"] = s.data.kind == DataSettings::Kind::kSynthetic ? "synthetic"
               : s.data.kind == DataSettings::Kind::kCsv       ? "csv"
                                                               : "idx";
  data["synthetic"] = {{"num_classes", s.data.num_classes},
                       {"d_in", s.data.d_in},
                       {"samples_per_class", s.data.samples_per_class},
                       {"cluster_std", s.data.cluster_std}};
  data["csv"] = {{"path", s.data.csv_path}};
  data["idx"] = {{"images", s.data.idx_images}, {"labels", s.data.idx_labels}};
  nlohmann::json ops = nlohmann::json::array();
  for (const auto& op : s.data.augmentation.ops) ops.push_back(detail::augmentation_op_json(op));
  data["augmentation"] = {{"ops", std::move(ops)}};
  j["data"] = std::move(data);

  j["session_plan"] = {{"num_base_classes", s.plan.num_base_classes},
                       {"ways", s.plan.ways},
                       {"shots", s.plan.shots},
                       {"num_sessions", s.plan.num_sessions},
                       {"train_fraction", s.plan.train_fraction}};

  j["model"] = {{"extractor_dims", s.model.extractor_dims},
                {"head_hidden", s.model.head_hidden},
                {"head_dim", s.model.head_dim},
                {"tau_ce", s.model.tau_ce},
                {"scoring", s.model.scoring == NetworkConfig::Scoring::kCosine ? "cosine" : "dot"}};

  j["pretrain"] = {{"loss", to_string(s.pretrain.loss)},
                   {"epochs", s.pretrain.epochs},
                   {"batch_size", s.pretrain.batch_size},
                   {"views", s.pretrain.contrastive.views},
                   {"alpha", s.pretrain.contrastive.alpha},
                   {"tau", s.pretrain.contrastive.tau},
                   {"use_projection_head", s.pretrain.use_projection_head},
                   {"checkpoint_every_epochs", s.pretrain.checkpoint_every_epochs},
                   {"optimizer", detail::optimizer_json(s.pretrain.optimizer)}};

  nlohmann::json ft = {{"enabled", s.finetune.enabled},
                       {"epochs", s.finetune.epochs},
                       {"batch_size", s.finetune.batch_size},
                       {"lambda", s.finetune.lambda},
                       {"cskd", s.finetune.cskd},
                       {"base_init", s.finetune.base_init == FinetuneConfig::BaseInit::kMean ? "mean" : "random"},
                       {"optimizer", detail::optimizer_json(s.finetune.optimizer)}};
  if (s.finetune.augmentation_override) {
    nlohmann::json fops = nlohmann::json::array();
    for (const auto& op : s.finetune.augmentation_override->ops) fops.push_back(detail::augmentation_op_json(op));
    ft["augmentation"] = {{"ops", std::move(fops)}};
  } else {
    ft["augmentation"] = nullptr;
  }
  j["finetune"] = std::move(ft);

  j["evaluation"] = {{"batch_rows", s.eval_batch_rows}};
  j["analysis"] = {{"psi_trace", s.analysis.psi_trace}, {"export_embeddings", s.analysis.export_embeddings}};
  j["seeds"] = {{"data", s.seeds.data},
                {"plan", s.seeds.plan},
                {"init", s.seeds.init},
                {"train", s.seeds.train},
                {"augmentation", s.seeds.augmentation}};
  j["output_dir"] = s.output_dir;
  return j;
}

inline RunSettings load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
  return parse_run_config(j);
}

}  // namespace fscil
