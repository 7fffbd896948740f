#pragma once

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "fscil/batching.hpp"
#include "fscil/data.hpp"
#include "fscil/error.hpp"
#include "fscil/losses.hpp"
#include "fscil/metrics.hpp"
#include "fscil/model.hpp"
#include "fscil/optim.hpp"

namespace fscil {

// Optimizer settings at the phase level; step counts are derived from the
// phase's epoch/batch structure when the phase starts.
struct PhaseOptimizer {
  double learning_rate = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  enum class Schedule { kStepDecay, kCosine };
  Schedule schedule = Schedule::kStepDecay;
  double gamma = 0.1;
  std::size_t decay_every_epochs = 80;  // step decay; 0 disables decay

  OptimizerConfig resolve(std::size_t steps_per_epoch, std::size_t total_steps) const {
    OptimizerConfig cfg;
    cfg.learning_rate = learning_rate;
    cfg.momentum = momentum;
    cfg.weight_decay = weight_decay;
    if (schedule == Schedule::kCosine) {
      cfg.schedule.kind = ScheduleConfig::Kind::kCosine;
      cfg.schedule.total_steps = total_steps > 0 ? total_steps : 1;
    } else {
      cfg.schedule.kind = ScheduleConfig::Kind::kStepDecay;
      cfg.schedule.gamma = gamma;
      cfg.schedule.interval_steps = decay_every_epochs * steps_per_epoch;
    }
    cfg.validate();
    return cfg;
  }
};

enum class LossVariant { kBsc, kSupCon, kSimClr, kCe };

inline std::string to_string(LossVariant v) {
  switch (v) {
    case LossVariant::kBsc: return "bsc";
    case LossVariant::kSupCon: return "supcon";
    case LossVariant::kSimClr: return "simclr";
    case LossVariant::kCe: return "ce";
  }
  throw ConfigError("unknown loss variant");
}

inline LossVariant loss_variant_from_string(const std::string& s) {
  if (s == "bsc") return LossVariant::kBsc;
  if (s == "supcon") return LossVariant::kSupCon;
  if (s == "simclr") return LossVariant::kSimClr;
  if (s == "ce") return LossVariant::kCe;
  throw ConfigError("unknown pretrain loss '" + s + "'");
}

struct PretrainConfig {
  LossVariant loss = LossVariant::kBsc;
  std::size_t epochs = 200;
  std::size_t batch_size = 64;
  PhaseOptimizer optimizer;
  ContrastiveConfig contrastive;
  bool use_projection_head = true;
  std::size_t checkpoint_every_epochs = 0;  // 0 = only the phase-end checkpoint
};

struct FinetuneConfig {
  bool enabled = true;
  std::size_t epochs = 10;
  std::size_t batch_size = 64;
  PhaseOptimizer optimizer{.learning_rate = 0.2, .schedule = PhaseOptimizer::Schedule::kCosine};
  double lambda = 1.0;
  bool cskd = true;
  enum class BaseInit { kMean, kRandom };
  BaseInit base_init = BaseInit::kMean;
  std::optional<AugmentationConfig> augmentation_override;
};

struct Seeds {
  std::uint64_t data = 1;
  std::uint64_t plan = 2;
  std::uint64_t init = 3;
  std::uint64_t train = 4;
  std::uint64_t augmentation = 5;
};

struct ProtocolConfig {
  NetworkConfig model;
  PretrainConfig pretrain;
  FinetuneConfig finetune;
  AugmentationConfig augmentation;  // shared default for both phases
  Seeds seeds;
  std::string output_dir;  // empty: keep checkpoints out of the filesystem
  std::size_t eval_batch_rows = 256;

  void validate() const {
    model.validate();
    pretrain.contrastive.validate();
    if (pretrain.loss != LossVariant::kCe && pretrain.batch_size < 2) {
      throw ConfigError("contrastive pre-training needs batch_size >= 2");
    }
    if (pretrain.batch_size == 0 || finetune.batch_size == 0) {
      throw ConfigError("batch sizes must be positive");
    }
    if (finetune.lambda < 0.0) throw ConfigError("finetune lambda must be >= 0");
    augmentation.validate();
    if (finetune.augmentation_override) finetune.augmentation_override->validate();
  }
};

struct SessionEvalEntry {
  std::size_t t = 1;
  double acc_all = 0.0;
  double acc_base = 0.0;
  std::optional<double> acc_new;
  int active_classes = 0;
};

struct RunRecord {
  nlohmann::json resolved_config = nlohmann::json::object();
  std::vector<SessionEvalEntry> sessions;
  std::vector<std::string> checkpoints;
  std::vector<double> pretrain_loss_history;  // per-epoch means
  std::vector<double> finetune_loss_history;
  std::map<std::string, double> phase_seconds;  // stdout only, never serialized

  AccuracyMatrix matrix() const {
    AccuracyMatrix m;
    for (const auto& e : sessions) {
      SessionAccuracy row;
      row.acc_all = e.acc_all;
      row.acc_base = e.acc_base;
      row.acc_new = e.acc_new;
      row.active_classes = e.active_classes;
      m.rows.push_back(row);
    }
    return m;
  }

  // Stable schema: {config, sessions, checkpoints}.
  nlohmann::json to_json() const {
    nlohmann::json j;
    j["config"] = resolved_config;
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& e : sessions) {
      nlohmann::json row = {{"t", e.t},
                            {"acc_all", e.acc_all},
                            {"acc_base", e.acc_base},
                            {"num_active_classes", e.active_classes}};
      if (e.acc_new) {
        row["acc_new"] = *e.acc_new;
      } else {
        row["acc_new"] = nullptr;
      }
      arr.push_back(row);
    }
    j["sessions"] = std::move(arr);
    j["checkpoints"] = checkpoints;
    return j;
  }
};

namespace detail {

inline std::vector<LabeledSample> gather_samples(const Dataset& ds, const std::vector<std::size_t>& order,
                                                 std::size_t begin, std::size_t end) {
  std::vector<LabeledSample> out;
  out.reserve(end - begin);
  for (std::size_t i = begin; i < end; ++i) out.push_back(ds.samples[order[i]]);
  return out;
}

inline std::map<int, std::size_t> column_map(const std::vector<int>& classes) {
  std::map<int, std::size_t> out;
  for (std::size_t i = 0; i < classes.size(); ++i) out[classes[i]] = i;
  return out;
}

inline void check_loss_finite(double loss, const char* phase, std::size_t epoch, std::size_t batch) {
  if (!std::isfinite(loss)) {
    throw NumericError(std::string(phase) + ": non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                       std::to_string(batch));
  }
}

inline std::string checkpoint_path(const std::string& dir, const std::string& tag) {
  return (std::filesystem::path(dir) / ("checkpoint_" + tag + ".json")).string();
}

inline void maybe_checkpoint(const Network& net, const ProtocolConfig& cfg, const std::string& tag,
                             RunRecord& record) {
  if (cfg.output_dir.empty()) return;
  std::filesystem::create_directories(cfg.output_dir);
  std::string path = checkpoint_path(cfg.output_dir, tag);
  net.save(path);
  record.checkpoints.push_back(path);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Phase 1: feature extractor pre-training on the base session.
// ---------------------------------------------------------------------------

inline void pretrain(Network& net, const Dataset& ds, const SessionPlan& plan, const ProtocolConfig& cfg,
                     RunRecord& record) {
  cfg.validate();
  const PretrainConfig& pc = cfg.pretrain;
  std::vector<std::size_t> train_idx = plan.session_train_indices(1);
  if (train_idx.empty()) throw CapacityError("pretrain: base session has no training data");
  if (pc.epochs == 0) {
    detail::maybe_checkpoint(net, cfg, "after_pretrain", record);
    return;
  }

  bool contrastive = pc.loss != LossVariant::kCe;
  std::vector<std::string> trainable = net.extractor_param_names();
  if (contrastive && pc.use_projection_head) {
    auto head = net.head_param_names();
    trainable.insert(trainable.end(), head.begin(), head.end());
  }

  std::vector<int> base_classes = plan.base_classes;
  std::map<int, std::size_t> col_of_class = detail::column_map(base_classes);
  const std::string kPretrainClf = "classifier.pretrain";
  if (!contrastive) {
    std::size_t d = net.config().feature_dim();
    Tensor clf = xavier_uniform_init({base_classes.size(), d},
                                     combine_seed(cfg.seeds.init, hash_name(kPretrainClf)), d, base_classes.size());
    net.params().add(kPretrainClf, std::move(clf));
    trainable.push_back(kPretrainClf);
  }

  std::size_t steps_per_epoch = (train_idx.size() + pc.batch_size - 1) / pc.batch_size;
  OptimizerConfig opt = pc.optimizer.resolve(steps_per_epoch, pc.epochs * steps_per_epoch);

  AugmentationConfig aug = cfg.augmentation;
  aug.seed = combine_seed(cfg.seeds.augmentation, 0x707265ULL);

  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < pc.epochs; ++epoch) {
    std::vector<std::size_t> order = train_idx;
    Rng(combine_seed(cfg.seeds.train, 0x7072652dULL, epoch)).shuffle(order);
    double epoch_loss = 0.0;
    for (std::size_t b = 0; b * pc.batch_size < order.size(); ++b) {
      std::size_t lo = b * pc.batch_size;
      std::size_t hi = std::min(order.size(), lo + pc.batch_size);
      std::vector<LabeledSample> samples = detail::gather_samples(ds, order, lo, hi);

      Graph g;
      GraphBind bind = bind_params(g, net.params(), trainable);
      Var loss;
      if (contrastive) {
        MultiViewBatch batch = build_multiview_batch(samples, pc.contrastive.views, aug, step, ds.grid);
        Var z = forward_features_graph(g, net.config(), bind, batch.feature_matrix());
        Var proj = pc.use_projection_head ? forward_projection_graph(g, net.config(), bind, z) : z;
        switch (pc.loss) {
          case LossVariant::kBsc:
            loss = bsc_loss(g, batch, proj, pc.contrastive);
            break;
          case LossVariant::kSupCon:
            loss = supcon_loss(g, batch, proj, pc.contrastive.tau);
            break;
          case LossVariant::kSimClr:
            loss = simclr_loss(g, batch, proj, pc.contrastive.tau);
            break;
          default:
            throw ConfigError("unexpected loss variant");
        }
      } else {
        Tensor X({samples.size(), ds.d_in});
        std::vector<int> labels(samples.size());
        for (std::size_t i = 0; i < samples.size(); ++i) {
          auto feats = augment(samples[i], aug, step, ds.grid);
          for (std::size_t j = 0; j < ds.d_in; ++j) X.at(i, j) = feats[j];
          labels[i] = samples[i].label;
        }
        Var z = forward_features_graph(g, net.config(), bind, X);
        Var logits = classifier_logits_graph(g, net.config(), z, bind.at(kPretrainClf));
        loss = ce_loss_graph(g, logits, labels, col_of_class);
      }

      double value = g.value(loss)[0];
      detail::check_loss_finite(value, "pretrain", epoch, b);
      epoch_loss += value;
      net.params().zero_grads();
      g.backward(loss);
      harvest_grads(net.params(), bind);
      sgd_step(net.params(), opt, step, trainable);
      ++step;
    }
    record.pretrain_loss_history.push_back(epoch_loss / static_cast<double>(steps_per_epoch));
    if (pc.checkpoint_every_epochs > 0 && (epoch + 1) % pc.checkpoint_every_epochs == 0 && epoch + 1 < pc.epochs) {
      char tag[48];
      std::snprintf(tag, sizeof(tag), "pretrain_epoch_%05zu", epoch + 1);
      detail::maybe_checkpoint(net, cfg, tag, record);
    }
  }
  if (!contrastive) net.params().remove(kPretrainClf);  // scratch classifiers only shape theta
  detail::maybe_checkpoint(net, cfg, "after_pretrain", record);
}

// ---------------------------------------------------------------------------
// Base classifier initialization between phase 1 and phase 2.
// ---------------------------------------------------------------------------

inline void init_base_classifiers(Network& net, const Dataset& ds, const SessionPlan& plan,
                                  const ProtocolConfig& cfg) {
  net.bank().clear();
  if (cfg.finetune.base_init == FinetuneConfig::BaseInit::kMean) {
    init_classifiers_from_means(net, ds, plan.train_ids_for(plan.base_classes, false));
  } else {
    init_classifiers_random(net, plan.base_classes, combine_seed(cfg.seeds.init, 0x72626349ULL));
  }
}

// ---------------------------------------------------------------------------
// Phase 2: fine-tuning theta and the base classifiers; the projection head
// is untouched.
// ---------------------------------------------------------------------------

inline void finetune(Network& net, const Dataset& ds, const SessionPlan& plan, const ProtocolConfig& cfg,
                     RunRecord& record) {
  cfg.validate();
  const FinetuneConfig& fc = cfg.finetune;
  for (int c : plan.base_classes) {
    if (!net.bank().has(c)) {
      throw ConfigError("finetune: base classifiers must be initialized first");
    }
  }
  if (!fc.enabled || fc.epochs == 0) {
    detail::maybe_checkpoint(net, cfg, "after_finetune", record);
    return;
  }

  std::vector<std::size_t> train_idx = plan.session_train_indices(1);
  std::vector<int> base_classes = plan.base_classes;
  std::map<int, std::size_t> col_of_class = detail::column_map(base_classes);

  const std::string kBaseClf = "classifier.base";
  net.params().add(kBaseClf, net.bank().matrix(base_classes));
  std::vector<std::string> trainable = net.extractor_param_names();
  trainable.push_back(kBaseClf);

  std::size_t steps_per_epoch = (train_idx.size() + fc.batch_size - 1) / fc.batch_size;
  OptimizerConfig opt = fc.optimizer.resolve(steps_per_epoch, fc.epochs * steps_per_epoch);

  AugmentationConfig aug = fc.augmentation_override ? *fc.augmentation_override : cfg.augmentation;
  aug.seed = combine_seed(cfg.seeds.augmentation, 0x667454ULL);
  // fine-tuning operates on the same multi-view structure as pre-training
  int views = cfg.pretrain.contrastive.views;

  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < fc.epochs; ++epoch) {
    // teacher refresh: frozen copy re-snapshotted at each epoch start
    std::map<std::string, Tensor> teacher_params;
    Tensor teacher_clf;
    if (fc.cskd) {
      teacher_params = net.params().snapshot();
      teacher_clf = teacher_params.at(kBaseClf);
    }

    std::vector<std::size_t> order = train_idx;
    Rng(combine_seed(cfg.seeds.train, 0x66742dULL, epoch)).shuffle(order);
    double epoch_loss = 0.0;
    for (std::size_t b = 0; b * fc.batch_size < order.size(); ++b) {
      std::size_t lo = b * fc.batch_size;
      std::size_t hi = std::min(order.size(), lo + fc.batch_size);
      std::vector<LabeledSample> samples = detail::gather_samples(ds, order, lo, hi);
      MultiViewBatch batch = build_multiview_batch(samples, views, aug, step, ds.grid);
      Tensor X = batch.feature_matrix();
      std::vector<int> labels = batch.labels();

      std::optional<Tensor> teacher_pair_probs;
      if (fc.cskd) {
        Graph tg;
        GraphBind tbind = bind_constants(tg, teacher_params);
        Var tz = forward_features_graph(tg, net.config(), tbind, X);
        Var tlogits = classifier_logits_graph(tg, net.config(), tz, tbind.at(kBaseClf));
        Tensor probs = softmax_rows_value(tg.value(tlogits));
        std::vector<std::size_t> pairs = choose_cskd_pairs(batch, combine_seed(cfg.seeds.train, 0x6b64ULL, step));
        Tensor gathered({probs.rows(), probs.cols()});
        for (std::size_t j = 0; j < probs.rows(); ++j) {
          for (std::size_t c = 0; c < probs.cols(); ++c) gathered.at(j, c) = probs.at(pairs[j], c);
        }
        teacher_pair_probs = std::move(gathered);
      }

      Graph g;
      GraphBind bind = bind_params(g, net.params(), trainable);
      Var z = forward_features_graph(g, net.config(), bind, X);
      Var logits = classifier_logits_graph(g, net.config(), z, bind.at(kBaseClf));
      Var loss = finetune_loss_graph(g, logits, labels, col_of_class, teacher_pair_probs, fc.lambda);

      double value = g.value(loss)[0];
      detail::check_loss_finite(value, "finetune", epoch, b);
      epoch_loss += value;
      net.params().zero_grads();
      g.backward(loss);
      harvest_grads(net.params(), bind);
      sgd_step(net.params(), opt, step, trainable);
      ++step;
    }
    record.finetune_loss_history.push_back(epoch_loss / static_cast<double>(steps_per_epoch));
  }

  // sync optimized rows back into the bank
  const Tensor& clf = net.params().param(kBaseClf);
  for (std::size_t r = 0; r < base_classes.size(); ++r) {
    int c = base_classes[r];
    Tensor w({clf.cols()});
    for (std::size_t j = 0; j < clf.cols(); ++j) w[j] = clf.at(r, j);
    std::optional<ClassifierOrigin> new_origin;
    if (net.bank().entry(c).origin == ClassifierOrigin::kMeanInit) {
      new_origin = ClassifierOrigin::kOptimizedFromMean;
    }
    net.bank().set_weight(c, std::move(w), new_origin);
  }
  net.params().remove(kBaseClf);
  detail::maybe_checkpoint(net, cfg, "after_finetune", record);
}

// ---------------------------------------------------------------------------
// Phase 3: update-free incremental sessions.
// ---------------------------------------------------------------------------

inline void run_incremental_session(Network& net, const Dataset& ds, const SessionPlan& plan, std::size_t t) {
  if (t < 2 || t > plan.num_sessions()) {
    throw BoundsError("run_incremental_session: t must lie in [2, T]");
  }
  const std::vector<int>& classes = plan.session_classes(t);
  for (int c : classes) {
    if (net.bank().has(c)) {
      throw ConflictError("session " + std::to_string(t) + " overlaps class " + std::to_string(c));
    }
  }
  init_classifiers_from_means(net, ds, plan.train_ids_for(classes, true));
}

// ---------------------------------------------------------------------------
// Evaluation: accuracy over the three test scopes with predictions among
// all classes seen so far.
// ---------------------------------------------------------------------------

inline double accuracy_over(const Network& net, const Dataset& ds, const std::vector<std::size_t>& test_idx,
                            const std::vector<int>& active, std::size_t batch_rows) {
  if (test_idx.empty()) throw CapacityError("evaluation scope has no test samples");
  std::size_t correct = 0;
  for (std::size_t lo = 0; lo < test_idx.size(); lo += batch_rows) {
    std::size_t hi = std::min(test_idx.size(), lo + batch_rows);
    std::vector<std::size_t> chunk(test_idx.begin() + static_cast<std::ptrdiff_t>(lo),
                                   test_idx.begin() + static_cast<std::ptrdiff_t>(hi));
    Tensor X = ds.feature_matrix(chunk);
    std::vector<int> pred = net.predict(X, active);
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      if (pred[i] == ds.samples[chunk[i]].label) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(test_idx.size());
}

inline SessionEvalEntry evaluate_session(const Network& net, const Dataset& ds, const SessionPlan& plan,
                                         std::size_t t, std::size_t batch_rows = 256) {
  if (t < 1 || t > plan.num_sessions()) throw BoundsError("evaluate_session: t out of range");
  std::vector<int> active = plan.classes_up_to(t);
  for (int c : active) {
    if (!net.bank().has(c)) {
      throw ConfigError("evaluate_session: classifier missing for class " + std::to_string(c));
    }
  }
  SessionEvalEntry entry;
  entry.t = t;
  entry.active_classes = static_cast<int>(active.size());
  entry.acc_all = accuracy_over(net, ds, plan.test_indices_for(active), active, batch_rows);
  entry.acc_base = t == 1 ? entry.acc_all
                          : accuracy_over(net, ds, plan.test_indices_for(plan.base_classes), active, batch_rows);
  if (t > 1) {
    entry.acc_new = accuracy_over(net, ds, plan.test_indices_for(plan.incremental_up_to(t)), active, batch_rows);
  }
  return entry;
}

// ---------------------------------------------------------------------------
// Full protocol: pretrain, classifier init, fine-tune, then update-free
// sessions with per-session evaluation.
// ---------------------------------------------------------------------------

inline RunRecord run_full(Network& net, const Dataset& ds, const SessionPlan& plan, const ProtocolConfig& cfg) {
  cfg.validate();
  RunRecord record;
  auto timed = [&record](const char* name, auto&& fn) {
    auto start = std::chrono::steady_clock::now();
    fn();
    record.phase_seconds[name] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  };

  timed("pretrain", [&] { pretrain(net, ds, plan, cfg, record); });
  timed("base_init", [&] { init_base_classifiers(net, ds, plan, cfg); });
  timed("finetune", [&] { finetune(net, ds, plan, cfg, record); });

  timed("sessions", [&] {
    record.sessions.push_back(evaluate_session(net, ds, plan, 1, cfg.eval_batch_rows));
    for (std::size_t t = 2; t <= plan.num_sessions(); ++t) {
      run_incremental_session(net, ds, plan, t);
      record.sessions.push_back(evaluate_session(net, ds, plan, t, cfg.eval_batch_rows));
    }
  });
  detail::maybe_checkpoint(net, cfg, "final", record);
  return record;
}

}  // namespace fscil
