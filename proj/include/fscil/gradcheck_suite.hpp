#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "fscil/batching.hpp"
#include "fscil/data.hpp"
#include "fscil/error.hpp"
#include "fscil/gradcheck.hpp"
#include "fscil/losses.hpp"
#include "fscil/model.hpp"

namespace fscil {

// Gradient checks of every loss variant composed through a small extractor
// (+ head for the contrastive losses) on a seeded multi-view batch.
struct GradcheckSuiteConfig {
  std::uint64_t seed = 7;
  double eps = 1e-5;
  double sample_fraction = 1.0;
  double threshold = 1e-4;
  NetworkConfig model{.d_in = 6, .extractor_dims = {10, 8, 8}, .head_hidden = 8, .head_dim = 4, .tau_ce = 0.1};
  std::size_t batch_sources = 4;
  int views = 3;
  std::size_t num_classes = 3;
  double tau = 0.2;
  double alpha = 1.3;
  double lambda = 1.0;
  double corruption_scale = 1.0;  // != 1 deliberately corrupts analytic grads
  std::vector<std::string> losses = {"bsc", "supcon", "simclr", "ce", "cskd", "finetune"};
};

struct GradcheckCase {
  std::string loss;
  GradCheckResult result;
  bool passed = false;
};

inline std::vector<GradcheckCase> run_gradcheck_suite(const GradcheckSuiteConfig& cfg) {
  cfg.model.validate();
  if (cfg.batch_sources == 0 || cfg.num_classes == 0) {
    throw ConfigError("gradcheck suite: batch_sources and num_classes must be positive");
  }
  if (cfg.views < 2) throw ConfigError("gradcheck suite: needs m >= 2 views");

  // seeded source samples, labels cycling over the class set
  std::vector<LabeledSample> samples(cfg.batch_sources);
  Rng rng(combine_seed(cfg.seed, 0x736d70ULL));
  for (std::size_t i = 0; i < samples.size(); ++i) {
    samples[i].label = static_cast<int>(i % cfg.num_classes);
    samples[i].source_id = static_cast<std::int64_t>(i);
    samples[i].features.resize(cfg.model.d_in);
    for (auto& v : samples[i].features) v = rng.normal();
  }
  AugmentationConfig aug;
  AugmentationOp noise;
  noise.kind = AugmentationOp::Kind::kGaussianNoise;
  noise.sigma = 0.3;
  aug.ops = {noise};
  aug.seed = combine_seed(cfg.seed, 0x617567ULL);
  MultiViewBatch batch = build_multiview_batch(samples, cfg.views, aug, 0);
  Tensor X = batch.feature_matrix();
  std::vector<int> labels = batch.labels();

  std::vector<int> classes;
  for (std::size_t c = 0; c < cfg.num_classes; ++c) classes.push_back(static_cast<int>(c));
  std::map<int, std::size_t> col_of_class;
  for (std::size_t c = 0; c < classes.size(); ++c) col_of_class[classes[c]] = c;

  ContrastiveConfig ccfg;
  ccfg.tau = cfg.tau;
  ccfg.alpha = cfg.alpha;
  ccfg.views = cfg.views;

  auto corrupt = [&cfg](LossFn inner) -> LossFn {
    if (cfg.corruption_scale == 1.0) return inner;
    double scale = cfg.corruption_scale;
    return [inner, scale](ParamStore& store, bool with_grads) {
      double v = inner(store, with_grads);
      if (with_grads) {
        for (const auto& name : store.names()) {
          Tensor& g = store.grad(name);
          for (std::size_t i = 0; i < g.numel(); ++i) g[i] *= scale;
        }
      }
      return v;
    };
  };

  std::vector<GradcheckCase> out;
  for (const std::string& loss_name : cfg.losses) {
    Network net(cfg.model);
    net.init(combine_seed(cfg.seed, hash_name(loss_name)));
    const std::string kClf = "classifier.base";
    bool needs_classifiers = loss_name == "ce" || loss_name == "cskd" || loss_name == "finetune";
    if (needs_classifiers) {
      std::size_t d = cfg.model.feature_dim();
      net.params().add(kClf, xavier_uniform_init({classes.size(), d}, combine_seed(cfg.seed, 0x636c66ULL), d,
                                                 classes.size()));
    }

    // frozen teacher for the cs-kd paths: a value copy taken before the check
    std::map<std::string, Tensor> teacher = net.params().snapshot();
    std::vector<std::size_t> pairs;
    if (loss_name == "cskd" || loss_name == "finetune") {
      pairs = choose_cskd_pairs(batch, combine_seed(cfg.seed, 0x70ULL));
    }

    NetworkConfig model_cfg = cfg.model;
    LossFn lossfn = [&, loss_name](ParamStore& store, bool with_grads) -> double {
      Graph g;
      GraphBind bind = bind_params(g, store, store.names());
      Var z = forward_features_graph(g, model_cfg, bind, X);
      Var loss;
      if (loss_name == "bsc") {
        loss = bsc_loss(g, batch, forward_projection_graph(g, model_cfg, bind, z), ccfg);
      } else if (loss_name == "supcon") {
        loss = supcon_loss(g, batch, forward_projection_graph(g, model_cfg, bind, z), ccfg.tau);
      } else if (loss_name == "simclr") {
        loss = simclr_loss(g, batch, forward_projection_graph(g, model_cfg, bind, z), ccfg.tau);
      } else {
        Var logits = classifier_logits_graph(g, model_cfg, z, bind.at(kClf));
        if (loss_name == "ce") {
          loss = ce_loss_graph(g, logits, labels, col_of_class);
        } else {
          Graph tg;
          GraphBind tbind = bind_constants(tg, teacher);
          Var tz = forward_features_graph(tg, model_cfg, tbind, X);
          Var tlogits = classifier_logits_graph(tg, model_cfg, tz, tbind.at(kClf));
          Tensor probs = softmax_rows_value(tg.value(tlogits));
          Tensor gathered({probs.rows(), probs.cols()});
          for (std::size_t j = 0; j < probs.rows(); ++j) {
            for (std::size_t c = 0; c < probs.cols(); ++c) gathered.at(j, c) = probs.at(pairs[j], c);
          }
          if (loss_name == "cskd") {
            loss = cskd_loss_graph(g, logits, gathered);
          } else if (loss_name == "finetune") {
            loss = finetune_loss_graph(g, logits, labels, col_of_class, gathered, cfg.lambda);
          } else {
            throw ConfigError("gradcheck suite: unknown loss '" + loss_name + "'");
          }
        }
      }
      double v = g.value(loss)[0];
      if (with_grads) {
        g.backward(loss);
        harvest_grads(store, bind);
      }
      return v;
    };

    GradcheckCase c;
    c.loss = loss_name;
    c.result = gradcheck(corrupt(lossfn), net.params(), cfg.eps, cfg.sample_fraction, combine_seed(cfg.seed, 0x6763ULL));
    c.passed = c.result.max_rel_error <= cfg.threshold;
    out.push_back(std::move(c));
  }
  return out;
}

}  // namespace fscil
