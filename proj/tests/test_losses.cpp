#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "fscil/losses.hpp"
#include "oracles.hpp"

using namespace fscil;

namespace {

MultiViewBatch structural_batch(const std::vector<int>& labels, int m) {
  std::vector<LabeledSample> samples(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    samples[i].label = labels[i];
    samples[i].source_id = static_cast<std::int64_t>(i);
    samples[i].features = {1.0};
  }
  AugmentationConfig aug;
  return build_multiview_batch(samples, m, aug, 0);
}

std::vector<std::vector<double>> rows_of(const Tensor& m) {
  std::vector<std::vector<double>> out;
  for (std::size_t i = 0; i < m.rows(); ++i) {
    out.emplace_back(m.row(i).values());
  }
  return out;
}

}  // namespace

TEST_CASE("softmax_term hand values") {
  SECTION("two items: single-competitor denominator gives 0") {
    Tensor proj({2, 2}, {1, 0, 1, 0});
    CHECK(softmax_term(proj, 0, 1, 1.0) == Catch::Approx(0.0).margin(1e-15));
  }
  SECTION("sims (1,0,0) to the anchor at tau 1") {
    Tensor proj({4, 3}, {1, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 1});
    double expected = 1.0 - std::log(std::exp(1.0) + 2.0);
    CHECK(softmax_term(proj, 0, 1, 1.0) == Catch::Approx(expected).margin(1e-12));
    CHECK(softmax_term(proj, 0, 1, 1.0) < 0.0);
  }
  SECTION("large tau approaches log(1/|A(j)|)") {
    Tensor proj({4, 3}, {1, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 1});
    double v = softmax_term(proj, 0, 1, 1e6);
    CHECK(v == Catch::Approx(std::log(1.0 / 3.0)).margin(1e-5));
  }
  SECTION("errors") {
    Tensor one({1, 2}, {1, 0});
    CHECK_THROWS_AS(softmax_term(one, 0, 0, 1.0), DegenerateBatchError);
    Tensor proj({3, 2}, {1, 0, 0, 1, 1, 0});
    CHECK_THROWS_AS(softmax_term(proj, 0, 0, 1.0), BoundsError);
    CHECK_THROWS_AS(softmax_term(proj, 0, 5, 1.0), BoundsError);
  }
}

TEST_CASE("bsc hand oracle: orthogonal two-source geometry") {
  MultiViewBatch batch = structural_batch({0, 1}, 2);
  Tensor proj({4, 2}, {1, 0, 0, 1, 1, 0, 0, 1});
  ContrastiveConfig cfg;
  cfg.tau = 1.0;
  cfg.alpha = 1.0;
  cfg.views = 2;
  double expected = std::log(2.0 + std::exp(1.0)) - 1.0;
  CHECK(bsc_loss_value(batch, proj, cfg) == Catch::Approx(expected).margin(1e-10));
}

TEST_CASE("collapsed projections give log(mN-1) for every contrastive loss") {
  MultiViewBatch batch = structural_batch({0, 1, 2}, 3);  // 9 items
  Tensor proj = Tensor::full({9, 4}, 0.5);
  double expected = std::log(8.0);
  ContrastiveConfig cfg;
  cfg.tau = 0.07;
  cfg.alpha = 1.7;
  cfg.views = 3;
  CHECK(bsc_loss_value(batch, proj, cfg) == Catch::Approx(expected).margin(1e-9));
  CHECK(supcon_loss_value(batch, proj, 0.3) == Catch::Approx(expected).margin(1e-9));
  CHECK(simclr_loss_value(batch, proj, 0.3) == Catch::Approx(expected).margin(1e-9));
}

TEST_CASE("alpha independence on symmetric geometry (collapsed terms)") {
  MultiViewBatch batch = structural_batch({0, 0, 1, 1}, 2);
  Tensor proj = Tensor::full({8, 3}, 1.0);
  ContrastiveConfig cfg;
  cfg.tau = 0.5;
  cfg.views = 2;
  cfg.alpha = 0.5;
  double base = bsc_loss_value(batch, proj, cfg);
  for (double alpha : {1.0, 2.0, 4.0}) {
    cfg.alpha = alpha;
    CHECK(bsc_loss_value(batch, proj, cfg) == Catch::Approx(base).margin(1e-12));
  }
}

TEST_CASE("supcon equals bsc with alpha 1, bit for bit") {
  Rng rng(404);
  for (int trial = 0; trial < 20; ++trial) {
    std::size_t n = 2 + rng.below(4);
    int m = 2 + static_cast<int>(rng.below(2));
    std::vector<int> labels(n);
    for (auto& l : labels) l = static_cast<int>(rng.below(3));
    MultiViewBatch batch = structural_batch(labels, m);
    auto proj = oracles::random_projections(batch.size(), 5, 900 + trial);
    Tensor P = oracles::to_matrix(proj);
    ContrastiveConfig cfg;
    cfg.tau = 0.2;
    cfg.alpha = 1.0;
    cfg.views = m;
    double a = bsc_loss_value(batch, P, cfg);
    double b = supcon_loss_value(batch, P, 0.2);
    CHECK(a == b);
  }
}

TEST_CASE("contrastive losses match the direct-summation oracle") {
  Rng rng(505);
  for (int trial = 0; trial < 25; ++trial) {
    std::size_t n = 2 + rng.below(4);
    int m = 2 + static_cast<int>(rng.below(2));
    std::vector<int> labels(n);
    for (auto& l : labels) l = static_cast<int>(rng.below(3));
    MultiViewBatch batch = structural_batch(labels, m);
    auto proj = oracles::random_projections(batch.size(), 6, 7000 + trial);
    Tensor P = oracles::to_matrix(proj);
    double tau = 0.15 + 0.2 * rng.uniform();
    double alpha = 0.5 + 2.0 * rng.uniform();

    ContrastiveConfig cfg;
    cfg.tau = tau;
    cfg.alpha = alpha;
    cfg.views = m;
    CHECK(oracles::rel_err(bsc_loss_value(batch, P, cfg),
                           oracles::contrastive_loss(batch, proj, tau, alpha, oracles::ContrastiveMode::kBsc)) < 1e-10);
    CHECK(oracles::rel_err(supcon_loss_value(batch, P, tau),
                           oracles::contrastive_loss(batch, proj, tau, 1.0, oracles::ContrastiveMode::kSupCon)) < 1e-10);
    CHECK(oracles::rel_err(simclr_loss_value(batch, P, tau),
                           oracles::contrastive_loss(batch, proj, tau, 1.0, oracles::ContrastiveMode::kSimClr)) < 1e-10);
  }
}

TEST_CASE("simclr equals supcon when every source has a unique label") {
  MultiViewBatch batch = structural_batch({0, 1, 2, 3}, 2);
  auto proj = oracles::random_projections(batch.size(), 4, 321);
  Tensor P = oracles::to_matrix(proj);
  CHECK(simclr_loss_value(batch, P, 0.4) == Catch::Approx(supcon_loss_value(batch, P, 0.4)).margin(1e-12));
}

TEST_CASE("single-class batch: everything but the anchor is a positive") {
  MultiViewBatch batch = structural_batch({7, 7, 7}, 2);
  auto proj = oracles::random_projections(batch.size(), 4, 55);
  Tensor P = oracles::to_matrix(proj);
  // supcon normalizer is |A(j)| = 5 for every anchor; value matches oracle
  double v = supcon_loss_value(batch, P, 0.3);
  double o = oracles::contrastive_loss(batch, proj, 0.3, 1.0, oracles::ContrastiveMode::kSupCon);
  CHECK(oracles::rel_err(v, o) < 1e-10);
}

TEST_CASE("contrastive losses are non-negative and permutation invariant") {
  Rng rng(606);
  for (int trial = 0; trial < 15; ++trial) {
    std::vector<int> labels = {0, 0, 1, 2};
    MultiViewBatch batch = structural_batch(labels, 2);
    auto proj = oracles::random_projections(batch.size(), 5, 808 + trial);
    Tensor P = oracles::to_matrix(proj);
    ContrastiveConfig cfg;
    cfg.tau = 0.25;
    cfg.alpha = 1.4;
    cfg.views = 2;
    double v = bsc_loss_value(batch, P, cfg);
    CHECK(v >= 0.0);

    // permute items and projection rows together
    std::vector<std::size_t> perm(batch.size());
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
    rng.shuffle(perm);
    MultiViewBatch shuffled = batch;
    Tensor P2({batch.size(), 5});
    for (std::size_t i = 0; i < perm.size(); ++i) {
      shuffled.items[i] = batch.items[perm[i]];
      for (std::size_t j = 0; j < 5; ++j) P2.at(i, j) = P.at(perm[i], j);
    }
    CHECK(bsc_loss_value(shuffled, P2, cfg) == Catch::Approx(v).margin(1e-12));
    CHECK(simclr_loss_value(shuffled, P2, 0.25) ==
          Catch::Approx(simclr_loss_value(batch, P, 0.25)).margin(1e-12));
  }
}

TEST_CASE("bsc is invariant under positive rescaling of projection rows") {
  MultiViewBatch batch = structural_batch({0, 1, 1}, 2);
  auto proj = oracles::random_projections(batch.size(), 6, 2222);
  Tensor P = oracles::to_matrix(proj);
  ContrastiveConfig cfg;
  cfg.tau = 0.3;
  cfg.alpha = 1.2;
  cfg.views = 2;
  double v = bsc_loss_value(batch, P, cfg);
  Rng rng(11);
  Tensor scaled = P;
  for (std::size_t i = 0; i < scaled.rows(); ++i) {
    double c = 0.1 + 5.0 * rng.uniform();
    for (std::size_t j = 0; j < scaled.cols(); ++j) scaled.at(i, j) *= c;
  }
  CHECK(bsc_loss_value(batch, scaled, cfg) == Catch::Approx(v).margin(1e-12));
}

TEST_CASE("monotonicity probe: raising a positives-aug similarity lowers the loss") {
  // random spread-out geometry at tau 1: the anchor-side softmax stays far
  // from saturation, so the derivative sign is determined
  Rng rng(707);
  std::vector<int> labels = {0, 0, 1, 2, 1};
  MultiViewBatch batch = structural_batch(labels, 2);
  std::size_t n = batch.size();
  std::vector<int> item_labels;
  std::vector<std::int64_t> item_sources;
  for (const auto& it : batch.items) {
    item_labels.push_back(it.label);
    item_sources.push_back(it.source_id);
  }
  for (int trial = 0; trial < 10; ++trial) {
    Tensor sims({n, n});
    for (std::size_t i = 0; i < n; ++i) {
      sims.at(i, i) = 1.0;
      for (std::size_t j = i + 1; j < n; ++j) {
        double s = 0.4 * rng.normal();
        s = std::clamp(s, -0.9, 0.9);
        sims.at(i, j) = s;
        sims.at(j, i) = s;
      }
    }
    // pick the anchor's augmented positive pair (0 and its view at index n/2)
    std::size_t j = 0, p = labels.size();  // same source, second view
    for (auto mode : {oracles::ContrastiveMode::kBsc, oracles::ContrastiveMode::kSupCon,
                      oracles::ContrastiveMode::kSimClr}) {
      double before = oracles::contrastive_from_sims(sims, item_labels, item_sources, 1.0, 1.3, mode);
      Tensor bumped = sims;
      bumped.at(j, p) += 0.05;
      bumped.at(p, j) += 0.05;
      double after = oracles::contrastive_from_sims(bumped, item_labels, item_sources, 1.0, 1.3, mode);
      CHECK(after < before);
    }
  }
}

TEST_CASE("cross entropy hand values") {
  LogitDistribution d;
  d.class_ids = {0, 1};
  d.logits = {1.0, 0.0};
  CHECK(cross_entropy_loss(d, 0) == Catch::Approx(std::log(1.0 + std::exp(-1.0))).margin(1e-12));

  LogitDistribution dom;
  dom.class_ids = {0, 1, 2};
  dom.logits = {1000.0, 0.0, 0.0};
  CHECK(cross_entropy_loss(dom, 0) == Catch::Approx(0.0).margin(1e-9));

  LogitDistribution uniform;
  uniform.class_ids = {0, 1, 2, 3, 4};
  uniform.logits = {2.0, 2.0, 2.0, 2.0, 2.0};
  CHECK(cross_entropy_loss(uniform, 3) == Catch::Approx(std::log(5.0)).margin(1e-12));

  CHECK_THROWS_AS(cross_entropy_loss(d, 42), LabelError);
}

TEST_CASE("cskd hand values and teacher gradient isolation") {
  SECTION("teacher equals student gives zero") {
    std::vector<double> logits = {0.7, -0.2, 1.5};
    CHECK(cskd_loss(logits, logits) == Catch::Approx(0.0).margin(1e-12));
  }
  SECTION("hand value for (0.5,0.5) vs (0.75,0.25)") {
    // teacher logits realizing probs (0.5, 0.5); student (0.75, 0.25)
    std::vector<double> teacher = {0.0, 0.0};
    std::vector<double> student = {std::log(0.75), std::log(0.25)};
    double expected = 0.5 * std::log(0.5 / 0.75) + 0.5 * std::log(0.5 / 0.25);
    CHECK(cskd_loss(student, teacher) == Catch::Approx(expected).margin(1e-12));
    CHECK(expected == Catch::Approx(0.1438).margin(5e-4));
  }
  SECTION("always non-negative, zero only at equality") {
    Rng rng(88);
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<double> s(4), t(4);
      for (auto& v : s) v = rng.normal();
      for (auto& v : t) v = rng.normal();
      double kl = cskd_loss(s, t);
      CHECK(kl >= 0.0);
    }
  }
  SECTION("gradients flow only through the student logits") {
    Graph g;
    Tensor student({2, 3}, {0.5, -0.1, 0.2, 0.0, 0.3, -0.4});
    Tensor teacher_probs({2, 3}, {0.2, 0.5, 0.3, 0.6, 0.1, 0.3});
    Var vs = g.leaf(student);
    Var loss = cskd_loss_graph(g, vs, teacher_probs);
    g.backward(loss);
    double grad_norm = 0.0;
    for (std::size_t i = 0; i < g.grad(vs).numel(); ++i) grad_norm += std::fabs(g.grad(vs)[i]);
    CHECK(grad_norm > 0.0);  // the only differentiable input is the student
    CHECK(g.value(loss)[0] >= 0.0);
  }
  SECTION("length mismatch") {
    CHECK_THROWS_AS(cskd_loss({1.0, 2.0}, {1.0}), DimensionError);
  }
}

TEST_CASE("finetune composite: lambda 0 reduces to cross entropy") {
  Graph g;
  Tensor logits({3, 2}, {1.0, 0.0, 0.5, 0.5, -0.3, 0.9});
  std::vector<int> labels = {0, 1, 1};
  std::map<int, std::size_t> cols = {{0, 0}, {1, 1}};
  Tensor teacher = Tensor::full({3, 2}, 0.5);
  Var v = g.leaf(logits);
  Var with_kd = finetune_loss_graph(g, v, labels, cols, teacher, 0.0);
  Var ce_only = ce_loss_graph(g, v, labels, cols);
  CHECK(g.value(with_kd)[0] == g.value(ce_only)[0]);
}

TEST_CASE("finetune composite: identical teacher distribution adds nothing") {
  Graph g;
  Tensor logits({2, 2}, {0.3, -0.3, 1.0, 0.2});
  std::vector<int> labels = {0, 1};
  std::map<int, std::size_t> cols = {{0, 0}, {1, 1}};
  Tensor teacher = softmax_rows_value(logits);  // teacher == student distribution
  Var v = g.leaf(logits);
  double composite = g.value(finetune_loss_graph(g, v, labels, cols, teacher, 1.0))[0];
  double ce = g.value(ce_loss_graph(g, v, labels, cols))[0];
  CHECK(composite == Catch::Approx(ce).margin(1e-12));
}
