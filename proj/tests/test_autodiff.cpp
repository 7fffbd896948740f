#include <catch2/catch_amalgamated.hpp>

#include "fscil/graph.hpp"
#include "fscil/tensor.hpp"
#include "oracles.hpp"

using namespace fscil;

namespace {

Tensor random_tensor(std::vector<std::size_t> shape, std::uint64_t seed, double scale = 1.0) {
  Tensor t(std::move(shape));
  Rng rng(seed);
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = scale * rng.normal();
  return t;
}

// Compares the graph gradient of sum(weights .* op(x)) against central
// differences; the fixed random weights make the check sensitive to every
// output coordinate.
void check_unary(const std::function<Var(Graph&, Var)>& op, const Tensor& x, double tol = 1e-6) {
  Tensor weights = random_tensor({1}, 1234);  // resized lazily below
  {
    Graph g;
    Var vx = g.leaf(x);
    Var y = op(g, vx);
    weights = random_tensor(g.value(y).shape(), 999);
  }
  auto eval = [&](const Tensor& probe) {
    Graph g;
    Var vx = g.leaf(probe);
    Var y = op(g, vx);
    Var loss = g.sum(g.mul_const(y, weights));
    return g.value(loss)[0];
  };
  Graph g;
  Var vx = g.leaf(x);
  Var y = op(g, vx);
  Var loss = g.sum(g.mul_const(y, weights));
  g.backward(loss);
  Tensor numeric = oracles::fd_grad(eval, x);
  CHECK(oracles::max_rel_err(g.grad(vx), numeric) < tol);
}

}  // namespace

TEST_CASE("matmul backward matches finite differences") {
  Tensor a = random_tensor({3, 4}, 21);
  Tensor b = random_tensor({4, 2}, 22);
  Tensor w = random_tensor({3, 2}, 23);

  auto eval_a = [&](const Tensor& probe) {
    Graph g;
    Var loss = g.sum(g.mul_const(g.matmul(g.leaf(probe), g.leaf(b)), w));
    return g.value(loss)[0];
  };
  auto eval_b = [&](const Tensor& probe) {
    Graph g;
    Var loss = g.sum(g.mul_const(g.matmul(g.leaf(a), g.leaf(probe)), w));
    return g.value(loss)[0];
  };

  Graph g;
  Var va = g.leaf(a);
  Var vb = g.leaf(b);
  Var loss = g.sum(g.mul_const(g.matmul(va, vb), w));
  g.backward(loss);
  CHECK(oracles::max_rel_err(g.grad(va), oracles::fd_grad(eval_a, a)) < 1e-5);
  CHECK(oracles::max_rel_err(g.grad(vb), oracles::fd_grad(eval_b, b)) < 1e-5);
}

TEST_CASE("matmul_nt with shared operand accumulates both paths") {
  Tensor h = random_tensor({4, 3}, 31);
  auto eval = [&](const Tensor& probe) {
    Graph g;
    Var v = g.leaf(probe);
    Var s = g.matmul_nt(v, v);
    return g.value(g.sum(g.mul(s, s)))[0];
  };
  Graph g;
  Var v = g.leaf(h);
  Var s = g.matmul_nt(v, v);
  Var loss = g.sum(g.mul(s, s));
  g.backward(loss);
  CHECK(oracles::max_rel_err(g.grad(v), oracles::fd_grad(eval, h)) < 1e-5);
}

TEST_CASE("relu forward and backward") {
  Tensor x({3}, {-1.0, 0.0, 2.0});
  Graph g;
  Var v = g.leaf(x);
  Var y = g.relu(v);
  CHECK(g.value(y).values() == std::vector<double>{0.0, 0.0, 2.0});

  Tensor all_neg({4}, {-3, -2, -1, -0.5});
  Graph g2;
  CHECK(g2.value(g2.relu(g2.leaf(all_neg))).values() == std::vector<double>{0, 0, 0, 0});

  // gradient mask away from the kink
  Tensor xr = random_tensor({5, 3}, 41);
  for (std::size_t i = 0; i < xr.numel(); ++i) {
    if (std::fabs(xr[i]) < 0.05) xr[i] = 0.1;  // keep clear of 0 for finite differences
  }
  check_unary([](Graph& g, Var v) { return g.relu(v); }, xr, 1e-5);
}

TEST_CASE("elementwise and broadcast primitives match finite differences") {
  Tensor x = random_tensor({4, 3}, 51);
  check_unary([](Graph& g, Var v) { return g.scale(v, -2.5); }, x);
  check_unary([](Graph& g, Var v) { return g.add_scalar(v, 3.0); }, x);
  check_unary([](Graph& g, Var v) { return g.transpose(v); }, x);

  Tensor other = random_tensor({4, 3}, 52);
  check_unary([&](Graph& g, Var v) { return g.add(v, g.leaf(other)); }, x);
  check_unary([&](Graph& g, Var v) { return g.sub(g.leaf(other), v); }, x);
  check_unary([&](Graph& g, Var v) { return g.mul(v, g.leaf(other)); }, x);

  Tensor bias = random_tensor({3}, 53);
  check_unary([&](Graph& g, Var v) { return g.add_rowvec(v, g.leaf(bias)); }, x);

  auto eval_bias = [&](const Tensor& probe) {
    Graph g;
    Var y = g.add_rowvec(g.leaf(x), g.leaf(probe));
    Tensor w = random_tensor({4, 3}, 54);
    return g.value(g.sum(g.mul_const(y, w)))[0];
  };
  Graph g;
  Var vb = g.leaf(bias);
  Var y = g.add_rowvec(g.leaf(x), vb);
  Tensor w = random_tensor({4, 3}, 54);
  Var loss = g.sum(g.mul_const(y, w));
  g.backward(loss);
  CHECK(oracles::max_rel_err(g.grad(vb), oracles::fd_grad(eval_bias, bias)) < 1e-6);
}

TEST_CASE("l2_normalize_rows forward and backward") {
  Tensor x({2, 2}, {3, 4, 1, 0});
  Graph g;
  Var y = g.l2_normalize_rows(g.leaf(x));
  CHECK(g.value(y).at(0, 0) == Catch::Approx(0.6));
  CHECK(g.value(y).at(0, 1) == Catch::Approx(0.8));
  for (std::size_t i = 0; i < 2; ++i) {
    double n = std::sqrt(g.value(y).at(i, 0) * g.value(y).at(i, 0) + g.value(y).at(i, 1) * g.value(y).at(i, 1));
    CHECK(std::fabs(n - 1.0) < 1e-12);
  }

  Tensor zero_row({2, 2}, {1, 1, 0, 0});
  Graph g2;
  CHECK_THROWS_AS(g2.l2_normalize_rows(g2.leaf(zero_row)), DegenerateVectorError);

  Tensor xr = random_tensor({5, 4}, 61);
  check_unary([](Graph& g, Var v) { return g.l2_normalize_rows(v); }, xr, 1e-5);
}

TEST_CASE("masked log softmax rows: values and gradient") {
  Tensor x({2, 3}, {1.0, 2.0, 3.0, 0.0, 0.0, 0.0});
  Tensor mask({2, 3}, {1, 1, 0, 1, 1, 1});
  Graph g;
  Var y = g.masked_log_softmax_rows(g.leaf(x), mask);
  // row 0 over columns {0,1}: log softmax of (1,2)
  double lse = std::log(std::exp(1.0) + std::exp(2.0));
  CHECK(g.value(y).at(0, 0) == Catch::Approx(1.0 - lse));
  CHECK(g.value(y).at(0, 1) == Catch::Approx(2.0 - lse));
  CHECK(g.value(y).at(0, 2) == 0.0);
  CHECK(g.value(y).at(1, 0) == Catch::Approx(-std::log(3.0)));

  Tensor empty_mask({1, 2}, {0, 0});
  Tensor row({1, 2}, {1, 2});
  Graph g2;
  CHECK_THROWS_AS(g2.masked_log_softmax_rows(g2.leaf(row), empty_mask), DegenerateBatchError);

  Tensor xr = random_tensor({4, 5}, 71);
  Tensor m({4, 5});
  Rng rng(72);
  for (std::size_t i = 0; i < 4; ++i) {
    m.at(i, rng.below(5)) = 1.0;  // guarantee one active entry
    for (std::size_t j = 0; j < 5; ++j) {
      if (rng.uniform() < 0.7) m.at(i, j) = 1.0;
    }
  }
  check_unary([&](Graph& g, Var v) { return g.masked_log_softmax_rows(v, m); }, xr, 1e-5);
}

TEST_CASE("sum and mean reductions") {
  Tensor x = random_tensor({3, 3}, 81);
  auto eval_sum = [&](const Tensor& probe) {
    Graph g;
    return g.value(g.sum(g.leaf(probe)))[0];
  };
  auto eval_mean = [&](const Tensor& probe) {
    Graph g;
    return g.value(g.mean(g.leaf(probe)))[0];
  };
  {
    Graph g;
    Var v = g.leaf(x);
    Var loss = g.sum(v);
    g.backward(loss);
    CHECK(oracles::max_rel_err(g.grad(v), oracles::fd_grad(eval_sum, x)) < 1e-7);
  }
  {
    Graph g;
    Var v = g.leaf(x);
    Var loss = g.mean(v);
    g.backward(loss);
    CHECK(oracles::max_rel_err(g.grad(v), oracles::fd_grad(eval_mean, x)) < 1e-7);
  }
}

TEST_CASE("backward requires a scalar") {
  Graph g;
  Var v = g.leaf(random_tensor({2, 2}, 91));
  CHECK_THROWS_AS(g.backward(v), DimensionError);
}

TEST_CASE("graph ops are deterministic: same inputs, same outputs") {
  Tensor x = random_tensor({6, 4}, 101);
  auto run = [&]() {
    Graph g;
    Var v = g.leaf(x);
    Var y = g.l2_normalize_rows(g.relu(v));
    Var s = g.matmul_nt(y, y);
    Var loss = g.mean(s);
    g.backward(loss);
    return std::make_pair(g.value(loss)[0], g.grad(v).values());
  };
  auto [l1, g1] = run();
  auto [l2, g2] = run();
  CHECK(l1 == l2);
  CHECK(g1 == g2);
}
