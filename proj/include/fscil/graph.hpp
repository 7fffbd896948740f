#pragma once

#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <limits>
#include <utility>
#include <vector>

#include "fscil/error.hpp"
#include "fscil/tensor.hpp"

namespace fscil {

struct Var {
  std::size_t id = static_cast<std::size_t>(-1);
};

// Reverse-mode tape. Nodes are appended in evaluation order, so a single
// reverse sweep over the arena is a valid topological backward pass. Graphs
// are built per training step and discarded.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var leaf(Tensor value) { return push(std::move(value), {}); }

  // Same storage as leaf; named separately where a value is data, not a
  // parameter, so call sites read clearly.
  Var constant(Tensor value) { return push(std::move(value), {}); }

  const Tensor& value(Var v) const { return nodes_[v.id].value; }
  const Tensor& grad(Var v) const { return nodes_[v.id].grad; }

  Var matmul(Var a, Var b) {
    Tensor c = matmul_nn_value(value(a), value(b));
    Var out = push(std::move(c), [this, a, b](const Tensor& g) {
      add_grad(a, matmul_nt_value(g, value(b)));
      add_grad(b, matmul_tn_value(value(a), g));
    });
    return out;
  }

  // a * b^T; used for similarity matrices (possibly with a == b).
  Var matmul_nt(Var a, Var b) {
    Tensor c = matmul_nt_value(value(a), value(b));
    Var out = push(std::move(c), [this, a, b](const Tensor& g) {
      add_grad(a, matmul_nn_value(g, value(b)));
      add_grad(b, matmul_tn_value(g, value(a)));
    });
    return out;
  }

  Var transpose(Var a) {
    const Tensor& x = value(a);
    if (x.rank() != 2) throw DimensionError("transpose: rank-2 only");
    Tensor y({x.cols(), x.rows()});
    for (std::size_t i = 0; i < x.rows(); ++i)
      for (std::size_t j = 0; j < x.cols(); ++j) y.at(j, i) = x.at(i, j);
    return push(std::move(y), [this, a](const Tensor& g) {
      const Tensor& xa = value(a);
      Tensor gx(xa.shape());
      for (std::size_t i = 0; i < xa.rows(); ++i)
        for (std::size_t j = 0; j < xa.cols(); ++j) gx.at(i, j) = g.at(j, i);
      add_grad(a, std::move(gx));
    });
  }

  Var add(Var a, Var b) {
    const Tensor& x = value(a);
    const Tensor& y = value(b);
    if (!x.same_shape(y)) throw DimensionError("add: shape mismatch");
    Tensor out(x.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = x[i] + y[i];
    return push(std::move(out), [this, a, b](const Tensor& g) {
      add_grad(a, g);
      add_grad(b, g);
    });
  }

  Var sub(Var a, Var b) {
    const Tensor& x = value(a);
    const Tensor& y = value(b);
    if (!x.same_shape(y)) throw DimensionError("sub: shape mismatch");
    Tensor out(x.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = x[i] - y[i];
    return push(std::move(out), [this, a, b](const Tensor& g) {
      add_grad(a, g);
      Tensor neg(g.shape());
      for (std::size_t i = 0; i < g.numel(); ++i) neg[i] = -g[i];
      add_grad(b, std::move(neg));
    });
  }

  Var mul(Var a, Var b) {
    const Tensor& x = value(a);
    const Tensor& y = value(b);
    if (!x.same_shape(y)) throw DimensionError("mul: shape mismatch");
    Tensor out(x.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = x[i] * y[i];
    return push(std::move(out), [this, a, b](const Tensor& g) {
      const Tensor& xv = value(a);
      const Tensor& yv = value(b);
      Tensor ga(g.shape()), gb(g.shape());
      for (std::size_t i = 0; i < g.numel(); ++i) {
        ga[i] = g[i] * yv[i];
        gb[i] = g[i] * xv[i];
      }
      add_grad(a, std::move(ga));
      add_grad(b, std::move(gb));
    });
  }

  Var scale(Var a, double c) {
    const Tensor& x = value(a);
    Tensor out(x.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = x[i] * c;
    return push(std::move(out), [this, a, c](const Tensor& g) {
      Tensor ga(g.shape());
      for (std::size_t i = 0; i < g.numel(); ++i) ga[i] = g[i] * c;
      add_grad(a, std::move(ga));
    });
  }

  Var add_scalar(Var a, double c) {
    const Tensor& x = value(a);
    Tensor out(x.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = x[i] + c;
    return push(std::move(out), [this, a](const Tensor& g) { add_grad(a, g); });
  }

  // rows of a get b added; b is a vector of length cols(a)
  Var add_rowvec(Var a, Var b) {
    const Tensor& x = value(a);
    const Tensor& v = value(b);
    if (x.rank() != 2 || v.numel() != x.cols()) {
      throw DimensionError("add_rowvec: need matrix plus matching row vector");
    }
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.rows(); ++i)
      for (std::size_t j = 0; j < x.cols(); ++j) out.at(i, j) = x.at(i, j) + v[j];
    return push(std::move(out), [this, a, b](const Tensor& g) {
      add_grad(a, g);
      Tensor gb({g.cols()});
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < g.cols(); ++j) gb[j] += g.at(i, j);
      add_grad(b, std::move(gb));
    });
  }

  // max(0, x); subgradient at 0 is 0
  Var relu(Var a) {
    const Tensor& x = value(a);
    Tensor out(x.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
    return push(std::move(out), [this, a](const Tensor& g) {
      const Tensor& xv = value(a);
      Tensor ga(g.shape());
      for (std::size_t i = 0; i < g.numel(); ++i) ga[i] = xv[i] > 0.0 ? g[i] : 0.0;
      add_grad(a, std::move(ga));
    });
  }

  // Each row divided by its euclidean norm. Rejects rows with norm below
  // the degeneracy floor.
  Var l2_normalize_rows(Var a) {
    const Tensor& x = value(a);
    if (x.rank() != 2) throw DimensionError("l2_normalize_rows: rank-2 only");
    std::vector<double> norms(x.rows());
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.rows(); ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < x.cols(); ++j) s += x.at(i, j) * x.at(i, j);
      double r = std::sqrt(s);
      if (r <= kDegenerateNormFloor) {
        throw DegenerateVectorError("l2_normalize_rows: row " + std::to_string(i) + " has near-zero norm");
      }
      norms[i] = r;
      for (std::size_t j = 0; j < x.cols(); ++j) out.at(i, j) = x.at(i, j) / r;
    }
    std::size_t out_id = nodes_.size();
    return push(std::move(out), [this, a, norms, out_id](const Tensor& g) {
      const Tensor& y = nodes_[out_id].value;
      Tensor ga(g.shape());
      for (std::size_t i = 0; i < g.rows(); ++i) {
        double gy = 0.0;
        for (std::size_t j = 0; j < g.cols(); ++j) gy += g.at(i, j) * y.at(i, j);
        for (std::size_t j = 0; j < g.cols(); ++j) {
          ga.at(i, j) = (g.at(i, j) - y.at(i, j) * gy) / norms[i];
        }
      }
      add_grad(a, std::move(ga));
    });
  }

  // Row-wise log-softmax over the entries where mask > 0.5, with max
  // subtraction. Masked-out entries are 0 in the output and receive no
  // gradient. Every row must have at least one active entry.
  Var masked_log_softmax_rows(Var a, const Tensor& mask) {
    const Tensor& x = value(a);
    if (x.rank() != 2 || !x.same_shape(mask)) {
      throw DimensionError("masked_log_softmax_rows: mask must match matrix shape");
    }
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.rows(); ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < x.cols(); ++j) {
        if (mask.at(i, j) > 0.5 && x.at(i, j) > mx) mx = x.at(i, j);
      }
      if (!std::isfinite(mx)) {
        throw DegenerateBatchError("masked_log_softmax_rows: row " + std::to_string(i) + " has empty mask");
      }
      double s = 0.0;
      for (std::size_t j = 0; j < x.cols(); ++j) {
        if (mask.at(i, j) > 0.5) s += std::exp(x.at(i, j) - mx);
      }
      double lse = mx + std::log(s);
      for (std::size_t j = 0; j < x.cols(); ++j) {
        out.at(i, j) = mask.at(i, j) > 0.5 ? x.at(i, j) - lse : 0.0;
      }
    }
    std::size_t out_id = nodes_.size();
    return push(std::move(out), [this, a, mask, out_id](const Tensor& g) {
      const Tensor& y = nodes_[out_id].value;
      Tensor ga(g.shape());
      for (std::size_t i = 0; i < g.rows(); ++i) {
        double gsum = 0.0;
        for (std::size_t j = 0; j < g.cols(); ++j) {
          if (mask.at(i, j) > 0.5) gsum += g.at(i, j);
        }
        for (std::size_t j = 0; j < g.cols(); ++j) {
          if (mask.at(i, j) > 0.5) {
            ga.at(i, j) = g.at(i, j) - std::exp(y.at(i, j)) * gsum;
          }
        }
      }
      add_grad(a, std::move(ga));
    });
  }

  // elementwise product with a fixed tensor (no gradient into the weights)
  Var mul_const(Var a, Tensor weights) {
    const Tensor& x = value(a);
    if (!x.same_shape(weights)) throw DimensionError("mul_const: shape mismatch");
    Tensor out(x.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = x[i] * weights[i];
    return push(std::move(out), [this, a, w = std::move(weights)](const Tensor& g) {
      Tensor ga(g.shape());
      for (std::size_t i = 0; i < g.numel(); ++i) ga[i] = g[i] * w[i];
      add_grad(a, std::move(ga));
    });
  }

  Var sum(Var a) {
    const Tensor& x = value(a);
    double s = 0.0;
    for (std::size_t i = 0; i < x.numel(); ++i) s += x[i];
    return push(Tensor::scalar(s), [this, a](const Tensor& g) {
      const Tensor& xv = value(a);
      add_grad(a, Tensor::full(xv.shape(), g[0]));
    });
  }

  Var mean(Var a) {
    const Tensor& x = value(a);
    double inv = 1.0 / static_cast<double>(x.numel());
    double s = 0.0;
    for (std::size_t i = 0; i < x.numel(); ++i) s += x[i];
    return push(Tensor::scalar(s * inv), [this, a, inv](const Tensor& g) {
      const Tensor& xv = value(a);
      add_grad(a, Tensor::full(xv.shape(), g[0] * inv));
    });
  }

  // Reverse sweep from a scalar node. Gradients of all nodes are available
  // afterwards via grad().
  void backward(Var loss) {
    if (value(loss).numel() != 1) throw DimensionError("backward: loss must be scalar");
    for (auto& n : nodes_) n.grad = Tensor::zeros(n.value.shape());
    nodes_[loss.id].grad[0] = 1.0;
    for (std::size_t i = nodes_.size(); i-- > 0;) {
      if (nodes_[i].backprop) nodes_[i].backprop(nodes_[i].grad);
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::function<void(const Tensor&)> backprop;
  };

  Var push(Tensor value, std::function<void(const Tensor&)> backprop) {
    nodes_.push_back(Node{std::move(value), Tensor{}, std::move(backprop)});
    return Var{nodes_.size() - 1};
  }

  void add_grad(Var v, const Tensor& g) {
    Tensor& dst = nodes_[v.id].grad;
    for (std::size_t i = 0; i < dst.numel(); ++i) dst[i] += g[i];
  }

  std::deque<Node> nodes_;
};

}  // namespace fscil
