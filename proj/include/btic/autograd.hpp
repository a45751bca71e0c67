// Copyright (c) 2026, The BTIC Authors. All rights reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Minimal tape-free reverse-mode differentiation over dense matrices.
// Every op returns a Var holding its value; when any input requires a
// gradient the op also records its inputs and a backprop closure. Calling
// backward() on a 1x1 Var walks the recorded graph in reverse topological
// order and accumulates gradients into every node that requires one.

#include <btic/common.hpp>

#include <cmath>
#include <functional>
#include <memory>
#include <optional>
#include <unordered_set>
#include <utility>
#include <vector>

namespace btic::ag {

struct Node {
  Matrix value;
  Matrix grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backprop;

  void accumulate(const Matrix& g) {
    if (grad.size() == 0)
      grad = g;
    else
      grad += g;
  }
  void zero_grad() { grad.resize(0, 0); }
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  const Matrix& value() const { return node_->value; }
  Matrix& mutable_value() { return node_->value; }
  // Zero matrix of the value's shape when no gradient reached this node.
  Matrix grad() const {
    if (node_->grad.size() == 0) return Matrix::Zero(rows(), cols());
    return node_->grad;
  }
  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }
  double scalar() const { return node_->value(0, 0); }
  bool requires_grad() const { return node_->requires_grad; }
  bool defined() const { return static_cast<bool>(node_); }
  void zero_grad() { node_->zero_grad(); }

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& shared() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

inline Var constant(Matrix value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  return Var(std::move(n));
}

inline Var leaf(Matrix value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = true;
  return Var(std::move(n));
}

inline Var scalar(double v) { return constant(Matrix::Constant(1, 1, v)); }

// Inputs and the backprop closure are kept only if some input needs a
// gradient, so evaluation-mode forward passes build no graph.
inline Var make_op(Matrix value, std::vector<Var> inputs, std::function<void(Node&)> backprop) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  for (const auto& in : inputs) n->requires_grad = n->requires_grad || in.requires_grad();
  if (n->requires_grad) {
    n->inputs.reserve(inputs.size());
    for (auto& in : inputs) n->inputs.push_back(in.shared());
    n->backprop = std::move(backprop);
  }
  return Var(std::move(n));
}

inline void backward(const Var& root) {
  if (root.rows() != 1 || root.cols() != 1)
    throw std::invalid_argument("backward() needs a scalar root");
  if (!root.requires_grad()) return;

  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.node(), 0}};
  seen.insert(root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root.node()->accumulate(Matrix::Ones(1, 1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backprop && n->grad.size() != 0) n->backprop(*n);
  }
}

namespace detail {
inline void push(Node& n, std::size_t i, const Matrix& g) {
  if (n.inputs[i]->requires_grad) n.inputs[i]->accumulate(g);
}
inline bool wants(const Node& n, std::size_t i) { return n.inputs[i]->requires_grad; }
}  // namespace detail

inline Var matmul(const Var& a, const Var& b) {
  return make_op(a.value() * b.value(), {a, b}, [](Node& n) {
    const Matrix& A = n.inputs[0]->value;
    const Matrix& B = n.inputs[1]->value;
    if (detail::wants(n, 0)) detail::push(n, 0, n.grad * B.transpose());
    if (detail::wants(n, 1)) detail::push(n, 1, A.transpose() * n.grad);
  });
}

// a * b^T
inline Var matmul_nt(const Var& a, const Var& b) {
  return make_op(a.value() * b.value().transpose(), {a, b}, [](Node& n) {
    const Matrix& A = n.inputs[0]->value;
    const Matrix& B = n.inputs[1]->value;
    if (detail::wants(n, 0)) detail::push(n, 0, n.grad * B);
    if (detail::wants(n, 1)) detail::push(n, 1, n.grad.transpose() * A);
  });
}

inline Var add(const Var& a, const Var& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument("add: shape mismatch");
  return make_op(a.value() + b.value(), {a, b}, [](Node& n) {
    detail::push(n, 0, n.grad);
    detail::push(n, 1, n.grad);
  });
}

inline Var sub(const Var& a, const Var& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument("sub: shape mismatch");
  return make_op(a.value() - b.value(), {a, b}, [](Node& n) {
    detail::push(n, 0, n.grad);
    detail::push(n, 1, -n.grad);
  });
}

// Broadcasts a 1 x c row over every row of a.
inline Var add_row(const Var& a, const Var& row) {
  if (row.rows() != 1 || row.cols() != a.cols())
    throw std::invalid_argument("add_row: bias width mismatch");
  Matrix v = a.value().rowwise() + row.value().row(0);
  return make_op(std::move(v), {a, row}, [](Node& n) {
    detail::push(n, 0, n.grad);
    if (detail::wants(n, 1)) detail::push(n, 1, n.grad.colwise().sum());
  });
}

inline Var scale(const Var& a, double s) {
  return make_op(a.value() * s, {a}, [s](Node& n) { detail::push(n, 0, n.grad * s); });
}

inline Var hadamard(const Var& a, const Var& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument("hadamard: shape mismatch");
  return make_op(a.value().cwiseProduct(b.value()), {a, b}, [](Node& n) {
    if (detail::wants(n, 0)) detail::push(n, 0, n.grad.cwiseProduct(n.inputs[1]->value));
    if (detail::wants(n, 1)) detail::push(n, 1, n.grad.cwiseProduct(n.inputs[0]->value));
  });
}

inline Var relu(const Var& a) {
  return make_op(a.value().cwiseMax(0.0), {a}, [](Node& n) {
    const Matrix& x = n.inputs[0]->value;
    detail::push(n, 0, (x.array() > 0.0).cast<double>().matrix().cwiseProduct(n.grad));
  });
}

// Exact (erf) GELU.
inline Var gelu(const Var& a) {
  Matrix v = a.value().unaryExpr([](double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); });
  return make_op(std::move(v), {a}, [](Node& n) {
    const Matrix& x = n.inputs[0]->value;
    Matrix d = x.unaryExpr([](double t) {
      constexpr double inv_sqrt_2pi = 0.3989422804014327;
      return 0.5 * (1.0 + std::erf(t / std::sqrt(2.0))) + t * inv_sqrt_2pi * std::exp(-0.5 * t * t);
    });
    detail::push(n, 0, d.cwiseProduct(n.grad));
  });
}

// Row-wise softmax. Columns with mask[j] == false receive zero weight.
inline Var softmax_rows(const Var& a, const std::vector<bool>* key_mask = nullptr) {
  const Matrix& x = a.value();
  Matrix y(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < x.cols(); ++j)
      if (!key_mask || (*key_mask)[j]) mx = std::max(mx, x(i, j));
    double total = 0.0;
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      const double e = (!key_mask || (*key_mask)[j]) ? std::exp(x(i, j) - mx) : 0.0;
      y(i, j) = e;
      total += e;
    }
    y.row(i) /= total;
  }
  return make_op(std::move(y), {a}, [](Node& n) {
    const Matrix& s = n.value;
    Matrix g(s.rows(), s.cols());
    for (Eigen::Index i = 0; i < s.rows(); ++i) {
      const double dot = s.row(i).dot(n.grad.row(i));
      g.row(i) = s.row(i).cwiseProduct((n.grad.row(i).array() - dot).matrix());
    }
    detail::push(n, 0, g);
  });
}

inline Var layer_norm_rows(const Var& a, const Var& gamma, const Var& beta, double eps = 1e-12) {
  const Matrix& x = a.value();
  const Eigen::Index c = x.cols();
  Matrix xhat(x.rows(), c);
  Eigen::VectorXd inv_std(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double mu = x.row(i).mean();
    const double var = (x.row(i).array() - mu).square().mean();
    inv_std(i) = 1.0 / std::sqrt(var + eps);
    xhat.row(i) = (x.row(i).array() - mu) * inv_std(i);
  }
  Matrix y = (xhat.array().rowwise() * gamma.value().row(0).array()).rowwise() + beta.value().row(0).array();
  return make_op(std::move(y), {a, gamma, beta}, [xhat, inv_std](Node& n) {
    const Matrix& g = n.grad;
    const Matrix& gam = n.inputs[1]->value;
    if (detail::wants(n, 0)) {
      Matrix gx(g.rows(), g.cols());
      for (Eigen::Index i = 0; i < g.rows(); ++i) {
        Eigen::RowVectorXd gh = g.row(i).cwiseProduct(gam.row(0));
        const double m1 = gh.mean();
        const double m2 = gh.cwiseProduct(xhat.row(i)).mean();
        gx.row(i) = inv_std(i) * (gh.array() - m1 - xhat.row(i).array() * m2).matrix();
      }
      detail::push(n, 0, gx);
    }
    if (detail::wants(n, 1)) detail::push(n, 1, g.cwiseProduct(xhat).colwise().sum());
    if (detail::wants(n, 2)) detail::push(n, 2, g.colwise().sum());
  });
}

inline Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
  const Eigen::Index c = parts.front().cols();
  Eigen::Index r = 0;
  for (const auto& p : parts) {
    if (p.cols() != c) throw std::invalid_argument("concat_rows: width mismatch");
    r += p.rows();
  }
  Matrix v(r, c);
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    v.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  return make_op(std::move(v), parts, [](Node& n) {
    Eigen::Index off = 0;
    for (std::size_t i = 0; i < n.inputs.size(); ++i) {
      const Eigen::Index r = n.inputs[i]->value.rows();
      if (detail::wants(n, i)) detail::push(n, i, n.grad.middleRows(off, r));
      off += r;
    }
  });
}

inline Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  const Eigen::Index r = parts.front().rows();
  Eigen::Index c = 0;
  for (const auto& p : parts) {
    if (p.rows() != r) throw std::invalid_argument("concat_cols: height mismatch");
    c += p.cols();
  }
  Matrix v(r, c);
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    v.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  return make_op(std::move(v), parts, [](Node& n) {
    Eigen::Index off = 0;
    for (std::size_t i = 0; i < n.inputs.size(); ++i) {
      const Eigen::Index c = n.inputs[i]->value.cols();
      if (detail::wants(n, i)) detail::push(n, i, n.grad.middleCols(off, c));
      off += c;
    }
  });
}

inline Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count) {
  return make_op(a.value().middleCols(start, count), {a}, [start, count](Node& n) {
    Matrix g = Matrix::Zero(n.inputs[0]->value.rows(), n.inputs[0]->value.cols());
    g.middleCols(start, count) = n.grad;
    detail::push(n, 0, g);
  });
}

// 1 x c: per-column maximum; the gradient goes to the first maximal row.
inline Var col_max(const Var& a) {
  const Matrix& x = a.value();
  Matrix v(1, x.cols());
  std::vector<Eigen::Index> arg(static_cast<std::size_t>(x.cols()));
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    Eigen::Index best = 0;
    v(0, j) = x.col(j).maxCoeff(&best);
    arg[static_cast<std::size_t>(j)] = best;
  }
  return make_op(std::move(v), {a}, [arg = std::move(arg)](Node& n) {
    Matrix g = Matrix::Zero(n.inputs[0]->value.rows(), n.inputs[0]->value.cols());
    for (Eigen::Index j = 0; j < g.cols(); ++j) g(arg[static_cast<std::size_t>(j)], j) = n.grad(0, j);
    detail::push(n, 0, g);
  });
}

inline Var col_mean(const Var& a) {
  return make_op(a.value().colwise().mean(), {a}, [](Node& n) {
    const Eigen::Index r = n.inputs[0]->value.rows();
    detail::push(n, 0, n.grad.replicate(r, 1) / static_cast<double>(r));
  });
}

inline Var sum(const Var& a) {
  return make_op(Matrix::Constant(1, 1, a.value().sum()), {a}, [](Node& n) {
    const auto& in = n.inputs[0]->value;
    detail::push(n, 0, Matrix::Constant(in.rows(), in.cols(), n.grad(0, 0)));
  });
}

// Mean of a list of 1x1 Vars.
inline Var mean_of(const std::vector<Var>& scalars) {
  if (scalars.empty()) return scalar(0.0);
  double total = 0.0;
  for (const auto& s : scalars) total += s.scalar();
  const double inv = 1.0 / static_cast<double>(scalars.size());
  return make_op(Matrix::Constant(1, 1, total * inv), scalars, [inv](Node& n) {
    for (std::size_t i = 0; i < n.inputs.size(); ++i) detail::push(n, i, n.grad * inv);
  });
}

// Numerically stable binary cross-entropy on a 1x1 logit; d/dlogit = sigmoid(z) - y.
inline Var bce_with_logits(const Var& logit, double y) {
  const double z = logit.scalar();
  const double loss = std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
  return make_op(Matrix::Constant(1, 1, loss), {logit}, [y](Node& n) {
    const double zz = n.inputs[0]->value(0, 0);
    const double p = 1.0 / (1.0 + std::exp(-zz));
    detail::push(n, 0, Matrix::Constant(1, 1, n.grad(0, 0) * (p - y)));
  });
}

}  // namespace btic::ag
