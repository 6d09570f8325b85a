#include "ctrlns/autodiff.hpp"

#include <cassert>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace ctrlns::ad {

void Node::accumulate(const Matrix& g) {
  if (grad.size() == 0) {
    grad = g;
  } else {
    grad += g;
  }
}

Var Var::constant(Matrix value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  return Var(std::move(n));
}

Var Var::parameter(Matrix value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = true;
  return Var(std::move(n));
}

void Var::zero_grad() { node_->grad.resize(0, 0); }

namespace {

Var make(Matrix value, std::vector<Var> inputs, std::function<void(Node&)> backprop) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  for (const auto& in : inputs) {
    if (in.requires_grad()) {
      n->requires_grad = true;
      break;
    }
  }
  if (n->requires_grad) {
    n->inputs.reserve(inputs.size());
    for (const auto& in : inputs) n->inputs.push_back(in.node());
    n->backprop = std::move(backprop);
  }
  return Var(std::move(n));
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument(std::string("ad::") + op + ": shape mismatch");
  }
}

// Accumulate into input k if it wants a gradient.
template <typename Expr>
void push(Node& self, std::size_t k, const Expr& g) {
  auto& in = *self.inputs[k];
  if (in.requires_grad) in.accumulate(g);
}

}  // namespace

void backward(const Var& root) {
  if (root.rows() != 1 || root.cols() != 1) throw std::invalid_argument("ad::backward: root must be 1x1");
  if (!root.requires_grad()) return;

  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  // Iterative post-order DFS; graphs from long sequences can be deep.
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  seen.insert(root.node().get());
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

  for (Node* n : order) {
    if (n->backprop) n->grad.resize(0, 0);
  }
  root.node()->grad = Matrix::Ones(1, 1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (!n->backprop || n->grad.size() == 0) continue;
    n->backprop(*n);
  }
}

Var operator+(const Var& a, const Var& b) {
  check_same_shape(a, b, "add");
  return make(a.value() + b.value(), {a, b}, [](Node& s) {
    push(s, 0, s.grad);
    push(s, 1, s.grad);
  });
}

Var operator-(const Var& a, const Var& b) {
  check_same_shape(a, b, "sub");
  return make(a.value() - b.value(), {a, b}, [](Node& s) {
    push(s, 0, s.grad);
    push(s, 1, -s.grad);
  });
}

Var operator-(const Var& a) {
  return make(-a.value(), {a}, [](Node& s) { push(s, 0, -s.grad); });
}

Var operator*(const Var& a, double c) {
  return make(a.value() * c, {a}, [c](Node& s) { push(s, 0, s.grad * c); });
}

Var operator*(double c, const Var& a) { return a * c; }

Var operator+(const Var& a, double c) {
  return make((a.value().array() + c).matrix(), {a}, [](Node& s) { push(s, 0, s.grad); });
}

Var hadamard(const Var& a, const Var& b) {
  check_same_shape(a, b, "hadamard");
  return make(a.value().cwiseProduct(b.value()), {a, b}, [](Node& s) {
    push(s, 0, s.grad.cwiseProduct(s.inputs[1]->value));
    push(s, 1, s.grad.cwiseProduct(s.inputs[0]->value));
  });
}

Var square(const Var& a) {
  return make(a.value().array().square().matrix(), {a},
              [](Node& s) { push(s, 0, (2.0 * s.grad.array() * s.inputs[0]->value.array()).matrix()); });
}

Var exp(const Var& a) {
  return make(a.value().array().exp().matrix(), {a},
              [](Node& s) { push(s, 0, s.grad.cwiseProduct(s.value)); });
}

Var log(const Var& a) {
  return make(a.value().array().log().matrix(), {a},
              [](Node& s) { push(s, 0, (s.grad.array() / s.inputs[0]->value.array()).matrix()); });
}

Var tanh(const Var& a) {
  return make(a.value().array().tanh().matrix(), {a}, [](Node& s) {
    push(s, 0, (s.grad.array() * (1.0 - s.value.array().square())).matrix());
  });
}

Var leaky_relu(const Var& a, double slope) {
  Matrix v = a.value().unaryExpr([slope](double x) { return x > 0.0 ? x : slope * x; });
  return make(std::move(v), {a}, [slope](Node& s) {
    const auto& x = s.inputs[0]->value;
    push(s, 0, s.grad.binaryExpr(x, [slope](double g, double xi) { return xi > 0.0 ? g : slope * g; }));
  });
}

Var log_abs_floor(const Var& a, double floor) {
  Matrix v = a.value().unaryExpr([floor](double x) { return std::log(std::max(std::abs(x), floor)); });
  return make(std::move(v), {a}, [floor](Node& s) {
    const auto& x = s.inputs[0]->value;
    push(s, 0, s.grad.binaryExpr(x, [floor](double g, double xi) {
      // Below the floor the value is constant in x.
      return std::abs(xi) > floor ? g / xi : 0.0;
    }));
  });
}

Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) throw std::invalid_argument("ad::matmul: inner dimension mismatch");
  return make(a.value() * b.value(), {a, b}, [](Node& s) {
    if (s.inputs[0]->requires_grad) s.inputs[0]->accumulate(s.grad * s.inputs[1]->value.transpose());
    if (s.inputs[1]->requires_grad) s.inputs[1]->accumulate(s.inputs[0]->value.transpose() * s.grad);
  });
}

Var matmul_nt(const Var& x, const Var& w) {
  if (x.cols() != w.cols()) throw std::invalid_argument("ad::matmul_nt: inner dimension mismatch");
  return make(x.value() * w.value().transpose(), {x, w}, [](Node& s) {
    if (s.inputs[0]->requires_grad) s.inputs[0]->accumulate(s.grad * s.inputs[1]->value);
    if (s.inputs[1]->requires_grad) s.inputs[1]->accumulate(s.grad.transpose() * s.inputs[0]->value);
  });
}

Var add_row(const Var& a, const Var& b) {
  if (b.rows() != 1 || b.cols() != a.cols()) throw std::invalid_argument("ad::add_row: bias shape mismatch");
  Matrix v = a.value().rowwise() + b.value().row(0);
  return make(std::move(v), {a, b}, [](Node& s) {
    push(s, 0, s.grad);
    if (s.inputs[1]->requires_grad) s.inputs[1]->accumulate(s.grad.colwise().sum());
  });
}

Var mul_col(const Var& a, const Var& sc) {
  if (sc.cols() != 1 || sc.rows() != a.rows()) throw std::invalid_argument("ad::mul_col: scale shape mismatch");
  Matrix v = a.value().array().colwise() * sc.value().col(0).array();
  return make(std::move(v), {a, sc}, [](Node& s) {
    const auto& av = s.inputs[0]->value;
    const auto& sv = s.inputs[1]->value;
    if (s.inputs[0]->requires_grad) {
      s.inputs[0]->accumulate((s.grad.array().colwise() * sv.col(0).array()).matrix());
    }
    if (s.inputs[1]->requires_grad) s.inputs[1]->accumulate(s.grad.cwiseProduct(av).rowwise().sum());
  });
}

Var repeat_rows(const Var& v, Eigen::Index r) {
  if (v.rows() != 1) throw std::invalid_argument("ad::repeat_rows: expected row vector");
  Matrix out = v.value().replicate(r, 1);
  return make(std::move(out), {v}, [](Node& s) { push(s, 0, s.grad.colwise().sum()); });
}

Var col_as_row(const Var& a, Eigen::Index j) {
  Matrix out = a.value().col(j).transpose();
  const Eigen::Index r = a.rows();
  const Eigen::Index c = a.cols();
  return make(std::move(out), {a}, [j, r, c](Node& s) {
    if (!s.inputs[0]->requires_grad) return;
    Matrix g = Matrix::Zero(r, c);
    g.col(j) = s.grad.row(0).transpose();
    s.inputs[0]->accumulate(g);
  });
}

Var sum(const Var& a) {
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  const Eigen::Index r = a.rows();
  const Eigen::Index c = a.cols();
  return make(std::move(out), {a}, [r, c](Node& s) { push(s, 0, Matrix::Constant(r, c, s.grad(0, 0))); });
}

Var mean(const Var& a) {
  const double n = static_cast<double>(a.value().size());
  return sum(a) * (1.0 / n);
}

Var row_sum(const Var& a) {
  Matrix out = a.value().rowwise().sum();
  const Eigen::Index c = a.cols();
  return make(std::move(out), {a}, [c](Node& s) { push(s, 0, s.grad.replicate(1, c)); });
}

Var cols(const Var& a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || start + count > a.cols()) throw std::invalid_argument("ad::cols: range out of bounds");
  Matrix out = a.value().middleCols(start, count);
  const Eigen::Index r = a.rows();
  const Eigen::Index c = a.cols();
  return make(std::move(out), {a}, [start, count, r, c](Node& s) {
    if (!s.inputs[0]->requires_grad) return;
    Matrix g = Matrix::Zero(r, c);
    g.middleCols(start, count) = s.grad;
    s.inputs[0]->accumulate(g);
  });
}

Var rows(const Var& a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || start + count > a.rows()) throw std::invalid_argument("ad::rows: range out of bounds");
  Matrix out = a.value().middleRows(start, count);
  const Eigen::Index r = a.rows();
  const Eigen::Index c = a.cols();
  return make(std::move(out), {a}, [start, count, r, c](Node& s) {
    if (!s.inputs[0]->requires_grad) return;
    Matrix g = Matrix::Zero(r, c);
    g.middleRows(start, count) = s.grad;
    s.inputs[0]->accumulate(g);
  });
}

Var hconcat(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("ad::hconcat: no inputs");
  const Eigen::Index r = parts.front().rows();
  Eigen::Index total = 0;
  for (const auto& p : parts) {
    if (p.rows() != r) throw std::invalid_argument("ad::hconcat: row mismatch");
    total += p.cols();
  }
  Matrix out(r, total);
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  return make(std::move(out), parts, [](Node& s) {
    Eigen::Index off = 0;
    for (auto& in : s.inputs) {
      const Eigen::Index c = in->value.cols();
      if (in->requires_grad) in->accumulate(s.grad.middleCols(off, c));
      off += c;
    }
  });
}

Var softmax_rows(const Var& a) {
  Matrix v = a.value();
  for (Eigen::Index i = 0; i < v.rows(); ++i) {
    const double m = v.row(i).maxCoeff();
    v.row(i) = (v.row(i).array() - m).exp();
    v.row(i) /= v.row(i).sum();
  }
  return make(std::move(v), {a}, [](Node& s) {
    // dL/da = y * (g - <g, y>) per row
    Matrix dot = s.grad.cwiseProduct(s.value).rowwise().sum();
    Matrix g = s.value.array() * (s.grad.array().colwise() - dot.col(0).array());
    push(s, 0, g);
  });
}

Var straight_through(const Matrix& hard, const Var& soft) {
  if (hard.rows() != soft.rows() || hard.cols() != soft.cols()) {
    throw std::invalid_argument("ad::straight_through: shape mismatch");
  }
  return make(hard, {soft}, [](Node& s) { push(s, 0, s.grad); });
}

Var stop_gradient(const Var& a) { return Var::constant(a.value()); }

}  // namespace ctrlns::ad
