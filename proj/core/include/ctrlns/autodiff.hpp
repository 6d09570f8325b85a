#pragma once

// Minimal reverse-mode automatic differentiation over dense matrices.
//
// A `Var` is a handle to a node holding a matrix value. Operations build a
// DAG as they execute; `backward(loss)` walks it in reverse topological order
// and accumulates `d loss / d node` into every node that requires a gradient.
// Leaves created with `Var::parameter` keep their node alive across steps, so
// their `grad()` is read by the optimizer after each backward pass.

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <vector>

namespace ctrlns::ad {

using Matrix = Eigen::MatrixXd;

struct Node {
  Matrix value;
  Matrix grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backprop;

  void accumulate(const Matrix& g);
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  /// Leaf that does not receive gradients.
  static Var constant(Matrix value);
  /// Leaf that receives gradients.
  static Var parameter(Matrix value);

  const Matrix& value() const { return node_->value; }
  Matrix& mutable_value() const { return node_->value; }
  const Matrix& grad() const { return node_->grad; }
  bool requires_grad() const { return node_->requires_grad; }
  void zero_grad();

  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }
  double scalar() const { return node_->value(0, 0); }

  const std::shared_ptr<Node>& node() const { return node_; }
  explicit operator bool() const { return static_cast<bool>(node_); }

 private:
  std::shared_ptr<Node> node_;
};

/// Runs reverse accumulation from a 1x1 root.
void backward(const Var& root);

// Elementwise / algebraic ops. Shapes must match unless noted.
Var operator+(const Var& a, const Var& b);
Var operator-(const Var& a, const Var& b);
Var operator-(const Var& a);
Var operator*(const Var& a, double c);
Var operator*(double c, const Var& a);
Var operator+(const Var& a, double c);
Var hadamard(const Var& a, const Var& b);
Var square(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);
Var tanh(const Var& a);
Var leaky_relu(const Var& a, double slope);
/// log(max(|a|, floor)) elementwise; the floor keeps the log finite.
Var log_abs_floor(const Var& a, double floor);

/// a (r x k) times b (k x c).
Var matmul(const Var& a, const Var& b);
/// x (r x in) times w^T (w is out x in): the affine-layer product.
Var matmul_nt(const Var& x, const Var& w);
/// a (r x c) plus row vector b (1 x c) broadcast over rows.
Var add_row(const Var& a, const Var& b);
/// a (r x c) scaled rowwise by column vector s (r x 1).
Var mul_col(const Var& a, const Var& s);
/// Row vector v (1 x c) repeated to r rows.
Var repeat_rows(const Var& v, Eigen::Index r);
/// Column j of a, transposed to a 1 x rows(a) row vector.
Var col_as_row(const Var& a, Eigen::Index j);

Var sum(const Var& a);
Var mean(const Var& a);
/// Per-row sum, r x 1.
Var row_sum(const Var& a);

Var cols(const Var& a, Eigen::Index start, Eigen::Index count);
Var rows(const Var& a, Eigen::Index start, Eigen::Index count);
Var hconcat(const std::vector<Var>& parts);

/// Row-wise softmax.
Var softmax_rows(const Var& a);
/// Forward value of `hard`, gradient routed to `soft` (straight-through).
Var straight_through(const Matrix& hard, const Var& soft);
Var stop_gradient(const Var& a);

}  // namespace ctrlns::ad
