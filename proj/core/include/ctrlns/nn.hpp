#pragma once

#include "ctrlns/autodiff.hpp"
#include "ctrlns/jet.hpp"
#include "ctrlns/rng.hpp"

#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace ctrlns::nn {

using ad::Matrix;
using ad::Var;

/// Ordered registry of named trainable tensors.
class ParamStore {
 public:
  Var add(const std::string& name, Matrix init);
  Var get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  const std::vector<std::pair<std::string, Var>>& entries() const { return params_; }
  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const;

  void zero_grad();
  /// All parameter values flattened in registration order.
  Eigen::VectorXd flatten() const;
  void assign(const Eigen::VectorXd& flat);
  /// Gradients flattened in registration order (zeros where absent).
  Eigen::VectorXd flat_grad() const;

 private:
  std::vector<std::pair<std::string, Var>> params_;
  std::map<std::string, std::size_t> index_;
};

struct Linear {
  Var weight;  // out x in
  Var bias;    // 1 x out

  Eigen::Index in_features() const { return weight.cols(); }
  Eigen::Index out_features() const { return weight.rows(); }
};

/// Feed-forward network with leaky-ReLU hidden activations and a linear
/// output layer. `hidden` may be empty (a single affine map).
class Mlp {
 public:
  Mlp() = default;
  Mlp(ParamStore& store, const std::string& prefix, int in, const std::vector<int>& hidden, int out, Rng& rng,
      double slope = 0.2);

  Var forward(const Var& x) const;

  /// Output and its derivative with respect to input column `col`,
  /// propagated exactly in forward mode through the graph so that the
  /// derivative is itself differentiable in the weights.
  std::pair<Var, Var> forward_with_tangent(const Var& x, Eigen::Index col) const;

  /// Pointwise evaluation on doubles or jets using current weight values.
  template <typename S>
  std::vector<S> eval(std::span<const S> x) const;

  const std::vector<Linear>& layers() const { return layers_; }
  std::vector<Linear>& layers() { return layers_; }
  double slope() const { return slope_; }
  int in_features() const { return static_cast<int>(layers_.front().in_features()); }
  int out_features() const { return static_cast<int>(layers_.back().out_features()); }

 private:
  std::vector<Linear> layers_;
  double slope_ = 0.2;
};

template <typename S>
std::vector<S> Mlp::eval(std::span<const S> x) const {
  std::vector<S> h(x.begin(), x.end());
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const Matrix& w = layers_[l].weight.value();
    const Matrix& b = layers_[l].bias.value();
    std::vector<S> next;
    next.reserve(static_cast<std::size_t>(w.rows()));
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      S acc = h.front() * 0.0 + b(0, r);
      for (Eigen::Index c = 0; c < w.cols(); ++c) acc += h[static_cast<std::size_t>(c)] * w(r, c);
      if (l + 1 < layers_.size()) acc = leaky_relu(acc, slope_);
      next.push_back(std::move(acc));
    }
    h = std::move(next);
  }
  return h;
}

struct AdamWConfig {
  double learning_rate = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

/// Adam with decoupled weight decay.
class AdamW {
 public:
  AdamW(ParamStore& store, AdamWConfig cfg);

  void step();
  long steps() const { return t_; }
  const AdamWConfig& config() const { return cfg_; }
  void set_learning_rate(double lr) { cfg_.learning_rate = lr; }

  // Moment buffers in parameter registration order, for checkpointing.
  const std::vector<Matrix>& first_moments() const { return m_; }
  const std::vector<Matrix>& second_moments() const { return v_; }
  void restore(long t, std::vector<Matrix> m, std::vector<Matrix> v);

 private:
  ParamStore* store_;
  AdamWConfig cfg_;
  long t_ = 0;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
};

}  // namespace ctrlns::nn
