#include "ctrlns/nn.hpp"

#include "ctrlns/jet.hpp"

#include <cmath>
#include <stdexcept>

namespace ctrlns::nn {

Var ParamStore::add(const std::string& name, Matrix init) {
  if (contains(name)) throw std::invalid_argument("ParamStore: duplicate parameter " + name);
  Var v = Var::parameter(std::move(init));
  index_[name] = params_.size();
  params_.emplace_back(name, v);
  return v;
}

Var ParamStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("ParamStore: unknown parameter " + name);
  return params_[it->second].second;
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [_, v] : params_) n += static_cast<std::size_t>(v.value().size());
  return n;
}

void ParamStore::zero_grad() {
  for (auto& [_, v] : params_) v.zero_grad();
}

Eigen::VectorXd ParamStore::flatten() const {
  Eigen::VectorXd out(static_cast<Eigen::Index>(scalar_count()));
  Eigen::Index at = 0;
  for (const auto& [_, v] : params_) {
    const auto& m = v.value();
    out.segment(at, m.size()) = Eigen::Map<const Eigen::VectorXd>(m.data(), m.size());
    at += m.size();
  }
  return out;
}

void ParamStore::assign(const Eigen::VectorXd& flat) {
  if (flat.size() != static_cast<Eigen::Index>(scalar_count())) {
    throw std::invalid_argument("ParamStore::assign: size mismatch");
  }
  Eigen::Index at = 0;
  for (auto& [_, v] : params_) {
    auto& m = v.mutable_value();
    Eigen::Map<Eigen::VectorXd>(m.data(), m.size()) = flat.segment(at, m.size());
    at += m.size();
  }
}

Eigen::VectorXd ParamStore::flat_grad() const {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(scalar_count()));
  Eigen::Index at = 0;
  for (const auto& [_, v] : params_) {
    const auto n = v.value().size();
    if (v.grad().size() == n) out.segment(at, n) = Eigen::Map<const Eigen::VectorXd>(v.grad().data(), n);
    at += n;
  }
  return out;
}

Mlp::Mlp(ParamStore& store, const std::string& prefix, int in, const std::vector<int>& hidden, int out, Rng& rng,
         double slope)
    : slope_(slope) {
  std::vector<int> dims;
  dims.push_back(in);
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(out);
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const int fan_in = dims[l];
    const int fan_out = dims[l + 1];
    // Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases.
    const double bound = 1.0 / std::sqrt(static_cast<double>(std::max(fan_in, 1)));
    Matrix w(fan_out, fan_in);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = rng.uniform(-bound, bound);
    Matrix b(1, fan_out);
    for (Eigen::Index i = 0; i < b.size(); ++i) b.data()[i] = rng.uniform(-bound, bound);
    const std::string base = prefix + ".l" + std::to_string(l);
    layers_.push_back({store.add(base + ".weight", std::move(w)), store.add(base + ".bias", std::move(b))});
  }
}

Var Mlp::forward(const Var& x) const {
  Var h = x;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    h = ad::add_row(ad::matmul_nt(h, layers_[l].weight), layers_[l].bias);
    if (l + 1 < layers_.size()) h = ad::leaky_relu(h, slope_);
  }
  return h;
}

std::pair<Var, Var> Mlp::forward_with_tangent(const Var& x, Eigen::Index col) const {
  Var h = x;
  Var dh;
  const Eigen::Index r = x.rows();
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& layer = layers_[l];
    Var pre = ad::add_row(ad::matmul_nt(h, layer.weight), layer.bias);
    Var dpre = (l == 0) ? ad::repeat_rows(ad::col_as_row(layer.weight, col), r) : ad::matmul_nt(dh, layer.weight);
    if (l + 1 < layers_.size()) {
      // Leaky-ReLU slope is locally constant, so the tangent is a masked copy.
      Matrix mask = pre.value().unaryExpr([this](double v) { return v > 0.0 ? 1.0 : slope_; });
      h = ad::leaky_relu(pre, slope_);
      dh = ad::hadamard(dpre, Var::constant(std::move(mask)));
    } else {
      h = pre;
      dh = dpre;
    }
  }
  return {h, dh};
}

AdamW::AdamW(ParamStore& store, AdamWConfig cfg) : store_(&store), cfg_(cfg) {
  for (const auto& [_, v] : store.entries()) {
    m_.push_back(Matrix::Zero(v.rows(), v.cols()));
    v_.push_back(Matrix::Zero(v.rows(), v.cols()));
  }
}

void AdamW::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  std::size_t k = 0;
  for (auto& [_, p] : store_->entries()) {
    auto& w = p.mutable_value();
    if (cfg_.weight_decay != 0.0) w *= (1.0 - cfg_.learning_rate * cfg_.weight_decay);
    if (p.grad().size() == w.size()) {
      m_[k] = cfg_.beta1 * m_[k] + (1.0 - cfg_.beta1) * p.grad();
      v_[k] = cfg_.beta2 * v_[k] + (1.0 - cfg_.beta2) * p.grad().cwiseAbs2();
    } else {
      m_[k] *= cfg_.beta1;
      v_[k] *= cfg_.beta2;
    }
    const auto mhat = m_[k].array() / bc1;
    const auto vhat = v_[k].array() / bc2;
    w.array() -= cfg_.learning_rate * mhat / (vhat.sqrt() + cfg_.eps);
    ++k;
  }
}

void AdamW::restore(long t, std::vector<Matrix> m, std::vector<Matrix> v) {
  if (m.size() != m_.size() || v.size() != v_.size()) throw std::invalid_argument("AdamW::restore: size mismatch");
  t_ = t;
  m_ = std::move(m);
  v_ = std::move(v);
}

}  // namespace ctrlns::nn
