#pragma once

// Univariate truncated Taylor series ("jets") for exact higher-order
// directional derivatives. A jet of order K stores c[0..K] with
//   f(x0 + h) = sum_k c[k] h^k + O(h^{K+1}),
// so the k-th derivative along the seeded direction is k! * c[k].

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace ctrlns {

class Jet {
 public:
  Jet() : c_(1, 0.0) {}
  /// Constant of the given order.
  Jet(double value, std::size_t order) : c_(order + 1, 0.0) { c_[0] = value; }

  /// Independent variable x0 + h.
  static Jet variable(double value, std::size_t order) {
    Jet j(value, order);
    if (order >= 1) j.c_[1] = 1.0;
    return j;
  }

  std::size_t order() const { return c_.size() - 1; }
  double value() const { return c_[0]; }
  double coeff(std::size_t k) const { return k < c_.size() ? c_[k] : 0.0; }
  double& coeff_ref(std::size_t k) { return c_[k]; }

  /// k-th derivative along the seeded direction.
  double derivative(std::size_t k) const {
    double f = 1.0;
    for (std::size_t i = 2; i <= k; ++i) f *= static_cast<double>(i);
    return coeff(k) * f;
  }

  Jet& operator+=(const Jet& o) {
    check(o);
    for (std::size_t k = 0; k < c_.size(); ++k) c_[k] += o.c_[k];
    return *this;
  }
  Jet& operator-=(const Jet& o) {
    check(o);
    for (std::size_t k = 0; k < c_.size(); ++k) c_[k] -= o.c_[k];
    return *this;
  }
  Jet& operator+=(double v) {
    c_[0] += v;
    return *this;
  }
  Jet& operator*=(double v) {
    for (auto& x : c_) x *= v;
    return *this;
  }

  friend Jet operator+(Jet a, const Jet& b) { return a += b; }
  friend Jet operator-(Jet a, const Jet& b) { return a -= b; }
  friend Jet operator+(Jet a, double v) { return a += v; }
  friend Jet operator+(double v, Jet a) { return a += v; }
  friend Jet operator-(Jet a, double v) { return a += -v; }
  friend Jet operator*(Jet a, double v) { return a *= v; }
  friend Jet operator*(double v, Jet a) { return a *= v; }
  friend Jet operator-(Jet a) { return a *= -1.0; }

  friend Jet operator*(const Jet& a, const Jet& b) {
    a.check(b);
    Jet r(0.0, a.order());
    for (std::size_t k = 0; k <= a.order(); ++k) {
      double s = 0.0;
      for (std::size_t j = 0; j <= k; ++j) s += a.c_[j] * b.c_[k - j];
      r.c_[k] = s;
    }
    return r;
  }

  friend Jet operator/(const Jet& a, const Jet& b) {
    a.check(b);
    Jet r(0.0, a.order());
    for (std::size_t k = 0; k <= a.order(); ++k) {
      double s = a.c_[k];
      for (std::size_t j = 1; j <= k; ++j) s -= b.c_[j] * r.c_[k - j];
      r.c_[k] = s / b.c_[0];
    }
    return r;
  }

  friend Jet exp(const Jet& x) {
    Jet r(std::exp(x.c_[0]), x.order());
    for (std::size_t k = 1; k <= x.order(); ++k) {
      double s = 0.0;
      for (std::size_t j = 1; j <= k; ++j) s += static_cast<double>(j) * x.c_[j] * r.c_[k - j];
      r.c_[k] = s / static_cast<double>(k);
    }
    return r;
  }

  friend Jet log(const Jet& x) {
    Jet r(std::log(x.c_[0]), x.order());
    for (std::size_t k = 1; k <= x.order(); ++k) {
      double s = static_cast<double>(k) * x.c_[k];
      for (std::size_t j = 1; j < k; ++j) s -= static_cast<double>(j) * r.c_[j] * x.c_[k - j];
      r.c_[k] = s / (static_cast<double>(k) * x.c_[0]);
    }
    return r;
  }

  /// sin and cos share one recurrence.
  friend void sincos(const Jet& x, Jet& s, Jet& c) {
    s = Jet(std::sin(x.c_[0]), x.order());
    c = Jet(std::cos(x.c_[0]), x.order());
    for (std::size_t k = 1; k <= x.order(); ++k) {
      double ss = 0.0;
      double cc = 0.0;
      for (std::size_t j = 1; j <= k; ++j) {
        const double jx = static_cast<double>(j) * x.c_[j];
        ss += jx * c.c_[k - j];
        cc -= jx * s.c_[k - j];
      }
      s.c_[k] = ss / static_cast<double>(k);
      c.c_[k] = cc / static_cast<double>(k);
    }
  }
  friend Jet sin(const Jet& x) {
    Jet s, c;
    sincos(x, s, c);
    return s;
  }
  friend Jet cos(const Jet& x) {
    Jet s, c;
    sincos(x, s, c);
    return c;
  }

  friend Jet tanh(const Jet& x) {
    // y' = (1 - y^2) x'
    Jet y(std::tanh(x.c_[0]), x.order());
    Jet d(1.0 - y.c_[0] * y.c_[0], x.order());
    for (std::size_t k = 1; k <= x.order(); ++k) {
      double s = 0.0;
      for (std::size_t j = 1; j <= k; ++j) s += static_cast<double>(j) * x.c_[j] * d.c_[k - j];
      y.c_[k] = s / static_cast<double>(k);
      double yy = 0.0;
      for (std::size_t j = 0; j <= k; ++j) yy += y.c_[j] * y.c_[k - j];
      d.c_[k] = -yy;
    }
    return y;
  }

  /// Piecewise-linear functions act on the base point; away from the kink the
  /// jet is scaled by the local slope.
  friend Jet leaky_relu(const Jet& x, double slope) {
    Jet r = x;
    if (x.c_[0] <= 0.0) r *= slope;
    return r;
  }

  /// Hard clamp: inside (lo, hi) identity, outside constant.
  friend Jet clamp(const Jet& x, double lo, double hi) {
    if (x.c_[0] <= lo) return Jet(lo, x.order());
    if (x.c_[0] >= hi) return Jet(hi, x.order());
    return x;
  }

 private:
  void check(const Jet& o) const {
    if (o.c_.size() != c_.size()) throw std::invalid_argument("Jet: order mismatch");
  }
  std::vector<double> c_;
};

// Scalar overloads so templated code can run on plain doubles.
inline double leaky_relu(double x, double slope) { return x > 0.0 ? x : slope * x; }
inline double clamp(double x, double lo, double hi) { return std::clamp(x, lo, hi); }

}  // namespace ctrlns
