#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "betacount/error.hpp"

namespace betacount {

/// Real polynomial evaluated by Horner's rule; coefficient i multiplies x^i.
class Polynomial {
 public:
  Polynomial() = default;
  explicit Polynomial(std::vector<double> coeffs) : c_(std::move(coeffs)) {}

  const std::vector<double>& coeffs() const { return c_; }
  int degree() const { return c_.empty() ? -1 : int(c_.size()) - 1; }

  template <typename T>
  T operator()(T x) const {
    T acc = T(0);
    for (std::size_t i = c_.size(); i-- > 0;) acc = acc * x + T(c_[i]);
    return acc;
  }

  Polynomial derivative() const {
    if (c_.size() <= 1) return Polynomial({0.0});
    std::vector<double> d(c_.size() - 1);
    for (std::size_t i = 1; i < c_.size(); ++i) d[i - 1] = double(i) * c_[i];
    return Polynomial(std::move(d));
  }

 private:
  std::vector<double> c_;
};

/// Even-degree polynomial potential with positive leading coefficient.
class PolynomialPotential {
 public:
  const Polynomial& poly() const { return v_; }
  const Polynomial& first() const { return dv_; }
  const Polynomial& second() const { return ddv_; }
  const std::vector<double>& coeffs() const { return v_.coeffs(); }
  int degree() const { return v_.degree(); }
  /// Half the degree.
  int m() const { return degree() / 2; }
  double leading() const { return v_.coeffs().back(); }

  double operator()(double x) const { return v_(x); }
  double d1(double x) const { return dv_(x); }
  double d2(double x) const { return ddv_(x); }

  bool is_even() const {
    for (std::size_t i = 1; i < coeffs().size(); i += 2)
      if (coeffs()[i] != 0.0) return false;
    return true;
  }

  /// V(x + shift), used by translation checks.
  PolynomialPotential shifted(double shift) const;

  friend PolynomialPotential validate_potential(std::span<const double> coefficients);

 private:
  explicit PolynomialPotential(Polynomial v) : v_(std::move(v)), dv_(v_.derivative()), ddv_(dv_.derivative()) {}
  Polynomial v_, dv_, ddv_;
};

/// Checks degree and sign conditions; trailing zero coefficients are dropped.
inline PolynomialPotential validate_potential(std::span<const double> coefficients) {
  if (coefficients.empty()) throw InvalidArgument("potential: empty coefficient list");
  std::vector<double> c(coefficients.begin(), coefficients.end());
  for (double v : c)
    if (!std::isfinite(v)) throw InvalidArgument("potential: non-finite coefficient");
  while (c.size() > 1 && c.back() == 0.0) c.pop_back();
  const int degree = int(c.size()) - 1;
  if (degree == 0) throw InvalidArgument("potential: degree 0 (constant potential)");
  if (degree % 2 != 0) throw InvalidArgument("potential: odd degree " + std::to_string(degree));
  if (!(c.back() > 0.0)) throw InvalidArgument("potential: leading coefficient must be positive");
  return PolynomialPotential(Polynomial(std::move(c)));
}

inline PolynomialPotential validate_potential(std::initializer_list<double> coefficients) {
  return validate_potential(std::span<const double>(coefficients.begin(), coefficients.size()));
}

inline PolynomialPotential PolynomialPotential::shifted(double shift) const {
  // Taylor shift via repeated synthetic division.
  std::vector<double> c = coeffs();
  const std::size_t n = c.size();
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t i = n - 1; i > k; --i) c[i - 1] += shift * c[i];
  return validate_potential(c);
}

}  // namespace betacount
