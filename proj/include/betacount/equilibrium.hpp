#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <limits>
#include <numbers>
#include <vector>

#include "betacount/error.hpp"
#include "betacount/potential.hpp"
#include "betacount/quadrature.hpp"

namespace betacount {

/// Union of disjoint intervals [E_1,E_2] ∪ ... ∪ [E_{2q-1},E_{2q}].
class SupportSet {
 public:
  SupportSet() = default;
  explicit SupportSet(std::vector<double> endpoints) : e_(std::move(endpoints)) {
    if (e_.empty() || e_.size() % 2 != 0) throw InvalidArgument("support: need an even, nonzero number of endpoints");
    for (std::size_t i = 1; i < e_.size(); ++i)
      if (!(e_[i] > e_[i - 1])) throw InvalidArgument("support: endpoints must be strictly increasing");
  }

  const std::vector<double>& endpoints() const { return e_; }
  int intervals() const { return int(e_.size() / 2); }
  double lo(int alpha) const { return e_[2 * std::size_t(alpha)]; }
  double hi(int alpha) const { return e_[2 * std::size_t(alpha) + 1]; }
  double min() const { return e_.front(); }
  double max() const { return e_.back(); }
  double diameter() const { return e_.back() - e_.front(); }

  /// Index of the interval containing x, or -1.
  int interval_of(double x) const {
    for (int a = 0; a < intervals(); ++a)
      if (x >= lo(a) && x <= hi(a)) return a;
    return -1;
  }
  bool contains(double x) const { return interval_of(x) >= 0; }

 private:
  std::vector<double> e_;
};

namespace detail {

inline double double_factorial_ratio(int m) {  // (2m-1)!!/(2m)!!
  double r = 1.0;
  for (int k = 1; k <= m; ++k) r *= (2.0 * k - 1.0) / (2.0 * k);
  return r;
}

}  // namespace detail

/// Endpoints [a, b] of a one-interval support from the two moment conditions
///   ∫ V'(t) / sqrt((b-t)(t-a)) dt = 0,   (1/2π) ∫ t V'(t) / sqrt((b-t)(t-a)) dt = 1,
/// written with t = c + r cos θ and solved by damped Newton.
inline SupportSet solve_one_cut_support(const PolynomialPotential& V, double tolerance = 1e-12) {
  const auto& rule = gauss_legendre(400);
  const double pi = std::numbers::pi;
  auto eval = [&](double c, double r, std::array<double, 2>& f, std::array<double, 4>& jac) {
    f = {0, 0};
    jac = {0, 0, 0, 0};
    for (std::size_t i = 0; i < rule.nodes.size(); ++i) {
      const double th = 0.5 * pi * (rule.nodes[i] + 1.0);
      const double w = 0.5 * pi * rule.weights[i];
      const double cs = std::cos(th);
      const double t = c + r * cs;
      const double d1 = V.d1(t), d2 = V.d2(t);
      f[0] += w * d1;
      f[1] += w * t * d1;
      jac[0] += w * d2;
      jac[1] += w * d2 * cs;
      jac[2] += w * (d1 + t * d2);
      jac[3] += w * cs * (d1 + t * d2);
    }
    f[1] = f[1] / (2 * pi) - 1.0;
    jac[2] /= 2 * pi;
    jac[3] /= 2 * pi;
  };

  const int m = V.m();
  double c = 0.0;
  double r = std::pow(2.0 / (2.0 * m * V.leading() * detail::double_factorial_ratio(m)), 1.0 / (2.0 * m));
  std::array<double, 2> f{};
  std::array<double, 4> jac{};
  eval(c, r, f, jac);
  double norm = std::hypot(f[0], f[1]);
  for (int it = 0; it < 200 && norm >= tolerance; ++it) {
    const double det = jac[0] * jac[3] - jac[1] * jac[2];
    if (det == 0.0 || !std::isfinite(det)) break;
    const double dc = (jac[3] * f[0] - jac[1] * f[1]) / det;
    const double dr = (-jac[2] * f[0] + jac[0] * f[1]) / det;
    double step = 1.0;
    bool improved = false;
    for (int ls = 0; ls < 60; ++ls, step *= 0.5) {
      const double c2 = c - step * dc, r2 = r - step * dr;
      if (!(r2 > 0)) continue;
      std::array<double, 2> f2{};
      std::array<double, 4> j2{};
      eval(c2, r2, f2, j2);
      const double n2 = std::hypot(f2[0], f2[1]);
      if (n2 < norm || n2 < tolerance) {
        c = c2;
        r = r2;
        f = f2;
        jac = j2;
        norm = n2;
        improved = true;
        break;
      }
    }
    if (!improved) break;
  }
  if (!(norm < tolerance))
    throw NumericalError("solve_one_cut_support: Newton did not converge (potential may be multi-cut)");
  return SupportSet({c - r, c + r});
}

/// Equilibrium density ρ(λ) = (1/2π) P(λ) Im X^{1/2}(λ + i0) on a given support.
class EquilibriumMeasure {
 public:
  /// Builds P from the contour integral of V'(ζ)/X^{1/2}(ζ) and checks the
  /// normalization ∫ρ = 1.
  EquilibriumMeasure(const PolynomialPotential& V, SupportSet support, double normalization_tolerance = 1e-10)
      : V_(V), support_(std::move(support)) {
    build_P();
    normalization_error_ = std::abs(total_mass() - 1.0);
    if (normalization_error_ > normalization_tolerance)
      throw NumericalError("equilibrium_density: normalization error " + std::to_string(normalization_error_) +
                           " (endpoints inconsistent with the potential)");
    double min_p = std::numeric_limits<double>::infinity();
    for (int a = 0; a < support_.intervals(); ++a)
      for (int i = 0; i <= 400; ++i) {
        const double x = support_.lo(a) + (support_.hi(a) - support_.lo(a)) * i / 400.0;
        min_p = std::min(min_p, std::abs(P(x)));
      }
    min_abs_P_ = min_p;
    if (!(min_p > 1e-8)) throw NumericalError("equilibrium_density: P vanishes on the support (non-generic potential)");
  }

  const PolynomialPotential& potential() const { return V_; }
  const SupportSet& support() const { return support_; }
  const Polynomial& P_poly() const { return P_; }
  double P(double x) const { return P_(x); }
  double normalization_error() const { return normalization_error_; }
  double min_abs_P_scan() const { return min_abs_P_; }

  /// Monic X(λ) = ∏(λ - E_k).
  double X(double x) const {
    double p = 1.0;
    for (double e : support_.endpoints()) p *= x - e;
    return p;
  }

  double density(double x) const {
    const int a = support_.interval_of(x);
    if (a < 0) return 0.0;
    const int q = support_.intervals();
    const double sign = ((q - 1 - a) % 2 == 0) ? 1.0 : -1.0;
    return sign * P(x) * std::sqrt(std::abs(X(x))) / (2.0 * std::numbers::pi);
  }

  /// ∫ f(λ) ρ(λ) dλ over interval alpha using λ = mid + rad·sin θ.
  template <typename F>
  double integrate_interval(int alpha, F&& f, int order = 400) const {
    const double lo = support_.lo(alpha), hi = support_.hi(alpha);
    const double mid = 0.5 * (lo + hi), rad = 0.5 * (hi - lo);
    const auto& rule = gauss_legendre(order);
    const double h = 0.5 * std::numbers::pi;
    double acc = 0.0;
    for (int i = 0; i < order; ++i) {
      const double th = h * rule.nodes[std::size_t(i)];
      const double x = mid + rad * std::sin(th);
      acc += rule.weights[std::size_t(i)] * f(x) * density_smooth(alpha, x) * rad * std::cos(th);
    }
    return acc * h;
  }

  template <typename F>
  double integrate(F&& f, int order = 400) const {
    double acc = 0.0;
    for (int a = 0; a < support_.intervals(); ++a) acc += integrate_interval(a, f, order);
    return acc;
  }

  double total_mass() const {
    return integrate([](double) { return 1.0; });
  }

  /// ∫_lo^hi ρ for any lo < hi.
  double mass_between(double lo, double hi) const {
    double acc = 0.0;
    for (int a = 0; a < support_.intervals(); ++a) {
      const double l = std::max(lo, support_.lo(a)), h = std::min(hi, support_.hi(a));
      if (h <= l) continue;
      const double L = support_.lo(a), H = support_.hi(a);
      const double mid = 0.5 * (L + H), rad = 0.5 * (H - L);
      const double t0 = std::asin(std::clamp((l - mid) / rad, -1.0, 1.0));
      const double t1 = std::asin(std::clamp((h - mid) / rad, -1.0, 1.0));
      acc += betacount::integrate(
          [&](double th) {
            const double x = mid + rad * std::sin(th);
            return density_smooth(a, x) * rad * std::cos(th);
          },
          t0, t1, 400);
    }
    return acc;
  }

  /// Integrated density of states ∫_{E_1}^x ρ.
  double cumulative(double x) const { return x <= support_.min() ? 0.0 : mass_between(support_.min(), x); }

  double max_density(int samples = 2000) const {
    double best = 0.0;
    for (int a = 0; a < support_.intervals(); ++a)
      for (int i = 0; i <= samples; ++i)
        best = std::max(best, density(support_.lo(a) + (support_.hi(a) - support_.lo(a)) * i / samples));
    return best;
  }

 private:
  // ρ(x)/(rad·cos θ) is smooth in θ; evaluating ρ directly is fine at interior nodes.
  double density_smooth(int alpha, double x) const {
    const int q = support_.intervals();
    const double sign = ((q - 1 - alpha) % 2 == 0) ? 1.0 : -1.0;
    return sign * P(x) * std::sqrt(std::abs(X(x))) / (2.0 * std::numbers::pi);
  }

  void build_P() {
    const auto& e = support_.endpoints();
    const double centre = 0.5 * (support_.min() + support_.max());
    const double radius = support_.diameter();
    const int nodes = 512;
    const auto& dv = V_.first().coeffs();
    const int kmax = int(dv.size());
    std::vector<double> mu(std::size_t(std::max(kmax, 1)), 0.0);
    for (int j = 0; j < nodes; ++j) {
      const double th = 2.0 * std::numbers::pi * j / nodes;
      const std::complex<double> u = std::polar(1.0, th);
      const std::complex<double> z = centre + radius * u;
      std::complex<double> root = 1.0;
      for (double ek : e) root *= std::sqrt(z - ek);
      // dζ/(2πi) = radius·u dθ/(2π)
      const std::complex<double> base = radius * u / root / double(nodes);
      std::complex<double> zp = 1.0;
      for (std::size_t k = 0; k < mu.size(); ++k) {
        mu[k] += (zp * base).real();
        zp *= z;
      }
    }
    std::vector<double> p(std::size_t(std::max(kmax - 1, 1)), 0.0);
    for (int i = 0; i + 1 < kmax; ++i) {
      double acc = 0.0;
      for (int k = i + 1; k < kmax; ++k) acc += dv[std::size_t(k)] * mu[std::size_t(k - 1 - i)];
      p[std::size_t(i)] = acc;
    }
    for (auto& c : p)
      if (std::abs(c) < 1e-14) c = 0.0;
    P_ = Polynomial(std::move(p));
  }

  PolynomialPotential V_;
  SupportSet support_;
  Polynomial P_;
  double normalization_error_ = 0.0;
  double min_abs_P_ = 0.0;
};

inline EquilibriumMeasure equilibrium_density(const PolynomialPotential& V, const SupportSet& support) {
  return EquilibriumMeasure(V, support);
}

/// Effective potential v(λ) = 2∫ log|μ-λ| ρ(μ) dμ - V(λ).
class EffectivePotential {
 public:
  explicit EffectivePotential(const EquilibriumMeasure& measure) : rho_(measure) {
    const auto& s = rho_.support();
    vstar_ = (*this)(0.5 * (s.lo(0) + s.hi(0)));
  }

  double reference() const { return vstar_; }

  double operator()(double lambda) const {
    const auto& s = rho_.support();
    const auto& rule = gauss_legendre(400);
    double acc = 0.0;
    for (int a = 0; a < s.intervals(); ++a) {
      const double mid = 0.5 * (s.lo(a) + s.hi(a)), rad = 0.5 * (s.hi(a) - s.lo(a));
      const double h = 0.5 * std::numbers::pi;
      auto integrand = [&](double th) {
        const double x = mid + rad * std::sin(th);
        const double d = std::abs(x - lambda);
        if (d == 0.0) return 0.0;
        return std::log(d) * rho_.density(x) * rad * std::cos(th);
      };
      if (lambda > s.lo(a) && lambda < s.hi(a)) {
        // Split at the singularity and cluster nodes there with a cubic map.
        const double tl = std::asin(std::clamp((lambda - mid) / rad, -1.0, 1.0));
        const double left = tl + h, right = h - tl;
        for (std::size_t i = 0; i < rule.nodes.size(); ++i) {
          const double s01 = 0.5 * (rule.nodes[i] + 1.0);
          const double w = 0.5 * rule.weights[i] * 3.0 * s01 * s01;
          const double s3 = s01 * s01 * s01;
          acc += w * left * integrand(tl - left * s3);
          acc += w * right * integrand(tl + right * s3);
        }
      } else {
        for (std::size_t i = 0; i < rule.nodes.size(); ++i)
          acc += rule.weights[i] * h * integrand(h * rule.nodes[i]);
      }
    }
    return 2.0 * acc - rho_.potential()(lambda);
  }

  struct Report {
    double max_deviation_on_support = 0.0;
    double max_excess_off_support = -std::numeric_limits<double>::infinity();
    double reference = 0.0;
  };

  /// Scans v on and off the support; endpoint neighbourhoods of width `exclude` are skipped.
  Report scan(int points = 400, double exclude = 1e-3) const {
    Report rep;
    rep.reference = vstar_;
    const auto& s = rho_.support();
    for (int a = 0; a < s.intervals(); ++a)
      for (int i = 0; i <= points; ++i) {
        const double x = s.lo(a) + (s.hi(a) - s.lo(a)) * i / points;
        rep.max_deviation_on_support = std::max(rep.max_deviation_on_support, std::abs((*this)(x) - vstar_));
      }
    const double pad = 0.5 * s.diameter();
    const double lo = s.min() - pad, hi = s.max() + pad;
    for (int i = 0; i <= 4 * points; ++i) {
      const double x = lo + (hi - lo) * i / (4 * points);
      bool near_edge = false;
      for (double e : s.endpoints()) near_edge = near_edge || std::abs(x - e) < exclude;
      if (near_edge || s.contains(x)) continue;
      rep.max_excess_off_support = std::max(rep.max_excess_off_support, (*this)(x) - vstar_);
    }
    return rep;
  }

 private:
  EquilibriumMeasure rho_;
  double vstar_ = 0.0;
};

/// Checks the equilibrium conditions: v constant on σ, below the constant off σ.
inline EffectivePotential::Report effective_potential_report(const EquilibriumMeasure& measure,
                                                              double off_support_tolerance = 1e-8) {
  EffectivePotential v(measure);
  auto rep = v.scan();
  if (rep.max_excess_off_support > off_support_tolerance)
    throw NumericalError("effective_potential: v exceeds its value on the support by " +
                         std::to_string(rep.max_excess_off_support));
  return rep;
}

struct GenericityReport {
  double min_abs_P = 0.0;
  std::vector<double> edge_exponents;
};

/// Minimum of |P| on the support and the square-root exponent fitted at every endpoint.
inline GenericityReport check_genericity(const EquilibriumMeasure& measure, int samples = 2000) {
  GenericityReport rep;
  const auto& s = measure.support();
  rep.min_abs_P = std::numeric_limits<double>::infinity();
  for (int a = 0; a < s.intervals(); ++a)
    for (int i = 0; i <= samples; ++i)
      rep.min_abs_P = std::min(rep.min_abs_P, std::abs(measure.P(s.lo(a) + (s.hi(a) - s.lo(a)) * i / samples)));
  const double h1 = 1e-7 * s.diameter(), h2 = 1e-5 * s.diameter();
  for (std::size_t k = 0; k < s.endpoints().size(); ++k) {
    const double e = s.endpoints()[k];
    const double dir = (k % 2 == 0) ? 1.0 : -1.0;
    const double r1 = measure.density(e + dir * h1), r2 = measure.density(e + dir * h2);
    rep.edge_exponents.push_back(std::log(r2 / r1) / std::log(h2 / h1));
  }
  return rep;
}

}  // namespace betacount
