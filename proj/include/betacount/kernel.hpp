#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "betacount/equilibrium.hpp"
#include "betacount/error.hpp"
#include "betacount/orthopoly.hpp"
#include "betacount/quadrature.hpp"

namespace betacount {

/// Closed interval [a, b].
struct Interval {
  double a = 0.0;
  double b = 0.0;
  double length() const { return b - a; }
  bool contains(double x) const { return x >= a && x <= b; }
};

/// Composite grid on the numerical support of a system, with extra break
/// points (typically the ends of Δ) so that sub-intervals align with panels.
inline PanelGrid line_grid(const WeightedPolySystem& sys, std::vector<double> breaks = {}, double density = 1.0,
                           int order = 20) {
  const double lo = sys.domain_lo(), hi = sys.domain_hi();
  std::vector<double> bounds{lo};
  std::sort(breaks.begin(), breaks.end());
  for (double x : breaks)
    if (x > lo && x < hi && x > bounds.back()) bounds.push_back(x);
  bounds.push_back(hi);
  const double per_length = density * 8.0 * (sys.L() + 1) / sys.support().diameter();
  std::vector<std::size_t> counts;
  for (std::size_t i = 1; i < bounds.size(); ++i)
    counts.push_back(std::max<std::size_t>(1, std::size_t(std::ceil(per_length * (bounds[i] - bounds[i - 1]) / order))));
  return PanelGrid::segments(bounds, counts, order);
}

namespace detail {

struct EdgePair {
  std::vector<double> psi_n, psi_m, dpsi_n, dpsi_m;  // m = n-1
};

inline EdgePair edge_values(const WeightedPolySystem& sys, std::span<const double> xs) {
  const int n = sys.n();
  if (n > sys.L()) throw InvalidArgument("kernel: system must contain ψ_n");
  EdgePair out;
  std::vector<double> v(std::size_t(n) + 1), d(std::size_t(n) + 1);
  for (double x : xs) {
    sys.eval(x, n, v.data(), d.data());
    out.psi_n.push_back(v[std::size_t(n)]);
    out.psi_m.push_back(v[std::size_t(n) - 1]);
    out.dpsi_n.push_back(d[std::size_t(n)]);
    out.dpsi_m.push_back(d[std::size_t(n) - 1]);
  }
  return out;
}

/// Separation below which the diagonal formula is used: 1e-6 of the kernel's
/// oscillation length diam/n.
inline double diagonal_threshold(const WeightedPolySystem& sys) {
  return 1e-6 * sys.support().diameter() / sys.n();
}

}  // namespace detail

/// Christoffel-Darboux form of K_n(λ, μ) = Σ_{l<n} ψ_l(λ) ψ_l(μ).
inline double kernel_cd(const WeightedPolySystem& sys, double lambda, double mu) {
  const double pts[2] = {lambda, mu};
  auto e = detail::edge_values(sys, pts);
  const double an = sys.a(sys.n());
  if (std::abs(lambda - mu) < detail::diagonal_threshold(sys)) {
    const double x = 0.5 * (lambda + mu);
    auto m = detail::edge_values(sys, std::span<const double>(&x, 1));
    return an * (m.dpsi_n[0] * m.psi_m[0] - m.dpsi_m[0] * m.psi_n[0]);
  }
  return an * (e.psi_n[0] * e.psi_m[1] - e.psi_m[0] * e.psi_n[1]) / (lambda - mu);
}

/// Matrix K_n(x_i, y_j) via Christoffel-Darboux.
inline Eigen::MatrixXd kernel_matrix(const WeightedPolySystem& sys, std::span<const double> xs,
                                     std::span<const double> ys) {
  auto ex = detail::edge_values(sys, xs);
  auto ey = detail::edge_values(sys, ys);
  const double an = sys.a(sys.n());
  const double thr = detail::diagonal_threshold(sys);
  Eigen::MatrixXd K(Eigen::Index(xs.size()), Eigen::Index(ys.size()));
  for (std::size_t i = 0; i < xs.size(); ++i)
    for (std::size_t j = 0; j < ys.size(); ++j) {
      const double d = xs[i] - ys[j];
      double v;
      if (std::abs(d) < thr) {
        v = an * 0.5 *
            ((ex.dpsi_n[i] * ex.psi_m[i] - ex.dpsi_m[i] * ex.psi_n[i]) +
             (ey.dpsi_n[j] * ey.psi_m[j] - ey.dpsi_m[j] * ey.psi_n[j]));
      } else {
        v = an * (ex.psi_n[i] * ey.psi_m[j] - ex.psi_m[i] * ey.psi_n[j]) / d;
      }
      K(Eigen::Index(i), Eigen::Index(j)) = v;
    }
  return K;
}

/// Integral operator discretized on an interval by Nyström quadrature.
struct DiscretizedKernel {
  Interval delta;
  PanelGrid grid;
  /// A_ij = w_i^{1/2} K(t_i,t_j) w_j^{1/2} when symmetrized, K(t_i,t_j) w_j otherwise.
  Eigen::MatrixXd A;
  bool symmetrized = true;
  /// Φ_il = w_i^{1/2} ψ_l(t_i), l < n, so that A = Φ Φ^T.
  Eigen::MatrixXd factor;
  /// Nonzero spectrum of A (ascending), computed from the n×n Gram matrix of the factor.
  Eigen::VectorXd eigenvalues;
  int clipped = 0;

  double trace() const { return A.trace(); }
  std::size_t size() const { return grid.size(); }
};

struct ProjectionOptions {
  /// 0 selects the rule N_q = max(8·n·|Δ|·max ρ, 200), rounded up to whole panels.
  int nodes = 0;
  int panel_order = 20;
  /// Require Δ to sit inside the support with a 5% margin.
  bool require_interior = true;
  double spectrum_tolerance = 1e-8;
};

inline int nyquist_nodes(const WeightedPolySystem& sys, const Interval& delta) {
  EquilibriumMeasure rho(sys.potential(), sys.support());
  return int(std::ceil(8.0 * sys.n() * delta.length() * rho.max_density()));
}

inline void check_interior(const SupportSet& s, const Interval& delta) {
  const double margin = 0.05 * s.diameter();
  const int a = s.interval_of(delta.a);
  if (!(delta.b > delta.a) || a < 0 || a != s.interval_of(delta.b) || delta.a < s.lo(a) + margin ||
      delta.b > s.hi(a) - margin)
    throw InvalidArgument("project_kernel: interval must lie inside the support with a 5% margin");
}

/// K_n restricted to Δ as a symmetric Nyström matrix with its spectrum.
inline DiscretizedKernel project_kernel(const WeightedPolySystem& sys, Interval delta,
                                        const ProjectionOptions& opt = {}) {
  if (opt.require_interior) check_interior(sys.support(), delta);
  if (!(delta.b > delta.a)) throw InvalidArgument("project_kernel: empty interval");
  const int rule = opt.nodes > 0 ? opt.nodes : std::max(nyquist_nodes(sys, delta), 200);
  const auto panels = std::size_t(std::ceil(double(rule) / opt.panel_order));
  DiscretizedKernel out;
  out.delta = delta;
  out.grid = PanelGrid::uniform(delta.a, delta.b, panels, opt.panel_order);
  const auto& t = out.grid.nodes();
  Eigen::VectorXd sw = out.grid.weight_vector().cwiseSqrt();
  out.A = sw.asDiagonal() * kernel_matrix(sys, t, t) * sw.asDiagonal();
  out.A = 0.5 * (out.A + out.A.transpose()).eval();
  out.factor = sw.asDiagonal() * sys.table(t, sys.n() - 1);
  Eigen::MatrixXd gram = out.factor.transpose() * out.factor;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram, Eigen::EigenvaluesOnly);
  out.eigenvalues = es.eigenvalues();
  for (Eigen::Index i = 0; i < out.eigenvalues.size(); ++i) {
    double& e = out.eigenvalues(i);
    if (e < -opt.spectrum_tolerance || e > 1 + opt.spectrum_tolerance)
      throw NumericalError("project_kernel: eigenvalue " + std::to_string(e) +
                           " outside [0, 1] (too few quadrature nodes)");
    if (e < 0 || e > 1) {
      ++out.clipped;
      e = std::clamp(e, 0.0, 1.0);
    }
  }
  return out;
}

/// ∫ K_n(λ, λ) dλ over the numerical support; equals n for a projection kernel.
inline double kernel_trace_full(const WeightedPolySystem& sys) {
  auto grid = line_grid(sys);
  auto K = kernel_matrix(sys, grid.nodes(), grid.nodes());
  return (K.diagonal().array() * grid.weight_vector().array()).sum();
}

/// max |∫ K(λ,ν) K(ν,μ) dν - K(λ,μ)| over the given pairs.
inline double reproducing_residual(const WeightedPolySystem& sys, std::span<const double> lambdas,
                                   std::span<const double> mus) {
  auto grid = line_grid(sys);
  auto KL = kernel_matrix(sys, lambdas, grid.nodes());
  auto KM = kernel_matrix(sys, grid.nodes(), mus);
  double worst = 0.0;
  for (std::size_t i = 0; i < lambdas.size(); ++i) {
    double acc = 0.0;
    for (std::size_t k = 0; k < grid.size(); ++k)
      acc += KL(Eigen::Index(i), Eigen::Index(k)) * grid.weights()[k] * KM(Eigen::Index(k), Eigen::Index(i));
    worst = std::max(worst, std::abs(acc - kernel_cd(sys, lambdas[i], mus[i])));
  }
  return worst;
}

/// sup |K_n(λ0+u/s, λ0+v/s)/s - sin π(u-v)/(π(u-v))| with s = nρ(λ0), |u|,|v| ≤ window.
inline double bulk_sine_compare(const WeightedPolySystem& sys, double lambda0, double window, int points = 41) {
  EquilibriumMeasure rho(sys.potential(), sys.support());
  const auto& s = sys.support();
  for (double e : s.endpoints())
    if (std::abs(lambda0 - e) < 0.1 * s.diameter())
      throw InvalidArgument("bulk_sine_compare: point is too close to an endpoint");
  const double scale = sys.n() * rho.density(lambda0);
  std::vector<double> xs;
  for (int i = 0; i < points; ++i) xs.push_back(lambda0 + (-window + 2.0 * window * i / (points - 1)) / scale);
  auto K = kernel_matrix(sys, xs, xs);
  double worst = 0.0;
  for (int i = 0; i < points; ++i)
    for (int j = 0; j < points; ++j) {
      const double d = (xs[std::size_t(i)] - xs[std::size_t(j)]) * scale;
      const double sinc = std::abs(d) < 1e-12 ? 1.0 : std::sin(std::numbers::pi * d) / (std::numbers::pi * d);
      worst = std::max(worst, std::abs(K(i, j) / scale - sinc));
    }
  return worst;
}

/// v_n(λ) = ∫_Δ K_n(λ, μ) dμ for λ outside Δ.
inline std::vector<double> vn_decay(const WeightedPolySystem& sys, Interval delta, std::span<const double> lambdas,
                                    int nodes = 0) {
  for (double x : lambdas)
    if (delta.contains(x)) throw InvalidArgument("vn_decay: point lies inside the interval");
  const int rule = nodes > 0 ? nodes : std::max(nyquist_nodes(sys, delta), 200);
  auto grid = PanelGrid::uniform(delta.a, delta.b, std::size_t(std::ceil(rule / 20.0)), 20);
  Eigen::VectorXd v = kernel_matrix(sys, lambdas, grid.nodes()) * grid.weight_vector();
  return {v.data(), v.data() + v.size()};
}

inline double vn_decay(const WeightedPolySystem& sys, Interval delta, double lambda) {
  return vn_decay(sys, delta, std::span<const double>(&lambda, 1)).front();
}

struct DecayFit {
  /// max |v_n(λ)| (1 + n·dist(λ, ∂Δ)) over the scan.
  double envelope_constant = 0.0;
  /// ‖v_n‖ in L²(complement of Δ).
  double l2_norm = 0.0;
};

/// Scans v_n over the complement of Δ inside the numerical support.
inline DecayFit vn_decay_fit(const WeightedPolySystem& sys, Interval delta) {
  auto grid = line_grid(sys, {delta.a, delta.b});
  std::vector<double> outside, weights;
  for (std::size_t i = 0; i < grid.size(); ++i)
    if (!delta.contains(grid.nodes()[i])) {
      outside.push_back(grid.nodes()[i]);
      weights.push_back(grid.weights()[i]);
    }
  auto v = vn_decay(sys, delta, outside);
  DecayFit fit;
  double l2 = 0.0;
  for (std::size_t i = 0; i < outside.size(); ++i) {
    const double dist = std::min(std::abs(outside[i] - delta.a), std::abs(outside[i] - delta.b));
    fit.envelope_constant = std::max(fit.envelope_constant, std::abs(v[i]) * (1.0 + sys.n() * dist));
    l2 += weights[i] * v[i] * v[i];
  }
  fit.l2_norm = std::sqrt(l2);
  return fit;
}

}  // namespace betacount
