#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "betacount/equilibrium.hpp"
#include "betacount/error.hpp"
#include "betacount/potential.hpp"
#include "betacount/quadrature.hpp"

namespace betacount {

struct SystemOptions {
  int panel_order = 20;
  /// Nodes per (index · support diameter) on the construction grid.
  double nodes_per_index = 8.0;
  /// ψ_l² at the domain ends must fall below exp(-edge_log_ratio) of its maximum.
  double edge_log_ratio = 60.0;
  double orthonormality_tolerance = 1e-8;
  /// Refinement of the independent grid used for the orthonormality guard.
  double check_refinement = 1.5;
};

/// Orthonormal functions ψ_l = p_l e^{-nV/2} for the weight e^{-nV}.
///
/// Recurrence convention: λ p_l = a_{l+1} p_{l+1} + b_l p_l + a_l p_{l-1}.
class WeightedPolySystem {
 public:
  int n() const { return n_; }
  /// Highest index with a stored function.
  int L() const { return L_; }
  const PolynomialPotential& potential() const { return V_; }
  const SupportSet& support() const { return support_; }
  /// a(l) for l = 1..L+1.
  double a(int l) const { return a_[std::size_t(l)]; }
  /// b(l) for l = 0..L.
  double b(int l) const { return b_[std::size_t(l)]; }
  const std::vector<double>& a_coeffs() const { return a_; }
  const std::vector<double>& b_coeffs() const { return b_; }
  /// Interval outside which every ψ_l (l ≤ L) is negligible.
  double domain_lo() const { return lo_; }
  double domain_hi() const { return hi_; }
  double orthonormality_residual() const { return ortho_residual_; }
  std::size_t construction_nodes() const { return construction_nodes_; }

  /// Values ψ_0..ψ_lmax at x (and optionally their derivatives).
  void eval(double x, int lmax, double* psi, double* dpsi = nullptr) const {
    if (lmax > L_ || lmax < 0) throw InvalidArgument("eval_psi: index out of range");
    const double half_n = 0.5 * n_;
    double scale = -half_n * (V_(x) - vshift_) - 0.5 * log_mass_;
    const double dv = half_n * V_.d1(x);
    double q_prev = 0.0, q = 1.0, d_prev = 0.0, d = 0.0;
    for (int l = 0; l <= lmax; ++l) {
      const double e = std::exp(scale);
      psi[l] = q * e;
      if (dpsi) dpsi[l] = (d - dv * q) * e;
      if (l == lmax) break;
      const double an = a_[std::size_t(l + 1)], ap = a_[std::size_t(l)], bl = b_[std::size_t(l)];
      const double q_next = ((x - bl) * q - ap * q_prev) / an;
      const double d_next = ((x - bl) * d + q - ap * d_prev) / an;
      q_prev = q;
      q = q_next;
      d_prev = d;
      d = d_next;
      const double big = std::max(std::abs(q), std::abs(d));
      if (big > 1e150) {
        const double r = std::log(big);
        const double f = 1.0 / big;
        q *= f;
        q_prev *= f;
        d *= f;
        d_prev *= f;
        scale += r;
      }
    }
  }

  double psi(int l, double x) const {
    std::vector<double> v(std::size_t(l) + 1);
    eval(x, l, v.data());
    return v.back();
  }

  double dpsi(int l, double x) const {
    std::vector<double> v(std::size_t(l) + 1), d(std::size_t(l) + 1);
    eval(x, l, v.data(), d.data());
    return d.back();
  }

  /// Table with rows = points, columns = ψ_0..ψ_lmax; optional derivative table.
  Eigen::MatrixXd table(std::span<const double> xs, int lmax, Eigen::MatrixXd* deriv = nullptr) const {
    Eigen::MatrixXd out(Eigen::Index(xs.size()), lmax + 1);
    if (deriv) deriv->resize(Eigen::Index(xs.size()), lmax + 1);
    std::vector<double> v(std::size_t(lmax) + 1), d(std::size_t(lmax) + 1);
    for (std::size_t i = 0; i < xs.size(); ++i) {
      eval(xs[i], lmax, v.data(), deriv ? d.data() : nullptr);
      for (int l = 0; l <= lmax; ++l) {
        out(Eigen::Index(i), l) = v[std::size_t(l)];
        if (deriv) (*deriv)(Eigen::Index(i), l) = d[std::size_t(l)];
      }
    }
    return out;
  }

  friend WeightedPolySystem build_system(const PolynomialPotential&, const SupportSet&, int, int, const SystemOptions&);

 private:
  WeightedPolySystem(PolynomialPotential V, SupportSet s) : V_(std::move(V)), support_(std::move(s)) {}

  int n_ = 0, L_ = 0;
  PolynomialPotential V_;
  SupportSet support_;
  std::vector<double> a_, b_;
  double vshift_ = 0.0, log_mass_ = 0.0;
  double lo_ = 0.0, hi_ = 0.0;
  double ortho_residual_ = 0.0;
  std::size_t construction_nodes_ = 0;
};

namespace detail {

inline PanelGrid stieltjes_grid(double lo, double hi, double diameter, int n, int L, const SystemOptions& opt,
                                double refine) {
  const double by_width = 40.0 * std::sqrt(double(n + L)) + 200.0;
  const double by_index = opt.nodes_per_index * (L + 1) * (hi - lo) / diameter;
  const double nodes = refine * std::max(by_width, by_index);
  const auto panels = std::size_t(std::ceil(nodes / opt.panel_order));
  return PanelGrid::uniform(lo, hi, std::max<std::size_t>(panels, 2), opt.panel_order);
}

}  // namespace detail

/// Discretized Stieltjes procedure for the weight e^{-nV}; computes ψ_0..ψ_L.
inline WeightedPolySystem build_system(const PolynomialPotential& V, const SupportSet& support, int n, int L,
                                       const SystemOptions& opt = {}) {
  if (n < 1) throw InvalidArgument("build_system: n must be positive");
  if (L < 1) throw InvalidArgument("build_system: L must be positive");
  WeightedPolySystem sys(V, support);
  sys.n_ = n;
  sys.L_ = L;
  const double diam = support.diameter();
  double pad = 0.25 * diam;
  for (int attempt = 0; attempt < 12; ++attempt, pad *= 1.5) {
    const double lo = support.min() - pad, hi = support.max() + pad;
    auto grid = detail::stieltjes_grid(lo, hi, diam, n, L, opt, 1.0);
    const auto N = Eigen::Index(grid.size());
    Eigen::Map<const Eigen::VectorXd> t = grid.node_vector();
    Eigen::VectorXd logw(N);
    for (Eigen::Index i = 0; i < N; ++i) logw(i) = -double(n) * V(t(i));
    const double vmax = logw.maxCoeff();
    Eigen::VectorXd W = (logw.array() - vmax).exp() * grid.weight_vector().array();
    const double mass = W.sum();

    std::vector<double> a(std::size_t(L) + 2, 0.0), b(std::size_t(L) + 1, 0.0);
    // Lanczos on the weighted vectors, with full reorthogonalization.
    Eigen::MatrixXd Q(N, L + 2);
    // exp(logw/2) directly: the weight itself underflows well inside the support.
    Q.col(0) = (0.5 * (logw.array() - vmax)).exp() * (grid.weight_vector().array() / mass).sqrt();
    for (int l = 0; l <= L; ++l) {
      Eigen::VectorXd r = t.cwiseProduct(Q.col(l));
      if (l > 0) r -= a[std::size_t(l)] * Q.col(l - 1);
      const double bl = r.dot(Q.col(l));
      r -= bl * Q.col(l);
      for (int pass = 0; pass < 2; ++pass) {
        Eigen::VectorXd c = Q.leftCols(l + 1).transpose() * r;
        r -= Q.leftCols(l + 1) * c;
        if (pass == 0) b[std::size_t(l)] = bl + c(l);
      }
      const double al = r.norm();
      if (!(al > 0) || !std::isfinite(al)) throw NumericalError("build_system: recurrence breakdown (a_l <= 0)");
      a[std::size_t(l) + 1] = al;
      Q.col(l + 1) = r / al;
    }
    sys.a_ = std::move(a);
    sys.b_ = std::move(b);
    sys.vshift_ = -vmax / n;
    sys.log_mass_ = std::log(mass);
    sys.lo_ = lo;
    sys.hi_ = hi;
    sys.construction_nodes_ = grid.size();

    // Edge guard: ψ_l must be negligible at both ends of the domain.
    std::vector<double> at_lo(std::size_t(L) + 1), at_hi(std::size_t(L) + 1);
    sys.eval(lo, L, at_lo.data());
    sys.eval(hi, L, at_hi.data());
    Eigen::MatrixXd tab = sys.table(grid.nodes(), L);
    bool ok = true;
    for (int l = 0; l <= L && ok; ++l) {
      const double peak = tab.col(l).cwiseAbs().maxCoeff();
      const double edge = std::max(std::abs(at_lo[std::size_t(l)]), std::abs(at_hi[std::size_t(l)]));
      ok = 2.0 * std::log(edge / peak) < -opt.edge_log_ratio || edge == 0.0;
    }
    if (!ok) continue;

    // Orthonormality on an independent, finer grid.
    auto check = detail::stieltjes_grid(lo, hi, diam, n, L, opt, opt.check_refinement);
    Eigen::MatrixXd psi = sys.table(check.nodes(), L);
    Eigen::MatrixXd gram = psi.transpose() * check.weight_vector().asDiagonal() * psi;
    sys.ortho_residual_ = (gram - Eigen::MatrixXd::Identity(L + 1, L + 1)).cwiseAbs().maxCoeff();
    if (sys.ortho_residual_ > opt.orthonormality_tolerance)
      throw NumericalError("build_system: orthonormality residual " + std::to_string(sys.ortho_residual_) +
                           " exceeds tolerance (quadrature too coarse)");
    return sys;
  }
  throw NumericalError("build_system: could not find a domain where the weighted functions decay");
}

/// Uses the one-interval support of V to place the construction grid.
inline WeightedPolySystem build_system(const PolynomialPotential& V, int n, int L, const SystemOptions& opt = {}) {
  return build_system(V, solve_one_cut_support(V), n, L, opt);
}

}  // namespace betacount
