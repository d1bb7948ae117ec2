#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "betacount/error.hpp"
#include "betacount/kernel.hpp"
#include "betacount/orthopoly.hpp"
#include "betacount/quadrature.hpp"

namespace betacount {

/// (εf)(λ) = ½∫ sgn(λ-μ) f(μ) dμ for each column of f sampled on the grid.
/// The grid must cover the numerical support of f; the limits at the ends
/// are then ∓½∫f as for the operator on the whole line.
inline Eigen::MatrixXd epsilon_apply(const PanelGrid& grid, const Eigen::Ref<const Eigen::MatrixXd>& f) {
  Eigen::MatrixXd cum = grid.cumulative(f);
  const Eigen::Index N = f.rows();
  Eigen::RowVectorXd half_total = 0.5 * cum.row(N);
  return cum.topRows(N).rowwise() - half_total;
}

/// The kernel ε restricted to an interval grid, as a quadrature operator:
/// (E f)_i ≈ ½∫_Δ sgn(t_i - μ) f(μ) dμ.
inline Eigen::MatrixXd epsilon_operator(const PanelGrid& grid) {
  Eigen::MatrixXd E = grid.cumulative_operator();
  Eigen::Map<const Eigen::VectorXd> w = grid.weight_vector();
  E.rowwise() -= 0.5 * w.transpose();
  return E;
}

/// ψ_l, ψ_l' and εψ_l (l = 0..lmax) on a grid covering the numerical support.
class LineTables {
 public:
  LineTables(const WeightedPolySystem& sys, int lmax, std::vector<double> breaks = {}, double density = 1.0)
      : sys_(&sys), lmax_(lmax), grid_(line_grid(sys, std::move(breaks), density)) {
    psi_ = sys.table(grid_.nodes(), lmax, &dpsi_);
    eps_ = epsilon_apply(grid_, psi_);
    Eigen::MatrixXd cum = grid_.cumulative(psi_);
    total_ = cum.row(cum.rows() - 1).transpose();
    // Integral of ψ from the left end up to the start of each panel.
    panel_start_.resize(grid_.panels().size(), lmax + 1);
    Eigen::RowVectorXd run = Eigen::RowVectorXd::Zero(lmax + 1);
    Eigen::Map<const Eigen::VectorXd> w = grid_.weight_vector();
    for (std::size_t p = 0; p < grid_.panels().size(); ++p) {
      panel_start_.row(Eigen::Index(p)) = run;
      const auto f = Eigen::Index(grid_.panels()[p].first);
      run += w.segment(f, grid_.order()).transpose() * psi_.middleRows(f, grid_.order());
    }
  }

  const WeightedPolySystem& system() const { return *sys_; }
  int lmax() const { return lmax_; }
  const PanelGrid& grid() const { return grid_; }
  const Eigen::MatrixXd& psi() const { return psi_; }
  const Eigen::MatrixXd& dpsi() const { return dpsi_; }
  const Eigen::MatrixXd& eps() const { return eps_; }
  /// ∫ψ_l over the whole line.
  const Eigen::VectorXd& totals() const { return total_; }

  /// εψ_l at arbitrary points: panel-start integral plus a Gauss-Legendre
  /// integral over the partial panel.
  Eigen::MatrixXd eps_at(std::span<const double> xs) const {
    Eigen::MatrixXd out(Eigen::Index(xs.size()), lmax_ + 1);
    const auto& rule = gauss_legendre(grid_.order());
    std::vector<double> v(std::size_t(lmax_) + 1);
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const double x = xs[i];
      if (x <= grid_.lo()) {
        out.row(Eigen::Index(i)) = -0.5 * total_.transpose();
        continue;
      }
      if (x >= grid_.hi()) {
        out.row(Eigen::Index(i)) = 0.5 * total_.transpose();
        continue;
      }
      const auto panels = grid_.panels();
      auto it = std::upper_bound(panels.begin(), panels.end(), x,
                                 [](double val, const PanelGrid::Panel& p) { return val < p.lo; });
      const std::size_t p = std::size_t(std::max<std::ptrdiff_t>(0, (it - panels.begin()) - 1));
      Eigen::RowVectorXd acc = panel_start_.row(Eigen::Index(p));
      const double lo = panels[p].lo, mid = 0.5 * (lo + x), rad = 0.5 * (x - lo);
      if (rad > 0) {
        for (std::size_t k = 0; k < rule.nodes.size(); ++k) {
          sys_->eval(mid + rad * rule.nodes[k], lmax_, v.data());
          for (int l = 0; l <= lmax_; ++l) acc(l) += rad * rule.weights[k] * v[std::size_t(l)];
        }
      }
      out.row(Eigen::Index(i)) = acc - 0.5 * total_.transpose();
    }
    return out;
  }

 private:
  const WeightedPolySystem* sys_;
  int lmax_;
  PanelGrid grid_;
  Eigen::MatrixXd psi_, dpsi_, eps_;
  Eigen::VectorXd total_;
  Eigen::MatrixXd panel_start_;
};

/// D_jk = (ψ_j', ψ_k) and M_jk = (εψ_j, ψ_k), including the tail indices above n.
struct OperatorMatrices {
  int n = 0;
  Eigen::MatrixXd D_ext, M_ext;
  double d_antisymmetry = 0.0, m_antisymmetry = 0.0;

  Eigen::MatrixXd D() const { return D_ext.topLeftCorner(n, n); }
  Eigen::MatrixXd M() const { return M_ext.topLeftCorner(n, n); }
  double M_condition() const {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(M());
    const auto& s = svd.singularValues();
    return s(s.size() - 1) > 0 ? s(0) / s(s.size() - 1) : std::numeric_limits<double>::infinity();
  }
  /// Bottom-right (2m-1)×(2m-1) corner of D_n M_n.
  Eigen::MatrixXd T(int m) const {
    const int k = 2 * m - 1;
    Eigen::MatrixXd DM = D() * M();
    return DM.bottomRightCorner(k, k);
  }
};

inline OperatorMatrices build_operator_matrices(const LineTables& tab, double tolerance = 1e-8) {
  OperatorMatrices out;
  out.n = tab.system().n();
  Eigen::Map<const Eigen::VectorXd> w = tab.grid().weight_vector();
  out.D_ext = tab.dpsi().transpose() * w.asDiagonal() * tab.psi();
  out.M_ext = tab.eps().transpose() * w.asDiagonal() * tab.psi();
  const int n = out.n;
  out.d_antisymmetry = (out.D() + out.D().transpose()).cwiseAbs().maxCoeff();
  out.m_antisymmetry = (out.M() + out.M().transpose()).cwiseAbs().maxCoeff();
  if (out.d_antisymmetry > tolerance || out.m_antisymmetry > tolerance)
    throw NumericalError("build_operator_matrices: antisymmetry residual D " + std::to_string(out.d_antisymmetry) +
                         ", M " + std::to_string(out.m_antisymmetry));
  (void)n;
  return out;
}

/// Values of the kernel building blocks at a set of points.
struct PointTables {
  Eigen::MatrixXd psi, dpsi, eps;  // rows = points, columns = indices 0..lmax
};

inline PointTables point_tables(const LineTables& tab, std::span<const double> xs) {
  PointTables p;
  p.psi = tab.system().table(xs, tab.lmax(), &p.dpsi);
  p.eps = tab.eps_at(xs);
  return p;
}

/// β = 1 or 4 matrix kernel S(λ,μ) = f(λ)^T C g(μ), with
///   D(λ,μ) = -f(λ)^T C g'(μ) and I(λ,μ) = (εf)(λ)^T C g(μ).
/// β = 1: f = ψ, g = εψ, C = M_n^{-1}.  β = 4: f = ψ', g = ψ, C = -D_n^{-1}.
class MatrixKernel {
 public:
  MatrixKernel(int beta, const LineTables& tab, Eigen::MatrixXd coef) : beta_(beta), tab_(&tab), C_(std::move(coef)) {
    if (beta != 1 && beta != 4) throw InvalidArgument("MatrixKernel: beta must be 1 or 4");
  }

  int beta() const { return beta_; }
  int n() const { return int(C_.rows()); }
  const Eigen::MatrixXd& coef() const { return C_; }
  const LineTables& tables() const { return *tab_; }

  struct Sides {
    Eigen::MatrixXd f, g, dg, ef;  // rows = points, columns = 0..n-1
  };

  Sides sides(const PointTables& p) const {
    const int k = n();
    Sides s;
    if (beta_ == 1) {
      s.f = p.psi.leftCols(k);
      s.g = p.eps.leftCols(k);
      s.dg = p.psi.leftCols(k);
      s.ef = p.eps.leftCols(k);
    } else {
      s.f = p.dpsi.leftCols(k);
      s.g = p.psi.leftCols(k);
      s.dg = p.dpsi.leftCols(k);
      s.ef = p.psi.leftCols(k);
    }
    return s;
  }

  Sides sides(std::span<const double> xs) const { return sides(point_tables(*tab_, xs)); }

  /// Matrices S(x_i, y_j), D(x_i, y_j), I(x_i, y_j).
  Eigen::MatrixXd S(const Sides& x, const Sides& y) const { return x.f * C_ * y.g.transpose(); }
  Eigen::MatrixXd D(const Sides& x, const Sides& y) const { return -x.f * C_ * y.dg.transpose(); }
  Eigen::MatrixXd I(const Sides& x, const Sides& y) const { return x.ef * C_ * y.g.transpose(); }

  double S(double x, double y) const {
    const double px[1] = {x}, py[1] = {y};
    return S(sides(px), sides(py))(0, 0);
  }

 private:
  int beta_;
  const LineTables* tab_;
  Eigen::MatrixXd C_;
};

/// S_{n,1}(λ,μ) = Σ ψ_j(λ) (M_n^{-1})_{jk} (εψ_k)(μ); requires even n.
inline MatrixKernel build_S1(const LineTables& tab, const OperatorMatrices& mats) {
  if (mats.n % 2 != 0) throw InvalidArgument("build_S1: n must be even");
  Eigen::FullPivLU<Eigen::MatrixXd> lu(mats.M());
  if (!lu.isInvertible() || mats.M_condition() > 1e12) throw NumericalError("build_S1: M_n is singular");
  return MatrixKernel(1, tab, lu.inverse());
}

/// S_4(λ,μ) = -Σ ψ_j'(λ) (D_n^{-1})_{jk} ψ_k(μ); n functions describe n/2 particles.
inline MatrixKernel build_S4(const LineTables& tab, const OperatorMatrices& mats) {
  if (mats.n % 2 != 0) throw InvalidArgument("build_S4: n must be even");
  Eigen::FullPivLU<Eigen::MatrixXd> lu(mats.D());
  if (!lu.isInvertible()) throw NumericalError("build_S4: D_n is singular");
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(mats.D());
  const auto& s = svd.singularValues();
  if (s(s.size() - 1) < 1e-12 * s(0)) throw NumericalError("build_S4: D_n is singular");
  return MatrixKernel(4, tab, -lu.inverse());
}

/// Everything needed for one β=1/4 system: tables, matrices and the kernel.
/// Held through pointers so that the internal references survive moves.
struct PfaffianSetup {
  std::unique_ptr<WeightedPolySystem> sys;
  std::unique_ptr<LineTables> tables;
  OperatorMatrices mats;
  std::unique_ptr<MatrixKernel> kernel;
};

/// Builds a system with n functions and all matrix-kernel ingredients.
inline PfaffianSetup make_pfaffian_setup(const PolynomialPotential& V, int beta, int n,
                                         std::vector<double> breaks = {}) {
  PfaffianSetup s;
  s.sys = std::make_unique<WeightedPolySystem>(build_system(V, n, n + 2 * V.m()));
  s.tables = std::make_unique<LineTables>(*s.sys, s.sys->L(), std::move(breaks));
  s.mats = build_operator_matrices(*s.tables);
  s.kernel = std::make_unique<MatrixKernel>(beta == 1 ? build_S1(*s.tables, s.mats) : build_S4(*s.tables, s.mats));
  return s;
}

/// max |ε_λ D(λ, μ) - S(μ, λ)| over the line grid (λ) and the sample points (μ).
inline double integration_by_parts_residual(const MatrixKernel& K, std::span<const double> mus) {
  const auto& tab = K.tables();
  auto line = K.sides(PointTables{tab.psi(), tab.dpsi(), tab.eps()});
  auto at = K.sides(mus);
  Eigen::MatrixXd D = K.D(line, at);
  Eigen::MatrixXd epsD = epsilon_apply(tab.grid(), D);
  Eigen::MatrixXd St = K.S(at, line).transpose();
  return (epsD - St).cwiseAbs().maxCoeff();
}

/// ∫ S(λ, λ) dλ over the whole line.
inline double kernel_trace(const MatrixKernel& K) {
  const auto& tab = K.tables();
  auto line = K.sides(PointTables{tab.psi(), tab.dpsi(), tab.eps()});
  Eigen::VectorXd diag = (line.f * K.coef()).cwiseProduct(line.g).rowwise().sum();
  return diag.dot(tab.grid().weight_vector());
}

struct WidomDecomposition {
  /// F_jk for j, k ∈ [-(2m-1), 2m-1]; entry (j + 2m-1, k + 2m-1).
  Eigen::MatrixXd F;
  Eigen::MatrixXd T;
  double residual = 0.0;  // ‖S - K_n - n Σ F ψ⊗εψ‖ / ‖S‖ on the sample grid
  double max_abs_F = 0.0;
  int m = 0;
  double at(int j, int k) const { return F(j + 2 * m - 1, k + 2 * m - 1); }
};

/// Least-squares recovery of the finite-rank correction S - K_n = n Σ F_jk ψ_{n+j} ⊗ εψ_{n+k}.
inline WidomDecomposition widom_decompose(const MatrixKernel& K, const OperatorMatrices& mats, int m,
                                          double tolerance = 1e-6) {
  const auto& tab = K.tables();
  const int n = K.n();
  const int r = 2 * m - 1;
  if (n + r > tab.lmax()) throw InvalidArgument("widom_decompose: tables need indices up to n + 2m - 1");
  // Keep the grid points where the functions are not negligible.
  std::vector<Eigen::Index> rows;
  const double peak = tab.psi().cwiseAbs().maxCoeff();
  for (Eigen::Index i = 0; i < tab.psi().rows(); ++i)
    if (tab.psi().row(i).cwiseAbs().maxCoeff() > 1e-14 * peak) rows.push_back(i);
  const auto N = Eigen::Index(rows.size());
  PointTables pt{Eigen::MatrixXd(N, tab.lmax() + 1), Eigen::MatrixXd(N, tab.lmax() + 1),
                 Eigen::MatrixXd(N, tab.lmax() + 1)};
  for (Eigen::Index i = 0; i < N; ++i) {
    pt.psi.row(i) = tab.psi().row(rows[std::size_t(i)]);
    pt.dpsi.row(i) = tab.dpsi().row(rows[std::size_t(i)]);
    pt.eps.row(i) = tab.eps().row(rows[std::size_t(i)]);
  }
  auto sd = K.sides(pt);
  Eigen::MatrixXd S = K.S(sd, sd);
  Eigen::MatrixXd Kn = pt.psi.leftCols(n) * pt.psi.leftCols(n).transpose();
  Eigen::MatrixXd R = S - Kn;
  Eigen::MatrixXd rowsB = pt.psi.middleCols(n - r, 2 * r + 1);
  Eigen::MatrixXd colsB = pt.eps.middleCols(n - r, 2 * r + 1);
  auto qr_r = rowsB.colPivHouseholderQr();
  auto qr_c = colsB.colPivHouseholderQr();
  Eigen::MatrixXd X = qr_r.solve(R);                                   // (2r+1) × N
  Eigen::MatrixXd F = qr_c.solve(X.transpose()).transpose() / double(n);  // (2r+1) × (2r+1)
  WidomDecomposition out;
  out.m = m;
  out.F = F;
  out.residual = (R - double(n) * rowsB * F * colsB.transpose()).norm() / S.norm();
  out.max_abs_F = F.cwiseAbs().maxCoeff();
  out.T = mats.T(m);
  if (out.residual > tolerance)
    throw NumericalError("widom_decompose: residual " + std::to_string(out.residual) + " above tolerance");
  return out;
}

/// The rank-one operator (Pf)(λ) = (S(λ,a) - S(λ,b)) (f, Ψ_Δ) on the line grid,
/// with Ψ_Δ = ½(1_{t<a} - 1_{t>b}); matrix form u v^T.
struct RankOneOperator {
  Eigen::VectorXd u, v;
  Eigen::MatrixXd matrix() const { return u * v.transpose(); }
  Eigen::VectorXd apply(const Eigen::VectorXd& f) const { return u * v.dot(f); }
};

inline RankOneOperator rank_one_P(const MatrixKernel& K, Interval delta) {
  const auto& tab = K.tables();
  auto line = K.sides(PointTables{tab.psi(), tab.dpsi(), tab.eps()});
  const double ends[2] = {delta.a, delta.b};
  auto e = K.sides(ends);
  Eigen::MatrixXd Sab = K.S(line, e);
  RankOneOperator P;
  P.u = Sab.col(0) - Sab.col(1);
  P.v.resize(Eigen::Index(tab.grid().size()));
  for (std::size_t i = 0; i < tab.grid().size(); ++i) {
    const double t = tab.grid().nodes()[i];
    const double psi = t < delta.a ? 0.5 : (t > delta.b ? -0.5 : 0.0);
    P.v(Eigen::Index(i)) = tab.grid().weights()[i] * psi;
  }
  return P;
}

/// Matrix kernel restricted to Δ, discretized on an interval grid.
struct BlockKernel {
  int beta = 1;
  Interval delta;
  PanelGrid grid;
  Eigen::MatrixXd S, D, I;  // kernel values at (t_i, t_j)
  Eigen::MatrixXd E;        // quadrature operator for ε on Δ
  /// 2N×2N matrix with plain right weighting (includes the ½ for β = 4).
  Eigen::MatrixXd B;
  double mean_count = 0.0;

  /// Largest entry of (K J) + (K J)^T with J = [[0,-1],[1,0]], on kernel values.
  double skew_residual() const {
    const Eigen::Index N = S.rows();
    Eigen::MatrixXd sgn(N, N);
    const auto& t = grid.nodes();
    for (Eigen::Index i = 0; i < N; ++i)
      for (Eigen::Index j = 0; j < N; ++j)
        sgn(i, j) = 0.5 * ((t[std::size_t(i)] > t[std::size_t(j)]) - (t[std::size_t(i)] < t[std::size_t(j)]));
    Eigen::MatrixXd bottom = beta == 1 ? Eigen::MatrixXd(I - sgn) : I;
    Eigen::MatrixXd X(2 * N, 2 * N);
    X << D, -S, S.transpose(), -bottom;
    return (X + X.transpose()).cwiseAbs().maxCoeff();
  }
};

inline PanelGrid interval_grid(const WeightedPolySystem& sys, Interval delta, int nodes = 0, int order = 20) {
  const int rule = nodes > 0 ? nodes : std::max(nyquist_nodes(sys, delta), 200);
  return PanelGrid::uniform(delta.a, delta.b, std::size_t(std::ceil(double(rule) / order)), order);
}

inline BlockKernel assemble_block_kernel(const MatrixKernel& K, Interval delta, int nodes = 0) {
  BlockKernel bk;
  bk.beta = K.beta();
  bk.delta = delta;
  bk.grid = interval_grid(K.tables().system(), delta, nodes);
  auto sd = K.sides(bk.grid.nodes());
  bk.S = K.S(sd, sd);
  bk.D = K.D(sd, sd);
  bk.I = K.I(sd, sd);
  bk.E = epsilon_operator(bk.grid);
  const Eigen::Index N = bk.S.rows();
  Eigen::Map<const Eigen::VectorXd> w = bk.grid.weight_vector();
  auto Wd = w.asDiagonal();
  bk.B.resize(2 * N, 2 * N);
  Eigen::MatrixXd bottom_left = bk.I * Wd;
  if (bk.beta == 1) bottom_left -= bk.E;
  bk.B << bk.S * Wd, bk.D * Wd, bottom_left, bk.S.transpose() * Wd;
  const double factor = bk.beta == 4 ? 0.5 : 1.0;
  if (bk.beta == 4) bk.B *= 0.5;
  bk.mean_count = factor * bk.S.diagonal().dot(w);
  return bk;
}

/// Ingredients of the scalar reduction of det(1 + δ K_β[Δ]) to an N×N determinant.
struct ReductionData {
  int beta = 1;
  PanelGrid grid;
  Eigen::MatrixXd S;      // S(t_i, t_j)
  Eigen::VectorXd d1;     // S(t_i, a) - S(t_i, b)
  Eigen::VectorXd qdir;   // ½(S(t_i, a) + S(t_i, b))
  Eigen::VectorXd sigma;  // ∫ Ψ_Δ(λ) S(λ, t_j) dλ
  Eigen::VectorXd tau;    // ∫ Ψ_Δ(λ) D(λ, t_j) dλ
  Eigen::VectorXd eps_tau;
  double tau_bar = 0.0;
  double mean_count = 0.0;
};

inline ReductionData reduction_data(const MatrixKernel& K, Interval delta, int nodes = 0) {
  ReductionData r;
  r.beta = K.beta();
  r.grid = interval_grid(K.tables().system(), delta, nodes);
  auto sd = K.sides(r.grid.nodes());
  const double ends[2] = {delta.a, delta.b};
  auto se = K.sides(ends);
  r.S = K.S(sd, sd);
  Eigen::MatrixXd Sab = K.S(sd, se);
  r.d1 = Sab.col(0) - Sab.col(1);
  r.qdir = 0.5 * (Sab.col(0) + Sab.col(1));
  // (f, Ψ_Δ) = ½((εf)(a) + (εf)(b)) for f decaying at both ends.
  Eigen::RowVectorXd kappa = 0.5 * (se.ef.row(0) + se.ef.row(1));
  r.sigma = (kappa * K.coef() * sd.g.transpose()).transpose();
  r.tau = -(kappa * K.coef() * sd.dg.transpose()).transpose();
  Eigen::Map<const Eigen::VectorXd> w = r.grid.weight_vector();
  r.tau_bar = r.tau.dot(w);
  r.eps_tau = epsilon_operator(r.grid) * r.tau;
  r.mean_count = (r.beta == 4 ? 0.5 : 1.0) * r.S.diagonal().dot(w);
  return r;
}

/// Variants of the reduced operator.
enum class ReductionForm {
  /// Exact: (1 + hτ̄) det(1 + δ̃ S + P - e h Q).
  exact,
  /// The exact form with the rank-one P and the prefactor dropped.
  without_P,
  /// det(1 + δ̃ S_Δ + δ P) with (Pf) = (S(·,a) - S(·,b)) (f, Ψ_Δ); for f on Δ
  /// the pairing vanishes, so this is det(1 + δ̃ S_Δ).
  literal,
};

/// log det(1 + δ K_β[Δ]) through the N×N reduction, together with the sign of
/// the determinant. h = δ, e = 1 + δ for β = 1 and h = δ/2, e = 1 for β = 4.
inline std::pair<double, double> reduced_log_det(const ReductionData& r, double delta_n,
                                                 ReductionForm form = ReductionForm::exact) {
  const bool b1 = r.beta == 1;
  const double h = b1 ? delta_n : 0.5 * delta_n;
  const double e = b1 ? 1.0 + delta_n : 1.0;
  const double st = b1 ? 2.0 * delta_n + delta_n * delta_n : delta_n;
  Eigen::Map<const Eigen::VectorXd> w = r.grid.weight_vector();
  const Eigen::Index N = r.S.rows();
  Eigen::MatrixXd A = Eigen::MatrixXd::Identity(N, N) + st * r.S * w.asDiagonal();
  double pre = 1.0;
  if (form != ReductionForm::literal) {
    A -= e * h * r.qdir * w.transpose();
    if (form == ReductionForm::exact) {
      pre = 1.0 + h * r.tau_bar;
      Eigen::VectorXd rho = (r.sigma - e * r.eps_tau).cwiseProduct(w);
      A -= (h * h / pre) * r.d1 * rho.transpose();
    }
  }
  Eigen::PartialPivLU<Eigen::MatrixXd> lu(A);
  const Eigen::MatrixXd& U = lu.matrixLU();
  double logabs = std::log(std::abs(pre)), sign = pre < 0 ? -1.0 : 1.0;
  for (Eigen::Index i = 0; i < N; ++i) {
    logabs += std::log(std::abs(U(i, i)));
    if (U(i, i) < 0) sign = -sign;
  }
  sign *= lu.permutationP().determinant();
  return {logabs, sign};
}

}  // namespace betacount
