#pragma once

#include <cmath>
#include <complex>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "betacount/error.hpp"
#include "betacount/kernel.hpp"
#include "betacount/matrix_kernels.hpp"

namespace betacount {

/// x_n = xπ / sqrt(log n).
inline double scaled_x(double x, int particles) {
  if (particles < 2) throw InvalidArgument("scaled_x: need at least two particles");
  return x * std::numbers::pi / std::sqrt(std::log(double(particles)));
}

struct BranchDiagnostics {
  int steps = 0;
  /// Largest change of the phase of the determinant between path points.
  double max_phase_increment = 0.0;
  /// Largest change of log Φ̂ between path points.
  double max_value_increment = 0.0;
  double final_imaginary = 0.0;
  /// Smallest |1 + δ λ| (block form) or |det| relative scale (scalar form) met on the path.
  double min_modulus = 0.0;
};

struct CharFunctionalResult {
  double x = 0.0;
  double x_n = 0.0;
  double delta_n = 0.0;
  double log_phi = 0.0;
  double mean_count = 0.0;
  std::string method;
  int n = 0;
  int beta = 2;
  Interval interval;
  BranchDiagnostics diagnostics;
};

/// Tr A(1 - A) for the symmetric β = 2 discretization.
inline double variance_trace(const DiscretizedKernel& K) {
  if (!K.symmetrized) throw InvalidArgument("variance_trace: needs the symmetrized kernel");
  const double v = K.A.trace() - K.A.squaredNorm();
  if (v < -1e-8) throw NumericalError("variance_trace: negative value " + std::to_string(v));
  return v;
}

/// ∫_Δ dλ ∫_{outside Δ} K_n(λ, μ)² dμ by direct double quadrature.
inline double variance_trace_double_quadrature(const WeightedPolySystem& sys, Interval delta) {
  auto grid = line_grid(sys, {delta.a, delta.b});
  std::vector<double> in, win, out, wout;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double t = grid.nodes()[i];
    (delta.contains(t) ? in : out).push_back(t);
    (delta.contains(t) ? win : wout).push_back(grid.weights()[i]);
  }
  Eigen::MatrixXd K = kernel_matrix(sys, in, out);
  Eigen::Map<const Eigen::VectorXd> a(win.data(), Eigen::Index(win.size())), b(wout.data(), Eigen::Index(wout.size()));
  return a.transpose() * K.cwiseAbs2() * b;
}

/// log Φ̂_{n,2}(x) = -x_n Tr A + Σ log(1 + δ_n λ_i).
inline CharFunctionalResult char_functional_beta2(const DiscretizedKernel& K, int n, double x) {
  CharFunctionalResult r;
  r.x = x;
  r.n = n;
  r.beta = 2;
  r.method = "determinant";
  r.interval = K.delta;
  r.x_n = scaled_x(x, n);
  r.delta_n = std::expm1(r.x_n);
  if (r.delta_n <= -1.0) throw InvalidArgument("char_functional_beta2: delta_n <= -1");
  r.mean_count = K.trace();
  double acc = 0.0;
  for (Eigen::Index i = 0; i < K.eigenvalues.size(); ++i) acc += std::log1p(r.delta_n * K.eigenvalues(i));
  r.log_phi = x == 0.0 ? 0.0 : -r.x_n * r.mean_count + acc;
  r.diagnostics.steps = 1;
  return r;
}

namespace detail {

inline std::vector<double> x_path(double x, double step) {
  const int steps = std::max(1, int(std::ceil(std::abs(x) / step)));
  std::vector<double> path;
  for (int k = 1; k <= steps; ++k) path.push_back(x * k / steps);
  return path;
}

}  // namespace detail

/// log Φ̂ = -x_n E_N + ½ log det(1 + δ_n B), with the logarithm continued
/// from x = 0 along a path of steps ≤ `step`.
inline CharFunctionalResult char_functional_block(const BlockKernel& bk, int particles, double x,
                                                  double mean_count, double step = 0.05) {
  CharFunctionalResult r;
  r.x = x;
  r.n = particles;
  r.beta = bk.beta;
  r.method = "block";
  r.interval = bk.delta;
  r.mean_count = mean_count;
  r.x_n = scaled_x(x, particles);
  r.delta_n = std::expm1(r.x_n);
  if (x == 0.0) return r;
  Eigen::EigenSolver<Eigen::MatrixXd> es(bk.B, false);
  const Eigen::VectorXcd lam = es.eigenvalues();
  std::vector<double> phase(std::size_t(lam.size()), 0.0);
  std::vector<std::complex<double>> prev(std::size_t(lam.size()), 1.0);
  double prev_total_phase = 0.0, prev_value = 0.0;
  double min_mod = std::numeric_limits<double>::infinity();
  double logabs = 0.0;
  for (double xp : detail::x_path(x, step)) {
    const double xn = scaled_x(xp, particles);
    const double d = std::expm1(xn);
    logabs = 0.0;
    double total_phase = 0.0;
    for (Eigen::Index i = 0; i < lam.size(); ++i) {
      const std::complex<double> z = 1.0 + d * lam(i);
      min_mod = std::min(min_mod, std::abs(z));
      if (std::abs(z) < 1e-12)
        throw NumericalError("char_functional_block: eigenvalue of 1 + delta B crosses zero (branch ambiguity)");
      phase[std::size_t(i)] += std::arg(z / prev[std::size_t(i)]);
      prev[std::size_t(i)] = z;
      logabs += std::log(std::abs(z));
      total_phase += phase[std::size_t(i)];
    }
    const double value = -xn * mean_count + 0.5 * logabs;
    r.diagnostics.max_phase_increment =
        std::max(r.diagnostics.max_phase_increment, std::abs(total_phase - prev_total_phase));
    r.diagnostics.max_value_increment = std::max(r.diagnostics.max_value_increment, std::abs(value - prev_value));
    prev_total_phase = total_phase;
    prev_value = value;
    ++r.diagnostics.steps;
  }
  r.diagnostics.min_modulus = min_mod;
  r.diagnostics.final_imaginary = 0.5 * prev_total_phase;
  if (r.diagnostics.max_phase_increment >= 0.5)
    throw NumericalError("char_functional_block: discontinuous phase along the path");
  if (std::abs(r.diagnostics.final_imaginary) > 1e-8)
    throw NumericalError("char_functional_block: determinant is not real positive");
  r.log_phi = -r.x_n * mean_count + 0.5 * logabs;
  return r;
}

/// Same functional through the scalar N×N reduction; the determinant must
/// keep its sign along the path.
inline CharFunctionalResult char_functional_scalar_reduced(const ReductionData& rd, int particles, double x,
                                                           double mean_count,
                                                           ReductionForm form = ReductionForm::exact,
                                                           double step = 0.05) {
  CharFunctionalResult r;
  r.x = x;
  r.n = particles;
  r.beta = rd.beta;
  r.method = form == ReductionForm::exact ? "scalar-reduced"
                                          : (form == ReductionForm::without_P ? "scalar-reduced-noP" : "scalar-literal");
  r.interval = {rd.grid.lo(), rd.grid.hi()};
  r.mean_count = mean_count;
  r.x_n = scaled_x(x, particles);
  r.delta_n = std::expm1(r.x_n);
  if (x == 0.0) return r;
  double prev_value = 0.0, logabs = 0.0;
  for (double xp : detail::x_path(x, step)) {
    const double xn = scaled_x(xp, particles);
    auto [la, sign] = reduced_log_det(rd, std::expm1(xn), form);
    if (sign < 0) throw NumericalError("char_functional_scalar_reduced: determinant changes sign along the path");
    logabs = la;
    const double value = -xn * mean_count + 0.5 * la;
    r.diagnostics.max_value_increment = std::max(r.diagnostics.max_value_increment, std::abs(value - prev_value));
    prev_value = value;
    ++r.diagnostics.steps;
  }
  r.log_phi = -r.x_n * mean_count + 0.5 * logabs;
  return r;
}

/// One-point function integrated over Δ: Tr A for β = 2; the S block (halved for β = 4) otherwise.
inline double mean_count(const DiscretizedKernel& K) { return K.trace(); }
inline double mean_count(const BlockKernel& bk) { return bk.mean_count; }

/// Left-hand sides of the remainder estimates for the β = 1 correction, with
/// R = (1 + δ̃ K_n[Δ])^{-1}, δ̃ = e^{2x_n} - 1 and all pairings over Δ.
struct CorrectionBounds {
  double x_n = 0.0;
  double delta_n = 0.0;
  double resolvent_pairing = 0.0;     // max |n (R ψ_{n-j}, εψ_{n+k})|
  double boundary_pairing = 0.0;      // max |(R 1_Δ S(·,a|b), Ψ_Δ)|, zero by support
  double interval_pairing = 0.0;      // max |n (1_Δ ψ_{n+k}, εψ_{n+j})|
  double kernel_pairing = 0.0;        // max |n (ψ_{n+k}, K_n[Δ] εψ_{n+j})|
  double defect_eps_norm = 0.0;       // max ‖n (K_n[Δ] - K_n²[Δ]) εψ_{n+j}‖
  double mean_pairing = 0.0;          // max |n^{1/2} (1_Δ ψ_{n+k}, 1_Δ)|
  double kernel_mean_pairing = 0.0;   // max |n^{1/2} (K_n[Δ] ψ_{n+k}, 1_Δ)|
  double defect_one_norm = 0.0;       // ‖n^{1/2} (K_n[Δ] - K_n²[Δ]) 1_Δ‖
};

inline CorrectionBounds widom_correction_bounds(const WeightedPolySystem& sys, Interval delta, double x,
                                                int nodes = 0) {
  const int n = sys.n();
  const int r = 2 * sys.potential().m() - 1;
  if (sys.L() < n + r) throw InvalidArgument("widom_correction_bounds: system needs indices up to n + 2m - 1");
  CorrectionBounds out;
  out.x_n = scaled_x(x, n);
  out.delta_n = std::expm1(out.x_n);
  const double dt = std::expm1(2.0 * out.x_n);
  LineTables tab(sys, sys.L(), {delta.a, delta.b});
  auto grid = interval_grid(sys, delta, nodes);
  auto pt = point_tables(tab, grid.nodes());
  Eigen::VectorXd w = grid.weight_vector();
  Eigen::VectorXd sw = w.cwiseSqrt();
  const Eigen::Index N = w.size();
  // Symmetric discretization: functions become sw ∘ f, operators sw K sw.
  Eigen::MatrixXd Phi = sw.asDiagonal() * pt.psi.leftCols(n);
  Eigen::MatrixXd A = Phi * Phi.transpose();
  Eigen::MatrixXd I = Eigen::MatrixXd::Identity(N, N);
  Eigen::PartialPivLU<Eigen::MatrixXd> R(I + dt * A);
  Eigen::MatrixXd AmA2 = A - A * A;
  Eigen::VectorXd one = sw;
  const double sn = std::sqrt(double(n));
  for (int j = -r; j <= r; ++j) {
    Eigen::VectorXd pj = sw.cwiseProduct(pt.psi.col(n + j));
    Eigen::VectorXd ej = sw.cwiseProduct(pt.eps.col(n + j));
    Eigen::VectorXd Rpj = R.solve(sw.cwiseProduct(pt.psi.col(n - j)));
    out.mean_pairing = std::max(out.mean_pairing, std::abs(sn * pj.dot(one)));
    out.kernel_mean_pairing = std::max(out.kernel_mean_pairing, std::abs(sn * (A * pj).dot(one)));
    out.defect_eps_norm = std::max(out.defect_eps_norm, (n * (AmA2 * ej)).norm());
    for (int k = -r; k <= r; ++k) {
      Eigen::VectorXd ek = sw.cwiseProduct(pt.eps.col(n + k));
      Eigen::VectorXd pk = sw.cwiseProduct(pt.psi.col(n + k));
      out.resolvent_pairing = std::max(out.resolvent_pairing, std::abs(n * Rpj.dot(ek)));
      out.interval_pairing = std::max(out.interval_pairing, std::abs(n * pk.dot(ej)));
      out.kernel_pairing = std::max(out.kernel_pairing, std::abs(n * pk.dot(A * ej)));
    }
  }
  out.defect_one_norm = sn * (AmA2 * one).norm();
  out.boundary_pairing = 0.0;
  return out;
}

}  // namespace betacount
