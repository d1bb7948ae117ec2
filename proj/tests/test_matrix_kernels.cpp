#include <cmath>
#include <complex>
#include <map>

#include <gtest/gtest.h>

#include "betacount/matrix_kernels.hpp"

using namespace betacount;

namespace {

const PfaffianSetup& setup(int which, int beta, int n) {
  static std::map<std::tuple<int, int, int>, PfaffianSetup> cache;
  auto key = std::make_tuple(which, beta, n);
  auto it = cache.find(key);
  if (it == cache.end()) {
    auto V = which == 0 ? validate_potential({0, 0, 0.5}) : validate_potential({0, 0, -1, 0, 1});
    it = cache.emplace(key, make_pfaffian_setup(V, beta, n)).first;
  }
  return it->second;
}

double block_log_det(const BlockKernel& bk, double delta) {
  Eigen::EigenSolver<Eigen::MatrixXd> es(bk.B, false);
  std::complex<double> acc = 0;
  for (auto l : es.eigenvalues()) acc += std::log(1.0 + delta * l);
  return acc.real();
}

}  // namespace

TEST(Epsilon, ParityAndDerivative) {
  // ε of an even function is odd, and (εf)' = f.
  auto grid = PanelGrid::uniform(-8, 8, 16, 20);
  Eigen::MatrixXd f(grid.size(), 1);
  for (std::size_t i = 0; i < grid.size(); ++i) f(Eigen::Index(i), 0) = std::exp(-grid.nodes()[i] * grid.nodes()[i]);
  Eigen::MatrixXd ef = epsilon_apply(grid, f);
  const double s = std::sqrt(std::numbers::pi);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double t = grid.nodes()[i];
    EXPECT_NEAR(ef(Eigen::Index(i), 0), 0.5 * s * std::erf(t), 1e-12);
  }
  Eigen::MatrixXd E = epsilon_operator(grid);
  Eigen::VectorXd ef2 = E * f.col(0);
  EXPECT_LT((ef2 - ef.col(0)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Epsilon, SelfPairingVanishes) {
  const auto& s = setup(1, 1, 12);
  for (int j = 0; j < 12; ++j) EXPECT_NEAR(s.mats.M_ext(j, j), 0.0, 1e-12);
  EXPECT_LT(s.mats.m_antisymmetry, 1e-10);
  EXPECT_LT(s.mats.d_antisymmetry, 1e-10);
}

TEST(OperatorMatrices, GaussianDerivativeIsBanded) {
  // Weight e^{-nλ²/2}: with x = sqrt(n) λ these are Hermite functions for
  // e^{-x²/2}, and ψ_j' = (sqrt(n)/2) (sqrt(j) ψ_{j-1} - sqrt(j+1) ψ_{j+1}).
  const auto& s = setup(0, 1, 12);
  const double n = 12;
  Eigen::MatrixXd D = s.mats.D();
  for (int j = 0; j < 12; ++j)
    for (int k = 0; k < 12; ++k) {
      double expect = 0;
      if (k == j + 1) expect = -0.5 * std::sqrt(n * (j + 1));
      if (k == j - 1) expect = 0.5 * std::sqrt(n * j);
      EXPECT_NEAR(D(j, k), expect, 1e-9) << j << "," << k;
    }
  EXPECT_LT(s.mats.M_condition(), 1e6);
}

TEST(OperatorMatrices, OddSizeRejected) {
  auto V = validate_potential({0, 0, 0.5});
  auto sys = build_system(V, 7, 9);
  LineTables tab(sys, 9);
  auto mats = build_operator_matrices(tab);
  EXPECT_THROW(build_S1(tab, mats), InvalidArgument);
  EXPECT_THROW(build_S4(tab, mats), InvalidArgument);
}

class MatrixKernelProps : public ::testing::TestWithParam<std::tuple<int, int>> {};

TEST_P(MatrixKernelProps, IntegrationByPartsAndTrace) {
  auto [which, beta] = GetParam();
  const auto& s = setup(which, beta, 12);
  const double mus[4] = {-0.9, -0.2, 0.35, 1.1};
  EXPECT_LT(integration_by_parts_residual(*s.kernel, mus), 1e-9);
  EXPECT_NEAR(kernel_trace(*s.kernel), 12.0, 1e-8);
}

TEST_P(MatrixKernelProps, WidomDecompositionIsExact) {
  auto [which, beta] = GetParam();
  const auto& s = setup(which, beta, 12);
  const int m = s.sys->potential().m();
  auto wd = widom_decompose(*s.kernel, s.mats, m);
  EXPECT_LT(wd.residual, 1e-8);
  EXPECT_EQ(wd.F.rows(), 2 * (2 * m - 1) + 1);
  if (which == 0) {
    // Gaussian: a single coefficient ½ next to the diagonal.
    const int j0 = beta == 1 ? -1 : 0, k0 = beta == 1 ? 0 : -1;
    for (int j = -1; j <= 1; ++j)
      for (int k = -1; k <= 1; ++k) EXPECT_NEAR(wd.at(j, k), (j == j0 && k == k0) ? 0.5 : 0.0, 1e-8);
  }
  EXPECT_EQ(wd.T.rows(), 2 * m - 1);
}

TEST_P(MatrixKernelProps, BlockSkewAndReductionAgree) {
  auto [which, beta] = GetParam();
  const auto& s = setup(which, beta, 12);
  Interval d = which == 0 ? Interval{-1, 1} : Interval{-0.6, 0.6};
  auto bk = assemble_block_kernel(*s.kernel, d);
  EXPECT_LT(bk.skew_residual(), 1e-9);
  auto rd = reduction_data(*s.kernel, d);
  EXPECT_NEAR(bk.mean_count, rd.mean_count, 1e-12);
  const Eigen::Index N = bk.S.rows();
  // Lower-right block is the transposed S with the same weights.
  Eigen::MatrixXd lr = bk.B.bottomRightCorner(N, N), ul = bk.B.topLeftCorner(N, N);
  Eigen::Map<const Eigen::VectorXd> w = bk.grid.weight_vector();
  const double f = beta == 4 ? 0.5 : 1.0;
  EXPECT_LT((lr - f * bk.S.transpose() * w.asDiagonal()).cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_LT((ul - f * bk.S * w.asDiagonal()).cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_NEAR(block_log_det(bk, 0.0), 0.0, 1e-15);
  for (double delta : {-0.6, 0.8, 3.0}) {
    const double b = block_log_det(bk, delta);
    auto [r, sign] = reduced_log_det(rd, delta);
    EXPECT_GT(sign, 0);
    EXPECT_NEAR(b, r, 1e-8) << delta;
  }
}

INSTANTIATE_TEST_SUITE_P(Potentials, MatrixKernelProps,
                         ::testing::Values(std::make_tuple(0, 1), std::make_tuple(0, 4), std::make_tuple(1, 1),
                                           std::make_tuple(1, 4)));

TEST(MatrixKernel, PerturbedCoefficientsBreakIdentities) {
  const auto& s = setup(1, 1, 12);
  const double mus[3] = {-0.5, 0.1, 0.8};
  // εD = S^T holds for any antisymmetric coefficient matrix, so a one-sided
  // change breaks it while an antisymmetric change only moves the trace.
  Eigen::MatrixXd M = s.mats.M();
  M(2, 5) *= 1.01;
  MatrixKernel one_sided(1, *s.tables, M.inverse());
  EXPECT_GT(integration_by_parts_residual(one_sided, mus), 1e-4);
  M(5, 2) *= 1.01;
  MatrixKernel anti(1, *s.tables, M.inverse());
  EXPECT_LT(integration_by_parts_residual(anti, mus), 1e-9);
  EXPECT_GT(std::abs(kernel_trace(anti) - 12.0), 1e-3);
}

TEST(RankOne, PIsRankOneAndVanishesOnDelta) {
  const auto& s = setup(1, 1, 12);
  Interval d{-0.6, 0.6};
  auto P = rank_one_P(*s.kernel, d);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(P.matrix());
  const auto& sv = svd.singularValues();
  EXPECT_GT(sv(0), 0);
  EXPECT_LT(sv(1), 1e-12 * sv(0));
  const auto& grid = s.tables->grid();
  Eigen::VectorXd inside(Eigen::Index(grid.size())), one = Eigen::VectorXd::Ones(Eigen::Index(grid.size()));
  for (std::size_t i = 0; i < grid.size(); ++i) inside(Eigen::Index(i)) = d.contains(grid.nodes()[i]) ? 1.0 : 0.0;
  EXPECT_LT(P.apply(inside).cwiseAbs().maxCoeff(), 1e-15);
  // (1, Ψ_Δ) = ½(a - lo) - ½(hi - b), up to the quadrature of a step function.
  const double expect = 0.5 * (d.a - grid.lo()) - 0.5 * (grid.hi() - d.b);
  EXPECT_NEAR(P.v.dot(one), expect, 0.05);
}

TEST(Reduction, LiteralFormDiffersFromBlock) {
  // Keeping only the rank-one term, which vanishes on Δ, loses the boundary
  // coupling; the gap is what the exact form accounts for.
  const auto& s = setup(1, 1, 12);
  Interval d{-0.6, 0.6};
  auto bk = assemble_block_kernel(*s.kernel, d);
  auto rd = reduction_data(*s.kernel, d);
  const double b = block_log_det(bk, 1.5);
  auto [lit, sign] = reduced_log_det(rd, 1.5, ReductionForm::literal);
  (void)sign;
  EXPECT_GT(std::abs(b - lit), 1e-3);
}
