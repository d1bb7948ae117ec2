#include <cmath>
#include <map>
#include <numbers>

#include <gtest/gtest.h>

#include "betacount/equilibrium.hpp"
#include "betacount/fredholm.hpp"

using namespace betacount;

namespace {

const double kPi = std::numbers::pi;

const WeightedPolySystem& gaussian(int n) {
  static std::map<int, WeightedPolySystem> cache;
  auto it = cache.find(n);
  if (it == cache.end()) it = cache.emplace(n, build_system(validate_potential({0, 0, 0.5}), n, n + 4)).first;
  return it->second;
}

}  // namespace

TEST(VarianceTrace, MatchesDoubleQuadrature) {
  const auto& sys = gaussian(100);
  Interval d{-0.5, 0.5};
  auto K = project_kernel(sys, d);
  const double v = variance_trace(K);
  EXPECT_NEAR(v, variance_trace_double_quadrature(sys, d), 1e-6);
  EXPECT_NEAR(v, std::log(100.0) / (kPi * kPi), 0.35);
}

TEST(VarianceTrace, WholeLineIsZero) {
  const auto& sys = gaussian(50);
  ProjectionOptions opt;
  opt.require_interior = false;
  auto K = project_kernel(sys, {sys.domain_lo(), sys.domain_hi()}, opt);
  EXPECT_NEAR(variance_trace(K), 0.0, 1e-6);
}

TEST(VarianceTrace, IncreasesWithN) {
  double prev = 0.0;
  for (int n : {50, 100, 200}) {
    const double v = variance_trace(project_kernel(gaussian(n), {-1, 1}));
    EXPECT_GT(v, prev) << n;
    prev = v;
  }
}

TEST(Beta2, ZeroConvexityAndCurvature) {
  const int n = 100;
  auto K = project_kernel(gaussian(n), {-1, 1});
  EXPECT_EQ(char_functional_beta2(K, n, 0.0).log_phi, 0.0);
  std::vector<double> vals;
  for (int i = 0; i <= 10; ++i) vals.push_back(char_functional_beta2(K, n, -2.0 + 0.4 * i).log_phi);
  for (std::size_t i = 1; i + 1 < vals.size(); ++i) EXPECT_GT(vals[i - 1] + vals[i + 1] - 2 * vals[i], 0.0);
  const double h = 1e-3;
  const double second = (char_functional_beta2(K, n, h).log_phi + char_functional_beta2(K, n, -h).log_phi) / (h * h);
  EXPECT_NEAR(second, kPi * kPi / std::log(double(n)) * variance_trace(K), 1e-4);
  EXPECT_THROW(char_functional_beta2(K, n, -1e3), InvalidArgument);
}

TEST(Beta2, ReflectionSymmetryForEvenPotential) {
  auto V = validate_potential({0, 0, -1, 0, 1});
  auto sys = build_system(V, 60, 64);
  auto left = project_kernel(sys, {-0.9, 0.3});
  auto right = project_kernel(sys, {-0.3, 0.9});
  for (double x : {-1.0, 0.5, 2.0})
    EXPECT_NEAR(char_functional_beta2(left, 60, x).log_phi, char_functional_beta2(right, 60, x).log_phi, 1e-9);
}

TEST(Beta2, MeanCountNearEquilibriumMass) {
  auto V = validate_potential({0, 0, 0.5});
  EquilibriumMeasure mu(V, solve_one_cut_support(V));
  for (int n : {50, 100, 200}) {
    auto K = project_kernel(gaussian(n), {-1, 1});
    EXPECT_NEAR(mean_count(K), n * mu.mass_between(-1, 1), 1.0) << n;
  }
}

TEST(Pfaffian, BlockMatchesReducedAndIsReal) {
  auto V = validate_potential({0, 0, 0.5});
  for (int beta : {1, 4}) {
    auto s = make_pfaffian_setup(V, beta, 12);
    const int particles = beta == 4 ? 6 : 12;
    Interval d{-1, 1};
    auto bk = assemble_block_kernel(*s.kernel, d);
    auto rd = reduction_data(*s.kernel, d);
    const double EN = mean_count(bk);
    EXPECT_EQ(char_functional_block(bk, particles, 0.0, EN).log_phi, 0.0);
    for (double x : {-0.5, 0.5, 1.0}) {
      auto b = char_functional_block(bk, particles, x, EN);
      auto r = char_functional_scalar_reduced(rd, particles, x, EN);
      EXPECT_NEAR(b.log_phi, r.log_phi, 1e-6) << beta << " " << x;
      EXPECT_LT(std::abs(b.diagnostics.final_imaginary), 1e-8);
      EXPECT_LT(b.diagnostics.max_phase_increment, 0.5);
      EXPECT_EQ(b.method, "block");
    }
    // Centered: the first derivative vanishes at 0.
    const double h = 1e-3;
    const double slope = (char_functional_scalar_reduced(rd, particles, h, EN).log_phi -
                          char_functional_scalar_reduced(rd, particles, -h, EN).log_phi) /
                         (2 * h);
    EXPECT_NEAR(slope, 0.0, 1e-4);
  }
}

TEST(Pfaffian, DroppingRankOneTermIsOrderDelta) {
  auto V = validate_potential({0, 0, 0.5});
  auto s = make_pfaffian_setup(V, 1, 16);
  auto rd = reduction_data(*s.kernel, {-1, 1});
  for (double x : {-0.5, 0.5, 1.0}) {
    auto with = char_functional_scalar_reduced(rd, 16, x, rd.mean_count);
    auto without = char_functional_scalar_reduced(rd, 16, x, rd.mean_count, ReductionForm::without_P);
    EXPECT_LE(std::abs(with.log_phi - without.log_phi), 5 * std::abs(with.delta_n)) << x;
  }
}

TEST(CorrectionBounds, FiniteAndBoundedInN) {
  std::vector<double> defect, mean_scaled;
  for (int n : {50, 100, 200}) {
    auto b = widom_correction_bounds(gaussian(n), {-1, 1}, 1.0);
    for (double v : {b.resolvent_pairing, b.interval_pairing, b.kernel_pairing, b.defect_eps_norm, b.mean_pairing,
                     b.kernel_mean_pairing, b.defect_one_norm})
      EXPECT_TRUE(std::isfinite(v));
    EXPECT_EQ(b.boundary_pairing, 0.0);
    defect.push_back(b.defect_one_norm);
    mean_scaled.push_back(b.mean_pairing * std::sqrt(double(n)));
  }
  // Bounded constants: no growth beyond a factor 2 over a fourfold range of n.
  EXPECT_LT(defect.back(), 2 * defect.front());
  EXPECT_LT(mean_scaled.back(), 2 * mean_scaled.front());
}
