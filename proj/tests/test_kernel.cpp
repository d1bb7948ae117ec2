#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "betacount/kernel.hpp"

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

TEST(Kernel, ChristoffelDarbouxMatchesDirectSum) {
  const auto& sys = gaussian(40);
  for (auto [x, y] : std::vector<std::pair<double, double>>{{0.1, 0.4}, {-1.3, 0.7}, {0.5, 0.5}, {1.9, 1.9 + 1e-9}}) {
    std::vector<double> px(41), py(41);
    sys.eval(x, 40, px.data());
    sys.eval(y, 40, py.data());
    double direct = 0;
    for (int l = 0; l < 40; ++l) direct += px[l] * py[l];
    EXPECT_NEAR(kernel_cd(sys, x, y), direct, 1e-10);
    EXPECT_NEAR(kernel_cd(sys, x, y), kernel_cd(sys, y, x), 1e-12);
  }
}

TEST(Kernel, TraceAndReproducingProperty) {
  auto V = validate_potential({0, 0, -1, 0, 1});
  auto sys = build_system(V, 50, 54);
  EXPECT_NEAR(kernel_trace_full(sys), 50.0, 1e-6);
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(sys.support().min(), sys.support().max());
  std::vector<double> ls, ms;
  for (int i = 0; i < 10; ++i) {
    ls.push_back(u(rng));
    ms.push_back(u(rng));
  }
  EXPECT_LT(reproducing_residual(sys, ls, ms), 1e-6);
}

TEST(Kernel, ProjectionSpectrumAndFactor) {
  const auto& sys = gaussian(100);
  auto K = project_kernel(sys, {-0.5, 0.5});
  EXPECT_GE(K.eigenvalues.minCoeff(), 0.0);
  EXPECT_LE(K.eigenvalues.maxCoeff(), 1.0);
  EXPECT_LT((K.A - K.A.transpose()).cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_LT((K.A - K.factor * K.factor.transpose()).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_NEAR(K.trace(), K.eigenvalues.sum(), 1e-9);
  // n ∫_Δ ρ for the semicircle, up to an O(1) correction.
  const double mass = (0.5 * std::sqrt(4 - 0.25) + 4 * std::asin(0.25)) / (2 * kPi);
  EXPECT_NEAR(K.trace(), 100 * mass, 0.5);
}

TEST(Kernel, FullSupportTraceIsN) {
  const auto& sys = gaussian(50);
  ProjectionOptions opt;
  opt.require_interior = false;
  opt.nodes = 1600;
  auto K = project_kernel(sys, {sys.domain_lo(), sys.domain_hi()}, opt);
  EXPECT_NEAR(K.trace(), 50.0, 1e-6);
}

TEST(Kernel, InteriorMarginEnforced) {
  const auto& sys = gaussian(50);
  EXPECT_THROW(project_kernel(sys, {-1.0, 1.95}), InvalidArgument);
  EXPECT_THROW(project_kernel(sys, {0.5, 0.2}), InvalidArgument);
}

TEST(Kernel, BulkSineLimit) {
  const auto& sys = gaussian(200);
  EXPECT_LT(bulk_sine_compare(sys, 0.0, 3.0), 0.05);
  EquilibriumMeasure rho(sys.potential(), sys.support());
  const double s = 200 * rho.density(0.0);
  EXPECT_NEAR(kernel_cd(sys, 0.0, 0.0) / s, 1.0, 1.0 / std::sqrt(200.0));
  EXPECT_NEAR(kernel_cd(sys, 0.0, 1.3 / s), kernel_cd(sys, 1.3 / s, 0.0), 1e-12);
  EXPECT_THROW(bulk_sine_compare(sys, 1.9, 3.0), InvalidArgument);
}

TEST(Kernel, DecayOutsideInterval) {
  Interval delta{-1.0, 1.0};
  double prev_l2 = 0;
  for (int n : {50, 100, 200}) {
    const auto& sys = gaussian(n);
    auto fit = vn_decay_fit(sys, delta);
    EXPECT_LE(fit.envelope_constant, 5.0) << n;
    EXPECT_LE(fit.l2_norm * std::sqrt(double(n)), 3.0) << n;
    if (prev_l2 > 0) {
      EXPECT_LT(fit.l2_norm, prev_l2);
    }
    prev_l2 = fit.l2_norm;
    // Decay with distance at fixed n.
    EXPECT_LT(std::abs(vn_decay(sys, delta, 1.8)), std::abs(vn_decay(sys, delta, 1.0 + 0.5 / n)));
  }
  EXPECT_THROW(vn_decay(gaussian(50), delta, 0.2), InvalidArgument);
}
