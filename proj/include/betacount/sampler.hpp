#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include <Eigen/Eigenvalues>

#include "betacount/equilibrium.hpp"
#include "betacount/error.hpp"
#include "betacount/kernel.hpp"
#include "betacount/potential.hpp"

namespace betacount {

inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Independent stream seed number `index` under a master seed.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) {
  std::uint64_t s = master;
  const std::uint64_t base = splitmix64(s);
  std::uint64_t t = base ^ (index * 0xd1b54a32d192ed03ULL);
  return splitmix64(t);
}

struct EnsembleSample {
  std::vector<double> eigenvalues;  // ascending
  std::uint64_t seed = 0;
  long sweep = 0;
  double acceptance = 0.0;
};

/// Number of eigenvalues in the closed interval [a, b].
inline int count_in_interval(const std::vector<double>& sorted, Interval d) {
  if (d.b < d.a) return 0;
  auto lo = std::lower_bound(sorted.begin(), sorted.end(), d.a);
  auto hi = std::upper_bound(sorted.begin(), sorted.end(), d.b);
  return int(hi - lo);
}

inline int count_in_interval(const EnsembleSample& s, Interval d) { return count_in_interval(s.eigenvalues, d); }

struct McmcOptions {
  long burn_in = 0;     // sweeps; 0 means 20 n
  long thin = 0;        // sweeps between samples; 0 means n
  double target_acceptance = 0.4;
};

/// Single-site Metropolis chain for the density
/// ∏ e^{-nβV(λ_i)/2} ∏_{i<j} |λ_i - λ_j|^β.
class MetropolisChain {
 public:
  MetropolisChain(PolynomialPotential V, double beta, int n, std::uint64_t seed, McmcOptions opt = {})
      : V_(std::move(V)), beta_(beta), n_(n), seed_(seed), opt_(opt), rng_(seed) {
    if (!(beta == 1 || beta == 2 || beta == 4)) throw InvalidArgument("mcmc: beta must be 1, 2 or 4");
    if (n < 2) throw InvalidArgument("mcmc: n must be at least 2");
    if (opt_.burn_in <= 0) opt_.burn_in = 20L * n;
    if (opt_.thin <= 0) opt_.thin = n;
    start_at_quantiles();
    for (double x : x_)
      if (!std::isfinite(V_(x))) throw NumericalError("mcmc: non-finite energy in the initial state");
    burn();
  }

  int n() const { return n_; }
  double beta() const { return beta_; }
  double step() const { return step_; }
  long sweeps() const { return sweeps_; }
  /// Acceptance rate since the end of burn-in.
  double acceptance_rate() const { return proposed_ ? double(accepted_) / double(proposed_) : 0.0; }
  bool acceptance_flagged() const {
    const double a = acceptance_rate();
    return a < 0.1 || a > 0.9;
  }

  void sweep() {
    std::normal_distribution<double> gauss;
    std::uniform_real_distribution<double> unif;
    std::uniform_int_distribution<int> pick(0, n_ - 1);
    for (int k = 0; k < n_; ++k) {
      const int i = pick(rng_);
      const double old = x_[std::size_t(i)], prop = old + step_ * gauss(rng_);
      const double d = log_ratio(i, old, prop);
      if (std::isnan(d)) throw NumericalError("mcmc: non-finite energy change");
      ++proposed_;
      if (d >= 0 || unif(rng_) < std::exp(d)) {
        x_[std::size_t(i)] = prop;
        ++accepted_;
      }
    }
    ++sweeps_;
  }

  EnsembleSample next() {
    for (long s = 0; s < opt_.thin; ++s) sweep();
    EnsembleSample out;
    out.eigenvalues = x_;
    std::sort(out.eigenvalues.begin(), out.eigenvalues.end());
    out.seed = seed_;
    out.sweep = sweeps_;
    out.acceptance = acceptance_rate();
    return out;
  }

 private:
  void start_at_quantiles() {
    auto support = solve_one_cut_support(V_);
    EquilibriumMeasure mu(V_, support);
    x_.resize(std::size_t(n_));
    const double lo = support.min(), hi = support.max();
    for (int i = 0; i < n_; ++i) {
      const double target = (i + 0.5) / n_;
      double a = lo, b = hi;
      for (int it = 0; it < 50; ++it) {
        const double m = 0.5 * (a + b);
        (mu.cumulative(m) < target ? a : b) = m;
      }
      x_[std::size_t(i)] = 0.5 * (a + b);
    }
    step_ = 1.0 / (n_ * std::max(mu.max_density(), 1e-3));
  }

  /// log of the density ratio for moving particle i from `from` to `to`;
  /// -inf on coincidence.
  double log_ratio(int i, double from, double to) const {
    double mant = 1.0;
    long expo = 0;
    int since = 0;
    for (int j = 0; j < n_; ++j) {
      if (j == i) continue;
      const double xj = x_[std::size_t(j)];
      const double num = std::abs(to - xj);
      if (num == 0.0) return -std::numeric_limits<double>::infinity();
      mant *= num / std::abs(from - xj);
      if (++since == 32) {
        int e;
        mant = std::frexp(mant, &e);
        expo += e;
        since = 0;
      }
    }
    const double log_prod = std::log(mant) + double(expo) * std::numbers::ln2;
    return -0.5 * n_ * beta_ * (V_(to) - V_(from)) + beta_ * log_prod;
  }

  void burn() {
    const long window = 10;
    for (long s = 0; s < opt_.burn_in; ++s) {
      sweep();
      if ((s + 1) % window == 0) {
        step_ *= std::exp(acceptance_rate() - opt_.target_acceptance);
        accepted_ = proposed_ = 0;
      }
    }
    accepted_ = proposed_ = 0;
  }

  PolynomialPotential V_;
  double beta_;
  int n_;
  std::uint64_t seed_;
  McmcOptions opt_;
  std::mt19937_64 rng_;
  std::vector<double> x_;
  double step_ = 0.1;
  long sweeps_ = 0, accepted_ = 0, proposed_ = 0;
};

/// `samples` thinned states of one chain.
inline std::vector<EnsembleSample> mcmc_sample(const PolynomialPotential& V, double beta, int n, long samples,
                                               std::uint64_t seed, McmcOptions opt = {}) {
  MetropolisChain chain(V, beta, n, seed, opt);
  std::vector<EnsembleSample> out;
  out.reserve(std::size_t(samples));
  for (long s = 0; s < samples; ++s) out.push_back(chain.next());
  return out;
}

namespace detail {

struct Tridiagonal {
  Eigen::VectorXd diag, sub;
};

/// β-Hermite tridiagonal matrix scaled so that its spectrum has density
/// ∏ e^{-nβλ²/4} ∏|λ_i - λ_j|^β (support [-2, 2]).
inline Tridiagonal gaussian_tridiagonal(double beta, int n, std::uint64_t seed) {
  if (!(beta > 0)) throw InvalidArgument("tridiag_gaussian_sample: beta must be positive");
  if (n < 1) throw InvalidArgument("tridiag_gaussian_sample: n must be positive");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss;
  Tridiagonal t{Eigen::VectorXd(n), Eigen::VectorXd(std::max(n - 1, 0))};
  const double scale = std::sqrt(2.0 / (n * beta));
  for (int i = 0; i < n; ++i) t.diag(i) = scale * gauss(rng);
  for (int i = 0; i + 1 < n; ++i) {
    std::chi_squared_distribution<double> chi2(beta * (n - 1 - i));
    t.sub(i) = scale * std::sqrt(0.5 * chi2(rng));
  }
  return t;
}

/// Number of eigenvalues below x from the signs of the LDL^T pivots of T - x.
inline int sturm_count_below(const Tridiagonal& t, double x) {
  int count = 0;
  double q = 1.0;
  for (Eigen::Index i = 0; i < t.diag.size(); ++i) {
    const double off = i > 0 ? t.sub(i - 1) * t.sub(i - 1) / q : 0.0;
    q = t.diag(i) - x - off;
    if (q == 0.0) q = -1e-300;
    if (q < 0) ++count;
  }
  return count;
}

}  // namespace detail

/// Exact sample for V = λ²/2 from the tridiagonal β-Hermite model.
inline EnsembleSample tridiag_gaussian_sample(double beta, int n, std::uint64_t seed) {
  auto t = detail::gaussian_tridiagonal(beta, n, seed);
  EnsembleSample s;
  s.seed = seed;
  s.acceptance = 1.0;
  if (n == 1) {
    s.eigenvalues = {t.diag(0)};
    return s;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es;
  es.computeFromTridiagonal(t.diag, t.sub, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) throw NumericalError("tridiag_gaussian_sample: eigenvalue iteration failed");
  s.eigenvalues.assign(es.eigenvalues().data(), es.eigenvalues().data() + n);
  std::sort(s.eigenvalues.begin(), s.eigenvalues.end());
  return s;
}

/// Count in [a, b] for the same matrix as tridiag_gaussian_sample(beta, n, seed),
/// by Sturm sequences instead of a full eigensolve.
inline int tridiag_gaussian_count(double beta, int n, std::uint64_t seed, Interval d) {
  if (d.b < d.a) return 0;
  auto t = detail::gaussian_tridiagonal(beta, n, seed);
  return detail::sturm_count_below(t, std::nextafter(d.b, std::numeric_limits<double>::infinity())) -
         detail::sturm_count_below(t, d.a);
}

}  // namespace betacount
