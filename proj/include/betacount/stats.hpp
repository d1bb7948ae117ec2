#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <vector>

#include "betacount/error.hpp"
#include "betacount/fredholm.hpp"

namespace betacount {

inline double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / double(v.size());
}

/// Unbiased sample variance.
inline double sample_variance(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / double(v.size() - 1);
}

/// Integrated autocorrelation time τ = 1 + 2 Σ ρ_t with Sokal's automatic
/// window (smallest M with M ≥ 5 τ(M)). Equals 1 for independent draws.
inline double integrated_autocorrelation(const std::vector<double>& v) {
  const std::size_t N = v.size();
  if (N < 4) return 1.0;
  const double m = mean(v);
  double c0 = 0.0;
  for (double x : v) c0 += (x - m) * (x - m);
  c0 /= double(N);
  if (c0 == 0.0) return 1.0;
  double tau = 1.0;
  for (std::size_t t = 1; t < N / 2; ++t) {
    double c = 0.0;
    for (std::size_t i = 0; i + t < N; ++i) c += (v[i] - m) * (v[i + t] - m);
    tau += 2.0 * c / (double(N) * c0);
    if (double(t) >= 5.0 * tau) break;
  }
  return std::max(tau, 1.0 / double(N));
}

struct CountStatistics {
  std::vector<int> counts;
  double mean = 0.0;
  double variance = 0.0;
  double mean_se = 0.0;
  double variance_se = 0.0;
  double tau_int = 1.0;
  double ess = 0.0;
};

inline CountStatistics count_statistics(std::vector<int> counts) {
  CountStatistics s;
  std::vector<double> v(counts.begin(), counts.end());
  s.counts = std::move(counts);
  const double M = double(v.size());
  s.mean = betacount::mean(v);
  s.variance = sample_variance(v);
  s.tau_int = integrated_autocorrelation(v);
  s.ess = M / s.tau_int;
  s.mean_se = std::sqrt(s.variance / s.ess);
  // SE of the variance from the fourth central moment.
  double m4 = 0.0;
  for (double x : v) m4 += std::pow(x - s.mean, 4);
  m4 /= M;
  s.variance_se = std::sqrt(std::max(m4 - s.variance * s.variance, 0.0) / s.ess);
  return s;
}

struct EmpiricalCharFunctional {
  double x = 0.0;
  double x_n = 0.0;
  double log_phi = 0.0;
  double se = 0.0;
  double tau_int = 1.0;
  double ess = 0.0;
  double sample_mean = 0.0;
};

/// Plug-in log Φ̂ = log mean(e^{x_n (N - N̄)}) with a delta-method standard
/// error inflated by the integrated autocorrelation time.
inline EmpiricalCharFunctional empirical_char_functional(const std::vector<int>& counts, double x, int particles,
                                                         double min_ess = 100.0) {
  EmpiricalCharFunctional r;
  r.x = x;
  r.x_n = scaled_x(x, particles);
  std::vector<double> v(counts.begin(), counts.end());
  const double M = double(v.size());
  r.sample_mean = mean(v);
  r.tau_int = integrated_autocorrelation(v);
  r.ess = M / r.tau_int;
  if (r.ess < min_ess) throw NumericalError("empirical_char_functional: effective sample size below threshold");
  if (x == 0.0) return r;
  std::vector<double> y(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) y[i] = std::exp(r.x_n * (v[i] - r.sample_mean));
  const double ybar = mean(y);
  r.log_phi = std::log(ybar);
  // Influence of each sample on log(ȳ) - x_n N̄ (centering uses the sample mean).
  std::vector<double> z(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) z[i] = y[i] / ybar - r.x_n * (v[i] - r.sample_mean);
  const double tz = std::max(integrated_autocorrelation(z), r.tau_int);
  r.tau_int = tz;
  r.ess = M / tz;
  r.se = std::sqrt(sample_variance(z) * tz / M);
  return r;
}

inline double standard_normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

/// Asymptotic Kolmogorov tail P(K > t).
inline double kolmogorov_tail(double t) {
  if (t <= 0) return 1.0;
  if (t < 0.3) return 1.0;
  double p = 0.0;
  for (int k = 1; k <= 100; ++k) {
    const double term = std::exp(-2.0 * k * k * t * t);
    p += (k % 2 ? 2.0 : -2.0) * term;
    if (term < 1e-16) break;
  }
  return std::clamp(p, 0.0, 1.0);
}

struct NormalityResult {
  double statistic = 0.0;
  double p_value = 0.0;
  double mean = 0.0;
  double sd = 0.0;  // lattice-corrected
  std::size_t samples = 0;
};

/// KS distance of integer counts to a normal law compared on lattice
/// midpoints: P(N ≤ k) against Φ((k + ½ - μ)/σ), with σ² = s² - 1/12
/// (the variance of the underlying normal when N is its rounding).
inline NormalityResult normality_test(const std::vector<int>& counts) {
  if (counts.size() < 2) throw InvalidArgument("normality_test: need at least two counts");
  std::vector<double> v(counts.begin(), counts.end());
  NormalityResult r;
  r.samples = v.size();
  r.mean = mean(v);
  const double s2 = sample_variance(v) - 1.0 / 12.0;
  if (!(s2 > 0)) throw InvalidArgument("normality_test: zero variance");
  r.sd = std::sqrt(s2);
  std::map<int, std::size_t> freq;
  for (int c : counts) ++freq[c];
  const double M = double(v.size());
  double cum = 0.0, D = 0.0;
  // Below the smallest count the empirical CDF is 0.
  D = standard_normal_cdf((freq.begin()->first - 0.5 - r.mean) / r.sd);
  int prev = freq.begin()->first;
  for (auto [k, f] : freq) {
    // Lattice points skipped between observed values carry the previous CDF.
    for (int j = prev + 1; j < k; ++j)
      D = std::max(D, std::abs(cum / M - standard_normal_cdf((j + 0.5 - r.mean) / r.sd)));
    cum += double(f);
    D = std::max(D, std::abs(cum / M - standard_normal_cdf((k + 0.5 - r.mean) / r.sd)));
    prev = k;
  }
  r.statistic = D;
  const double sm = std::sqrt(M);
  r.p_value = kolmogorov_tail((sm + 0.12 + 0.11 / sm) * D);
  return r;
}

}  // namespace betacount
