#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "betacount/equilibrium.hpp"
#include "betacount/error.hpp"
#include "betacount/fredholm.hpp"
#include "betacount/kernel.hpp"
#include "betacount/matrix_kernels.hpp"
#include "betacount/parallel.hpp"
#include "betacount/sampler.hpp"
#include "betacount/stats.hpp"

namespace betacount {

using json = nlohmann::json;

struct Tolerances {
  double effective_potential = 1e-6;
  double antisymmetry = 1e-8;
  double integration_by_parts = 1e-6;
  double reproducing = 1e-6;
  double spectrum = 1e-8;
  double widom_residual = 1e-6;
  double reduction = 1e-6;
  double double_quadrature = 1e-6;
  double mc_standard_errors = 3.0;
  double ks_p_value = 0.01;
  double slope_low = 0.8, slope_high = 1.2;  // multiples of π^{-2}
  double ratio_low = 1.5, ratio_high = 2.5;
  bool check_slope = true;
  bool check_normality = true;
};

struct SamplerSettings {
  /// "mcmc", "tridiagonal" or "auto" (tridiagonal for V = λ²/2 above 200
  /// particles, Metropolis otherwise).
  std::string kind = "auto";
  long samples = 4000;
  long burn_in = 0;
  long thin = 0;
  int chains = 4;
};

struct ExperimentConfig {
  std::vector<double> coeffs{0, 0, 0.5};
  std::vector<int> betas{2};
  std::vector<int> ns{50, 100, 200, 400};
  Interval delta{-1, 1};
  std::vector<double> xs{-2, -1, -0.5, 0.5, 1, 2};
  SamplerSettings sampler;
  int nodes = 0;
  int panel_order = 20;
  bool require_interior = true;
  Tolerances tol;
  std::uint64_t seed = 1;
  std::string out = "out";
  int threads = 0;
  bool dump_matrices = false;
  /// Largest particle count for which dense β = 1, 4 block determinants are built.
  int dense_limit = 64;
};

namespace detail {

template <class T>
void read_opt(const json& j, const char* key, T& target) {
  if (j.contains(key)) target = j.at(key).get<T>();
}

}  // namespace detail

inline ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig c;
  try {
    if (j.contains("potential")) c.coeffs = j.at("potential").at("coeffs").get<std::vector<double>>();
    detail::read_opt(j, "betas", c.betas);
    detail::read_opt(j, "n", c.ns);
    if (j.contains("interval")) {
      auto v = j.at("interval").get<std::vector<double>>();
      if (v.size() != 2) throw InvalidArgument("config: interval needs two endpoints");
      c.delta = {v[0], v[1]};
    }
    detail::read_opt(j, "x", c.xs);
    if (j.contains("sampler")) {
      const auto& s = j.at("sampler");
      detail::read_opt(s, "kind", c.sampler.kind);
      detail::read_opt(s, "samples", c.sampler.samples);
      detail::read_opt(s, "burn_in", c.sampler.burn_in);
      detail::read_opt(s, "thin", c.sampler.thin);
      detail::read_opt(s, "chains", c.sampler.chains);
    }
    if (j.contains("quadrature")) {
      detail::read_opt(j.at("quadrature"), "nodes", c.nodes);
      detail::read_opt(j.at("quadrature"), "panel_order", c.panel_order);
    }
    detail::read_opt(j, "require_interior", c.require_interior);
    detail::read_opt(j, "dense_limit", c.dense_limit);
    if (j.contains("tolerances")) {
      const auto& t = j.at("tolerances");
      auto& T = c.tol;
      detail::read_opt(t, "effective_potential", T.effective_potential);
      detail::read_opt(t, "antisymmetry", T.antisymmetry);
      detail::read_opt(t, "integration_by_parts", T.integration_by_parts);
      detail::read_opt(t, "reproducing", T.reproducing);
      detail::read_opt(t, "spectrum", T.spectrum);
      detail::read_opt(t, "widom_residual", T.widom_residual);
      detail::read_opt(t, "reduction", T.reduction);
      detail::read_opt(t, "double_quadrature", T.double_quadrature);
      detail::read_opt(t, "mc_standard_errors", T.mc_standard_errors);
      detail::read_opt(t, "ks_p_value", T.ks_p_value);
      detail::read_opt(t, "slope_low", T.slope_low);
      detail::read_opt(t, "slope_high", T.slope_high);
      detail::read_opt(t, "ratio_low", T.ratio_low);
      detail::read_opt(t, "ratio_high", T.ratio_high);
      detail::read_opt(t, "check_slope", T.check_slope);
      detail::read_opt(t, "check_normality", T.check_normality);
    }
    detail::read_opt(j, "seed", c.seed);
    detail::read_opt(j, "output", c.out);
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("config: ") + e.what());
  }
  return c;
}

inline json config_to_json(const ExperimentConfig& c) {
  const auto& T = c.tol;
  return {{"potential", {{"coeffs", c.coeffs}}},
          {"betas", c.betas},
          {"n", c.ns},
          {"interval", {c.delta.a, c.delta.b}},
          {"x", c.xs},
          {"sampler",
           {{"kind", c.sampler.kind},
            {"samples", c.sampler.samples},
            {"burn_in", c.sampler.burn_in},
            {"thin", c.sampler.thin},
            {"chains", c.sampler.chains}}},
          {"quadrature", {{"nodes", c.nodes}, {"panel_order", c.panel_order}}},
          {"require_interior", c.require_interior},
          {"dense_limit", c.dense_limit},
          {"tolerances",
           {{"effective_potential", T.effective_potential},
            {"antisymmetry", T.antisymmetry},
            {"integration_by_parts", T.integration_by_parts},
            {"reproducing", T.reproducing},
            {"spectrum", T.spectrum},
            {"widom_residual", T.widom_residual},
            {"reduction", T.reduction},
            {"double_quadrature", T.double_quadrature},
            {"mc_standard_errors", T.mc_standard_errors},
            {"ks_p_value", T.ks_p_value},
            {"slope_low", T.slope_low},
            {"slope_high", T.slope_high},
            {"ratio_low", T.ratio_low},
            {"ratio_high", T.ratio_high},
            {"check_slope", T.check_slope},
            {"check_normality", T.check_normality}}},
          {"seed", c.seed},
          {"output", c.out}};
}

/// Validates β, n and the interval against the equilibrium support.
inline PolynomialPotential validate_config(const ExperimentConfig& c) {
  auto V = validate_potential(std::span<const double>(c.coeffs));
  for (int b : c.betas)
    if (b != 1 && b != 2 && b != 4) throw InvalidArgument("config: beta must be 1, 2 or 4");
  for (int n : c.ns) {
    if (n < 2) throw InvalidArgument("config: n must be at least 2");
    for (int b : c.betas)
      if (b == 1 && n % 2 != 0) throw InvalidArgument("config: beta = 1 requires even n");
  }
  if (!(c.delta.a < c.delta.b)) throw InvalidArgument("config: interval must have a < b");
  if (c.require_interior) check_interior(solve_one_cut_support(V), c.delta);
  if (c.sampler.samples < 1 || c.sampler.chains < 1) throw InvalidArgument("config: sampler needs samples and chains");
  return V;
}

inline bool is_gaussian(const PolynomialPotential& V) {
  const auto& c = V.coeffs();
  return c.size() == 3 && c[0] == 0.0 && c[1] == 0.0 && c[2] == 0.5;
}

/// Pass/fail records plus free-form report data.
class Report {
 public:
  explicit Report(std::string command) { j_["command"] = std::move(command); j_["checks"] = json::array(); }

  bool check(const std::string& name, double value, double tolerance, bool pass) {
    j_["checks"].push_back({{"name", name}, {"value", value}, {"tolerance", tolerance}, {"pass", pass}});
    return pass;
  }
  json& data() { return j_; }
  bool pass() const {
    for (const auto& c : j_["checks"])
      if (!c["pass"].get<bool>()) return false;
    return true;
  }
  json finish() {
    j_["pass"] = pass();
    return j_;
  }

 private:
  json j_;
};

/// Fixed-format CSV writer so repeated runs give identical bytes.
class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& header) : out_(path) {
    if (!out_) throw InvalidArgument("cannot open " + path.string());
    row(header);
  }
  template <class... Ts>
  void write(const Ts&... vals) {
    bool first = true;
    ((out_ << (first ? "" : ",") << fmt(vals), first = false), ...);
    out_ << '\n';
  }
  void row(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) out_ << (i ? "," : "") << cells[i];
    out_ << '\n';
  }
  static std::string fmt(double v) {
    std::ostringstream s;
    s << std::setprecision(12) << v;
    return s.str();
  }
  static std::string fmt(int v) { return std::to_string(v); }
  static std::string fmt(long v) { return std::to_string(v); }
  static std::string fmt(std::uint64_t v) { return std::to_string(v); }
  static std::string fmt(const std::string& v) { return v; }
  static std::string fmt(const char* v) { return v; }

 private:
  std::ofstream out_;
};

inline std::string interval_tag(Interval d) {
  return "[" + CsvWriter::fmt(d.a) + ";" + CsvWriter::fmt(d.b) + "]";
}

inline void write_matrix_csv(const std::filesystem::path& path, const Eigen::MatrixXd& M) {
  CsvWriter w(path, {"i", "j", "value"});
  for (Eigen::Index i = 0; i < M.rows(); ++i)
    for (Eigen::Index j = 0; j < M.cols(); ++j) w.write(int(i), int(j), M(i, j));
}

// ---------------------------------------------------------------- equilibrium

inline json run_equilibrium(const ExperimentConfig& c) {
  auto V = validate_potential(std::span<const double>(c.coeffs));
  Report rep("equilibrium");
  auto support = solve_one_cut_support(V);
  EquilibriumMeasure mu(V, support);
  EffectivePotential v(mu);
  auto scan = v.scan();
  auto gen = check_genericity(mu);
  rep.data()["support"] = {support.min(), support.max()};
  rep.data()["total_mass"] = mu.total_mass();
  rep.data()["v_star"] = scan.reference;
  rep.data()["min_abs_P"] = gen.min_abs_P;
  rep.check("mass_normalized", std::abs(mu.total_mass() - 1.0), 1e-10, std::abs(mu.total_mass() - 1.0) <= 1e-10);
  rep.check("v_constant_on_support", scan.max_deviation_on_support, c.tol.effective_potential,
            scan.max_deviation_on_support <= c.tol.effective_potential);
  rep.check("v_smaller_off_support", scan.max_excess_off_support, 0.0, scan.max_excess_off_support < 0.0);
  std::filesystem::create_directories(c.out);
  CsvWriter w(std::filesystem::path(c.out) / "equilibrium.csv", {"lambda", "rho", "v"});
  const double pad = 0.25 * support.diameter();
  const int points = 401;
  for (int i = 0; i < points; ++i) {
    const double x = support.min() - pad + (support.diameter() + 2 * pad) * i / (points - 1);
    w.write(x, mu.density(x), v(x));
  }
  return rep.finish();
}

// -------------------------------------------------------------- variance scan

struct LineFit {
  double slope = 0.0, intercept = 0.0;
  std::vector<double> residuals;
};

inline LineFit fit_line(const std::vector<double>& x, const std::vector<double>& y) {
  const double mx = mean(x), my = mean(y);
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  LineFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  for (std::size_t i = 0; i < x.size(); ++i) f.residuals.push_back(y[i] - f.intercept - f.slope * x[i]);
  return f;
}

inline json run_variance_scan(const ExperimentConfig& c) {
  auto V = validate_config(c);
  if (c.ns.size() < 4) throw InvalidArgument("variance-scan: needs at least four n values");
  Report rep("variance-scan");
  std::vector<double> logn(c.ns.size()), var(c.ns.size()), dq(c.ns.size()), en(c.ns.size());
  parallel_for(c.ns.size(), resolve_threads(c.threads), [&](std::size_t i) {
    const int n = c.ns[i];
    auto sys = build_system(V, n, n + 2 * V.m());
    ProjectionOptions opt;
    opt.nodes = c.nodes;
    opt.panel_order = c.panel_order;
    opt.require_interior = c.require_interior;
    auto K = project_kernel(sys, c.delta, opt);
    logn[i] = std::log(double(n));
    var[i] = variance_trace(K);
    dq[i] = variance_trace_double_quadrature(sys, c.delta);
    en[i] = mean_count(K);
  });
  std::filesystem::create_directories(c.out);
  CsvWriter w(std::filesystem::path(c.out) / "variance_scan.csv",
              {"n", "log_n", "variance_trace", "double_quadrature", "mean_count"});
  for (std::size_t i = 0; i < c.ns.size(); ++i) {
    w.write(c.ns[i], logn[i], var[i], dq[i], en[i]);
    rep.check("double_quadrature n=" + std::to_string(c.ns[i]), std::abs(var[i] - dq[i]), c.tol.double_quadrature,
              std::abs(var[i] - dq[i]) <= c.tol.double_quadrature);
  }
  auto fit = fit_line(logn, var);
  const double target = 1.0 / (std::numbers::pi * std::numbers::pi);
  rep.data()["slope"] = fit.slope;
  rep.data()["intercept"] = fit.intercept;
  rep.data()["residuals"] = fit.residuals;
  rep.data()["slope_over_inverse_pi_squared"] = fit.slope / target;
  if (c.tol.check_slope)
    rep.check("slope_window", fit.slope / target, c.tol.slope_high,
              fit.slope >= c.tol.slope_low * target && fit.slope <= c.tol.slope_high * target);
  return rep.finish();
}

// ------------------------------------------------------------------ sampling

struct ChainCounts {
  std::vector<int> counts;
  std::vector<long> sweeps;
  std::vector<std::uint64_t> seeds;
  double acceptance = 1.0;
  std::vector<std::vector<double>> samples;  // kept only on request
};

inline std::uint64_t stream_id(int beta, int n, int chain) {
  return (std::uint64_t(beta) << 48) ^ (std::uint64_t(n) << 20) ^ std::uint64_t(chain);
}

inline std::string resolve_sampler(const ExperimentConfig& c, const PolynomialPotential& V, int n) {
  if (c.sampler.kind == "mcmc" || c.sampler.kind == "tridiagonal") {
    if (c.sampler.kind == "tridiagonal" && !is_gaussian(V))
      throw InvalidArgument("sampler: the tridiagonal model needs V = x^2/2");
    return c.sampler.kind;
  }
  if (c.sampler.kind != "auto") throw InvalidArgument("sampler: unknown kind '" + c.sampler.kind + "'");
  return is_gaussian(V) && n > 200 ? "tridiagonal" : "mcmc";
}

/// Counts in Δ from `chains` independent chains; deterministic in the master seed.
inline std::vector<ChainCounts> sample_counts(const ExperimentConfig& c, const PolynomialPotential& V, int beta, int n,
                                              bool keep_samples = false) {
  const std::string kind = resolve_sampler(c, V, n);
  const int chains = c.sampler.chains;
  const long per = (c.sampler.samples + chains - 1) / chains;
  std::vector<ChainCounts> out{std::size_t(chains)};
  parallel_for(std::size_t(chains), resolve_threads(c.threads), [&](std::size_t k) {
    const std::uint64_t seed = derive_seed(c.seed, stream_id(beta, n, int(k)));
    auto& cc = out[k];
    if (kind == "tridiagonal") {
      for (long s = 0; s < per; ++s) {
        const std::uint64_t sd = derive_seed(seed, std::uint64_t(s));
        if (keep_samples) {
          auto smp = tridiag_gaussian_sample(beta, n, sd);
          cc.counts.push_back(count_in_interval(smp, c.delta));
          cc.samples.push_back(std::move(smp.eigenvalues));
        } else {
          cc.counts.push_back(tridiag_gaussian_count(beta, n, sd, c.delta));
        }
        cc.sweeps.push_back(s);
        cc.seeds.push_back(sd);
      }
    } else {
      McmcOptions opt;
      opt.burn_in = c.sampler.burn_in;
      opt.thin = c.sampler.thin;
      MetropolisChain chain(V, beta, n, seed, opt);
      for (long s = 0; s < per; ++s) {
        auto smp = chain.next();
        cc.counts.push_back(count_in_interval(smp, c.delta));
        cc.sweeps.push_back(smp.sweep);
        cc.seeds.push_back(seed);
        if (keep_samples) cc.samples.push_back(std::move(smp.eigenvalues));
      }
      cc.acceptance = chain.acceptance_rate();
    }
  });
  return out;
}

/// Pools chains; the autocorrelation is estimated per chain and the largest kept.
struct PooledCounts {
  std::vector<int> counts;
  double tau_int = 1.0;
  double min_acceptance = 1.0, max_acceptance = 0.0;
};

inline PooledCounts pool(const std::vector<ChainCounts>& chains) {
  PooledCounts p;
  for (const auto& c : chains) {
    p.counts.insert(p.counts.end(), c.counts.begin(), c.counts.end());
    std::vector<double> v(c.counts.begin(), c.counts.end());
    p.tau_int = std::max(p.tau_int, integrated_autocorrelation(v));
    p.min_acceptance = std::min(p.min_acceptance, c.acceptance);
    p.max_acceptance = std::max(p.max_acceptance, c.acceptance);
  }
  return p;
}

inline void write_counts_csv(const std::filesystem::path& path, const std::vector<ChainCounts>& chains) {
  CsvWriter w(path, {"seed", "sweep", "count"});
  for (const auto& c : chains)
    for (std::size_t i = 0; i < c.counts.size(); ++i) w.write(c.seeds[i], c.sweeps[i], c.counts[i]);
}

inline json run_sample(const ExperimentConfig& c) {
  auto V = validate_config(c);
  Report rep("sample");
  std::filesystem::create_directories(c.out);
  json rows = json::array();
  for (int beta : c.betas)
    for (int n : c.ns) {
      auto chains = sample_counts(c, V, beta, n, true);
      const std::string tag = "_b" + std::to_string(beta) + "_n" + std::to_string(n) + ".csv";
      write_counts_csv(std::filesystem::path(c.out) / ("counts" + tag), chains);
      std::vector<std::string> header{"seed", "sweep"};
      for (int i = 0; i < n; ++i) header.push_back("lambda" + std::to_string(i));
      CsvWriter w(std::filesystem::path(c.out) / ("samples" + tag), header);
      for (const auto& ch : chains)
        for (std::size_t s = 0; s < ch.samples.size(); ++s) {
          std::vector<std::string> cells{CsvWriter::fmt(ch.seeds[s]), CsvWriter::fmt(ch.sweeps[s])};
          for (double x : ch.samples[s]) cells.push_back(CsvWriter::fmt(x));
          w.row(cells);
        }
      auto p = pool(chains);
      auto st = count_statistics(p.counts);
      rows.push_back({{"beta", beta},
                      {"n", n},
                      {"sampler", resolve_sampler(c, V, n)},
                      {"mean", st.mean},
                      {"variance", st.variance},
                      {"tau_int", p.tau_int},
                      {"acceptance_min", p.min_acceptance},
                      {"acceptance_max", p.max_acceptance}});
      if (resolve_sampler(c, V, n) == "mcmc")
        rep.check("acceptance b=" + std::to_string(beta) + " n=" + std::to_string(n), p.min_acceptance, 0.1,
                  p.min_acceptance >= 0.1 && p.max_acceptance <= 0.9);
    }
  rep.data()["runs"] = rows;
  return rep.finish();
}

// ----------------------------------------------------------------------- CLT

inline double limit_value(int beta, double x) { return x * x / beta; }

inline json run_clt(const ExperimentConfig& c) {
  auto V = validate_config(c);
  Report rep("clt");
  std::filesystem::create_directories(c.out);
  const auto dir = std::filesystem::path(c.out);
  CsvWriter det_csv(dir / "clt.csv", {"x", "x_n", "logPhi", "EN", "method", "n", "beta", "interval"});
  CsvWriter mc_csv(dir / "clt_mc.csv", {"x", "x_n", "logPhi", "se", "tau_int", "ess", "limit", "n", "beta"});
  CsvWriter ks_csv(dir / "normality.csv", {"beta", "n", "ks_statistic", "p_value", "mean", "variance"});
  const std::string itag = interval_tag(c.delta);
  std::map<std::pair<int, int>, double> variances;

  for (int beta : c.betas)
    for (int n : c.ns) {
      // Determinant side.
      std::map<double, double> det_value;
      if (beta == 2) {
        auto sys = build_system(V, n, n + 2 * V.m());
        ProjectionOptions opt;
        opt.nodes = c.nodes;
        opt.panel_order = c.panel_order;
        opt.require_interior = c.require_interior;
        auto K = project_kernel(sys, c.delta, opt);
        std::vector<CharFunctionalResult> res(c.xs.size());
        parallel_for(c.xs.size(), resolve_threads(c.threads),
                     [&](std::size_t i) { res[i] = char_functional_beta2(K, n, c.xs[i]); });
        for (const auto& r : res) {
          det_csv.write(r.x, r.x_n, r.log_phi, r.mean_count, r.method, n, beta, itag);
          det_value[r.x] = r.log_phi;
        }
      } else if (n <= c.dense_limit) {
        auto s = make_pfaffian_setup(V, beta, beta == 4 ? 2 * n : n);
        auto bk = assemble_block_kernel(*s.kernel, c.delta, c.nodes);
        auto rd = reduction_data(*s.kernel, c.delta, c.nodes);
        const double EN = mean_count(bk);
        std::vector<CharFunctionalResult> blk(c.xs.size()), red(c.xs.size());
        parallel_for(c.xs.size(), resolve_threads(c.threads), [&](std::size_t i) {
          blk[i] = char_functional_block(bk, n, c.xs[i], EN);
          red[i] = char_functional_scalar_reduced(rd, n, c.xs[i], EN);
        });
        for (std::size_t i = 0; i < c.xs.size(); ++i) {
          det_csv.write(blk[i].x, blk[i].x_n, blk[i].log_phi, blk[i].mean_count, blk[i].method, n, beta, itag);
          det_csv.write(red[i].x, red[i].x_n, red[i].log_phi, red[i].mean_count, red[i].method, n, beta, itag);
          det_value[blk[i].x] = blk[i].log_phi;
          const double diff = std::abs(blk[i].log_phi - red[i].log_phi);
          rep.check("block_vs_reduced b=" + std::to_string(beta) + " n=" + std::to_string(n) +
                        " x=" + CsvWriter::fmt(c.xs[i]),
                    diff, c.tol.reduction, diff <= c.tol.reduction);
        }
      }

      // Monte Carlo side.
      auto chains = sample_counts(c, V, beta, n);
      write_counts_csv(dir / ("counts_b" + std::to_string(beta) + "_n" + std::to_string(n) + ".csv"), chains);
      auto p = pool(chains);
      auto st = count_statistics(p.counts);
      variances[{beta, n}] = st.variance;
      for (double x : c.xs) {
        auto e = empirical_char_functional(p.counts, x, n);
        const double se = e.se;
        mc_csv.write(x, e.x_n, e.log_phi, se, e.tau_int, e.ess, limit_value(beta, x), n, beta);
        det_csv.write(x, e.x_n, e.log_phi, e.sample_mean, "mc", n, beta, itag);
        if (det_value.count(x)) {
          const double d = std::abs(e.log_phi - det_value[x]);
          rep.check("det_vs_mc b=" + std::to_string(beta) + " n=" + std::to_string(n) + " x=" + CsvWriter::fmt(x),
                    d / se, c.tol.mc_standard_errors,
                    d <= c.tol.mc_standard_errors * se);
        }
      }
      auto ks = normality_test(p.counts);
      ks_csv.write(beta, n, ks.statistic, ks.p_value, st.mean, st.variance);
      if (c.tol.check_normality)
        rep.check("normality b=" + std::to_string(beta) + " n=" + std::to_string(n), ks.p_value, c.tol.ks_p_value,
                  ks.p_value > c.tol.ks_p_value);
    }

  // The ratio window is asymptotic; it is enforced at the largest n only and
  // smaller n are reported as data.
  const int largest = c.ns.empty() ? 0 : *std::max_element(c.ns.begin(), c.ns.end());
  json ratios = json::array();
  for (int n : c.ns) {
    auto has = [&](int b) { return variances.count({b, n}) > 0; };
    auto ratio = [&](int lo, int hi) {
      const double r = variances[{lo, n}] / variances[{hi, n}];
      const std::string name = "variance_ratio_" + std::to_string(lo) + "_" + std::to_string(hi) + " n=" + std::to_string(n);
      ratios.push_back({{"name", name}, {"value", r}});
      if (n == largest) rep.check(name, r, c.tol.ratio_low, r >= c.tol.ratio_low && r <= c.tol.ratio_high);
    };
    if (has(1) && has(2)) ratio(1, 2);
    if (has(2) && has(4)) ratio(2, 4);
  }
  rep.data()["variance_ratios"] = ratios;
  return rep.finish();
}

// --------------------------------------------------------- identity checks

inline json run_verify_identities(const ExperimentConfig& c) {
  auto V = validate_config(c);
  Report rep("verify-identities");
  std::filesystem::create_directories(c.out);
  const auto dir = std::filesystem::path(c.out);
  CsvWriter w(dir / "identities.csv", {"identity", "beta", "n", "residual", "tolerance", "pass"});
  auto record = [&](const std::string& name, int beta, int n, double residual, double tol, bool pass) {
    w.write(name, beta, n, residual, tol, std::string(pass ? "true" : "false"));
    rep.check(name + " b=" + std::to_string(beta) + " n=" + std::to_string(n), residual, tol, pass);
  };
  const double mus[5] = {c.delta.a, 0.5 * (c.delta.a + c.delta.b) - 0.13, 0.5 * (c.delta.a + c.delta.b),
                         0.5 * (c.delta.a + c.delta.b) + 0.21, c.delta.b};
  for (int n : c.ns) {
    if (n > 64) throw InvalidArgument("verify-identities: n must be at most 64");
    // β = 2 kernel identities.
    auto sys = build_system(V, n, n + 2 * V.m());
    const double tr = std::abs(kernel_trace_full(sys) - n);
    record("trace_n", 2, n, tr, c.tol.reproducing, tr <= c.tol.reproducing);
    const double rr = reproducing_residual(sys, mus, mus);
    record("reproducing", 2, n, rr, c.tol.reproducing, rr <= c.tol.reproducing);
    ProjectionOptions opt;
    opt.nodes = c.nodes;
    opt.require_interior = c.require_interior;
    auto K = project_kernel(sys, c.delta, opt);
    const double lo = K.eigenvalues.minCoeff(), hi = K.eigenvalues.maxCoeff();
    const double out_of_range = std::max({0.0, -lo, hi - 1.0});
    record("projection_spectrum", 2, n, out_of_range, c.tol.spectrum, out_of_range <= c.tol.spectrum);
    if (c.dump_matrices) {
      const std::string tag = "_n" + std::to_string(n) + ".csv";
      CsvWriter rec(dir / ("recurrence" + tag), {"l", "a_l", "b_l"});
      for (int l = 0; l <= sys.L(); ++l) rec.write(l, l > 0 ? sys.a(l) : 0.0, sys.b(l));
      CsvWriter kd(dir / ("kernel" + tag), {"i", "j", "t_i", "t_j", "K"});
      Eigen::MatrixXd Km = kernel_matrix(sys, K.grid.nodes(), K.grid.nodes());
      for (std::size_t i = 0; i < K.grid.size(); ++i)
        for (std::size_t j = 0; j < K.grid.size(); ++j)
          kd.write(int(i), int(j), K.grid.nodes()[i], K.grid.nodes()[j], Km(Eigen::Index(i), Eigen::Index(j)));
    }
    if (n % 2 != 0) continue;
    for (int beta : {1, 4}) {
      auto s = make_pfaffian_setup(V, beta, n);
      auto& mk = *s.kernel;
      record("D_antisymmetry", beta, n, s.mats.d_antisymmetry, c.tol.antisymmetry,
             s.mats.d_antisymmetry <= c.tol.antisymmetry);
      record("M_antisymmetry", beta, n, s.mats.m_antisymmetry, c.tol.antisymmetry,
             s.mats.m_antisymmetry <= c.tol.antisymmetry);
      const double ibp = integration_by_parts_residual(mk, mus);
      record("epsD_equals_St", beta, n, ibp, c.tol.integration_by_parts, ibp <= c.tol.integration_by_parts);
      const double strace = std::abs(kernel_trace(mk) - n);
      record("S_trace_n", beta, n, strace, c.tol.reproducing, strace <= c.tol.reproducing);
      WidomDecomposition wd;
      try {
        wd = widom_decompose(mk, s.mats, V.m(), c.tol.widom_residual);
        record("widom_residual", beta, n, wd.residual, c.tol.widom_residual, true);
      } catch (const NumericalError&) {
        record("widom_residual", beta, n, std::numeric_limits<double>::infinity(), c.tol.widom_residual, false);
      }
      auto bk = assemble_block_kernel(mk, c.delta, c.nodes);
      const double skew = bk.skew_residual();
      record("block_skew", beta, n, skew, c.tol.integration_by_parts, skew <= c.tol.integration_by_parts);
      auto rd = reduction_data(mk, c.delta, c.nodes);
      double worst = 0.0;
      for (double x : {-0.5, 0.5, 1.0}) {
        auto b = char_functional_block(bk, beta == 4 ? n / 2 : n, x, bk.mean_count);
        auto r = char_functional_scalar_reduced(rd, beta == 4 ? n / 2 : n, x, bk.mean_count);
        worst = std::max(worst, std::abs(b.log_phi - r.log_phi));
      }
      record("block_vs_reduced", beta, n, worst, c.tol.reduction, worst <= c.tol.reduction);
      if (beta == 1) {
        // Negative control: a one-sided 1% change of M must be detected.
        Eigen::MatrixXd M = s.mats.M();
        M(0, 1) *= 1.01;
        MatrixKernel bad(1, *s.tables, M.inverse());
        const double r = integration_by_parts_residual(bad, mus);
        record("negative_control_perturbed_M", beta, n, r, c.tol.integration_by_parts,
               r > c.tol.integration_by_parts);
      }
      if (c.dump_matrices) {
        const std::string tag = "_b" + std::to_string(beta) + "_n" + std::to_string(n) + ".csv";
        write_matrix_csv(dir / ("D" + tag), s.mats.D());
        write_matrix_csv(dir / ("M" + tag), s.mats.M());
        write_matrix_csv(dir / ("T" + tag), s.mats.T(V.m()));
        if (wd.F.size()) write_matrix_csv(dir / ("F" + tag), wd.F);
      }
    }
  }
  return rep.finish();
}

// ------------------------------------------------------------- report merge

inline json merge_reports(const std::vector<json>& reports) {
  json out;
  out["command"] = "report-merge";
  out["reports"] = json::array();
  out["checks"] = json::array();
  bool pass = true;
  for (const auto& r : reports) {
    out["reports"].push_back({{"command", r.value("command", "")}, {"pass", r.value("pass", false)}});
    for (const auto& c : r.value("checks", json::array())) {
      json cc = c;
      cc["name"] = r.value("command", "") + ": " + c.value("name", "");
      out["checks"].push_back(cc);
    }
    pass = pass && r.value("pass", false);
  }
  out["pass"] = pass;
  return out;
}

}  // namespace betacount
