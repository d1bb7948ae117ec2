#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <span>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "betacount/error.hpp"

namespace betacount {

/// Gauss-Legendre rule on [-1, 1].
struct GaussLegendreRule {
  std::vector<double> nodes;
  std::vector<double> weights;
  /// cumulative(i, j) = integral over [-1, x_i] of the j-th Lagrange basis
  /// polynomial; exact for polynomials of degree < order.
  Eigen::MatrixXd cumulative;
};

namespace detail {

inline void legendre_with_derivative(int order, double x, double& p, double& dp) {
  double p0 = 1.0, p1 = x;
  for (int k = 2; k <= order; ++k) {
    const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
    p0 = p1;
    p1 = p2;
  }
  p = order == 0 ? 1.0 : p1;
  dp = order == 0 ? 0.0 : order * (x * p1 - p0) / (x * x - 1.0);
}

inline GaussLegendreRule make_gauss_legendre(int order) {
  GaussLegendreRule rule;
  rule.nodes.resize(order);
  rule.weights.resize(order);
  const int half = (order + 1) / 2;
  for (int i = 0; i < half; ++i) {
    double x = std::cos(std::numbers::pi * (i + 0.75) / (order + 0.5));
    double p = 0.0, dp = 0.0;
    for (int it = 0; it < 100; ++it) {
      legendre_with_derivative(order, x, p, dp);
      const double dx = p / dp;
      x -= dx;
      if (std::abs(dx) < 1e-16) break;
    }
    legendre_with_derivative(order, x, p, dp);
    const double w = 2.0 / ((1.0 - x * x) * dp * dp);
    rule.nodes[order - 1 - i] = x;
    rule.nodes[i] = -x;
    rule.weights[order - 1 - i] = w;
    rule.weights[i] = w;
  }
  if (order % 2 == 1) rule.nodes[order / 2] = 0.0;

  // Lagrange basis l_j(s) = sum_k (2k+1)/2 w_j P_k(x_j) P_k(s); the
  // antiderivative of P_k from -1 is (P_{k+1} - P_{k-1})/(2k+1), and s+1 for k=0.
  if (order <= 64) {
    Eigen::MatrixXd pk(order + 1, order);  // P_k(x_j)
    for (int j = 0; j < order; ++j) {
      pk(0, j) = 1.0;
      if (order >= 1) pk(1, j) = rule.nodes[j];
      for (int k = 2; k <= order; ++k)
        pk(k, j) = ((2.0 * k - 1.0) * rule.nodes[j] * pk(k - 1, j) - (k - 1.0) * pk(k - 2, j)) / k;
    }
    rule.cumulative.resize(order, order);
    for (int i = 0; i < order; ++i) {
      for (int j = 0; j < order; ++j) {
        double acc = 0.5 * (rule.nodes[i] + 1.0);  // k = 0 term, (2k+1)/2 = 1/2
        for (int k = 1; k < order; ++k)
          acc += 0.5 * pk(k, j) * (pk(k + 1, i) - pk(k - 1, i));
        rule.cumulative(i, j) = rule.weights[j] * acc;
      }
    }
  }
  return rule;
}

}  // namespace detail

/// Cached, immutable Gauss-Legendre rules. Safe to call concurrently.
inline const GaussLegendreRule& gauss_legendre(int order) {
  if (order < 1) throw InvalidArgument("gauss_legendre: order must be positive");
  static std::mutex mutex;
  static std::map<int, std::unique_ptr<const GaussLegendreRule>> cache;
  std::lock_guard lock(mutex);
  auto it = cache.find(order);
  if (it == cache.end()) {
    it = cache.emplace(order, std::make_unique<const GaussLegendreRule>(detail::make_gauss_legendre(order)))
             .first;
  }
  return *it->second;
}

/// Integrates f over [a, b] with an `order`-point Gauss-Legendre rule.
template <typename F>
double integrate(F&& f, double a, double b, int order = 400) {
  const auto& rule = gauss_legendre(order);
  const double mid = 0.5 * (a + b), rad = 0.5 * (b - a);
  double acc = 0.0;
  for (int i = 0; i < order; ++i) acc += rule.weights[i] * f(mid + rad * rule.nodes[i]);
  return acc * rad;
}

/// Composite Gauss-Legendre grid: consecutive panels, each carrying the same
/// number of nodes. Supports spectrally accurate cumulative integration.
class PanelGrid {
 public:
  struct Panel {
    double lo;
    double hi;
    std::size_t first;
  };

  PanelGrid() = default;

  /// Panels between consecutive break points.
  PanelGrid(std::vector<double> breaks, int order) : order_(order) {
    if (breaks.size() < 2) throw InvalidArgument("PanelGrid: need at least two break points");
    if (order < 2 || order > 64) throw InvalidArgument("PanelGrid: order must be in [2, 64]");
    for (std::size_t i = 1; i < breaks.size(); ++i)
      if (!(breaks[i] > breaks[i - 1])) throw InvalidArgument("PanelGrid: break points must increase");
    const auto& rule = gauss_legendre(order);
    for (std::size_t p = 0; p + 1 < breaks.size(); ++p) {
      const double lo = breaks[p], hi = breaks[p + 1];
      const double mid = 0.5 * (lo + hi), rad = 0.5 * (hi - lo);
      panels_.push_back({lo, hi, nodes_.size()});
      for (int i = 0; i < order; ++i) {
        nodes_.push_back(mid + rad * rule.nodes[i]);
        weights_.push_back(rad * rule.weights[i]);
      }
    }
  }

  /// `count` equal panels on [lo, hi].
  static PanelGrid uniform(double lo, double hi, std::size_t count, int order) {
    if (count == 0) throw InvalidArgument("PanelGrid::uniform: need at least one panel");
    std::vector<double> breaks(count + 1);
    for (std::size_t i = 0; i <= count; ++i) breaks[i] = lo + (hi - lo) * double(i) / double(count);
    breaks.back() = hi;
    return PanelGrid(std::move(breaks), order);
  }

  /// Joins uniform panelizations of consecutive segments [b_0,b_1], [b_1,b_2], ...
  static PanelGrid segments(std::span<const double> bounds, std::span<const std::size_t> counts, int order) {
    if (bounds.size() != counts.size() + 1) throw InvalidArgument("PanelGrid::segments: size mismatch");
    std::vector<double> breaks{bounds[0]};
    for (std::size_t s = 0; s < counts.size(); ++s) {
      const std::size_t c = std::max<std::size_t>(1, counts[s]);
      for (std::size_t i = 1; i <= c; ++i)
        breaks.push_back(i == c ? bounds[s + 1] : bounds[s] + (bounds[s + 1] - bounds[s]) * double(i) / double(c));
    }
    return PanelGrid(std::move(breaks), order);
  }

  std::size_t size() const { return nodes_.size(); }
  int order() const { return order_; }
  double lo() const { return panels_.front().lo; }
  double hi() const { return panels_.back().hi; }
  std::span<const double> nodes() const { return nodes_; }
  std::span<const double> weights() const { return weights_; }
  std::span<const Panel> panels() const { return panels_; }

  Eigen::Map<const Eigen::VectorXd> node_vector() const { return {nodes_.data(), Eigen::Index(nodes_.size())}; }
  Eigen::Map<const Eigen::VectorXd> weight_vector() const { return {weights_.data(), Eigen::Index(weights_.size())}; }

  /// Index range [first, last) of nodes lying in [a, b]; a and b must be panel breaks.
  std::pair<std::size_t, std::size_t> node_range(double a, double b) const {
    std::size_t first = size(), last = 0;
    for (const auto& p : panels_) {
      if (p.lo >= a - 1e-14 * (1 + std::abs(a)) && p.hi <= b + 1e-14 * (1 + std::abs(b))) {
        first = std::min(first, p.first);
        last = std::max(last, p.first + std::size_t(order_));
      }
    }
    if (first >= last) throw InvalidArgument("PanelGrid::node_range: no panels inside the range");
    return {first, last};
  }

  /// Columnwise cumulative integrals. Row i of the result holds the integral
  /// from lo() to node i; the extra last row holds the integral to hi().
  Eigen::MatrixXd cumulative(const Eigen::Ref<const Eigen::MatrixXd>& values) const {
    if (std::size_t(values.rows()) != size()) throw InvalidArgument("PanelGrid::cumulative: row mismatch");
    const auto& rule = gauss_legendre(order_);
    Eigen::MatrixXd out(values.rows() + 1, values.cols());
    Eigen::RowVectorXd running = Eigen::RowVectorXd::Zero(values.cols());
    for (const auto& p : panels_) {
      const double rad = 0.5 * (p.hi - p.lo);
      auto block = values.middleRows(Eigen::Index(p.first), order_);
      out.middleRows(Eigen::Index(p.first), order_) =
          (rad * rule.cumulative * block).rowwise() + running;
      Eigen::Map<const Eigen::VectorXd> w(weights_.data() + p.first, order_);
      running += w.transpose() * block;
    }
    out.row(values.rows()) = running;
    return out;
  }

  /// Dense matrix Q with (Q f)_i = integral from lo() to node i of f.
  Eigen::MatrixXd cumulative_operator() const {
    const auto& rule = gauss_legendre(order_);
    const Eigen::Index n = Eigen::Index(size());
    Eigen::MatrixXd q = Eigen::MatrixXd::Zero(n, n);
    for (const auto& p : panels_) {
      const double rad = 0.5 * (p.hi - p.lo);
      const auto f = Eigen::Index(p.first);
      q.block(f, f, order_, order_) = rad * rule.cumulative;
      for (Eigen::Index i = f; i < f + order_; ++i)
        for (Eigen::Index j = 0; j < f; ++j) q(i, j) = weights_[std::size_t(j)];
    }
    return q;
  }

 private:
  int order_ = 0;
  std::vector<double> nodes_;
  std::vector<double> weights_;
  std::vector<Panel> panels_;
};

}  // namespace betacount
