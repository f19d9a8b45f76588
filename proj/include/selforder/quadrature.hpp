#pragma once

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <vector>

namespace selforder::quadrature {

struct Rule {
  std::vector<double> nodes;    // on [-1, 1]
  std::vector<double> weights;
};

/// Gauss-Legendre rule of the given order (Newton iteration on P_n).
inline Rule gauss_legendre(int order) {
  if (order < 1) throw std::invalid_argument("quadrature order must be >= 1");
  Rule r;
  r.nodes.resize(static_cast<std::size_t>(order));
  r.weights.resize(static_cast<std::size_t>(order));
  const int half = (order + 1) / 2;
  for (int i = 0; i < half; ++i) {
    double x = std::cos(std::numbers::pi * (i + 0.75) / (order + 0.5));
    double dp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = x;
      for (int k = 2; k <= order; ++k) {
        double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      dp = order * (x * p1 - p0) / (x * x - 1.0);
      double dx = p1 / dp;
      x -= dx;
      if (std::abs(dx) < 1e-16) break;
    }
    // recompute derivative at the converged node
    double p0 = 1.0, p1 = x;
    for (int k = 2; k <= order; ++k) {
      double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
      p0 = p1;
      p1 = p2;
    }
    dp = order * (x * p1 - p0) / (x * x - 1.0);
    const double w = 2.0 / ((1.0 - x * x) * dp * dp);
    r.nodes[static_cast<std::size_t>(i)] = -x;
    r.nodes[static_cast<std::size_t>(order - 1 - i)] = x;
    r.weights[static_cast<std::size_t>(i)] = w;
    r.weights[static_cast<std::size_t>(order - 1 - i)] = w;
  }
  return r;
}

/// Composite rule: `rule` mapped onto each panel between consecutive breakpoints.
struct Composite {
  std::vector<double> x;
  std::vector<double> w;
};

inline Composite composite(const Rule& rule, const std::vector<double>& breaks) {
  Composite c;
  for (std::size_t p = 0; p + 1 < breaks.size(); ++p) {
    const double lo = breaks[p], hi = breaks[p + 1];
    const double mid = 0.5 * (lo + hi), half = 0.5 * (hi - lo);
    for (std::size_t k = 0; k < rule.nodes.size(); ++k) {
      c.x.push_back(mid + half * rule.nodes[k]);
      c.w.push_back(half * rule.weights[k]);
    }
  }
  return c;
}

/// Uniform panel breakpoints on [lo, hi] with width at most `max_width`.
inline std::vector<double> uniform_breaks(double lo, double hi, double max_width, int multiplier = 1) {
  int panels = std::max(1, static_cast<int>(std::ceil((hi - lo) / max_width - 1e-12))) * multiplier;
  std::vector<double> b(static_cast<std::size_t>(panels + 1));
  for (int p = 0; p <= panels; ++p) b[static_cast<std::size_t>(p)] = lo + (hi - lo) * p / panels;
  return b;
}

template <class F>
double integrate(F&& f, double lo, double hi, double max_width, int order = 16) {
  const auto c = composite(gauss_legendre(order), uniform_breaks(lo, hi, max_width));
  double s = 0.0;
  for (std::size_t k = 0; k < c.x.size(); ++k) s += c.w[k] * f(c.x[k]);
  return s;
}

}  // namespace selforder::quadrature
