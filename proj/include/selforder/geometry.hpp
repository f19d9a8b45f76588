#pragma once

// Trap eigenfunctions and the cavity-trap coupling matrices
//
//   A^n_ij = int Psi_i Psi_j sin^2(k_n (x + L)) dx
//   B^n_ij = int Psi_i Psi_j sin  (k_n (x + L)) dx
//
// Lengths are in units of the cavity half-length L (so L = 1), rates in units
// of the reference decay rate kappa.

#include "selforder/errors.hpp"
#include "selforder/quadrature.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <deque>
#include <numbers>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace selforder::geometry {

inline constexpr double kCavityHalfLength = 1.0;

/// Entries smaller than this are stored as exact zeros.
inline constexpr double kZeroClip = 1e-12;

enum class TrapKind { Box, Harmonic };

struct TrapGeometry {
  TrapKind kind = TrapKind::Box;
  double half_width = 0.25;  ///< box half-width a
  double omega_t = 1.0;      ///< harmonic trap frequency
  double osc_length = 0.05;  ///< harmonic oscillator length sqrt(hbar / (m omega_t))
  double center = 0.0;       ///< trap center x0

  static TrapGeometry box(double a, double x0 = 0.0) {
    TrapGeometry t;
    t.kind = TrapKind::Box;
    t.half_width = a;
    t.center = x0;
    t.validate();
    return t;
  }

  static TrapGeometry harmonic(double omega_t, double osc_length, double x0 = 0.0) {
    TrapGeometry t;
    t.kind = TrapKind::Harmonic;
    t.omega_t = omega_t;
    t.osc_length = osc_length;
    t.center = x0;
    t.validate();
    return t;
  }

  void validate() const {
    if (kind == TrapKind::Box) {
      if (!(half_width > 0.0) || half_width > kCavityHalfLength)
        throw std::invalid_argument("box trap requires 0 < a <= L");
      if (std::abs(center) + half_width > kCavityHalfLength + 1e-14)
        throw std::invalid_argument("box trap must lie inside the cavity (|x0| + a <= L)");
    } else {
      if (!(omega_t > 0.0)) throw std::invalid_argument("harmonic trap requires omega_t > 0");
      if (!(osc_length > 0.0)) throw std::invalid_argument("harmonic trap requires a positive oscillator length");
      if (std::abs(center) >= kCavityHalfLength) throw std::invalid_argument("harmonic trap center outside cavity");
    }
  }

  /// Interval outside of which the first `n_modes` eigenfunctions are zero
  /// (box) or negligible (harmonic: classical turning point + 8 widths).
  std::pair<double, double> support(int n_modes) const {
    if (kind == TrapKind::Box) return {center - half_width, center + half_width};
    const double pad = osc_length * (std::sqrt(2.0 * n_modes + 1.0) + 8.0);
    return {std::max(center - pad, -kCavityHalfLength), std::min(center + pad, kCavityHalfLength)};
  }

  /// Largest local wave number among the first `n_modes` eigenfunctions.
  double max_wavenumber(int n_modes) const {
    if (kind == TrapKind::Box) return std::numbers::pi * n_modes / (2.0 * half_width);
    return std::sqrt(2.0 * n_modes + 1.0) / osc_length;
  }
};

inline double wavenumber(int n) {
  if (n < 1) throw std::invalid_argument("cavity mode index must be >= 1");
  return n * std::numbers::pi / (2.0 * kCavityHalfLength);
}

/// u_n(x) = sin(k_n (x + L)).
inline double cavity_mode(int n, double x) {
  const double k = wavenumber(n);
  if (std::abs(x) > kCavityHalfLength * (1.0 + 1e-12)) throw std::invalid_argument("position outside the cavity");
  return std::sin(k * (x + kCavityHalfLength));
}

/// Values of the first `count` trap eigenfunctions at x.
inline std::vector<double> trap_eigenfunctions(const TrapGeometry& trap, int count, double x) {
  std::vector<double> v(static_cast<std::size_t>(std::max(count, 0)), 0.0);
  if (count <= 0) return v;
  if (trap.kind == TrapKind::Box) {
    const double a = trap.half_width;
    const double y = x - trap.center + a;
    if (y < 0.0 || y > 2.0 * a) return v;
    const double norm = 1.0 / std::sqrt(a);
    for (int i = 0; i < count; ++i)
      v[static_cast<std::size_t>(i)] = norm * std::sin(std::numbers::pi * (i + 1) / (2.0 * a) * y);
    return v;
  }
  // normalized Hermite functions by three-term recurrence
  const double l = trap.osc_length;
  const double xi = (x - trap.center) / l;
  v[0] = std::exp(-0.5 * xi * xi) / std::sqrt(std::sqrt(std::numbers::pi) * l);
  if (count > 1) v[1] = std::sqrt(2.0) * xi * v[0];
  for (int k = 1; k + 1 < count; ++k) {
    const auto kk = static_cast<std::size_t>(k);
    v[kk + 1] = std::sqrt(2.0 / (k + 1.0)) * xi * v[kk] - std::sqrt(k / (k + 1.0)) * v[kk - 1];
  }
  return v;
}

/// Psi_i(x); i = 0 is the ground state.
inline double trap_eigenfunction(const TrapGeometry& trap, int i, double x) {
  if (i < 0) throw std::invalid_argument("trap mode index must be >= 0");
  return trap_eigenfunctions(trap, i + 1, x)[static_cast<std::size_t>(i)];
}

/// Box: omega_rec (i+1)^2 with omega_rec the ground-state energy.
/// Harmonic: omega_t (i + 1/2).
inline double trap_energy(const TrapGeometry& trap, int i, double omega_rec) {
  if (i < 0) throw std::invalid_argument("trap mode index must be >= 0");
  if (!(omega_rec > 0.0)) throw std::invalid_argument("omega_rec must be > 0");
  if (trap.kind == TrapKind::Box) return omega_rec * (i + 1.0) * (i + 1.0);
  return trap.omega_t * (i + 0.5);
}

// --- coupling matrices ---------------------------------------------------------

struct CouplingSlice {
  int n = 0;
  Eigen::MatrixXd A;
  Eigen::MatrixXd B;
};

struct QuadratureOptions {
  int order = 16;
  double tol = 1e-10;
  int max_refinements = 6;
  int initial_multiplier = 1;  ///< panel subdivision factor of the first pass
};

struct QuadratureReport {
  int panels = 0;       ///< panel count of the accepted (finer) pass
  double change = 0.0;  ///< max entry change between the last two passes
};

namespace detail {

inline void clip_and_symmetrize(Eigen::MatrixXd& m) {
  m = 0.5 * (m + m.transpose()).eval();
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c)
      if (std::abs(m(r, c)) < kZeroClip) m(r, c) = 0.0;
}

/// Panel breakpoints: support ends and the nodes of sin^2(k_n (x+L)), each
/// panel subdivided so no panel spans more than half a period of the fastest
/// oscillation in the integrand.
inline std::vector<double> coupling_breaks(const TrapGeometry& trap, int n, int n_modes, int multiplier) {
  const auto [lo, hi] = trap.support(n_modes);
  const double k = wavenumber(n);
  const double node_spacing = std::numbers::pi / (2.0 * k);
  std::vector<double> nodes{lo};
  const double first = std::ceil((lo + kCavityHalfLength) / node_spacing);
  for (double m = first;; m += 1.0) {
    const double x = -kCavityHalfLength + m * node_spacing;
    if (x >= hi) break;
    if (x > lo + 1e-14) nodes.push_back(x);
  }
  nodes.push_back(hi);
  const double omega = 2.0 * trap.max_wavenumber(n_modes) + 2.0 * k;
  const double width = std::numbers::pi / omega;
  std::vector<double> breaks{nodes.front()};
  for (std::size_t p = 0; p + 1 < nodes.size(); ++p) {
    const double a = nodes[p], b = nodes[p + 1];
    const int pieces = std::max(1, static_cast<int>(std::ceil((b - a) / width - 1e-12))) * multiplier;
    for (int q = 1; q <= pieces; ++q) breaks.push_back(q == pieces ? b : a + (b - a) * q / pieces);
  }
  return breaks;
}

inline CouplingSlice integrate_slice(const TrapGeometry& trap, int n, int n_modes, const quadrature::Rule& rule,
                                     int multiplier, int* panels) {
  const auto breaks = coupling_breaks(trap, n, n_modes, multiplier);
  if (panels) *panels = static_cast<int>(breaks.size()) - 1;
  const auto c = quadrature::composite(rule, breaks);
  const auto np = static_cast<Eigen::Index>(c.x.size());
  Eigen::MatrixXd phi(n_modes, np);
  Eigen::VectorXd ws(np), ws2(np);
  const double k = wavenumber(n);
  for (Eigen::Index p = 0; p < np; ++p) {
    const double x = c.x[static_cast<std::size_t>(p)];
    const auto v = trap_eigenfunctions(trap, n_modes, x);
    for (int i = 0; i < n_modes; ++i) phi(i, p) = v[static_cast<std::size_t>(i)];
    const double s = std::sin(k * (x + kCavityHalfLength));
    ws(p) = c.w[static_cast<std::size_t>(p)] * s;
    ws2(p) = c.w[static_cast<std::size_t>(p)] * s * s;
  }
  CouplingSlice out;
  out.n = n;
  out.A = phi * ws2.asDiagonal() * phi.transpose();
  out.B = phi * ws.asDiagonal() * phi.transpose();
  return out;
}

}  // namespace detail

/// A^n, B^n by panel-wise Gauss-Legendre quadrature, accepted once doubling
/// the panel count changes no entry by more than `opts.tol`.
inline CouplingSlice coupling_quadrature(const TrapGeometry& trap, int n, int n_modes_trap,
                                         const QuadratureOptions& opts = {}, QuadratureReport* report = nullptr) {
  trap.validate();
  if (n < 1) throw std::invalid_argument("cavity mode index must be >= 1");
  if (n_modes_trap < 1) throw std::invalid_argument("n_modes_trap must be >= 1");
  const auto rule = quadrature::gauss_legendre(opts.order);
  int multiplier = std::max(1, opts.initial_multiplier);
  int panels = 0;
  CouplingSlice coarse = detail::integrate_slice(trap, n, n_modes_trap, rule, multiplier, &panels);
  double change = 0.0;
  for (int pass = 0; pass <= opts.max_refinements; ++pass) {
    multiplier *= 2;
    CouplingSlice fine = detail::integrate_slice(trap, n, n_modes_trap, rule, multiplier, &panels);
    change = std::max((fine.A - coarse.A).cwiseAbs().maxCoeff(), (fine.B - coarse.B).cwiseAbs().maxCoeff());
    if (change <= opts.tol) {
      detail::clip_and_symmetrize(fine.A);
      detail::clip_and_symmetrize(fine.B);
      if (report) *report = {panels, change};
      return fine;
    }
    coarse = std::move(fine);
  }
  throw NumericalFailure("coupling quadrature for mode " + std::to_string(n) + " did not converge: last change " +
                         std::to_string(change) + " with " + std::to_string(panels) + " panels");
}

struct CouplingMatrices {
  std::vector<int> modes;            ///< cavity indices n
  std::vector<Eigen::MatrixXd> A;    ///< one per entry of `modes`
  std::vector<Eigen::MatrixXd> B;
  Eigen::VectorXd E;                 ///< trap energies
  std::vector<int> trap_indices;     ///< trap eigenmode index of each row

  int n_modes_trap() const { return static_cast<int>(E.size()); }

  std::size_t slot(int n) const {
    auto it = std::find(modes.begin(), modes.end(), n);
    if (it == modes.end()) throw std::invalid_argument("no coupling data for cavity mode " + std::to_string(n));
    return static_cast<std::size_t>(it - modes.begin());
  }
};

inline CouplingMatrices compute_couplings(const TrapGeometry& trap, const std::vector<int>& modes, int n_modes_trap,
                                          double omega_rec, const QuadratureOptions& opts = {}) {
  CouplingMatrices c;
  c.modes = modes;
  for (int n : modes) {
    auto s = coupling_quadrature(trap, n, n_modes_trap, opts);
    c.A.push_back(std::move(s.A));
    c.B.push_back(std::move(s.B));
  }
  c.E.resize(n_modes_trap);
  for (int i = 0; i < n_modes_trap; ++i) {
    c.E(i) = trap_energy(trap, i, omega_rec);
    c.trap_indices.push_back(i);
  }
  return c;
}

/// Keep only the listed rows/columns (local indices into `c`).
inline CouplingMatrices restrict_modes(const CouplingMatrices& c, const std::vector<int>& keep) {
  CouplingMatrices r;
  r.modes = c.modes;
  const auto m = static_cast<Eigen::Index>(keep.size());
  r.E.resize(m);
  for (Eigen::Index a = 0; a < m; ++a) {
    r.E(a) = c.E(keep[static_cast<std::size_t>(a)]);
    r.trap_indices.push_back(c.trap_indices.at(static_cast<std::size_t>(keep[static_cast<std::size_t>(a)])));
  }
  for (std::size_t s = 0; s < c.modes.size(); ++s) {
    Eigen::MatrixXd A(m, m), B(m, m);
    for (Eigen::Index a = 0; a < m; ++a)
      for (Eigen::Index b = 0; b < m; ++b) {
        A(a, b) = c.A[s](keep[static_cast<std::size_t>(a)], keep[static_cast<std::size_t>(b)]);
        B(a, b) = c.B[s](keep[static_cast<std::size_t>(a)], keep[static_cast<std::size_t>(b)]);
      }
    r.A.push_back(std::move(A));
    r.B.push_back(std::move(B));
  }
  return r;
}

/// Breadth-first closure from the ground state over the graph with an edge
/// (i, j) whenever |A^n_ij| > tol or |B^n_ij| > tol for any pumped n. Returns
/// the `max_modes` lowest-energy reachable local indices, ascending.
inline std::vector<int> reachable_modes(const CouplingMatrices& c, double tol, int max_modes) {
  if (!(tol > 0.0)) throw std::invalid_argument("reachability tolerance must be > 0");
  const int n = c.n_modes_trap();
  std::vector<bool> seen(static_cast<std::size_t>(n), false);
  std::deque<int> queue{0};
  seen[0] = true;
  while (!queue.empty()) {
    const int i = queue.front();
    queue.pop_front();
    for (int j = 0; j < n; ++j) {
      if (seen[static_cast<std::size_t>(j)] || j == i) continue;
      bool edge = false;
      for (std::size_t s = 0; s < c.modes.size() && !edge; ++s)
        edge = std::abs(c.A[s](i, j)) > tol || std::abs(c.B[s](i, j)) > tol;
      if (edge) {
        seen[static_cast<std::size_t>(j)] = true;
        queue.push_back(j);
      }
    }
  }
  std::vector<int> out;
  for (int j = 0; j < n; ++j)
    if (seen[static_cast<std::size_t>(j)]) out.push_back(j);
  std::stable_sort(out.begin(), out.end(), [&](int x, int y) { return c.E(x) < c.E(y); });
  if (max_modes > 0 && static_cast<int>(out.size()) > max_modes) out.resize(static_cast<std::size_t>(max_modes));
  std::sort(out.begin(), out.end());
  return out;
}

/// Fraction of entries with magnitude above `threshold`.
inline double nonzero_fraction(const Eigen::MatrixXd& m, double threshold) {
  return static_cast<double>((m.array().abs() > threshold).count()) / static_cast<double>(m.size());
}

// --- closed form for the centered box --------------------------------------------

/// Index offset used when evaluating the printed sinc closed forms: either the
/// 0-based trap indices are inserted as they are, or shifted to 1-based.
enum class IndexConvention { AsPrinted, ShiftedByOne };

inline const char* to_string(IndexConvention c) {
  return c == IndexConvention::AsPrinted ? "as-printed" : "shifted-by-one";
}

inline double sinc(double x) { return x == 0.0 ? 1.0 : std::sin(x) / x; }

/// (A^n_ij, B^n_ij) for a box of half-width a centered in the cavity.
inline std::pair<double, double> coupling_closed_form_box(double a, int n, int i, int j, IndexConvention convention,
                                                          double x0 = 0.0) {
  if (x0 != 0.0) throw std::invalid_argument("closed form requires a centered box");
  if (!(a > 0.0) || a > kCavityHalfLength) throw std::invalid_argument("box trap requires 0 < a <= L");
  if (n < 1 || i < 0 || j < 0) throw std::invalid_argument("invalid mode index");
  const double half_pi = 0.5 * std::numbers::pi;
  const double ratio = a / kCavityHalfLength;
  const double ii = convention == IndexConvention::ShiftedByOne ? i + 1.0 : i;
  const double jj = convention == IndexConvention::ShiftedByOne ? j + 1.0 : j;
  auto fcos = [&](double p, double q, double m) { return sinc(half_pi * (p + q + 2.0 * ratio * m)) * std::cos(half_pi * (p + q)); };
  auto fsin = [&](double p, double q, double m) { return sinc(half_pi * (p + q + ratio * m)) * std::sin(half_pi * (p + q + m)); };
  const double sign = (n % 2 == 0) ? 1.0 : -1.0;
  const double nn = n;
  const double A = 0.5 * (i == j ? 1.0 : 0.0) +
                   0.25 * sign * (fcos(ii, jj, nn) + fcos(ii, jj, -nn) - fcos(ii, -jj, nn) - fcos(ii, -jj, -nn));
  const double B = 0.5 * (-fsin(ii, jj, nn) + fsin(-ii, jj, nn) + fsin(ii, -jj, nn) + fsin(ii, jj, -nn));
  return {A, B};
}

struct ConventionVerdict {
  std::optional<IndexConvention> matched;  ///< convention agreeing with quadrature, if any
  double deviation_as_printed = 0.0;        ///< max |closed - quadrature|
  double deviation_shifted = 0.0;
  double tolerance = 0.0;
};

/// Compare both index conventions against quadrature for a centered box.
inline ConventionVerdict validate_closed_form(double a, const std::vector<int>& modes, int n_modes_trap,
                                              double tol = 1e-8) {
  ConventionVerdict v;
  v.tolerance = tol;
  const auto trap = TrapGeometry::box(a, 0.0);
  for (int n : modes) {
    const auto q = coupling_quadrature(trap, n, n_modes_trap);
    for (int i = 0; i < n_modes_trap; ++i)
      for (int j = 0; j < n_modes_trap; ++j) {
        const auto p = coupling_closed_form_box(a, n, i, j, IndexConvention::AsPrinted);
        const auto s = coupling_closed_form_box(a, n, i, j, IndexConvention::ShiftedByOne);
        v.deviation_as_printed =
            std::max({v.deviation_as_printed, std::abs(p.first - q.A(i, j)), std::abs(p.second - q.B(i, j))});
        v.deviation_shifted =
            std::max({v.deviation_shifted, std::abs(s.first - q.A(i, j)), std::abs(s.second - q.B(i, j))});
      }
  }
  if (v.deviation_shifted <= tol && v.deviation_shifted <= v.deviation_as_printed)
    v.matched = IndexConvention::ShiftedByOne;
  else if (v.deviation_as_printed <= tol)
    v.matched = IndexConvention::AsPrinted;
  return v;
}

}  // namespace selforder::geometry
