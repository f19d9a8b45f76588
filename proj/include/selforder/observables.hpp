#pragma once

// Quantities computed from states: photon statistics, Husimi Q-functions,
// reduced particle states, real-space (pair) densities, joint photon
// distributions, and overlaps with cat-like particle-field ansatz states
//
//   psi ~ |x+>|a_0>|a_1>... + |x->|-a_0>|-a_1>...
//
// All functions assume the model layout ParticleSector (x) Fock (x) Fock ...

#include "selforder/geometry.hpp"
#include "selforder/hilbert.hpp"
#include "selforder/model.hpp"
#include "selforder/quadrature.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <stdexcept>
#include <vector>

namespace selforder::observables {

using hilbert::DensityMatrix;
using hilbert::StateVector;

// --- field ---------------------------------------------------------------------

struct FieldMoments {
  cplx a = 0.0;
  double n = 0.0;
  double var = 0.0;
};

inline FieldMoments moments_of_mode_state(const DenseMatrix& r) {
  FieldMoments m;
  double n2 = 0.0;
  for (Eigen::Index k = 0; k < r.rows(); ++k) {
    const double p = r(k, k).real();
    m.n += k * p;
    n2 += static_cast<double>(k) * k * p;
    if (k > 0) m.a += std::sqrt(static_cast<double>(k)) * r(k, k - 1);  // tr(a rho) = sum sqrt(k) rho_{k,k-1}
  }
  m.var = n2 - m.n * m.n;
  return m;
}

/// Reduced state of cavity mode `mode` (0-based position in the mode list).
inline DensityMatrix mode_state(const DensityMatrix& rho, std::size_t mode) {
  if (mode + 1 >= rho.space().size()) throw std::invalid_argument("cavity mode index out of range");
  return hilbert::partial_trace(rho, {static_cast<int>(mode + 1)});
}

inline DensityMatrix mode_state(const StateVector& psi, std::size_t mode) {
  if (mode + 1 >= psi.space().size()) throw std::invalid_argument("cavity mode index out of range");
  return hilbert::partial_trace(psi, {static_cast<int>(mode + 1)});
}

inline FieldMoments field_moments(const DensityMatrix& rho, std::size_t mode) {
  return moments_of_mode_state(mode_state(rho, mode).matrix());
}

inline FieldMoments field_moments(const StateVector& psi, std::size_t mode) {
  return moments_of_mode_state(mode_state(psi, mode).matrix());
}

/// Fock amplitudes e^{-|a|^2/2} a^k / sqrt(k!) for k < cutoff, not renormalized.
inline ComplexVector coherent_amplitudes(int cutoff, cplx alpha) {
  ComplexVector c(cutoff);
  c(0) = std::exp(-0.5 * std::norm(alpha));
  for (int k = 1; k < cutoff; ++k) c(k) = c(k - 1) * alpha / std::sqrt(static_cast<double>(k));
  return c;
}

/// Truncated coherent state, renormalized on the cutoff.
inline ComplexVector coherent_state(int cutoff, cplx alpha) {
  ComplexVector c = coherent_amplitudes(cutoff, alpha);
  return c / c.norm();
}

// --- Q-function ------------------------------------------------------------------

/// Q(alpha) = <alpha| r |alpha> / pi for a single-mode density matrix r.
inline double q_value(const DenseMatrix& r, cplx alpha) {
  const ComplexVector c = coherent_amplitudes(static_cast<int>(r.rows()), alpha);
  return c.dot(r * c).real() / std::numbers::pi;
}

struct QGridSpec {
  double alpha_max = 0.0;  ///< 0: 2 + 2 sqrt(<n>)
  int points = 101;        ///< per axis
};

struct QGrid {
  std::vector<double> re, im;
  Eigen::MatrixXd q;             ///< q(i_re, i_im)
  double step = 0.0;
  double integral = 0.0;         ///< sum q * step^2
  double boundary_ratio = 0.0;   ///< max boundary value / max value
  bool adequate() const { return boundary_ratio <= 1e-4; }
};

inline QGrid qfunction(const DenseMatrix& r, QGridSpec spec = {}) {
  if (spec.points < 3) throw std::invalid_argument("Q grid needs at least 3 points per axis");
  double amax = spec.alpha_max;
  if (!(amax > 0.0)) amax = 2.0 + 2.0 * std::sqrt(std::max(0.0, moments_of_mode_state(r).n));
  QGrid g;
  g.step = 2.0 * amax / (spec.points - 1);
  for (int k = 0; k < spec.points; ++k) {
    g.re.push_back(-amax + k * g.step);
    g.im.push_back(-amax + k * g.step);
  }
  g.q.resize(spec.points, spec.points);
  double qmax = 0.0, bmax = 0.0, sum = 0.0;
  for (int i = 0; i < spec.points; ++i)
    for (int j = 0; j < spec.points; ++j) {
      const double v = q_value(r, cplx(g.re[static_cast<std::size_t>(i)], g.im[static_cast<std::size_t>(j)]));
      g.q(i, j) = v;
      qmax = std::max(qmax, v);
      sum += v;
      if (i == 0 || j == 0 || i == spec.points - 1 || j == spec.points - 1) bmax = std::max(bmax, v);
    }
  g.integral = sum * g.step * g.step;
  g.boundary_ratio = qmax > 0.0 ? bmax / qmax : 0.0;
  return g;
}

inline QGrid qfunction(const DensityMatrix& rho, std::size_t mode, QGridSpec spec = {}) {
  return qfunction(mode_state(rho, mode).matrix(), spec);
}

struct GridPoint {
  int i = 0, j = 0;
  cplx alpha;
  double value = 0.0;
};

/// Strict local maxima (8-neighbourhood; plateaus resolved in raster order)
/// whose value exceeds `rel_threshold` times the global maximum.
inline std::vector<GridPoint> local_maxima(const QGrid& g, double rel_threshold = 1e-3) {
  const auto nr = g.q.rows(), ni = g.q.cols();
  const double qmax = g.q.maxCoeff();
  std::vector<GridPoint> out;
  for (Eigen::Index i = 0; i < nr; ++i)
    for (Eigen::Index j = 0; j < ni; ++j) {
      const double v = g.q(i, j);
      if (v <= rel_threshold * qmax) continue;
      bool peak = true;
      for (int di = -1; di <= 1 && peak; ++di)
        for (int dj = -1; dj <= 1 && peak; ++dj) {
          if (di == 0 && dj == 0) continue;
          const auto a = i + di, b = j + dj;
          if (a < 0 || b < 0 || a >= nr || b >= ni) continue;
          const bool earlier = a < i || (a == i && b < j);
          peak = earlier ? v > g.q(a, b) : v >= g.q(a, b);
        }
      if (peak)
        out.push_back({static_cast<int>(i), static_cast<int>(j),
                       cplx(g.re[static_cast<std::size_t>(i)], g.im[static_cast<std::size_t>(j)]), v});
    }
  return out;
}

/// Global maximum of Q on the grid (ties within 1e-12 relative: larger |alpha|
/// first, then smallest raster index), refined by successive 1D parabolic fits
/// on the continuous Q.
inline GridPoint q_peak(const DenseMatrix& r, const QGrid& g, bool refine = true) {
  GridPoint best;
  bool have = false;
  const double tie = 1e-12 * std::max(g.q.maxCoeff(), 1e-300);
  for (Eigen::Index i = 0; i < g.q.rows(); ++i)
    for (Eigen::Index j = 0; j < g.q.cols(); ++j) {
      const GridPoint p{static_cast<int>(i), static_cast<int>(j),
                        cplx(g.re[static_cast<std::size_t>(i)], g.im[static_cast<std::size_t>(j)]), g.q(i, j)};
      if (!have || p.value > best.value + tie ||
          (std::abs(p.value - best.value) <= tie && std::abs(p.alpha) > std::abs(best.alpha) + 1e-12)) {
        best = p;
        have = true;
      }
    }
  if (!refine) return best;
  cplx z = best.alpha;
  double h = g.step;
  for (int it = 0; it < 200 && h > 1e-9; ++it) {
    bool moved = false;
    for (const cplx dir : {cplx(1.0, 0.0), cplx(0.0, 1.0)}) {
      const double f0 = q_value(r, z), fm = q_value(r, z - h * dir), fp = q_value(r, z + h * dir);
      const double curv = fp - 2.0 * f0 + fm;
      if (curv >= 0.0) {
        // not locally concave: step uphill
        if (std::max(fp, fm) > f0) {
          z += (fp > fm ? h : -h) * dir;
          moved = true;
        }
        continue;
      }
      const double off = std::clamp(0.5 * (fm - fp) / curv, -1.0, 1.0) * h;
      if (q_value(r, z + off * dir) >= f0) {
        z += off * dir;
        moved = moved || std::abs(off) > 0.25 * h;
      }
    }
    if (!moved) h *= 0.5;
  }
  best.alpha = z;
  best.value = q_value(r, z);
  return best;
}

// --- particles ---------------------------------------------------------------------

struct ParticleState {
  DenseMatrix one_body;  ///< G(i, j) = <c_i^+ c_j>, trace = n_particles
  DensityMatrix sector;  ///< reduced state of the particle sector, trace = 1
};

inline const hilbert::ParticleSector& particle_sector(const hilbert::SpaceDescriptor& s) {
  return std::get<hilbert::ParticleSector>(s.factor(0));
}

inline DenseMatrix one_body_matrix(const DensityMatrix& sector) {
  const hilbert::ParticleBasis basis(particle_sector(sector.space()));
  const int nm = basis.sector().n_modes;
  DenseMatrix g(nm, nm);
  for (int i = 0; i < nm; ++i)
    for (int j = 0; j < nm; ++j) g(i, j) = hilbert::expect(hilbert::transition(basis, i, j), sector);
  return g;
}

inline ParticleState reduced_particle_dm(const DensityMatrix& rho) {
  auto sector = hilbert::partial_trace(rho, {0});
  auto g = one_body_matrix(sector);
  return {std::move(g), std::move(sector)};
}

inline ParticleState reduced_particle_dm(const StateVector& psi) {
  auto sector = hilbert::partial_trace(psi, {0});
  auto g = one_body_matrix(sector);
  return {std::move(g), std::move(sector)};
}

/// Trap eigenfunctions of the basis slots at x (slot k holds trap mode trap_indices[k]).
inline Eigen::VectorXd slot_functions(const geometry::TrapGeometry& trap, const std::vector<int>& trap_indices, double x) {
  const int top = *std::max_element(trap_indices.begin(), trap_indices.end());
  const auto all = geometry::trap_eigenfunctions(trap, top + 1, x);
  Eigen::VectorXd v(static_cast<Eigen::Index>(trap_indices.size()));
  for (std::size_t k = 0; k < trap_indices.size(); ++k) v(static_cast<Eigen::Index>(k)) = all[static_cast<std::size_t>(trap_indices[k])];
  return v;
}

/// rho(x) = sum_ij Psi_i(x) Psi_j(x) <c_i^+ c_j>
inline std::vector<double> position_density(const geometry::TrapGeometry& trap, const std::vector<int>& trap_indices,
                                            const DenseMatrix& one_body, const std::vector<double>& xs) {
  if (one_body.rows() != static_cast<Eigen::Index>(trap_indices.size()))
    throw std::invalid_argument("one-body matrix does not match the trap basis");
  std::vector<double> out;
  out.reserve(xs.size());
  for (double x : xs) {
    const Eigen::VectorXcd f = slot_functions(trap, trap_indices, x).cast<cplx>();
    out.push_back(std::max(0.0, f.dot(one_body.transpose() * f).real()));
  }
  return out;
}

inline std::vector<double> position_density(const model::Model& m, const DensityMatrix& rho, const std::vector<double>& xs) {
  return position_density(m.params.trap, m.coupling.trap_indices, reduced_particle_dm(rho).one_body, xs);
}

/// Gauss-Legendre nodes and weights covering the support of the trap basis,
/// with panels short enough to resolve the fastest basis function exactly.
inline quadrature::Composite density_quadrature(const geometry::TrapGeometry& trap, const std::vector<int>& trap_indices,
                                                int order = 16) {
  const int top = *std::max_element(trap_indices.begin(), trap_indices.end()) + 1;
  const auto [lo, hi] = trap.support(top);
  const double k = std::max(trap.max_wavenumber(top), 1.0);
  return quadrature::composite(quadrature::gauss_legendre(order), quadrature::uniform_breaks(lo, hi, std::numbers::pi / k));
}

/// Uniform grid over the trap support.
inline std::vector<double> density_grid(const geometry::TrapGeometry& trap, const std::vector<int>& trap_indices, int points) {
  if (points < 2) throw std::invalid_argument("density grid needs at least 2 points");
  const int top = *std::max_element(trap_indices.begin(), trap_indices.end()) + 1;
  const auto [lo, hi] = trap.support(top);
  std::vector<double> xs;
  for (int k = 0; k < points; ++k) xs.push_back(lo + (hi - lo) * k / (points - 1));
  return xs;
}

/// Two-body correlators <c_i^+ c_j^+ c_k c_l> arranged as a matrix
/// C((i, l), (j, k)) so that the pair density is f(x1)^T C f(x2) with
/// f(x)_(i,l) = Psi_i(x) Psi_l(x).
///
/// Uses c_i^+ c_j^+ c_k c_l = (c_i^+ c_l)(c_j^+ c_k) - delta_jl c_i^+ c_k.
inline DenseMatrix two_body_correlators(const DensityMatrix& sector) {
  const hilbert::ParticleBasis basis(particle_sector(sector.space()));
  const int nm = basis.sector().n_modes;
  std::vector<SparseMatrix> t(static_cast<std::size_t>(nm * nm));
  for (int i = 0; i < nm; ++i)
    for (int j = 0; j < nm; ++j) t[static_cast<std::size_t>(i * nm + j)] = hilbert::transition(basis, i, j).sparse();
  const DenseMatrix g = one_body_matrix(sector);
  const DenseMatrix& r = sector.matrix();
  DenseMatrix c = DenseMatrix::Zero(nm * nm, nm * nm);
  for (int i = 0; i < nm; ++i)
    for (int l = 0; l < nm; ++l) {
      const DenseMatrix left = r * t[static_cast<std::size_t>(i * nm + l)];
      for (int j = 0; j < nm; ++j)
        for (int k = 0; k < nm; ++k) {
          // tr((c_i^+ c_l)(c_j^+ c_k) rho) = tr((c_j^+ c_k) rho (c_i^+ c_l))
          const SparseMatrix& right = t[static_cast<std::size_t>(j * nm + k)];
          cplx acc = 0.0;
          for (int row = 0; row < right.outerSize(); ++row)
            for (SparseMatrix::InnerIterator it(right, row); it; ++it) acc += it.value() * left(it.col(), it.row());
          if (j == l) acc -= g(i, k);
          c(i * nm + l, j * nm + k) = acc;
        }
    }
  return c;
}

class PairDensity {
 public:
  PairDensity(const geometry::TrapGeometry& trap, std::vector<int> trap_indices, const DensityMatrix& rho)
      : trap_(trap), idx_(std::move(trap_indices)) {
    const auto sector = hilbert::partial_trace(rho, {0});
    if (particle_sector(sector.space()).n_particles != 2)
      throw std::invalid_argument("pair density requires exactly two particles");
    if (particle_sector(sector.space()).n_modes != static_cast<int>(idx_.size()))
      throw std::invalid_argument("particle sector does not match the trap basis");
    c_ = two_body_correlators(sector).real();
  }

  PairDensity(const model::Model& m, const DensityMatrix& rho) : PairDensity(m.params.trap, m.coupling.trap_indices, rho) {}

  double operator()(double x1, double x2) const { return features(x1).dot(c_ * features(x2)); }

  /// rows: x1, cols: x2
  Eigen::MatrixXd grid(const std::vector<double>& x1, const std::vector<double>& x2) const {
    Eigen::MatrixXd f1(c_.rows(), static_cast<Eigen::Index>(x1.size())), f2(c_.rows(), static_cast<Eigen::Index>(x2.size()));
    for (std::size_t k = 0; k < x1.size(); ++k) f1.col(static_cast<Eigen::Index>(k)) = features(x1[k]);
    for (std::size_t k = 0; k < x2.size(); ++k) f2.col(static_cast<Eigen::Index>(k)) = features(x2[k]);
    return f1.transpose() * c_ * f2;
  }

  /// Double integral over the trap support (should equal N (N - 1) = 2).
  double integral() const {
    const auto q = density_quadrature(trap_, idx_);
    const Eigen::MatrixXd g = grid(q.x, q.x);
    const Eigen::Map<const Eigen::VectorXd> w(q.w.data(), static_cast<Eigen::Index>(q.w.size()));
    return w.dot(g * w);
  }

  /// int rho(x, x) dx / int rho(x, x') dx with x' the mirror image of x about the trap center.
  double diagonal_dominance() const {
    const auto q = density_quadrature(trap_, idx_);
    double same = 0.0, mirrored = 0.0;
    for (std::size_t k = 0; k < q.x.size(); ++k) {
      same += q.w[k] * (*this)(q.x[k], q.x[k]);
      mirrored += q.w[k] * (*this)(q.x[k], 2.0 * trap_.center - q.x[k]);
    }
    return same / mirrored;
  }

 private:
  Eigen::VectorXd features(double x) const {
    const Eigen::VectorXd f = slot_functions(trap_, idx_, x);
    const auto n = f.size();
    Eigen::VectorXd out(n * n);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index l = 0; l < n; ++l) out(i * n + l) = f(i) * f(l);
    return out;
  }

  geometry::TrapGeometry trap_;
  std::vector<int> idx_;
  Eigen::MatrixXd c_;
};

// --- joint photon statistics ----------------------------------------------------------

/// p(n1, n2) for cavity modes m1 and m2.
inline Eigen::MatrixXd joint_photon_dist(const DensityMatrix& rho, std::size_t m1, std::size_t m2) {
  if (m1 == m2) throw std::invalid_argument("joint distribution needs two distinct modes");
  const int f1 = static_cast<int>(m1 + 1), f2 = static_cast<int>(m2 + 1);
  const auto red = hilbert::partial_trace(rho, {f1, f2});
  const int d1 = rho.space().dim(m1 + 1), d2 = rho.space().dim(m2 + 1);
  Eigen::MatrixXd p(d1, d2);
  // partial_trace keeps factors in ascending order
  for (int a = 0; a < d1; ++a)
    for (int b = 0; b < d2; ++b) {
      const int idx = f1 < f2 ? a * d2 + b : b * d1 + a;
      p(a, b) = red.matrix()(idx, idx).real();
    }
  return p;
}

inline double photon_correlation(const Eigen::MatrixXd& p) {
  double s = 0, m1 = 0, m2 = 0, q11 = 0, q22 = 0, q12 = 0;
  for (Eigen::Index a = 0; a < p.rows(); ++a)
    for (Eigen::Index b = 0; b < p.cols(); ++b) {
      const double w = p(a, b);
      s += w;
      m1 += w * a;
      m2 += w * b;
      q11 += w * a * a;
      q22 += w * b * b;
      q12 += w * a * b;
    }
  m1 /= s;
  m2 /= s;
  const double v1 = q11 / s - m1 * m1, v2 = q22 / s - m2 * m2, cov = q12 / s - m1 * m2;
  if (!(v1 > 0.0 && v2 > 0.0)) return 0.0;
  return cov / std::sqrt(v1 * v2);
}

// --- ansatz states ---------------------------------------------------------------------

namespace detail {

template <class A, class B>
DenseMatrix kron(const A& a, const B& b) {
  DenseMatrix out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j) out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return out;
}

/// Product of per-mode vectors in factor order (first mode slowest).
inline ComplexVector field_product(const std::vector<ComplexVector>& parts) {
  ComplexVector acc = parts.front();
  for (std::size_t k = 1; k < parts.size(); ++k) {
    ComplexVector next(acc.size() * parts[k].size());
    for (Eigen::Index a = 0; a < acc.size(); ++a) next.segment(a * parts[k].size(), parts[k].size()) = acc(a) * parts[k];
    acc = std::move(next);
  }
  return acc;
}

inline std::vector<int> cutoffs(const hilbert::SpaceDescriptor& s) {
  std::vector<int> c;
  for (std::size_t f = 1; f < s.size(); ++f) c.push_back(s.dim(f));
  return c;
}

inline ComplexVector coherent_product(const std::vector<int>& cut, const std::vector<cplx>& alphas, double sign) {
  std::vector<ComplexVector> parts;
  for (std::size_t k = 0; k < cut.size(); ++k) parts.push_back(coherent_state(cut[k], sign * alphas[k]));
  return field_product(parts);
}

/// Column b holds the field amplitudes for particle basis state b.
inline Eigen::Map<const DenseMatrix> as_field_by_particle(const StateVector& psi) {
  const int np = psi.space().dim(0);
  const int nf = psi.space().total_dim() / np;
  return {psi.amplitudes().data(), nf, np};
}

/// Nelder-Mead maximization of f over R^n.
inline Eigen::VectorXd nelder_mead_max(const std::function<double(const Eigen::VectorXd&)>& f, Eigen::VectorXd x0,
                                       double scale, double tol, int max_iter = 2000) {
  const auto n = x0.size();
  std::vector<Eigen::VectorXd> s{x0};
  for (Eigen::Index k = 0; k < n; ++k) {
    Eigen::VectorXd v = x0;
    v(k) += scale;
    s.push_back(v);
  }
  std::vector<double> fv;
  for (const auto& v : s) fv.push_back(-f(v));
  for (int it = 0; it < max_iter; ++it) {
    std::vector<std::size_t> order(s.size());
    for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return fv[a] < fv[b]; });
    std::vector<Eigen::VectorXd> s2;
    std::vector<double> f2;
    for (auto k : order) {
      s2.push_back(s[k]);
      f2.push_back(fv[k]);
    }
    s = std::move(s2);
    fv = std::move(f2);
    double spread = 0.0;
    for (std::size_t k = 1; k < s.size(); ++k) spread = std::max(spread, (s[k] - s[0]).cwiseAbs().maxCoeff());
    if (spread < tol) break;
    Eigen::VectorXd centroid = Eigen::VectorXd::Zero(n);
    for (std::size_t k = 0; k + 1 < s.size(); ++k) centroid += s[k];
    centroid /= static_cast<double>(n);
    const Eigen::VectorXd xr = centroid + (centroid - s.back());
    const double fr = -f(xr);
    if (fr < fv[0]) {
      const Eigen::VectorXd xe = centroid + 2.0 * (centroid - s.back());
      const double fe = -f(xe);
      if (fe < fr) {
        s.back() = xe;
        fv.back() = fe;
      } else {
        s.back() = xr;
        fv.back() = fr;
      }
    } else if (fr < fv[fv.size() - 2]) {
      s.back() = xr;
      fv.back() = fr;
    } else {
      const Eigen::VectorXd xc = centroid + 0.5 * (s.back() - centroid);
      const double fc = -f(xc);
      if (fc < fv.back()) {
        s.back() = xc;
        fv.back() = fc;
      } else {
        for (std::size_t k = 1; k < s.size(); ++k) {
          s[k] = s[0] + 0.5 * (s[k] - s[0]);
          fv[k] = -f(s[k]);
        }
      }
    }
  }
  return s[static_cast<std::size_t>(std::min_element(fv.begin(), fv.end()) - fv.begin())];
}

}  // namespace detail

struct AnsatzOptions {
  QGridSpec grid{};
  double degenerate_alpha = 1e-3;  ///< below this |alpha| (all modes) a single branch is fitted
  bool refine = false;             ///< optimize alpha for maximal overlap
  double refine_tol = 1e-6;
};

struct AnsatzFit {
  std::vector<cplx> alphas;
  ComplexVector x_plus, x_minus;  ///< normalized branch states (zero if empty)
  double fidelity = 0.0;
  bool degenerate = false;
};

namespace detail {

inline AnsatzFit fit_at(const StateVector& psi, const std::vector<cplx>& alphas, double degenerate_alpha) {
  const auto cut = cutoffs(psi.space());
  const auto m = as_field_by_particle(psi);
  AnsatzFit fit;
  fit.alphas = alphas;
  double amax = 0.0;
  for (auto a : alphas) amax = std::max(amax, std::abs(a));
  fit.degenerate = amax < degenerate_alpha;
  const ComplexVector cp = coherent_product(cut, alphas, 1.0);
  const ComplexVector xp = m.transpose() * cp.conjugate();  // (x) <alpha| psi
  ComplexVector phi;
  if (fit.degenerate) {
    phi = ComplexVector(detail::kron(xp, cp));
    fit.x_plus = xp.norm() > 0 ? ComplexVector(xp / xp.norm()) : xp;
    fit.x_minus = fit.x_plus;
  } else {
    const ComplexVector cm = coherent_product(cut, alphas, -1.0);
    const ComplexVector xm = m.transpose() * cm.conjugate();
    phi = ComplexVector(detail::kron(xp, cp)) + ComplexVector(detail::kron(xm, cm));
    fit.x_plus = xp.norm() > 0 ? ComplexVector(xp / xp.norm()) : xp;
    fit.x_minus = xm.norm() > 0 ? ComplexVector(xm / xm.norm()) : xm;
  }
  const double nphi = phi.norm();
  fit.fidelity = nphi > 0 ? std::norm(phi.dot(psi.amplitudes())) / (nphi * nphi) : 0.0;
  fit.fidelity = std::clamp(fit.fidelity, 0.0, 1.0);
  return fit;
}

}  // namespace detail

/// Amplitudes from the per-mode Q-function maxima.
inline std::vector<cplx> q_alphas(const std::vector<DenseMatrix>& mode_states, QGridSpec spec) {
  std::vector<cplx> alphas;
  for (const auto& r : mode_states) alphas.push_back(q_peak(r, qfunction(r, spec)).alpha);
  return alphas;
}

inline AnsatzFit ansatz_overlap(const StateVector& psi, const AnsatzOptions& opts = {}) {
  if (psi.space().size() < 2) throw std::invalid_argument("ansatz needs particle and field factors");
  const StateVector s = psi.normalized();
  std::vector<DenseMatrix> modes;
  for (std::size_t k = 0; k + 1 < s.space().size(); ++k) modes.push_back(mode_state(s, k).matrix());
  auto fit = detail::fit_at(s, q_alphas(modes, opts.grid), opts.degenerate_alpha);
  if (!opts.refine || fit.degenerate) return fit;
  const auto n = fit.alphas.size();
  Eigen::VectorXd x0(static_cast<Eigen::Index>(2 * n));
  for (std::size_t k = 0; k < n; ++k) {
    x0(static_cast<Eigen::Index>(2 * k)) = fit.alphas[k].real();
    x0(static_cast<Eigen::Index>(2 * k + 1)) = fit.alphas[k].imag();
  }
  auto unpack = [n](const Eigen::VectorXd& x) {
    std::vector<cplx> a;
    for (std::size_t k = 0; k < n; ++k) a.emplace_back(x(static_cast<Eigen::Index>(2 * k)), x(static_cast<Eigen::Index>(2 * k + 1)));
    return a;
  };
  auto f = [&](const Eigen::VectorXd& x) { return detail::fit_at(s, unpack(x), opts.degenerate_alpha).fidelity; };
  const Eigen::VectorXd best = detail::nelder_mead_max(f, x0, 0.05, opts.refine_tol);
  auto refined = detail::fit_at(s, unpack(best), opts.degenerate_alpha);
  return refined.fidelity >= fit.fidelity ? refined : fit;
}

// --- mixed states ------------------------------------------------------------------------

inline DenseMatrix psd_sqrt(const DenseMatrix& m) {
  Eigen::SelfAdjointEigenSolver<DenseMatrix> es(0.5 * (m + m.adjoint()));
  const Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().adjoint();
}

/// Uhlmann fidelity (tr sqrt(sqrt(rho) sigma sqrt(rho)))^2.
inline double uhlmann_fidelity(const DenseMatrix& rho, const DenseMatrix& sigma) {
  const DenseMatrix s = psd_sqrt(rho);
  Eigen::SelfAdjointEigenSolver<DenseMatrix> es(s * sigma * s, Eigen::EigenvaluesOnly);
  const double t = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  return std::clamp(t * t, 0.0, 1.0);
}

inline double trace_distance(const DenseMatrix& a, const DenseMatrix& b) {
  const DenseMatrix d = a - b;
  Eigen::SelfAdjointEigenSolver<DenseMatrix> es(0.5 * (d + d.adjoint()), Eigen::EigenvaluesOnly);
  return 0.5 * es.eigenvalues().cwiseAbs().sum();
}

inline double trace_distance(const DensityMatrix& a, const DensityMatrix& b) {
  if (!(a.space() == b.space())) throw std::invalid_argument("trace distance of states on different spaces");
  return trace_distance(a.matrix(), b.matrix());
}

struct MixtureFit {
  double fidelity = 0.0;
  std::vector<cplx> alphas;
  bool degenerate = false;
};

/// Fidelity of rho with 1/2 (rho+ (x) |a><a| + rho- (x) |-a><-a|), the branch
/// states being rho conditioned on the coherent components.
inline MixtureFit mixture_fidelity(const DensityMatrix& rho, const AnsatzOptions& opts = {}) {
  const auto& sp = rho.space();
  if (sp.size() < 2) throw std::invalid_argument("mixture fit needs particle and field factors");
  std::vector<DenseMatrix> modes;
  for (std::size_t k = 0; k + 1 < sp.size(); ++k) modes.push_back(mode_state(rho, k).matrix());
  MixtureFit out;
  out.alphas = q_alphas(modes, opts.grid);
  double amax = 0.0;
  for (auto a : out.alphas) amax = std::max(amax, std::abs(a));
  out.degenerate = amax < opts.degenerate_alpha;

  const auto cut = detail::cutoffs(sp);
  const int np = sp.dim(0);
  const int nf = sp.total_dim() / np;
  auto conditioned = [&](const ComplexVector& c) {
    // r(b, b') = sum_{f f'} conj(c_f) rho[(b,f),(b',f')] c_f'
    DenseMatrix r(np, np);
    for (int b = 0; b < np; ++b)
      for (int bp = 0; bp < np; ++bp)
        r(b, bp) = c.dot(rho.matrix().block(b * nf, bp * nf, nf, nf) * c);
    const double tr = r.trace().real();
    return tr > 0 ? DenseMatrix(r / tr) : r;
  };
  const ComplexVector cp = detail::coherent_product(cut, out.alphas, 1.0);
  const DenseMatrix pp = cp * cp.adjoint();
  DenseMatrix sigma;
  if (out.degenerate) {
    sigma = detail::kron(conditioned(cp), pp);
  } else {
    const ComplexVector cm = detail::coherent_product(cut, out.alphas, -1.0);
    sigma = 0.5 * (detail::kron(conditioned(cp), pp) + detail::kron(conditioned(cm), DenseMatrix(cm * cm.adjoint())));
  }
  out.fidelity = uhlmann_fidelity(rho.matrix(), sigma);
  return out;
}

}  // namespace selforder::observables
