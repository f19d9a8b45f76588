#pragma once

// Truncated Hilbert spaces, operators and states.
//
// A space is an ordered list of factors. Composite indices are row-major in
// factor order: the first factor is the slowest-varying one.

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <variant>
#include <vector>

namespace selforder {

using cplx = std::complex<double>;
using DenseMatrix = Eigen::MatrixXcd;
using SparseMatrix = Eigen::SparseMatrix<cplx, Eigen::RowMajor>;
using ComplexVector = Eigen::VectorXcd;
using Triplet = Eigen::Triplet<cplx>;

namespace hilbert {

/// Photon Fock space with states |0>, ..., |cutoff-1>.
struct FockSpace {
  int cutoff = 1;
  int dim() const { return cutoff; }
  bool operator==(const FockSpace&) const = default;
};

/// Bosonic sector with a fixed number of particles distributed over
/// `n_modes` single-particle modes.
struct ParticleSector {
  int n_modes = 1;
  int n_particles = 1;

  int dim() const {
    // C(n_particles + n_modes - 1, n_particles)
    std::int64_t k = std::min(n_particles, n_modes - 1);
    std::int64_t n = n_particles + n_modes - 1;
    std::int64_t r = 1;
    for (std::int64_t i = 1; i <= k; ++i) {
      r = r * (n - k + i) / i;
      if (r > std::numeric_limits<int>::max())
        throw std::invalid_argument("particle sector dimension overflows");
    }
    return static_cast<int>(r);
  }
  bool operator==(const ParticleSector&) const = default;
};

using Factor = std::variant<FockSpace, ParticleSector>;

inline int factor_dim(const Factor& f) {
  return std::visit([](const auto& x) { return x.dim(); }, f);
}

class SpaceDescriptor {
 public:
  SpaceDescriptor() = default;

  explicit SpaceDescriptor(std::vector<Factor> factors) : factors_(std::move(factors)) {
    if (factors_.empty()) throw std::invalid_argument("space needs at least one factor");
    std::int64_t total = 1;
    for (const auto& f : factors_) {
      if (const auto* fock = std::get_if<FockSpace>(&f); fock && fock->cutoff < 1)
        throw std::invalid_argument("Fock cutoff must be >= 1");
      if (const auto* ps = std::get_if<ParticleSector>(&f);
          ps && (ps->n_modes < 1 || ps->n_particles < 1))
        throw std::invalid_argument("particle sector needs n_modes >= 1 and n_particles >= 1");
      total *= factor_dim(f);
      if (total > std::numeric_limits<int>::max())
        throw std::invalid_argument("total dimension overflows");
    }
    total_dim_ = static_cast<int>(total);
  }

  const std::vector<Factor>& factors() const { return factors_; }
  const Factor& factor(std::size_t k) const { return factors_.at(k); }
  std::size_t size() const { return factors_.size(); }
  int dim(std::size_t k) const { return factor_dim(factors_.at(k)); }
  int total_dim() const { return total_dim_; }

  std::vector<int> dims() const {
    std::vector<int> d;
    for (const auto& f : factors_) d.push_back(factor_dim(f));
    return d;
  }

  /// Descriptor of the kept factors, in their original order.
  SpaceDescriptor subspace(const std::vector<int>& keep) const {
    std::vector<Factor> f;
    for (int k : keep) f.push_back(factors_.at(static_cast<std::size_t>(k)));
    return SpaceDescriptor(std::move(f));
  }

  bool operator==(const SpaceDescriptor& o) const { return factors_ == o.factors_; }

 private:
  std::vector<Factor> factors_;
  int total_dim_ = 0;
};

/// Occupation-number basis of a ParticleSector. States are enumerated in
/// lexicographically descending order of their occupation vectors, e.g.
/// (2,0,0), (1,1,0), (1,0,1), (0,2,0), (0,1,1), (0,0,2).
class ParticleBasis {
 public:
  explicit ParticleBasis(ParticleSector sector) : sector_(sector) {
    std::vector<int> occ(static_cast<std::size_t>(sector.n_modes), 0);
    fill(occ, 0, sector.n_particles);
    for (std::size_t i = 0; i < states_.size(); ++i) index_.emplace(states_[i], static_cast<int>(i));
  }

  const ParticleSector& sector() const { return sector_; }
  int size() const { return static_cast<int>(states_.size()); }
  const std::vector<int>& occupation(int index) const { return states_.at(static_cast<std::size_t>(index)); }

  int index_of(const std::vector<int>& occ) const {
    auto it = index_.find(occ);
    if (it == index_.end()) throw std::invalid_argument("occupation vector not in sector");
    return it->second;
  }

 private:
  void fill(std::vector<int>& occ, std::size_t mode, int remaining) {
    if (mode + 1 == occ.size()) {
      occ[mode] = remaining;
      states_.push_back(occ);
      return;
    }
    for (int k = remaining; k >= 0; --k) {
      occ[mode] = k;
      fill(occ, mode + 1, remaining - k);
    }
    occ[mode] = 0;
  }

  ParticleSector sector_;
  std::vector<std::vector<int>> states_;
  std::map<std::vector<int>, int> index_;
};

enum class Storage { Dense, Sparse };

/// Operators of dimension <= this value are stored densely.
inline int& dense_threshold() {
  static int threshold = 1024;
  return threshold;
}

inline Storage default_storage(int dim) {
  return dim <= dense_threshold() ? Storage::Dense : Storage::Sparse;
}

class Operator {
 public:
  Operator() = default;

  Operator(SpaceDescriptor space, SparseMatrix m) : space_(std::move(space)) {
    check_shape(m.rows(), m.cols());
    m.makeCompressed();
    if (default_storage(space_.total_dim()) == Storage::Dense)
      data_ = DenseMatrix(m);
    else
      data_ = std::move(m);
  }

  Operator(SpaceDescriptor space, DenseMatrix m) : space_(std::move(space)) {
    check_shape(m.rows(), m.cols());
    if (default_storage(space_.total_dim()) == Storage::Dense)
      data_ = std::move(m);
    else
      data_ = to_sparse(m);
  }

  const SpaceDescriptor& space() const { return space_; }
  int dim() const { return space_.total_dim(); }
  Storage storage() const { return std::holds_alternative<DenseMatrix>(data_) ? Storage::Dense : Storage::Sparse; }

  Operator with_storage(Storage s) const {
    Operator r = *this;
    if (s == Storage::Dense)
      r.data_ = dense();
    else
      r.data_ = sparse();
    return r;
  }

  DenseMatrix dense() const {
    if (const auto* d = std::get_if<DenseMatrix>(&data_)) return *d;
    return DenseMatrix(std::get<SparseMatrix>(data_));
  }

  SparseMatrix sparse() const {
    if (const auto* s = std::get_if<SparseMatrix>(&data_)) return *s;
    return to_sparse(std::get<DenseMatrix>(data_));
  }

  cplx coeff(int r, int c) const {
    if (const auto* d = std::get_if<DenseMatrix>(&data_)) return (*d)(r, c);
    return std::get<SparseMatrix>(data_).coeff(r, c);
  }

  Operator adjoint() const {
    SparseMatrix a = sparse().adjoint();
    return Operator(space_, std::move(a));
  }

  ComplexVector apply(const ComplexVector& v) const {
    if (v.size() != dim()) throw std::invalid_argument("vector dimension mismatch");
    if (const auto* d = std::get_if<DenseMatrix>(&data_)) return (*d) * v;
    return std::get<SparseMatrix>(data_) * v;
  }

  /// max |O - O^dagger| entrywise.
  double hermiticity_error() const {
    DenseMatrix d = dense();
    return (d - d.adjoint()).cwiseAbs().maxCoeff();
  }

  double max_abs() const {
    if (const auto* d = std::get_if<DenseMatrix>(&data_)) return d->cwiseAbs().maxCoeff();
    const auto& s = std::get<SparseMatrix>(data_);
    double m = 0.0;
    for (int k = 0; k < s.outerSize(); ++k)
      for (SparseMatrix::InnerIterator it(s, k); it; ++it) m = std::max(m, std::abs(it.value()));
    return m;
  }

  friend Operator operator+(const Operator& a, const Operator& b) {
    a.require_same_space(b);
    SparseMatrix s = a.sparse() + b.sparse();
    return Operator(a.space_, std::move(s));
  }
  friend Operator operator-(const Operator& a, const Operator& b) {
    a.require_same_space(b);
    SparseMatrix s = a.sparse() - b.sparse();
    return Operator(a.space_, std::move(s));
  }
  friend Operator operator*(const Operator& a, const Operator& b) {
    a.require_same_space(b);
    SparseMatrix s = (a.sparse() * b.sparse()).pruned();
    return Operator(a.space_, std::move(s));
  }
  friend Operator operator*(cplx z, const Operator& a) {
    SparseMatrix s = z * a.sparse();
    return Operator(a.space_, std::move(s));
  }
  friend Operator operator*(double x, const Operator& a) { return cplx(x, 0.0) * a; }

 private:
  static SparseMatrix to_sparse(const DenseMatrix& d) {
    std::vector<Triplet> t;
    for (Eigen::Index r = 0; r < d.rows(); ++r)
      for (Eigen::Index c = 0; c < d.cols(); ++c)
        if (d(r, c) != cplx(0.0, 0.0)) t.emplace_back(static_cast<int>(r), static_cast<int>(c), d(r, c));
    SparseMatrix s(d.rows(), d.cols());
    s.setFromTriplets(t.begin(), t.end());
    return s;
  }

  void check_shape(Eigen::Index rows, Eigen::Index cols) const {
    if (rows != space_.total_dim() || cols != space_.total_dim())
      throw std::invalid_argument("operator matrix does not match space dimension");
  }

  void require_same_space(const Operator& o) const {
    if (!(space_ == o.space_)) throw std::invalid_argument("operators act on different spaces");
  }

  SpaceDescriptor space_;
  std::variant<DenseMatrix, SparseMatrix> data_;
};

class StateVector {
 public:
  StateVector() = default;
  StateVector(SpaceDescriptor space, ComplexVector amplitudes)
      : space_(std::move(space)), amplitudes_(std::move(amplitudes)) {
    if (amplitudes_.size() != space_.total_dim())
      throw std::invalid_argument("state vector does not match space dimension");
  }

  /// Product basis state; `indices` holds one local index per factor.
  static StateVector basis(const SpaceDescriptor& space, const std::vector<int>& indices) {
    if (indices.size() != space.size()) throw std::invalid_argument("one index per factor required");
    int flat = 0;
    for (std::size_t k = 0; k < space.size(); ++k) {
      if (indices[k] < 0 || indices[k] >= space.dim(k)) throw std::invalid_argument("basis index out of range");
      flat = flat * space.dim(k) + indices[k];
    }
    ComplexVector v = ComplexVector::Zero(space.total_dim());
    v(flat) = 1.0;
    return StateVector(space, std::move(v));
  }

  const SpaceDescriptor& space() const { return space_; }
  const ComplexVector& amplitudes() const { return amplitudes_; }
  double norm() const { return amplitudes_.norm(); }

  StateVector normalized() const {
    double n = norm();
    if (!(n > 0.0)) throw std::invalid_argument("cannot normalize a zero vector");
    return StateVector(space_, amplitudes_ / n);
  }

 private:
  SpaceDescriptor space_;
  ComplexVector amplitudes_;
};

class DensityMatrix {
 public:
  DensityMatrix() = default;
  DensityMatrix(SpaceDescriptor space, DenseMatrix m) : space_(std::move(space)), matrix_(std::move(m)) {
    if (matrix_.rows() != space_.total_dim() || matrix_.cols() != space_.total_dim())
      throw std::invalid_argument("density matrix does not match space dimension");
  }

  static DensityMatrix from_pure(const StateVector& psi) {
    return DensityMatrix(psi.space(), psi.amplitudes() * psi.amplitudes().adjoint());
  }

  const SpaceDescriptor& space() const { return space_; }
  const DenseMatrix& matrix() const { return matrix_; }
  int dim() const { return space_.total_dim(); }
  cplx trace() const { return matrix_.trace(); }
  double hermiticity_error() const { return (matrix_ - matrix_.adjoint()).cwiseAbs().maxCoeff(); }

  /// Hermitian to 1e-10 and unit trace to 1e-8.
  bool is_physical(double herm_tol = 1e-10, double trace_tol = 1e-8) const {
    return hermiticity_error() <= herm_tol && std::abs(trace() - 1.0) <= trace_tol;
  }

  /// (rho + rho^dagger) / 2, optionally renormalized to unit trace.
  DensityMatrix hermitized(bool normalize = false) const {
    DenseMatrix h = 0.5 * (matrix_ + matrix_.adjoint());
    if (normalize) h /= h.trace().real();
    return DensityMatrix(space_, std::move(h));
  }

 private:
  SpaceDescriptor space_;
  DenseMatrix matrix_;
};

// --- elementary operators --------------------------------------------------

inline Operator identity(const SpaceDescriptor& space) {
  SparseMatrix s(space.total_dim(), space.total_dim());
  s.setIdentity();
  return Operator(space, std::move(s));
}

/// Photon annihilation operator: <m-1|a|m> = sqrt(m).
inline Operator annihilation(int cutoff) {
  if (cutoff < 1) throw std::invalid_argument("cutoff must be >= 1");
  std::vector<Triplet> t;
  for (int m = 1; m < cutoff; ++m) t.emplace_back(m - 1, m, std::sqrt(static_cast<double>(m)));
  SparseMatrix s(cutoff, cutoff);
  s.setFromTriplets(t.begin(), t.end());
  return Operator(SpaceDescriptor({FockSpace{cutoff}}), std::move(s));
}

inline Operator number(int cutoff) {
  Operator a = annihilation(cutoff);
  return a.adjoint() * a;
}

/// c_i^dagger c_j on a bosonic particle sector.
inline Operator transition(const ParticleBasis& basis, int i, int j) {
  const auto& sec = basis.sector();
  if (i < 0 || j < 0 || i >= sec.n_modes || j >= sec.n_modes)
    throw std::invalid_argument("trap mode index out of range");
  std::vector<Triplet> t;
  for (int col = 0; col < basis.size(); ++col) {
    std::vector<int> occ = basis.occupation(col);
    if (i == j) {
      if (occ[static_cast<std::size_t>(i)] > 0) t.emplace_back(col, col, static_cast<double>(occ[static_cast<std::size_t>(i)]));
      continue;
    }
    const int nj = occ[static_cast<std::size_t>(j)];
    if (nj == 0) continue;
    const int ni = occ[static_cast<std::size_t>(i)];
    occ[static_cast<std::size_t>(j)] -= 1;
    occ[static_cast<std::size_t>(i)] += 1;
    t.emplace_back(basis.index_of(occ), col, std::sqrt(static_cast<double>((ni + 1) * nj)));
  }
  SparseMatrix s(basis.size(), basis.size());
  s.setFromTriplets(t.begin(), t.end());
  return Operator(SpaceDescriptor({basis.sector()}), std::move(s));
}

inline Operator transition(const ParticleSector& sector, int i, int j) {
  return transition(ParticleBasis(sector), i, j);
}

inline SparseMatrix kron(const SparseMatrix& a, const SparseMatrix& b) {
  std::vector<Triplet> t;
  t.reserve(static_cast<std::size_t>(a.nonZeros() * b.nonZeros()));
  for (int ka = 0; ka < a.outerSize(); ++ka)
    for (SparseMatrix::InnerIterator ia(a, ka); ia; ++ia)
      for (int kb = 0; kb < b.outerSize(); ++kb)
        for (SparseMatrix::InnerIterator ib(b, kb); ib; ++ib)
          t.emplace_back(static_cast<int>(ia.row() * b.rows() + ib.row()),
                         static_cast<int>(ia.col() * b.cols() + ib.col()), ia.value() * ib.value());
  SparseMatrix s(a.rows() * b.rows(), a.cols() * b.cols());
  s.setFromTriplets(t.begin(), t.end());
  return s;
}

/// Kronecker product in the given factor order. Each operand may itself act
/// on a multi-factor space; the result space concatenates the factors.
inline Operator tensor(const std::vector<Operator>& ops) {
  if (ops.empty()) throw std::invalid_argument("tensor needs at least one operator");
  std::vector<Factor> factors;
  SparseMatrix acc = ops.front().sparse();
  for (const auto& f : ops.front().space().factors()) factors.push_back(f);
  for (std::size_t k = 1; k < ops.size(); ++k) {
    acc = kron(acc, ops[k].sparse());
    for (const auto& f : ops[k].space().factors()) factors.push_back(f);
  }
  return Operator(SpaceDescriptor(std::move(factors)), std::move(acc));
}

/// Tensor product where `ops` must supply one operator per factor of `space`.
inline Operator tensor(const SpaceDescriptor& space, const std::vector<Operator>& ops) {
  if (ops.size() != space.size()) throw std::invalid_argument("one operator per factor required");
  for (std::size_t k = 0; k < ops.size(); ++k)
    if (ops[k].space().size() != 1 || !(ops[k].space().factor(0) == space.factor(k)))
      throw std::invalid_argument("operator does not match factor " + std::to_string(k));
  return tensor(ops);
}

/// Embed a single-factor operator into `space` at factor `k`.
inline Operator embed(const SpaceDescriptor& space, std::size_t k, const Operator& op) {
  std::vector<Operator> ops;
  for (std::size_t f = 0; f < space.size(); ++f)
    ops.push_back(f == k ? op : identity(SpaceDescriptor({space.factor(f)})));
  return tensor(space, ops);
}

// --- reductions --------------------------------------------------------------

namespace detail {

/// For each flat index, its (kept, traced) flat sub-indices.
struct SplitIndex {
  std::vector<int> kept_dims;
  int kept_total = 1;
  int traced_total = 1;
  std::vector<int> kept;
  std::vector<int> traced;
};

inline SplitIndex split_index(const SpaceDescriptor& space, const std::vector<int>& keep) {
  SplitIndex s;
  std::vector<bool> is_kept(space.size(), false);
  for (int k : keep) {
    if (k < 0 || static_cast<std::size_t>(k) >= space.size()) throw std::invalid_argument("factor index out of range");
    is_kept[static_cast<std::size_t>(k)] = true;
  }
  for (std::size_t f = 0; f < space.size(); ++f) {
    if (is_kept[f]) {
      s.kept_dims.push_back(space.dim(f));
      s.kept_total *= space.dim(f);
    } else {
      s.traced_total *= space.dim(f);
    }
  }
  const int n = space.total_dim();
  s.kept.resize(static_cast<std::size_t>(n));
  s.traced.resize(static_cast<std::size_t>(n));
  std::vector<int> digits(space.size());
  for (int flat = 0; flat < n; ++flat) {
    int rem = flat;
    for (std::size_t f = space.size(); f-- > 0;) {
      digits[f] = rem % space.dim(f);
      rem /= space.dim(f);
    }
    int ki = 0, ti = 0;
    for (std::size_t f = 0; f < space.size(); ++f) {
      if (is_kept[f])
        ki = ki * space.dim(f) + digits[f];
      else
        ti = ti * space.dim(f) + digits[f];
    }
    s.kept[static_cast<std::size_t>(flat)] = ki;
    s.traced[static_cast<std::size_t>(flat)] = ti;
  }
  return s;
}

inline std::vector<int> normalize_keep(const SpaceDescriptor& space, std::vector<int> keep) {
  if (keep.empty()) throw std::invalid_argument("partial trace needs a non-empty keep set");
  std::sort(keep.begin(), keep.end());
  keep.erase(std::unique(keep.begin(), keep.end()), keep.end());
  for (int k : keep)
    if (k < 0 || static_cast<std::size_t>(k) >= space.size()) throw std::invalid_argument("factor index out of range");
  return keep;
}

}  // namespace detail

/// Reduced state on the factors listed in `keep` (kept in original order).
inline DensityMatrix partial_trace(const DensityMatrix& rho, std::vector<int> keep) {
  keep = detail::normalize_keep(rho.space(), std::move(keep));
  const auto s = detail::split_index(rho.space(), keep);
  // group flat indices by their traced sub-index
  std::vector<std::vector<int>> groups(static_cast<std::size_t>(s.traced_total));
  for (int flat = 0; flat < rho.dim(); ++flat) groups[static_cast<std::size_t>(s.traced[static_cast<std::size_t>(flat)])].push_back(flat);
  DenseMatrix out = DenseMatrix::Zero(s.kept_total, s.kept_total);
  const auto& m = rho.matrix();
  for (const auto& g : groups)
    for (int r : g)
      for (int c : g) out(s.kept[static_cast<std::size_t>(r)], s.kept[static_cast<std::size_t>(c)]) += m(r, c);
  return DensityMatrix(rho.space().subspace(keep), std::move(out));
}

/// Reduced state of a pure state.
inline DensityMatrix partial_trace(const StateVector& psi, std::vector<int> keep) {
  keep = detail::normalize_keep(psi.space(), std::move(keep));
  const auto s = detail::split_index(psi.space(), keep);
  DenseMatrix m = DenseMatrix::Zero(s.kept_total, s.traced_total);
  const auto& a = psi.amplitudes();
  for (int flat = 0; flat < psi.space().total_dim(); ++flat)
    m(s.kept[static_cast<std::size_t>(flat)], s.traced[static_cast<std::size_t>(flat)]) = a(flat);
  return DensityMatrix(psi.space().subspace(keep), m * m.adjoint());
}

inline cplx expect(const Operator& op, const StateVector& psi) {
  if (!(op.space() == psi.space())) throw std::invalid_argument("operator and state spaces differ");
  return psi.amplitudes().dot(op.apply(psi.amplitudes()));
}

/// tr(op rho)
inline cplx expect(const Operator& op, const DensityMatrix& rho) {
  if (!(op.space() == rho.space())) throw std::invalid_argument("operator and state spaces differ");
  const auto& m = rho.matrix();
  cplx acc = 0.0;
  if (op.storage() == Storage::Sparse) {
    const SparseMatrix s = op.sparse();
    for (int r = 0; r < s.outerSize(); ++r)
      for (SparseMatrix::InnerIterator it(s, r); it; ++it) acc += it.value() * m(it.col(), it.row());
    return acc;
  }
  const DenseMatrix d = op.dense();
  return (d.transpose().cwiseProduct(m)).sum();
}

}  // namespace hilbert
}  // namespace selforder
