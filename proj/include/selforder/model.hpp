#pragma once

// Rotating-frame Hamiltonian
//
//   H = - sum_n Dc_n a_n^+ a_n + sum_i E_i c_i^+ c_i
//       + sum_nij U0_n A^n_ij c_i^+ c_j a_n^+ a_n
//       + sum_nij eta_n B^n_ij c_i^+ c_j (a_n^+ + a_n)
//
// and photon-loss jump operators J_n = sqrt(2 kappa_n) a_n. The composite space
// is ParticleSector (x) Fock(mode 0) (x) Fock(mode 1) (x) ...

#include "selforder/errors.hpp"
#include "selforder/geometry.hpp"
#include "selforder/hilbert.hpp"

#include <Eigen/Sparse>

#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace selforder::model {

using hilbert::DensityMatrix;
using hilbert::Operator;
using hilbert::SpaceDescriptor;

struct ModeParams {
  int n = 19;              ///< cavity mode index
  double kappa = 1.0;      ///< field decay rate
  double delta_c = -3.0;   ///< pump-cavity detuning
  double u0 = -2.0;        ///< light shift per photon
  double eta = 0.0;        ///< effective pump strength
  int fock_cutoff = 16;    ///< photon states 0 .. cutoff-1
};

struct ModelParams {
  std::vector<ModeParams> modes{ModeParams{}};
  geometry::TrapGeometry trap = geometry::TrapGeometry::box(0.25, 0.0);
  int n_particles = 1;
  int n_modes_trap = 12;
  double omega_rec = 0.125;

  void validate() const {
    if (modes.empty()) throw std::invalid_argument("at least one cavity mode required");
    std::set<int> seen;
    bool pumped = false;
    for (const auto& m : modes) {
      if (m.n < 1) throw std::invalid_argument("cavity mode index must be >= 1");
      if (!seen.insert(m.n).second) throw std::invalid_argument("cavity mode " + std::to_string(m.n) + " listed twice");
      if (!(m.kappa > 0.0)) throw std::invalid_argument("kappa must be > 0");
      if (m.fock_cutoff < 2) throw std::invalid_argument("fock_cutoff must be >= 2");
      if (m.eta < 0.0) throw std::invalid_argument("eta must be >= 0");
      pumped = pumped || m.eta > 0.0;
    }
    if (n_particles < 1) throw std::invalid_argument("n_particles must be >= 1");
    if (n_modes_trap < 1) throw std::invalid_argument("n_modes_trap must be >= 1");
    if (pumped && n_modes_trap < 2) throw std::invalid_argument("n_modes_trap must be >= 2 when pumped");
    if (!(omega_rec > 0.0)) throw std::invalid_argument("omega_rec must be > 0");
    trap.validate();
  }

  std::vector<int> mode_indices() const {
    std::vector<int> r;
    for (const auto& m : modes) r.push_back(m.n);
    return r;
  }
};

inline SpaceDescriptor model_space(const ModelParams& p, int trap_modes_used) {
  std::vector<hilbert::Factor> f{hilbert::ParticleSector{trap_modes_used, p.n_particles}};
  for (const auto& m : p.modes) f.emplace_back(hilbert::FockSpace{m.fock_cutoff});
  return SpaceDescriptor(std::move(f));
}

namespace detail {

/// sum_ij M_ij c_i^+ c_j on the particle sector.
inline SparseMatrix one_body(const hilbert::ParticleBasis& basis, const Eigen::MatrixXd& m) {
  const int nm = basis.sector().n_modes;
  SparseMatrix acc(basis.size(), basis.size());
  for (int i = 0; i < nm; ++i)
    for (int j = 0; j < nm; ++j)
      if (m(i, j) != 0.0) acc += m(i, j) * hilbert::transition(basis, i, j).sparse();
  return acc;
}

inline SparseMatrix sparse_identity(int d) {
  SparseMatrix s(d, d);
  s.setIdentity();
  return s;
}

/// Kronecker product of per-factor matrices in factor order.
inline SparseMatrix kron_all(const std::vector<SparseMatrix>& parts) {
  SparseMatrix acc = parts.front();
  for (std::size_t k = 1; k < parts.size(); ++k) acc = hilbert::kron(acc, parts[k]);
  return acc;
}

}  // namespace detail

inline Operator build_hamiltonian(const ModelParams& p, const geometry::CouplingMatrices& c) {
  p.validate();
  const int nt = c.n_modes_trap();
  if (nt < 1) throw std::invalid_argument("coupling matrices are empty");
  const SpaceDescriptor space = model_space(p, nt);
  const hilbert::ParticleBasis basis(hilbert::ParticleSector{nt, p.n_particles});
  const std::size_t nf = p.modes.size();

  std::vector<SparseMatrix> ids{detail::sparse_identity(basis.size())};
  for (const auto& m : p.modes) ids.push_back(detail::sparse_identity(m.fock_cutoff));

  SparseMatrix h(space.total_dim(), space.total_dim());
  // trap energies
  {
    Eigen::MatrixXd e = c.E.asDiagonal();
    auto parts = ids;
    parts[0] = detail::one_body(basis, e);
    h += detail::kron_all(parts);
  }
  for (std::size_t k = 0; k < nf; ++k) {
    const auto& mode = p.modes[k];
    const std::size_t slot = c.slot(mode.n);
    if (c.A[slot].rows() != nt || c.B[slot].rows() != nt)
      throw std::invalid_argument("coupling matrix size does not match trap basis");
    const SparseMatrix a = hilbert::annihilation(mode.fock_cutoff).sparse();
    const SparseMatrix ad = SparseMatrix(a.adjoint());
    const SparseMatrix num = ad * a;
    auto parts = ids;
    parts[k + 1] = num;
    h += (-mode.delta_c) * detail::kron_all(parts);
    if (mode.u0 != 0.0) {
      parts[0] = detail::one_body(basis, c.A[slot]);
      h += mode.u0 * detail::kron_all(parts);
    }
    if (mode.eta != 0.0) {
      parts[0] = detail::one_body(basis, c.B[slot]);
      parts[k + 1] = a + ad;
      h += mode.eta * detail::kron_all(parts);
    }
  }
  h.prune(cplx(0.0, 0.0));
  return Operator(space, std::move(h));
}

/// J_n = sqrt(2 kappa_n) a_n embedded in `space`.
inline std::vector<Operator> build_jump_operators(const ModelParams& p, const SpaceDescriptor& space) {
  if (space.size() != p.modes.size() + 1) throw std::invalid_argument("space does not match the mode list");
  std::vector<Operator> jumps;
  for (std::size_t k = 0; k < p.modes.size(); ++k) {
    const auto& m = p.modes[k];
    jumps.push_back(std::sqrt(2.0 * m.kappa) * hilbert::embed(space, k + 1, hilbert::annihilation(m.fock_cutoff)));
  }
  return jumps;
}

/// -i[H, rho] + sum_n (J rho J^+ - {J^+ J, rho} / 2), valid for any square rho.
inline DenseMatrix liouvillian_apply(const Operator& H, const std::vector<Operator>& jumps, const DenseMatrix& rho) {
  if (rho.rows() != H.dim() || rho.cols() != H.dim()) throw std::invalid_argument("density matrix dimension mismatch");
  const SparseMatrix h = H.sparse();
  const cplx I(0.0, 1.0);
  DenseMatrix out = -I * (h * rho) + I * (rho * h);
  for (const auto& jo : jumps) {
    if (!(jo.space() == H.space())) throw std::invalid_argument("jump operator space mismatch");
    const SparseMatrix j = jo.sparse();
    const SparseMatrix jd = SparseMatrix(j.adjoint());
    const SparseMatrix jdj = jd * j;
    out += (j * rho) * jd;
    out -= 0.5 * (jdj * rho);
    out -= 0.5 * (rho * jdj);
  }
  return out;
}

inline DensityMatrix liouvillian_apply(const Operator& H, const std::vector<Operator>& jumps, const DensityMatrix& rho) {
  if (!(rho.space() == H.space())) throw std::invalid_argument("density matrix space mismatch");
  return DensityMatrix(rho.space(), liouvillian_apply(H, jumps, rho.matrix()));
}

/// Superoperator acting on column-major vec(rho); throws ResourceLimit when
/// the Hilbert-space dimension exceeds `max_dim`.
inline Eigen::SparseMatrix<cplx> vectorized_liouvillian(const Operator& H, const std::vector<Operator>& jumps,
                                                        int max_dim = 600) {
  const int d = H.dim();
  if (d > max_dim)
    throw ResourceLimit("Hilbert-space dimension " + std::to_string(d) + " exceeds the superoperator limit " +
                        std::to_string(max_dim) + "; use the integration-based steady-state solver");
  const cplx I(0.0, 1.0);
  const SparseMatrix id = detail::sparse_identity(d);
  const SparseMatrix h = H.sparse();
  const SparseMatrix ht = SparseMatrix(h.transpose());
  SparseMatrix L = (-I) * hilbert::kron(id, h) + I * hilbert::kron(ht, id);
  for (const auto& jo : jumps) {
    const SparseMatrix j = jo.sparse();
    const SparseMatrix jd = SparseMatrix(j.adjoint());
    const SparseMatrix jdj = jd * j;
    const SparseMatrix jconj = SparseMatrix(j.conjugate());
    const SparseMatrix jdjt = SparseMatrix(jdj.transpose());
    L += hilbert::kron(jconj, j);
    L -= 0.5 * hilbert::kron(id, jdj);
    L -= 0.5 * hilbert::kron(jdjt, id);
  }
  L.prune(cplx(0.0, 0.0));
  return Eigen::SparseMatrix<cplx>(L);
}

struct BasisOptions {
  bool reduce_to_reachable = false;  ///< drop trap modes not connected to the ground state
  double reach_tol = 1e-10;
  int max_modes = 0;                 ///< 0: keep every reachable mode
  geometry::QuadratureOptions quadrature{};
};

/// Assembled model with sparse kernels cached for the solvers.
struct Model {
  ModelParams params;
  geometry::CouplingMatrices coupling;
  SpaceDescriptor space;
  Operator H;
  std::vector<Operator> jumps;

  SparseMatrix h;                  ///< H
  SparseMatrix h_eff;              ///< H - i/2 sum J^+ J
  std::vector<SparseMatrix> j;     ///< J_n
  std::vector<SparseMatrix> jd;    ///< J_n^+

  std::size_t n_cavity_modes() const { return params.modes.size(); }
  static constexpr std::size_t particle_factor() { return 0; }
  static std::size_t mode_factor(std::size_t k) { return k + 1; }
  int dim() const { return space.total_dim(); }
};

inline Model make_model(const ModelParams& p, geometry::CouplingMatrices coupling) {
  p.validate();
  Model m;
  m.params = p;
  m.coupling = std::move(coupling);
  m.H = build_hamiltonian(p, m.coupling);
  m.space = m.H.space();
  m.jumps = build_jump_operators(p, m.space);
  m.h = m.H.sparse();
  m.h_eff = m.h;
  const cplx half_i(0.0, 0.5);
  for (const auto& jo : m.jumps) {
    m.j.push_back(jo.sparse());
    m.jd.push_back(SparseMatrix(m.j.back().adjoint()));
    m.h_eff -= half_i * SparseMatrix(m.jd.back() * m.j.back());
  }
  m.h_eff.makeCompressed();
  return m;
}

inline Model make_model(const ModelParams& p, const BasisOptions& opts = {}) {
  p.validate();
  auto c = geometry::compute_couplings(p.trap, p.mode_indices(), p.n_modes_trap, p.omega_rec, opts.quadrature);
  if (opts.reduce_to_reachable) {
    // an unpumped mode stays in vacuum, so only pumped modes scatter
    geometry::CouplingMatrices pumped = c;
    pumped.modes.clear();
    pumped.A.clear();
    pumped.B.clear();
    for (std::size_t s = 0; s < c.modes.size(); ++s)
      if (p.modes[s].eta > 0.0) {
        pumped.modes.push_back(c.modes[s]);
        pumped.A.push_back(c.A[s]);
        pumped.B.push_back(c.B[s]);
      }
    c = geometry::restrict_modes(c, geometry::reachable_modes(pumped, opts.reach_tol, opts.max_modes));
  }
  return make_model(p, std::move(c));
}

/// Ground state (all particles in trap mode 0) times photon vacuum.
inline hilbert::StateVector ground_vacuum(const Model& m) {
  std::vector<int> idx(m.space.size(), 0);
  return hilbert::StateVector::basis(m.space, idx);
}

/// Diagonal Z2 operator: (-1)^(sum of trap indices of all particles) times
/// (-1)^(total photon number). Commutes with H exactly when every pumped
/// mode function is odd about the trap center.
inline Operator symmetry_operator(const Model& m) {
  const hilbert::ParticleBasis basis(std::get<hilbert::ParticleSector>(m.space.factor(0)));
  const int photons = m.space.total_dim() / basis.size();
  const auto dims = m.space.dims();
  std::vector<Triplet> t;
  for (int b = 0; b < basis.size(); ++b) {
    const auto& occ = basis.occupation(b);
    int parity = 0;
    for (std::size_t k = 0; k < occ.size(); ++k) parity += occ[k] * m.coupling.trap_indices[k];
    for (int f = 0; f < photons; ++f) {
      int rem = f, ph = 0;
      for (std::size_t d = dims.size(); d-- > 1;) {
        ph += rem % dims[d];
        rem /= dims[d];
      }
      const int flat = b * photons + f;
      t.emplace_back(flat, flat, ((parity + ph) % 2 == 0) ? 1.0 : -1.0);
    }
  }
  SparseMatrix s(m.dim(), m.dim());
  s.setFromTriplets(t.begin(), t.end());
  return Operator(m.space, std::move(s));
}

}  // namespace selforder::model
