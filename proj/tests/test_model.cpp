#include <catch_amalgamated.hpp>

#include "selforder/model.hpp"

#include <Eigen/Eigenvalues>

#include <random>

using namespace selforder;
using namespace selforder::model;


namespace {

ModelParams single(double eta, int cutoff = 6, int trap_modes = 6) {
  ModelParams p;
  p.modes = {ModeParams{19, 1.0, -3.0, -2.0, eta, cutoff}};
  p.n_modes_trap = trap_modes;
  return p;
}

ModelParams random_params(std::mt19937& gen) {
  std::uniform_real_distribution<double> u(-3.0, 3.0), pos(0.2, 2.0);
  ModelParams p;
  p.modes = {ModeParams{7, pos(gen), u(gen), u(gen), pos(gen), 3}, ModeParams{4, pos(gen), u(gen), u(gen), pos(gen), 3}};
  p.n_modes_trap = 3;
  p.n_particles = 1;
  p.trap = geometry::TrapGeometry::box(0.3, 0.1);
  return p;
}

DenseMatrix random_hermitian(int d, std::mt19937& gen) {
  std::normal_distribution<double> g;
  DenseMatrix a(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) a(i, j) = cplx(g(gen), g(gen));
  return a + a.adjoint();
}

Eigen::VectorXcd vec(const DenseMatrix& m) { return Eigen::Map<const Eigen::VectorXcd>(m.data(), m.size()); }

double max_abs(const DenseMatrix& m) { return m.cwiseAbs().maxCoeff(); }

}  // namespace

TEST_CASE("decoupled Hamiltonian is diagonal", "[model]") {
  auto p = single(0.0);
  p.modes[0].u0 = 0.0;
  p.n_particles = 2;
  const auto m = make_model(p);
  const DenseMatrix h = m.H.dense();
  DenseMatrix off = h;
  off.diagonal().setZero();
  CHECK(max_abs(off) == 0.0);
  CHECK(std::abs(hilbert::expect(m.H, ground_vacuum(m)) - 2.0 * m.coupling.E(0)) < 1e-15);
}

TEST_CASE("Hamiltonian is Hermitian and conserves particle number", "[model]") {
  std::mt19937 gen(11);
  for (int trial = 0; trial < 5; ++trial) {
    auto p = random_params(gen);
    p.n_particles = 1 + trial % 2;
    const auto m = make_model(p);
    CHECK(m.H.hermiticity_error() <= 1e-12);
    const hilbert::ParticleBasis basis(std::get<hilbert::ParticleSector>(m.space.factor(0)));
    hilbert::Operator total = hilbert::transition(basis, 0, 0);
    for (int i = 1; i < p.n_modes_trap; ++i) total = total + hilbert::transition(basis, i, i);
    const auto N = hilbert::embed(m.space, 0, total);
    CHECK((m.H * N - N * m.H).max_abs() <= 1e-12);
  }
}

TEST_CASE("no cross-mode photon terms", "[model]") {
  std::mt19937 gen(5);
  const auto m = make_model(random_params(gen));
  const auto dims = m.space.dims();
  const DenseMatrix h = m.H.dense();
  auto photons = [&](int flat) {
    std::vector<int> n(dims.size());
    for (std::size_t d = dims.size(); d-- > 0;) {
      n[d] = flat % dims[d];
      flat /= dims[d];
    }
    return n;
  };
  for (int r = 0; r < m.dim(); ++r)
    for (int c = 0; c < m.dim(); ++c) {
      if (std::abs(h(r, c)) == 0.0) continue;
      const auto a = photons(r), b = photons(c);
      int changed = 0;
      for (std::size_t k = 1; k < dims.size(); ++k) changed += std::abs(a[k] - b[k]);
      CHECK(changed <= 1);
    }
}

TEST_CASE("Hamiltonian matches a naive dense assembly", "[model]") {
  const auto p = single(1.5, 5, 6);
  const auto m = make_model(p);
  const auto& c = m.coupling;
  const int nt = 6, nc = 5;
  const auto& mode = p.modes[0];
  DenseMatrix ref = DenseMatrix::Zero(nt * nc, nt * nc);
  auto idx = [&](int i, int n) { return i * nc + n; };
  for (int i = 0; i < nt; ++i)
    for (int j = 0; j < nt; ++j)
      for (int n = 0; n < nc; ++n) {
        if (i == j) ref(idx(i, n), idx(i, n)) += -mode.delta_c * n + c.E(i);
        ref(idx(i, n), idx(j, n)) += mode.u0 * c.A[0](i, j) * n;
        if (n + 1 < nc) {
          const double amp = mode.eta * c.B[0](i, j) * std::sqrt(n + 1.0);
          ref(idx(i, n + 1), idx(j, n)) += amp;
          ref(idx(i, n), idx(j, n + 1)) += amp;
        }
      }
  CHECK(max_abs(m.H.dense() - ref) <= 1e-13);
  for (int j = 0; j < nt; ++j)
    CHECK(std::abs(m.H.coeff(idx(j, 1), idx(0, 0)) - 1.5 * c.B[0](0, j)) <= 1e-14);
}

TEST_CASE("jump operators", "[model]") {
  ModelParams p;
  p.modes = {ModeParams{3, 1.0, 0.0, 0.0, 0.0, 4}, ModeParams{5, 0.5, 0.0, 0.0, 0.0, 3}};
  p.n_modes_trap = 2;
  const auto m = make_model(p);
  REQUIRE(m.jumps.size() == 2);
  const auto jdj = m.jumps[0].adjoint() * m.jumps[0];
  const auto n0 = hilbert::embed(m.space, 1, hilbert::number(4));
  CHECK((jdj - 2.0 * n0).max_abs() <= 1e-14);
  const auto a1 = hilbert::embed(m.space, 2, hilbert::annihilation(3));
  CHECK((m.jumps[1] - std::sqrt(1.0) * a1).max_abs() <= 1e-14);
  CHECK((m.jumps[0] * a1 - a1 * m.jumps[0]).max_abs() == 0.0);
}

TEST_CASE("Liouvillian action", "[model]") {
  std::mt19937 gen(3);
  SECTION("dark state") {
    const auto m = make_model(single(0.0));
    const auto rho = hilbert::DensityMatrix::from_pure(ground_vacuum(m));
    CHECK(max_abs(liouvillian_apply(m.H, m.jumps, rho).matrix()) <= 1e-12);
  }
  SECTION("trace and Hermiticity preservation") {
    const auto m = make_model(random_params(gen));
    for (int k = 0; k < 5; ++k) {
      const DenseMatrix r = random_hermitian(m.dim(), gen);
      const DenseMatrix d = liouvillian_apply(m.H, m.jumps, r);
      CHECK(std::abs(d.trace()) <= 1e-12 * std::max(1.0, max_abs(r)) * m.dim());
      CHECK(max_abs(d - d.adjoint()) <= 1e-12 * std::max(1.0, max_abs(r)) * m.dim());
    }
  }
  SECTION("damped coherent state") {
    auto p = single(0.0, 30, 2);
    p.modes[0].delta_c = 0.0;
    p.modes[0].u0 = 0.0;
    p.omega_rec = 1.0;
    const auto m = make_model(p);
    ComplexVector v = ComplexVector::Zero(m.dim());
    double f = 1.0;
    for (int n = 0; n < 30; ++n) {
      if (n > 0) f *= std::sqrt(static_cast<double>(n));
      v(n) = std::exp(-0.5) / f;
    }
    const auto rho = hilbert::DensityMatrix::from_pure(hilbert::StateVector(m.space, v));
    const auto n_op = hilbert::embed(m.space, 1, hilbert::number(30));
    // only the decay contributes since the free terms commute with n
    const auto dn = hilbert::expect(n_op, liouvillian_apply(m.H, m.jumps, rho));
    CHECK(std::abs(dn + 2.0) <= 1e-12);
  }
  SECTION("space mismatch") {
    const auto a = make_model(single(0.0, 3, 2));
    const auto b = make_model(single(0.0, 4, 2));
    CHECK_THROWS_AS(liouvillian_apply(a.H, a.jumps, hilbert::DensityMatrix::from_pure(ground_vacuum(b))),
                    std::invalid_argument);
  }
}

TEST_CASE("vectorized Liouvillian", "[model]") {
  std::mt19937 gen(8);
  const auto m = make_model(random_params(gen));
  REQUIRE(m.dim() <= 64);
  const Eigen::SparseMatrix<cplx> L = vectorized_liouvillian(m.H, m.jumps);
  for (int k = 0; k < 20; ++k) {
    std::normal_distribution<double> g;
    DenseMatrix r(m.dim(), m.dim());
    for (int i = 0; i < r.rows(); ++i)
      for (int j = 0; j < r.cols(); ++j) r(i, j) = cplx(g(gen), g(gen));
    const Eigen::VectorXcd lhs = L * vec(r);
    CHECK((lhs - vec(liouvillian_apply(m.H, m.jumps, r))).cwiseAbs().maxCoeff() <= 1e-12);
  }
  const Eigen::ComplexEigenSolver<DenseMatrix> es{DenseMatrix(L)};
  const auto& ev = es.eigenvalues();
  CHECK(ev.cwiseAbs().minCoeff() <= 1e-10);
  CHECK(ev.real().maxCoeff() <= 1e-10);

  CHECK_THROWS_AS(vectorized_liouvillian(m.H, m.jumps, m.dim() - 1), ResourceLimit);
}

TEST_CASE("Z2 symmetry for an antisymmetric pump geometry", "[model]") {
  auto check = [](const ModelParams& p) {
    const auto m = make_model(p);
    const auto S = symmetry_operator(m);
    CHECK((S.adjoint() * m.H * S - m.H).max_abs() <= 1e-12);
    for (const auto& j : m.jumps) CHECK((S.adjoint() * j * S + j).max_abs() <= 1e-12);
  };
  auto p = single(2.0, 5, 6);
  p.modes[0].n = 18;
  check(p);
  p = single(2.0, 5, 6);
  p.trap = geometry::TrapGeometry::box(0.25, 1.0 / 19.0);
  check(p);
  p.n_particles = 2;
  p.n_modes_trap = 4;
  check(p);
}

TEST_CASE("parameter validation", "[model]") {
  auto p = single(1.0);
  p.modes.push_back(p.modes[0]);
  CHECK_THROWS_AS(make_model(p), std::invalid_argument);
  p = single(1.0);
  p.n_modes_trap = 1;
  CHECK_THROWS_AS(make_model(p), std::invalid_argument);
  p = single(0.0);
  p.modes[0].fock_cutoff = 1;
  CHECK_THROWS_AS(make_model(p), std::invalid_argument);
  p = single(0.0);
  p.modes[0].kappa = 0.0;
  CHECK_THROWS_AS(make_model(p), std::invalid_argument);

  auto missing = geometry::compute_couplings(p.trap, {5}, 6, 0.125);
  CHECK_THROWS_AS(make_model(single(1.0), missing), std::invalid_argument);
}

TEST_CASE("reachable-mode reduction keeps the parity class", "[model]") {
  const auto p = single(1.5, 4, 16);
  const auto m = make_model(p, BasisOptions{true, 1e-10, 6, {}});
  CHECK(m.coupling.trap_indices == std::vector<int>{0, 2, 4, 6, 8, 10});
  CHECK(m.dim() == 24);
}
