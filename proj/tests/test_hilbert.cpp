#include <catch_amalgamated.hpp>

#include "selforder/hilbert.hpp"

#include <random>

using namespace selforder;
using namespace selforder::hilbert;

namespace {

DenseMatrix random_density(int d, std::uint32_t seed) {
  std::mt19937 gen(seed);
  std::normal_distribution<double> g;
  DenseMatrix a(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) a(i, j) = cplx(g(gen), g(gen));
  DenseMatrix r = a * a.adjoint();
  return r / r.trace().real();
}

SpaceDescriptor fock(int c) { return SpaceDescriptor({FockSpace{c}}); }

}  // namespace

TEST_CASE("annihilation operator matrix elements", "[hilbert]") {
  const auto a = annihilation(4);
  CHECK(a.coeff(1, 2) == cplx(std::sqrt(2.0), 0.0));
  const ComplexVector vac = StateVector::basis(fock(4), {0}).amplitudes();
  CHECK(a.apply(vac).norm() == 0.0);
  const auto n = number(4).dense();
  for (int k = 0; k < 4; ++k) CHECK(n(k, k).real() == Catch::Approx(k).margin(1e-15));
  CHECK_THROWS_AS(annihilation(0), std::invalid_argument);
}

TEST_CASE("particle sector enumeration and transitions", "[hilbert]") {
  const ParticleSector sec{3, 2};
  CHECK(sec.dim() == 6);
  const ParticleBasis basis(sec);
  CHECK(basis.occupation(0) == std::vector<int>{2, 0, 0});
  CHECK(basis.occupation(basis.size() - 1) == std::vector<int>{0, 0, 2});
  for (int k = 0; k < basis.size(); ++k) CHECK(basis.index_of(basis.occupation(k)) == k);

  const auto t01 = transition(basis, 0, 1);
  CHECK(std::abs(t01.coeff(basis.index_of({2, 0, 0}), basis.index_of({1, 1, 0})) - std::sqrt(2.0)) < 1e-15);

  DenseMatrix total = DenseMatrix::Zero(basis.size(), basis.size());
  for (int i = 0; i < 3; ++i) total += transition(basis, i, i).dense();
  CHECK((total - 2.0 * DenseMatrix::Identity(basis.size(), basis.size())).cwiseAbs().maxCoeff() < 1e-15);

  const ParticleBasis single(ParticleSector{3, 1});
  const auto s01 = transition(single, 0, 1).dense();
  DenseMatrix expect01 = DenseMatrix::Zero(3, 3);
  expect01(0, 1) = 1.0;
  CHECK((s01 - expect01).cwiseAbs().maxCoeff() == 0.0);
  CHECK_THROWS_AS(transition(single, 0, 3), std::invalid_argument);
  CHECK(ParticleSector{12, 2}.dim() == 78);
}

TEST_CASE("tensor products", "[hilbert]") {
  const auto i2 = identity(fock(2)), i3 = identity(fock(3));
  const auto i6 = tensor({i2, i3});
  CHECK(i6.dim() == 6);
  CHECK((i6.dense() - DenseMatrix::Identity(6, 6)).cwiseAbs().maxCoeff() == 0.0);
  const auto A = tensor({annihilation(3), identity(fock(4))});
  const auto B = tensor({identity(fock(3)), annihilation(4)});
  CHECK((A * B - B * A).max_abs() == 0.0);
  const SpaceDescriptor sp({FockSpace{3}, FockSpace{4}});
  CHECK_THROWS_AS(tensor(sp, {annihilation(4), identity(fock(4))}), std::invalid_argument);
}

TEST_CASE("storage round trip is exact", "[hilbert]") {
  const auto a = tensor({annihilation(5), number(4)});
  const auto d = a.with_storage(Storage::Dense);
  const auto s = a.with_storage(Storage::Sparse);
  CHECK(d.storage() == Storage::Dense);
  CHECK(s.storage() == Storage::Sparse);
  CHECK((d.dense() - s.dense()).cwiseAbs().maxCoeff() == 0.0);
  CHECK((s.with_storage(Storage::Dense).dense() - a.dense()).cwiseAbs().maxCoeff() == 0.0);

  const int saved = dense_threshold();
  dense_threshold() = 4;
  CHECK(identity(fock(5)).storage() == Storage::Sparse);
  dense_threshold() = saved;
  CHECK(identity(fock(5)).storage() == Storage::Dense);
}

TEST_CASE("partial trace", "[hilbert]") {
  const SpaceDescriptor sa({FockSpace{3}}), sb({FockSpace{4}});
  const DenseMatrix ra = random_density(3, 1), rb = random_density(4, 2);
  DenseMatrix prod(12, 12);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) prod.block(4 * i, 4 * j, 4, 4) = ra(i, j) * rb;
  const DensityMatrix rho(SpaceDescriptor({FockSpace{3}, FockSpace{4}}), prod);
  CHECK((partial_trace(rho, {0}).matrix() - ra).cwiseAbs().maxCoeff() < 1e-14);
  CHECK((partial_trace(rho, {1}).matrix() - rb).cwiseAbs().maxCoeff() < 1e-14);
  CHECK_THROWS_AS(partial_trace(rho, {}), std::invalid_argument);

  // orthogonal branches: (|g>|1> + |e>|2>)/sqrt2 reduces to an even mixture on the field
  const SpaceDescriptor s2({FockSpace{2}, FockSpace{3}});
  ComplexVector v = ComplexVector::Zero(6);
  v(0 * 3 + 1) = 1.0 / std::sqrt(2.0);
  v(1 * 3 + 2) = 1.0 / std::sqrt(2.0);
  const auto field = partial_trace(StateVector(s2, v), {1});
  CHECK(std::abs(field.matrix()(1, 1) - 0.5) < 1e-15);
  CHECK(std::abs(field.matrix()(2, 2) - 0.5) < 1e-15);
  CHECK(std::abs(field.matrix()(1, 2)) < 1e-15);

  // composition: tracing B then C equals tracing B and C
  const SpaceDescriptor s3({FockSpace{2}, FockSpace{3}, FockSpace{2}});
  const DensityMatrix r3(s3, random_density(12, 3));
  const auto step = partial_trace(partial_trace(r3, {0, 2}), {0});
  const auto once = partial_trace(r3, {0});
  CHECK((step.matrix() - once.matrix()).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK(std::abs(partial_trace(r3, {1}).trace() - r3.trace()) < 1e-13);
}

TEST_CASE("expectation values", "[hilbert]") {
  const auto vac = StateVector::basis(fock(5), {0});
  CHECK(expect(number(5), vac) == cplx(0.0, 0.0));
  const DensityMatrix rho(fock(5), random_density(5, 4));
  CHECK(std::abs(expect(identity(fock(5)), rho) - rho.trace()) < 1e-14);
  const auto a = annihilation(5);
  const auto h = a + a.adjoint() + 0.3 * number(5);
  CHECK(h.hermiticity_error() <= 1e-12);
  CHECK(std::abs(expect(h, rho).imag()) <= 1e-10);
  CHECK(std::abs(expect(h.with_storage(Storage::Sparse), rho) - expect(h, rho)) < 1e-14);
  CHECK_THROWS_AS(expect(number(4), rho), std::invalid_argument);
}

TEST_CASE("density matrix physicality", "[hilbert]") {
  const DensityMatrix rho(fock(4), random_density(4, 5));
  CHECK(rho.is_physical());
  DenseMatrix skew = rho.matrix();
  skew(0, 1) += cplx(0.0, 1e-6);
  CHECK_FALSE(DensityMatrix(fock(4), skew).is_physical());
  CHECK(DensityMatrix(fock(4), skew).hermitized().hermiticity_error() < 1e-15);
}
