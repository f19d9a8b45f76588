#pragma once

// Master-equation evolution, steady states and quantum-jump trajectories.

#include "selforder/errors.hpp"
#include "selforder/hilbert.hpp"
#include "selforder/model.hpp"
#include "selforder/ode.hpp"
#include "selforder/rng.hpp"

#include <Eigen/SparseLU>

#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace selforder::dynamics {

using hilbert::DensityMatrix;
using hilbert::StateVector;
using model::Model;

struct SolverOptions {
  double rtol = 1e-6;
  double atol = 1e-8;
  double max_step = std::numeric_limits<double>::infinity();
  double steady_tol = 1e-5;     ///< relative drift threshold over one window
  double steady_window = 5.0;   ///< window length (units 1/kappa)
  double steady_floor = 1e-6;   ///< drift is relative to max(|value|, floor)
  double t_max = 10000.0;       ///< give up integrating towards a steady state after this time
  double jump_tol = 1e-9;       ///< absolute time tolerance of the jump-time bisection
  std::uint64_t seed = 1;
  int n_trajectories = 100;
  int superop_max_dim = 160;    ///< largest Hilbert dimension for the direct solver

  ode::Tolerances tolerances() const { return {rtol, atol, max_step}; }

  void validate() const {
    if (!(rtol > 0 && atol > 0 && steady_tol > 0 && steady_window > 0 && jump_tol > 0 && t_max > 0 && max_step > 0))
      throw std::invalid_argument("solver tolerances must be > 0");
    if (n_trajectories < 1) throw std::invalid_argument("n_trajectories must be >= 1");
  }
};

/// tr(O rho) for a sparse O.
inline cplx trace_product(const SparseMatrix& op, const DenseMatrix& rho) {
  cplx acc = 0.0;
  for (int r = 0; r < op.outerSize(); ++r)
    for (SparseMatrix::InnerIterator it(op, r); it; ++it) acc += it.value() * rho(it.col(), it.row());
  return acc;
}

/// Right-hand side of the master equation for Hermitian rho:
///   -i (H_eff rho - rho H_eff^+) + sum J rho J^+
class LindbladRhs {
 public:
  explicit LindbladRhs(const Model& m) : m_(&m) {}

  void operator()(double, const DenseMatrix& rho, DenseMatrix& out) {
    k_.noalias() = m_->h_eff * rho;
    out = cplx(0.0, -1.0) * k_;
    out += cplx(0.0, 1.0) * k_.adjoint();
    if (m_->j.empty()) return;
    acc_.setZero(rho.rows(), rho.cols());
    for (const auto& j : m_->j) {
      k_.noalias() = j * rho;
      acc_.noalias() += j * k_.adjoint();
    }
    out += 0.5 * acc_;
    out += 0.5 * acc_.adjoint();
  }

 private:
  const Model* m_;
  DenseMatrix k_, acc_;
};

/// rho(t) at each requested time (times >= 0, nondecreasing), starting from
/// rho0 at t = 0.
inline std::vector<DensityMatrix> evolve_master(const DensityMatrix& rho0, const std::vector<double>& times,
                                                const Model& m, const SolverOptions& opts) {
  opts.validate();
  if (!(rho0.space() == m.space)) throw std::invalid_argument("initial state does not match the model space");
  if (!rho0.is_physical(1e-10, 1e-8)) throw std::invalid_argument("initial density matrix is not physical");
  ode::Dopri5<DenseMatrix> solver(LindbladRhs(m), opts.tolerances());
  solver.reset(0.0, rho0.matrix());
  std::vector<DensityMatrix> out;
  double last = 0.0;
  for (double t : times) {
    if (t < last) throw std::invalid_argument("sample times must be nondecreasing and >= 0");
    solver.advance_to(t);
    last = t;
    out.push_back(DensityMatrix(m.space, solver.y()).hermitized());
  }
  return out;
}

/// Observables watched for stationarity: <n_k>, Var(n_k) per cavity mode and
/// the trap-mode populations <c_i^+ c_i>.
class SteadyMonitor {
 public:
  explicit SteadyMonitor(const Model& m) {
    for (std::size_t k = 0; k < m.n_cavity_modes(); ++k) {
      const auto n = hilbert::embed(m.space, Model::mode_factor(k), hilbert::number(m.params.modes[k].fock_cutoff)).sparse();
      number_.push_back(n);
      number_sq_.push_back(SparseMatrix(n * n));
    }
    const auto sec = std::get<hilbert::ParticleSector>(m.space.factor(0));
    const hilbert::ParticleBasis basis(sec);
    for (int i = 0; i < sec.n_modes; ++i)
      population_.push_back(hilbert::embed(m.space, 0, hilbert::transition(basis, i, i)).sparse());
  }

  std::vector<double> operator()(const DenseMatrix& rho) const {
    std::vector<double> v;
    for (std::size_t k = 0; k < number_.size(); ++k) {
      const double n = trace_product(number_[k], rho).real();
      v.push_back(n);
      v.push_back(trace_product(number_sq_[k], rho).real() - n * n);
    }
    for (const auto& p : population_) v.push_back(trace_product(p, rho).real());
    return v;
  }

 private:
  std::vector<SparseMatrix> number_, number_sq_, population_;
};

struct SteadyReport {
  double elapsed = 0.0;     ///< integration time until convergence
  double drift = 0.0;       ///< relative drift over the final window
  std::string method;
};

struct SteadyResult {
  DensityMatrix rho;
  SteadyReport report;
};

inline SteadyResult steady_state_integrate(const Model& m, const SolverOptions& opts,
                                           std::optional<DensityMatrix> rho0 = std::nullopt) {
  opts.validate();
  const DensityMatrix start = rho0 ? *rho0 : DensityMatrix::from_pure(model::ground_vacuum(m));
  if (!(start.space() == m.space)) throw std::invalid_argument("initial state does not match the model space");
  if (!start.is_physical(1e-10, 1e-8)) throw std::invalid_argument("initial density matrix is not physical");
  const SteadyMonitor monitor(m);
  ode::Dopri5<DenseMatrix> solver(LindbladRhs(m), opts.tolerances());
  solver.reset(0.0, start.matrix());
  auto prev = monitor(start.matrix());
  double drift = std::numeric_limits<double>::infinity();
  double t = 0.0;
  while (t < opts.t_max) {
    t = std::min(t + opts.steady_window, opts.t_max);
    solver.advance_to(t);
    const auto now = monitor(solver.y());
    drift = 0.0;
    for (std::size_t k = 0; k < now.size(); ++k)
      drift = std::max(drift, std::abs(now[k] - prev[k]) / std::max(std::abs(now[k]), opts.steady_floor));
    prev = now;
    if (drift < opts.steady_tol) {
      return {DensityMatrix(m.space, solver.y()).hermitized(true), {t, drift, "integrate"}};
    }
  }
  throw ConvergenceFailure("no steady state within t_max = " + std::to_string(opts.t_max) +
                               " (last relative drift " + std::to_string(drift) + ")",
                           drift);
}

struct DirectResult {
  DensityMatrix rho;
  double residual = 0.0;     ///< max |L vec(rho)|
  bool degenerate = false;   ///< null space appears to have dimension > 1
  double ambiguity = 0.0;    ///< trace distance between solves pinned at different rows
};

namespace detail {

inline double trace_distance(const DenseMatrix& a, const DenseMatrix& b) {
  Eigen::SelfAdjointEigenSolver<DenseMatrix> es(0.5 * ((a - b) + (a - b).adjoint()), Eigen::EigenvaluesOnly);
  return 0.5 * es.eigenvalues().cwiseAbs().sum();
}

/// Solve L x = 0 with the equation of diagonal element `pin` replaced by tr(rho) = 1.
inline std::optional<DenseMatrix> pinned_solve(const Eigen::SparseMatrix<cplx>& L, int d, int pin) {
  using ColSparse = Eigen::SparseMatrix<cplx>;
  const int n = d * d;
  const int row = pin + pin * d;
  std::vector<Eigen::Triplet<cplx>> t;
  t.reserve(static_cast<std::size_t>(L.nonZeros() + d));
  for (int c = 0; c < L.outerSize(); ++c)
    for (ColSparse::InnerIterator it(L, c); it; ++it)
      if (it.row() != row) t.emplace_back(static_cast<int>(it.row()), static_cast<int>(it.col()), it.value());
  for (int i = 0; i < d; ++i) t.emplace_back(row, i + i * d, 1.0);
  ColSparse M(n, n);
  M.setFromTriplets(t.begin(), t.end());
  M.makeCompressed();
  Eigen::SparseLU<ColSparse, Eigen::COLAMDOrdering<int>> lu;
  lu.compute(M);
  if (lu.info() != Eigen::Success) return std::nullopt;
  ComplexVector rhs = ComplexVector::Zero(n);
  rhs(row) = 1.0;
  ComplexVector x = lu.solve(rhs);
  if (lu.info() != Eigen::Success || !x.allFinite()) return std::nullopt;
  DenseMatrix rho = Eigen::Map<DenseMatrix>(x.data(), d, d);
  rho = 0.5 * (rho + rho.adjoint()).eval();
  rho /= rho.trace().real();
  return rho;
}

}  // namespace detail

/// Null vector of the vectorized Liouvillian, Hermitized and trace-normalized.
/// A degenerate null space is reported (not thrown); callers should then
/// integrate from a physical initial state instead.
inline DirectResult steady_state_direct(const Model& m, const SolverOptions& opts = {}) {
  const auto L = model::vectorized_liouvillian(m.H, m.jumps, opts.superop_max_dim);
  const int d = m.dim();
  auto first = detail::pinned_solve(L, d, 0);
  if (!first) throw NumericalFailure("direct steady-state solve failed (singular pinned Liouvillian)");
  DirectResult r{DensityMatrix(m.space, *first), 0.0, false, 0.0};
  ComplexVector v = Eigen::Map<const ComplexVector>(first->data(), static_cast<Eigen::Index>(d) * d);
  r.residual = (L * v).cwiseAbs().maxCoeff();
  if (d > 1) {
    auto second = detail::pinned_solve(L, d, d - 1);
    if (!second) {
      r.degenerate = true;
      r.ambiguity = std::numeric_limits<double>::infinity();
    } else {
      r.ambiguity = detail::trace_distance(*first, *second);
      r.degenerate = r.ambiguity > 1e-6;
    }
  }
  return r;
}

/// Sum of the two highest Fock-state populations of each cavity mode.
inline std::vector<double> fock_tail(const DensityMatrix& rho) {
  std::vector<double> tails;
  for (std::size_t f = 1; f < rho.space().size(); ++f) {
    const auto red = hilbert::partial_trace(rho, {static_cast<int>(f)});
    const auto c = red.dim();
    tails.push_back(red.matrix()(c - 1, c - 1).real() + (c > 1 ? red.matrix()(c - 2, c - 2).real() : 0.0));
  }
  return tails;
}

inline bool cutoff_adequate(const DensityMatrix& rho, double threshold = 1e-6) {
  for (double t : fock_tail(rho))
    if (t > threshold) return false;
  return true;
}

// --- quantum jump trajectories -------------------------------------------------

struct Jump {
  double time = 0.0;
  int channel = 0;
  bool operator==(const Jump&) const = default;
};

/// Maps (t, normalized psi) to the recorded observable values.
using Observer = std::function<std::vector<double>(double, const StateVector&)>;

struct TrajectoryRecord {
  std::vector<double> times;
  std::vector<std::vector<double>> observables;  ///< [sample][observable]
  std::vector<Jump> jumps;
  std::vector<StateVector> states;               ///< only when requested
  StateVector final_state;
  std::uint64_t seed = 0;
  std::uint64_t trajectory = 0;
};

/// One quantum-jump unfolding. The unnormalized state follows
/// d psi/dt = -i H_eff psi until |psi|^2 drops to a uniform threshold r; the
/// crossing time is bisected on the continuous extension to `jump_tol`, a
/// channel is drawn with weights |J_n psi|^2, and a fresh r is drawn.
inline TrajectoryRecord mcwf_trajectory(const StateVector& psi0, const std::vector<double>& sample_times,
                                        const Model& m, const SolverOptions& opts, std::uint64_t seed,
                                        std::uint64_t trajectory = 0, const Observer& observer = {},
                                        bool keep_states = false) {
  opts.validate();
  if (!(psi0.space() == m.space)) throw std::invalid_argument("initial state does not match the model space");
  if (std::abs(psi0.norm() - 1.0) > 1e-9) throw std::invalid_argument("initial state must be normalized");
  rng::CounterRng rng(seed, trajectory);
  TrajectoryRecord rec;
  rec.seed = seed;
  rec.trajectory = trajectory;

  const SparseMatrix& h_eff = m.h_eff;
  auto rhs = [&h_eff](double, const ComplexVector& y, ComplexVector& dy) { dy.noalias() = cplx(0.0, -1.0) * (h_eff * y); };
  ode::Dopri5<ComplexVector> solver(rhs, opts.tolerances());
  solver.reset(0.0, psi0.amplitudes());
  double threshold = rng.uniform();

  auto record = [&](double t, const ComplexVector& y) {
    const StateVector s(m.space, y / y.norm());
    rec.times.push_back(t);
    if (observer) rec.observables.push_back(observer(t, s));
    if (keep_states) rec.states.push_back(s);
  };

  double last = 0.0;
  for (double target : sample_times) {
    if (target < last) throw std::invalid_argument("sample times must be nondecreasing and >= 0");
    last = target;
    while (solver.t() < target) {
      solver.step(target);
      const double norm2 = solver.y().squaredNorm();
      if (!std::isfinite(norm2))
        throw NumericalFailure("trajectory " + std::to_string(trajectory) + ": non-finite state at t = " +
                               std::to_string(solver.t()));
      if (norm2 > threshold) continue;
      // locate the crossing inside the last step
      double lo = solver.t_prev(), hi = solver.t();
      while (hi - lo > opts.jump_tol) {
        const double mid = 0.5 * (lo + hi);
        if (solver.dense(mid).squaredNorm() > threshold)
          lo = mid;
        else
          hi = mid;
      }
      const double tj = hi;
      const ComplexVector y = solver.dense(tj);
      std::vector<double> w;
      double total = 0.0;
      for (const auto& j : m.j) {
        w.push_back((j * y).squaredNorm());
        total += w.back();
      }
      if (!(total > 0.0))
        throw NumericalFailure("trajectory " + std::to_string(trajectory) + ": norm decayed with no jump rate at t = " +
                               std::to_string(tj));
      double u = rng.uniform() * total;
      int channel = 0;
      while (channel + 1 < static_cast<int>(w.size()) && u > w[static_cast<std::size_t>(channel)]) {
        u -= w[static_cast<std::size_t>(channel)];
        ++channel;
      }
      ComplexVector after = m.j[static_cast<std::size_t>(channel)] * y;
      after /= after.norm();
      rec.jumps.push_back({tj, channel});
      threshold = rng.uniform();
      solver.reset(tj, after);
    }
    record(target, solver.y());
  }
  rec.final_state = StateVector(m.space, solver.y() / solver.y().norm());
  return rec;
}

struct EnsembleResult {
  std::vector<double> times;
  Eigen::MatrixXd mean;  ///< [sample, observable]
  Eigen::MatrixXd se;    ///< standard error: sample std / sqrt(M)
  int n_trajectories = 0;
  std::vector<Jump> jumps_first;  ///< jump record of trajectory 0
};

struct EnsembleOptions {
  int workers = 1;
  int keep_states_for = 0;  ///< trajectories 0 .. keep_states_for-1 keep their sampled states
  /// Called once per trajectory, in index order, from whichever thread folds it.
  std::function<void(const TrajectoryRecord&)> on_record;
};

/// Independent trajectories keyed by (seed, index), run on a worker pool.
/// Results are folded in index order as soon as they form a contiguous
/// prefix (Welford update), so the output does not depend on scheduling.
inline EnsembleResult mcwf_ensemble(const StateVector& psi0, const std::vector<double>& sample_times, const Model& m,
                                    const SolverOptions& opts, const Observer& observer,
                                    const EnsembleOptions& eopts = {}) {
  opts.validate();
  const int M = opts.n_trajectories;
  EnsembleResult out;
  out.n_trajectories = M;
  Eigen::MatrixXd m2;
  int folded = 0;
  std::map<int, TrajectoryRecord> pending;
  std::exception_ptr first_error;
  int error_index = -1;
  std::mutex mu;

  auto fold = [&](TrajectoryRecord&& r) {
    if (folded == 0) {
      out.times = r.times;
      const auto ns = static_cast<Eigen::Index>(r.times.size());
      const auto no = static_cast<Eigen::Index>(r.observables.empty() ? 0 : r.observables.front().size());
      out.mean = Eigen::MatrixXd::Zero(ns, no);
      m2 = Eigen::MatrixXd::Zero(ns, no);
      out.jumps_first = r.jumps;
    }
    ++folded;
    for (Eigen::Index s = 0; s < out.mean.rows(); ++s)
      for (Eigen::Index o = 0; o < out.mean.cols(); ++o) {
        const double x = r.observables[static_cast<std::size_t>(s)][static_cast<std::size_t>(o)];
        const double d = x - out.mean(s, o);
        out.mean(s, o) += d / folded;
        m2(s, o) += d * (x - out.mean(s, o));
      }
    if (eopts.on_record) eopts.on_record(r);
  };

  std::atomic<int> next{0};
  auto work = [&]() {
    for (int k = next++; k < M; k = next++) {
      TrajectoryRecord rec;
      try {
        rec = mcwf_trajectory(psi0, sample_times, m, opts, opts.seed, static_cast<std::uint64_t>(k), observer,
                              k < eopts.keep_states_for);
      } catch (...) {
        std::lock_guard<std::mutex> lock(mu);
        if (!first_error || k < error_index) {
          first_error = std::current_exception();
          error_index = k;
        }
        next = M;
        return;
      }
      std::lock_guard<std::mutex> lock(mu);
      pending.emplace(k, std::move(rec));
      while (!pending.empty() && pending.begin()->first == folded) {
        auto node = pending.extract(pending.begin());
        fold(std::move(node.mapped()));
      }
    }
  };
  const int nw = std::max(1, std::min(eopts.workers, M));
  if (nw == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < nw; ++w) pool.emplace_back(work);
    for (auto& th : pool) th.join();
  }
  if (first_error) {
    std::string what = "unknown error";
    try {
      std::rethrow_exception(first_error);
    } catch (const std::exception& e) {
      what = e.what();
    } catch (...) {
    }
    throw NumericalFailure("trajectory " + std::to_string(error_index) + " (seed " + std::to_string(opts.seed) +
                           ") failed: " + what);
  }
  out.se = Eigen::MatrixXd::Zero(out.mean.rows(), out.mean.cols());
  if (M > 1) out.se = (m2 / (static_cast<double>(M) - 1.0) / M).cwiseSqrt();
  return out;
}

}  // namespace selforder::dynamics
