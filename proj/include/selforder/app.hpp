#pragma once

// Subcommands behind the selforder executable. Every command writes a bundle
// directory: CSV files plus metadata.json, which holds the resolved config and
// can itself be passed back as --config to reproduce the bundle.

#include "selforder/config.hpp"
#include "selforder/dynamics.hpp"
#include "selforder/geometry.hpp"
#include "selforder/io.hpp"
#include "selforder/model.hpp"
#include "selforder/observables.hpp"

#include <atomic>
#include <filesystem>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace selforder::app {

inline constexpr const char* kVersion = "1.0.0";
inline constexpr const char* kBundleFormat = "selforder-bundle-1";

namespace fs = std::filesystem;
using config::json;
using config::RunConfig;
using hilbert::DensityMatrix;
using hilbert::StateVector;

inline model::Model build_model(const RunConfig& c) {
  model::BasisOptions bo;
  bo.reduce_to_reachable = c.reduce_to_reachable;
  bo.max_modes = c.max_trap_modes;
  return model::make_model(c.model, bo);
}

/// ground_vacuum | fock:<k> | coherent:<re>,<im>; field states apply to every mode,
/// particles start in the trap ground state.
inline StateVector initial_state(const model::Model& m, const std::string& spec) {
  if (spec == "ground_vacuum") return model::ground_vacuum(m);
  const auto colon = spec.find(':');
  const std::string kind = spec.substr(0, colon);
  const std::string arg = colon == std::string::npos ? "" : spec.substr(colon + 1);
  std::vector<ComplexVector> fields;
  for (std::size_t k = 0; k < m.n_cavity_modes(); ++k) {
    const int cut = m.params.modes[k].fock_cutoff;
    if (kind == "fock") {
      int n = 0;
      try {
        n = std::stoi(arg);
      } catch (...) {
        throw ConfigError("bad initial state '" + spec + "'");
      }
      if (n < 0 || n >= cut) throw ConfigError("initial Fock state outside the cutoff");
      ComplexVector v = ComplexVector::Zero(cut);
      v(n) = 1.0;
      fields.push_back(v);
    } else if (kind == "coherent") {
      const auto comma = arg.find(',');
      try {
        const double re = std::stod(arg.substr(0, comma));
        const double im = comma == std::string::npos ? 0.0 : std::stod(arg.substr(comma + 1));
        fields.push_back(observables::coherent_state(cut, cplx(re, im)));
      } catch (...) {
        throw ConfigError("bad initial state '" + spec + "'");
      }
    } else {
      throw ConfigError("unknown initial state '" + spec + "'");
    }
  }
  ComplexVector field = observables::detail::field_product(fields);
  ComplexVector v = ComplexVector::Zero(m.dim());
  v.segment(0, field.size()) = field;  // particle basis state 0 = all particles in trap mode 0
  return StateVector(m.space, v);
}

inline std::vector<double> linspace(double lo, double hi, int n) {
  std::vector<double> v;
  for (int k = 0; k < n; ++k) v.push_back(n == 1 ? lo : lo + (hi - lo) * k / (n - 1));
  return v;
}

// --- steady states -------------------------------------------------------------------

struct SteadyOutcome {
  model::Model model;
  DensityMatrix rho;
  json report;
  bool cutoff_adequate = true;
};

/// Steady state of one fixed model, following the configured method. With
/// "auto" the direct solver runs when the dimension allows, and integration
/// runs as a cross-check (or as the fallback for degenerate null spaces).
inline std::pair<DensityMatrix, json> steady_core(const model::Model& m, const RunConfig& c) {
  json r;
  r["dim"] = m.dim();
  const bool direct_fits = m.dim() <= c.solver.superop_max_dim;
  std::optional<dynamics::DirectResult> d;
  if (c.steady_method == config::SteadyMethod::Direct || (c.steady_method == config::SteadyMethod::Auto && direct_fits)) {
    d = dynamics::steady_state_direct(m, c.solver);
    r["direct"] = {{"residual", d->residual}, {"degenerate", d->degenerate}, {"ambiguity", d->ambiguity}};
    if (d->residual > 1e-10) r["direct"]["rejected"] = "residual above 1e-10";
  }
  const bool direct_usable = d && !d->degenerate && d->residual <= 1e-10;
  std::optional<dynamics::SteadyResult> s;
  if (!direct_usable || (c.cross_check && c.steady_method == config::SteadyMethod::Auto)) {
    s = dynamics::steady_state_integrate(m, c.solver);
    r["integrate"] = {{"elapsed", s->report.elapsed}, {"drift", s->report.drift}};
  }
  if (direct_usable && s) {
    const double td = observables::trace_distance(d->rho, s->rho);
    r["cross_check_trace_distance"] = td;
    if (td > c.cross_check_tol)
      throw NumericalFailure("steady-state solvers disagree (trace distance " + std::to_string(td) +
                             "); check cutoffs and tolerances");
  }
  r["method"] = direct_usable ? "direct" : "integrate";
  return {direct_usable ? d->rho : s->rho, r};
}

/// Steady state with Fock-cutoff adequacy check and optional escalation
/// (+4 photons for every inadequate mode, up to max_fock_cutoff).
inline SteadyOutcome solve_steady(const RunConfig& c) {
  RunConfig cur = c;
  json history = json::array();
  for (;;) {
    model::Model m = build_model(cur);
    auto [rho, rep] = steady_core(m, cur);
    const auto tails = dynamics::fock_tail(rho);
    rep["cutoffs"] = json::array();
    for (const auto& mp : cur.model.modes) rep["cutoffs"].push_back(mp.fock_cutoff);
    rep["fock_tail"] = tails;
    history.push_back(rep);
    bool adequate = true, bumped = false;
    for (std::size_t k = 0; k < tails.size(); ++k) {
      if (tails[k] <= 1e-6) continue;
      adequate = false;
      auto& mp = cur.model.modes[k];
      if (c.auto_cutoff && mp.fock_cutoff + 4 <= c.max_fock_cutoff) {
        mp.fock_cutoff += 4;
        bumped = true;
      }
    }
    if (adequate || !bumped) {
      json report = rep;
      report["attempts"] = history;
      report["cutoff_adequate"] = adequate;
      return {std::move(m), std::move(rho), std::move(report), adequate};
    }
  }
}

// --- bundles -------------------------------------------------------------------------

inline json bundle_header(const std::string& command, const RunConfig& c) {
  json meta;
  meta["format"] = kBundleFormat;
  meta["version"] = kVersion;
  meta["command"] = command;
  meta["config"] = config::to_json(c);
  meta["seed"] = c.solver.seed;
  meta["workers"] = c.workers;
  return meta;
}

inline void finish_bundle(const fs::path& dir, const json& meta) { io::write_text(dir / "metadata.json", meta.dump(2) + "\n"); }

inline json q_summary(const DenseMatrix& mode_state, const observables::QGrid& g) {
  json maxima = json::array();
  for (const auto& p : observables::local_maxima(g)) maxima.push_back({p.alpha.real(), p.alpha.imag(), p.value});
  const double qmax = g.q.maxCoeff();
  return {{"maxima", maxima},
          {"integral", g.integral},
          {"boundary_ratio", g.boundary_ratio},
          {"grid_adequate", g.adequate()},
          {"origin_to_max", qmax > 0 ? observables::q_value(mode_state, 0.0) / qmax : 0.0}};
}

inline void write_qgrid(const fs::path& path, const observables::QGrid& g) {
  io::CsvWriter w(path, {"re", "im", "q"});
  for (Eigen::Index i = 0; i < g.q.rows(); ++i)
    for (Eigen::Index j = 0; j < g.q.cols(); ++j)
      w.row({g.re[static_cast<std::size_t>(i)], g.im[static_cast<std::size_t>(j)], g.q(i, j)});
}

inline void write_joint(const fs::path& path, const Eigen::MatrixXd& p) {
  io::CsvWriter w(path, {"n1", "n2", "p"});
  for (Eigen::Index a = 0; a < p.rows(); ++a)
    for (Eigen::Index b = 0; b < p.cols(); ++b) w.row({static_cast<long long>(a), static_cast<long long>(b), p(a, b)});
}

inline void write_matrix(const fs::path& path, const DenseMatrix& m) {
  io::CsvWriter w(path, {"i", "j", "re", "im"});
  for (Eigen::Index a = 0; a < m.rows(); ++a)
    for (Eigen::Index b = 0; b < m.cols(); ++b)
      w.row({static_cast<long long>(a), static_cast<long long>(b), m(a, b).real(), m(a, b).imag()});
}

/// Writes every requested steady-state observable into `dir` and returns their summary.
inline json steady_observables(const fs::path& dir, const model::Model& m, const DensityMatrix& rho, const RunConfig& c) {
  json res;
  const auto K = m.n_cavity_modes();
  const auto tails = dynamics::fock_tail(rho);
  {
    io::CsvWriter w(dir / "summary.csv", {"mode", "n", "var", "re_a", "im_a", "fock_tail"});
    for (std::size_t k = 0; k < K; ++k) {
      const auto fm = observables::field_moments(rho, k);
      w.row({static_cast<long long>(m.params.modes[k].n), fm.n, fm.var, fm.a.real(), fm.a.imag(), tails[k]});
      res["modes"].push_back({{"n_index", m.params.modes[k].n}, {"n", fm.n}, {"var", fm.var}, {"re_a", fm.a.real()},
                              {"im_a", fm.a.imag()}});
    }
  }
  if (c.observables.qfunction)
    for (std::size_t k = 0; k < K; ++k) {
      const auto r = observables::mode_state(rho, k).matrix();
      const auto g = observables::qfunction(r, {c.observables.q_alpha_max, c.observables.q_points});
      write_qgrid(dir / ("qfunction_mode" + std::to_string(k) + ".csv"), g);
      res["qfunction"].push_back(q_summary(r, g));
    }
  const auto ps = observables::reduced_particle_dm(rho);
  write_matrix(dir / "one_body.csv", ps.one_body);
  write_matrix(dir / "particle_dm.csv", ps.sector.matrix());
  res["trap_modes"] = m.coupling.trap_indices;
  {
    const auto xs = observables::density_grid(m.params.trap, m.coupling.trap_indices, c.observables.density_points);
    const auto d = observables::position_density(m.params.trap, m.coupling.trap_indices, ps.one_body, xs);
    io::CsvWriter w(dir / "density.csv", {"x", "rho"});
    for (std::size_t k = 0; k < xs.size(); ++k) w.row({xs[k], d[k]});
  }
  if (m.params.n_particles == 2) {
    const observables::PairDensity pd(m, rho);
    const auto xs = observables::density_grid(m.params.trap, m.coupling.trap_indices, c.observables.pair_points);
    const auto g = pd.grid(xs, xs);
    io::CsvWriter w(dir / "pair_density.csv", {"x1", "x2", "rho"});
    for (std::size_t a = 0; a < xs.size(); ++a)
      for (std::size_t b = 0; b < xs.size(); ++b)
        w.row({xs[a], xs[b], g(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b))});
    res["pair_density"] = {{"integral", pd.integral()}, {"diagonal_dominance", pd.diagonal_dominance()}};
  }
  if (K >= 2) {
    const auto p = observables::joint_photon_dist(rho, 0, 1);
    write_joint(dir / "joint_photon.csv", p);
    res["joint_photon_correlation"] = observables::photon_correlation(p);
  }
  if (c.observables.mixture_fidelity) {
    const auto mf = observables::mixture_fidelity(rho, {{c.observables.q_alpha_max, c.observables.q_points}});
    json alphas = json::array();
    for (auto a : mf.alphas) alphas.push_back({a.real(), a.imag()});
    res["mixture_fidelity"] = {{"fidelity", mf.fidelity}, {"alphas", alphas}, {"degenerate", mf.degenerate}};
  }
  return res;
}

inline json run_steady(const RunConfig& c, const fs::path& dir) {
  fs::create_directories(dir);
  json meta = bundle_header("steady", c);
  auto out = solve_steady(c);
  meta["solver_report"] = out.report;
  meta["results"] = steady_observables(dir, out.model, out.rho, c);
  if (c.observables.cutoff_twin) {
    RunConfig twin = c;
    twin.auto_cutoff = false;
    for (std::size_t k = 0; k < twin.model.modes.size(); ++k)
      twin.model.modes[k].fock_cutoff = std::max(2, out.model.params.modes[k].fock_cutoff - 4);
    const auto tm = build_model(twin);
    const auto [trho, trep] = steady_core(tm, twin);
    json tw = json::array();
    bool ok = true;
    for (std::size_t k = 0; k < twin.model.modes.size(); ++k) {
      const double n_full = observables::field_moments(out.rho, k).n;
      const double n_twin = observables::field_moments(trho, k).n;
      const double rel = std::abs(n_full - n_twin) / std::max(n_full, 1e-12);
      ok = ok && (rel < 0.01 || std::abs(n_full - n_twin) < 1e-10);
      tw.push_back({{"cutoff", twin.model.modes[k].fock_cutoff}, {"n", n_twin}, {"relative_change", rel}});
    }
    meta["cutoff_twin"] = {{"modes", tw}, {"flagged", !ok}};
  }
  finish_bundle(dir, meta);
  return meta;
}

// --- couplings -----------------------------------------------------------------------

inline json run_couplings(const RunConfig& c, const fs::path& dir) {
  fs::create_directories(dir);
  json meta = bundle_header("couplings", c);
  const auto& p = c.model;
  p.validate();
  const auto cm = geometry::compute_couplings(p.trap, p.mode_indices(), p.n_modes_trap, p.omega_rec);
  std::optional<geometry::IndexConvention> conv;
  const bool closed_applicable = p.trap.kind == geometry::TrapKind::Box && p.trap.center == 0.0;
  if (closed_applicable) {
    const auto v = geometry::validate_closed_form(p.trap.half_width, p.mode_indices(), p.n_modes_trap);
    conv = v.matched;
    meta["closed_form"] = {{"convention", v.matched ? geometry::to_string(*v.matched) : "none"},
                           {"deviation_as_printed", v.deviation_as_printed},
                           {"deviation_shifted", v.deviation_shifted},
                           {"tolerance", v.tolerance}};
  } else {
    meta["closed_form"] = {{"convention", "not applicable"}};
  }
  std::vector<std::string> header{"n", "i", "j", "A", "B"};
  if (conv) {
    header.push_back("A_closed");
    header.push_back("B_closed");
  }
  io::CsvWriter w(dir / "couplings.csv", header);
  json fractions = json::array();
  for (std::size_t s = 0; s < cm.modes.size(); ++s) {
    const int n = cm.modes[s];
    for (int i = 0; i < cm.n_modes_trap(); ++i)
      for (int j = 0; j < cm.n_modes_trap(); ++j) {
        std::vector<io::Cell> row{static_cast<long long>(n), static_cast<long long>(i), static_cast<long long>(j),
                                  cm.A[s](i, j), cm.B[s](i, j)};
        if (conv) {
          const auto [a, b] = geometry::coupling_closed_form_box(p.trap.half_width, n, i, j, *conv);
          row.push_back(a);
          row.push_back(b);
        }
        w.row(row);
      }
    fractions.push_back({{"n", n},
                         {"A_nonzero_fraction", geometry::nonzero_fraction(cm.A[s], 1e-6)},
                         {"B_nonzero_fraction", geometry::nonzero_fraction(cm.B[s], 1e-6)}});
  }
  io::CsvWriter e(dir / "energies.csv", {"i", "E"});
  for (int i = 0; i < cm.n_modes_trap(); ++i) e.row({static_cast<long long>(i), cm.E(i)});
  json reach = json::array();
  for (int i : geometry::reachable_modes(cm, 1e-10, 0)) reach.push_back(i);
  meta["results"] = {{"nonzero_fractions", fractions}, {"reachable_modes", reach}};
  finish_bundle(dir, meta);
  return meta;
}

// --- time evolution ------------------------------------------------------------------

inline json run_evolve(const RunConfig& c, const fs::path& dir) {
  fs::create_directories(dir);
  json meta = bundle_header("evolve", c);
  const auto m = build_model(c);
  const auto times = linspace(0.0, c.run.t_end, c.run.samples);
  const auto states = dynamics::evolve_master(DensityMatrix::from_pure(initial_state(m, c.run.initial)), times, m, c.solver);
  std::vector<std::string> header{"t", "trace"};
  for (std::size_t k = 0; k < m.n_cavity_modes(); ++k)
    for (const char* q : {"n", "var", "re_a", "im_a"}) header.push_back(std::string(q) + "_" + std::to_string(k));
  io::CsvWriter w(dir / "timeseries.csv", header);
  double drift = 0.0;
  for (std::size_t s = 0; s < times.size(); ++s) {
    std::vector<io::Cell> row{times[s], states[s].trace().real()};
    drift = std::max(drift, std::abs(states[s].trace() - 1.0));
    for (std::size_t k = 0; k < m.n_cavity_modes(); ++k) {
      const auto fm = observables::field_moments(states[s], k);
      row.insert(row.end(), {fm.n, fm.var, fm.a.real(), fm.a.imag()});
    }
    w.row(row);
  }
  meta["results"] = {{"dim", m.dim()}, {"trace_drift", drift}};
  finish_bundle(dir, meta);
  return meta;
}

// --- trajectories --------------------------------------------------------------------

/// Observer layout: <n_k> for every mode, then (with `distributions`) the
/// real and imaginary parts of every reduced mode density matrix and the
/// joint photon distribution of modes 0 and 1.
inline dynamics::Observer trajectory_observer(const model::Model& m, bool distributions) {
  return [&m, distributions](double, const StateVector& s) {
    std::vector<double> v;
    std::vector<DenseMatrix> red;
    for (std::size_t k = 0; k < m.n_cavity_modes(); ++k) {
      red.push_back(observables::mode_state(s, k).matrix());
      v.push_back(observables::moments_of_mode_state(red.back()).n);
    }
    if (!distributions) return v;
    for (const auto& r : red)
      for (Eigen::Index a = 0; a < r.rows(); ++a)
        for (Eigen::Index b = 0; b < r.cols(); ++b) {
          v.push_back(r(a, b).real());
          v.push_back(r(a, b).imag());
        }
    if (m.n_cavity_modes() >= 2) {
      const auto pair = hilbert::partial_trace(s, {1, 2});
      for (Eigen::Index a = 0; a < pair.matrix().rows(); ++a) v.push_back(pair.matrix()(a, a).real());
    }
    return v;
  };
}

struct StationaryDistributions {
  std::vector<DenseMatrix> mode_states;  ///< ensemble- and time-averaged reduced states
  Eigen::MatrixXd joint;                 ///< empty for a single mode
};

/// Averages the distribution block of the observer over samples with t >= t_from.
inline StationaryDistributions stationary_distributions(const model::Model& m, const dynamics::EnsembleResult& e,
                                                        double t_from) {
  StationaryDistributions out;
  Eigen::RowVectorXd avg = Eigen::RowVectorXd::Zero(e.mean.cols());
  int count = 0;
  for (std::size_t s = 0; s < e.times.size(); ++s)
    if (e.times[s] >= t_from) {
      avg += e.mean.row(static_cast<Eigen::Index>(s));
      ++count;
    }
  avg /= std::max(count, 1);
  Eigen::Index pos = static_cast<Eigen::Index>(m.n_cavity_modes());
  for (std::size_t k = 0; k < m.n_cavity_modes(); ++k) {
    const int c = m.params.modes[k].fock_cutoff;
    DenseMatrix r(c, c);
    for (int a = 0; a < c; ++a)
      for (int b = 0; b < c; ++b) {
        r(a, b) = cplx(avg(pos), avg(pos + 1));
        pos += 2;
      }
    out.mode_states.push_back(r);
  }
  if (m.n_cavity_modes() >= 2) {
    const int c0 = m.params.modes[0].fock_cutoff, c1 = m.params.modes[1].fock_cutoff;
    out.joint.resize(c0, c1);
    for (int a = 0; a < c0; ++a)
      for (int b = 0; b < c1; ++b) out.joint(a, b) = avg(pos++);
  }
  return out;
}

inline json run_mcwf(const RunConfig& c, const fs::path& dir) {
  fs::create_directories(dir);
  json meta = bundle_header("mcwf", c);
  const auto m = build_model(c);
  const auto K = m.n_cavity_modes();
  const auto times = linspace(0.0, c.run.t_end, c.run.samples);
  const auto psi0 = initial_state(m, c.run.initial);
  const int recorded = std::min(c.run.record_trajectories, c.solver.n_trajectories);

  std::vector<std::string> th{"trajectory", "t"};
  for (std::size_t k = 0; k < K; ++k) th.push_back("n_" + std::to_string(k));
  if (c.observables.ansatz) th.push_back("F");
  io::CsvWriter traj(dir / "trajectories.csv", th);
  io::CsvWriter jumps(dir / "jumps.csv", {"trajectory", "t", "channel"});
  io::CsvWriter snaps(dir / "snapshots.csv", {"trajectory", "t", "x", "rho"});
  const auto xs = observables::density_grid(m.params.trap, m.coupling.trap_indices, c.observables.density_points);
  std::vector<std::size_t> snap_at;
  for (int k = 0; k < c.observables.snapshots; ++k)
    snap_at.push_back(static_cast<std::size_t>(std::llround(
        (times.size() - 1) * (c.observables.snapshots == 1 ? 1.0 : static_cast<double>(k) / (c.observables.snapshots - 1)))));
  observables::AnsatzOptions aopts;
  aopts.grid = {0.0, c.observables.ansatz_q_points};
  aopts.refine = c.observables.ansatz_refine;
  json fsum = json::array();

  dynamics::EnsembleOptions eo;
  eo.workers = c.workers;
  eo.keep_states_for = recorded;
  eo.on_record = [&](const dynamics::TrajectoryRecord& r) {
    if (static_cast<int>(r.trajectory) >= recorded) return;
    const auto id = static_cast<long long>(r.trajectory);
    for (const auto& j : r.jumps) jumps.row({id, j.time, static_cast<long long>(j.channel)});
    double fmin = 1.0, fmean = 0.0;
    for (std::size_t s = 0; s < r.times.size(); ++s) {
      std::vector<io::Cell> row{id, r.times[s]};
      for (std::size_t k = 0; k < K; ++k) row.push_back(r.observables[s][k]);
      if (c.observables.ansatz) {
        const double f = observables::ansatz_overlap(r.states[s], aopts).fidelity;
        fmin = std::min(fmin, f);
        fmean += f / static_cast<double>(r.times.size());
        row.push_back(f);
      }
      traj.row(row);
    }
    for (std::size_t s : snap_at) {
      const auto g = observables::reduced_particle_dm(r.states[s]).one_body;
      const auto d = observables::position_density(m.params.trap, m.coupling.trap_indices, g, xs);
      for (std::size_t q = 0; q < xs.size(); ++q) snaps.row({id, r.times[s], xs[q], d[q]});
    }
    if (c.observables.ansatz) fsum.push_back({{"trajectory", id}, {"F_min", fmin}, {"F_mean", fmean}});
  };
  const auto e = dynamics::mcwf_ensemble(psi0, times, m, c.solver, trajectory_observer(m, true), eo);

  std::vector<std::string> eh{"t"};
  for (std::size_t k = 0; k < K; ++k) {
    eh.push_back("mean_n_" + std::to_string(k));
    eh.push_back("se_n_" + std::to_string(k));
  }
  io::CsvWriter ens(dir / "ensemble.csv", eh);
  for (std::size_t s = 0; s < times.size(); ++s) {
    std::vector<io::Cell> row{times[s]};
    for (std::size_t k = 0; k < K; ++k) {
      row.push_back(e.mean(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(k)));
      row.push_back(e.se(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(k)));
    }
    ens.row(row);
  }
  const auto st = stationary_distributions(m, e, 0.5 * c.run.t_end);
  json res;
  res["dim"] = m.dim();
  res["n_trajectories"] = e.n_trajectories;
  for (std::size_t k = 0; k < K; ++k) {
    const auto g = observables::qfunction(st.mode_states[k], {c.observables.q_alpha_max, c.observables.q_points});
    write_qgrid(dir / ("qfunction_mode" + std::to_string(k) + ".csv"), g);
    res["stationary_qfunction"].push_back(q_summary(st.mode_states[k], g));
  }
  if (K >= 2) {
    write_joint(dir / "joint_photon.csv", st.joint);
    res["joint_photon_correlation"] = observables::photon_correlation(st.joint);
  }
  if (c.observables.ansatz) res["ansatz"] = fsum;
  meta["results"] = res;
  finish_bundle(dir, meta);
  return meta;
}

// --- scans ---------------------------------------------------------------------------

struct ScanRow {
  std::vector<double> values;
  std::string status = "ok";
  std::string message;
};

inline ScanRow scan_point(const RunConfig& c) {
  ScanRow row;
  const auto K = c.model.modes.size();
  try {
    if (c.scan_mode == "steady") {
      const auto out = solve_steady(c);
      for (std::size_t k = 0; k < K; ++k) {
        const auto fm = observables::field_moments(out.rho, k);
        row.values.insert(row.values.end(), {fm.n, fm.var, std::abs(fm.a)});
      }
      if (!out.cutoff_adequate) row.status = "cutoff_inadequate";
    } else {
      const auto m = build_model(c);
      const auto times = linspace(0.0, c.run.t_end, c.run.samples);
      const auto e = dynamics::mcwf_ensemble(initial_state(m, c.run.initial), times, m, c.solver,
                                             trajectory_observer(m, false));
      // time average over the second half of the run; largest SE over those samples
      for (std::size_t k = 0; k < K; ++k) {
        double mean = 0.0, se = 0.0;
        int cnt = 0;
        for (std::size_t s = 0; s < times.size(); ++s)
          if (times[s] >= 0.5 * c.run.t_end) {
            mean += e.mean(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(k));
            se = std::max(se, e.se(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(k)));
            ++cnt;
          }
        row.values.insert(row.values.end(), {mean / cnt, se, std::nan("")});
      }
    }
  } catch (const std::exception& ex) {
    row.values.assign(3 * K, std::nan(""));
    row.status = "error";
    row.message = ex.what();
  }
  return row;
}

inline json run_scan(const RunConfig& c, const fs::path& dir) {
  fs::create_directories(dir);
  json meta = bundle_header("scan", c);
  if (c.scan.empty()) throw ConfigError("scan needs at least one axis in scan.axes");
  std::vector<std::vector<double>> points;
  const int n0 = c.scan[0].points, n1 = c.scan.size() > 1 ? c.scan[1].points : 1;
  for (int a = 0; a < n0; ++a)
    for (int b = 0; b < n1; ++b) {
      std::vector<double> p{c.scan[0].value(a)};
      if (c.scan.size() > 1) p.push_back(c.scan[1].value(b));
      points.push_back(p);
    }
  std::vector<ScanRow> rows(points.size());
  std::atomic<std::size_t> next{0};
  auto work = [&]() {
    for (std::size_t k = next++; k < points.size(); k = next++) {
      RunConfig pc = c;
      try {
        for (std::size_t ax = 0; ax < c.scan.size(); ++ax) pc = config::with_parameter(pc, c.scan[ax].path, points[k][ax]);
        config::validate(pc);
        pc.workers = 1;
        rows[k] = scan_point(pc);
      } catch (const std::exception& ex) {
        rows[k].values.assign(3 * c.model.modes.size(), std::nan(""));
        rows[k].status = "error";
        rows[k].message = ex.what();
      }
    }
  };
  const int nw = std::max(1, std::min<int>(c.workers, static_cast<int>(points.size())));
  if (nw == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < nw; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  std::vector<std::string> header;
  for (const auto& ax : c.scan) header.push_back(ax.path);
  const bool mc = c.scan_mode == "mcwf";
  for (std::size_t k = 0; k < c.model.modes.size(); ++k) {
    const auto s = std::to_string(k);
    header.push_back("n_" + s);
    header.push_back((mc ? "se_n_" : "var_") + s);
    header.push_back("abs_a_" + s);
  }
  header.push_back("status");
  header.push_back("message");
  io::CsvWriter w(dir / "scan.csv", header);
  int failures = 0;
  for (std::size_t k = 0; k < points.size(); ++k) {
    std::vector<io::Cell> row(points[k].begin(), points[k].end());
    row.insert(row.end(), rows[k].values.begin(), rows[k].values.end());
    row.push_back(rows[k].status);
    row.push_back(rows[k].message);
    failures += rows[k].status == "error";
    w.row(row);
  }
  meta["results"] = {{"points", points.size()}, {"failures", failures}};
  finish_bundle(dir, meta);
  return meta;
}

inline json run_command(const std::string& command, const RunConfig& c, const fs::path& dir) {
  if (command == "couplings") return run_couplings(c, dir);
  if (command == "steady") return run_steady(c, dir);
  if (command == "evolve") return run_evolve(c, dir);
  if (command == "mcwf") return run_mcwf(c, dir);
  if (command == "scan") return run_scan(c, dir);
  throw ConfigError("unknown command '" + command + "'");
}

/// Process exit code for an exception escaping a command.
inline int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const std::invalid_argument*>(&e)) return 2;
  if (dynamic_cast<const ConvergenceFailure*>(&e)) return 4;
  if (dynamic_cast<const NumericalFailure*>(&e) || dynamic_cast<const ResourceLimit*>(&e)) return 3;
  return 3;
}

}  // namespace selforder::app
