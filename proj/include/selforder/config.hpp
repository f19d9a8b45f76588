#pragma once

// Run configuration: a JSON document (// and /* */ comments allowed) with the
// sections model, solver, run, observables, scan. Every key is optional;
// unknown keys are rejected. Rates are in units of kappa, lengths in units of
// the cavity half-length.

#include "selforder/dynamics.hpp"
#include "selforder/errors.hpp"
#include "selforder/model.hpp"

#include <json.hpp>

#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace selforder::config {

using json = nlohmann::json;

enum class SteadyMethod { Auto, Direct, Integrate };

struct ScanAxis {
  std::string path;  ///< dotted parameter path, e.g. model.modes.0.eta
  double min = 0.0, max = 0.0;
  int points = 2;

  double value(int k) const { return points == 1 ? min : min + (max - min) * k / (points - 1); }
};

struct RunSettings {
  double t_end = 20.0;
  int samples = 201;
  std::string initial = "ground_vacuum";  ///< ground_vacuum | fock:<k> | coherent:<re>,<im>
  int record_trajectories = 1;            ///< mcwf: trajectories written in full
};

struct ObservableSettings {
  bool qfunction = true;
  int q_points = 101;
  double q_alpha_max = 0.0;     ///< 0: automatic
  int density_points = 401;
  int pair_points = 101;
  bool mixture_fidelity = true;
  bool ansatz = true;           ///< mcwf: overlap with the cat ansatz along recorded trajectories
  bool ansatz_refine = false;
  int ansatz_q_points = 41;
  int snapshots = 5;            ///< mcwf: density snapshots per recorded trajectory
  bool cutoff_twin = false;     ///< steady: rerun with cutoff - 4 and compare <n>
};

struct RunConfig {
  model::ModelParams model;
  bool reduce_to_reachable = true;
  int max_trap_modes = 0;
  dynamics::SolverOptions solver;
  SteadyMethod steady_method = SteadyMethod::Auto;
  bool cross_check = true;      ///< run both steady solvers when the direct one fits
  double cross_check_tol = 1e-3;
  bool auto_cutoff = true;
  int max_fock_cutoff = 40;
  RunSettings run;
  ObservableSettings observables;
  std::vector<ScanAxis> scan;
  std::string scan_mode = "steady";  ///< steady | mcwf
  std::string output = "out";
  int workers = 1;
};

namespace detail {

inline void check_keys(const json& j, const std::string& where, const std::set<std::string>& allowed) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.count(it.key())) throw ConfigError("unknown key '" + it.key() + "' in " + where);
}

template <class T>
void get(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("bad value for " + where + "." + key);
  }
}

inline const char* to_string(SteadyMethod m) {
  switch (m) {
    case SteadyMethod::Direct: return "direct";
    case SteadyMethod::Integrate: return "integrate";
    default: return "auto";
  }
}

inline SteadyMethod steady_method_from(const std::string& s) {
  if (s == "auto") return SteadyMethod::Auto;
  if (s == "direct") return SteadyMethod::Direct;
  if (s == "integrate") return SteadyMethod::Integrate;
  throw ConfigError("solver.steady_method must be auto, direct or integrate");
}

}  // namespace detail

inline RunConfig from_json(const json& doc) {
  using detail::get;
  RunConfig c;
  detail::check_keys(doc, "config", {"model", "solver", "run", "observables", "scan", "output", "workers"});
  if (doc.contains("model")) {
    const auto& m = doc["model"];
    detail::check_keys(m, "model", {"modes", "trap", "n_particles", "n_modes_trap", "omega_rec", "reduce_to_reachable",
                                    "max_trap_modes"});
    if (m.contains("modes")) {
      if (!m["modes"].is_array() || m["modes"].empty()) throw ConfigError("model.modes must be a non-empty array");
      c.model.modes.clear();
      for (const auto& jm : m["modes"]) {
        detail::check_keys(jm, "model.modes[]", {"n", "kappa", "delta_c", "u0", "eta", "fock_cutoff"});
        model::ModeParams mp;
        get(jm, "n", mp.n, "mode");
        get(jm, "kappa", mp.kappa, "mode");
        get(jm, "delta_c", mp.delta_c, "mode");
        get(jm, "u0", mp.u0, "mode");
        get(jm, "eta", mp.eta, "mode");
        get(jm, "fock_cutoff", mp.fock_cutoff, "mode");
        c.model.modes.push_back(mp);
      }
    }
    if (m.contains("trap")) {
      const auto& t = m["trap"];
      detail::check_keys(t, "model.trap", {"kind", "half_width", "omega_t", "osc_length", "center"});
      std::string kind = "box";
      get(t, "kind", kind, "model.trap");
      auto& tr = c.model.trap;
      if (kind == "box")
        tr.kind = geometry::TrapKind::Box;
      else if (kind == "harmonic")
        tr.kind = geometry::TrapKind::Harmonic;
      else
        throw ConfigError("model.trap.kind must be box or harmonic");
      get(t, "half_width", tr.half_width, "model.trap");
      get(t, "omega_t", tr.omega_t, "model.trap");
      get(t, "osc_length", tr.osc_length, "model.trap");
      get(t, "center", tr.center, "model.trap");
    }
    get(m, "n_particles", c.model.n_particles, "model");
    get(m, "n_modes_trap", c.model.n_modes_trap, "model");
    get(m, "omega_rec", c.model.omega_rec, "model");
    get(m, "reduce_to_reachable", c.reduce_to_reachable, "model");
    get(m, "max_trap_modes", c.max_trap_modes, "model");
  }
  if (doc.contains("solver")) {
    const auto& s = doc["solver"];
    detail::check_keys(s, "solver", {"rtol", "atol", "max_step", "steady_tol", "steady_window", "steady_floor", "t_max",
                                     "jump_tol", "seed", "n_trajectories", "superop_max_dim", "steady_method",
                                     "cross_check", "cross_check_tol", "auto_cutoff", "max_fock_cutoff"});
    auto& o = c.solver;
    get(s, "rtol", o.rtol, "solver");
    get(s, "atol", o.atol, "solver");
    get(s, "max_step", o.max_step, "solver");
    get(s, "steady_tol", o.steady_tol, "solver");
    get(s, "steady_window", o.steady_window, "solver");
    get(s, "steady_floor", o.steady_floor, "solver");
    get(s, "t_max", o.t_max, "solver");
    get(s, "jump_tol", o.jump_tol, "solver");
    get(s, "seed", o.seed, "solver");
    get(s, "n_trajectories", o.n_trajectories, "solver");
    get(s, "superop_max_dim", o.superop_max_dim, "solver");
    std::string method = "auto";
    get(s, "steady_method", method, "solver");
    c.steady_method = detail::steady_method_from(method);
    get(s, "cross_check", c.cross_check, "solver");
    get(s, "cross_check_tol", c.cross_check_tol, "solver");
    get(s, "auto_cutoff", c.auto_cutoff, "solver");
    get(s, "max_fock_cutoff", c.max_fock_cutoff, "solver");
  }
  if (doc.contains("run")) {
    const auto& r = doc["run"];
    detail::check_keys(r, "run", {"t_end", "samples", "initial", "record_trajectories"});
    get(r, "t_end", c.run.t_end, "run");
    get(r, "samples", c.run.samples, "run");
    get(r, "initial", c.run.initial, "run");
    get(r, "record_trajectories", c.run.record_trajectories, "run");
  }
  if (doc.contains("observables")) {
    const auto& o = doc["observables"];
    detail::check_keys(o, "observables", {"qfunction", "q_points", "q_alpha_max", "density_points", "pair_points",
                                          "mixture_fidelity", "ansatz", "ansatz_refine", "ansatz_q_points", "snapshots",
                                          "cutoff_twin"});
    auto& ob = c.observables;
    get(o, "qfunction", ob.qfunction, "observables");
    get(o, "q_points", ob.q_points, "observables");
    get(o, "q_alpha_max", ob.q_alpha_max, "observables");
    get(o, "density_points", ob.density_points, "observables");
    get(o, "pair_points", ob.pair_points, "observables");
    get(o, "mixture_fidelity", ob.mixture_fidelity, "observables");
    get(o, "ansatz", ob.ansatz, "observables");
    get(o, "ansatz_refine", ob.ansatz_refine, "observables");
    get(o, "ansatz_q_points", ob.ansatz_q_points, "observables");
    get(o, "snapshots", ob.snapshots, "observables");
    get(o, "cutoff_twin", ob.cutoff_twin, "observables");
  }
  if (doc.contains("scan")) {
    const auto& s = doc["scan"];
    detail::check_keys(s, "scan", {"axes", "mode"});
    get(s, "mode", c.scan_mode, "scan");
    if (s.contains("axes")) {
      if (!s["axes"].is_array()) throw ConfigError("scan.axes must be an array");
      for (const auto& a : s["axes"]) {
        detail::check_keys(a, "scan.axes[]", {"path", "min", "max", "points"});
        ScanAxis ax;
        get(a, "path", ax.path, "scan.axes[]");
        get(a, "min", ax.min, "scan.axes[]");
        get(a, "max", ax.max, "scan.axes[]");
        get(a, "points", ax.points, "scan.axes[]");
        c.scan.push_back(ax);
      }
    }
  }
  get(doc, "output", c.output, "config");
  get(doc, "workers", c.workers, "config");
  return c;
}

/// Fully resolved configuration (every field, defaults included). The output
/// directory is deliberately left out so bundles do not depend on where they
/// were written.
inline json to_json(const RunConfig& c) {
  json j;
  auto& m = j["model"];
  m["modes"] = json::array();
  for (const auto& mp : c.model.modes)
    m["modes"].push_back({{"n", mp.n}, {"kappa", mp.kappa}, {"delta_c", mp.delta_c}, {"u0", mp.u0}, {"eta", mp.eta},
                          {"fock_cutoff", mp.fock_cutoff}});
  const auto& t = c.model.trap;
  m["trap"] = {{"kind", t.kind == geometry::TrapKind::Box ? "box" : "harmonic"},
               {"half_width", t.half_width},
               {"omega_t", t.omega_t},
               {"osc_length", t.osc_length},
               {"center", t.center}};
  m["n_particles"] = c.model.n_particles;
  m["n_modes_trap"] = c.model.n_modes_trap;
  m["omega_rec"] = c.model.omega_rec;
  m["reduce_to_reachable"] = c.reduce_to_reachable;
  m["max_trap_modes"] = c.max_trap_modes;
  const auto& o = c.solver;
  j["solver"] = {{"rtol", o.rtol},
                 {"atol", o.atol},
                 {"steady_tol", o.steady_tol},
                 {"steady_window", o.steady_window},
                 {"steady_floor", o.steady_floor},
                 {"t_max", o.t_max},
                 {"jump_tol", o.jump_tol},
                 {"seed", o.seed},
                 {"n_trajectories", o.n_trajectories},
                 {"superop_max_dim", o.superop_max_dim},
                 {"steady_method", detail::to_string(c.steady_method)},
                 {"cross_check", c.cross_check},
                 {"cross_check_tol", c.cross_check_tol},
                 {"auto_cutoff", c.auto_cutoff},
                 {"max_fock_cutoff", c.max_fock_cutoff}};
  if (std::isfinite(o.max_step)) j["solver"]["max_step"] = o.max_step;
  j["run"] = {{"t_end", c.run.t_end},
              {"samples", c.run.samples},
              {"initial", c.run.initial},
              {"record_trajectories", c.run.record_trajectories}};
  const auto& ob = c.observables;
  j["observables"] = {{"qfunction", ob.qfunction},         {"q_points", ob.q_points},
                      {"q_alpha_max", ob.q_alpha_max},     {"density_points", ob.density_points},
                      {"pair_points", ob.pair_points},     {"mixture_fidelity", ob.mixture_fidelity},
                      {"ansatz", ob.ansatz},               {"ansatz_refine", ob.ansatz_refine},
                      {"ansatz_q_points", ob.ansatz_q_points}, {"snapshots", ob.snapshots},
                      {"cutoff_twin", ob.cutoff_twin}};
  j["scan"]["mode"] = c.scan_mode;
  j["scan"]["axes"] = json::array();
  for (const auto& a : c.scan)
    j["scan"]["axes"].push_back({{"path", a.path}, {"min", a.min}, {"max", a.max}, {"points", a.points}});
  j["workers"] = c.workers;
  return j;
}

/// Dotted path (model.modes.0.eta) to a JSON pointer.
inline json::json_pointer pointer_of(const std::string& dotted) {
  std::string p;
  std::stringstream ss(dotted);
  std::string part;
  while (std::getline(ss, part, '.')) {
    if (part.empty()) throw ConfigError("malformed parameter path '" + dotted + "'");
    p += "/" + part;
  }
  return json::json_pointer(p);
}

inline void validate(const RunConfig& c) {
  try {
    c.model.validate();
    c.solver.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (c.workers < 1) throw ConfigError("workers must be >= 1");
  if (c.run.samples < 2) throw ConfigError("run.samples must be >= 2");
  if (!(c.run.t_end > 0.0)) throw ConfigError("run.t_end must be > 0");
  if (c.run.record_trajectories < 0) throw ConfigError("run.record_trajectories must be >= 0");
  if (c.observables.q_points < 3 || c.observables.ansatz_q_points < 3) throw ConfigError("Q grids need >= 3 points");
  if (c.observables.density_points < 2 || c.observables.pair_points < 2) throw ConfigError("density grids need >= 2 points");
  if (c.max_fock_cutoff < 2) throw ConfigError("solver.max_fock_cutoff must be >= 2");
  if (c.scan.size() > 2) throw ConfigError("at most two scan axes");
  if (c.scan_mode != "steady" && c.scan_mode != "mcwf") throw ConfigError("scan.mode must be steady or mcwf");
  const json resolved = to_json(c);
  for (const auto& a : c.scan) {
    if (a.points < 1) throw ConfigError("scan axis '" + a.path + "' needs points >= 1");
    if (a.points == 1 && a.min != a.max) throw ConfigError("single-point scan axis '" + a.path + "' needs min == max");
    const auto ptr = pointer_of(a.path);
    if (!resolved.contains(ptr) || !resolved.at(ptr).is_number())
      throw ConfigError("scan axis '" + a.path + "' does not name a numeric parameter");
  }
}

/// Copy of `c` with the parameter at `path` set to `value`.
inline RunConfig with_parameter(const RunConfig& c, const std::string& path, double value) {
  json j = to_json(c);
  const auto ptr = pointer_of(path);
  if (!j.contains(ptr)) throw ConfigError("unknown parameter path '" + path + "'");
  if (j.at(ptr).is_number_integer() || j.at(ptr).is_number_unsigned()) {
    if (value != std::floor(value)) throw ConfigError("parameter '" + path + "' is an integer");
    j[ptr] = static_cast<long long>(value);
  } else {
    j[ptr] = value;
  }
  RunConfig out = from_json(j);
  out.output = c.output;
  return out;
}

inline json parse_text(const std::string& text, const std::string& origin) {
  try {
    return json::parse(text, nullptr, true, true);
  } catch (const json::parse_error& e) {
    throw ConfigError(origin + ": " + e.what());
  }
}

/// Load a config file. A bundle's metadata.json is accepted too: its
/// "config" member is used.
inline RunConfig load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  json doc = parse_text(ss.str(), path);
  if (doc.is_object() && doc.contains("config") && doc.contains("format")) doc = doc["config"];
  RunConfig c = from_json(doc);
  validate(c);
  return c;
}

}  // namespace selforder::config
