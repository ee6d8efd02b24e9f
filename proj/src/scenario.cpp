#include "sphs/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <future>
#include <numbers>
#include <set>
#include <sstream>

#include <json.hpp>

namespace sphs {
namespace {

using json = nlohmann::ordered_json;

[[noreturn]] void fail(const std::string& field, const std::string& what) {
  throw ConfigError(field + ": " + what);
}

void reject_unknown(const json& obj, const std::string& where,
                    std::initializer_list<std::string_view> allowed) {
  if (!obj.is_object()) fail(where, "expected an object");
  std::vector<std::string> unknown;
  for (const auto& [key, _] : obj.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      unknown.push_back(key);
    }
  }
  if (!unknown.empty()) {
    std::string msg = "unknown keys:";
    for (const auto& k : unknown) msg += " " + k;
    fail(where, msg);
  }
}

const json& require(const json& obj, const std::string& where,
                    const std::string& key) {
  if (!obj.contains(key)) fail(where + "." + key, "missing");
  return obj.at(key);
}

double number(const json& v, const std::string& field) {
  if (!v.is_number()) fail(field, "expected a number");
  return v.get<double>();
}

std::vector<double> number_list(const json& v, const std::string& field) {
  if (!v.is_array()) fail(field, "expected an array of numbers");
  std::vector<double> out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out.push_back(number(v[i], field + "[" + std::to_string(i) + "]"));
  }
  return out;
}

Vector vector_of(const json& v, const std::string& field) {
  const auto xs = number_list(v, field);
  return Eigen::Map<const Vector>(xs.data(), static_cast<Eigen::Index>(xs.size()));
}

Matrix matrix_of(const json& v, const std::string& field) {
  if (!v.is_array() || v.empty()) fail(field, "expected a non-empty array of rows");
  const std::size_t rows = v.size();
  std::size_t cols = 0;
  Matrix out;
  for (std::size_t i = 0; i < rows; ++i) {
    const auto row = number_list(v[i], field + "[" + std::to_string(i) + "]");
    if (i == 0) {
      cols = row.size();
      if (cols == 0) fail(field, "empty row");
      out.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    } else if (row.size() != cols) {
      fail(field, "ragged rows");
    }
    for (std::size_t j = 0; j < cols; ++j) {
      out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = row[j];
    }
  }
  return out;
}

json to_json(const Matrix& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

json to_json(const Vector& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

bool same(const Matrix& a, const Matrix& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         (a.size() == 0 || (a.array() == b.array()).all());
}

PlantSpec parse_plant(const json& p) {
  const std::string w = "plant";
  reject_unknown(p, w, {"n", "m", "Q", "R", "Jbar", "Bbar", "variant", "M", "tol_S"});
  PlantSpec out;
  out.n = static_cast<int>(number(require(p, w, "n"), "plant.n"));
  out.m = static_cast<int>(number(require(p, w, "m"), "plant.m"));
  if (out.n < 1) fail("plant.n", "must be >= 1");
  if (out.m < 1) fail("plant.m", "must be >= 1");
  out.q = matrix_of(require(p, w, "Q"), "plant.Q");
  out.r = matrix_of(require(p, w, "R"), "plant.R");
  out.bbar = matrix_of(require(p, w, "Bbar"), "plant.Bbar");
  if (out.q.rows() != out.n || out.q.cols() != out.n) fail("plant.Q", "must be n x n");
  if (out.r.rows() != out.n || out.r.cols() != out.n) fail("plant.R", "must be n x n");
  if (out.bbar.rows() != out.n || out.bbar.cols() != out.m) {
    fail("plant.Bbar", "must be n x m");
  }
  {
    Eigen::Index i = 0, j = 0;
    const double asym = (out.q - out.q.transpose()).cwiseAbs().maxCoeff(&i, &j);
    if (asym > 1e-12 * out.q.norm()) {
      fail("plant.Q", "not symmetric: Q[" + std::to_string(i) + "][" + std::to_string(j) +
                          "] = " + format_double(out.q(i, j)) + " but Q[" +
                          std::to_string(j) + "][" + std::to_string(i) +
                          "] = " + format_double(out.q(j, i)));
    }
    try {
      (void)QuadraticForm(out.q);
    } catch (const std::invalid_argument& e) {
      fail("plant.Q", e.what());
    }
  }
  if ((out.r - out.r.transpose()).norm() > 1e-12 * out.r.norm()) {
    fail("plant.R", "must be symmetric");
  }
  if (!(Eigen::SelfAdjointEigenSolver<Matrix>(out.r).eigenvalues().minCoeff() > 0.0)) {
    fail("plant.R", "must be positive definite");
  }
  const std::string variant = require(p, w, "variant").get<std::string>();
  const auto v = parse_variant(variant);
  if (!v) fail("plant.variant", "must be exact, saturated or linear, got " + variant);
  out.variant = *v;
  if (p.contains("M")) out.big_m = number(p.at("M"), "plant.M");
  if (out.variant != Variant::kExact && !(out.big_m > 0.0)) {
    fail("plant.M", "must be positive");
  }
  if (p.contains("tol_S")) out.tol_s = number(p.at("tol_S"), "plant.tol_S");

  const json& j = require(p, w, "Jbar");
  const std::string type = require(j, "plant.Jbar", "type").get<std::string>();
  if (type == "constant") {
    reject_unknown(j, "plant.Jbar", {"type", "matrix"});
    Matrix jm = matrix_of(require(j, "plant.Jbar", "matrix"), "plant.Jbar.matrix");
    if (jm.rows() != out.n || jm.cols() != out.n) fail("plant.Jbar.matrix", "must be n x n");
    if ((jm + jm.transpose()).norm() > 1e-12 * std::max(1.0, jm.norm())) {
      fail("plant.Jbar.matrix", "must be skew-symmetric");
    }
    out.jbar = JbarConstant{std::move(jm)};
  } else if (type == "rotation") {
    reject_unknown(j, "plant.Jbar", {"type", "omega0"});
    out.jbar = JbarRotation{number(require(j, "plant.Jbar", "omega0"), "plant.Jbar.omega0")};
  } else if (type == "phase_pi") {
    reject_unknown(j, "plant.Jbar", {"type", "omega0", "kp", "ki", "phi_ref"});
    PhasePIController c;
    c.omega0 = number(require(j, "plant.Jbar", "omega0"), "plant.Jbar.omega0");
    c.kp = number(require(j, "plant.Jbar", "kp"), "plant.Jbar.kp");
    c.ki = number(require(j, "plant.Jbar", "ki"), "plant.Jbar.ki");
    c.phi_ref = number(require(j, "plant.Jbar", "phi_ref"), "plant.Jbar.phi_ref");
    out.jbar = JbarPhasePI{c};
  } else {
    fail("plant.Jbar.type", "must be constant, rotation or phase_pi, got " + type);
  }
  return out;
}

LoadSpec parse_load(const json& l, int m) {
  const std::string w = "load";
  const std::string type = require(l, w, "type").get<std::string>();
  if (type == "static_gain") {
    reject_unknown(l, w, {"type", "K"});
    const double k = number(require(l, w, "K"), "load.K");
    if (!(k > 0.0)) fail("load.K", "must be positive");
    return LoadStaticGain{k};
  }
  if (type == "static_matrix") {
    reject_unknown(l, w, {"type", "K"});
    Matrix k = matrix_of(require(l, w, "K"), "load.K");
    if (k.rows() != m || k.cols() != m) fail("load.K", "must be m x m");
    return LoadStaticMatrix{std::move(k)};
  }
  if (type == "tf") {
    reject_unknown(l, w, {"type", "num", "den"});
    return LoadTransferFunction{number_list(require(l, w, "num"), "load.num"),
                                number_list(require(l, w, "den"), "load.den")};
  }
  if (type == "open_loop") {
    reject_unknown(l, w, {"type", "amplitude", "frequency", "phase"});
    LoadOpenLoop o;
    o.amplitude = l.contains("amplitude") ? vector_of(l.at("amplitude"), "load.amplitude")
                                          : Vector(Vector::Zero(m));
    if (o.amplitude.size() != m) fail("load.amplitude", "must have m entries");
    if (l.contains("frequency")) o.frequency = number(l.at("frequency"), "load.frequency");
    if (l.contains("phase")) o.phase = number(l.at("phase"), "load.phase");
    return o;
  }
  fail("load.type", "must be static_gain, static_matrix, tf or open_loop, got " + type);
}

IntegratorConfig parse_integrator(const json& j) {
  const std::string w = "integrator";
  reject_unknown(j, w,
                 {"method", "dt", "rtol", "atol", "dt_max", "dt_min", "t_final",
                  "event_refine_tol", "chatter_guard", "gate_on_S", "impact_band"});
  IntegratorConfig c;
  if (j.contains("method")) {
    const std::string m = j.at("method").get<std::string>();
    if (m == "rk4") c.method = Method::kRk4;
    else if (m == "rk45") c.method = Method::kRk45;
    else fail("integrator.method", "must be rk4 or rk45, got " + m);
  }
  auto opt = [&](const char* key, double& dst) {
    if (j.contains(key)) dst = number(j.at(key), std::string("integrator.") + key);
  };
  opt("dt", c.dt);
  opt("rtol", c.rtol);
  opt("atol", c.atol);
  opt("dt_max", c.dt_max);
  opt("dt_min", c.dt_min);
  opt("t_final", c.t_final);
  opt("event_refine_tol", c.event_refine_tol);
  opt("chatter_guard", c.chatter_guard);
  opt("impact_band", c.impact_band);
  if (j.contains("gate_on_S")) {
    if (!j.at("gate_on_S").is_boolean()) fail("integrator.gate_on_S", "expected a boolean");
    c.gate_on_s = j.at("gate_on_S").get<bool>();
  }
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    fail("integrator", e.what());
  }
  return c;
}

Scenario parse_json(const json& root) {
  reject_unknown(root, "scenario",
                 {"name", "description", "plant", "load", "initial_states",
                  "integrator", "sweep", "audits", "seed", "output_dir"});
  Scenario s;
  s.name = require(root, "scenario", "name").get<std::string>();
  if (s.name.empty()) fail("name", "must not be empty");
  if (root.contains("description")) s.description = root.at("description").get<std::string>();
  s.plant = parse_plant(require(root, "scenario", "plant"));
  s.load = parse_load(require(root, "scenario", "load"), s.plant.m);
  const json& x0s = require(root, "scenario", "initial_states");
  if (!x0s.is_array() || x0s.empty()) fail("initial_states", "expected a non-empty list");
  for (std::size_t i = 0; i < x0s.size(); ++i) {
    const std::string f = "initial_states[" + std::to_string(i) + "]";
    Vector x0 = vector_of(x0s[i], f);
    if (x0.size() != s.plant.n) fail(f, "must have n entries");
    s.initial_states.push_back(std::move(x0));
  }
  if (root.contains("integrator")) s.integrator = parse_integrator(root.at("integrator"));
  if (root.contains("sweep")) {
    const json& sw = root.at("sweep");
    reject_unknown(sw, "sweep", {"parameter", "values"});
    Sweep sweep;
    sweep.parameter = require(sw, "sweep", "parameter").get<std::string>();
    if (sweep.parameter != "r" && sweep.parameter != "K") {
      fail("sweep.parameter", "must be r or K, got " + sweep.parameter);
    }
    sweep.values = number_list(require(sw, "sweep", "values"), "sweep.values");
    if (sweep.values.empty()) fail("sweep.values", "must not be empty");
    for (double v : sweep.values) {
      if (!(v > 0.0)) fail("sweep.values", "must be positive");
    }
    s.sweep = std::move(sweep);
  }
  if (root.contains("audits")) {
    const json& a = root.at("audits");
    if (!a.is_object()) fail("audits", "expected an object");
    const auto& names = known_audits();
    for (const auto& [name, params] : a.items()) {
      if (std::find(names.begin(), names.end(), name) == names.end()) {
        fail("audits", "unknown audit " + name);
      }
      if (!params.is_object()) fail("audits." + name, "expected an object");
      auto& dst = s.audits[name];
      for (const auto& [k, v] : params.items()) dst[k] = number(v, "audits." + name + "." + k);
    }
  }
  if (root.contains("seed")) {
    if (!root.at("seed").is_number_unsigned()) fail("seed", "expected a non-negative integer");
    s.seed = root.at("seed").get<std::uint64_t>();
  }
  if (root.contains("output_dir")) s.output_dir = root.at("output_dir").get<std::string>();

  // Cross-field validation through the runtime types.
  try {
    const ClosedLoopSystem cl = build_closed_loop(s);
    (void)cl;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("invalid scenario: ") + e.what());
  }
  return s;
}

}  // namespace

const std::vector<std::string>& known_audits() {
  static const std::vector<std::string> names{
      "passivity",      "storage_rate",      "convergence_to_S",
      "phase_tracking", "cycle_supply",      "impact_time",
      "forward_invariance"};
  return names;
}

bool operator==(const Scenario& a, const Scenario& b) {
  const PlantSpec& p = a.plant;
  const PlantSpec& q = b.plant;
  bool jbar_eq = p.jbar.index() == q.jbar.index();
  if (jbar_eq) {
    if (const auto* x = std::get_if<JbarConstant>(&p.jbar)) {
      jbar_eq = same(x->matrix, std::get<JbarConstant>(q.jbar).matrix);
    } else if (const auto* x = std::get_if<JbarRotation>(&p.jbar)) {
      jbar_eq = x->omega0 == std::get<JbarRotation>(q.jbar).omega0;
    } else {
      const auto& c1 = std::get<JbarPhasePI>(p.jbar).ctrl;
      const auto& c2 = std::get<JbarPhasePI>(q.jbar).ctrl;
      jbar_eq = c1.omega0 == c2.omega0 && c1.kp == c2.kp && c1.ki == c2.ki &&
                c1.phi_ref == c2.phi_ref;
    }
  }
  bool load_eq = a.load.index() == b.load.index();
  if (load_eq) {
    if (const auto* x = std::get_if<LoadStaticGain>(&a.load)) {
      load_eq = x->k == std::get<LoadStaticGain>(b.load).k;
    } else if (const auto* x = std::get_if<LoadStaticMatrix>(&a.load)) {
      load_eq = same(x->k, std::get<LoadStaticMatrix>(b.load).k);
    } else if (const auto* x = std::get_if<LoadTransferFunction>(&a.load)) {
      const auto& y = std::get<LoadTransferFunction>(b.load);
      load_eq = x->num == y.num && x->den == y.den;
    } else {
      const auto& x2 = std::get<LoadOpenLoop>(a.load);
      const auto& y = std::get<LoadOpenLoop>(b.load);
      load_eq = same(x2.amplitude, y.amplitude) && x2.frequency == y.frequency &&
                x2.phase == y.phase;
    }
  }
  bool x0_eq = a.initial_states.size() == b.initial_states.size();
  for (std::size_t i = 0; x0_eq && i < a.initial_states.size(); ++i) {
    x0_eq = same(a.initial_states[i], b.initial_states[i]);
  }
  const bool sweep_eq =
      a.sweep.has_value() == b.sweep.has_value() &&
      (!a.sweep || (a.sweep->parameter == b.sweep->parameter &&
                    a.sweep->values == b.sweep->values));
  return a.name == b.name && a.description == b.description && p.n == q.n &&
         p.m == q.m && same(p.q, q.q) && same(p.r, q.r) && same(p.bbar, q.bbar) &&
         p.variant == q.variant && p.big_m == q.big_m && p.tol_s == q.tol_s &&
         jbar_eq && load_eq && x0_eq && sweep_eq &&
         a.integrator.hash() == b.integrator.hash() && a.audits == b.audits &&
         a.seed == b.seed && a.output_dir == b.output_dir;
}

Scenario parse_scenario_text(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("malformed JSON: ") + e.what());
  }
  try {
    return parse_json(root);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("type error: ") + e.what());
  }
}

Scenario parse_scenario(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path.string() + ": cannot open");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_scenario_text(buf.str());
}

std::string emit_scenario(const Scenario& s) {
  json root;
  root["name"] = s.name;
  if (!s.description.empty()) root["description"] = s.description;
  json plant;
  plant["n"] = s.plant.n;
  plant["m"] = s.plant.m;
  plant["Q"] = to_json(s.plant.q);
  plant["R"] = to_json(s.plant.r);
  json j;
  if (const auto* c = std::get_if<JbarConstant>(&s.plant.jbar)) {
    j["type"] = "constant";
    j["matrix"] = to_json(c->matrix);
  } else if (const auto* r = std::get_if<JbarRotation>(&s.plant.jbar)) {
    j["type"] = "rotation";
    j["omega0"] = r->omega0;
  } else {
    const auto& c2 = std::get<JbarPhasePI>(s.plant.jbar).ctrl;
    j["type"] = "phase_pi";
    j["omega0"] = c2.omega0;
    j["kp"] = c2.kp;
    j["ki"] = c2.ki;
    j["phi_ref"] = c2.phi_ref;
  }
  plant["Jbar"] = j;
  plant["Bbar"] = to_json(s.plant.bbar);
  plant["variant"] = std::string(to_string(s.plant.variant));
  plant["M"] = s.plant.big_m;
  plant["tol_S"] = s.plant.tol_s;
  root["plant"] = plant;

  json load;
  if (const auto* g = std::get_if<LoadStaticGain>(&s.load)) {
    load["type"] = "static_gain";
    load["K"] = g->k;
  } else if (const auto* k = std::get_if<LoadStaticMatrix>(&s.load)) {
    load["type"] = "static_matrix";
    load["K"] = to_json(k->k);
  } else if (const auto* tf = std::get_if<LoadTransferFunction>(&s.load)) {
    load["type"] = "tf";
    load["num"] = tf->num;
    load["den"] = tf->den;
  } else {
    const auto& o = std::get<LoadOpenLoop>(s.load);
    load["type"] = "open_loop";
    load["amplitude"] = to_json(o.amplitude);
    load["frequency"] = o.frequency;
    load["phase"] = o.phase;
  }
  root["load"] = load;
  json x0s = json::array();
  for (const Vector& x0 : s.initial_states) x0s.push_back(to_json(x0));
  root["initial_states"] = x0s;

  const IntegratorConfig& c = s.integrator;
  json integ;
  integ["method"] = c.method == Method::kRk4 ? "rk4" : "rk45";
  integ["dt"] = c.dt;
  integ["rtol"] = c.rtol;
  integ["atol"] = c.atol;
  integ["dt_max"] = c.dt_max;
  integ["dt_min"] = c.dt_min;
  integ["t_final"] = c.t_final;
  integ["event_refine_tol"] = c.event_refine_tol;
  integ["chatter_guard"] = c.chatter_guard;
  integ["gate_on_S"] = c.gate_on_s;
  integ["impact_band"] = c.impact_band;
  root["integrator"] = integ;
  if (s.sweep) {
    root["sweep"] = {{"parameter", s.sweep->parameter}, {"values", s.sweep->values}};
  }
  json audits = json::object();
  for (const auto& [name, params] : s.audits) {
    json p = json::object();
    for (const auto& [k, v] : params) p[k] = v;
    audits[name] = p;
  }
  root["audits"] = audits;
  root["seed"] = s.seed;
  root["output_dir"] = s.output_dir;
  return root.dump(2) + "\n";
}

Scenario apply_sweep_value(const Scenario& s, const std::string& parameter,
                           double value) {
  Scenario out = s;
  if (parameter == "r") {
    out.plant.r = value * Matrix::Identity(s.plant.n, s.plant.n);
  } else if (parameter == "K") {
    if (!std::holds_alternative<LoadStaticGain>(s.load)) {
      throw ConfigError("sweep.parameter: K sweeps need a static_gain load");
    }
    out.load = LoadStaticGain{value};
  } else {
    throw ConfigError("sweep.parameter: unknown parameter " + parameter);
  }
  return out;
}

SingularPHSystem build_plant(const PlantSpec& p) {
  SystemParams sp;
  sp.q = p.q;
  sp.r = DissipationMatrix::constant(p.r);
  sp.bbar = InputMatrix::constant(p.bbar);
  sp.m = p.m;
  sp.variant = p.variant;
  sp.big_m = p.variant == Variant::kExact ? 0.0 : p.big_m;
  sp.tol_s = p.tol_s;
  if (const auto* c = std::get_if<JbarConstant>(&p.jbar)) {
    sp.jbar = InterconnectionMatrix::constant(c->matrix);
  } else if (const auto* r = std::get_if<JbarRotation>(&p.jbar)) {
    if (p.n != 2) throw std::invalid_argument("rotation Jbar needs n = 2");
    sp.jbar = InterconnectionMatrix::rotation(r->omega0);
  } else {
    sp.jbar = phase_pi_interconnection(std::get<JbarPhasePI>(p.jbar).ctrl);
  }
  return SingularPHSystem(std::move(sp));
}

ClosedLoopSystem build_closed_loop(const Scenario& s) {
  SingularPHSystem plant = build_plant(s.plant);
  std::optional<PhasePIController> ctrl;
  if (const auto* pi = std::get_if<JbarPhasePI>(&s.plant.jbar)) ctrl = pi->ctrl;
  Load load = std::visit(
      [&](const auto& spec) -> Load {
        using T = std::decay_t<decltype(spec)>;
        if constexpr (std::is_same_v<T, LoadStaticGain>) {
          return StaticLoad::scalar(spec.k, s.plant.m);
        } else if constexpr (std::is_same_v<T, LoadStaticMatrix>) {
          return StaticLoad::matrix(spec.k);
        } else if constexpr (std::is_same_v<T, LoadTransferFunction>) {
          return realize_tf(spec.num, spec.den);
        } else {
          const Vector amp = spec.amplitude;
          const double w = 2.0 * std::numbers::pi * spec.frequency;
          const double ph = spec.phase;
          return OpenLoop{[amp, w, ph](double t) -> Vector {
            return amp * std::sin(w * t + ph);
          }};
        }
      },
      s.load);
  return ClosedLoopSystem(std::move(plant), std::move(load), ctrl);
}

namespace {

double param(const std::map<std::string, double>& p, const std::string& key,
             double fallback) {
  const auto it = p.find(key);
  return it == p.end() ? fallback : it->second;
}

}  // namespace

AuditReport run_audits(const Scenario& s, const ClosedLoopSystem& cl,
                       const IntegrationResult& run) {
  AuditReport report;
  report.tol_s = cl.plant().tol_s();
  const Trajectory& traj = run.trajectory;
  for (const auto& [name, p] : s.audits) {
    if (name == "passivity") {
      report.checks.push_back(
          check_passivity(traj, cl.plant(), natural_storage(cl.plant().variant())));
    } else if (name == "storage_rate") {
      report.checks.push_back(check_storage_rate_consistency(
          traj, param(p, "rel_tol", 1e-3), param(p, "min_fraction", 0.99)));
    } else if (name == "convergence_to_S") {
      report.checks.push_back(check_convergence_to_s(
          traj, param(p, "band", 0.02), param(p, "settle_frac", 0.5)));
    } else if (name == "phase_tracking") {
      if (!cl.controller()) {
        AuditCheck c;
        c.name = "phase_tracking";
        c.note = "scenario has no phase controller";
        report.checks.push_back(c);
        continue;
      }
      report.checks.push_back(check_phase_tracking(
          traj, cl.controller()->phi_ref, param(p, "band_phase", 0.05),
          param(p, "band_sigma", 0.02), param(p, "window_frac", 0.1)));
    } else if (name == "cycle_supply") {
      report.checks.push_back(check_cycle_supply(traj, param(p, "closure_tol", 1e-3)));
    } else if (name == "impact_time") {
      AuditCheck c;
      c.name = "impact_time_bound";
      const auto* load = std::get_if<StaticLoad>(&cl.load());
      const Matrix bbar = cl.plant().bbar(traj.front().x);
      if (!load || bbar.rows() != bbar.cols()) {
        c.note = "impact bound needs a static load and square Bbar";
        report.checks.push_back(c);
        continue;
      }
      ImpactBoundData data;
      data.q = cl.plant().q().matrix();
      data.bbar = bbar;
      data.kappa1 = param(p, "kappa1", load->kappa1);
      data.l = param(p, "l", 0.5 / std::sqrt(cl.plant().q().lambda_max()));
      try {
        const ImpactBound b = compute_impact_bound(traj.front().x, data);
        report.checks.push_back(check_impact_time(traj, run.events, b, data.l));
      } catch (const std::invalid_argument& e) {
        c.note = e.what();
        report.checks.push_back(c);
      }
    } else if (name == "forward_invariance") {
      const SingularPHSystem exact = cl.plant().with_variant(Variant::kExact, 0.0);
      report.checks.push_back(check_forward_invariance(
          exact, static_cast<int>(param(p, "n_points", 20)),
          param(p, "horizon", 10.0), s.seed, param(p, "dt", 1e-3)));
    }
  }
  return report;
}

std::vector<Eigen::Vector2d> sample_level_set(const Matrix& q, double level,
                                              int count) {
  if (q.rows() != 2 || q.cols() != 2) {
    throw std::invalid_argument("level-set sampling needs a 2 x 2 Q");
  }
  if (!(level > 0.0)) return {};
  const Eigen::LLT<Matrix> llt(q);
  // Q = L Lᵀ, so p = √level · L⁻ᵀ (cos θ, sin θ) gives pᵀQp = level.
  const Matrix lt = llt.matrixU();
  std::vector<Eigen::Vector2d> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    const double th = 2.0 * std::numbers::pi * i / count;
    const Eigen::Vector2d c(std::cos(th), std::sin(th));
    const Eigen::Vector2d p = lt.triangularView<Eigen::Upper>().solve(c);
    out.push_back(std::sqrt(level) * p);
  }
  return out;
}

void emit_plot_data(const Trajectory& traj, const SingularPHSystem& plant,
                    const std::filesystem::path& dir, const std::string& prefix) {
  std::ofstream phase(dir / (prefix + "phase.csv"));
  if (!phase) throw std::runtime_error("cannot write " + (dir / (prefix + "phase.csv")).string());
  phase << "curve,x1,x2\n";
  const bool planar = !traj.empty() && traj.front().x.size() >= 2;
  if (planar) {
    for (const Sample& s : traj.samples) {
      phase << "trajectory," << format_double(s.x(0)) << ','
            << format_double(s.x(1)) << '\n';
    }
  }
  if (plant.n() == 2) {
    auto emit = [&](const char* name, double level) {
      for (const auto& p : sample_level_set(plant.q().matrix(), level)) {
        phase << name << ',' << format_double(p(0)) << ',' << format_double(p(1))
              << '\n';
      }
    };
    emit("S", 1.0);
    if (plant.variant() != Variant::kExact) {
      // |σ| = 1/M  ⇔  xᵀQx = 1 ± 2/M
      emit("dM_outer", 1.0 + 2.0 / plant.big_m());
      emit("dM_inner", 1.0 - 2.0 / plant.big_m());
    }
  }
  std::ofstream ts(dir / (prefix + "timeseries.csv"));
  if (!ts) throw std::runtime_error("cannot write timeseries.csv");
  ts << "t,x1\n";
  for (const Sample& s : traj.samples) {
    ts << format_double(s.t) << ',' << format_double(s.x(0)) << '\n';
  }
}

ScenarioResult run_scenario(const Scenario& s, std::ostream* log) {
  namespace fs = std::filesystem;
  ScenarioResult result;
  const fs::path dir(s.output_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) {
    if (log) *log << "cannot create " << dir << ": " << ec.message() << '\n';
    result.exit_code = kExitRuntimeAbort;
    return result;
  }

  struct Job {
    std::string id;
    std::optional<double> sweep_value;
    Scenario scenario;
    Vector x0;
  };
  std::vector<Job> jobs;
  const std::vector<std::optional<double>> values =
      s.sweep ? std::vector<std::optional<double>>(s.sweep->values.begin(),
                                                   s.sweep->values.end())
              : std::vector<std::optional<double>>{std::nullopt};
  for (const auto& v : values) {
    const Scenario sv = v ? apply_sweep_value(s, s.sweep->parameter, *v) : s;
    for (const Vector& x0 : s.initial_states) {
      jobs.push_back({s.name + "_" + std::to_string(jobs.size()), v, sv, x0});
    }
  }

  auto run_job = [&dir](const Job& job) {
    RunSummary summary;
    summary.id = job.id;
    summary.sweep_value = job.sweep_value;
    summary.x0 = job.x0;
    const ClosedLoopSystem cl = build_closed_loop(job.scenario);
    Vector total = Vector::Zero(cl.total_dim());
    total.head(cl.n()) = job.x0;
    const IntegrationResult run = integrate(cl, total, job.scenario.integrator, job.id);
    summary.status = run.status;
    summary.diagnostic = run.diagnostic;
    summary.report = run.ok() ? run_audits(job.scenario, cl, run) : AuditReport{};
    if (!run.ok()) {
      AuditCheck c;
      c.name = "integration";
      c.anchor = "integration reached t_final";
      c.verdict = Verdict::kFail;
      c.note = run.diagnostic;
      summary.report.checks.push_back(c);
    }
    auto open = [&](const std::string& suffix) {
      std::ofstream f(dir / (job.id + suffix));
      if (!f) throw std::runtime_error("cannot write " + (dir / (job.id + suffix)).string());
      return f;
    };
    {
      auto f = open("_traj.csv");
      write_trajectory_csv(f, run.trajectory);
    }
    {
      auto f = open("_events.csv");
      write_events_csv(f, run.events, cl.n());
    }
    {
      auto f = open("_audit.csv");
      write_report_csv(f, summary.report);
    }
    emit_plot_data(run.trajectory, cl.plant(), dir, job.id + "_");
    return summary;
  };

  std::vector<std::future<RunSummary>> futures;
  futures.reserve(jobs.size());
  for (const Job& job : jobs) {
    futures.push_back(std::async(std::launch::async, run_job, std::cref(job)));
  }
  bool io_failure = false;
  for (auto& f : futures) {
    try {
      result.runs.push_back(f.get());
    } catch (const std::exception& e) {
      if (log) *log << "run failed: " << e.what() << '\n';
      io_failure = true;
    }
  }

  json manifest;
  manifest["scenario"] = s.name;
  manifest["config_hash"] = s.integrator.hash();
  manifest["seed"] = s.seed;
  manifest["tol_S"] = s.plant.tol_s;
  json runs = json::array();
  bool aborted = io_failure;
  bool audit_failed = false;
  for (const RunSummary& r : result.runs) {
    json e;
    e["id"] = r.id;
    if (r.sweep_value) e[s.sweep->parameter] = *r.sweep_value;
    e["x0"] = to_json(r.x0);
    e["status"] = std::string(to_string(r.status));
    if (!r.diagnostic.empty()) e["diagnostic"] = r.diagnostic;
    json checks = json::object();
    for (const AuditCheck& c : r.report.checks) {
      checks[c.name] = std::string(to_string(c.verdict));
    }
    e["audits"] = checks;
    runs.push_back(e);
    if (r.status != RunStatus::kCompleted) aborted = true;
    if (!r.report.passed()) audit_failed = true;
    if (log) {
      *log << r.id << ": " << to_string(r.status);
      for (const AuditCheck& c : r.report.checks) {
        *log << "  " << c.name << "=" << to_string(c.verdict);
      }
      *log << '\n';
    }
  }
  manifest["runs"] = runs;
  std::ofstream mf(dir / (s.name + "_manifest.json"));
  if (!mf) {
    aborted = true;
  } else {
    mf << manifest.dump(2) << '\n';
  }
  result.exit_code = aborted ? kExitRuntimeAbort
                             : (audit_failed ? kExitAuditFailure : kExitOk);
  return result;
}

}  // namespace sphs
