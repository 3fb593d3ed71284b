#include "pcrhc/config.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>

#include "json.hpp"
#include "pcrhc/validation.hpp"

namespace pcrhc {

namespace {

using nlohmann::json;

void check_keys(const json& j, const std::string& ctx,
                std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError(ctx + " must be an object");
  for (const auto& item : j.items()) {
    bool known = false;
    for (const char* key : allowed)
      if (item.key() == key) {
        known = true;
        break;
      }
    if (!known) throw ConfigError("unknown key '" + item.key() + "' in " + ctx);
  }
}

double get_number(const json& j, const std::string& ctx) {
  if (!j.is_number()) throw ConfigError(ctx + " must be a number");
  return j.get<double>();
}

int get_int(const json& j, const std::string& ctx) {
  if (!j.is_number_integer()) throw ConfigError(ctx + " must be an integer");
  return j.get<int>();
}

bool get_bool(const json& j, const std::string& ctx) {
  if (!j.is_boolean()) throw ConfigError(ctx + " must be a boolean");
  return j.get<bool>();
}

std::string get_string(const json& j, const std::string& ctx) {
  if (!j.is_string()) throw ConfigError(ctx + " must be a string");
  return j.get<std::string>();
}

Eigen::MatrixXd parse_matrix(const json& j, const std::string& ctx) {
  if (!j.is_array() || j.empty())
    throw ConfigError(ctx + " must be a nonempty array of rows");
  const std::size_t rows = j.size();
  std::size_t cols = 0;
  Eigen::MatrixXd M;
  for (std::size_t r = 0; r < rows; ++r) {
    const json& row = j[r];
    if (!row.is_array() || row.empty())
      throw ConfigError(ctx + " row " + std::to_string(r) + " must be a nonempty array");
    if (r == 0) {
      cols = row.size();
      M.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    } else if (row.size() != cols) {
      throw ConfigError(ctx + " rows have inconsistent lengths");
    }
    for (std::size_t c = 0; c < cols; ++c)
      M(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
          get_number(row[c], ctx + " entry");
  }
  return M;
}

Eigen::VectorXd parse_vector(const json& j, const std::string& ctx) {
  if (!j.is_array() || j.empty())
    throw ConfigError(ctx + " must be a nonempty array of numbers");
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i)
    v[static_cast<Eigen::Index>(i)] = get_number(j[i], ctx + " entry");
  return v;
}

std::vector<int> parse_int_list(const json& j, const std::string& ctx) {
  if (!j.is_array()) throw ConfigError(ctx + " must be an array of integers");
  std::vector<int> out;
  out.reserve(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) out.push_back(get_int(j[i], ctx + " entry"));
  return out;
}

Marginal parse_marginal(const json& j, const std::string& ctx) {
  if (!j.is_object() || !j.contains("kind"))
    throw ConfigError(ctx + " must be an object with a 'kind' key");
  const std::string kind = get_string(j.at("kind"), ctx + ".kind");
  if (kind == "uniform") {
    check_keys(j, ctx, {"kind"});
    return Marginal::uniform();
  }
  if (kind == "gaussian") {
    check_keys(j, ctx, {"kind"});
    return Marginal::gaussian();
  }
  if (kind == "gamma") {
    check_keys(j, ctx, {"kind", "shape"});
    if (!j.contains("shape")) throw ConfigError(ctx + " gamma marginal needs 'shape'");
    return Marginal::gamma(get_number(j.at("shape"), ctx + ".shape"));
  }
  if (kind == "beta") {
    check_keys(j, ctx, {"kind", "alpha", "beta"});
    if (!j.contains("alpha") || !j.contains("beta"))
      throw ConfigError(ctx + " beta marginal needs 'alpha' and 'beta'");
    return Marginal::beta(get_number(j.at("alpha"), ctx + ".alpha"),
                          get_number(j.at("beta"), ctx + ".beta"));
  }
  throw ConfigError(ctx + " has unsupported marginal kind '" + kind + "'");
}

std::vector<PolyTerm> parse_terms(const json& j, int d, const std::string& ctx) {
  if (!j.is_array() || j.empty())
    throw ConfigError(ctx + " must be a nonempty array of terms");
  std::vector<PolyTerm> out;
  out.reserve(j.size());
  for (std::size_t t = 0; t < j.size(); ++t) {
    const std::string tctx = ctx + "[" + std::to_string(t) + "]";
    check_keys(j[t], tctx, {"exponents", "coeff"});
    if (!j[t].contains("exponents") || !j[t].contains("coeff"))
      throw ConfigError(tctx + " needs 'exponents' and 'coeff'");
    PolyTerm term;
    term.exponents.exponents = parse_int_list(j[t].at("exponents"), tctx + ".exponents");
    if (static_cast<int>(term.exponents.exponents.size()) != d)
      throw ConfigError(tctx + ".exponents must have length d = " + std::to_string(d));
    for (int e : term.exponents.exponents)
      if (e < 0) throw ConfigError(tctx + ".exponents must be nonnegative");
    term.coeff = parse_matrix(j[t].at("coeff"), tctx + ".coeff");
    out.push_back(std::move(term));
  }
  return out;
}

ConstraintSpec parse_constraint(const json& j, const std::string& ctx) {
  check_keys(j, ctx, {"kind", "H", "G", "bound", "direction", "steps"});
  if (!j.contains("kind") || !j.contains("bound"))
    throw ConfigError(ctx + " needs 'kind' and 'bound'");
  ConstraintSpec c;
  const std::string kind = get_string(j.at("kind"), ctx + ".kind");
  if (kind == "expectation-quadratic-state")
    c.kind = ConstraintKind::expectation_quadratic_state;
  else if (kind == "expectation-quadratic-control")
    c.kind = ConstraintKind::expectation_quadratic_control;
  else if (kind == "variance-trace-state")
    c.kind = ConstraintKind::variance_trace_state;
  else
    throw ConfigError(ctx + " has unsupported kind '" + kind + "'");
  c.bound = get_number(j.at("bound"), ctx + ".bound");
  if (j.contains("H")) c.H = parse_matrix(j.at("H"), ctx + ".H");
  if (j.contains("G")) c.G = parse_matrix(j.at("G"), ctx + ".G");
  if (j.contains("direction")) {
    const std::string dir = get_string(j.at("direction"), ctx + ".direction");
    if (dir == "<=")
      c.direction = ConstraintDirection::le;
    else if (dir == ">=")
      c.direction = ConstraintDirection::ge;
    else
      throw ConfigError(ctx + ".direction must be '<=' or '>='");
  }
  if (j.contains("steps")) c.steps = parse_int_list(j.at("steps"), ctx + ".steps");
  return c;
}

void parse_solver(const json& j, SolverConfig* out) {
  check_keys(j, "'solver'",
             {"eps_primal", "eps_dual", "max_iterations", "rho", "rho_eq_scale", "sigma",
              "alpha", "check_interval", "polish", "adaptive_rho", "eps_infeasible",
              "max_outer", "starts", "stationarity_tol", "step_tol", "constraint_tol"});
  ConvexSettings& cs = out->convex;
  if (j.contains("eps_primal")) cs.eps_primal = get_number(j.at("eps_primal"), "solver.eps_primal");
  if (j.contains("eps_dual")) cs.eps_dual = get_number(j.at("eps_dual"), "solver.eps_dual");
  if (j.contains("max_iterations"))
    cs.max_iterations = get_int(j.at("max_iterations"), "solver.max_iterations");
  if (j.contains("rho")) cs.rho = get_number(j.at("rho"), "solver.rho");
  if (j.contains("rho_eq_scale"))
    cs.rho_eq_scale = get_number(j.at("rho_eq_scale"), "solver.rho_eq_scale");
  if (j.contains("sigma")) cs.sigma = get_number(j.at("sigma"), "solver.sigma");
  if (j.contains("alpha")) cs.alpha = get_number(j.at("alpha"), "solver.alpha");
  if (j.contains("check_interval"))
    cs.check_interval = get_int(j.at("check_interval"), "solver.check_interval");
  if (j.contains("polish")) cs.polish = get_bool(j.at("polish"), "solver.polish");
  if (j.contains("adaptive_rho"))
    cs.adaptive_rho = get_bool(j.at("adaptive_rho"), "solver.adaptive_rho");
  if (j.contains("eps_infeasible"))
    cs.eps_infeasible = get_number(j.at("eps_infeasible"), "solver.eps_infeasible");
  VariableGainSettings& vs = out->variable;
  if (j.contains("max_outer")) vs.max_outer = get_int(j.at("max_outer"), "solver.max_outer");
  if (j.contains("starts")) vs.starts = get_int(j.at("starts"), "solver.starts");
  if (j.contains("stationarity_tol"))
    vs.stationarity_tol = get_number(j.at("stationarity_tol"), "solver.stationarity_tol");
  if (j.contains("step_tol")) vs.step_tol = get_number(j.at("step_tol"), "solver.step_tol");
  if (j.contains("constraint_tol"))
    vs.constraint_tol = get_number(j.at("constraint_tol"), "solver.constraint_tol");
  vs.convex = cs;
}

json matrix_to_json(const Eigen::MatrixXd& M) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < M.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < M.cols(); ++c) row.push_back(M(r, c));
    rows.push_back(row);
  }
  return rows;
}

json vector_to_json(const Eigen::VectorXd& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
  return out;
}

json marginal_to_json(const Marginal& m) {
  switch (m.kind) {
    case DistKind::uniform:
      return {{"kind", "uniform"}};
    case DistKind::gaussian:
      return {{"kind", "gaussian"}};
    case DistKind::gamma:
      return {{"kind", "gamma"}, {"shape", m.a}};
    case DistKind::beta:
      return {{"kind", "beta"}, {"alpha", m.a}, {"beta", m.b}};
  }
  throw ConfigError("unsupported marginal kind");
}

std::filesystem::path ensure_out_dir(const ExperimentConfig& config) {
  std::filesystem::path dir(config.output.dir);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw ConfigError("cannot create output directory '" + dir.string() + "'");
  return dir;
}

ChaosState lifted_initial(const ChaosSystem& sys, const Eigen::VectorXd& x0) {
  ChaosState X0(sys.n, sys.blocks());
  X0.block(0) = x0;
  return X0;
}

EngineSettings engine_settings(const ExperimentConfig& config) {
  EngineSettings s;
  s.convex = config.solver.convex;
  s.variable = config.solver.variable;
  s.variable.convex = config.solver.convex;
  s.variable.seed = config.run.seed;
  return s;
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path);
  if (!os) throw ConfigError("cannot open '" + path.string() + "' for writing");
  os << text;
  if (!os) throw ConfigError("write to '" + path.string() + "' failed");
}

}  // namespace

ExperimentConfig parse_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  check_keys(j, "the top level",
             {"system", "basis", "cost", "constraints", "mode", "solver", "run", "output"});
  for (const char* key : {"system", "basis", "cost", "run"})
    if (!j.contains(key))
      throw ConfigError(std::string("config is missing the '") + key + "' block");

  ExperimentConfig config;

  const json& sys = j.at("system");
  check_keys(sys, "'system'", {"n", "m", "d", "marginals", "A", "B"});
  for (const char* key : {"n", "m", "d", "marginals", "A", "B"})
    if (!sys.contains(key))
      throw ConfigError(std::string("'system' is missing '") + key + "'");
  config.system.n = get_int(sys.at("n"), "system.n");
  config.system.m = get_int(sys.at("m"), "system.m");
  config.system.d = get_int(sys.at("d"), "system.d");
  if (!sys.at("marginals").is_array())
    throw ConfigError("system.marginals must be an array");
  for (std::size_t i = 0; i < sys.at("marginals").size(); ++i)
    config.system.marginals.push_back(parse_marginal(
        sys.at("marginals")[i], "system.marginals[" + std::to_string(i) + "]"));
  config.system.A_terms = parse_terms(sys.at("A"), config.system.d, "system.A");
  config.system.B_terms = parse_terms(sys.at("B"), config.system.d, "system.B");

  const json& basis = j.at("basis");
  check_keys(basis, "'basis'", {"order"});
  if (!basis.contains("order")) throw ConfigError("'basis' is missing 'order'");
  config.order = get_int(basis.at("order"), "basis.order");

  const json& cost = j.at("cost");
  check_keys(cost, "'cost'", {"Q", "R", "horizon"});
  for (const char* key : {"Q", "R", "horizon"})
    if (!cost.contains(key)) throw ConfigError(std::string("'cost' is missing '") + key + "'");
  config.cost.Q = parse_matrix(cost.at("Q"), "cost.Q");
  config.cost.R = parse_matrix(cost.at("R"), "cost.R");
  config.cost.N = get_int(cost.at("horizon"), "cost.horizon");

  if (j.contains("constraints")) {
    if (!j.at("constraints").is_array())
      throw ConfigError("'constraints' must be an array");
    for (std::size_t i = 0; i < j.at("constraints").size(); ++i)
      config.constraints.push_back(parse_constraint(
          j.at("constraints")[i], "constraints[" + std::to_string(i) + "]"));
  }

  if (j.contains("mode")) config.mode = parse_mode(get_string(j.at("mode"), "'mode'"));
  if (j.contains("solver")) parse_solver(j.at("solver"), &config.solver);
  config.solver.variable.convex = config.solver.convex;

  const json& run = j.at("run");
  check_keys(run, "'run'",
             {"steps", "x0", "seed", "samples", "validate_steps", "decay_tolerance"});
  if (!run.contains("x0")) throw ConfigError("'run' is missing 'x0'");
  config.run.x0 = parse_vector(run.at("x0"), "run.x0");
  if (run.contains("steps")) config.run.steps = get_int(run.at("steps"), "run.steps");
  if (run.contains("seed")) {
    if (!run.at("seed").is_number_integer() || run.at("seed").get<std::int64_t>() < 0)
      throw ConfigError("run.seed must be a nonnegative integer");
    config.run.seed = run.at("seed").get<std::uint64_t>();
  }
  if (run.contains("samples")) config.run.samples = get_int(run.at("samples"), "run.samples");
  if (run.contains("validate_steps"))
    config.run.validate_steps = get_int(run.at("validate_steps"), "run.validate_steps");
  if (run.contains("decay_tolerance"))
    config.run.decay_tolerance = get_number(run.at("decay_tolerance"), "run.decay_tolerance");

  if (j.contains("output")) {
    check_keys(j.at("output"), "'output'", {"dir"});
    if (j.at("output").contains("dir"))
      config.output.dir = get_string(j.at("output").at("dir"), "output.dir");
  }

  validate_config(config);
  return config;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file '" + path + "'");
  std::ostringstream buffer;
  buffer << is.rdbuf();
  return parse_config(buffer.str());
}

void validate_config(const ExperimentConfig& config) {
  config.system.validate();
  if (config.order < 0) throw ConfigError("basis.order must be nonnegative");
  config.cost.validate(config.system.n, config.system.m);
  if (config.run.x0.size() != config.system.n)
    throw ConfigError("run.x0 must have length n = " + std::to_string(config.system.n));
  if (config.run.steps < 1) throw ConfigError("run.steps must be at least 1");
  if (config.run.samples < 1) throw ConfigError("run.samples must be at least 1");
  if (config.run.validate_steps < 1)
    throw ConfigError("run.validate_steps must be at least 1");
  if (!(config.run.decay_tolerance > 0.0))
    throw ConfigError("run.decay_tolerance must be positive");
}

ExperimentConfig preset(const std::string& name) {
  if (name == "paper") {
    ExperimentConfig c;
    c.system.n = 2;
    c.system.m = 1;
    c.system.d = 1;
    c.system.marginals = {Marginal::uniform()};
    PolyTerm a0;
    a0.exponents.exponents = {0};
    a0.coeff = (Eigen::MatrixXd(2, 2) << 1.02, -0.1, 0.1, 0.98).finished();
    PolyTerm a1;
    a1.exponents.exponents = {1};
    a1.coeff = 0.04 * Eigen::MatrixXd::Identity(2, 2);
    c.system.A_terms = {a0, a1};
    PolyTerm b0;
    b0.exponents.exponents = {0};
    b0.coeff = (Eigen::MatrixXd(2, 1) << 0.1, 0.05).finished();
    c.system.B_terms = {b0};
    c.order = 4;
    c.cost.Q = (Eigen::MatrixXd(2, 2) << 2.0, 0.0, 0.0, 5.0).finished();
    c.cost.R = Eigen::MatrixXd::Constant(1, 1, 1.0);
    c.cost.N = 10;
    ConstraintSpec floor;
    floor.kind = ConstraintKind::expectation_quadratic_state;
    floor.G = (Eigen::MatrixXd(1, 2) << 1.0, 0.0).finished();
    floor.bound = -1.0;
    floor.direction = ConstraintDirection::ge;
    c.constraints = {floor};
    c.mode = ControlMode::mean_variable_gain;
    c.run.steps = 100;
    c.run.x0 = (Eigen::VectorXd(2) << -0.5, 1.0).finished();
    c.run.seed = 20240;
    c.run.samples = 100000;
    c.run.validate_steps = 5;
    validate_config(c);
    return c;
  }
  if (name == "deterministic-smoke") {
    ExperimentConfig c;
    c.system.n = 2;
    c.system.m = 1;
    c.system.d = 1;
    c.system.marginals = {Marginal::uniform()};
    PolyTerm a0;
    a0.exponents.exponents = {0};
    a0.coeff = (Eigen::MatrixXd(2, 2) << 0.5, 0.2, -0.1, 0.3).finished();
    c.system.A_terms = {a0};
    PolyTerm b0;
    b0.exponents.exponents = {0};
    b0.coeff = (Eigen::MatrixXd(2, 1) << 0.1, 1.0).finished();
    c.system.B_terms = {b0};
    c.order = 2;
    c.cost.Q = Eigen::MatrixXd::Identity(2, 2);
    c.cost.R = Eigen::MatrixXd::Constant(1, 1, 1.0);
    c.cost.N = 5;
    c.mode = ControlMode::mean_fixed_gain;
    c.run.steps = 30;
    c.run.x0 = (Eigen::VectorXd(2) << 1.0, -1.0).finished();
    c.run.seed = 7;
    c.run.samples = 2000;
    c.run.validate_steps = 3;
    validate_config(c);
    return c;
  }
  throw ConfigError("unknown preset '" + name + "' (available: paper, deterministic-smoke)");
}

std::vector<std::string> preset_names() { return {"paper", "deterministic-smoke"}; }

std::string config_to_json(const ExperimentConfig& config) {
  json j;
  json sys;
  sys["n"] = config.system.n;
  sys["m"] = config.system.m;
  sys["d"] = config.system.d;
  json marginals = json::array();
  for (const Marginal& m : config.system.marginals) marginals.push_back(marginal_to_json(m));
  sys["marginals"] = marginals;
  auto terms_to_json = [](const std::vector<PolyTerm>& terms) {
    json arr = json::array();
    for (const PolyTerm& t : terms)
      arr.push_back({{"exponents", t.exponents.exponents}, {"coeff", matrix_to_json(t.coeff)}});
    return arr;
  };
  sys["A"] = terms_to_json(config.system.A_terms);
  sys["B"] = terms_to_json(config.system.B_terms);
  j["system"] = sys;
  j["basis"] = {{"order", config.order}};
  j["cost"] = {{"Q", matrix_to_json(config.cost.Q)},
               {"R", matrix_to_json(config.cost.R)},
               {"horizon", config.cost.N}};
  if (!config.constraints.empty()) {
    json arr = json::array();
    for (const ConstraintSpec& c : config.constraints) {
      json jc;
      jc["kind"] = to_string(c.kind);
      if (c.H.size() > 0) jc["H"] = matrix_to_json(c.H);
      if (c.G.size() > 0) jc["G"] = matrix_to_json(c.G);
      jc["bound"] = c.bound;
      jc["direction"] = c.direction == ConstraintDirection::ge ? ">=" : "<=";
      if (!c.steps.empty()) jc["steps"] = c.steps;
      arr.push_back(jc);
    }
    j["constraints"] = arr;
  }
  j["mode"] = mode_token(config.mode);
  const SolverConfig defaults;
  json solver;
  const ConvexSettings& cs = config.solver.convex;
  if (cs.eps_primal != defaults.convex.eps_primal) solver["eps_primal"] = cs.eps_primal;
  if (cs.eps_dual != defaults.convex.eps_dual) solver["eps_dual"] = cs.eps_dual;
  if (cs.max_iterations != defaults.convex.max_iterations)
    solver["max_iterations"] = cs.max_iterations;
  if (cs.rho != defaults.convex.rho) solver["rho"] = cs.rho;
  if (cs.rho_eq_scale != defaults.convex.rho_eq_scale)
    solver["rho_eq_scale"] = cs.rho_eq_scale;
  if (cs.sigma != defaults.convex.sigma) solver["sigma"] = cs.sigma;
  if (cs.alpha != defaults.convex.alpha) solver["alpha"] = cs.alpha;
  if (cs.check_interval != defaults.convex.check_interval)
    solver["check_interval"] = cs.check_interval;
  if (cs.polish != defaults.convex.polish) solver["polish"] = cs.polish;
  if (cs.adaptive_rho != defaults.convex.adaptive_rho)
    solver["adaptive_rho"] = cs.adaptive_rho;
  if (cs.eps_infeasible != defaults.convex.eps_infeasible)
    solver["eps_infeasible"] = cs.eps_infeasible;
  const VariableGainSettings& vs = config.solver.variable;
  if (vs.max_outer != defaults.variable.max_outer) solver["max_outer"] = vs.max_outer;
  if (vs.starts != defaults.variable.starts) solver["starts"] = vs.starts;
  if (vs.stationarity_tol != defaults.variable.stationarity_tol)
    solver["stationarity_tol"] = vs.stationarity_tol;
  if (vs.step_tol != defaults.variable.step_tol) solver["step_tol"] = vs.step_tol;
  if (vs.constraint_tol != defaults.variable.constraint_tol)
    solver["constraint_tol"] = vs.constraint_tol;
  if (!solver.empty()) j["solver"] = solver;
  json run;
  run["steps"] = config.run.steps;
  run["x0"] = vector_to_json(config.run.x0);
  run["seed"] = config.run.seed;
  run["samples"] = config.run.samples;
  run["validate_steps"] = config.run.validate_steps;
  run["decay_tolerance"] = config.run.decay_tolerance;
  j["run"] = run;
  j["output"] = {{"dir", config.output.dir}};
  return j.dump(2);
}

std::string mode_token(ControlMode mode) {
  switch (mode) {
    case ControlMode::full_chaos:
      return "full";
    case ControlMode::mean_fixed_gain:
      return "fixed-gain";
    case ControlMode::mean_variable_gain:
      return "variable-gain";
  }
  throw ConfigError("unsupported control mode");
}

ControlMode parse_mode(const std::string& token) {
  if (token == "full") return ControlMode::full_chaos;
  if (token == "fixed-gain") return ControlMode::mean_fixed_gain;
  if (token == "variable-gain") return ControlMode::mean_variable_gain;
  throw ConfigError("mode must be one of full, fixed-gain, variable-gain (got '" + token + "')");
}

// ---------------------------------------------------------------------------
// Matrix files
// ---------------------------------------------------------------------------

void write_matrix(const Eigen::MatrixXd& M, std::ostream& os) {
  os << M.rows() << " " << M.cols() << "\n";
  char buf[40];
  for (Eigen::Index r = 0; r < M.rows(); ++r) {
    for (Eigen::Index c = 0; c < M.cols(); ++c) {
      std::snprintf(buf, sizeof(buf), "%.17g", M(r, c));
      os << (c > 0 ? " " : "") << buf;
    }
    os << "\n";
  }
}

Eigen::MatrixXd read_matrix(std::istream& is) {
  Eigen::Index rows = 0, cols = 0;
  if (!(is >> rows >> cols) || rows < 0 || cols < 0)
    throw ConfigError("matrix file must start with 'rows cols'");
  Eigen::MatrixXd M(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c)
      if (!(is >> M(r, c)))
        throw ConfigError("matrix file ended before " + std::to_string(rows) + "x" +
                          std::to_string(cols) + " values were read");
  return M;
}

void write_matrix_file(const Eigen::MatrixXd& M, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw ConfigError("cannot open '" + path + "' for writing");
  write_matrix(M, os);
  if (!os) throw ConfigError("write to '" + path + "' failed");
}

Eigen::MatrixXd read_matrix_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open matrix file '" + path + "'");
  return read_matrix(is);
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

int cmd_project(const ExperimentConfig& config, std::ostream& log) {
  const auto dir = ensure_out_dir(config);
  ProjectionDiagnostics diag;
  const ChaosSystem chaos = make_chaos_system(config.system, config.order, &diag);

  write_matrix_file(chaos.Abold, (dir / "Abold.txt").string());
  write_matrix_file(chaos.Bbold, (dir / "Bbold.txt").string());
  write_matrix_file(chaos.tensors->W, (dir / "W.txt").string());
  write_matrix_file(chaos.tensors->F, (dir / "F.txt").string());
  for (int i = 0; i < chaos.blocks(); ++i)
    write_matrix_file(chaos.tensors->E[static_cast<std::size_t>(i)],
                      (dir / ("E" + std::to_string(i) + ".txt")).string());

  json meta;
  meta["n"] = chaos.n;
  meta["m"] = chaos.m;
  meta["d"] = config.system.d;
  meta["order"] = config.order;
  meta["p"] = chaos.blocks() - 1;
  meta["blocks"] = chaos.blocks();
  json indices = json::array();
  for (const MultiIndex& mi : chaos.basis->terms()) indices.push_back(mi.exponents);
  meta["multi_indices"] = indices;
  json files;
  files["Abold"] = "Abold.txt";
  files["Bbold"] = "Bbold.txt";
  files["W"] = "W.txt";
  files["F"] = "F.txt";
  json efiles = json::array();
  for (int i = 0; i < chaos.blocks(); ++i) efiles.push_back("E" + std::to_string(i) + ".txt");
  files["E"] = efiles;
  meta["files"] = files;
  meta["format"] =
      "plain text, first line 'rows cols', then row-major values at 17 significant digits";
  write_text_file(dir / "projection.json", meta.dump(2) + "\n");

  log << "projected order-" << config.order << " surrogate: Abold " << chaos.Abold.rows()
      << "x" << chaos.Abold.cols() << ", Bbold " << chaos.Bbold.rows() << "x"
      << chaos.Bbold.cols() << "\n";
  log << "wrote " << (dir / "projection.json").string() << "\n";
  return kExitOk;
}

namespace {

RHCProblem build_from_config(const ExperimentConfig& config, const ChaosSystem& chaos) {
  const ChaosState X0 = lifted_initial(chaos, config.run.x0);
  return build_problem(chaos, config.cost, config.constraints, config.mode, X0);
}

}  // namespace

int cmd_solve(const ExperimentConfig& config, std::ostream& log) {
  const auto dir = ensure_out_dir(config);
  const ChaosSystem chaos = make_chaos_system(config.system, config.order);
  const RHCProblem problem = build_from_config(config, chaos);
  const StepResult step = rhc_step(problem, engine_settings(config));

  json j;
  j["mode"] = mode_token(config.mode);
  j["status"] = to_string(step.report.status);
  j["degraded"] = step.degraded;
  j["objective"] = step.objective;
  j["iterations"] = step.report.iterations;
  j["residuals"] = {{"primal", step.report.residuals.primal},
                    {"dual", step.report.residuals.dual},
                    {"constraint_violation", step.report.residuals.constraint_violation}};
  j["notes"] = step.report.notes;
  if (!step.ubar_seq.empty()) {
    json ubar = json::array();
    for (const auto& u : step.ubar_seq) ubar.push_back(vector_to_json(u));
    j["ubar"] = ubar;
    json gains = json::array();
    for (const auto& K : step.gain_seq) gains.push_back(matrix_to_json(K));
    j["gains"] = gains;
    json U = json::array();
    for (const auto& u : step.U_seq) U.push_back(vector_to_json(u));
    j["U"] = U;
    json X = json::array();
    for (const auto& x : step.X_seq) X.push_back(vector_to_json(x));
    j["X"] = X;
  }
  write_text_file(dir / "solution.json", j.dump(2) + "\n");
  log << "horizon solve: " << to_string(step.report.status) << ", objective "
      << step.objective << "\n";
  log << "wrote " << (dir / "solution.json").string() << "\n";

  if (step.report.status == SolveStatus::optimal) return kExitOk;
  return kExitSolver;
}

int cmd_run(const ExperimentConfig& config, std::ostream& log) {
  const auto dir = ensure_out_dir(config);
  const ChaosSystem chaos = make_chaos_system(config.system, config.order);
  const RHCProblem problem = build_from_config(config, chaos);
  const PlantHandle plant = PlantHandle::surrogate(lifted_initial(chaos, config.run.x0));

  const ClosedLoopTrace trace =
      run_closed_loop(plant, problem, config.run.steps, engine_settings(config));
  const MomentDecayReport decay =
      check_moment_decay(trace, {1, 2, 3, 4}, config.run.decay_tolerance);

  {
    std::ofstream os(dir / "trace.csv");
    if (!os) throw ConfigError("cannot open trace.csv for writing");
    write_trace_csv(trace, problem, os);
  }
  write_text_file(dir / "summary.json", trace_summary_json(trace, problem, decay) + "\n");
  log << "wrote " << (dir / "trace.csv").string() << " and "
      << (dir / "summary.json").string() << "\n";

  if (trace.aborted) {
    log << "closed loop aborted: " << trace.abort_reason << "\n";
    return kExitSolver;
  }
  bool pass = true;
  if (trace.degraded) {
    log << "verdict: degraded solver steps present\n";
    pass = false;
  }
  if (!decay.all_decayed || !decay.all_bounded) {
    log << "verdict: moment decay check failed\n";
    pass = false;
  }
  if (!pass) return kExitVerdict;
  log << "verdict: pass (" << trace.records.size() - 1 << " steps, moments decayed)\n";
  return kExitOk;
}

int cmd_validate(const ExperimentConfig& config, int threads, std::ostream& log) {
  const auto dir = ensure_out_dir(config);
  const ChaosSystem chaos = make_chaos_system(config.system, config.order);
  const int steps = config.run.validate_steps;

  const ChaosState X0 = lifted_initial(chaos, config.run.x0);
  const std::vector<ChaosState> trajectory = propagate_open_loop(chaos, X0, steps);

  const SampleSet samples =
      sample_delta(config.system.marginals, config.run.samples, config.run.seed);
  const EnsemblePolicy policy = EnsemblePolicy::zero(chaos.m, chaos.basis, steps);
  const Ensemble ensemble =
      simulate_ensemble(config.system, samples, policy, steps, config.run.x0, threads);

  const MomentReport report =
      compare_moments(ensemble, trajectory, {1, 2}, *chaos.basis, *chaos.tensors);
  write_text_file(dir / "validate.json", to_json(report) + "\n");
  log << "wrote " << (dir / "validate.json").string() << "\n";

  const double worst = report.worst();
  log << "worst discrepancy over " << steps << " open-loop steps, M = "
      << config.run.samples << ": " << worst << " standard errors\n";
  if (worst <= 3.0) {
    log << "verdict: pass\n";
    return kExitOk;
  }
  log << "verdict: fail (discrepancy above 3 standard errors)\n";
  return kExitVerdict;
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const InfeasibleInitialError*>(&e) != nullptr) return kExitSolver;
  if (dynamic_cast<const SynthesisError*>(&e) != nullptr) return kExitSolver;
  if (dynamic_cast<const NumericError*>(&e) != nullptr) return kExitSolver;
  if (dynamic_cast<const ConfigError*>(&e) != nullptr) return kExitConfig;
  if (dynamic_cast<const DomainError*>(&e) != nullptr) return kExitConfig;
  if (dynamic_cast<const OverflowError*>(&e) != nullptr) return kExitConfig;
  if (dynamic_cast<const ConvexityError*>(&e) != nullptr) return kExitConfig;
  if (dynamic_cast<const LimitError*>(&e) != nullptr) return kExitConfig;
  return kExitSolver;
}

std::string config_schema() {
  return R"(Configuration file schema (JSON; unknown keys are rejected)

{
  "system": {                      required
    "n": int,                      state dimension
    "m": int,                      input dimension
    "d": int,                      number of uncertain parameters
    "marginals": [                 d entries, one per parameter
      {"kind": "uniform"}              uniform on [-1, 1]
      {"kind": "gaussian"}             standard normal
      {"kind": "gamma", "shape": s}    gamma, unit scale, s > 0
      {"kind": "beta", "alpha": a, "beta": b}   beta on [-1, 1], a, b > 0
    ],
    "A": [ {"exponents": [e1..ed], "coeff": [[..]] } , .. ],   n x n monomial coefficients
    "B": [ {"exponents": [e1..ed], "coeff": [[..]] } , .. ]    n x m monomial coefficients
  },
  "basis": { "order": int },       required; gPC total-degree truncation r >= 0
  "cost": {                        required
    "Q": [[..]],                   n x n symmetric positive definite
    "R": [[..]],                   m x m symmetric positive definite
    "horizon": int                 prediction horizon N >= 1
  },
  "constraints": [                 optional list
    {
      "kind": "expectation-quadratic-state" | "expectation-quadratic-control"
              | "variance-trace-state",
      "H": [[..]],                 optional symmetric quadratic term
      "G": [[g1..gz]],             optional single-row linear term
      "bound": number,
      "direction": "<=" | ">=",    default "<=" (variance supports "<=" only)
      "steps": [int..]             optional; default: every applicable step
    }
  ],
  "mode": "full" | "fixed-gain" | "variable-gain",   default "fixed-gain"
  "solver": {                      optional; omitted keys keep defaults
    "eps_primal", "eps_dual", "max_iterations", "rho", "rho_eq_scale",
    "sigma", "alpha", "check_interval", "polish", "adaptive_rho",
    "eps_infeasible",              convex inner solver
    "max_outer", "starts", "stationarity_tol", "step_tol", "constraint_tol"
  },
  "run": {                         required
    "steps": int,                  closed-loop steps for `run` (>= 1)
    "x0": [..],                    length-n initial state
    "seed": int,                   sampling / multi-start seed
    "samples": int,                Monte-Carlo ensemble size for `validate`
    "validate_steps": int,         open-loop steps compared in `validate`
    "decay_tolerance": number      relative moment-decay threshold for `run`
  },
  "output": { "dir": "path" }      optional; default "out"
}

Exit codes: 0 success, 2 configuration error, 3 solver failure, 4 verdict failure.
)";
}

}  // namespace pcrhc
