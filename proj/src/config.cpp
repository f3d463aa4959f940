#include "covsteer/config.hpp"

#include <algorithm>
#include <cmath>

#include "json.hpp"

namespace covsteer {

namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& message) {
  throw ConfigError(message);
}

const json& require_field(const json& j, const std::string& key,
                          const std::string& path) {
  if (!j.contains(key)) fail(path + " required");
  return j.at(key);
}

double get_number(const json& j, const std::string& path) {
  if (!j.is_number()) fail(path + " must be a number");
  return j.get<double>();
}

double field_number(const json& j, const std::string& key,
                    const std::string& path, double fallback) {
  if (!j.contains(key)) return fallback;
  return get_number(j.at(key), path);
}

int field_int(const json& j, const std::string& key, const std::string& path,
              int fallback) {
  if (!j.contains(key)) return fallback;
  if (!j.at(key).is_number_integer()) fail(path + " must be an integer");
  return j.at(key).get<int>();
}

Vec vec_from_json(const json& j, const std::string& path) {
  if (!j.is_array() || j.empty()) fail(path + " must be a non-empty array");
  Vec v(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) fail(path + " must contain numbers");
    v(static_cast<int>(i)) = j[i].get<double>();
  }
  return v;
}

Mat mat_from_json(const json& j, const std::string& path) {
  if (!j.is_array() || j.empty()) {
    fail(path + " must be a non-empty array of rows");
  }
  const std::size_t cols = j[0].is_array() ? j[0].size() : 0;
  if (cols == 0) fail(path + " rows must be non-empty arrays");
  Mat m(j.size(), cols);
  for (std::size_t r = 0; r < j.size(); ++r) {
    if (!j[r].is_array() || j[r].size() != cols) {
      fail(path + " rows must all have the same length");
    }
    for (std::size_t c = 0; c < cols; ++c) {
      if (!j[r][c].is_number()) fail(path + " must contain numbers");
      m(static_cast<int>(r), static_cast<int>(c)) = j[r][c].get<double>();
    }
  }
  return m;
}

json vec_to_json(const Vec& v) {
  json j = json::array();
  for (int i = 0; i < v.size(); ++i) j.push_back(v(i));
  return j;
}

json mat_to_json(const Mat& m) {
  json j = json::array();
  for (int r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (int c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    j.push_back(row);
  }
  return j;
}

void reject_unknown_keys(const json& j, const std::string& section,
                         std::initializer_list<const char*> known) {
  for (const auto& item : j.items()) {
    if (std::find_if(known.begin(), known.end(), [&](const char* k) {
          return item.key() == k;
        }) == known.end()) {
      fail("unknown field " +
           (section.empty() ? item.key() : section + "." + item.key()));
    }
  }
}

std::string estimator_name(MomentEstimator e) {
  return e == MomentEstimator::monte_carlo ? "mc" : "gaussian";
}

MomentEstimator estimator_from_name(const std::string& s) {
  if (s == "mc") return MomentEstimator::monte_carlo;
  if (s == "gaussian") return MomentEstimator::gaussian;
  fail("solver.estimator must be \"mc\" or \"gaussian\"");
}

int horizon_steps(double T, double dt) {
  if (dt <= 0.0) fail("dt must be positive");
  if (T <= 0.0) fail("T must be positive");
  const double ratio = T / dt;
  const int steps = static_cast<int>(std::lround(ratio));
  if (steps < 1 || std::abs(steps * dt - T) > 1e-9 * std::max(1.0, T)) {
    fail("T must be an integer multiple of dt");
  }
  return steps;
}

void validate_config(const RunConfig& cfg) {
  const int n = static_cast<int>(cfg.init.mu0.size());
  if (n == 0) fail("init.mu0 required");
  if (cfg.init.Sigma0.rows() != n || cfg.init.Sigma0.cols() != n) {
    fail("init.Sigma0 must be " + std::to_string(n) + "x" + std::to_string(n));
  }
  if (cfg.constraint.mu_T.size() != n) fail("constraint.mu_T required");
  if (cfg.constraint.Sigma_T.rows() != n ||
      cfg.constraint.Sigma_T.cols() != n) {
    fail("constraint.Sigma_T required");
  }

  if (max_abs(cfg.init.Sigma0 - cfg.init.Sigma0.transpose()) > 1e-9) {
    fail("init.Sigma0 must be symmetric");
  }
  Eigen::SelfAdjointEigenSolver<Mat> eig0(symmetrized(cfg.init.Sigma0));
  if (eig0.eigenvalues().minCoeff() < -1e-10) {
    fail("init.Sigma0 must be positive semidefinite");
  }
  if (max_abs(cfg.constraint.Sigma_T - cfg.constraint.Sigma_T.transpose()) >
      1e-9) {
    fail("constraint.Sigma_T must be symmetric");
  }
  Eigen::SelfAdjointEigenSolver<Mat> eigT(symmetrized(cfg.constraint.Sigma_T));
  if (eigT.eigenvalues().minCoeff() <= 0.0) {
    fail("constraint.Sigma_T must be positive definite");
  }

  horizon_steps(cfg.T, cfg.dt);  // throws on bad T/dt

  if (cfg.control_cost < 0.0) fail("problem.control_cost must be >= 0");
  if (cfg.options.kappa != 0 && cfg.options.kappa != 1) {
    fail("kappa must be 0 or 1");
  }
  if (cfg.options.eta1 < 0.0 || cfg.options.eta1 > 1.0) {
    fail("solver.eta1 must be in [0, 1]");
  }
  if (cfg.options.eta2 < 0.0 || cfg.options.eta2 > 1.0) {
    fail("solver.eta2 must be in [0, 1]");
  }
  if (cfg.options.tol_constraint <= 0.0) fail("solver.tol must be positive");
  if (cfg.options.near_threshold <= 0.0) {
    fail("solver.near_threshold must be positive");
  }
  if (cfg.options.pd_epsilon <= 0.0) {
    fail("solver.pd_epsilon must be positive");
  }
  if (cfg.options.max_outer < 1) fail("solver.max_outer must be >= 1");
  if (cfg.options.estimator == MomentEstimator::monte_carlo &&
      (cfg.options.samples_far < 2 || cfg.options.samples_near < 2)) {
    fail("solver.samples_far and solver.samples_near must be >= 2");
  }
  if (cfg.options.sddp.max_iterations < 1) {
    fail("solver.sddp_max_iterations must be >= 1");
  }
  if (cfg.options.sddp.tol_gain <= 0.0) {
    fail("solver.sddp_tol_gain must be positive");
  }
  if (cfg.options.lambda0.size() != 0 && cfg.options.lambda0.size() != n) {
    fail("solver.lambda0 has the wrong dimension");
  }
  if (cfg.options.gamma0.size() != 0 &&
      (cfg.options.gamma0.rows() != n || cfg.options.gamma0.cols() != n)) {
    fail("solver.gamma0 has the wrong dimension");
  }

  if (cfg.problem == "lti") {
    if (!cfg.lti) fail("problem.A required");
    const LtiSpec& s = *cfg.lti;
    if (s.A.rows() != n || s.A.cols() != n) {
      fail("problem.A must be " + std::to_string(n) + "x" + std::to_string(n));
    }
    if (s.B.rows() != n || s.B.cols() < 1) fail("problem.B required");
    if (s.F.rows() != n) fail("problem.F must have one row per state");
  }

  for (const std::string& out : cfg.outputs) {
    const auto& known = known_outputs();
    if (std::find(known.begin(), known.end(), out) == known.end()) {
      fail("outputs contains unknown artifact \"" + out + "\"");
    }
  }
}

}  // namespace

const std::vector<std::string>& known_outputs() {
  static const std::vector<std::string> outputs = {
      "nominal", "gains", "samples", "moments", "multipliers"};
  return outputs;
}

RunConfig config_from_preset(const std::string& preset_name) {
  const ProblemPreset preset = preset_by_name(preset_name);
  RunConfig cfg;
  cfg.problem = preset.name;
  cfg.control_cost = preset.control_cost_r;
  cfg.init = preset.init;
  cfg.constraint = preset.constraint;
  cfg.T = preset.horizon.T;
  cfg.dt = preset.horizon.dt;
  cfg.options = preset.default_options;
  cfg.outputs = known_outputs();
  return cfg;
}

RunConfig parse_run_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    std::size_t line = 1;
    const std::size_t stop = std::min(e.byte, json_text.size());
    for (std::size_t i = 0; i < stop; ++i) {
      if (json_text[i] == '\n') ++line;
    }
    fail("malformed config at line " + std::to_string(line) + ": " + e.what());
  }

  if (!j.is_object()) fail("config root must be an object");
  reject_unknown_keys(j, "", {"problem", "solver", "seed", "outputs"});

  const json& problem = require_field(j, "problem", "problem");
  if (!problem.is_object()) fail("problem must be an object");
  reject_unknown_keys(problem, "problem",
                      {"preset", "type", "A", "B", "F", "control_cost", "T",
                       "dt", "init", "constraint"});

  RunConfig cfg;
  if (problem.contains("preset")) {
    if (!problem.at("preset").is_string()) {
      fail("problem.preset must be a string");
    }
    const std::string name = problem.at("preset").get<std::string>();
    try {
      cfg = config_from_preset(name);
    } catch (const StructuralError& e) {
      fail(std::string("problem.preset: ") + e.what());
    }
  } else {
    const json& type = require_field(problem, "type", "problem.type");
    if (!type.is_string() || type.get<std::string>() != "lti") {
      fail("problem.type must be \"lti\" (or use problem.preset)");
    }
    cfg.problem = "lti";
    LtiSpec spec;
    spec.A = mat_from_json(require_field(problem, "A", "problem.A"),
                           "problem.A");
    spec.B = mat_from_json(require_field(problem, "B", "problem.B"),
                           "problem.B");
    if (problem.contains("F")) {
      spec.F = mat_from_json(problem.at("F"), "problem.F");
    } else {
      spec.F = Mat::Zero(spec.A.rows(), 1);
    }
    cfg.lti = std::move(spec);
    cfg.outputs = known_outputs();
  }

  if (problem.contains("control_cost")) {
    cfg.control_cost = get_number(problem.at("control_cost"),
                                  "problem.control_cost");
  }
  cfg.T = field_number(problem, "T", "problem.T", cfg.T);
  cfg.dt = field_number(problem, "dt", "problem.dt", cfg.dt);

  if (problem.contains("init")) {
    const json& init = problem.at("init");
    if (!init.is_object()) fail("problem.init must be an object");
    reject_unknown_keys(init, "problem.init", {"mu0", "Sigma0"});
    if (init.contains("mu0")) {
      cfg.init.mu0 = vec_from_json(init.at("mu0"), "init.mu0");
    }
    if (init.contains("Sigma0")) {
      cfg.init.Sigma0 = mat_from_json(init.at("Sigma0"), "init.Sigma0");
    }
  }
  if (problem.contains("constraint")) {
    const json& constraint = problem.at("constraint");
    if (!constraint.is_object()) fail("problem.constraint must be an object");
    reject_unknown_keys(constraint, "problem.constraint", {"mu_T", "Sigma_T"});
    if (constraint.contains("mu_T")) {
      cfg.constraint.mu_T =
          vec_from_json(constraint.at("mu_T"), "constraint.mu_T");
    }
    if (constraint.contains("Sigma_T")) {
      cfg.constraint.Sigma_T =
          mat_from_json(constraint.at("Sigma_T"), "constraint.Sigma_T");
    }
  }

  if (j.contains("solver")) {
    const json& solver = j.at("solver");
    if (!solver.is_object()) fail("solver must be an object");
    reject_unknown_keys(
        solver, "solver",
        {"kappa", "eta1", "eta2", "eta_floor_factor", "tol", "max_outer",
         "samples_far", "samples_near", "near_threshold", "estimator",
         "pd_epsilon", "lambda0", "gamma0", "sddp_max_iterations",
         "sddp_tol_gain"});
    CovControlOptions& o = cfg.options;
    o.kappa = field_int(solver, "kappa", "solver.kappa", o.kappa);
    o.eta1 = field_number(solver, "eta1", "solver.eta1", o.eta1);
    o.eta2 = field_number(solver, "eta2", "solver.eta2", o.eta2);
    o.eta_floor_factor = field_number(solver, "eta_floor_factor",
                                      "solver.eta_floor_factor",
                                      o.eta_floor_factor);
    o.tol_constraint = field_number(solver, "tol", "solver.tol",
                                    o.tol_constraint);
    o.max_outer = field_int(solver, "max_outer", "solver.max_outer",
                            o.max_outer);
    o.samples_far = field_int(solver, "samples_far", "solver.samples_far",
                              o.samples_far);
    o.samples_near = field_int(solver, "samples_near", "solver.samples_near",
                               o.samples_near);
    o.near_threshold = field_number(solver, "near_threshold",
                                    "solver.near_threshold", o.near_threshold);
    o.pd_epsilon = field_number(solver, "pd_epsilon", "solver.pd_epsilon",
                                o.pd_epsilon);
    if (solver.contains("estimator")) {
      if (!solver.at("estimator").is_string()) {
        fail("solver.estimator must be a string");
      }
      o.estimator =
          estimator_from_name(solver.at("estimator").get<std::string>());
    }
    if (solver.contains("lambda0")) {
      o.lambda0 = vec_from_json(solver.at("lambda0"), "solver.lambda0");
    }
    if (solver.contains("gamma0")) {
      o.gamma0 = mat_from_json(solver.at("gamma0"), "solver.gamma0");
    }
    o.sddp.max_iterations =
        field_int(solver, "sddp_max_iterations", "solver.sddp_max_iterations",
                  o.sddp.max_iterations);
    o.sddp.tol_gain = field_number(solver, "sddp_tol_gain",
                                   "solver.sddp_tol_gain", o.sddp.tol_gain);
  }

  if (j.contains("seed")) {
    if (!j.at("seed").is_number_integer()) fail("seed must be an integer");
    cfg.seed = j.at("seed").get<std::uint64_t>();
  }
  if (j.contains("outputs")) {
    if (!j.at("outputs").is_array()) fail("outputs must be an array");
    cfg.outputs.clear();
    for (const auto& item : j.at("outputs")) {
      if (!item.is_string()) fail("outputs must contain strings");
      cfg.outputs.push_back(item.get<std::string>());
    }
  }

  validate_config(cfg);
  return cfg;
}

std::string serialize_run_config(const RunConfig& config) {
  const int n = static_cast<int>(config.init.mu0.size());

  json problem;
  if (config.problem == "lti") {
    problem["type"] = "lti";
    problem["A"] = mat_to_json(config.lti->A);
    problem["B"] = mat_to_json(config.lti->B);
    problem["F"] = mat_to_json(config.lti->F);
  } else {
    problem["preset"] = config.problem;
  }
  problem["control_cost"] = config.control_cost;
  problem["T"] = config.T;
  problem["dt"] = config.dt;
  problem["init"] = {{"mu0", vec_to_json(config.init.mu0)},
                     {"Sigma0", mat_to_json(config.init.Sigma0)}};
  problem["constraint"] = {
      {"mu_T", vec_to_json(config.constraint.mu_T)},
      {"Sigma_T", mat_to_json(config.constraint.Sigma_T)}};

  const CovControlOptions& o = config.options;
  json solver;
  solver["kappa"] = o.kappa;
  solver["eta1"] = o.eta1;
  solver["eta2"] = o.eta2;
  solver["eta_floor_factor"] = o.eta_floor_factor;
  solver["tol"] = o.tol_constraint;
  solver["max_outer"] = o.max_outer;
  solver["samples_far"] = o.samples_far;
  solver["samples_near"] = o.samples_near;
  solver["near_threshold"] = o.near_threshold;
  solver["estimator"] = estimator_name(o.estimator);
  solver["pd_epsilon"] = o.pd_epsilon;
  solver["lambda0"] = vec_to_json(
      o.lambda0.size() ? o.lambda0 : Vec(Vec::Zero(n)));
  solver["gamma0"] = mat_to_json(
      o.gamma0.size() ? o.gamma0 : Mat(0.1 * Mat::Identity(n, n)));
  solver["sddp_max_iterations"] = o.sddp.max_iterations;
  solver["sddp_tol_gain"] = o.sddp.tol_gain;

  json root;
  root["problem"] = problem;
  root["solver"] = solver;
  root["seed"] = config.seed;
  root["outputs"] = config.outputs;
  return root.dump(2) + "\n";
}

ResolvedRun resolve_run(const RunConfig& config) {
  validate_config(config);

  ResolvedRun run;
  run.name = config.problem;
  if (config.problem == "lti") {
    run.model = make_lti_model(config.lti->A, config.lti->B, config.lti->F);
  } else {
    run.model = preset_by_name(config.problem).model;
  }
  run.running_cost = control_quadratic_cost(
      run.model.state_dim, run.model.control_dim, config.control_cost);
  run.init = config.init;
  run.constraint = config.constraint;
  run.options = config.options;
  run.options.horizon = horizon_steps(config.T, config.dt);
  run.options.dt = config.dt;
  run.options.seed = config.seed;
  return run;
}

}  // namespace covsteer
