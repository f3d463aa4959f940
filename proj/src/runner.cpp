#include "covsteer/runner.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <vector>

#include "covsteer/rollout.hpp"
#include "json.hpp"

namespace covsteer {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

bool wants(const RunConfig& config, const std::string& artifact) {
  return std::find(config.outputs.begin(), config.outputs.end(), artifact) !=
         config.outputs.end();
}

std::ofstream open_file(const fs::path& path) {
  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("cannot open output file " + path.string());
  }
  return out;
}

std::vector<std::string> write_nominal_csv(const fs::path& path,
                                           const Trajectory& traj) {
  const int n = static_cast<int>(traj.states.front().size());
  const int m = static_cast<int>(traj.controls.front().size());

  std::vector<std::string> columns;
  columns.push_back("t");
  for (int i = 0; i < n; ++i) columns.push_back("x" + std::to_string(i));
  for (int i = 0; i < m; ++i) columns.push_back("u" + std::to_string(i));

  std::ofstream out = open_file(path);
  for (std::size_t c = 0; c < columns.size(); ++c) {
    out << (c ? "," : "") << columns[c];
  }
  out << "\n";
  for (int i = 0; i <= traj.horizon(); ++i) {
    out << fmt(i * traj.dt);
    for (int j = 0; j < n; ++j) out << "," << fmt(traj.states[i](j));
    for (int j = 0; j < m; ++j) {
      // last row has no control; filled with zeros
      out << "," << fmt(i < traj.horizon() ? traj.controls[i](j) : 0.0);
    }
    out << "\n";
  }
  return columns;
}

std::vector<std::string> write_gains_csv(const fs::path& path,
                                         const Policy& policy) {
  const int m = static_cast<int>(policy.K.front().rows());
  const int n = static_cast<int>(policy.K.front().cols());

  std::vector<std::string> columns;
  columns.push_back("t");
  for (int r = 0; r < m; ++r) {
    for (int c = 0; c < n; ++c) {
      columns.push_back("K" + std::to_string(r) + "_" + std::to_string(c));
    }
  }

  std::ofstream out = open_file(path);
  for (std::size_t c = 0; c < columns.size(); ++c) {
    out << (c ? "," : "") << columns[c];
  }
  out << "\n";
  for (int i = 0; i < policy.horizon(); ++i) {
    out << fmt(i * policy.nominal.dt);
    for (int r = 0; r < m; ++r) {
      for (int c = 0; c < n; ++c) out << "," << fmt(policy.K[i](r, c));
    }
    out << "\n";
  }
  return columns;
}

std::vector<std::string> write_samples_csv(const fs::path& path,
                                           const SampleBatch& batch,
                                           double dt) {
  const int n = static_cast<int>(batch.terminal_states.cols());

  std::vector<std::string> columns;
  columns.push_back("sample");
  columns.push_back("t");
  for (int i = 0; i < n; ++i) columns.push_back("x" + std::to_string(i));

  std::ofstream out = open_file(path);
  for (std::size_t c = 0; c < columns.size(); ++c) {
    out << (c ? "," : "") << columns[c];
  }
  out << "\n";
  for (std::size_t s = 0; s < batch.full_paths.size(); ++s) {
    const Mat& p = batch.full_paths[s];
    for (int i = 0; i < p.rows(); ++i) {
      out << s << "," << fmt(i * dt);
      for (int j = 0; j < n; ++j) out << "," << fmt(p(i, j));
      out << "\n";
    }
  }
  return columns;
}

std::vector<std::string> write_moments_csv(
    const fs::path& path, const std::vector<std::pair<Vec, Mat>>& moments,
    double dt) {
  const int n = static_cast<int>(moments.front().first.size());

  std::vector<std::string> columns;
  columns.push_back("t");
  for (int i = 0; i < n; ++i) columns.push_back("mean" + std::to_string(i));
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) {
      columns.push_back("cov" + std::to_string(r) + "_" + std::to_string(c));
    }
  }

  std::ofstream out = open_file(path);
  for (std::size_t c = 0; c < columns.size(); ++c) {
    out << (c ? "," : "") << columns[c];
  }
  out << "\n";
  for (std::size_t i = 0; i < moments.size(); ++i) {
    out << fmt(i * dt);
    for (int j = 0; j < n; ++j) out << "," << fmt(moments[i].first(j));
    for (int r = 0; r < n; ++r) {
      for (int c = 0; c < n; ++c) out << "," << fmt(moments[i].second(r, c));
    }
    out << "\n";
  }
  return columns;
}

std::vector<std::string> write_multipliers_csv(
    const fs::path& path, const std::vector<OuterIterationRecord>& trace) {
  const int n = static_cast<int>(trace.front().lambda.size());

  std::vector<std::string> columns = {"iteration",   "n_samples",
                                      "accepted",    "eta1",
                                      "eta2",        "dual_estimate",
                                      "residual_mean", "residual_cov"};
  for (int i = 0; i < n; ++i) {
    columns.push_back("lambda" + std::to_string(i));
  }
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) {
      columns.push_back("gamma" + std::to_string(r) + "_" + std::to_string(c));
    }
  }

  std::ofstream out = open_file(path);
  for (std::size_t c = 0; c < columns.size(); ++c) {
    out << (c ? "," : "") << columns[c];
  }
  out << "\n";
  for (const OuterIterationRecord& rec : trace) {
    out << rec.iteration << "," << rec.n_samples << ","
        << (rec.accepted ? 1 : 0) << "," << fmt(rec.eta1) << ","
        << fmt(rec.eta2) << "," << fmt(rec.dual_estimate) << ","
        << fmt(rec.residual_mean) << "," << fmt(rec.residual_cov);
    for (int i = 0; i < n; ++i) out << "," << fmt(rec.lambda(i));
    for (int r = 0; r < n; ++r) {
      for (int c = 0; c < n; ++c) out << "," << fmt(rec.gamma(r, c));
    }
    out << "\n";
  }
  return columns;
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

// Per-step sample moments across the retained paths (population convention).
std::vector<std::pair<Vec, Mat>> path_moments(const SampleBatch& batch) {
  const int steps = static_cast<int>(batch.full_paths.front().rows());
  const int n = static_cast<int>(batch.full_paths.front().cols());
  const int count = static_cast<int>(batch.full_paths.size());

  std::vector<std::pair<Vec, Mat>> moments;
  moments.reserve(steps);
  for (int i = 0; i < steps; ++i) {
    Vec mean = Vec::Zero(n);
    for (const Mat& p : batch.full_paths) mean += p.row(i).transpose();
    mean /= count;
    Mat cov = Mat::Zero(n, n);
    for (const Mat& p : batch.full_paths) {
      const Vec d = p.row(i).transpose() - mean;
      cov += d * d.transpose();
    }
    cov /= count;
    moments.emplace_back(std::move(mean), symmetrized(cov));
  }
  return moments;
}

}  // namespace

int run_config(const RunConfig& config, const std::string& out_dir,
               std::ostream& log) {
  const ResolvedRun run = resolve_run(config);
  fs::create_directories(out_dir);
  const fs::path dir(out_dir);

  CovControlResult result = solve_covariance_control(
      run.model, run.running_cost, run.init, run.constraint, run.options);

  json columns;

  if (wants(config, "nominal")) {
    columns["nominal.csv"] =
        write_nominal_csv(dir / "nominal.csv", result.trajectory);
  }
  if (wants(config, "gains")) {
    columns["gains.csv"] = write_gains_csv(dir / "gains.csv", result.policy);
  }

  const bool monte_carlo =
      run.options.estimator == MomentEstimator::monte_carlo;
  if (monte_carlo && (wants(config, "samples") || wants(config, "moments"))) {
    RolloutOptions ro;
    ro.keep_paths = true;
    const SampleBatch batch = sample_closed_loop(
        run.model, result.policy, run.init, run.options.samples_near,
        rollout_stream_seed(config.seed), ro);
    if (wants(config, "samples")) {
      columns["samples.csv"] =
          write_samples_csv(dir / "samples.csv", batch, run.options.dt);
    }
    if (wants(config, "moments")) {
      columns["moments.csv"] = write_moments_csv(
          dir / "moments.csv", path_moments(batch), run.options.dt);
    }
  } else if (wants(config, "moments")) {
    columns["moments.csv"] = write_moments_csv(
        dir / "moments.csv",
        propagate_moments_gaussian(run.model, result.policy, run.init),
        run.options.dt);
  }

  if (wants(config, "multipliers") && !result.trace.empty()) {
    columns["multipliers.csv"] =
        write_multipliers_csv(dir / "multipliers.csv", result.trace);
  }

  const int exit_code = result.converged ? 0 : 2;

  json summary;
  summary["problem"] = run.name;
  summary["seed"] = config.seed;
  summary["estimator"] = monte_carlo ? "mc" : "gaussian";
  summary["converged"] = result.converged;
  summary["exit_code"] = exit_code;
  summary["iterations"] = {
      {"outer", result.outer_iterations},
      {"sddp_last", result.last_sddp.iterations},
      {"sddp_last_converged", result.last_sddp.converged}};
  summary["residuals"] = {{"mean", result.residual_mean},
                          {"cov", result.residual_cov},
                          {"tolerance", run.options.tol_constraint}};
  summary["multipliers"] = {{"lambda", vec_to_json(result.multipliers.lambda)},
                            {"gamma", mat_to_json(result.multipliers.gamma)}};
  summary["terminal"] = {
      {"mean_estimate", vec_to_json(result.terminal_mean_est)},
      {"cov_estimate", mat_to_json(result.terminal_cov_est)},
      {"target_mean", vec_to_json(run.constraint.mu_T)},
      {"target_cov", mat_to_json(run.constraint.Sigma_T)}};
  summary["sample_counts"] = result.sample_counts_used;
  summary["columns"] = columns;

  {
    std::ofstream out = open_file(dir / "result.json");
    out << summary.dump(2) << "\n";
  }

  log << "problem " << run.name << ": "
      << (result.converged ? "converged" : "not converged") << " after "
      << result.outer_iterations
      << " outer iterations (residual mean " << result.residual_mean
      << ", cov " << result.residual_cov << ")\n";
  return exit_code;
}

int validate_config_file(const std::string& path, std::ostream& out) {
  std::ifstream in(path);
  if (!in) {
    out << "error: cannot read " << path << "\n";
    return 1;
  }
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  try {
    const RunConfig config = parse_run_config(text);
    resolve_run(config);  // semantic checks (horizon, PD targets, ...)
    out << serialize_run_config(config);
    return 0;
  } catch (const ConfigError& e) {
    out << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace covsteer
