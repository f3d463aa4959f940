#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "covsteer/config.hpp"
#include "covsteer/runner.hpp"
#include "json.hpp"

namespace {

covsteer::RunConfig load_config(const std::string& config_path,
                                const std::string& preset) {
  if (!config_path.empty()) {
    std::ifstream in(config_path);
    if (!in) {
      throw covsteer::ConfigError("cannot read config file " + config_path);
    }
    std::string text((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
    return covsteer::parse_run_config(text);
  }
  if (!preset.empty()) {
    try {
      return covsteer::config_from_preset(preset);
    } catch (const covsteer::StructuralError& e) {
      throw covsteer::ConfigError(e.what());
    }
  }
  throw covsteer::ConfigError("either --preset or --config is required");
}

void write_error_json(const std::string& out_dir, const std::string& what) {
  try {
    std::filesystem::create_directories(out_dir);
    std::ofstream out(std::filesystem::path(out_dir) / "result.json");
    nlohmann::json j;
    j["error"] = what;
    j["exit_code"] = 1;
    out << j.dump(2) << "\n";
  } catch (...) {
    // best effort; the error already goes to stderr
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Covariance steering for nonlinear stochastic systems"};
  app.require_subcommand(1);

  auto* run = app.add_subcommand(
      "run", "Solve a covariance-control problem and write result files");
  std::string preset, config_path, out_dir = "out", estimator;
  std::uint64_t seed = 0;
  int samples = 0, kappa = 0, max_outer = 0;
  double tol = 0.0;
  run->add_option("--preset", preset,
                  "Problem preset: cosine1d, pendulum or lq");
  run->add_option("--config", config_path, "JSON config file");
  run->add_option("--seed", seed, "Master RNG seed");
  run->add_option("--out-dir", out_dir, "Output directory (default: out)");
  run->add_option(
      "--samples", samples,
      "Monte-Carlo sample count (flat schedule); 0 selects the gaussian "
      "moment estimator");
  run->add_option("--kappa", kappa,
                  "Dynamics expansion order: 0 first, 1 second");
  run->add_option("--estimator", estimator, "Moment estimator: mc or gaussian");
  run->add_option("--max-outer", max_outer, "Outer-iteration cap");
  run->add_option("--tol", tol, "Constraint tolerance on both residuals");

  auto* validate = app.add_subcommand(
      "validate", "Check a config file and echo it with defaults resolved");
  std::string validate_path;
  validate->add_option("config", validate_path, "JSON config file")
      ->required();

  CLI11_PARSE(app, argc, argv);

  if (validate->parsed()) {
    return covsteer::validate_config_file(validate_path, std::cout);
  }

  try {
    covsteer::RunConfig config = load_config(config_path, preset);
    if (run->count("--seed")) config.seed = seed;
    if (run->count("--kappa")) config.options.kappa = kappa;
    if (run->count("--max-outer")) config.options.max_outer = max_outer;
    if (run->count("--tol")) config.options.tol_constraint = tol;
    if (run->count("--estimator")) {
      if (estimator == "mc") {
        config.options.estimator = covsteer::MomentEstimator::monte_carlo;
      } else if (estimator == "gaussian") {
        config.options.estimator = covsteer::MomentEstimator::gaussian;
      } else {
        throw covsteer::ConfigError("estimator must be \"mc\" or \"gaussian\"");
      }
    }
    if (run->count("--samples")) {
      if (samples == 0) {
        config.options.estimator = covsteer::MomentEstimator::gaussian;
      } else {
        config.options.samples_far = samples;
        config.options.samples_near = samples;
      }
    }
    return covsteer::run_config(config, out_dir, std::cout);
  } catch (const covsteer::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    write_error_json(out_dir, e.what());
    return 1;
  }
}
