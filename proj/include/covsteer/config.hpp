#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "covsteer/covcon.hpp"
#include "covsteer/systems.hpp"

namespace covsteer {

/// Configuration problem: carries the offending field (or line, for malformed
/// JSON) in the message.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Inline linear time-invariant problem definition (continuous-time
/// matrices; F is the constant diffusion).
struct LtiSpec {
  Mat A;
  Mat B;
  Mat F;
};

/// Fully resolved run description: what problem to solve, with which solver
/// options, and which artifacts to write.
struct RunConfig {
  std::string problem;          // "cosine1d", "pendulum", "lq" or "lti"
  std::optional<LtiSpec> lti;   // present iff problem == "lti"
  double control_cost = 0.01;   // r in the running cost r·‖u‖²
  InitialCondition init;
  TerminalConstraint constraint;
  double T = 0.0;
  double dt = 0.0;
  CovControlOptions options;    // horizon/dt are synced from T, dt
  std::uint64_t seed = 0;
  std::vector<std::string> outputs;  // subset of known_outputs()
};

const std::vector<std::string>& known_outputs();

/// Config with every field filled from a named preset's defaults.
RunConfig config_from_preset(const std::string& preset_name);

/// Parse and validate a JSON config document. Unknown fields, wrong types,
/// missing required fields and out-of-range values all raise ConfigError
/// naming the field; malformed JSON raises ConfigError naming the line.
RunConfig parse_run_config(const std::string& json_text);

/// Normalized echo of a config with all defaults resolved; parsing the
/// output reproduces the config exactly.
std::string serialize_run_config(const RunConfig& config);

/// Materialize the model and cost for a config.
struct ResolvedRun {
  std::string name;
  ControlledSDE model;
  RunningCost running_cost;
  InitialCondition init;
  TerminalConstraint constraint;
  CovControlOptions options;  // horizon, dt, seed filled in
};

ResolvedRun resolve_run(const RunConfig& config);

}  // namespace covsteer
