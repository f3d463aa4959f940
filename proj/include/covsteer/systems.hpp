#pragma once

#include <cstdint>
#include <string>

#include "covsteer/covcon.hpp"
#include "covsteer/dynamics.hpp"
#include "covsteer/sddp.hpp"

namespace covsteer {

struct Horizon {
  double T = 0.0;
  double dt = 0.0;
  int steps = 0;  // N = T/dt, integral
};

/// A packaged benchmark problem: model, cost, boundary distributions and
/// solver defaults.
struct ProblemPreset {
  std::string name;
  ControlledSDE model;
  RunningCost running_cost;
  double control_cost_r = 0.0;  // r in the running cost r·‖u‖²
  InitialCondition init;
  TerminalConstraint constraint;
  Horizon horizon;
  CovControlOptions default_options;
};

/// Scalar system dx = cos(x) dt + u dt + x² dω steered from N(0, 0.25) to
/// mean 0 and covariance 0.03 over T = 1 s at dt = 10 ms, control cost
/// 1e-4·u².
ProblemPreset preset_cosine1d();

/// Pendulum swing-up dx₁ = x₂ dt, dx₂ = 4 sin(x₁) dt + u dt + 0.04·u dω,
/// from (−π, 0) to the inverted position (0, 0) over T = 4 s at dt = 10 ms,
/// control cost 0.01·u². Boundary covariances default to 0.01·I and are
/// meant to be overridden when a specific experiment needs them.
ProblemPreset preset_pendulum();

/// Linear-Gaussian test problem with additive noise and analytic closed-loop
/// moment propagation. (n, m) = (2, 1) gives the canonical double
/// integrator; other shapes draw a seeded random stable pair.
ProblemPreset preset_linear_gaussian(int n = 2, int m = 1,
                                     std::uint64_t seed = 0);

/// Look up a preset by CLI name: "cosine1d", "pendulum" or "lq".
ProblemPreset preset_by_name(const std::string& name);

/// LTI model dx = (A x + B u) dt + F dω with analytic derivatives.
ControlledSDE make_lti_model(const Mat& A, const Mat& B, const Mat& F);

}  // namespace covsteer
