#pragma once

#include <functional>
#include <string>
#include <vector>

#include "covsteer/dynamics.hpp"
#include "covsteer/types.hpp"

namespace covsteer {

/// Noise-free nominal trajectory: N+1 states, N controls, and the total
/// objective under the current terminal cost.
struct Trajectory {
  std::vector<Vec> states;
  std::vector<Vec> controls;
  double dt = 0.0;
  double cost = 0.0;

  int horizon() const { return static_cast<int>(controls.size()); }
};

/// Quadratic local model of the cost-to-go at one time step.
struct ValueExpansion {
  double V = 0.0;
  Vec Vx;
  Mat Vxx;
};

/// Expectation-over-noise contributions to the Q expansion. Under the
/// first-order diffusion model F_tilde, L_tilde and Z_tilde (which would
/// carry second derivatives of the diffusion) are identically zero; they are
/// kept so the expansion's shape matches its derivation.
struct NoiseCorrections {
  Vec S_tilde;   // n
  Vec U_tilde;   // m
  Mat F_tilde;   // n×n
  Mat L_tilde;   // n×m
  Mat Z_tilde;   // m×m
  Mat M_tilde;   // n×n
  Mat N_tilde;   // n×m
  Mat G_tilde;   // m×m

  static NoiseCorrections zero(int n, int m);
};

/// Quadratic local model of the action-value function.
struct QExpansion {
  Vec Qx;
  Vec Qu;
  Mat Qxx;
  Mat Quu;
  Mat Qux;
  NoiseCorrections corrections;
};

/// Per-timestep affine feedback δu = k + K δx anchored to a nominal.
struct Policy {
  std::vector<Vec> k;
  std::vector<Mat> K;
  Trajectory nominal;

  int horizon() const { return static_cast<int>(k.size()); }
};

/// Running cost derivatives at one point, per unit time (the backward pass
/// scales them by dt before forming the Q expansion).
struct RunningCostDerivs {
  Vec lx;
  Vec lu;
  Mat lxx;
  Mat luu;
  Mat lux;
};

struct RunningCost {
  std::function<double(const Vec&, const Vec&)> value;
  std::function<RunningCostDerivs(const Vec&, const Vec&)> derivs;
};

/// Control-effort cost r·‖u‖² (per unit time).
RunningCost control_quadratic_cost(int state_dim, int control_dim, double r);

/// General quadratic cost ½ xᵀQx + ½ uᵀRu (per unit time).
RunningCost quadratic_cost(const Mat& Q, const Mat& R);

/// Exact quadratic expansion of the terminal cost at a state.
using TerminalExpansionFn = std::function<ValueExpansion(const Vec&)>;

/// One fixed-multiplier trajectory-optimization problem instance.
struct SddpProblem {
  ControlledSDE model;
  RunningCost running_cost;
  TerminalExpansionFn terminal;
  Vec x0;
  int horizon = 0;
  double dt = 0.0;
  int kappa = 0;
};

struct SddpOptions {
  int max_iterations = 200;
  double tol_gain = 1e-6;       // convergence on max_i ‖k(i)‖_∞
  double tol_cost_rel = 1e-9;   // secondary: relative cost change
  double reg_initial = 0.0;     // escalates from reg_min on first failure
  double reg_min = 1e-6;
  double reg_max = 1e10;
  int line_search_steps = 11;   // alpha ∈ {1, 1/2, …, 2^-10}
};

struct SddpDiagnostics {
  int iterations = 0;
  bool converged = false;
  std::string stop_reason;
  double final_gain_norm = 0.0;
  double expected_improvement = 0.0;
  double regularization = 0.0;
  std::vector<double> cost_trace;
};

struct BackwardPassResult {
  Policy policy;
  double expected_improvement = 0.0;
  double regularization = 0.0;  // value of mu actually used
  std::vector<ValueExpansion> values;  // N+1 entries, [N] is the terminal
};

struct SddpSolution {
  Trajectory trajectory;
  Policy policy;
  SddpDiagnostics diagnostics;
};

/// Expectation-over-ξ contributions to the Q expansion from the quadratic
/// form ξᵀΓᵀ Vxx Γ ξ and its cross terms, with E[ξξᵀ] = dt·I.
NoiseCorrections noise_corrections(const LocalModel& local,
                                   const ValueExpansion& v_next, double dt);

/// Assemble the Q expansion at one step. Running-cost derivatives must
/// already be scaled by dt.
QExpansion q_expansion(const LocalModel& local, const RunningCostDerivs& cost,
                       const ValueExpansion& v_next, int kappa, double dt);

/// Noise-free propagation of a control sequence from problem.x0, with the
/// total objective evaluated under the problem's terminal cost.
Trajectory rollout_nominal(const SddpProblem& problem,
                           const std::vector<Vec>& controls);

/// Backward sweep: builds gains and the value recursion. The regularization
/// escalates (×10, restarting the sweep) until every Quu + mu·I admits a
/// Cholesky factorization; throws RegularizationFailureError past reg_max.
BackwardPassResult backward_pass(const SddpProblem& problem,
                                 const Trajectory& traj, double reg,
                                 const SddpOptions& options = {});

/// Forward sweep with step scaling alpha ∈ [0, 1]:
///   u(i) = ū(i) + α·k(i) + K(i)(x(i) − x̄(i)).
/// Throws RolloutDivergenceError on a non-finite state.
Trajectory forward_pass(const SddpProblem& problem, const Trajectory& traj,
                        const Policy& policy, double alpha);

/// Iterate backward/forward passes with backtracking line search until the
/// feedforward terms vanish or the iteration cap is reached.
SddpSolution solve_sddp(const SddpProblem& problem,
                        const std::vector<Vec>& u_init,
                        const SddpOptions& options = {});

}  // namespace covsteer
