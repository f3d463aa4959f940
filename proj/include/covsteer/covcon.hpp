#pragma once

#include <cstdint>
#include <vector>

#include "covsteer/sddp.hpp"
#include "covsteer/types.hpp"

namespace covsteer {

/// Target terminal mean and covariance.
struct TerminalConstraint {
  Vec mu_T;
  Mat Sigma_T;
};

/// Lagrange pair (λ, γ); γ must stay symmetric positive definite so the
/// terminal cost remains convex.
struct Multipliers {
  Vec lambda;
  Mat gamma;
};

/// Initial state distribution; Sigma_0 may be singular (deterministic start).
struct InitialCondition {
  Vec mu0;
  Mat Sigma0;
};

struct TerminalCostExpansion {
  double value = 0.0;
  Vec grad;
  Mat hess;
};

struct MultiplierGradients {
  Vec V_lambda;
  Mat V_gamma;
};

enum class MomentEstimator { monte_carlo, gaussian };

struct CovControlOptions {
  int horizon = 0;
  double dt = 0.0;
  int kappa = 0;
  double eta1 = 0.5;
  double eta2 = 0.5;
  double eta_floor_factor = 1.0 / 65536.0;  // lower bound on step shrinkage
  int samples_far = 80;
  int samples_near = 800;
  double near_threshold = 0.1;  // residual level switching the schedule
  double tol_constraint = 0.01;
  int max_outer = 300;
  std::uint64_t seed = 0;
  double pd_epsilon = 1e-6;
  double grad_clip = 100.0;  // entrywise bound on the dual gradients
  MomentEstimator estimator = MomentEstimator::monte_carlo;
  Vec lambda0;   // defaults to zeros
  Mat gamma0;    // defaults to 0.1·I
  SddpOptions sddp;
};

/// Per-outer-iteration trace entry. A step is "accepted" when the
/// common-random-number dual estimate did not decrease, so the multiplier
/// update proceeded at the current step sizes.
struct OuterIterationRecord {
  int iteration = 0;
  double residual_mean = 0.0;  // ‖Ê[x(T)] − μ_T‖_∞
  double residual_cov = 0.0;   // max-abs entry of the second-moment residual
  double dual_estimate = 0.0;
  bool accepted = true;
  int n_samples = 0;
  double eta1 = 0.0;
  double eta2 = 0.0;
  Vec lambda;  // multipliers the iteration's solve used
  Mat gamma;
};

struct CovControlResult {
  Trajectory trajectory;
  Policy policy;
  Multipliers multipliers;
  Vec terminal_mean_est;
  Mat terminal_cov_est;
  double residual_mean = 0.0;
  double residual_cov = 0.0;
  int outer_iterations = 0;
  std::vector<int> sample_counts_used;
  bool converged = false;
  SddpDiagnostics last_sddp;
  std::vector<OuterIterationRecord> trace;
};

/// Exact quadratic expansion of the multiplier-parameterized terminal cost
///   λᵀ(x − μ_T) + tr(γᵀ(xxᵀ − μ_Tμ_Tᵀ − Σ_T))
/// at x: value, gradient λ + 2γx and Hessian 2γ. Throws StructuralError if
/// gamma is not symmetric (symmetrize upstream, never here).
TerminalCostExpansion terminal_cost_expansion(const Multipliers& mult,
                                              const TerminalConstraint& constraint,
                                              const Vec& x);

/// Dual gradients from terminal-moment estimates:
///   V_λ = Ê[x(T)] − μ_T,  V_γ = sym(Ê[x(T)x(T)ᵀ] − μ_Tμ_Tᵀ − Σ_T).
MultiplierGradients multiplier_gradients(const Vec& mean_est,
                                         const Mat& second_moment_est,
                                         const TerminalConstraint& constraint);

/// Eigenvalue clip onto the positive-definite cone: symmetrize, then raise
/// eigenvalues below epsilon up to epsilon.
Mat project_pd(const Mat& m, double epsilon = 1e-6);

/// Gradient-ascent step λ' = λ + η₁V_λ, γ' = project_pd(γ + η₂V_γ).
Multipliers update_multipliers(const Multipliers& mult,
                               const MultiplierGradients& grads, double eta1,
                               double eta2, double pd_epsilon = 1e-6);

/// Sampling-stream seed a solve derives from its master seed; every outer
/// iteration reuses it so dual estimates share common random numbers.
std::uint64_t rollout_stream_seed(std::uint64_t master_seed);

/// Full primal-dual loop: alternate fixed-multiplier trajectory optimization,
/// terminal-moment estimation under the converged feedback policy, and dual
/// ascent with positive-definite projection of γ.
CovControlResult solve_covariance_control(const ControlledSDE& model,
                                          const RunningCost& running_cost,
                                          const InitialCondition& init,
                                          const TerminalConstraint& constraint,
                                          const CovControlOptions& options);

}  // namespace covsteer
