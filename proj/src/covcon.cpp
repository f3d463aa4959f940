#include "covsteer/covcon.hpp"

#include <cmath>
#include <limits>

#include "covsteer/rng.hpp"
#include "covsteer/rollout.hpp"

namespace covsteer {

namespace {

TerminalExpansionFn make_terminal(const Multipliers& mult,
                                  const TerminalConstraint& constraint) {
  return [mult, constraint](const Vec& x) {
    TerminalCostExpansion e = terminal_cost_expansion(mult, constraint, x);
    return ValueExpansion{e.value, e.grad, e.hess};
  };
}

// Sample-average Lagrangian: running cost along each sampled path (controls
// reconstructed from the feedback law) plus the multiplier terminal cost.
double lagrangian_estimate_mc(const SampleBatch& batch, const Policy& policy,
                              const RunningCost& running_cost,
                              const Multipliers& mult,
                              const TerminalConstraint& constraint) {
  const int N = policy.horizon();
  const double dt = policy.nominal.dt;
  double total = 0.0;
  for (const Mat& path : batch.full_paths) {
    double acc = 0.0;
    for (int i = 0; i < N; ++i) {
      const Vec x = path.row(i).transpose();
      const Vec u = policy.nominal.controls[i] +
                    policy.K[i] * (x - policy.nominal.states[i]);
      acc += running_cost.value(x, u) * dt;
    }
    const Vec xT = path.row(N).transpose();
    acc += terminal_cost_expansion(mult, constraint, xT).value;
    total += acc;
  }
  return total / static_cast<double>(batch.full_paths.size());
}

double expected_terminal_cost(const Multipliers& mult,
                              const TerminalConstraint& constraint,
                              const Vec& mean, const Mat& second_moment) {
  return mult.lambda.dot(mean - constraint.mu_T) +
         (mult.gamma.transpose() *
          (second_moment - constraint.mu_T * constraint.mu_T.transpose() -
           constraint.Sigma_T))
             .trace();
}

}  // namespace

TerminalCostExpansion terminal_cost_expansion(
    const Multipliers& mult, const TerminalConstraint& constraint,
    const Vec& x) {
  const int n = static_cast<int>(x.size());
  if (mult.lambda.size() != n || mult.gamma.rows() != n ||
      mult.gamma.cols() != n || constraint.mu_T.size() != n ||
      constraint.Sigma_T.rows() != n) {
    throw StructuralError("terminal_cost_expansion: dimension mismatch");
  }
  if (max_abs(mult.gamma - mult.gamma.transpose()) > 1e-9) {
    throw StructuralError("terminal_cost_expansion: gamma must be symmetric");
  }

  TerminalCostExpansion e;
  e.value = mult.lambda.dot(x - constraint.mu_T) +
            (mult.gamma.transpose() *
             (x * x.transpose() - constraint.mu_T * constraint.mu_T.transpose() -
              constraint.Sigma_T))
                .trace();
  e.grad = mult.lambda + 2.0 * mult.gamma * x;
  e.hess = 2.0 * mult.gamma;
  return e;
}

MultiplierGradients multiplier_gradients(const Vec& mean_est,
                                         const Mat& second_moment_est,
                                         const TerminalConstraint& constraint) {
  if (mean_est.size() != constraint.mu_T.size() ||
      second_moment_est.rows() != constraint.Sigma_T.rows()) {
    throw StructuralError("multiplier_gradients: dimension mismatch");
  }
  MultiplierGradients g;
  g.V_lambda = mean_est - constraint.mu_T;
  g.V_gamma =
      symmetrized(second_moment_est -
                  constraint.mu_T * constraint.mu_T.transpose() -
                  constraint.Sigma_T);
  return g;
}

Mat project_pd(const Mat& m, double epsilon) {
  const Mat sym = symmetrized(m);
  Eigen::SelfAdjointEigenSolver<Mat> eig(sym);
  if (eig.eigenvalues().minCoeff() >= epsilon) {
    return sym;  // already inside the cone; leave untouched
  }
  Vec vals = eig.eigenvalues().cwiseMax(epsilon);
  return symmetrized(eig.eigenvectors() * vals.asDiagonal() *
                     eig.eigenvectors().transpose());
}

std::uint64_t rollout_stream_seed(std::uint64_t master_seed) {
  return splitmix64(master_seed ^ 0x636f76ULL);
}

Multipliers update_multipliers(const Multipliers& mult,
                               const MultiplierGradients& grads, double eta1,
                               double eta2, double pd_epsilon) {
  if (eta1 < 0.0 || eta1 > 1.0 || eta2 < 0.0 || eta2 > 1.0) {
    throw StructuralError("update_multipliers: eta must be in [0, 1]");
  }
  Multipliers out;
  out.lambda = mult.lambda + eta1 * grads.V_lambda;
  out.gamma = project_pd(mult.gamma + eta2 * grads.V_gamma, pd_epsilon);
  return out;
}

CovControlResult solve_covariance_control(const ControlledSDE& model,
                                          const RunningCost& running_cost,
                                          const InitialCondition& init,
                                          const TerminalConstraint& constraint,
                                          const CovControlOptions& options) {
  const int n = model.state_dim;
  const int m = model.control_dim;
  if (options.horizon <= 0 || options.dt <= 0.0) {
    throw StructuralError("solve_covariance_control: horizon and dt required");
  }
  if (options.kappa != 0 && options.kappa != 1) {
    throw StructuralError("solve_covariance_control: kappa must be 0 or 1");
  }

  Multipliers mult;
  mult.lambda = options.lambda0.size() ? options.lambda0 : Vec::Zero(n);
  mult.gamma = options.gamma0.size()
                   ? Mat(options.gamma0)
                   : Mat(0.1 * Mat::Identity(n, n));
  mult.gamma = project_pd(mult.gamma, options.pd_epsilon);

  SddpProblem problem;
  problem.model = model;
  problem.running_cost = running_cost;
  problem.x0 = init.mu0;
  problem.horizon = options.horizon;
  problem.dt = options.dt;
  problem.kappa = options.kappa;

  std::vector<Vec> u_warm(options.horizon, Vec::Zero(m));

  // One sampling seed for every outer iteration: common random numbers make
  // successive dual estimates directly comparable and the outer loop a
  // deterministic ascent on the sample-average dual.
  const std::uint64_t rollout_seed = rollout_stream_seed(options.seed);

  // Heavy-tailed multiplicative noise can blow up a slice of the samples
  // while the multipliers are still far from dual-feasible. Sampling is
  // allowed to lose up to a quarter of a batch so a rejected iterate can
  // still be inspected, but only clean batches (≤1% diverged) are ever
  // accepted as dual iterates: survivor-only moments say nothing about a
  // second moment that the true process may not even possess.
  RolloutOptions sampling;
  sampling.keep_paths = true;
  sampling.max_divergence_fraction = 0.25;

  double eta1 = options.eta1;
  double eta2 = options.eta2;
  const double eta1_floor = options.eta1 * options.eta_floor_factor;
  const double eta2_floor = options.eta2 * options.eta_floor_factor;

  // Last accepted dual iterate; rejected proposals are retried from here
  // with halved step sizes, and the inner solver is re-warm-started from the
  // anchor's controls so a proposal's evaluation does not depend on the
  // rejected solves in between.
  Multipliers anchor = mult;
  MultiplierGradients anchor_grads;
  std::vector<Vec> anchor_controls = u_warm;
  double g_anchor = -std::numeric_limits<double>::infinity();
  int anchor_samples = -1;
  bool have_anchor = false;
  bool schedule_near = false;  // one-way: the schedule never drops back
  int rejection_streak = 0;

  CovControlResult result;
  result.multipliers = mult;
  result.terminal_mean_est =
      Vec::Constant(n, std::numeric_limits<double>::quiet_NaN());
  result.terminal_cov_est =
      Mat::Constant(n, n, std::numeric_limits<double>::quiet_NaN());
  result.residual_mean = std::numeric_limits<double>::infinity();
  result.residual_cov = std::numeric_limits<double>::infinity();

  for (int outer = 1; outer <= options.max_outer; ++outer) {
    problem.terminal = make_terminal(mult, constraint);
    SddpSolution sol = solve_sddp(problem, u_warm, options.sddp);
    u_warm = sol.trajectory.controls;

    const int n_used =
        schedule_near ? options.samples_near : options.samples_far;

    Vec mean_est;
    Mat second_est;
    Mat cov_est;
    double g_now = 0.0;
    int diverged = 0;
    bool batch_ok = true;

    if (options.estimator == MomentEstimator::monte_carlo) {
      try {
        SampleBatch batch = sample_closed_loop(model, sol.policy, init,
                                               n_used, rollout_seed, sampling);
        diverged = batch.divergence_count;
        MomentEstimate est = estimate_moments(batch);
        mean_est = est.mean;
        second_est = est.second_moment;
        cov_est = est.covariance;
        g_now = lagrangian_estimate_mc(batch, sol.policy, running_cost, mult,
                                       constraint);
      } catch (const RolloutDivergenceError&) {
        batch_ok = false;
      }
    } else {
      const auto moments = propagate_moments_gaussian(model, sol.policy, init);
      mean_est = moments.back().first;
      cov_est = moments.back().second;
      second_est = cov_est + mean_est * mean_est.transpose();
      const double nominal_running =
          sol.trajectory.cost - problem.terminal(sol.trajectory.states.back()).V;
      g_now = nominal_running +
              expected_terminal_cost(mult, constraint, mean_est, second_est);
    }

    // A proposal is accepted when its batch is clean and its
    // common-random-number dual estimate did not fall below the anchor's
    // (a schedule switch rebaselines the estimate). Small batches tolerate a
    // single excluded sample; a heavy-tailed initial draw can be doomed under
    // any policy.
    const int allowed_diverged =
        std::max(1, static_cast<int>(std::floor(0.01 * n_used)));
    bool accept = batch_ok && diverged <= allowed_diverged;
    if (accept && have_anchor && n_used == anchor_samples) {
      accept = g_now >= g_anchor - 1e-9 * std::max(1.0, std::abs(g_anchor));
    }

    OuterIterationRecord rec;
    rec.iteration = outer;
    rec.accepted = accept;
    rec.n_samples = n_used;
    rec.dual_estimate =
        batch_ok ? g_now : -std::numeric_limits<double>::infinity();
    rec.lambda = mult.lambda;
    rec.gamma = mult.gamma;
    result.sample_counts_used.push_back(n_used);

    if (accept) {
      rejection_streak = 0;
      MultiplierGradients grads =
          multiplier_gradients(mean_est, second_est, constraint);
      grads.V_lambda = grads.V_lambda.cwiseMax(-options.grad_clip)
                           .cwiseMin(options.grad_clip);
      grads.V_gamma = grads.V_gamma.cwiseMax(-options.grad_clip)
                          .cwiseMin(options.grad_clip);

      const double res_mean = grads.V_lambda.lpNorm<Eigen::Infinity>();
      const double res_cov = max_abs(grads.V_gamma);
      rec.residual_mean = res_mean;
      rec.residual_cov = res_cov;
      rec.eta1 = eta1;
      rec.eta2 = eta2;
      result.trace.push_back(rec);

      result.trajectory = sol.trajectory;
      result.policy = sol.policy;
      result.multipliers = mult;
      result.terminal_mean_est = mean_est;
      result.terminal_cov_est = cov_est;
      result.residual_mean = res_mean;
      result.residual_cov = res_cov;
      result.outer_iterations = outer;
      result.last_sddp = sol.diagnostics;

      if (res_mean < options.tol_constraint &&
          res_cov < options.tol_constraint) {
        result.converged = true;
        break;
      }

      // A sign flip of a gradient between accepted iterates means that
      // multiplier overshot its stationary point; its step halves even when
      // the dual estimate kept increasing.
      if (have_anchor && n_used == anchor_samples) {
        if (grads.V_lambda.dot(anchor_grads.V_lambda) < 0.0) {
          eta1 = std::max(eta1 * 0.5, eta1_floor);
        }
        if ((grads.V_gamma.array() * anchor_grads.V_gamma.array()).sum() <
            0.0) {
          eta2 = std::max(eta2 * 0.5, eta2_floor);
        }
      }

      anchor = mult;
      anchor_grads = grads;
      anchor_controls = sol.trajectory.controls;
      g_anchor = g_now;
      anchor_samples = n_used;
      anchor_residual = std::max(res_mean, res_cov);
      have_anchor = true;

      mult = update_multipliers(anchor, grads, eta1, eta2,
                                options.pd_epsilon);
    } else {
      rec.residual_mean = std::numeric_limits<double>::infinity();
      rec.residual_cov = std::numeric_limits<double>::infinity();
      if (batch_ok) {
        rec.residual_mean =
            (mean_est - constraint.mu_T).lpNorm<Eigen::Infinity>();
        rec.residual_cov = max_abs(
            second_est - constraint.mu_T * constraint.mu_T.transpose() -
            constraint.Sigma_T);
      }
      eta1 = std::max(eta1 * 0.5, eta1_floor);
      eta2 = std::max(eta2 * 0.5, eta2_floor);
      rec.eta1 = eta1;
      rec.eta2 = eta2;
      result.trace.push_back(rec);

      u_warm = anchor_controls;
      if (have_anchor) {
        mult = update_multipliers(anchor, anchor_grads, eta1, eta2,
                                  options.pd_epsilon);
      } else if (batch_ok) {
        // No baseline yet: take a provisional step from the survivor
        // moments; their second moment is biased low but points the right
        // way, and the clip bounds the damage.
        MultiplierGradients grads =
            multiplier_gradients(mean_est, second_est, constraint);
        grads.V_lambda = grads.V_lambda.cwiseMax(-options.grad_clip)
                             .cwiseMin(options.grad_clip);
        grads.V_gamma = grads.V_gamma.cwiseMax(-options.grad_clip)
                            .cwiseMin(options.grad_clip);
        mult = update_multipliers(mult, grads, eta1, eta2,
                                  options.pd_epsilon);
      } else {
        // Sampling collapsed outright and there is no anchor to fall back
        // on; only a stiffer terminal cost can restore sampleability.
        mult.gamma = project_pd(2.0 * mult.gamma, options.pd_epsilon);
      }

      // A long rejection streak means the anchor's dual estimate is not
      // reachable anymore (a near-degenerate inner problem can make the
      // solution map jump between branches); drop the baseline and let the
      // next clean iterate re-anchor the ascent.
      if (++rejection_streak >= 12) {
        have_anchor = false;
        g_anchor = -std::numeric_limits<double>::infinity();
        rejection_streak = 0;
      }
    }
  }

  return result;
}

}  // namespace covsteer
