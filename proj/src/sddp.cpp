#include "covsteer/sddp.hpp"

#include <cmath>
#include <limits>

namespace covsteer {

NoiseCorrections NoiseCorrections::zero(int n, int m) {
  NoiseCorrections c;
  c.S_tilde = Vec::Zero(n);
  c.U_tilde = Vec::Zero(m);
  c.F_tilde = Mat::Zero(n, n);
  c.L_tilde = Mat::Zero(n, m);
  c.Z_tilde = Mat::Zero(m, m);
  c.M_tilde = Mat::Zero(n, n);
  c.N_tilde = Mat::Zero(n, m);
  c.G_tilde = Mat::Zero(m, m);
  return c;
}

RunningCost control_quadratic_cost(int state_dim, int control_dim, double r) {
  RunningCost cost;
  cost.value = [r](const Vec&, const Vec& u) { return r * u.squaredNorm(); };
  cost.derivs = [state_dim, control_dim, r](const Vec&, const Vec& u) {
    RunningCostDerivs d;
    d.lx = Vec::Zero(state_dim);
    d.lu = 2.0 * r * u;
    d.lxx = Mat::Zero(state_dim, state_dim);
    d.luu = 2.0 * r * Mat::Identity(control_dim, control_dim);
    d.lux = Mat::Zero(control_dim, state_dim);
    return d;
  };
  return cost;
}

RunningCost quadratic_cost(const Mat& Q, const Mat& R) {
  const int n = static_cast<int>(Q.rows());
  const int m = static_cast<int>(R.rows());
  RunningCost cost;
  cost.value = [Q, R](const Vec& x, const Vec& u) {
    return 0.5 * x.dot(Q * x) + 0.5 * u.dot(R * u);
  };
  cost.derivs = [Q, R, n, m](const Vec& x, const Vec& u) {
    RunningCostDerivs d;
    d.lx = Q * x;
    d.lu = R * u;
    d.lxx = Q;
    d.luu = R;
    d.lux = Mat::Zero(m, n);
    return d;
  };
  return cost;
}

NoiseCorrections noise_corrections(const LocalModel& local,
                                   const ValueExpansion& v_next, double dt) {
  const int n = static_cast<int>(local.A.rows());
  const int m = static_cast<int>(local.B.cols());
  const int p = static_cast<int>(local.Gamma0.cols());

  if (v_next.Vxx.rows() != n || v_next.Vxx.cols() != n) {
    throw StructuralError("noise_corrections: Vxx dimension mismatch");
  }
  if (static_cast<int>(local.Gamma_dx.size()) != p ||
      static_cast<int>(local.Gamma_du.size()) != p) {
    throw StructuralError("noise_corrections: diffusion Jacobian count");
  }

  NoiseCorrections c = NoiseCorrections::zero(n, m);
  const Mat& Vxx = v_next.Vxx;

  for (int i = 0; i < p; ++i) {
    const Vec g0 = local.Gamma0.col(i);
    const Mat& gx = local.Gamma_dx[i];
    const Mat& gu = local.Gamma_du[i];
    if (gx.rows() != n || gx.cols() != n || gu.rows() != n || gu.cols() != m) {
      throw StructuralError("noise_corrections: channel Jacobian dimensions");
    }
    const Mat gxtV = gx.transpose() * Vxx;
    const Mat gutV = gu.transpose() * Vxx;
    c.S_tilde += gxtV * g0;
    c.U_tilde += gutV * g0;
    c.M_tilde += gxtV * gx;
    c.N_tilde += gxtV * gu;
    c.G_tilde += gutV * gu;
  }

  c.S_tilde *= dt;
  c.U_tilde *= dt;
  c.M_tilde *= dt;
  c.N_tilde *= dt;
  c.G_tilde *= dt;
  return c;
}

QExpansion q_expansion(const LocalModel& local, const RunningCostDerivs& cost,
                       const ValueExpansion& v_next, int kappa, double dt) {
  const int n = static_cast<int>(local.A.rows());
  const int m = static_cast<int>(local.B.cols());

  if (cost.lx.size() != n || cost.lu.size() != m || cost.lxx.rows() != n ||
      cost.luu.rows() != m || cost.lux.rows() != m || cost.lux.cols() != n) {
    throw StructuralError("q_expansion: cost derivative dimensions");
  }
  if (v_next.Vx.size() != n) {
    throw StructuralError("q_expansion: Vx dimension mismatch");
  }

  QExpansion q;
  q.corrections = noise_corrections(local, v_next, dt);

  q.Qx = cost.lx + local.A.transpose() * v_next.Vx + q.corrections.S_tilde;
  q.Qu = cost.lu + local.B.transpose() * v_next.Vx + q.corrections.U_tilde;
  q.Qxx = cost.lxx + local.A.transpose() * v_next.Vxx * local.A +
          q.corrections.M_tilde;
  q.Quu = cost.luu + local.B.transpose() * v_next.Vxx * local.B +
          q.corrections.G_tilde;
  q.Qux = cost.lux + local.B.transpose() * v_next.Vxx * local.A +
          q.corrections.N_tilde.transpose();

  if (kappa == 1) {
    if (!local.second_order) {
      throw StructuralError("q_expansion: kappa=1 requires second_order");
    }
    const DriftHessians& h = *local.second_order;  // already scaled by dt
    for (int a = 0; a < n; ++a) {
      const double w = v_next.Vx(a);
      q.Qxx += w * h.fxx[a];
      q.Quu += w * h.fuu[a];
      q.Qux += w * h.fux[a];
    }
  }

  q.Qxx = symmetrized(q.Qxx);
  q.Quu = symmetrized(q.Quu);
  return q;
}

Trajectory rollout_nominal(const SddpProblem& problem,
                           const std::vector<Vec>& controls) {
  if (static_cast<int>(controls.size()) != problem.horizon) {
    throw StructuralError("rollout_nominal: control sequence length");
  }
  Trajectory traj;
  traj.dt = problem.dt;
  traj.states.reserve(problem.horizon + 1);
  traj.controls = controls;
  traj.states.push_back(problem.x0);

  double cost = 0.0;
  Vec x = problem.x0;
  for (int i = 0; i < problem.horizon; ++i) {
    const Vec& u = controls[i];
    cost += problem.running_cost.value(x, u) * problem.dt;
    x = x + eval_drift(problem.model, x, u) * problem.dt;
    if (!x.allFinite()) {
      throw RolloutDivergenceError("nominal rollout diverged", i);
    }
    traj.states.push_back(x);
  }
  cost += problem.terminal(x).V;
  traj.cost = cost;
  return traj;
}

BackwardPassResult backward_pass(const SddpProblem& problem,
                                 const Trajectory& traj, double reg,
                                 const SddpOptions& options) {
  const int n = problem.model.state_dim;
  const int m = problem.model.control_dim;
  const int N = problem.horizon;

  if (traj.horizon() != N ||
      static_cast<int>(traj.states.size()) != N + 1) {
    throw StructuralError("backward_pass: trajectory/horizon mismatch");
  }

  // Local models and cost derivatives do not depend on the regularization,
  // so they survive a restart of the sweep.
  std::vector<LocalModel> locals;
  std::vector<RunningCostDerivs> costs;
  std::vector<double> stage_cost(N);
  locals.reserve(N);
  costs.reserve(N);
  for (int i = 0; i < N; ++i) {
    locals.push_back(discretize_linearize(problem.model, traj.states[i],
                                          traj.controls[i], problem.dt,
                                          problem.kappa));
    RunningCostDerivs d =
        problem.running_cost.derivs(traj.states[i], traj.controls[i]);
    d.lx *= problem.dt;
    d.lu *= problem.dt;
    d.lxx *= problem.dt;
    d.luu *= problem.dt;
    d.lux *= problem.dt;
    costs.push_back(std::move(d));
    stage_cost[i] =
        problem.running_cost.value(traj.states[i], traj.controls[i]) *
        problem.dt;
  }

  double mu = reg;
  BackwardPassResult result;
  result.policy.k.assign(N, Vec::Zero(m));
  result.policy.K.assign(N, Mat::Zero(m, n));
  result.policy.nominal = traj;

  for (;;) {
    std::vector<ValueExpansion> values(N + 1);
    values[N] = problem.terminal(traj.states[N]);
    values[N].Vxx = symmetrized(values[N].Vxx);
    double expected_improvement = 0.0;
    bool restart = false;

    for (int i = N - 1; i >= 0; --i) {
      const ValueExpansion& v = values[i + 1];
      QExpansion q =
          q_expansion(locals[i], costs[i], v, problem.kappa, problem.dt);

      Mat quu_reg = q.Quu + mu * Mat::Identity(m, m);
      Eigen::LLT<Mat> llt(quu_reg);
      if (llt.info() != Eigen::Success) {
        mu = (mu == 0.0) ? options.reg_min : mu * 10.0;
        if (mu > options.reg_max) {
          throw RegularizationFailureError(
              "Quu not positive definite within regularization budget", i);
        }
        restart = true;
        break;
      }

      const Vec k = -llt.solve(q.Qu);
      const Mat K = -llt.solve(q.Qux);
      result.policy.k[i] = k;
      result.policy.K[i] = K;
      expected_improvement += -0.5 * k.dot(q.Qu);

      // State-independent part of E[V(next)]: ½·dt·Σᵢ Γ0ᵢᵀ Vxx Γ0ᵢ. It does
      // not move the gains but keeps V the expected cost-to-go.
      double noise_const = 0.0;
      for (int c = 0; c < locals[i].Gamma0.cols(); ++c) {
        const Vec g0 = locals[i].Gamma0.col(c);
        noise_const += 0.5 * problem.dt * g0.dot(v.Vxx * g0);
      }

      // Value recursion written with the actual gains so it stays exact
      // under regularization; reduces to V − ½QuᵀQuu⁻¹Qu etc. at mu = 0.
      const Mat Qxu = q.Qux.transpose();
      ValueExpansion v_new;
      v_new.V = v.V + stage_cost[i] + noise_const + k.dot(q.Qu) +
                0.5 * k.dot(q.Quu * k);
      v_new.Vx = q.Qx + K.transpose() * (q.Quu * k) + K.transpose() * q.Qu +
                 Qxu * k;
      v_new.Vxx = q.Qxx + K.transpose() * q.Quu * K + K.transpose() * q.Qux +
                  Qxu * K;
      v_new.Vxx = symmetrized(v_new.Vxx);
      values[i] = std::move(v_new);
    }

    if (!restart) {
      result.expected_improvement = expected_improvement;
      result.regularization = mu;
      result.values = std::move(values);
      return result;
    }
  }
}

Trajectory forward_pass(const SddpProblem& problem, const Trajectory& traj,
                        const Policy& policy, double alpha) {
  if (alpha < 0.0 || alpha > 1.0) {
    throw StructuralError("forward_pass: alpha must be in [0, 1]");
  }
  const int N = problem.horizon;
  if (policy.horizon() != N) {
    throw StructuralError("forward_pass: policy/horizon mismatch");
  }

  Trajectory out;
  out.dt = problem.dt;
  out.states.reserve(N + 1);
  out.controls.reserve(N);
  out.states.push_back(problem.x0);

  double cost = 0.0;
  Vec x = problem.x0;
  for (int i = 0; i < N; ++i) {
    Vec u = traj.controls[i] + alpha * policy.k[i] +
            policy.K[i] * (x - traj.states[i]);
    cost += problem.running_cost.value(x, u) * problem.dt;
    x = x + eval_drift(problem.model, x, u) * problem.dt;
    if (!x.allFinite()) {
      throw RolloutDivergenceError("forward pass diverged", i);
    }
    out.controls.push_back(std::move(u));
    out.states.push_back(x);
  }
  cost += problem.terminal(x).V;
  out.cost = cost;
  return out;
}

SddpSolution solve_sddp(const SddpProblem& problem,
                        const std::vector<Vec>& u_init,
                        const SddpOptions& options) {
  SddpSolution sol;
  sol.trajectory = rollout_nominal(problem, u_init);
  sol.diagnostics.cost_trace.push_back(sol.trajectory.cost);

  double mu = options.reg_initial;
  bool cost_settled = false;
  bool policy_fresh = false;  // true while policy is anchored to trajectory

  for (int iter = 1; iter <= options.max_iterations; ++iter) {
    sol.diagnostics.iterations = iter;

    BackwardPassResult bp = backward_pass(problem, sol.trajectory, mu, options);
    mu = bp.regularization;
    sol.policy = std::move(bp.policy);
    policy_fresh = true;
    sol.diagnostics.expected_improvement = bp.expected_improvement;

    double gain_norm = 0.0;
    for (const Vec& k : sol.policy.k) {
      gain_norm = std::max(gain_norm, k.lpNorm<Eigen::Infinity>());
    }
    sol.diagnostics.final_gain_norm = gain_norm;

    if (gain_norm < options.tol_gain) {
      sol.diagnostics.converged = true;
      sol.diagnostics.stop_reason = "feedforward below tolerance";
      break;
    }
    if (cost_settled) {
      sol.diagnostics.converged = true;
      sol.diagnostics.stop_reason = "relative cost change below tolerance";
      break;
    }

    bool accepted = false;
    double alpha = 1.0;
    for (int ls = 0; ls < options.line_search_steps; ++ls, alpha *= 0.5) {
      Trajectory candidate;
      try {
        candidate = forward_pass(problem, sol.trajectory, sol.policy, alpha);
      } catch (const RolloutDivergenceError&) {
        continue;
      }
      if (candidate.cost < sol.trajectory.cost) {
        const double change =
            std::abs(sol.trajectory.cost - candidate.cost) /
            std::max(1.0, std::abs(sol.trajectory.cost));
        cost_settled = change < options.tol_cost_rel;
        sol.trajectory = std::move(candidate);
        accepted = true;
        policy_fresh = false;
        break;
      }
    }

    sol.diagnostics.cost_trace.push_back(sol.trajectory.cost);
    sol.diagnostics.regularization = mu;

    if (accepted) {
      mu = (mu * 0.5 < options.reg_min) ? 0.0 : mu * 0.5;
    } else {
      mu = (mu == 0.0) ? options.reg_min : mu * 10.0;
      if (mu > options.reg_max) {
        sol.diagnostics.stop_reason = "line search stalled";
        break;
      }
    }

    if (iter == options.max_iterations) {
      sol.diagnostics.stop_reason = "iteration cap reached";
    }
  }

  if (!policy_fresh) {
    BackwardPassResult bp = backward_pass(problem, sol.trajectory, mu, options);
    mu = bp.regularization;
    sol.policy = std::move(bp.policy);
  }

  sol.diagnostics.regularization = mu;
  return sol;
}

}  // namespace covsteer
