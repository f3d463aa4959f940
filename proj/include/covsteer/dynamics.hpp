#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "covsteer/types.hpp"

namespace covsteer {

/// First derivatives of the drift: fx = ∇x f (n×n), fu = ∇u f (n×m).
struct DriftJacobians {
  Mat fx;
  Mat fu;
};

/// Per-channel Jacobians of the diffusion columns:
/// dx[i] = ∇x F_c^(i) (n×n), du[i] = ∇u F_c^(i) (n×m), p entries each.
struct DiffusionJacobians {
  std::vector<Mat> dx;
  std::vector<Mat> du;
};

/// Second derivatives of the drift, one slice per state equation:
/// fxx[a] = ∂²f_a/∂x∂x (n×n), fuu[a] = ∂²f_a/∂u∂u (m×m),
/// fux[a] = ∂²f_a/∂u∂x (m×n).
struct DriftHessians {
  std::vector<Mat> fxx;
  std::vector<Mat> fuu;
  std::vector<Mat> fux;
};

/// Model contract for the controlled SDE  dx = f(x,u) dt + F(x,u) dω,
/// with x ∈ R^n, u ∈ R^m and ω an R^p Brownian motion.
///
/// drift and diffusion are required. The derivative callbacks are optional;
/// when absent, solvers fall back to central finite differences.
struct ControlledSDE {
  int state_dim = 0;
  int control_dim = 0;
  int noise_dim = 0;

  std::function<Vec(const Vec&, const Vec&)> drift;
  std::function<Mat(const Vec&, const Vec&)> diffusion;

  std::function<DriftJacobians(const Vec&, const Vec&)> drift_jacobian;
  std::function<DiffusionJacobians(const Vec&, const Vec&)> diffusion_jacobian;
  std::function<DriftHessians(const Vec&, const Vec&)> drift_hessian;
};

/// Per-timestep linearization of the discretized dynamics around (x̄, ū):
///   δx(t+dt) ≈ A δx + B δu + Γ(δx, δu) ξ,   ξ ~ N(0, dt·I)
/// with A = I + ∇x f·dt, B = ∇u f·dt, Γ(δx,δu) column i equal to
/// Gamma0.col(i) + Gamma_dx[i] δx + Gamma_du[i] δu.
struct LocalModel {
  Mat A;                       // n×n
  Mat B;                       // n×m
  Mat Gamma0;                  // n×p, diffusion at the nominal point
  std::vector<Mat> Gamma_dx;   // p entries, each n×n
  std::vector<Mat> Gamma_du;   // p entries, each n×m

  // Second-order tensors of the discrete map (continuous Hessians scaled by
  // dt); present iff the model was linearized with kappa = 1.
  std::optional<DriftHessians> second_order;

  double dt = 0.0;
};

/// Bundle of finite-difference derivative estimates at one point.
/// First-order always present; continuous-time Hessians only on request.
struct ModelDerivatives {
  Mat fx;
  Mat fu;
  std::vector<Mat> F_dx;
  std::vector<Mat> F_du;
  std::optional<DriftHessians> second_order;
};

/// Evaluate drift/diffusion with dimension and finiteness checks.
Vec eval_drift(const ControlledSDE& model, const Vec& x, const Vec& u);
Mat eval_diffusion(const ControlledSDE& model, const Vec& x, const Vec& u);

/// Central finite differences of all first derivatives (and, on request,
/// drift Hessians) at (x, u). Step per coordinate is h·max(1, |coordinate|).
ModelDerivatives finite_diff_derivatives(const ControlledSDE& model,
                                         const Vec& x, const Vec& u,
                                         double h = 1e-5,
                                         bool with_second_order = false);

/// Discretize and linearize the model around a nominal point. With kappa = 1
/// the second-order drift tensors of the discrete map are attached, taken
/// from the model when supplied and from finite differences otherwise.
LocalModel discretize_linearize(const ControlledSDE& model, const Vec& x_bar,
                                const Vec& u_bar, double dt, int kappa);

/// One Euler–Maruyama step: x + f(x,u)·dt + F(x,u)·xi. The caller draws
/// xi ~ N(0, dt·I); xi = 0 recovers the deterministic Euler step.
Vec euler_maruyama_step(const ControlledSDE& model, const Vec& x, const Vec& u,
                        double dt, const Vec& xi, int step_index = -1);

}  // namespace covsteer
