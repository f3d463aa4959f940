#include "covsteer/systems.hpp"

#include <cmath>
#include <random>

#include "covsteer/rng.hpp"

namespace covsteer {

namespace {

constexpr double kPendulumNoiseAlpha = 0.04;

Vec scalar_vec(double v) {
  Vec out(1);
  out(0) = v;
  return out;
}

CovControlOptions default_options_for(const Horizon& horizon) {
  CovControlOptions opt;
  opt.horizon = horizon.steps;
  opt.dt = horizon.dt;
  opt.kappa = 0;
  return opt;
}

}  // namespace

ControlledSDE make_lti_model(const Mat& A, const Mat& B, const Mat& F) {
  const int n = static_cast<int>(A.rows());
  const int m = static_cast<int>(B.cols());
  const int p = static_cast<int>(F.cols());
  if (A.cols() != n || B.rows() != n || F.rows() != n) {
    throw StructuralError("make_lti_model: inconsistent matrix shapes");
  }

  ControlledSDE model;
  model.state_dim = n;
  model.control_dim = m;
  model.noise_dim = p;
  model.drift = [A, B](const Vec& x, const Vec& u) -> Vec {
    return A * x + B * u;
  };
  model.diffusion = [F](const Vec&, const Vec&) -> Mat { return F; };
  model.drift_jacobian = [A, B](const Vec&, const Vec&) {
    return DriftJacobians{A, B};
  };
  model.diffusion_jacobian = [n, m, p](const Vec&, const Vec&) {
    DiffusionJacobians j;
    j.dx.assign(p, Mat::Zero(n, n));
    j.du.assign(p, Mat::Zero(n, m));
    return j;
  };
  model.drift_hessian = [n, m](const Vec&, const Vec&) {
    DriftHessians h;
    h.fxx.assign(n, Mat::Zero(n, n));
    h.fuu.assign(n, Mat::Zero(m, m));
    h.fux.assign(n, Mat::Zero(m, n));
    return h;
  };
  return model;
}

ProblemPreset preset_cosine1d() {
  ProblemPreset preset;
  preset.name = "cosine1d";

  ControlledSDE model;
  model.state_dim = 1;
  model.control_dim = 1;
  model.noise_dim = 1;
  model.drift = [](const Vec& x, const Vec& u) -> Vec {
    return scalar_vec(std::cos(x(0)) + u(0));
  };
  model.diffusion = [](const Vec& x, const Vec&) -> Mat {
    Mat F(1, 1);
    F(0, 0) = x(0) * x(0);
    return F;
  };
  model.drift_jacobian = [](const Vec& x, const Vec&) {
    Mat fx(1, 1), fu(1, 1);
    fx(0, 0) = -std::sin(x(0));
    fu(0, 0) = 1.0;
    return DriftJacobians{fx, fu};
  };
  model.diffusion_jacobian = [](const Vec& x, const Vec&) {
    DiffusionJacobians j;
    Mat dx(1, 1), du(1, 1);
    dx(0, 0) = 2.0 * x(0);
    du(0, 0) = 0.0;
    j.dx = {dx};
    j.du = {du};
    return j;
  };
  model.drift_hessian = [](const Vec& x, const Vec&) {
    DriftHessians h;
    Mat fxx(1, 1);
    fxx(0, 0) = -std::cos(x(0));
    h.fxx = {fxx};
    h.fuu = {Mat::Zero(1, 1)};
    h.fux = {Mat::Zero(1, 1)};
    return h;
  };
  preset.model = model;

  preset.control_cost_r = 1e-4;
  preset.running_cost = control_quadratic_cost(1, 1, preset.control_cost_r);
  preset.init = {scalar_vec(0.0), 0.25 * Mat::Identity(1, 1)};
  preset.constraint = {scalar_vec(0.0), 0.03 * Mat::Identity(1, 1)};
  preset.horizon = {1.0, 0.01, 100};
  preset.default_options = default_options_for(preset.horizon);
  // The near-free control (r = 1e-4) puts the dual optimum at γ ~ 1e-4 and
  // makes the terminal mean respond to λ with gain 1/(2γ); the multiplier
  // loop needs scale-matched starting points to stay in its stable band.
  preset.default_options.gamma0 = 1e-3 * Mat::Identity(1, 1);
  preset.default_options.eta1 = 1e-3;
  preset.default_options.eta2 = 1e-2;
  return preset;
}

ProblemPreset preset_pendulum() {
  ProblemPreset preset;
  preset.name = "pendulum";

  ControlledSDE model;
  model.state_dim = 2;
  model.control_dim = 1;
  model.noise_dim = 1;
  model.drift = [](const Vec& x, const Vec& u) -> Vec {
    Vec f(2);
    f(0) = x(1);
    f(1) = 4.0 * std::sin(x(0)) + u(0);
    return f;
  };
  model.diffusion = [](const Vec&, const Vec& u) -> Mat {
    Mat F(2, 1);
    F(0, 0) = 0.0;
    F(1, 0) = kPendulumNoiseAlpha * u(0);
    return F;
  };
  model.drift_jacobian = [](const Vec& x, const Vec&) {
    Mat fx(2, 2), fu(2, 1);
    fx << 0.0, 1.0, 4.0 * std::cos(x(0)), 0.0;
    fu << 0.0, 1.0;
    return DriftJacobians{fx, fu};
  };
  model.diffusion_jacobian = [](const Vec&, const Vec&) {
    DiffusionJacobians j;
    Mat du(2, 1);
    du << 0.0, kPendulumNoiseAlpha;
    j.dx = {Mat::Zero(2, 2)};
    j.du = {du};
    return j;
  };
  model.drift_hessian = [](const Vec& x, const Vec&) {
    DriftHessians h;
    Mat fxx1 = Mat::Zero(2, 2);
    fxx1(0, 0) = -4.0 * std::sin(x(0));
    h.fxx = {Mat::Zero(2, 2), fxx1};
    h.fuu = {Mat::Zero(1, 1), Mat::Zero(1, 1)};
    h.fux = {Mat::Zero(1, 2), Mat::Zero(1, 2)};
    return h;
  };
  preset.model = model;

  preset.control_cost_r = 0.01;
  preset.running_cost = control_quadratic_cost(2, 1, preset.control_cost_r);

  Vec mu0(2);
  mu0 << -M_PI, 0.0;
  preset.init = {mu0, 0.01 * Mat::Identity(2, 2)};
  preset.constraint = {Vec::Zero(2), 0.01 * Mat::Identity(2, 2)};
  preset.horizon = {4.0, 0.01, 400};
  preset.default_options = default_options_for(preset.horizon);
  return preset;
}

ProblemPreset preset_linear_gaussian(int n, int m, std::uint64_t seed) {
  if (n <= 0 || m <= 0) {
    throw StructuralError("preset_linear_gaussian: dimensions must be positive");
  }

  ProblemPreset preset;
  preset.name = "lq";

  Mat A(n, n), B(n, m);
  double noise_scale = 0.05;
  if (n == 2 && m == 1) {
    A << 0.0, 1.0, 0.0, 0.0;  // double integrator
    B << 0.0, 1.0;
  } else {
    std::mt19937_64 engine(splitmix64(seed ^ 0x6c71ULL));
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) A(i, j) = unit(engine);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < m; ++j) B(i, j) = unit(engine);
    // Shift the spectrum left of the imaginary axis.
    Eigen::EigenSolver<Mat> eig(A);
    const double max_re = eig.eigenvalues().real().maxCoeff();
    A -= (max_re + 0.5) * Mat::Identity(n, n);
    noise_scale = 0.1;
  }
  const Mat F = noise_scale * Mat::Identity(n, n);

  preset.model = make_lti_model(A, B, F);
  preset.control_cost_r = 0.01;
  preset.running_cost = control_quadratic_cost(n, m, preset.control_cost_r);

  Vec mu0 = Vec::Zero(n);
  mu0(0) = 1.0;
  preset.init = {mu0, 0.05 * Mat::Identity(n, n)};
  preset.constraint = {Vec::Zero(n), 0.02 * Mat::Identity(n, n)};
  preset.horizon = {1.0, 0.02, 50};
  preset.default_options = default_options_for(preset.horizon);
  return preset;
}

ProblemPreset preset_by_name(const std::string& name) {
  if (name == "cosine1d") return preset_cosine1d();
  if (name == "pendulum") return preset_pendulum();
  if (name == "lq") return preset_linear_gaussian();
  throw StructuralError("unknown preset: " + name);
}

}  // namespace covsteer
