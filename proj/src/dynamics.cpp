#include "covsteer/dynamics.hpp"

#include <cmath>

namespace covsteer {

namespace {

double scaled_step(double h, double coordinate) {
  return h * std::max(1.0, std::abs(coordinate));
}

}  // namespace

Vec eval_drift(const ControlledSDE& model, const Vec& x, const Vec& u) {
  if (x.size() != model.state_dim || u.size() != model.control_dim) {
    throw StructuralError("drift evaluation: input dimension mismatch");
  }
  Vec f = model.drift(x, u);
  if (f.size() != model.state_dim) {
    throw StructuralError("drift returned wrong dimension");
  }
  if (!f.allFinite()) {
    throw ModelEvaluationError("drift returned non-finite value", x, u);
  }
  return f;
}

Mat eval_diffusion(const ControlledSDE& model, const Vec& x, const Vec& u) {
  if (x.size() != model.state_dim || u.size() != model.control_dim) {
    throw StructuralError("diffusion evaluation: input dimension mismatch");
  }
  Mat F = model.diffusion(x, u);
  if (F.rows() != model.state_dim || F.cols() != model.noise_dim) {
    throw StructuralError("diffusion returned wrong dimensions");
  }
  if (!F.allFinite()) {
    throw ModelEvaluationError("diffusion returned non-finite value", x, u);
  }
  return F;
}

ModelDerivatives finite_diff_derivatives(const ControlledSDE& model,
                                         const Vec& x, const Vec& u, double h,
                                         bool with_second_order) {
  if (h <= 0.0) {
    throw StructuralError("finite_diff_derivatives: h must be positive");
  }
  const int n = model.state_dim;
  const int m = model.control_dim;
  const int p = model.noise_dim;

  ModelDerivatives out;
  out.fx = Mat::Zero(n, n);
  out.fu = Mat::Zero(n, m);
  out.F_dx.assign(p, Mat::Zero(n, n));
  out.F_du.assign(p, Mat::Zero(n, m));

  Vec xp = x, xm = x, up = u, um = u;

  for (int j = 0; j < n; ++j) {
    const double hj = scaled_step(h, x(j));
    xp(j) = x(j) + hj;
    xm(j) = x(j) - hj;
    const Vec df = eval_drift(model, xp, u) - eval_drift(model, xm, u);
    out.fx.col(j) = df / (2.0 * hj);
    const Mat dF = eval_diffusion(model, xp, u) - eval_diffusion(model, xm, u);
    for (int i = 0; i < p; ++i) {
      out.F_dx[i].col(j) = dF.col(i) / (2.0 * hj);
    }
    xp(j) = x(j);
    xm(j) = x(j);
  }

  for (int j = 0; j < m; ++j) {
    const double hj = scaled_step(h, u(j));
    up(j) = u(j) + hj;
    um(j) = u(j) - hj;
    const Vec df = eval_drift(model, x, up) - eval_drift(model, x, um);
    out.fu.col(j) = df / (2.0 * hj);
    const Mat dF = eval_diffusion(model, x, up) - eval_diffusion(model, x, um);
    for (int i = 0; i < p; ++i) {
      out.F_du[i].col(j) = dF.col(i) / (2.0 * hj);
    }
    up(j) = u(j);
    um(j) = u(j);
  }

  if (with_second_order) {
    // Nested central differences with a wider step; second derivatives are
    // much more sensitive to rounding than first ones.
    const double h2 = std::max(std::sqrt(h), 1e-4);
    DriftHessians hess;
    hess.fxx.assign(n, Mat::Zero(n, n));
    hess.fuu.assign(n, Mat::Zero(m, m));
    hess.fux.assign(n, Mat::Zero(m, n));

    auto drift_at = [&](const Vec& xx, const Vec& uu) {
      return eval_drift(model, xx, uu);
    };

    for (int i = 0; i < n; ++i) {
      const double hi = scaled_step(h2, x(i));
      for (int j = 0; j <= i; ++j) {
        const double hj = scaled_step(h2, x(j));
        Vec xpp = x, xpm = x, xmp = x, xmm = x;
        xpp(i) += hi; xpp(j) += hj;
        xpm(i) += hi; xpm(j) -= hj;
        xmp(i) -= hi; xmp(j) += hj;
        xmm(i) -= hi; xmm(j) -= hj;
        const Vec d2 = (drift_at(xpp, u) - drift_at(xpm, u) -
                        drift_at(xmp, u) + drift_at(xmm, u)) /
                       (4.0 * hi * hj);
        for (int a = 0; a < n; ++a) {
          hess.fxx[a](i, j) = d2(a);
          hess.fxx[a](j, i) = d2(a);
        }
      }
    }

    for (int i = 0; i < m; ++i) {
      const double hi = scaled_step(h2, u(i));
      for (int j = 0; j <= i; ++j) {
        const double hj = scaled_step(h2, u(j));
        Vec upp = u, upm = u, ump = u, umm = u;
        upp(i) += hi; upp(j) += hj;
        upm(i) += hi; upm(j) -= hj;
        ump(i) -= hi; ump(j) += hj;
        umm(i) -= hi; umm(j) -= hj;
        const Vec d2 = (drift_at(x, upp) - drift_at(x, upm) -
                        drift_at(x, ump) + drift_at(x, umm)) /
                       (4.0 * hi * hj);
        for (int a = 0; a < n; ++a) {
          hess.fuu[a](i, j) = d2(a);
          hess.fuu[a](j, i) = d2(a);
        }
      }
    }

    for (int i = 0; i < m; ++i) {
      const double hi = scaled_step(h2, u(i));
      for (int j = 0; j < n; ++j) {
        const double hj = scaled_step(h2, x(j));
        Vec uP = u, uM = u, xP = x, xM = x;
        uP(i) += hi;
        uM(i) -= hi;
        xP(j) += hj;
        xM(j) -= hj;
        const Vec d2 = (drift_at(xP, uP) - drift_at(xM, uP) -
                        drift_at(xP, uM) + drift_at(xM, uM)) /
                       (4.0 * hi * hj);
        for (int a = 0; a < n; ++a) {
          hess.fux[a](i, j) = d2(a);
        }
      }
    }

    out.second_order = std::move(hess);
  }

  return out;
}

LocalModel discretize_linearize(const ControlledSDE& model, const Vec& x_bar,
                                const Vec& u_bar, double dt, int kappa) {
  if (dt <= 0.0) {
    throw StructuralError("discretize_linearize: dt must be positive");
  }
  if (kappa != 0 && kappa != 1) {
    throw StructuralError("discretize_linearize: kappa must be 0 or 1");
  }

  const int n = model.state_dim;

  LocalModel local;
  local.dt = dt;
  local.Gamma0 = eval_diffusion(model, x_bar, u_bar);

  const bool need_fd_first =
      !model.drift_jacobian || !model.diffusion_jacobian;
  const bool need_fd_second = kappa == 1 && !model.drift_hessian;

  ModelDerivatives fd;
  if (need_fd_first || need_fd_second) {
    fd = finite_diff_derivatives(model, x_bar, u_bar, 1e-5, need_fd_second);
  }

  Mat fx, fu;
  if (model.drift_jacobian) {
    DriftJacobians j = model.drift_jacobian(x_bar, u_bar);
    fx = std::move(j.fx);
    fu = std::move(j.fu);
  } else {
    fx = fd.fx;
    fu = fd.fu;
  }
  if (fx.rows() != n || fx.cols() != n || fu.rows() != n ||
      fu.cols() != model.control_dim) {
    throw StructuralError("drift Jacobian has wrong dimensions");
  }

  local.A = Mat::Identity(n, n) + fx * dt;
  local.B = fu * dt;

  if (model.diffusion_jacobian) {
    DiffusionJacobians j = model.diffusion_jacobian(x_bar, u_bar);
    local.Gamma_dx = std::move(j.dx);
    local.Gamma_du = std::move(j.du);
  } else {
    local.Gamma_dx = fd.F_dx;
    local.Gamma_du = fd.F_du;
  }
  if (static_cast<int>(local.Gamma_dx.size()) != model.noise_dim ||
      static_cast<int>(local.Gamma_du.size()) != model.noise_dim) {
    throw StructuralError("diffusion Jacobians have wrong channel count");
  }

  if (kappa == 1) {
    DriftHessians hess = model.drift_hessian
                             ? model.drift_hessian(x_bar, u_bar)
                             : *fd.second_order;
    if (static_cast<int>(hess.fxx.size()) != n) {
      throw StructuralError("drift Hessian has wrong slice count");
    }
    // Stored as tensors of the discrete map: continuous Hessians times dt.
    for (auto& s : hess.fxx) s *= dt;
    for (auto& s : hess.fuu) s *= dt;
    for (auto& s : hess.fux) s *= dt;
    local.second_order = std::move(hess);
  }

  return local;
}

Vec euler_maruyama_step(const ControlledSDE& model, const Vec& x, const Vec& u,
                        double dt, const Vec& xi, int step_index) {
  if (dt <= 0.0) {
    throw StructuralError("euler_maruyama_step: dt must be positive");
  }
  if (xi.size() != model.noise_dim) {
    throw StructuralError("euler_maruyama_step: xi has wrong dimension");
  }
  const Vec f = eval_drift(model, x, u);
  const Mat F = eval_diffusion(model, x, u);
  Vec next = x + f * dt + F * xi;
  if (!next.allFinite()) {
    throw IntegrationBlowupError("stochastic integration blew up", step_index);
  }
  return next;
}

}  // namespace covsteer
