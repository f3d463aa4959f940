#include "covsteer/dynamics.hpp"

#include <cmath>
#include <random>

#include "covsteer/systems.hpp"
#include "doctest.h"

using namespace covsteer;

namespace {

Vec vec1(double v) {
  Vec out(1);
  out(0) = v;
  return out;
}

ControlledSDE cosine_model() { return preset_cosine1d().model; }

ControlledSDE cosine_model_no_analytic() {
  ControlledSDE m = cosine_model();
  m.drift_jacobian = nullptr;
  m.diffusion_jacobian = nullptr;
  m.drift_hessian = nullptr;
  return m;
}

ControlledSDE zero_model(int n, int m, int p) {
  ControlledSDE model;
  model.state_dim = n;
  model.control_dim = m;
  model.noise_dim = p;
  model.drift = [n](const Vec&, const Vec&) { return Vec::Zero(n); };
  model.diffusion = [n, p](const Vec&, const Vec&) { return Mat::Zero(n, p); };
  return model;
}

}  // namespace

TEST_CASE("discretize_linearize: cosine system at the origin") {
  const LocalModel local =
      discretize_linearize(cosine_model(), vec1(0.0), vec1(0.0), 0.01, 0);
  CHECK(local.A(0, 0) == doctest::Approx(1.0));
  CHECK(local.B(0, 0) == doctest::Approx(0.01));
  CHECK(local.Gamma0(0, 0) == doctest::Approx(0.0));
  CHECK(local.Gamma_dx[0](0, 0) == doctest::Approx(0.0));
  CHECK(!local.second_order.has_value());
}

TEST_CASE("discretize_linearize: zero model gives identity map") {
  const ControlledSDE model = zero_model(3, 2, 2);
  const LocalModel local = discretize_linearize(model, Vec::Zero(3),
                                                Vec::Zero(2), 0.05, 0);
  CHECK((local.A - Mat::Identity(3, 3)).norm() == doctest::Approx(0.0));
  CHECK(local.B.norm() == doctest::Approx(0.0));
  CHECK(local.Gamma0.norm() == doctest::Approx(0.0));
  for (const Mat& g : local.Gamma_dx) CHECK(g.norm() == doctest::Approx(0.0));
  for (const Mat& g : local.Gamma_du) CHECK(g.norm() == doctest::Approx(0.0));
}

TEST_CASE("discretize_linearize: pendulum at the hanging position") {
  Vec x(2);
  x << -M_PI, 0.0;
  const LocalModel local =
      discretize_linearize(preset_pendulum().model, x, vec1(0.0), 0.01, 0);

  Mat A_expected(2, 2);
  A_expected << 1.0, 0.01, 4.0 * std::cos(-M_PI) * 0.01, 1.0;
  CHECK((local.A - A_expected).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(local.A(1, 0) == doctest::Approx(-0.04));
  CHECK(local.B(0, 0) == doctest::Approx(0.0));
  CHECK(local.B(1, 0) == doctest::Approx(0.01));
  CHECK(local.Gamma_du[0](0, 0) == doctest::Approx(0.0));
  CHECK(local.Gamma_du[0](1, 0) == doctest::Approx(0.04));
}

TEST_CASE("discretize_linearize validates inputs") {
  CHECK_THROWS_AS(
      discretize_linearize(cosine_model(), vec1(0.0), vec1(0.0), 0.0, 0),
      StructuralError);
  CHECK_THROWS_AS(
      discretize_linearize(cosine_model(), vec1(0.0), vec1(0.0), 0.01, 2),
      StructuralError);
}

TEST_CASE("non-finite drift evaluation carries the offending point") {
  ControlledSDE model = zero_model(1, 1, 1);
  model.drift = [](const Vec& x, const Vec&) {
    return vec1(1.0 / x(0));  // NaN/inf at x = 0
  };
  try {
    discretize_linearize(model, vec1(0.0), vec1(0.5), 0.01, 0);
    FAIL("expected ModelEvaluationError");
  } catch (const ModelEvaluationError& e) {
    CHECK(e.state()(0) == doctest::Approx(0.0));
    CHECK(e.control()(0) == doctest::Approx(0.5));
  }
}

TEST_CASE("finite differences are exact for a linear scalar model") {
  ControlledSDE model = zero_model(1, 1, 1);
  model.drift = [](const Vec& x, const Vec& u) {
    return vec1(2.0 * x(0) + 3.0 * u(0));
  };
  const ModelDerivatives d =
      finite_diff_derivatives(model, vec1(0.7), vec1(-0.3));
  CHECK(d.fx(0, 0) == doctest::Approx(2.0).epsilon(1e-10));
  CHECK(d.fu(0, 0) == doctest::Approx(3.0).epsilon(1e-10));
}

TEST_CASE("finite differences recover the cosine derivative") {
  const ModelDerivatives d = finite_diff_derivatives(
      cosine_model_no_analytic(), vec1(0.5), vec1(0.0));
  CHECK(std::abs(d.fx(0, 0) - (-std::sin(0.5))) < 1e-6);
  CHECK(std::abs(d.fx(0, 0) - (-0.479426)) < 1e-6);
  CHECK(d.F_dx[0](0, 0) == doctest::Approx(1.0).epsilon(1e-8));  // d(x²)/dx
}

TEST_CASE("finite differences of a constant model vanish") {
  ControlledSDE model = zero_model(2, 1, 1);
  model.drift = [](const Vec&, const Vec&) {
    Vec c(2);
    c << 1.5, -2.0;
    return c;
  };
  const ModelDerivatives d = finite_diff_derivatives(
      model, Vec::Zero(2), Vec::Zero(1), 1e-5, true);
  CHECK(d.fx.norm() == doctest::Approx(0.0));
  CHECK(d.fu.norm() == doctest::Approx(0.0));
  for (const Mat& h : d.second_order->fxx) CHECK(h.norm() < 1e-8);
}

TEST_CASE("finite-difference second derivatives match the cosine Hessian") {
  const ModelDerivatives d = finite_diff_derivatives(
      cosine_model_no_analytic(), vec1(0.3), vec1(0.0), 1e-5, true);
  CHECK(std::abs(d.second_order->fxx[0](0, 0) - (-std::cos(0.3))) < 1e-5);
  CHECK(std::abs(d.second_order->fuu[0](0, 0)) < 1e-6);
  CHECK(std::abs(d.second_order->fux[0](0, 0)) < 1e-6);
}

TEST_CASE("finite_diff_derivatives rejects non-positive step") {
  CHECK_THROWS_AS(
      finite_diff_derivatives(cosine_model(), vec1(0.0), vec1(0.0), 0.0),
      StructuralError);
}

TEST_CASE("analytic and finite-difference Jacobians agree on paper presets") {
  std::mt19937 engine(42);
  std::uniform_real_distribution<double> box(-2.0, 2.0);

  for (const char* name : {"cosine1d", "pendulum"}) {
    const ControlledSDE model = preset_by_name(name).model;
    for (int trial = 0; trial < 100; ++trial) {
      Vec x(model.state_dim), u(model.control_dim);
      for (int i = 0; i < x.size(); ++i) x(i) = box(engine);
      for (int i = 0; i < u.size(); ++i) u(i) = box(engine);

      const DriftJacobians a = model.drift_jacobian(x, u);
      const DiffusionJacobians g = model.diffusion_jacobian(x, u);
      const ModelDerivatives d = finite_diff_derivatives(model, x, u);

      const double scale = std::max(1.0, a.fx.cwiseAbs().maxCoeff());
      CHECK((a.fx - d.fx).cwiseAbs().maxCoeff() / scale < 1e-4);
      CHECK((a.fu - d.fu).cwiseAbs().maxCoeff() < 1e-4);
      for (int c = 0; c < model.noise_dim; ++c) {
        const double gs = std::max(1.0, g.dx[c].cwiseAbs().maxCoeff());
        CHECK((g.dx[c] - d.F_dx[c]).cwiseAbs().maxCoeff() / gs < 1e-4);
        CHECK((g.du[c] - d.F_du[c]).cwiseAbs().maxCoeff() < 1e-4);
      }
    }
  }
}

TEST_CASE("linear drift makes the discrete prediction exact") {
  Mat M(2, 2), N(2, 1);
  M << 0.3, -1.1, 0.7, 0.2;
  N << 0.5, -0.4;
  const ControlledSDE model = make_lti_model(M, N, Mat::Zero(2, 1));

  Vec x(2), u(1), dx(2), du(1);
  x << 0.4, -0.2;
  u << 0.1;
  dx << 0.03, -0.07;
  du << 0.05;
  const double dt = 0.02;

  const LocalModel local = discretize_linearize(model, x, u, dt, 0);
  const Vec predicted = local.A * dx + local.B * du;
  const Vec truth = (x + dx + model.drift(x + dx, u + du) * dt) -
                    (x + model.drift(x, u) * dt);
  CHECK((predicted - truth).cwiseAbs().maxCoeff() < 1e-13);
}

TEST_CASE("euler_maruyama_step examples") {
  SUBCASE("zero dynamics returns the state") {
    const ControlledSDE model = zero_model(3, 1, 2);
    Vec x(3);
    x << 1.0, -2.0, 0.5;
    const Vec next = euler_maruyama_step(model, x, Vec::Zero(1), 0.01,
                                         Vec::Zero(2));
    CHECK((next - x).norm() == doctest::Approx(0.0));
  }

  SUBCASE("identity diffusion forwards the noise") {
    ControlledSDE model = zero_model(3, 1, 3);
    model.diffusion = [](const Vec&, const Vec&) {
      return Mat(Mat::Identity(3, 3));
    };
    Vec xi = Vec::Zero(3);
    xi(0) = 0.1;
    const Vec next =
        euler_maruyama_step(model, Vec::Zero(3), Vec::Zero(1), 0.01, xi);
    CHECK(next(0) == doctest::Approx(0.1));
    CHECK(next(1) == doctest::Approx(0.0));
    CHECK(next(2) == doctest::Approx(0.0));
  }

  SUBCASE("cosine system, deterministic step") {
    const Vec next = euler_maruyama_step(cosine_model(), vec1(0.0), vec1(0.0),
                                         0.01, vec1(0.0));
    CHECK(next(0) == doctest::Approx(0.01));
  }

  SUBCASE("noise-free step equals the deterministic Euler step") {
    const ControlledSDE model = cosine_model();
    const Vec x = vec1(0.37), u = vec1(-0.8);
    const Vec stepped = euler_maruyama_step(model, x, u, 0.01, vec1(0.0));
    const Vec euler = x + model.drift(x, u) * 0.01;
    CHECK((stepped - euler).norm() == doctest::Approx(0.0));
  }

  SUBCASE("dimension and blowup errors") {
    const ControlledSDE model = cosine_model();
    CHECK_THROWS_AS(
        euler_maruyama_step(model, vec1(0.0), vec1(0.0), 0.01, Vec::Zero(2)),
        StructuralError);

    ControlledSDE bad = zero_model(1, 1, 1);
    bad.drift = [](const Vec&, const Vec&) {
      return vec1(std::numeric_limits<double>::infinity());
    };
    CHECK_THROWS_AS(
        euler_maruyama_step(bad, vec1(0.0), vec1(0.0), 0.01, vec1(0.0), 7),
        ModelEvaluationError);

    ControlledSDE huge = zero_model(1, 1, 1);
    huge.drift = [](const Vec&, const Vec&) {
      return vec1(1.7e308);  // finite drift, overflowing step
    };
    try {
      euler_maruyama_step(huge, vec1(1.0e308), vec1(0.0), 1.0, vec1(0.0), 3);
      FAIL("expected IntegrationBlowupError");
    } catch (const IntegrationBlowupError& e) {
      CHECK(e.step_index() == 3);
    }
  }
}
