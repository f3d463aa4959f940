#include "covsteer/rollout.hpp"

#include <cmath>

#include "covsteer/rng.hpp"

namespace covsteer {

namespace {

// Symmetric square root of a PSD matrix, clamping small negative eigenvalues.
Mat psd_sqrt(const Mat& sigma) {
  Eigen::SelfAdjointEigenSolver<Mat> eig(symmetrized(sigma));
  Vec vals = eig.eigenvalues();
  for (int i = 0; i < vals.size(); ++i) {
    if (vals(i) < -1e-10) {
      throw StructuralError("initial covariance has a negative eigenvalue");
    }
    vals(i) = std::sqrt(std::max(vals(i), 0.0));
  }
  return eig.eigenvectors() * vals.asDiagonal() *
         eig.eigenvectors().transpose();
}

}  // namespace

SampleBatch sample_closed_loop(const ControlledSDE& model, const Policy& policy,
                               const InitialCondition& init, int n_samples,
                               std::uint64_t seed,
                               const RolloutOptions& options) {
  const int n = model.state_dim;
  const int p = model.noise_dim;
  const int N = policy.horizon();
  const double dt = policy.nominal.dt;

  if (n_samples < 2) {
    throw EstimationError("sample_closed_loop: need at least 2 samples");
  }
  if (static_cast<int>(policy.nominal.states.size()) != N + 1) {
    throw StructuralError("sample_closed_loop: policy nominal inconsistent");
  }
  if (init.mu0.size() != n || init.Sigma0.rows() != n ||
      init.Sigma0.cols() != n) {
    throw StructuralError("sample_closed_loop: initial condition dimensions");
  }

  const Mat sqrt_sigma0 = psd_sqrt(init.Sigma0);
  const double sqrt_dt = std::sqrt(dt);

  SampleBatch batch;
  batch.seed = seed;
  batch.n_samples = n_samples;
  batch.terminal_states.resize(n_samples, n);
  if (options.keep_paths) {
    batch.full_paths.reserve(n_samples);
  }

  std::vector<int> diverged;
  for (int s = 0; s < n_samples; ++s) {
    GaussianStream stream(seed, static_cast<std::uint64_t>(s));
    Vec x = init.mu0 + sqrt_sigma0 * stream.vector(n);

    Mat path;
    if (options.keep_paths) {
      path.resize(N + 1, n);
      path.row(0) = x.transpose();
    }

    bool ok = true;
    for (int i = 0; i < N; ++i) {
      const Vec u = policy.nominal.controls[i] +
                    policy.K[i] * (x - policy.nominal.states[i]);
      const Vec xi = sqrt_dt * stream.vector(p);
      try {
        x = euler_maruyama_step(model, x, u, dt, xi, i);
      } catch (const IntegrationBlowupError&) {
        ok = false;
        break;
      } catch (const ModelEvaluationError&) {
        ok = false;
        break;
      }
      if (x.cwiseAbs().maxCoeff() > options.divergence_threshold) {
        ok = false;
        break;
      }
      if (options.keep_paths) {
        path.row(i + 1) = x.transpose();
      }
    }

    if (!ok) {
      diverged.push_back(s);
      batch.terminal_states.row(s).setZero();
      if (options.keep_paths) {
        batch.full_paths.push_back(Mat());
      }
      continue;
    }
    batch.terminal_states.row(s) = x.transpose();
    if (options.keep_paths) {
      batch.full_paths.push_back(std::move(path));
    }
  }

  batch.divergence_count = static_cast<int>(diverged.size());
  if (batch.divergence_count >
      options.max_divergence_fraction * n_samples) {
    throw RolloutDivergenceError(
        "closed-loop sampling: too many diverged samples (" +
            std::to_string(batch.divergence_count) + " of " +
            std::to_string(n_samples) + ")",
        diverged.front());
  }

  if (batch.divergence_count > 0) {
    // Compact the batch to the surviving samples, preserving order.
    Mat kept(n_samples - batch.divergence_count, n);
    std::vector<Mat> kept_paths;
    int row = 0;
    std::size_t d = 0;
    for (int s = 0; s < n_samples; ++s) {
      if (d < diverged.size() && diverged[d] == s) {
        ++d;
        continue;
      }
      kept.row(row++) = batch.terminal_states.row(s);
      if (options.keep_paths) {
        kept_paths.push_back(std::move(batch.full_paths[s]));
      }
    }
    batch.terminal_states = std::move(kept);
    batch.full_paths = std::move(kept_paths);
    batch.n_samples = row;
  }

  return batch;
}

MomentEstimate estimate_moments(const SampleBatch& batch) {
  const int n_samples = static_cast<int>(batch.terminal_states.rows());
  const int n = static_cast<int>(batch.terminal_states.cols());
  if (n_samples < 2) {
    throw EstimationError("estimate_moments: need at least 2 samples");
  }

  MomentEstimate est;
  est.mean = batch.terminal_states.colwise().mean().transpose();
  est.second_moment = symmetrized(batch.terminal_states.transpose() *
                                  batch.terminal_states / n_samples);
  est.covariance =
      symmetrized(est.second_moment - est.mean * est.mean.transpose());
  est.std_error_mean = Vec(n);
  for (int j = 0; j < n; ++j) {
    est.std_error_mean(j) =
        std::sqrt(std::max(est.covariance(j, j), 0.0) / n_samples);
  }
  return est;
}

std::vector<std::pair<Vec, Mat>> propagate_moments_gaussian(
    const ControlledSDE& model, const Policy& policy,
    const InitialCondition& init) {
  const int N = policy.horizon();
  const double dt = policy.nominal.dt;

  std::vector<std::pair<Vec, Mat>> out;
  out.reserve(N + 1);

  Vec mu = init.mu0;
  Mat sigma = symmetrized(init.Sigma0);
  out.emplace_back(mu, sigma);

  for (int i = 0; i < N; ++i) {
    const Vec u = policy.nominal.controls[i] +
                  policy.K[i] * (mu - policy.nominal.states[i]);
    const LocalModel local = discretize_linearize(model, mu, u, dt, 0);
    const Mat closed = local.A + local.B * policy.K[i];

    mu = mu + eval_drift(model, mu, u) * dt;
    sigma = symmetrized(closed * sigma * closed.transpose() +
                        local.Gamma0 * local.Gamma0.transpose() * dt);
    if (!mu.allFinite() || !sigma.allFinite()) {
      throw RolloutDivergenceError("gaussian moment propagation diverged", i);
    }
    out.emplace_back(mu, sigma);
  }
  return out;
}

}  // namespace covsteer
