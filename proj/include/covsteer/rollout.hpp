#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "covsteer/covcon.hpp"
#include "covsteer/dynamics.hpp"
#include "covsteer/sddp.hpp"
#include "covsteer/types.hpp"

namespace covsteer {

/// Closed-loop Monte-Carlo batch. Each row of terminal_states is one sample's
/// x(T); full_paths (one (N+1)×n matrix per sample) is kept only on request.
struct SampleBatch {
  Mat terminal_states;          // n_samples × n
  std::vector<Mat> full_paths;  // empty unless keep_paths
  std::uint64_t seed = 0;
  int n_samples = 0;
  int divergence_count = 0;
};

struct MomentEstimate {
  Vec mean;            // Ê[x(T)]
  Mat second_moment;   // Ê[x(T)x(T)ᵀ], symmetrized
  Mat covariance;      // second_moment − mean·meanᵀ, symmetrized
  Vec std_error_mean;  // per-coordinate sample std / √n
};

struct RolloutOptions {
  bool keep_paths = false;
  double max_divergence_fraction = 0.01;
  // A sample whose state magnitude passes this bound counts as diverged even
  // while still finite; superlinear diffusion grows doubles past any problem
  // scale long before they overflow.
  double divergence_threshold = 1e6;
};

/// Simulate the closed-loop stochastic system: draw x(0) ~ N(μ₀, Σ₀), apply
/// u(i) = ū_i + K(i)(x(i) − x̄_i) and step with ξ ~ N(0, dt·I). Per-sample
/// RNG streams are derived from the seed by sample index, so identical
/// (seed, n_samples) inputs give bit-identical batches and prefixes of a
/// batch are stable as n_samples grows. Diverged samples are excluded and
/// counted; a batch with more than max_divergence_fraction diverged samples
/// is an error.
SampleBatch sample_closed_loop(const ControlledSDE& model, const Policy& policy,
                               const InitialCondition& init, int n_samples,
                               std::uint64_t seed,
                               const RolloutOptions& options = {});

/// Population-convention (1/n) moment estimates of a batch.
MomentEstimate estimate_moments(const SampleBatch& batch);

/// First-order Gaussian closure: propagate μ(i+1) = μ(i) + f(μ, u)·dt with
/// the feedback law evaluated at μ(i), and Σ(i+1) = ĀΣĀᵀ + F̄F̄ᵀ·dt with
/// Ā = A + BK and F̄ the diffusion, both evaluated at (μ(i), u(i)).
std::vector<std::pair<Vec, Mat>> propagate_moments_gaussian(
    const ControlledSDE& model, const Policy& policy,
    const InitialCondition& init);

}  // namespace covsteer
