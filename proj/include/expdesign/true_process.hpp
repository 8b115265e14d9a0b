#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <random>

#include "expdesign/gp_regression.hpp"

namespace expdesign {

/// Scalar benchmark plant x' = x + (1 + gain_boost * I~(x)) u + noise_std * w,
/// where I~ is a smooth indicator of [region_lo, region_hi].
struct TrueProcessParams {
  double region_lo = 0.75;
  double region_hi = 1.4;
  double gain_boost = 3.0;
  double indicator_slope = 100.0;
  double noise_std = 0.01;

  void validate() const;
};

/// Product of two arctangent steps; strictly inside (0, 1).
double smooth_indicator(double x, const TrueProcessParams& p);

/// Noise-free part f(x, u).
double true_mean(double x, double u, const TrueProcessParams& p);

double step_true(double x, double u, const TrueProcessParams& p, double noise_draw);

/// States have one more row than inputs; measurement row t is the state at t + 1.
struct Trajectory {
  Eigen::MatrixXd states;
  Eigen::MatrixXd inputs;
  Eigen::MatrixXd measurements;

  int length() const { return static_cast<int>(inputs.rows()); }
  Datasetd as_dataset() const;
};

/// Appends every (x_t, u_t, y_t) triple of the trajectory.
Datasetd augment(const Datasetd& data, const Trajectory& traj);

/// u_t = policy(t, x_t).
using FeedbackPolicy = std::function<double(int, double)>;

using Rng = std::mt19937_64;

/// Open-loop rollout of the true plant; one standard normal draw per step.
Trajectory rollout_true(double x0, const Eigen::VectorXd& inputs, const TrueProcessParams& p, Rng& rng);

/// Closed-loop rollout of the true plant for `horizon` steps.
Trajectory rollout_true(double x0, const FeedbackPolicy& policy, int horizon, const TrueProcessParams& p,
                        Rng& rng);

/// Purposes of the derived random streams.
namespace stream {
inline constexpr std::uint64_t kRandomWalk = 1;
inline constexpr std::uint64_t kDesignNoise = 2;
inline constexpr std::uint64_t kExperimentInputs = 3;
inline constexpr std::uint64_t kOutcome = 4;
inline constexpr std::uint64_t kOutcomeMonteCarlo = 5;
}  // namespace stream

/// Independent stream for (master seed, tag, a, b). Same inputs give the same stream.
Rng derive_rng(std::uint64_t master_seed, std::uint64_t tag, std::uint64_t a = 0, std::uint64_t b = 0);

}  // namespace expdesign
