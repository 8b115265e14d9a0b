#include "expdesign/true_process.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace expdesign {

void TrueProcessParams::validate() const {
  if (!(region_lo < region_hi)) throw std::invalid_argument("TrueProcessParams: region_lo must be < region_hi");
  if (!(indicator_slope > 0)) throw std::invalid_argument("TrueProcessParams: indicator_slope must be > 0");
  if (!(noise_std >= 0)) throw std::invalid_argument("TrueProcessParams: noise_std must be >= 0");
}

double smooth_indicator(double x, const TrueProcessParams& p) {
  const double rise = std::atan(p.indicator_slope * (x - p.region_lo)) / std::numbers::pi + 0.5;
  const double fall = std::atan(p.indicator_slope * (p.region_hi - x)) / std::numbers::pi + 0.5;
  return rise * fall;
}

double true_mean(double x, double u, const TrueProcessParams& p) {
  return x + (1.0 + p.gain_boost * smooth_indicator(x, p)) * u;
}

double step_true(double x, double u, const TrueProcessParams& p, double noise_draw) {
  return true_mean(x, u, p) + p.noise_std * noise_draw;
}

Datasetd Trajectory::as_dataset() const {
  return Datasetd(states.topRows(inputs.rows()), inputs, measurements);
}

Datasetd augment(const Datasetd& data, const Trajectory& traj) {
  return augment<double>(data, traj.states.topRows(traj.length()), traj.inputs, traj.measurements);
}

namespace {

template <typename InputAt>
Trajectory rollout(double x0, int horizon, const TrueProcessParams& p, Rng& rng, InputAt&& input_at) {
  if (horizon < 0) throw std::invalid_argument("rollout_true: horizon must be >= 0");
  std::normal_distribution<double> normal;
  Trajectory traj{Eigen::MatrixXd(horizon + 1, 1), Eigen::MatrixXd(horizon, 1), Eigen::MatrixXd(horizon, 1)};
  traj.states(0, 0) = x0;
  for (int t = 0; t < horizon; ++t) {
    const double x = traj.states(t, 0);
    const double u = input_at(t, x);
    const double next = step_true(x, u, p, normal(rng));
    traj.inputs(t, 0) = u;
    traj.states(t + 1, 0) = next;
    traj.measurements(t, 0) = next;
  }
  return traj;
}

}  // namespace

Trajectory rollout_true(double x0, const Eigen::VectorXd& inputs, const TrueProcessParams& p, Rng& rng) {
  return rollout(x0, static_cast<int>(inputs.size()), p, rng, [&](int t, double) { return inputs(t); });
}

Trajectory rollout_true(double x0, const FeedbackPolicy& policy, int horizon, const TrueProcessParams& p,
                        Rng& rng) {
  return rollout(x0, horizon, p, rng, policy);
}

Rng derive_rng(std::uint64_t master_seed, std::uint64_t tag, std::uint64_t a, std::uint64_t b) {
  auto lo = [](std::uint64_t v) { return static_cast<std::uint32_t>(v & 0xffffffffu); };
  auto hi = [](std::uint64_t v) { return static_cast<std::uint32_t>(v >> 32); };
  std::seed_seq seq{lo(master_seed), hi(master_seed), lo(tag), hi(tag), lo(a), hi(a), lo(b), hi(b)};
  return Rng(seq);
}

}  // namespace expdesign
