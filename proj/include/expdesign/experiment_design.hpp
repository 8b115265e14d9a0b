#pragma once

#include <Eigen/Dense>

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "expdesign/chance_dp.hpp"
#include "expdesign/gp_regression.hpp"
#include "expdesign/true_process.hpp"

namespace expdesign {

/// Open-loop experiment: N x n_u inputs applied from x0.
struct ExperimentPlan {
  Eigen::MatrixXd inputs;
  Eigen::VectorXd x0;

  int length() const { return static_cast<int>(inputs.rows()); }
  /// Inputs stacked column-major, the coordinates the optimizer moves.
  Eigen::VectorXd flat() const { return inputs.reshaped(); }
  void set_flat(const Eigen::VectorXd& v);
  bool within(const ProblemSpec& spec) const;
};

ExperimentPlan make_plan(const Eigen::VectorXd& scalar_inputs, double x0);

/// Clips every input to the box.
ExperimentPlan project(ExperimentPlan plan, const ProblemSpec& spec);

/// N x n_x standard normal draws for one sample.
using NoiseDraws = Eigen::MatrixXd;

NoiseDraws draw_noise(int horizon, int state_dim, Rng& rng);

/// x_{t+1} = μ(x_t, u_t) + σ(x_t, u_t) ∘ v_t under the posterior, starting at plan.x0.
/// Measurement row t is the sampled x_{t+1}.
Trajectory reparam_rollout(const GaussianProcessd& gp, const ExperimentPlan& plan, const NoiseDraws& v);

/// One realization c(V, Ū) of the post-experiment control cost.
struct ObjectiveSample {
  double value = 0.0;
  bool feasible = false;
  double lambda_star = 0.0;
  double risk = 0.0;
  double expected_time = 0.0;
  int dp_solves = 0;
  DualBracket bracket;
};

/// c(V, Ū): sample the experiment under the current posterior, add it to the data,
/// re-solve the chance-constrained problem and return its expected time, or
/// N + λ_max (risk(λ_max) - Δ) when no multiplier meets the risk tolerance.
///
/// The posterior on the DP grid is conditioned on each sampled trajectory
/// incrementally; `evaluate_refit` fits D ∪ E from scratch instead and agrees to
/// rounding. Immutable after construction and safe to share between threads.
class DesignObjective {
 public:
  DesignObjective(const Datasetd& data, const GpHyperparamsd& hp, const ProblemSpec& spec, const Grids& grids,
                  const DualOptions& dual = {});

  ObjectiveSample evaluate(const ExperimentPlan& plan, const NoiseDraws& v,
                           const std::optional<DualBracket>& start = std::nullopt) const;
  ObjectiveSample evaluate_refit(const ExperimentPlan& plan, const NoiseDraws& v) const;

  /// Post-experiment solve for an already observed extra trajectory.
  DualSolution solve_with(const Datasetd& extra, const std::optional<DualBracket>& start = std::nullopt) const;
  ObjectiveSample score(const DualSolution& sol) const;

  const GaussianProcessd& posterior() const { return cache_.base(); }
  const ProblemSpec& spec() const { return spec_; }
  const Grids& grids() const { return grids_; }
  const DualOptions& dual() const { return dual_; }

 private:
  ProblemSpec spec_;
  Grids grids_;
  DualOptions dual_;
  CachedQueryPosterior<double> cache_;
};

double sample_objective(const DesignObjective& objective, const ExperimentPlan& plan, const NoiseDraws& v);

/// Central differences of f inside [lo, hi]^n. Each coordinate is moved to
/// clip(x ± step) and divided by the actual width; coordinates whose width
/// collapses to zero get 0 and are listed in `degenerate`.
struct FdGradient {
  Eigen::VectorXd gradient;
  std::vector<int> degenerate;
};

FdGradient central_difference(const std::function<double(const Eigen::VectorXd&)>& f, const Eigen::VectorXd& x,
                              double lo, double hi, double step);

struct SampleGradient {
  ObjectiveSample at_plan;
  Eigen::VectorXd gradient;  // ∂c/∂Ū in ExperimentPlan::flat order
  std::vector<int> degenerate;
};

/// ∂c/∂Ū at fixed V by central differences through the whole pipeline.
SampleGradient sample_gradient(const DesignObjective& objective, const ExperimentPlan& plan, const NoiseDraws& v,
                               double fd_step);

struct SgdOptions {
  int step_count = 1000;
  int batch_size = 80;
  double learning_rate = 0.01;
  /// lr_k = learning_rate / sqrt(k) at 1-based step k; otherwise constant.
  bool decay = true;
  double fd_step = 1e-3;
  std::uint64_t rng_seed = 0;
  /// Length of the running average used for early stopping and the best plan.
  int window = 20;
  /// Stop once the running average has not improved for `window` steps.
  bool early_stop = false;
  int threads = 1;

  void validate() const;
};

struct TraceRow {
  int step = 0;
  double batch_objective = 0.0;
  double running_objective = 0.0;
  double gradient_norm = 0.0;
  int infeasible = 0;
  Eigen::VectorXd plan;
};

struct DesignResult {
  ExperimentPlan best;
  ExperimentPlan last;
  std::vector<TraceRow> trace;
  int best_step = -1;
  bool stopped_early = false;
};

using DesignProgress = std::function<void(const TraceRow&)>;

/// Projected SGD on the batch-mean sample gradient. Trace row k describes the
/// plan evaluated at step k, before its update; `best` is the evaluated plan with
/// the lowest running average (plan0 when no step runs).
DesignResult design_experiment(const DesignObjective& objective, const ExperimentPlan& plan0, const SgdOptions& opts,
                               const DesignProgress& progress = {});

/// CSV columns step, batch_objective, running_objective, gradient_norm, infeasible, u_0..u_{n-1}.
void write_trace_csv(std::ostream& out, const std::vector<TraceRow>& trace);

/// CSV columns t, u_0..u_{n_u-1}.
void write_plan_csv(std::ostream& out, const ExperimentPlan& plan);

}  // namespace expdesign
