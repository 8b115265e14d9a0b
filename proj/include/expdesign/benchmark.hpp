#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "expdesign/chance_dp.hpp"
#include "expdesign/experiment_design.hpp"
#include "expdesign/true_process.hpp"

namespace expdesign {

enum class MethodId { Designed, Random, OpenLoopOpt, ClosedLoopOpt, PerfectInfo };

inline constexpr MethodId kAllMethods[] = {MethodId::Designed, MethodId::Random, MethodId::OpenLoopOpt,
                                           MethodId::ClosedLoopOpt, MethodId::PerfectInfo};

std::string_view method_name(MethodId m);
/// Throws std::invalid_argument for unknown names.
MethodId parse_method(std::string_view name);

/// u_t = clip(mean + std * xi_t) with xi_t standard normal.
struct RandomWalkLaw {
  double mean = 0.02;
  double std = 0.05;
};

Eigen::VectorXd random_walk_inputs(int horizon, const ProblemSpec& spec, const RandomWalkLaw& law, Rng& rng);

/// n_trials random-walk rollouts of the true plant from x0. Trial i draws from its
/// own stream, so the dataset for n trials is a prefix of the one for m > n.
Datasetd gen_random_walk_dataset(int n_trials, std::uint64_t master_seed, const ProblemSpec& spec,
                                 const TrueProcessParams& truth, const RandomWalkLaw& law = {});

struct BenchmarkOptions {
  ProblemSpec problem;
  TrueProcessParams truth;
  GpHyperparamsd gp = GpHyperparamsd::uniform(1, {});
  GridOptions grid;
  DualOptions dual;
  SgdOptions design;
  RandomWalkLaw walk;
  std::vector<int> dataset_sizes{5, 10, 25, 40};
  std::vector<MethodId> methods{std::begin(kAllMethods), std::end(kAllMethods)};
  int n_outcomes = 200;
  int mc_rollouts = 500;
  int threads = 1;
  std::uint64_t seed = 0;

  void validate() const;
};

/// The pre-experiment state of one dataset size: data, posterior on the DP grid
/// and the chance-constrained solution before any experiment.
struct BenchmarkInstance {
  BenchmarkInstance(int trials, const Datasetd& data, const BenchmarkOptions& opts);

  int trials = 0;
  DesignObjective objective;
  DualSolution prior_solution;
};

/// What a method feeds into the true plant during the experiment.
struct ExperimentInputs {
  enum class Kind { OpenLoop, Feedback, RandomPerOutcome, None };

  MethodId method = MethodId::Random;
  Kind kind = Kind::None;
  ExperimentPlan plan;
  ValuePolicy feedback;
  /// The pre-experiment solve was infeasible and its λ_max policy was used.
  bool fallback = false;
  std::optional<DesignResult> design;
};

/// Inputs along the noise-free posterior-mean rollout under the policy, by nearest-node lookup.
ExperimentPlan open_loop_inputs(const GaussianProcessd& gp, const ValuePolicy& policy, const ProblemSpec& spec,
                                const Grids& grids);

ExperimentInputs make_experiment_inputs(MethodId method, const BenchmarkInstance& inst, const BenchmarkOptions& opts,
                                        const DesignProgress& progress = {});

struct OutcomeRecord {
  int outcome_index = 0;
  bool feasible = false;
  std::optional<double> model_expected_time;
  std::optional<double> true_mc_time;
  /// Share of true-plant rollouts that crash or do not finish.
  std::optional<double> true_mc_risk;
  double lambda_star = 0.0;
  double risk = 0.0;
  bool fallback = false;
  std::string error;
};

struct BenchmarkReport {
  MethodId method = MethodId::Random;
  int dataset_size = 0;
  std::uint64_t seed = 0;
  std::vector<OutcomeRecord> outcomes;
  double feasibility_fraction = 0.0;
  /// Means over feasible outcomes; NaN when none is feasible.
  double mean_time_model = 0.0;
  double mean_time_true = 0.0;
  /// 1.96 s / sqrt(k) of the model times over the k feasible outcomes.
  double ci95_half_width = 0.0;

  int n_outcomes() const { return static_cast<int>(outcomes.size()); }
};

/// Fills the aggregate fields from `outcomes`.
void summarize(BenchmarkReport& report);

/// Mean and 1.96 s / sqrt(k) half-width (sample standard deviation; 0 for k < 2).
std::pair<double, double> mean_ci95(const std::vector<double>& values);

/// Mean steps to absorption and share of failed runs of the (possibly mixed)
/// policy on the true plant.
PolicyStats monte_carlo_true(const DualSolution& sol, const ProblemSpec& spec, const Grids& grids,
                             const TrueProcessParams& truth, int rollouts, Rng& rng);

/// Runs every outcome of one method. Outcome k draws its plant noise from
/// (seed, dataset size, k), shared by all methods.
BenchmarkReport run_outcomes(const ExperimentInputs& inputs, const BenchmarkInstance& inst,
                             const BenchmarkOptions& opts);

/// The perfect-information bound: one record, no experiment.
BenchmarkReport run_perfect_info(const BenchmarkOptions& opts);

using SweepProgress = std::function<void(const std::string&)>;

std::vector<BenchmarkReport> sweep(const BenchmarkOptions& opts, const SweepProgress& progress = {});

/// Columns method, dataset_size, n_outcomes, feasibility_fraction, mean_time_model,
/// mean_time_true, ci95_half_width, seed.
void write_summary_csv(std::ostream& out, const std::vector<BenchmarkReport>& reports);
/// One row per outcome.
void write_outcomes_csv(std::ostream& out, const std::vector<BenchmarkReport>& reports);

}  // namespace expdesign
