#pragma once

#include <Eigen/Dense>

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "expdesign/gp_regression.hpp"
#include "expdesign/quadrature.hpp"
#include "expdesign/true_process.hpp"

namespace expdesign {

/// Minimum expected time to [safe_lo, safe_hi] with (safe_hi, inf) as the crash set.
struct ProblemSpec {
  double safe_lo = 1.0;
  double safe_hi = 1.05;
  double risk_tolerance = 0.25;
  double input_lo = -0.1;
  double input_hi = 0.1;
  int horizon = 15;
  double x0 = 0.0;

  void validate() const;

  bool in_safe(double x) const { return x >= safe_lo && x <= safe_hi; }
  bool in_crash(double x) const { return x > safe_hi; }
  bool absorbing(double x) const { return x >= safe_lo; }
  double clamp_input(double u) const { return u < input_lo ? input_lo : (u > input_hi ? input_hi : u); }
};

struct GridOptions {
  double state_lo = -0.3;
  double state_hi = 1.2;
  double state_step = 0.005;
  int input_count = 21;
  int quadrature_order = 10;
};

/// State nodes, input nodes and the standard-normal quadrature rule.
struct Grids {
  Eigen::VectorXd states;
  Eigen::VectorXd inputs;
  GaussHermiteRule<double> quadrature;
  /// Input indices ordered by (|u|, u); the argmin keeps the earliest on ties.
  std::vector<int> input_order;

  int state_count() const { return static_cast<int>(states.size()); }
  int input_count() const { return static_cast<int>(inputs.size()); }
  /// Number of leading state nodes below the safe set; only these need dynamics.
  int active_count(const ProblemSpec& spec) const;
  /// Index of the node closest to x.
  int nearest(double x) const;
};

/// Uniform state grid that also contains safe_lo and safe_hi exactly.
Grids build_grids(const ProblemSpec& spec, const GridOptions& opts);

/// Grids from explicit node sets (strictly increasing states, inputs inside the box).
Grids make_grids(const ProblemSpec& spec, Eigen::VectorXd states, Eigen::VectorXd inputs, int quadrature_order);

/// One-step predictive moments for every (active state node, input node) pair.
struct MomentTable {
  Eigen::MatrixXd mean;      // active states x inputs
  Eigen::MatrixXd variance;  // active states x inputs
};

/// Query indices (x, u) for the active state nodes; row i * inputs + j is (state i, input j).
Eigen::MatrixXd moment_queries(const ProblemSpec& spec, const Grids& grids);
MomentTable moment_table(const Moments<double>& at_queries, const ProblemSpec& spec, const Grids& grids);
MomentTable moment_table(const GaussianProcessd& gp, const ProblemSpec& spec, const Grids& grids);
/// Exact dynamics with only process noise left ("perfect information").
MomentTable moment_table(const TrueProcessParams& truth, const ProblemSpec& spec, const Grids& grids);

/// Ĵ(x): 0 inside the safe set, `crash_value` above it, otherwise piecewise-linear
/// interpolation of `values` clamped to the leftmost node below the grid.
double interpolate_value(const Eigen::Ref<const Eigen::VectorXd>& values, double x, double crash_value,
                         const ProblemSpec& spec, const Grids& grids);

/// Σ_k w_k Ĵ(mean + sqrt(variance) v_k).
double expected_cost_to_go(const Eigen::Ref<const Eigen::VectorXd>& next_values, double mean, double variance,
                           double crash_value, const ProblemSpec& spec, const Grids& grids);

/// expected_cost_to_go as precomputed sparse weights for every (active state, input) pair.
class TransitionRows {
 public:
  TransitionRows() = default;
  TransitionRows(const MomentTable& table, const ProblemSpec& spec, const Grids& grids);

  double expect(int row, const double* values, double crash_value) const {
    double acc = crash_mass_[static_cast<std::size_t>(row)] * crash_value;
    const int end = offsets_[static_cast<std::size_t>(row) + 1];
    for (int k = offsets_[static_cast<std::size_t>(row)]; k < end; ++k) {
      acc += weights_[static_cast<std::size_t>(k)] * values[index_[static_cast<std::size_t>(k)]];
    }
    return acc;
  }
  int row(int state, int input) const { return state * input_count_ + input; }

 private:
  int input_count_ = 0;
  std::vector<int> offsets_;
  std::vector<int> index_;
  std::vector<double> weights_;
  std::vector<double> crash_mass_;
};

/// Everything the DP needs for one predictive model.
struct ControlModel {
  ControlModel(ProblemSpec spec, Grids grids, MomentTable moments);

  ProblemSpec spec;
  Grids grids;
  MomentTable moments;
  TransitionRows transitions;
  int active = 0;
};

using TimeStateMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using TimeStateIndex = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Cost-to-go J_t^λ and argmin inputs on the state grid.
struct ValuePolicy {
  TimeStateMatrix value;   // (N + 1) x states
  TimeStateIndex action;   // N x states, input index or -1 at absorbing nodes
  TimeStateMatrix policy;  // N x states, input value (0 at absorbing nodes)
  double lambda = 0.0;

  int horizon() const { return static_cast<int>(action.rows()); }
};

ValuePolicy bellman_backward(const ControlModel& model, double lambda);

/// Risk and time of a fixed policy, evaluated from x0 at t = 0.
struct PolicyStats {
  double risk = 0.0;  // expected crash plus probability of not finishing by N
  double time = 0.0;  // expected steps until absorption, N if never absorbed
};

PolicyStats evaluate_policy(const ControlModel& model, const ValuePolicy& vp);
double evaluate_risk(const ControlModel& model, const ValuePolicy& vp);
double evaluate_time(const ControlModel& model, const ValuePolicy& vp);

/// J_0^λ(x0).
double value_at_start(const ControlModel& model, const ValuePolicy& vp);

struct DualOptions {
  double lambda_max = 1e4;
  double tolerance = 1e-3;
  int max_iterations = 60;
};

/// Solution of the Lagrangian dual.
///
/// When the risk of the deterministic argmin policies jumps across Δ at λ*, the
/// optimum randomizes: with probability `mix_weight` the run follows
/// `alternate_policy` (risk above Δ), otherwise `value_policy` (risk at most Δ).
/// `risk` and `expected_time` describe that mixture; risk then equals Δ.
struct DualSolution {
  double lambda_star = 0.0;
  ValuePolicy value_policy;
  ValuePolicy alternate_policy;
  double mix_weight = 0.0;
  double risk = 0.0;
  double expected_time = 0.0;
  /// q(λ*) = J_0^{λ*}(x0) - λ* Δ.
  double dual_value = 0.0;
  bool feasible = false;
  int iterations = 0;
  /// Risk and time of `value_policy` alone.
  PolicyStats primary_stats;
  PolicyStats alternate_stats;
};

/// Multipliers of the two policies a search should try first.
struct DualBracket {
  double lo = 0.0;
  double hi = 0.0;
};

/// The bracket that reproduces `sol` fastest when the model changes slightly.
DualBracket warm_bracket(const DualSolution& sol);

/// Maximizes the concave, piecewise-linear dual q(λ) = min_π T_π + λ (R_π - Δ) over
/// [0, λ_max]. Each DP solve contributes the line of its argmin policy; the search
/// keeps a bracket with risk above Δ at the left end, steps to the intersection of
/// the two bracket lines (bisecting when that stalls) and stops once no policy beats
/// both lines at that intersection. The result is the exact maximizer and does
/// not depend on `start`, which only saves DP solves. Infeasible problems return
/// the λ_max policy with feasible = false.
DualSolution solve_lambda(const ControlModel& model, const DualOptions& opts = {},
                          const std::optional<DualBracket>& start = std::nullopt);

/// Pure bisection on the subgradient, kept as the reference search.
DualSolution solve_lambda_bisection(const ControlModel& model, const DualOptions& opts = {});

/// Input applied by the policy at time t from state x (nearest node, 0 when absorbed).
double policy_input(const ValuePolicy& vp, const ProblemSpec& spec, const Grids& grids, int t, double x);

/// CSV rows (t, state, J, pi); t = N rows carry an empty pi.
void write_value_policy_csv(std::ostream& out, const ValuePolicy& vp, const Grids& grids);

}  // namespace expdesign
