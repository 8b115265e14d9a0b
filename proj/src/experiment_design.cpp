#include "expdesign/experiment_design.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <iostream>
#include <limits>
#include <ostream>
#include <stdexcept>

#include "expdesign/dataset_io.hpp"
#include "expdesign/errors.hpp"
#include "expdesign/parallel.hpp"

namespace expdesign {

void ExperimentPlan::set_flat(const Eigen::VectorXd& v) {
  if (v.size() != inputs.size()) throw DimensionError("ExperimentPlan::set_flat: size mismatch");
  inputs = v.reshaped(inputs.rows(), inputs.cols());
}

bool ExperimentPlan::within(const ProblemSpec& spec) const {
  return (inputs.array() >= spec.input_lo).all() && (inputs.array() <= spec.input_hi).all();
}

ExperimentPlan make_plan(const Eigen::VectorXd& scalar_inputs, double x0) {
  return {scalar_inputs, Eigen::VectorXd::Constant(1, x0)};
}

ExperimentPlan project(ExperimentPlan plan, const ProblemSpec& spec) {
  plan.inputs = plan.inputs.cwiseMax(spec.input_lo).cwiseMin(spec.input_hi);
  return plan;
}

NoiseDraws draw_noise(int horizon, int state_dim, Rng& rng) {
  std::normal_distribution<double> normal;
  NoiseDraws v(horizon, state_dim);
  for (int t = 0; t < horizon; ++t) {
    for (int d = 0; d < state_dim; ++d) v(t, d) = normal(rng);
  }
  return v;
}

Trajectory reparam_rollout(const GaussianProcessd& gp, const ExperimentPlan& plan, const NoiseDraws& v) {
  const int n = plan.length();
  const int nx = gp.state_dim();
  if (v.rows() != n || v.cols() != nx) throw DimensionError("reparam_rollout: noise draws do not match the plan");
  if (plan.x0.size() != nx || plan.inputs.cols() != gp.input_dim()) {
    throw DimensionError("reparam_rollout: plan dimensions do not match the posterior");
  }
  Trajectory traj{Eigen::MatrixXd(n + 1, nx), plan.inputs, Eigen::MatrixXd(n, nx)};
  traj.states.row(0) = plan.x0.transpose();
  for (int t = 0; t < n; ++t) {
    const Moments<double> m = gp.moments(traj.states.row(t).transpose(), plan.inputs.row(t).transpose());
    traj.states.row(t + 1) = m.mean.row(0) + (m.variance.row(0).array().sqrt() * v.row(t).array()).matrix();
  }
  traj.measurements = traj.states.bottomRows(n);
  return traj;
}

DesignObjective::DesignObjective(const Datasetd& data, const GpHyperparamsd& hp, const ProblemSpec& spec,
                                 const Grids& grids, const DualOptions& dual)
    : spec_(spec),
      grids_(grids),
      dual_(dual),
      cache_(GaussianProcessd::fit(data, hp), moment_queries(spec, grids)) {
  spec_.validate();
  if (data.state_dim() != 1 || data.input_dim() != 1) throw DimensionError("DesignObjective: the DP is scalar");
}

ObjectiveSample DesignObjective::score(const DualSolution& sol) const {
  ObjectiveSample s;
  s.feasible = sol.feasible;
  s.lambda_star = sol.lambda_star;
  s.risk = sol.risk;
  s.expected_time = sol.expected_time;
  s.dp_solves = sol.iterations;
  s.bracket = warm_bracket(sol);
  s.value = sol.feasible ? sol.expected_time
                         : spec_.horizon + dual_.lambda_max * (sol.risk - spec_.risk_tolerance);
  return s;
}

DualSolution DesignObjective::solve_with(const Datasetd& extra, const std::optional<DualBracket>& start) const {
  const ControlModel model(spec_, grids_, moment_table(cache_.moments_with(extra), spec_, grids_));
  return solve_lambda(model, dual_, start);
}

ObjectiveSample DesignObjective::evaluate(const ExperimentPlan& plan, const NoiseDraws& v,
                                          const std::optional<DualBracket>& start) const {
  return score(solve_with(reparam_rollout(cache_.base(), plan, v).as_dataset(), start));
}

ObjectiveSample DesignObjective::evaluate_refit(const ExperimentPlan& plan, const NoiseDraws& v) const {
  const Trajectory traj = reparam_rollout(cache_.base(), plan, v);
  const auto gp = GaussianProcessd::fit(augment(cache_.base().data(), traj), cache_.base().hyperparams());
  const ControlModel model(spec_, grids_, moment_table(gp, spec_, grids_));
  return score(solve_lambda(model, dual_));
}

double sample_objective(const DesignObjective& objective, const ExperimentPlan& plan, const NoiseDraws& v) {
  return objective.evaluate(plan, v).value;
}

FdGradient central_difference(const std::function<double(const Eigen::VectorXd&)>& f, const Eigen::VectorXd& x,
                              double lo, double hi, double step) {
  if (!(step > 0)) throw std::invalid_argument("central_difference: step must be > 0");
  FdGradient out{Eigen::VectorXd::Zero(x.size()), {}};
  Eigen::VectorXd probe = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double up = std::min(x(i) + step, hi);
    const double down = std::max(x(i) - step, lo);
    if (!(up > down)) {
      out.degenerate.push_back(static_cast<int>(i));
      continue;
    }
    probe(i) = up;
    const double f_up = f(probe);
    probe(i) = down;
    const double f_down = f(probe);
    probe(i) = x(i);
    out.gradient(i) = (f_up - f_down) / (up - down);
  }
  return out;
}

SampleGradient sample_gradient(const DesignObjective& objective, const ExperimentPlan& plan, const NoiseDraws& v,
                               double fd_step) {
  SampleGradient out;
  out.at_plan = objective.evaluate(plan, v);
  const DualBracket warm = out.at_plan.bracket;
  ExperimentPlan moved = plan;
  auto f = [&](const Eigen::VectorXd& flat) {
    moved.set_flat(flat);
    return objective.evaluate(moved, v, warm).value;
  };
  FdGradient fd = central_difference(f, plan.flat(), objective.spec().input_lo, objective.spec().input_hi, fd_step);
  for (const int i : fd.degenerate) {
    std::clog << "warning: sample_gradient: coordinate " << i << " has zero perturbation width; gradient set to 0\n";
  }
  out.gradient = std::move(fd.gradient);
  out.degenerate = std::move(fd.degenerate);
  return out;
}

void SgdOptions::validate() const {
  if (step_count < 0) throw std::invalid_argument("SgdOptions: step_count must be >= 0");
  if (batch_size < 1) throw std::invalid_argument("SgdOptions: batch_size must be >= 1");
  if (!(learning_rate >= 0)) throw std::invalid_argument("SgdOptions: learning_rate must be >= 0");
  if (!(fd_step > 0)) throw std::invalid_argument("SgdOptions: fd_step must be > 0");
  if (window < 1) throw std::invalid_argument("SgdOptions: window must be >= 1");
  if (threads < 1) throw std::invalid_argument("SgdOptions: threads must be >= 1");
}

DesignResult design_experiment(const DesignObjective& objective, const ExperimentPlan& plan0, const SgdOptions& opts,
                               const DesignProgress& progress) {
  opts.validate();
  const ProblemSpec& spec = objective.spec();
  if (!plan0.within(spec)) throw std::invalid_argument("design_experiment: initial plan outside the input box");
  const int nx = objective.posterior().state_dim();
  DesignResult result{plan0, plan0, {}, -1, false};
  ExperimentPlan plan = plan0;
  std::deque<double> window;
  double window_sum = 0.0;
  double best_running = std::numeric_limits<double>::infinity();

  std::vector<SampleGradient> batch(static_cast<std::size_t>(opts.batch_size));
  for (int k = 0; k < opts.step_count; ++k) {
    parallel_for(opts.batch_size, opts.threads, [&](int i) {
      Rng rng = derive_rng(opts.rng_seed, stream::kDesignNoise, static_cast<std::uint64_t>(k),
                           static_cast<std::uint64_t>(i));
      const NoiseDraws v = draw_noise(plan.length(), nx, rng);
      batch[static_cast<std::size_t>(i)] = sample_gradient(objective, plan, v, opts.fd_step);
    });
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(plan.inputs.size());
    double objective_sum = 0.0;
    int infeasible = 0;
    for (const auto& s : batch) {
      grad += s.gradient;
      objective_sum += s.at_plan.value;
      infeasible += s.at_plan.feasible ? 0 : 1;
    }
    grad /= opts.batch_size;

    TraceRow row;
    row.step = k;
    row.batch_objective = objective_sum / opts.batch_size;
    window.push_back(row.batch_objective);
    window_sum += row.batch_objective;
    if (static_cast<int>(window.size()) > opts.window) {
      window_sum -= window.front();
      window.pop_front();
    }
    row.running_objective = window_sum / static_cast<double>(window.size());
    row.gradient_norm = grad.norm();
    row.infeasible = infeasible;
    row.plan = plan.flat();
    if (progress) progress(row);
    result.trace.push_back(row);

    if (row.running_objective < best_running) {
      best_running = row.running_objective;
      result.best = plan;
      result.best_step = k;
    }

    const double lr = opts.decay ? opts.learning_rate / std::sqrt(static_cast<double>(k + 1)) : opts.learning_rate;
    plan.set_flat(plan.flat() - lr * grad);
    plan = project(std::move(plan), spec);

    if (opts.early_stop && k - result.best_step >= opts.window) {
      result.stopped_early = true;
      break;
    }
  }
  result.last = plan;
  return result;
}

void write_trace_csv(std::ostream& out, const std::vector<TraceRow>& trace) {
  out << "step,batch_objective,running_objective,gradient_norm,infeasible";
  const Eigen::Index n = trace.empty() ? 0 : trace.front().plan.size();
  for (Eigen::Index i = 0; i < n; ++i) out << ",u_" << i;
  out << '\n';
  for (const auto& row : trace) {
    out << row.step << ',' << format_double(row.batch_objective) << ',' << format_double(row.running_objective) << ','
        << format_double(row.gradient_norm) << ',' << row.infeasible;
    for (Eigen::Index i = 0; i < row.plan.size(); ++i) out << ',' << format_double(row.plan(i));
    out << '\n';
  }
}

void write_plan_csv(std::ostream& out, const ExperimentPlan& plan) {
  out << 't';
  for (Eigen::Index j = 0; j < plan.inputs.cols(); ++j) out << ",u_" << j;
  out << '\n';
  for (Eigen::Index t = 0; t < plan.inputs.rows(); ++t) {
    out << t;
    for (Eigen::Index j = 0; j < plan.inputs.cols(); ++j) out << ',' << format_double(plan.inputs(t, j));
    out << '\n';
  }
}

}  // namespace expdesign
