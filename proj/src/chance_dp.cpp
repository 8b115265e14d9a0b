#include "expdesign/chance_dp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "expdesign/dataset_io.hpp"
#include "expdesign/errors.hpp"

namespace expdesign {

namespace {

constexpr double kTieTolerance = 1e-12;

std::vector<int> magnitude_order(const Eigen::VectorXd& inputs) {
  std::vector<int> order(static_cast<std::size_t>(inputs.size()));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    const double ma = std::abs(inputs(a));
    const double mb = std::abs(inputs(b));
    if (ma != mb) return ma < mb;
    return inputs(a) < inputs(b);
  });
  return order;
}

// First node index j with states[j] > x, minus one; requires states[0] < x.
int bracket(const Eigen::VectorXd& states, double x) {
  const double* begin = states.data();
  const double* end = begin + states.size();
  return static_cast<int>(std::upper_bound(begin, end, x) - begin) - 1;
}

}  // namespace

void ProblemSpec::validate() const {
  if (!(safe_lo < safe_hi)) throw std::invalid_argument("ProblemSpec: safe set must have safe_lo < safe_hi");
  if (!(risk_tolerance > 0 && risk_tolerance <= 1)) {
    throw std::invalid_argument("ProblemSpec: risk_tolerance must lie in (0, 1]");
  }
  if (!(input_lo <= input_hi)) throw std::invalid_argument("ProblemSpec: empty input box");
  if (horizon < 1) throw std::invalid_argument("ProblemSpec: horizon must be >= 1");
  if (!std::isfinite(x0)) throw std::invalid_argument("ProblemSpec: x0 must be finite");
}

int Grids::active_count(const ProblemSpec& spec) const {
  const double* begin = states.data();
  return static_cast<int>(std::lower_bound(begin, begin + states.size(), spec.safe_lo) - begin);
}

int Grids::nearest(double x) const {
  const int n = state_count();
  if (x <= states(0)) return 0;
  if (x >= states(n - 1)) return n - 1;
  const int j = bracket(states, x);
  return (x - states(j) <= states(j + 1) - x) ? j : j + 1;
}

Grids make_grids(const ProblemSpec& spec, Eigen::VectorXd states, Eigen::VectorXd inputs, int quadrature_order) {
  spec.validate();
  if (states.size() < 2) throw std::invalid_argument("make_grids: need at least two state nodes");
  for (Eigen::Index i = 1; i < states.size(); ++i) {
    if (!(states(i) > states(i - 1))) throw std::invalid_argument("make_grids: state nodes must be strictly increasing");
  }
  if (inputs.size() < 1) throw std::invalid_argument("make_grids: need at least one input node");
  for (Eigen::Index j = 0; j < inputs.size(); ++j) {
    if (inputs(j) < spec.input_lo || inputs(j) > spec.input_hi) {
      throw std::invalid_argument("make_grids: input node outside the input box");
    }
  }
  if (!(states.array() == spec.safe_lo).any()) {
    throw std::invalid_argument("make_grids: the state grid must contain the safe-set lower edge");
  }
  if (states(0) >= spec.safe_lo) throw std::invalid_argument("make_grids: no state node below the safe set");
  Grids g;
  g.states = std::move(states);
  g.inputs = std::move(inputs);
  g.quadrature = gauss_hermite<double>(quadrature_order);
  g.input_order = magnitude_order(g.inputs);
  return g;
}

Grids build_grids(const ProblemSpec& spec, const GridOptions& opts) {
  spec.validate();
  if (!(opts.state_step > 0)) throw std::invalid_argument("build_grids: state_step must be > 0");
  if (!(opts.state_lo < spec.safe_lo) || !(opts.state_hi >= spec.safe_hi)) {
    throw std::invalid_argument("build_grids: state range must start below the safe set and cover it");
  }
  if (spec.x0 < opts.state_lo || spec.x0 > opts.state_hi) {
    throw std::invalid_argument("build_grids: x0 outside the state range");
  }
  if (opts.input_count < 1 || opts.quadrature_order < 1) {
    throw std::invalid_argument("build_grids: input_count and quadrature_order must be >= 1");
  }
  const double h = opts.state_step;
  const auto n = static_cast<long>(std::floor((opts.state_hi - opts.state_lo) / h + 1e-9)) + 1;
  std::vector<double> nodes;
  nodes.reserve(static_cast<std::size_t>(n) + 2);
  bool have_lo = false;
  bool have_hi = false;
  for (long i = 0; i < n; ++i) {
    double x = opts.state_lo + static_cast<double>(i) * h;
    if (std::abs(x - spec.safe_lo) <= 1e-6 * h) {
      x = spec.safe_lo;
      have_lo = true;
    } else if (std::abs(x - spec.safe_hi) <= 1e-6 * h) {
      x = spec.safe_hi;
      have_hi = true;
    } else if (std::abs(x - spec.x0) <= 1e-6 * h) {
      x = spec.x0;
    } else if (std::abs(x) <= 1e-6 * h) {
      x = 0.0;
    }
    nodes.push_back(x);
  }
  if (!have_lo) nodes.push_back(spec.safe_lo);
  if (!have_hi) nodes.push_back(spec.safe_hi);
  std::sort(nodes.begin(), nodes.end());
  nodes.erase(std::unique(nodes.begin(), nodes.end()), nodes.end());

  Eigen::VectorXd inputs(opts.input_count);
  if (opts.input_count == 1) {
    inputs(0) = 0.5 * (spec.input_lo + spec.input_hi);
  } else {
    for (int j = 0; j < opts.input_count; ++j) {
      inputs(j) = spec.input_lo + (spec.input_hi - spec.input_lo) * j / (opts.input_count - 1);
    }
    inputs(opts.input_count - 1) = spec.input_hi;
    // Put an exact zero on the grid when it is a node up to rounding.
    for (int j = 0; j < opts.input_count; ++j) {
      if (std::abs(inputs(j)) <= 1e-12 * (spec.input_hi - spec.input_lo)) inputs(j) = 0.0;
    }
  }
  return make_grids(spec, Eigen::Map<Eigen::VectorXd>(nodes.data(), static_cast<Eigen::Index>(nodes.size())),
                    std::move(inputs), opts.quadrature_order);
}

Eigen::MatrixXd moment_queries(const ProblemSpec& spec, const Grids& grids) {
  const int active = grids.active_count(spec);
  const int nu = grids.input_count();
  Eigen::MatrixXd q(static_cast<Eigen::Index>(active) * nu, 2);
  for (int i = 0; i < active; ++i) {
    for (int j = 0; j < nu; ++j) {
      q(i * nu + j, 0) = grids.states(i);
      q(i * nu + j, 1) = grids.inputs(j);
    }
  }
  return q;
}

MomentTable moment_table(const Moments<double>& at_queries, const ProblemSpec& spec, const Grids& grids) {
  const int active = grids.active_count(spec);
  const int nu = grids.input_count();
  if (at_queries.mean.rows() != static_cast<Eigen::Index>(active) * nu || at_queries.mean.cols() != 1) {
    throw DimensionError("moment_table: moments do not match the active grid");
  }
  MomentTable t{Eigen::MatrixXd(active, nu), Eigen::MatrixXd(active, nu)};
  for (int i = 0; i < active; ++i) {
    for (int j = 0; j < nu; ++j) {
      t.mean(i, j) = at_queries.mean(i * nu + j, 0);
      t.variance(i, j) = at_queries.variance(i * nu + j, 0);
    }
  }
  return t;
}

MomentTable moment_table(const GaussianProcessd& gp, const ProblemSpec& spec, const Grids& grids) {
  if (gp.state_dim() != 1 || gp.input_dim() != 1) throw DimensionError("moment_table: the DP is scalar");
  return moment_table(gp.moments(moment_queries(spec, grids)), spec, grids);
}

MomentTable moment_table(const TrueProcessParams& truth, const ProblemSpec& spec, const Grids& grids) {
  const int active = grids.active_count(spec);
  const int nu = grids.input_count();
  MomentTable t{Eigen::MatrixXd(active, nu),
                Eigen::MatrixXd::Constant(active, nu, truth.noise_std * truth.noise_std)};
  for (int i = 0; i < active; ++i) {
    for (int j = 0; j < nu; ++j) t.mean(i, j) = true_mean(grids.states(i), grids.inputs(j), truth);
  }
  return t;
}

double interpolate_value(const Eigen::Ref<const Eigen::VectorXd>& values, double x, double crash_value,
                         const ProblemSpec& spec, const Grids& grids) {
  if (spec.in_safe(x)) return 0.0;
  if (spec.in_crash(x)) return crash_value;
  if (x <= grids.states(0)) return values(0);
  const int j = bracket(grids.states, x);
  const double alpha = (x - grids.states(j)) / (grids.states(j + 1) - grids.states(j));
  return (1.0 - alpha) * values(j) + alpha * values(j + 1);
}

double expected_cost_to_go(const Eigen::Ref<const Eigen::VectorXd>& next_values, double mean, double variance,
                           double crash_value, const ProblemSpec& spec, const Grids& grids) {
  const double sd = std::sqrt(std::max(variance, 0.0));
  return grids.quadrature.expect(
      [&](double v) { return interpolate_value(next_values, mean + sd * v, crash_value, spec, grids); });
}

TransitionRows::TransitionRows(const MomentTable& table, const ProblemSpec& spec, const Grids& grids)
    : input_count_(grids.input_count()) {
  const auto rows = static_cast<std::size_t>(table.mean.rows() * table.mean.cols());
  const auto& nodes = grids.quadrature.nodes;
  const auto& qw = grids.quadrature.weights;
  offsets_.reserve(rows + 1);
  crash_mass_.reserve(rows);
  index_.reserve(rows * static_cast<std::size_t>(2 * nodes.size()));
  weights_.reserve(index_.capacity());
  offsets_.push_back(0);
  // Nodes are ascending and sd >= 0, so bracket indices arrive in nondecreasing
  // order and duplicates are adjacent.
  auto add = [&](int idx, double w) {
    if (static_cast<int>(index_.size()) > offsets_.back() && index_.back() == idx) {
      weights_.back() += w;
    } else {
      index_.push_back(idx);
      weights_.push_back(w);
    }
  };
  for (Eigen::Index i = 0; i < table.mean.rows(); ++i) {
    for (Eigen::Index j = 0; j < table.mean.cols(); ++j) {
      const double mean = table.mean(i, j);
      const double sd = std::sqrt(std::max(table.variance(i, j), 0.0));
      double crash = 0.0;
      for (Eigen::Index k = 0; k < nodes.size(); ++k) {
        const double x = mean + sd * nodes(k);
        const double w = qw(k);
        if (spec.in_safe(x)) continue;
        if (spec.in_crash(x)) {
          crash += w;
        } else if (x <= grids.states(0)) {
          add(0, w);
        } else {
          const int b = bracket(grids.states, x);
          const double alpha = (x - grids.states(b)) / (grids.states(b + 1) - grids.states(b));
          add(b, (1.0 - alpha) * w);
          add(b + 1, alpha * w);
        }
      }
      offsets_.push_back(static_cast<int>(index_.size()));
      crash_mass_.push_back(crash);
    }
  }
}

ControlModel::ControlModel(ProblemSpec spec_in, Grids grids_in, MomentTable moments_in)
    : spec(std::move(spec_in)), grids(std::move(grids_in)), moments(std::move(moments_in)) {
  spec.validate();
  active = grids.active_count(spec);
  if (moments.mean.rows() != active || moments.mean.cols() != grids.input_count() ||
      moments.variance.rows() != active || moments.variance.cols() != grids.input_count()) {
    throw DimensionError("ControlModel: moment table does not match the active grid");
  }
  if (!moments.mean.allFinite() || !moments.variance.allFinite() || (moments.variance.array() < 0).any()) {
    throw NumericalError("ControlModel: moment table has non-finite entries or negative variances");
  }
  transitions = TransitionRows(moments, spec, grids);
}

ValuePolicy bellman_backward(const ControlModel& model, double lambda) {
  if (!(lambda >= 0)) throw std::invalid_argument("bellman_backward: lambda must be >= 0");
  const auto& spec = model.spec;
  const auto& grids = model.grids;
  const int n_t = spec.horizon;
  const int n_s = grids.state_count();
  ValuePolicy vp;
  vp.lambda = lambda;
  vp.value.resize(n_t + 1, n_s);
  vp.action.setConstant(n_t, n_s, -1);
  vp.policy.setZero(n_t, n_s);
  for (int s = 0; s < n_s; ++s) vp.value(n_t, s) = spec.in_safe(grids.states(s)) ? 0.0 : lambda;
  for (int t = n_t - 1; t >= 0; --t) {
    const double* next = vp.value.row(t + 1).data();
    for (int s = 0; s < model.active; ++s) {
      double best = std::numeric_limits<double>::infinity();
      int arg = -1;
      for (const int j : grids.input_order) {
        const double q = 1.0 + model.transitions.expect(model.transitions.row(s, j), next, lambda);
        if (q < best - kTieTolerance) {
          best = q;
          arg = j;
        }
      }
      vp.value(t, s) = best;
      vp.action(t, s) = arg;
      vp.policy(t, s) = grids.inputs(arg);
    }
    for (int s = model.active; s < n_s; ++s) vp.value(t, s) = spec.in_safe(grids.states(s)) ? 0.0 : lambda;
  }
  return vp;
}

PolicyStats evaluate_policy(const ControlModel& model, const ValuePolicy& vp) {
  const auto& spec = model.spec;
  const auto& grids = model.grids;
  const int n_s = grids.state_count();
  if (vp.horizon() != spec.horizon || vp.action.cols() != n_s) {
    throw DimensionError("evaluate_policy: policy does not match the model grids");
  }
  // Risk: 1 on crash absorption or unfinished at N. Time: unit stage cost until absorption.
  Eigen::VectorXd risk(n_s), time = Eigen::VectorXd::Zero(n_s);
  for (int s = 0; s < n_s; ++s) risk(s) = spec.in_safe(grids.states(s)) ? 0.0 : 1.0;
  Eigen::VectorXd next_risk(n_s), next_time(n_s);
  for (int t = spec.horizon - 1; t >= 0; --t) {
    next_risk.swap(risk);
    next_time.swap(time);
    for (int s = 0; s < model.active; ++s) {
      const int row = model.transitions.row(s, vp.action(t, s));
      risk(s) = model.transitions.expect(row, next_risk.data(), 1.0);
      time(s) = 1.0 + model.transitions.expect(row, next_time.data(), 0.0);
    }
    for (int s = model.active; s < n_s; ++s) {
      risk(s) = spec.in_safe(grids.states(s)) ? 0.0 : 1.0;
      time(s) = 0.0;
    }
  }
  return {interpolate_value(risk, spec.x0, 1.0, spec, grids), interpolate_value(time, spec.x0, 0.0, spec, grids)};
}

double evaluate_risk(const ControlModel& model, const ValuePolicy& vp) { return evaluate_policy(model, vp).risk; }

double evaluate_time(const ControlModel& model, const ValuePolicy& vp) { return evaluate_policy(model, vp).time; }

double value_at_start(const ControlModel& model, const ValuePolicy& vp) {
  return interpolate_value(vp.value.row(0).transpose(), model.spec.x0, vp.lambda, model.spec, model.grids);
}

namespace {

struct DualPoint {
  double lambda;
  ValuePolicy vp;
  PolicyStats stats;
  double value;  // J_0^λ(x0) = time + λ risk
};

DualPoint solve_at(const ControlModel& model, double lambda) {
  DualPoint p{lambda, bellman_backward(model, lambda), {}, 0.0};
  p.stats = evaluate_policy(model, p.vp);
  p.value = value_at_start(model, p.vp);
  return p;
}

DualSolution single(const ControlModel& model, DualPoint&& p, bool feasible, int iterations) {
  DualSolution sol;
  sol.lambda_star = p.lambda;
  sol.risk = p.stats.risk;
  sol.expected_time = p.stats.time;
  sol.dual_value = p.value - p.lambda * model.spec.risk_tolerance;
  sol.feasible = feasible;
  sol.iterations = iterations;
  sol.primary_stats = p.stats;
  sol.value_policy = std::move(p.vp);
  return sol;
}

// Randomizes between the bracket ends so that the mixture risk equals Δ.
DualSolution mixture(const ControlModel& model, double lambda_star, DualPoint&& lo, DualPoint&& hi, int iterations) {
  const double delta = model.spec.risk_tolerance;
  const double spread = lo.stats.risk - hi.stats.risk;
  const double p = spread > 0 ? std::clamp((delta - hi.stats.risk) / spread, 0.0, 1.0) : 0.0;
  DualSolution sol;
  sol.lambda_star = lambda_star;
  sol.mix_weight = p;
  sol.risk = p * lo.stats.risk + (1.0 - p) * hi.stats.risk;
  sol.expected_time = p * lo.stats.time + (1.0 - p) * hi.stats.time;
  sol.dual_value = sol.expected_time + lambda_star * (sol.risk - delta);
  sol.feasible = true;
  sol.iterations = iterations;
  sol.primary_stats = hi.stats;
  sol.alternate_stats = lo.stats;
  sol.value_policy = std::move(hi.vp);
  sol.alternate_policy = std::move(lo.vp);
  return sol;
}

std::string lambda_sweep(const ControlModel& model, const DualOptions& opts) {
  std::ostringstream msg;
  msg << "lambda sweep (lambda: risk):";
  for (int k = 0; k < 20; ++k) {
    const double lambda = opts.lambda_max * std::pow(10.0, -6.0 + 6.0 * k / 19.0);
    msg << ' ' << lambda << ": " << solve_at(model, lambda).stats.risk << ';';
  }
  return msg.str();
}

void check_options(const DualOptions& opts) {
  if (!(opts.lambda_max > 0) || !(opts.tolerance > 0) || opts.max_iterations < 2) {
    throw std::invalid_argument("solve_lambda: lambda_max and tolerance must be > 0, max_iterations >= 2");
  }
}

// Optimal policies satisfy (λ2 - λ1)(R2 - R1) <= 0 up to the rounding of J.
bool ordered(const DualPoint& a, const DualPoint& b) {
  const double slack = 1e-9 * (1.0 + std::abs(a.value) + std::abs(b.value));
  return (b.lambda - a.lambda) * (b.stats.risk - a.stats.risk) <= slack;
}

void check_monotone(const ControlModel& model, const DualOptions& opts, const DualPoint& lo, const DualPoint& mid,
                    const DualPoint& hi) {
  if (!ordered(lo, mid) || !ordered(mid, hi)) {
    std::ostringstream msg;
    msg.precision(17);
    msg << "solve_lambda: risk is not monotone in lambda; risk " << lo.stats.risk << ", " << mid.stats.risk << ", "
        << hi.stats.risk << " at lambda " << lo.lambda << ", " << mid.lambda << ", " << hi.lambda << "; "
        << lambda_sweep(model, opts);
    throw NumericalError(msg.str());
  }
}

}  // namespace

DualSolution solve_lambda_bisection(const ControlModel& model, const DualOptions& opts) {
  check_options(opts);
  const double delta = model.spec.risk_tolerance;
  int iterations = 1;
  DualPoint lo = solve_at(model, 0.0);
  if (lo.stats.risk <= delta) return single(model, std::move(lo), true, iterations);
  DualPoint hi = solve_at(model, opts.lambda_max);
  ++iterations;
  if (hi.stats.risk > delta) return single(model, std::move(hi), false, iterations);
  while (iterations < opts.max_iterations && hi.lambda - lo.lambda > opts.tolerance) {
    DualPoint mid = solve_at(model, 0.5 * (lo.lambda + hi.lambda));
    ++iterations;
    check_monotone(model, opts, lo, mid, hi);
    const double g = mid.stats.risk - delta;
    if (std::abs(g) <= opts.tolerance) return single(model, std::move(mid), true, iterations);
    (g > 0 ? lo : hi) = std::move(mid);
  }
  const double lambda_star = hi.lambda;
  return mixture(model, lambda_star, std::move(lo), std::move(hi), iterations);
}

DualBracket warm_bracket(const DualSolution& sol) {
  if (sol.mix_weight > 0) return {sol.alternate_policy.lambda, sol.value_policy.lambda};
  return {sol.lambda_star, sol.lambda_star};
}

DualSolution solve_lambda(const ControlModel& model, const DualOptions& opts, const std::optional<DualBracket>& start) {
  check_options(opts);
  const double delta = model.spec.risk_tolerance;
  int iterations = 0;
  auto eval = [&](double lambda) {
    ++iterations;
    return solve_at(model, lambda);
  };
  std::optional<DualPoint> lo;
  std::optional<DualPoint> hi;
  if (start) {
    const double a = std::clamp(start->lo, 0.0, opts.lambda_max);
    const double b = std::clamp(start->hi, a, opts.lambda_max);
    DualPoint pa = eval(a);
    (pa.stats.risk > delta ? lo : hi) = std::move(pa);
    if (lo && b > a) {
      DualPoint pb = eval(b);
      (pb.stats.risk > delta ? lo : hi) = std::move(pb);
    }
  }
  if (!lo) {
    if (hi && hi->lambda == 0.0) return single(model, std::move(*hi), true, iterations);
    DualPoint p0 = eval(0.0);
    if (p0.stats.risk <= delta) return single(model, std::move(p0), true, iterations);
    lo = std::move(p0);
  }
  if (!hi) {
    if (lo->lambda == opts.lambda_max) return single(model, std::move(*lo), false, iterations);
    DualPoint pm = eval(opts.lambda_max);
    if (pm.stats.risk > delta) return single(model, std::move(pm), false, iterations);
    hi = std::move(pm);
  }

  bool bisect_next = false;
  while (iterations < opts.max_iterations && hi->lambda - lo->lambda > 1e-12 * std::max(1.0, hi->lambda)) {
    const double spread = lo->stats.risk - hi->stats.risk;
    const double kink = (hi->stats.time - lo->stats.time) / spread;
    const bool cut = !bisect_next && kink > lo->lambda && kink < hi->lambda;
    const double lambda = cut ? kink : 0.5 * (lo->lambda + hi->lambda);
    DualPoint mid = eval(lambda);
    check_monotone(model, opts, *lo, mid, *hi);
    if (cut) {
      const double line = lo->stats.time + lambda * lo->stats.risk;
      if (mid.value >= line - 1e-12 * std::max(1.0, std::abs(line))) {
        // No policy beats the two bracket policies at the kink: it maximizes q.
        return mixture(model, lambda, std::move(*lo), std::move(*hi), iterations);
      }
    }
    const double width = hi->lambda - lo->lambda;
    (mid.stats.risk > delta ? lo : hi) = std::move(mid);
    // A cut that did not halve the bracket is followed by a bisection step.
    bisect_next = cut && hi->lambda - lo->lambda > 0.5 * width;
  }
  const double lambda_star = hi->lambda;
  return mixture(model, lambda_star, std::move(*lo), std::move(*hi), iterations);
}

double policy_input(const ValuePolicy& vp, const ProblemSpec& spec, const Grids& grids, int t, double x) {
  if (spec.absorbing(x)) return 0.0;
  t = std::clamp(t, 0, vp.horizon() - 1);
  const int active = grids.active_count(spec);
  const int s = std::min(grids.nearest(x), active - 1);
  return vp.policy(t, s);
}

void write_value_policy_csv(std::ostream& out, const ValuePolicy& vp, const Grids& grids) {
  out << "t,state,J,pi\n";
  const int n_t = vp.horizon();
  for (int t = 0; t <= n_t; ++t) {
    for (int s = 0; s < grids.state_count(); ++s) {
      out << t << ',' << format_double(grids.states(s)) << ',' << format_double(vp.value(t, s)) << ',';
      if (t < n_t) out << format_double(vp.policy(t, s));
      out << '\n';
    }
  }
}

}  // namespace expdesign
