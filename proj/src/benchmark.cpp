#include "expdesign/benchmark.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <stdexcept>

#include "expdesign/dataset_io.hpp"
#include "expdesign/errors.hpp"
#include "expdesign/parallel.hpp"

namespace expdesign {

std::string_view method_name(MethodId m) {
  switch (m) {
    case MethodId::Designed: return "designed";
    case MethodId::Random: return "random";
    case MethodId::OpenLoopOpt: return "open_loop_opt";
    case MethodId::ClosedLoopOpt: return "closed_loop_opt";
    case MethodId::PerfectInfo: return "perfect_info";
  }
  return "unknown";
}

MethodId parse_method(std::string_view name) {
  for (const MethodId m : kAllMethods) {
    if (method_name(m) == name) return m;
  }
  throw std::invalid_argument("unknown method '" + std::string(name) + "'");
}

Eigen::VectorXd random_walk_inputs(int horizon, const ProblemSpec& spec, const RandomWalkLaw& law, Rng& rng) {
  std::normal_distribution<double> normal;
  Eigen::VectorXd u(horizon);
  for (int t = 0; t < horizon; ++t) u(t) = spec.clamp_input(law.mean + law.std * normal(rng));
  return u;
}

Datasetd gen_random_walk_dataset(int n_trials, std::uint64_t master_seed, const ProblemSpec& spec,
                                 const TrueProcessParams& truth, const RandomWalkLaw& law) {
  if (n_trials < 0) throw std::invalid_argument("gen_random_walk_dataset: n_trials must be >= 0");
  Datasetd data(1, 1);
  for (int i = 0; i < n_trials; ++i) {
    Rng rng = derive_rng(master_seed, stream::kRandomWalk, static_cast<std::uint64_t>(i));
    const Eigen::VectorXd u = random_walk_inputs(spec.horizon, spec, law, rng);
    data = augment(data, rollout_true(spec.x0, u, truth, rng));
  }
  return data;
}

void BenchmarkOptions::validate() const {
  problem.validate();
  truth.validate();
  gp.validate(1);
  design.validate();
  if (!(dual.lambda_max > 0) || !(dual.tolerance > 0) || dual.max_iterations < 2) {
    throw std::invalid_argument("benchmark: lambda_max and dual tolerance must be > 0, max_iterations >= 2");
  }
  if (n_outcomes < 1) throw std::invalid_argument("benchmark: n_outcomes must be >= 1");
  if (mc_rollouts < 1) throw std::invalid_argument("benchmark: mc_rollouts must be >= 1");
  if (threads < 1) throw std::invalid_argument("benchmark: threads must be >= 1");
  if (!(walk.std >= 0)) throw std::invalid_argument("benchmark: random-walk std must be >= 0");
  for (const int n : dataset_sizes) {
    if (n < 0) throw std::invalid_argument("benchmark: dataset sizes must be >= 0");
  }
}

BenchmarkInstance::BenchmarkInstance(int trials_in, const Datasetd& data, const BenchmarkOptions& opts)
    : trials(trials_in),
      objective(data, opts.gp, opts.problem, build_grids(opts.problem, opts.grid), opts.dual),
      prior_solution(objective.solve_with(Datasetd(1, 1))) {}

ExperimentPlan open_loop_inputs(const GaussianProcessd& gp, const ValuePolicy& policy, const ProblemSpec& spec,
                                const Grids& grids) {
  Eigen::VectorXd u(spec.horizon);
  Eigen::VectorXd x = Eigen::VectorXd::Constant(1, spec.x0);
  Eigen::VectorXd ut(1);
  for (int t = 0; t < spec.horizon; ++t) {
    ut(0) = policy_input(policy, spec, grids, t, x(0));
    u(t) = ut(0);
    x = gp.moments(x, ut).mean.row(0).transpose();
  }
  return make_plan(u, spec.x0);
}

ExperimentInputs make_experiment_inputs(MethodId method, const BenchmarkInstance& inst, const BenchmarkOptions& opts,
                                        const DesignProgress& progress) {
  const auto& objective = inst.objective;
  ExperimentInputs in;
  in.method = method;
  in.fallback = !inst.prior_solution.feasible;
  switch (method) {
    case MethodId::Random:
      in.kind = ExperimentInputs::Kind::RandomPerOutcome;
      in.fallback = false;
      break;
    case MethodId::OpenLoopOpt:
      in.kind = ExperimentInputs::Kind::OpenLoop;
      in.plan = open_loop_inputs(objective.posterior(), inst.prior_solution.value_policy, objective.spec(),
                                 objective.grids());
      break;
    case MethodId::ClosedLoopOpt:
      in.kind = ExperimentInputs::Kind::Feedback;
      in.feedback = inst.prior_solution.value_policy;
      break;
    case MethodId::Designed: {
      in.kind = ExperimentInputs::Kind::OpenLoop;
      const ExperimentPlan start = open_loop_inputs(objective.posterior(), inst.prior_solution.value_policy,
                                                    objective.spec(), objective.grids());
      SgdOptions sgd = opts.design;
      sgd.rng_seed = derive_rng(opts.seed, stream::kDesignNoise, static_cast<std::uint64_t>(inst.trials))();
      sgd.threads = opts.threads;
      in.design = design_experiment(objective, start, sgd, progress);
      in.plan = in.design->best;
      break;
    }
    case MethodId::PerfectInfo:
      throw std::invalid_argument("make_experiment_inputs: perfect_info adds no experiment");
  }
  return in;
}

std::pair<double, double> mean_ci95(const std::vector<double>& values) {
  const auto k = static_cast<double>(values.size());
  if (values.empty()) return {std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN()};
  double mean = 0.0;
  for (const double v : values) mean += v;
  mean /= k;
  if (values.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (const double v : values) ss += (v - mean) * (v - mean);
  return {mean, 1.96 * std::sqrt(ss / (k - 1.0)) / std::sqrt(k)};
}

void summarize(BenchmarkReport& report) {
  std::vector<double> model;
  std::vector<double> truth;
  for (const auto& r : report.outcomes) {
    if (!r.feasible) continue;
    if (r.model_expected_time) model.push_back(*r.model_expected_time);
    if (r.true_mc_time) truth.push_back(*r.true_mc_time);
  }
  report.feasibility_fraction =
      report.outcomes.empty() ? 0.0 : static_cast<double>(model.size()) / static_cast<double>(report.outcomes.size());
  std::tie(report.mean_time_model, report.ci95_half_width) = mean_ci95(model);
  report.mean_time_true = mean_ci95(truth).first;
}

PolicyStats monte_carlo_true(const DualSolution& sol, const ProblemSpec& spec, const Grids& grids,
                             const TrueProcessParams& truth, int rollouts, Rng& rng) {
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  std::normal_distribution<double> normal;
  double time = 0.0;
  double failed = 0.0;
  for (int r = 0; r < rollouts; ++r) {
    const bool alternate = sol.mix_weight > 0 && uniform(rng) < sol.mix_weight;
    const ValuePolicy& vp = alternate ? sol.alternate_policy : sol.value_policy;
    double x = spec.x0;
    int t = 0;
    while (t < spec.horizon && !spec.absorbing(x)) {
      x = step_true(x, policy_input(vp, spec, grids, t, x), truth, normal(rng));
      ++t;
    }
    time += t;
    if (!spec.in_safe(x)) failed += 1.0;
  }
  return {failed / rollouts, time / rollouts};
}

namespace {

OutcomeRecord record_from(int k, const DualSolution& sol, const ProblemSpec& spec, const Grids& grids,
                          const BenchmarkOptions& opts, std::uint64_t size_tag) {
  OutcomeRecord rec;
  rec.outcome_index = k;
  rec.feasible = sol.feasible;
  rec.lambda_star = sol.lambda_star;
  rec.risk = sol.risk;
  if (sol.feasible) {
    rec.model_expected_time = sol.expected_time;
    Rng mc = derive_rng(opts.seed, stream::kOutcomeMonteCarlo, size_tag, static_cast<std::uint64_t>(k));
    const PolicyStats stats = monte_carlo_true(sol, spec, grids, opts.truth, opts.mc_rollouts, mc);
    rec.true_mc_time = stats.time;
    rec.true_mc_risk = stats.risk;
  }
  return rec;
}

}  // namespace

BenchmarkReport run_outcomes(const ExperimentInputs& inputs, const BenchmarkInstance& inst,
                             const BenchmarkOptions& opts) {
  if (inputs.kind == ExperimentInputs::Kind::None) throw std::invalid_argument("run_outcomes: no experiment inputs");
  const auto& objective = inst.objective;
  const ProblemSpec& spec = objective.spec();
  const auto size_tag = static_cast<std::uint64_t>(inst.trials);
  BenchmarkReport report;
  report.method = inputs.method;
  report.dataset_size = inst.trials;
  report.seed = opts.seed;
  report.outcomes.resize(static_cast<std::size_t>(opts.n_outcomes));
  const std::optional<DualBracket> warm = warm_bracket(inst.prior_solution);

  parallel_for(opts.n_outcomes, opts.threads, [&](int k) {
    OutcomeRecord& rec = report.outcomes[static_cast<std::size_t>(k)];
    try {
      Rng noise = derive_rng(opts.seed, stream::kOutcome, size_tag, static_cast<std::uint64_t>(k));
      Trajectory traj;
      switch (inputs.kind) {
        case ExperimentInputs::Kind::OpenLoop:
          traj = rollout_true(spec.x0, Eigen::VectorXd(inputs.plan.inputs.col(0)), opts.truth, noise);
          break;
        case ExperimentInputs::Kind::Feedback: {
          const FeedbackPolicy policy = [&](int t, double x) {
            return policy_input(inputs.feedback, spec, objective.grids(), t, x);
          };
          traj = rollout_true(spec.x0, policy, spec.horizon, opts.truth, noise);
          break;
        }
        case ExperimentInputs::Kind::RandomPerOutcome: {
          Rng draw = derive_rng(opts.seed, stream::kExperimentInputs, size_tag, static_cast<std::uint64_t>(k));
          traj = rollout_true(spec.x0, random_walk_inputs(spec.horizon, spec, opts.walk, draw), opts.truth, noise);
          break;
        }
        case ExperimentInputs::Kind::None: break;
      }
      const DualSolution sol = objective.solve_with(traj.as_dataset(), warm);
      rec = record_from(k, sol, spec, objective.grids(), opts, size_tag);
    } catch (const NumericalError& e) {
      rec = OutcomeRecord{};
      rec.outcome_index = k;
      rec.error = e.what();
    }
    rec.fallback = inputs.fallback;
  });
  summarize(report);
  return report;
}

BenchmarkReport run_perfect_info(const BenchmarkOptions& opts) {
  const Grids grids = build_grids(opts.problem, opts.grid);
  const ControlModel model(opts.problem, grids, moment_table(opts.truth, opts.problem, grids));
  const DualSolution sol = solve_lambda(model, opts.dual);
  BenchmarkReport report;
  report.method = MethodId::PerfectInfo;
  report.dataset_size = 0;
  report.seed = opts.seed;
  report.outcomes.push_back(record_from(0, sol, opts.problem, grids, opts, 0));
  summarize(report);
  return report;
}

std::vector<BenchmarkReport> sweep(const BenchmarkOptions& opts, const SweepProgress& progress) {
  opts.validate();
  auto say = [&](const std::string& msg) {
    if (progress) progress(msg);
  };
  std::vector<BenchmarkReport> reports;
  const bool perfect = std::find(opts.methods.begin(), opts.methods.end(), MethodId::PerfectInfo) != opts.methods.end();
  std::optional<BenchmarkReport> bound;
  if (perfect) {
    say("perfect_info");
    bound = run_perfect_info(opts);
  }
  for (const int n : opts.dataset_sizes) {
    say("dataset size " + std::to_string(n) + ": fitting and solving");
    const BenchmarkInstance inst(n, gen_random_walk_dataset(n, opts.seed, opts.problem, opts.truth, opts.walk), opts);
    for (const MethodId m : opts.methods) {
      if (m == MethodId::PerfectInfo) {
        BenchmarkReport r = *bound;
        r.dataset_size = n;
        reports.push_back(std::move(r));
        continue;
      }
      say("dataset size " + std::to_string(n) + ": " + std::string(method_name(m)));
      DesignProgress design_progress;
      if (m == MethodId::Designed && progress) {
        design_progress = [&](const TraceRow& row) {
          if (row.step % 10 == 0) {
            progress("  design step " + std::to_string(row.step) + " running objective " +
                     format_double(row.running_objective));
          }
        };
      }
      const ExperimentInputs inputs = make_experiment_inputs(m, inst, opts, design_progress);
      reports.push_back(run_outcomes(inputs, inst, opts));
    }
  }
  return reports;
}

namespace {

std::string optional_value(double v) { return std::isnan(v) ? std::string() : format_double(v); }

std::string optional_value(const std::optional<double>& v) { return v ? format_double(*v) : std::string(); }

}  // namespace

void write_summary_csv(std::ostream& out, const std::vector<BenchmarkReport>& reports) {
  out << "method,dataset_size,n_outcomes,feasibility_fraction,mean_time_model,mean_time_true,ci95_half_width,seed\n";
  for (const auto& r : reports) {
    out << method_name(r.method) << ',' << r.dataset_size << ',' << r.n_outcomes() << ','
        << format_double(r.feasibility_fraction) << ',' << optional_value(r.mean_time_model) << ','
        << optional_value(r.mean_time_true) << ',' << optional_value(r.ci95_half_width) << ',' << r.seed << '\n';
  }
}

void write_outcomes_csv(std::ostream& out, const std::vector<BenchmarkReport>& reports) {
  out << "method,dataset_size,outcome_index,feasible,model_expected_time,true_mc_time,true_mc_risk,lambda_star,risk,"
         "fallback,error\n";
  for (const auto& r : reports) {
    for (const auto& o : r.outcomes) {
      std::string error = o.error;
      std::replace(error.begin(), error.end(), ',', ';');
      std::replace(error.begin(), error.end(), '\n', ' ');
      out << method_name(r.method) << ',' << r.dataset_size << ',' << o.outcome_index << ',' << (o.feasible ? 1 : 0)
          << ',' << optional_value(o.model_expected_time) << ',' << optional_value(o.true_mc_time) << ','
          << optional_value(o.true_mc_risk) << ',' << format_double(o.lambda_star) << ',' << format_double(o.risk)
          << ',' << (o.fallback ? 1 : 0) << ',' << error << '\n';
    }
  }
}

}  // namespace expdesign
