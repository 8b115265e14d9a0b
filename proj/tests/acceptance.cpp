// Acceptance checks. Prints one PASS/FAIL line per criterion and exits 1 if any fails.
//
//   acceptance [--criteria 1,2,3,4,5,6,8] [--threads n]

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "desk.hpp"
#include "expdesign/benchmark.hpp"
#include "expdesign/config.hpp"
#include "expdesign/parallel.hpp"
#include "oracles.hpp"

using namespace expdesign;

namespace {

int g_threads = 1;
bool g_failed = false;

void report(const std::string& id, bool pass, const std::string& detail) {
  std::printf("%s criterion %s: %s\n", pass ? "PASS" : "FAIL", id.c_str(), detail.c_str());
  std::fflush(stdout);
  g_failed = g_failed || !pass;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double rel(double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); }

// 1. GP posterior against the dense inverse.
void gp_oracle() {
  std::mt19937_64 rng(101);
  std::uniform_int_distribution<int> size(1, 20), dim(1, 2);
  std::uniform_real_distribution<double> x(-0.3, 1.2), u(-0.1, 0.1), n(-0.05, 0.05), sf2(0.05, 1.0), ell(0.1, 0.6),
      noise(1e-6, 1e-3);
  double worst = 0.0;
  for (int k = 0; k < 100; ++k) {
    const int m = size(rng), nx = dim(rng);
    auto draw = [&](int rows) {
      Eigen::MatrixXd xs(rows, nx), us(rows, 1), ys(rows, nx);
      for (int i = 0; i < rows; ++i) {
        for (int d = 0; d < nx; ++d) xs(i, d) = x(rng);
        us(i, 0) = u(rng);
        for (int d = 0; d < nx; ++d) ys(i, d) = xs(i, d) + (1.0 + d) * us(i, 0) + n(rng);
      }
      return Datasetd(xs, us, ys);
    };
    const Datasetd data = draw(m);
    GpHyperparamsd hp = GpHyperparamsd::uniform(nx, {0.25, 0.3, 1e-4});
    for (auto& o : hp.outputs) o = {sf2(rng), ell(rng), noise(rng)};
    if (k % 4 == 3) hp.mean = MeanFunction::Zero;
    const auto gp = GaussianProcessd::fit(data, hp);
    const Eigen::MatrixXd q = draw(8).indices();
    const auto mom = gp.moments(q);
    for (int i = 0; i < q.rows(); ++i) {
      for (int d = 0; d < nx; ++d) {
        const auto [om, ov] = oracle::dense_moments(data, hp, d, q.row(i).transpose());
        worst = std::max({worst, rel(mom.mean(i, d), om), rel(mom.variance(i, d), ov)});
      }
    }
  }
  report("1", worst <= 1e-10, fmt("100 datasets, max relative error %.3g (tolerance 1e-10)", worst));
}

// 2. Bellman recursion against enumeration of every Markov policy.
void dp_oracle() {
  std::mt19937_64 rng(77);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const int n_active = 1 + trial % 3;
    const int horizon = 1 + (trial / 3) % 3;
    const auto chain = oracle::random_chain(rng, n_active, horizon, 2 + trial % 4);
    const ControlModel m(chain.spec,
                         make_grids(chain.spec, chain.states, chain.inputs, static_cast<int>(chain.nodes.size())),
                         MomentTable{chain.mean, chain.variance});
    for (const double lambda : {0.0, 0.3, 2.5, 25.0}) {
      const ValuePolicy vp = bellman_backward(m, lambda);
      const Eigen::VectorXd best = chain.optimal_values(lambda);
      std::vector<std::vector<int>> pol(static_cast<std::size_t>(horizon));
      for (int t = 0; t < horizon; ++t) {
        for (int s = 0; s < n_active; ++s) pol[static_cast<std::size_t>(t)].push_back(vp.action(t, s));
      }
      using C = oracle::ToyChain::Cost;
      for (int s = 0; s < n_active; ++s) {
        ControlModel from = m;
        from.spec.x0 = chain.states(s);
        const PolicyStats st = evaluate_policy(from, vp);
        worst = std::max({worst, std::abs(vp.value(0, s) - best(s)),
                          std::abs(st.risk - chain.path_value(pol, 0, s, C::Risk, lambda)),
                          std::abs(st.time - chain.path_value(pol, 0, s, C::Time, lambda))});
      }
    }
  }
  report("2", worst <= 1e-10, fmt("20 chains x 4 multipliers, max abs error %.3g (tolerance 1e-10)", worst));
}

std::vector<double> lambda_sweep() {
  std::vector<double> l{0.0};
  for (int i = 0; i < 19; ++i) l.push_back(std::pow(10.0, -3.0 + 7.0 * i / 18.0));
  return l;
}

// 3. Dual solution on the desk instance and on models after sampled experiments.
void dual_checks() {
  const BenchmarkOptions o = desk::options();
  const Datasetd d = desk::data(o);
  const BenchmarkInstance inst(desk::kTrials, d, o);
  const ExperimentPlan plan =
      open_loop_inputs(inst.objective.posterior(), inst.prior_solution.value_policy, o.problem, inst.objective.grids());

  std::vector<ControlModel> models{desk::gp_model(d, o), desk::perfect_model(o)};
  for (int i = 0; i < 10; ++i) {
    Rng rng = derive_rng(o.seed, stream::kDesignNoise, 5000, static_cast<std::uint64_t>(i));
    const Trajectory e = reparam_rollout(inst.objective.posterior(), plan, draw_noise(o.problem.horizon, 1, rng));
    models.push_back(desk::gp_model(augment(d, e), o));
  }

  const double delta = o.problem.risk_tolerance;
  int feasible = 0;
  double worst_excess = -1.0, worst_slack = 0.0, worst_rise = 0.0;
  bool ok = true;
  for (const ControlModel& m : models) {
    const DualSolution sol = solve_lambda(m, o.dual);
    if (sol.feasible) {
      ++feasible;
      const double excess = std::max(sol.risk, sol.primary_stats.risk) - delta;
      const double slack = std::abs(sol.lambda_star * (sol.risk - delta)) / std::max(1.0, sol.lambda_star);
      worst_excess = std::max(worst_excess, excess);
      worst_slack = std::max(worst_slack, slack);
      ok = ok && excess <= 1e-3 && slack <= 1e-3;
    }
    double prev = 2.0;
    for (const double lambda : lambda_sweep()) {
      const double r = evaluate_risk(m, bellman_backward(m, lambda));
      worst_rise = std::max(worst_rise, r - prev);
      prev = r;
    }
  }
  ok = ok && feasible > 0 && worst_rise <= 1e-8;
  report("3", ok,
         fmt("%d of %zu solves feasible, max risk - delta %.3g, max |lambda (risk - delta)| / max(1, lambda) %.3g, "
             "max risk increase along the sweep %.3g",
             feasible, models.size(), worst_excess, worst_slack, worst_rise));
}

// 4. Shape of the perfect-information policy at t = 0.
void policy_shape() {
  const BenchmarkOptions o = desk::options();
  const ControlModel m = desk::perfect_model(o);
  const DualSolution sol = solve_lambda(m, o.dual);
  const auto& g = m.grids;
  std::string low, high;
  for (int s = 0; s < g.state_count(); ++s) {
    const double x = g.states(s), u = sol.value_policy.policy(0, s);
    if (x >= -1e-9 && x <= 0.55 + 1e-9 && u < 0.099) low += fmt(" %.3f->%.3f", x, u);
    if (x >= 0.75 - 1e-9 && x <= 0.80 + 1e-9 && u >= 0.1) high += fmt(" %.3f->%.3f", x, u);
  }
  const double et = sol.expected_time;
  const bool ok = low.empty() && high.empty() && sol.feasible && et >= 8.0 && et <= 13.0;
  report("4", ok,
         fmt("feasible %d, lambda* %.4g, E[T] %.4f; nodes in [0, 0.55] below 0.099:%s; nodes in [0.75, 0.80] at 0.1:%s",
             sol.feasible, sol.lambda_star, et, low.empty() ? " none" : low.c_str(),
             high.empty() ? " none" : high.c_str()));
}

// 5a. Central differences on a synthetic objective with a known gradient.
void fd_oracle() {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  const int n = 15;
  Eigen::MatrixXd b(n, n);
  for (auto& v : b.reshaped()) v = unit(rng);
  const Eigen::MatrixXd a = b.transpose() * b;
  Eigen::VectorXd c(n), x(n), lin(n);
  for (int i = 0; i < n; ++i) {
    c(i) = unit(rng);
    x(i) = 0.08 * unit(rng);
    lin(i) = unit(rng);
  }
  auto quad = [&](const Eigen::VectorXd& z) { return 0.5 * z.dot(a * z) + lin.dot(z); };
  auto cubic = [&](const Eigen::VectorXd& z) { return quad(z) + c.dot(z.array().cube().matrix()); };
  const Eigen::VectorXd gq = a * x + lin;
  const Eigen::VectorXd gc = gq + (3.0 * c.array() * x.array().square()).matrix();
  const double cmax = c.cwiseAbs().maxCoeff();
  bool ok = true;
  std::string detail;
  double prev = 0.0;
  for (const double h : {2e-3, 1e-3, 5e-4}) {
    const double eq = (central_difference(quad, x, -0.1, 0.1, h).gradient - gq).cwiseAbs().maxCoeff();
    const double ec = (central_difference(cubic, x, -0.1, 0.1, h).gradient - gc).cwiseAbs().maxCoeff();
    ok = ok && eq <= 1e-9 && ec <= cmax * h * h * (1.0 + 1e-6);
    if (prev > 0.0) ok = ok && std::abs(prev / ec - 4.0) <= 0.01;
    detail += fmt(" h=%.0e: quadratic %.2g, cubic %.3g (bound %.3g);", h, eq, ec, cmax * h * h);
    prev = ec;
  }
  report("5a", ok, "max gradient error" + detail);
}

// 5b. Gradients at fd_step and fd_step / 2 on one desk sample.
void richardson() {
  const BenchmarkOptions o = desk::options();
  const BenchmarkInstance inst(desk::kTrials, desk::data(o), o);
  const ExperimentPlan plan =
      open_loop_inputs(inst.objective.posterior(), inst.prior_solution.value_policy, o.problem, inst.objective.grids());
  Rng rng = derive_rng(o.seed, stream::kDesignNoise, 0, 0);
  const NoiseDraws v = draw_noise(o.problem.horizon, 1, rng);
  const double h = o.design.fd_step;
  const SampleGradient g1 = sample_gradient(inst.objective, plan, v, h);
  const SampleGradient g2 = sample_gradient(inst.objective, plan, v, h / 2);
  const int n = static_cast<int>(g1.gradient.size());
  int agree = 0;
  std::string rows;
  for (int i = 0; i < n; ++i) {
    const double a = g1.gradient(i), b = g2.gradient(i);
    const bool same = std::abs(a - b) <= 0.05 * std::max(std::abs(a), std::abs(b));
    agree += same;
    rows += fmt(" %.4g/%.4g%s", a, b, same ? "" : "*");
  }
  report("5b", agree >= 0.9 * n,
         fmt("%d of %d coordinates agree within 5%% (feasible %d, lambda* %.3g); h vs h/2:", agree, n,
             g1.at_plan.feasible, g1.at_plan.lambda_star) +
             rows);
}

// 5c. Standard error of batch means from disjoint batches of one pool of samples.
void standard_error() {
  const BenchmarkOptions o = desk::options();
  const BenchmarkInstance inst(desk::kTrials, desk::data(o), o);
  const ExperimentPlan plan =
      open_loop_inputs(inst.objective.posterior(), inst.prior_solution.value_policy, o.problem, inst.objective.grids());
  const std::vector<int> sizes{10, 40, 160};
  const int pool = 160 * 40;
  std::vector<double> c(static_cast<std::size_t>(pool));
  parallel_for(pool, g_threads, [&](int i) {
    Rng rng = derive_rng(o.seed, stream::kDesignNoise, 7000, static_cast<std::uint64_t>(i));
    c[static_cast<std::size_t>(i)] = sample_objective(inst.objective, plan, draw_noise(o.problem.horizon, 1, rng));
  });
  std::vector<double> lx, ly;
  std::string detail;
  for (const int l : sizes) {
    std::vector<double> means;
    for (int start = 0; start + l <= pool; start += l) {
      double s = 0.0;
      for (int i = start; i < start + l; ++i) s += c[static_cast<std::size_t>(i)];
      means.push_back(s / l);
    }
    const auto [mu, hw] = mean_ci95(means);
    const double se = hw / 1.96 * std::sqrt(static_cast<double>(means.size()));
    lx.push_back(std::log(l));
    ly.push_back(std::log(se));
    detail += fmt(" L=%d: %.4g (%zu batches);", l, se, means.size());
    (void)mu;
  }
  const double mx = (lx[0] + lx[1] + lx[2]) / 3, my = (ly[0] + ly[1] + ly[2]) / 3;
  double sxy = 0.0, sxx = 0.0;
  for (int i = 0; i < 3; ++i) {
    sxy += (lx[i] - mx) * (ly[i] - my);
    sxx += (lx[i] - mx) * (lx[i] - mx);
  }
  const double slope = sxy / sxx;
  int infeasible = 0;
  for (const double v : c) infeasible += v > o.problem.horizon;
  report("5c", std::abs(slope + 0.5) <= 0.1,
         fmt("log-log slope %.3f (target -0.5 +- 0.1); %d samples, %d infeasible; standard error:", slope, pool,
             infeasible) +
             detail);
}

// 6. Designed experiments against random inputs at 25 trials on three seeds.
void benchmark_trend() {
  int gap_ok = 0, time_ok = 0;
  std::string detail;
  for (const std::uint64_t seed : {0ull, 1ull, 2ull}) {
    const auto t0 = std::chrono::steady_clock::now();
    BenchmarkOptions o = desk_preset().run;
    o.seed = seed;
    o.dataset_sizes = {25};
    o.methods = {MethodId::Random, MethodId::Designed};
    o.threads = g_threads;
    const auto reports = sweep(o);
    const BenchmarkReport& rnd = reports[0];
    const BenchmarkReport& des = reports[1];
    const double gap = des.feasibility_fraction - rnd.feasibility_fraction;
    const bool time = des.mean_time_model <= rnd.mean_time_model + 0.5;
    gap_ok += gap >= 0.10;
    time_ok += time;
    const double minutes = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / 60;
    const std::string line =
        fmt(" seed %llu: feasible designed %.3f random %.3f, E[T] designed %.3f random %.3f (%.0f min);",
            static_cast<unsigned long long>(seed), des.feasibility_fraction, rnd.feasibility_fraction,
            des.mean_time_model, rnd.mean_time_model, minutes);
    std::printf("  %s\n", line.c_str() + 1);
    std::fflush(stdout);
    detail += line;
  }
  report("6", gap_ok == 3 && time_ok == 3,
         fmt("feasibility gap >= 0.10 on %d/3 seeds, designed E[T] <= random + 0.5 on %d/3;", gap_ok, time_ok) +
             detail);
}

// 8. Reruns with one and several threads give identical output.
void determinism() {
  BenchmarkOptions o = desk::options();
  o.design.step_count = 3;
  o.design.batch_size = 4;
  o.n_outcomes = 6;
  o.mc_rollouts = 50;
  o.dataset_sizes = {10};
  o.methods = {MethodId::Designed, MethodId::Random, MethodId::OpenLoopOpt, MethodId::ClosedLoopOpt,
               MethodId::PerfectInfo};
  auto run = [&](int threads) {
    BenchmarkOptions r = o;
    r.threads = threads;
    r.design.threads = threads;
    const auto reports = sweep(r);
    std::ostringstream out;
    write_summary_csv(out, reports);
    write_outcomes_csv(out, reports);
    const BenchmarkInstance inst(10, gen_random_walk_dataset(10, r.seed, r.problem, r.truth, r.walk), r);
    const ExperimentInputs in = make_experiment_inputs(MethodId::Designed, inst, r);
    write_trace_csv(out, in.design->trace);
    write_value_policy_csv(out, inst.prior_solution.value_policy, inst.objective.grids());
    return out.str();
  };
  const std::string a = run(1), b = run(1), c = run(4);
  report("8", a == b && a == c,
         fmt("%zu bytes of summaries, outcomes, trace and policy; rerun identical %d, 4 threads identical %d", a.size(),
             a == b, a == c));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance checks"};
  std::vector<std::string> criteria{"1", "2", "3", "4", "5", "8"};
  g_threads = std::max(1u, std::thread::hardware_concurrency());
  app.add_option("--criteria", criteria, "criteria to run")->delimiter(',');
  app.add_option("--threads", g_threads, "worker threads")->check(CLI::PositiveNumber);
  CLI11_PARSE(app, argc, argv);

  const std::map<std::string, std::vector<std::function<void()>>> table{
      {"1", {gp_oracle}},    {"2", {dp_oracle}},       {"3", {dual_checks}},
      {"4", {policy_shape}}, {"5", {fd_oracle, richardson, standard_error}},
      {"6", {benchmark_trend}}, {"8", {determinism}}};
  for (const std::string& id : criteria) {
    const auto it = table.find(id);
    if (it == table.end()) {
      std::fprintf(stderr, "unknown criterion %s\n", id.c_str());
      return 2;
    }
    for (const auto& check : it->second) {
      try {
        check();
      } catch (const std::exception& e) {
        report(id, false, std::string("threw: ") + e.what());
      }
    }
  }
  return g_failed ? 1 : 0;
}
