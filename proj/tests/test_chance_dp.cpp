#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "desk.hpp"
#include "expdesign/chance_dp.hpp"
#include "expdesign/errors.hpp"
#include "oracles.hpp"

using namespace expdesign;

namespace {

ControlModel chain_model(const oracle::ToyChain& c) {
  return ControlModel(c.spec, make_grids(c.spec, c.states, c.inputs, static_cast<int>(c.nodes.size())),
                      MomentTable{c.mean, c.variance});
}

std::vector<std::vector<int>> policy_table(const ValuePolicy& vp, int active) {
  std::vector<std::vector<int>> p(static_cast<std::size_t>(vp.horizon()));
  for (int t = 0; t < vp.horizon(); ++t) {
    for (int s = 0; s < active; ++s) p[static_cast<std::size_t>(t)].push_back(vp.action(t, s));
  }
  return p;
}

double dual_value(const ControlModel& m, double lambda) {
  return value_at_start(m, bellman_backward(m, lambda)) - lambda * m.spec.risk_tolerance;
}

}  // namespace

TEST_SUITE("chance_dp") {
  TEST_CASE("default grids") {
    const ProblemSpec spec;
    const Grids g = build_grids(spec, {});
    CHECK(g.state_count() == 301);
    CHECK((g.states.array() == 1.0).any());
    CHECK((g.states.array() == 1.05).any());
    CHECK((g.states.array() == 0.0).any());
    CHECK(g.states(0) == doctest::Approx(-0.3));
    CHECK(g.states(300) == doctest::Approx(1.2));
    CHECK(g.input_count() == 21);
    CHECK(g.inputs(0) == -0.1);
    CHECK(g.inputs(20) == 0.1);
    CHECK(g.inputs(10) == 0.0);
    CHECK(g.input_order.front() == 10);
    CHECK(std::abs(g.quadrature.weights.sum() - 1.0) <= 1e-12);
    CHECK(g.active_count(spec) == 260);
    CHECK(g.nearest(0.5012) == 160);

    CHECK_THROWS_AS(build_grids(spec, GridOptions{1.1, 1.2, 0.005, 21, 10}), std::invalid_argument);
    CHECK_THROWS_AS(build_grids(spec, GridOptions{-0.3, 1.2, 0.0, 21, 10}), std::invalid_argument);
    const Grids coarse = build_grids(spec, GridOptions{-0.3, 1.2, 0.007, 5, 1});
    CHECK((coarse.states.array() == 1.0).any());
    CHECK((coarse.states.array() == 1.05).any());
    CHECK(coarse.quadrature.nodes(0) == 0.0);
  }

  TEST_CASE("interpolation and expected cost-to-go") {
    const ProblemSpec spec;
    const Grids g = build_grids(spec, {});
    const double lambda = 7.0;
    Eigen::VectorXd linear = 2.0 * g.states.array() - 0.3;
    for (int s = 0; s < g.state_count(); ++s) {
      if (spec.in_safe(g.states(s))) linear(s) = 0.0;
      if (spec.in_crash(g.states(s))) linear(s) = lambda;
    }
    CHECK(interpolate_value(linear, 1.02, lambda, spec, g) == 0.0);
    CHECK(interpolate_value(linear, 1.06, lambda, spec, g) == lambda);
    CHECK(interpolate_value(linear, 9.0, lambda, spec, g) == lambda);
    CHECK(interpolate_value(linear, -4.0, lambda, spec, g) == linear(0));
    CHECK(interpolate_value(linear, 0.3021, lambda, spec, g) == doctest::Approx(2.0 * 0.3021 - 0.3).epsilon(1e-12));

    for (const double mean : {0.1, 0.35, 0.5}) {
      for (const double var : {1e-6, 1e-3, 4e-3}) {
        CHECK(std::abs(expected_cost_to_go(linear, mean, var, lambda, spec, g) - (2.0 * mean - 0.3)) <= 1e-10);
      }
    }
    const Eigen::VectorXd constant = Eigen::VectorXd::Constant(g.state_count(), 3.5);
    CHECK(std::abs(expected_cost_to_go(constant, 0.2, 0.01, 3.5, spec, g) - 3.5) <= 1e-12);
    CHECK(expected_cost_to_go(linear, 0.4, 1e-30, lambda, spec, g) == doctest::Approx(0.5).epsilon(1e-12));

    const ControlModel m(spec, g, MomentTable{Eigen::MatrixXd::Constant(260, 21, 0.44),
                                              Eigen::MatrixXd::Constant(260, 21, 2e-3)});
    CHECK(m.transitions.expect(m.transitions.row(3, 4), linear.data(), lambda) ==
          doctest::Approx(expected_cost_to_go(linear, 0.44, 2e-3, lambda, spec, g)).epsilon(1e-13));
  }

  TEST_CASE("toy chains match exhaustive enumeration") {
    std::mt19937_64 rng(2024);
    for (int trial = 0; trial < 20; ++trial) {
      const int n_active = 1 + trial % 3;
      const int horizon = 1 + (trial / 3) % 3;
      const auto chain = oracle::random_chain(rng, n_active, horizon, 2 + trial % 4);
      const ControlModel m = chain_model(chain);
      for (const double lambda : {0.0, 0.7, 3.0, 40.0}) {
        const ValuePolicy vp = bellman_backward(m, lambda);
        const Eigen::VectorXd best = chain.optimal_values(lambda);
        const auto pol = policy_table(vp, n_active);
        for (int s = 0; s < n_active; ++s) {
          CHECK(std::abs(vp.value(0, s) - best(s)) <= 1e-10);
          ControlModel from = m;
          from.spec.x0 = chain.states(s);
          const PolicyStats st = evaluate_policy(from, vp);
          using C = oracle::ToyChain::Cost;
          CHECK(std::abs(st.risk - chain.path_value(pol, 0, s, C::Risk, lambda)) <= 1e-10);
          CHECK(std::abs(st.time - chain.path_value(pol, 0, s, C::Time, lambda)) <= 1e-10);
          CHECK(std::abs(vp.value(0, s) - (st.time + lambda * st.risk)) <= 1e-10);
        }
      }
    }
  }

  TEST_CASE("absorption, bounds and monotonicity on the desk model") {
    const ControlModel m = desk::gp_model(desk::data());
    const auto& g = m.grids;
    const int n = m.spec.horizon;
    Eigen::MatrixXd prev;
    double prev_risk = 2.0;
    for (const double lambda : {0.0, 0.5, 2.0, 10.0, 50.0, 300.0}) {
      const ValuePolicy vp = bellman_backward(m, lambda);
      for (int t = 0; t <= n; ++t) {
        for (int s = 0; s < g.state_count(); ++s) {
          const double v = vp.value(t, s);
          if (m.spec.in_safe(g.states(s))) CHECK(v == 0.0);
          if (m.spec.in_crash(g.states(s))) CHECK(v == lambda);
          CHECK(v >= 0.0);
          CHECK(v <= (n - t) + lambda + 1e-12);
          if (t < n) {
            CHECK(vp.policy(t, s) >= m.spec.input_lo);
            CHECK(vp.policy(t, s) <= m.spec.input_hi);
          }
        }
      }
      if (prev.size() > 0) CHECK((vp.value.array() - prev.array()).minCoeff() >= -1e-12);
      prev = vp.value;
      const PolicyStats st = evaluate_policy(m, vp);
      CHECK(st.risk >= 0.0);
      CHECK(st.risk <= 1.0 + 1e-12);
      CHECK(st.time >= 0.0);
      CHECK(st.time <= n + 1e-12);
      CHECK(st.risk <= prev_risk + 1e-8);
      prev_risk = st.risk;
      CHECK(std::abs(value_at_start(m, vp) - (st.time + lambda * st.risk)) <= 1e-9 * std::max(1.0, lambda));
    }
  }

  TEST_CASE("time and risk edge cases") {
    ProblemSpec spec;
    const Grids g = build_grids(spec, {});
    const int a = g.active_count(spec);
    Eigen::MatrixXd stay(a, 21);
    for (int s = 0; s < a; ++s) stay.row(s).setConstant(g.states(s));
    const ControlModel frozen(spec, g, MomentTable{stay, Eigen::MatrixXd::Constant(a, 21, 1e-12)});
    const PolicyStats st = evaluate_policy(frozen, bellman_backward(frozen, 1.0));
    CHECK(st.time == doctest::Approx(15.0).epsilon(1e-9));
    CHECK(st.risk == doctest::Approx(1.0).epsilon(1e-9));

    spec.x0 = 1.02;
    const Grids g2 = build_grids(spec, {});
    const ControlModel inside(spec, g2, moment_table(TrueProcessParams{}, spec, g2));
    CHECK(evaluate_policy(inside, bellman_backward(inside, 5.0)).time == 0.0);
    CHECK(evaluate_policy(inside, bellman_backward(inside, 5.0)).risk == 0.0);

    // A deterministic jump onto the target node.
    ProblemSpec s3;
    s3.horizon = 3;
    const Grids g3 = build_grids(s3, {});
    const int a3 = g3.active_count(s3);
    const ControlModel jump(s3, g3, MomentTable{Eigen::MatrixXd::Constant(a3, 21, 1.01),
                                                Eigen::MatrixXd::Zero(a3, 21)});
    const PolicyStats js = evaluate_policy(jump, bellman_backward(jump, 2.0));
    CHECK(js.risk == 0.0);
    CHECK(js.time == 1.0);
  }

  TEST_CASE("ties pick the smallest input magnitude") {
    ProblemSpec spec;
    spec.horizon = 2;
    const Grids g = build_grids(spec, {});
    const int a = g.active_count(spec);
    const ControlModel m(spec, g, MomentTable{Eigen::MatrixXd::Constant(a, 21, 1.02),
                                              Eigen::MatrixXd::Constant(a, 21, 1e-6)});
    const ValuePolicy vp = bellman_backward(m, 1.0);
    for (int s = 0; s < a; ++s) CHECK(vp.policy(0, s) == 0.0);
  }

  TEST_CASE("dual solution contracts") {
    const ControlModel perfect = desk::perfect_model();
    const DualSolution sol = solve_lambda(perfect);
    CHECK(sol.feasible);
    CHECK(sol.risk <= perfect.spec.risk_tolerance + 1e-3);
    CHECK(std::abs(sol.lambda_star * (sol.risk - perfect.spec.risk_tolerance)) <= 1e-3 * std::max(1.0, sol.lambda_star));
    CHECK(sol.expected_time >= 8.0);
    CHECK(sol.expected_time <= 13.0);
    CHECK(sol.mix_weight >= 0.0);
    CHECK(sol.mix_weight <= 1.0);
    const double q_star = sol.dual_value;
    CHECK(std::abs(q_star - dual_value(perfect, sol.lambda_star)) <= 1e-9);
    for (int i = 0; i <= 20; ++i) {
      const double lambda = 2.0 * sol.lambda_star * i / 20.0 + 1e-4 * i;
      CHECK(dual_value(perfect, lambda) <= q_star + 1e-9);
    }
    // Weak duality: the mixed policy's time is the dual optimum when the constraint binds.
    if (sol.lambda_star > 0) CHECK(std::abs(sol.expected_time - q_star) <= 1e-6 * std::max(1.0, sol.lambda_star));

    const DualSolution reference = solve_lambda_bisection(perfect);
    CHECK(reference.feasible);
    CHECK(reference.dual_value <= q_star + 1e-9);
    CHECK(std::abs(reference.lambda_star - sol.lambda_star) <= 1e-3 * std::max(1.0, sol.lambda_star) + 2e-3);
  }

  TEST_CASE("vacuous constraint and the empty prior") {
    ProblemSpec loose;
    loose.risk_tolerance = 1.0;
    const Grids g = build_grids(loose, {});
    const ControlModel m(loose, g, moment_table(TrueProcessParams{}, loose, g));
    const DualSolution sol = solve_lambda(m);
    CHECK(sol.lambda_star == 0.0);
    CHECK(sol.feasible);
    CHECK(sol.risk <= 1.0);

    const ControlModel prior = desk::gp_model(Datasetd(1, 1));
    const DualSolution none = solve_lambda(prior);
    CHECK_FALSE(none.feasible);
    CHECK(none.lambda_star == DualOptions{}.lambda_max);
    for (const double lambda : {0.0, 1.0, 100.0, 1e4}) {
      CHECK(evaluate_policy(prior, bellman_backward(prior, lambda)).risk > prior.spec.risk_tolerance);
    }
  }

  TEST_CASE("warm start does not change the result") {
    const Datasetd d = desk::data();
    const ControlModel base = desk::gp_model(d);
    const DualSolution cold = solve_lambda(base);
    TrueProcessParams truth;
    Rng rng = derive_rng(5, 77);
    const Trajectory extra =
        rollout_true(0.0, Eigen::VectorXd::Constant(15, 0.1), truth, rng);
    const ControlModel after = desk::gp_model(augment(d, extra));
    const DualSolution a = solve_lambda(after);
    const DualSolution b = solve_lambda(after, {}, warm_bracket(cold));
    const DualSolution c = solve_lambda(after, {}, DualBracket{3.0, 4000.0});
    CHECK(a.feasible == b.feasible);
    CHECK(std::abs(a.lambda_star - b.lambda_star) <= 1e-9 * std::max(1.0, a.lambda_star));
    CHECK(std::abs(a.expected_time - b.expected_time) <= 1e-9);
    CHECK(std::abs(a.lambda_star - c.lambda_star) <= 1e-9 * std::max(1.0, a.lambda_star));
    CHECK(std::abs(a.risk - c.risk) <= 1e-9);
  }

  TEST_CASE("grid refinement changes J_0 by at most one percent") {
    const auto opts = desk::options();
    const Datasetd d = desk::data();
    GridOptions fine = opts.grid;
    fine.state_step /= 2;
    fine.quadrature_order *= 2;
    const Grids g0 = build_grids(opts.problem, opts.grid), g1 = build_grids(opts.problem, fine);
    auto check = [&](const MomentTable& t0, const MomentTable& t1) {
      const ControlModel m0(opts.problem, g0, t0), m1(opts.problem, g1, t1);
      const DualSolution sol = solve_lambda(m0);
      REQUIRE(sol.feasible);
      const double j0 = value_at_start(m0, bellman_backward(m0, sol.lambda_star));
      const double j1 = value_at_start(m1, bellman_backward(m1, sol.lambda_star));
      CHECK(std::abs(j1 - j0) <= 0.01 * j0);
    };
    check(moment_table(opts.truth, opts.problem, g0), moment_table(opts.truth, opts.problem, g1));
    for (int k = 0; k < 3; ++k) {
      Rng rng = derive_rng(3, 4, static_cast<std::uint64_t>(k));
      const Trajectory extra = rollout_true(0.0, Eigen::VectorXd::Constant(15, 0.1), opts.truth, rng);
      const auto gp = GaussianProcessd::fit(augment(d, extra), opts.gp);
      check(moment_table(gp, opts.problem, g0), moment_table(gp, opts.problem, g1));
    }
  }

  TEST_CASE("policy lookup and export") {
    const ControlModel m = desk::perfect_model();
    const ValuePolicy vp = bellman_backward(m, 1.0);
    CHECK(policy_input(vp, m.spec, m.grids, 0, 1.02) == 0.0);
    CHECK(policy_input(vp, m.spec, m.grids, 0, 0.1013) == vp.policy(0, m.grids.nearest(0.1013)));
    CHECK(policy_input(vp, m.spec, m.grids, 3, -5.0) == vp.policy(3, 0));
    std::ostringstream out;
    write_value_policy_csv(out, vp, m.grids);
    std::istringstream in(out.str());
    std::string line;
    std::getline(in, line);
    CHECK(line == "t,state,J,pi");
    int rows = 0;
    while (std::getline(in, line)) ++rows;
    CHECK(rows == 16 * 301);
  }

  TEST_CASE("invalid inputs") {
    const ControlModel m = desk::perfect_model();
    CHECK_THROWS_AS(bellman_backward(m, -1.0), std::invalid_argument);
    CHECK_THROWS_AS(solve_lambda(m, DualOptions{-1.0, 1e-3, 60}), std::invalid_argument);
    ProblemSpec bad;
    bad.risk_tolerance = 0.0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    CHECK_THROWS_AS(ControlModel(m.spec, m.grids, MomentTable{Eigen::MatrixXd::Zero(3, 3), Eigen::MatrixXd::Zero(3, 3)}),
                    DimensionError);
  }
}
