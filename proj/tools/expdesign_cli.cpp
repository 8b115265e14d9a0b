// expdesign: data generation, chance-constrained solves, experiment design and
// benchmark sweeps from one JSON configuration.
//
// Exit status: 0 success, 1 configuration or input error, 2 numerical failure.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "expdesign/benchmark.hpp"
#include "expdesign/config.hpp"
#include "expdesign/dataset_io.hpp"
#include "expdesign/errors.hpp"

namespace fs = std::filesystem;
using namespace expdesign;

namespace {

struct CommonArgs {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<int> threads;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config, "JSON run configuration (defaults when omitted)");
  cmd->add_option("--seed", args.seed, "Master seed, overrides master_seed");
  cmd->add_option("--out", args.out, "Output directory, overrides output_dir");
  cmd->add_option("--threads", args.threads, "Worker threads, overrides threads")->check(CLI::PositiveNumber);
}

RunConfig resolve(const CommonArgs& args) {
  RunConfig cfg = args.config.empty() ? RunConfig{} : load_config(args.config);
  if (args.seed) cfg.run.seed = *args.seed;
  if (args.out) cfg.output_dir = *args.out;
  if (args.threads) cfg.run.threads = *args.threads;
  return cfg;
}

fs::path prepare_output(const RunConfig& cfg) {
  const fs::path dir(cfg.output_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw ConfigError("cannot create output directory '" + cfg.output_dir + "'");
  return dir;
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write '" + path.string() + "'");
  return out;
}

int cmd_gen_data(const CommonArgs& args) {
  const RunConfig cfg = resolve(args);
  const fs::path dir = prepare_output(cfg);
  const auto& run = cfg.run;
  for (const int n : run.dataset_sizes) {
    const fs::path path = dir / ("dataset_" + std::to_string(n) + ".csv");
    auto out = open_out(path);
    write_dataset_csv(out, gen_random_walk_dataset(n, run.seed, run.problem, run.truth, run.walk));
    std::cerr << "wrote " << path.string() << '\n';
  }
  return 0;
}

Datasetd load_data(const std::string& path) {
  try {
    return read_dataset_csv(path);
  } catch (const std::exception& e) {
    throw ConfigError("dataset '" + path + "': " + e.what());
  }
}

nlohmann::json solution_summary(const DualSolution& sol) {
  return {{"lambda_star", sol.lambda_star}, {"risk", sol.risk},           {"expected_time", sol.expected_time},
          {"feasible", sol.feasible},       {"mix_weight", sol.mix_weight}, {"dual_value", sol.dual_value},
          {"iterations", sol.iterations}};
}

int cmd_solve(const CommonArgs& args, const std::string& data_path, bool perfect_info) {
  const RunConfig cfg = resolve(args);
  const auto& run = cfg.run;
  if (!perfect_info && data_path.empty()) throw ConfigError("solve: --data is required without --perfect-info");
  const Grids grids = build_grids(run.problem, run.grid);
  MomentTable table = perfect_info
                          ? moment_table(run.truth, run.problem, grids)
                          : moment_table(GaussianProcessd::fit(load_data(data_path), run.gp), run.problem, grids);
  const ControlModel model(run.problem, grids, std::move(table));
  const DualSolution sol = solve_lambda(model, run.dual);
  const fs::path dir = prepare_output(cfg);
  {
    auto out = open_out(dir / "value_policy.csv");
    write_value_policy_csv(out, sol.value_policy, grids);
  }
  if (sol.mix_weight > 0) {
    auto out = open_out(dir / "value_policy_alternate.csv");
    write_value_policy_csv(out, sol.alternate_policy, grids);
  }
  auto out = open_out(dir / "summary.json");
  out << solution_summary(sol).dump(2) << '\n';
  std::cout << solution_summary(sol).dump() << '\n';
  return 0;
}

int cmd_design(const CommonArgs& args, const std::string& data_path) {
  const RunConfig cfg = resolve(args);
  const auto& run = cfg.run;
  if (data_path.empty()) throw ConfigError("design: --data is required");
  const fs::path dir = prepare_output(cfg);
  const Datasetd data = load_data(data_path);
  const BenchmarkInstance inst(data.size() / run.problem.horizon, data, run);
  const ExperimentPlan start = open_loop_inputs(inst.objective.posterior(), inst.prior_solution.value_policy,
                                                run.problem, inst.objective.grids());
  SgdOptions sgd = run.design;
  sgd.rng_seed = run.seed;
  sgd.threads = run.threads;
  const DesignResult result = design_experiment(inst.objective, start, sgd, [](const TraceRow& row) {
    if (row.step % 10 == 0) {
      std::cerr << "step " << row.step << " running objective " << format_double(row.running_objective) << '\n';
    }
  });
  {
    auto out = open_out(dir / "plan.csv");
    write_plan_csv(out, result.best);
  }
  auto out = open_out(dir / "trace.csv");
  write_trace_csv(out, result.trace);
  return 0;
}

int cmd_benchmark(const CommonArgs& args) {
  const RunConfig cfg = resolve(args);
  const fs::path dir = prepare_output(cfg);
  const auto reports = sweep(cfg.run, [](const std::string& msg) { std::cerr << msg << '\n'; });
  {
    auto out = open_out(dir / "summary.csv");
    write_summary_csv(out, reports);
  }
  auto out = open_out(dir / "outcomes.csv");
  write_outcomes_csv(out, reports);
  write_summary_csv(std::cout, reports);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Experiment design for chance-constrained control with learned GP dynamics"};
  app.require_subcommand(1);

  CommonArgs gen_args, solve_args, design_args, bench_args;
  std::string solve_data, design_data;
  bool perfect_info = false;

  auto* gen = app.add_subcommand("gen-data", "Write nested random-walk datasets for every configured size");
  add_common(gen, gen_args);
  auto* solve = app.add_subcommand("solve", "Solve the chance-constrained problem for one dataset");
  add_common(solve, solve_args);
  solve->add_option("--data", solve_data, "Dataset CSV");
  solve->add_flag("--perfect-info", perfect_info, "Use the true dynamics instead of a GP");
  auto* design = app.add_subcommand("design", "Design an experiment for one dataset");
  add_common(design, design_args);
  design->add_option("--data", design_data, "Dataset CSV");
  auto* bench = app.add_subcommand("benchmark", "Run the configured benchmark sweep");
  add_common(bench, bench_args);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*gen) return cmd_gen_data(gen_args);
    if (*solve) return cmd_solve(solve_args, solve_data, perfect_info);
    if (*design) return cmd_design(design_args, design_data);
    if (*bench) return cmd_benchmark(bench_args);
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
