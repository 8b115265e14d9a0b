#include "expdesign/config.hpp"

#include <fstream>
#include <initializer_list>
#include <sstream>
#include <type_traits>

#include "expdesign/errors.hpp"

namespace expdesign {

using nlohmann::json;

namespace {

void reject_unknown(const json& block, const std::string& where, std::initializer_list<const char*> known) {
  if (!block.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [key, value] : block.items()) {
    bool ok = false;
    for (const char* k : known) ok = ok || key == k;
    if (!ok) throw ConfigError(where + ": unknown key '" + key + "'");
  }
}

template <typename T>
void read(const json& block, const std::string& where, const char* key, T& out) {
  const auto it = block.find(key);
  if (it == block.end()) return;
  try {
    if constexpr (std::is_same_v<T, double>) {
      if (!it->is_number()) throw ConfigError("not a number");
    } else if constexpr (std::is_same_v<T, bool>) {
      if (!it->is_boolean()) throw ConfigError("not a boolean");
    } else if constexpr (std::is_integral_v<T>) {
      if (!it->is_number_integer()) throw ConfigError("not an integer");
      if constexpr (std::is_unsigned_v<T>) {
        if (it->is_number_integer() && !it->is_number_unsigned()) throw ConfigError("must be >= 0");
      }
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!it->is_string()) throw ConfigError("not a string");
    }
    out = it->get<T>();
  } catch (const std::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

const char* mean_name(MeanFunction m) { return m == MeanFunction::Zero ? "zero" : "identity_state"; }

}  // namespace

RunConfig parse_config(const json& j) {
  RunConfig cfg;
  auto& run = cfg.run;
  reject_unknown(j, "config",
                 {"schema_version", "master_seed", "output_dir", "threads", "problem", "truth", "gp", "dp", "design",
                  "benchmark"});
  if (!j.contains("schema_version")) throw ConfigError("config: missing schema_version");
  int version = 0;
  read(j, "config", "schema_version", version);
  if (version != kConfigSchemaVersion) {
    throw ConfigError("config: unsupported schema_version " + std::to_string(version));
  }
  read(j, "config", "master_seed", run.seed);
  read(j, "config", "output_dir", cfg.output_dir);
  read(j, "config", "threads", run.threads);

  if (const auto it = j.find("problem"); it != j.end()) {
    reject_unknown(*it, "problem", {"safe_lo", "safe_hi", "risk_tolerance", "input_lo", "input_hi", "horizon", "x0"});
    auto& p = run.problem;
    read(*it, "problem", "safe_lo", p.safe_lo);
    read(*it, "problem", "safe_hi", p.safe_hi);
    read(*it, "problem", "risk_tolerance", p.risk_tolerance);
    read(*it, "problem", "input_lo", p.input_lo);
    read(*it, "problem", "input_hi", p.input_hi);
    read(*it, "problem", "horizon", p.horizon);
    read(*it, "problem", "x0", p.x0);
  }
  if (const auto it = j.find("truth"); it != j.end()) {
    reject_unknown(*it, "truth", {"region_lo", "region_hi", "gain_boost", "indicator_slope", "noise_std"});
    auto& t = run.truth;
    read(*it, "truth", "region_lo", t.region_lo);
    read(*it, "truth", "region_hi", t.region_hi);
    read(*it, "truth", "gain_boost", t.gain_boost);
    read(*it, "truth", "indicator_slope", t.indicator_slope);
    read(*it, "truth", "noise_std", t.noise_std);
  }
  if (const auto it = j.find("gp"); it != j.end()) {
    reject_unknown(*it, "gp", {"signal_variance", "lengthscale", "noise_variance", "mean_function"});
    OutputHyperparams<double> hp = run.gp.outputs.at(0);
    read(*it, "gp", "signal_variance", hp.signal_variance);
    read(*it, "gp", "lengthscale", hp.lengthscale);
    read(*it, "gp", "noise_variance", hp.noise_variance);
    std::string mean = mean_name(run.gp.mean);
    read(*it, "gp", "mean_function", mean);
    MeanFunction mf;
    if (mean == "zero") {
      mf = MeanFunction::Zero;
    } else if (mean == "identity_state") {
      mf = MeanFunction::IdentityState;
    } else {
      throw ConfigError("gp.mean_function: expected 'zero' or 'identity_state'");
    }
    run.gp = GpHyperparamsd::uniform(1, hp, mf);
  }
  if (const auto it = j.find("dp"); it != j.end()) {
    reject_unknown(*it, "dp",
                   {"state_lo", "state_hi", "state_step", "input_count", "quadrature_order", "lambda_max",
                    "dual_tolerance", "max_iterations"});
    read(*it, "dp", "state_lo", run.grid.state_lo);
    read(*it, "dp", "state_hi", run.grid.state_hi);
    read(*it, "dp", "state_step", run.grid.state_step);
    read(*it, "dp", "input_count", run.grid.input_count);
    read(*it, "dp", "quadrature_order", run.grid.quadrature_order);
    read(*it, "dp", "lambda_max", run.dual.lambda_max);
    read(*it, "dp", "dual_tolerance", run.dual.tolerance);
    read(*it, "dp", "max_iterations", run.dual.max_iterations);
  }
  if (const auto it = j.find("design"); it != j.end()) {
    reject_unknown(*it, "design",
                   {"step_count", "batch_size", "learning_rate", "decay", "fd_step", "window", "early_stop"});
    auto& d = run.design;
    read(*it, "design", "step_count", d.step_count);
    read(*it, "design", "batch_size", d.batch_size);
    read(*it, "design", "learning_rate", d.learning_rate);
    read(*it, "design", "decay", d.decay);
    read(*it, "design", "fd_step", d.fd_step);
    read(*it, "design", "window", d.window);
    read(*it, "design", "early_stop", d.early_stop);
  }
  if (const auto it = j.find("benchmark"); it != j.end()) {
    reject_unknown(*it, "benchmark",
                   {"dataset_sizes", "methods", "n_outcomes", "mc_rollouts", "random_walk_mean", "random_walk_std"});
    if (const auto s = it->find("dataset_sizes"); s != it->end()) {
      if (!s->is_array()) throw ConfigError("benchmark.dataset_sizes: expected an array");
      run.dataset_sizes.clear();
      for (const auto& v : *s) {
        if (!v.is_number_integer()) throw ConfigError("benchmark.dataset_sizes: expected integers");
        run.dataset_sizes.push_back(v.get<int>());
      }
    }
    if (const auto m = it->find("methods"); m != it->end()) {
      if (!m->is_array()) throw ConfigError("benchmark.methods: expected an array");
      run.methods.clear();
      for (const auto& v : *m) {
        if (!v.is_string()) throw ConfigError("benchmark.methods: expected strings");
        try {
          run.methods.push_back(parse_method(v.get<std::string>()));
        } catch (const std::invalid_argument& e) {
          throw ConfigError(std::string("benchmark.methods: ") + e.what());
        }
      }
    }
    read(*it, "benchmark", "n_outcomes", run.n_outcomes);
    read(*it, "benchmark", "mc_rollouts", run.mc_rollouts);
    read(*it, "benchmark", "random_walk_mean", run.walk.mean);
    read(*it, "benchmark", "random_walk_std", run.walk.std);
  }
  try {
    run.validate();
    build_grids(run.problem, run.grid);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return cfg;
}

RunConfig parse_config_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  return parse_config(j);
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open '" + path + "'");
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config_text(text.str());
}

json to_json(const RunConfig& cfg) {
  const auto& run = cfg.run;
  const auto& hp = run.gp.outputs.at(0);
  json methods = json::array();
  for (const MethodId m : run.methods) methods.push_back(std::string(method_name(m)));
  return json{
      {"schema_version", kConfigSchemaVersion},
      {"master_seed", run.seed},
      {"output_dir", cfg.output_dir},
      {"threads", run.threads},
      {"problem",
       {{"safe_lo", run.problem.safe_lo},
        {"safe_hi", run.problem.safe_hi},
        {"risk_tolerance", run.problem.risk_tolerance},
        {"input_lo", run.problem.input_lo},
        {"input_hi", run.problem.input_hi},
        {"horizon", run.problem.horizon},
        {"x0", run.problem.x0}}},
      {"truth",
       {{"region_lo", run.truth.region_lo},
        {"region_hi", run.truth.region_hi},
        {"gain_boost", run.truth.gain_boost},
        {"indicator_slope", run.truth.indicator_slope},
        {"noise_std", run.truth.noise_std}}},
      {"gp",
       {{"signal_variance", hp.signal_variance},
        {"lengthscale", hp.lengthscale},
        {"noise_variance", hp.noise_variance},
        {"mean_function", mean_name(run.gp.mean)}}},
      {"dp",
       {{"state_lo", run.grid.state_lo},
        {"state_hi", run.grid.state_hi},
        {"state_step", run.grid.state_step},
        {"input_count", run.grid.input_count},
        {"quadrature_order", run.grid.quadrature_order},
        {"lambda_max", run.dual.lambda_max},
        {"dual_tolerance", run.dual.tolerance},
        {"max_iterations", run.dual.max_iterations}}},
      {"design",
       {{"step_count", run.design.step_count},
        {"batch_size", run.design.batch_size},
        {"learning_rate", run.design.learning_rate},
        {"decay", run.design.decay},
        {"fd_step", run.design.fd_step},
        {"window", run.design.window},
        {"early_stop", run.design.early_stop}}},
      {"benchmark",
       {{"dataset_sizes", run.dataset_sizes},
        {"methods", methods},
        {"n_outcomes", run.n_outcomes},
        {"mc_rollouts", run.mc_rollouts},
        {"random_walk_mean", run.walk.mean},
        {"random_walk_std", run.walk.std}}},
  };
}

std::string dump_config(const RunConfig& cfg) { return to_json(cfg).dump(2) + "\n"; }

RunConfig desk_preset() {
  RunConfig cfg;
  cfg.run.design.step_count = 200;
  cfg.run.design.batch_size = 16;
  cfg.run.n_outcomes = 200;
  cfg.output_dir = "out/desk";
  return cfg;
}

RunConfig paper_preset() {
  RunConfig cfg;
  cfg.run.design.step_count = 1000;
  cfg.run.design.batch_size = 80;
  cfg.run.n_outcomes = 1000;
  cfg.output_dir = "out/paper";
  return cfg;
}

}  // namespace expdesign
