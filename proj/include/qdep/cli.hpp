#pragma once

#include "asymptotics.hpp"
#include "errors.hpp"
#include "estimator.hpp"
#include "io.hpp"
#include "kernels.hpp"
#include "oracle.hpp"
#include "simlab.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace qdep::cli {

inline constexpr const char* version = "0.1.0";

enum class ExitCode : int
{
  not_rejected = 0,
  error = 1,
  rejected = 3
};

//! Bad flags or config values. The message names the offending option.
class UsageError : public Error
{
public:
  using Error::Error;
};

struct RunConfig
{
  std::string command;
  std::string input;
  std::string scenario = "copy:noise=1";
  std::string kernel = "gaussian";
  double h = 1.0;
  std::string sigma = "sample"; //!< "sample" or "user"
  std::vector<double> sigma_values;
  double alpha = 0.05;
  std::string calibration = "gamma"; //!< "gamma" or "permutation"
  std::size_t permutations = 999;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  std::string output;
  std::string format = "json"; //!< "json" or "csv"
  std::optional<double> alt_q;
  std::string power_bound = "printed"; //!< "printed" or "chebyshev"
  std::size_t n = 500;
  std::size_t replicates = 500;
  std::vector<double> h_grid{ 0.25, 0.5, 1.0, 2.0, 4.0 };
  std::vector<std::size_t> n_grid{ 100, 200, 400, 800, 1600 };
  std::size_t instances = 50;
  std::string qq_output;
};

inline nlohmann::json
to_json(const RunConfig& c)
{
  nlohmann::json j{ { "command", c.command },
                    { "input", c.input },
                    { "scenario", c.scenario },
                    { "kernel", c.kernel },
                    { "h", c.h },
                    { "sigma", c.sigma },
                    { "sigma_values", c.sigma_values },
                    { "alpha", c.alpha },
                    { "calibration", c.calibration },
                    { "permutations", c.permutations },
                    { "seed", c.seed },
                    { "workers", c.workers },
                    { "output", c.output },
                    { "format", c.format },
                    { "power_bound", c.power_bound },
                    { "n", c.n },
                    { "replicates", c.replicates },
                    { "h_grid", c.h_grid },
                    { "n_grid", c.n_grid },
                    { "instances", c.instances },
                    { "qq_output", c.qq_output } };
  j["alt_q"] = c.alt_q ? nlohmann::json(*c.alt_q) : nlohmann::json(nullptr);
  return j;
}

inline std::string
config_hash(const RunConfig& c)
{
  return io::fnv1a_hex(to_json(c).dump());
}

//! Applies config-file values. Unknown keys and wrong types are usage errors.
inline void
apply_config_file(RunConfig& c, const nlohmann::json& j)
{
  if (!j.is_object())
    throw UsageError("--config: the config file must hold a JSON object");
  auto take = [&](const std::string& key, auto& target) {
    try {
      target = j.at(key).get<std::decay_t<decltype(target)>>();
    } catch (const nlohmann::json::exception&) {
      throw UsageError("--config: key '" + key + "' has the wrong type");
    }
  };
  for (const auto& [key, value] : j.items()) {
    if (key == "input") take(key, c.input);
    else if (key == "scenario") take(key, c.scenario);
    else if (key == "kernel") take(key, c.kernel);
    else if (key == "h") take(key, c.h);
    else if (key == "sigma") take(key, c.sigma);
    else if (key == "sigma_values") take(key, c.sigma_values);
    else if (key == "alpha") take(key, c.alpha);
    else if (key == "calibration") take(key, c.calibration);
    else if (key == "permutations") take(key, c.permutations);
    else if (key == "seed") take(key, c.seed);
    else if (key == "workers") take(key, c.workers);
    else if (key == "output") take(key, c.output);
    else if (key == "format") take(key, c.format);
    else if (key == "power_bound") take(key, c.power_bound);
    else if (key == "n") take(key, c.n);
    else if (key == "replicates") take(key, c.replicates);
    else if (key == "h_grid") take(key, c.h_grid);
    else if (key == "n_grid") take(key, c.n_grid);
    else if (key == "instances") take(key, c.instances);
    else if (key == "qq_output") take(key, c.qq_output);
    else if (key == "alt_q") {
      if (value.is_null())
        c.alt_q.reset();
      else {
        double v = 0.0;
        take(key, v);
        c.alt_q = v;
      }
    } else
      throw UsageError("--config: unknown key '" + key + "'");
  }
}

inline void
validate(const RunConfig& c)
{
  if (!(c.h > 0.0) || !std::isfinite(c.h))
    throw UsageError("--h: h must be positive");
  if (!(c.alpha > 0.0 && c.alpha < 1.0))
    throw UsageError("--alpha: alpha must lie in (0, 1)");
  try {
    (void)parse_kernel_family(c.kernel);
  } catch (const std::invalid_argument& e) {
    throw UsageError(std::string("--kernel: ") + e.what());
  }
  if (c.sigma != "sample" && c.sigma != "user")
    throw UsageError("--sigma: expected 'sample' or 'user'");
  if (c.sigma == "user" && c.sigma_values.empty())
    throw UsageError("--sigma-values: required with --sigma user");
  for (double s : c.sigma_values)
    if (!(s > 0.0))
      throw UsageError("--sigma-values: scale factors must be positive");
  if (c.calibration != "gamma" && c.calibration != "permutation")
    throw UsageError("--calibration: expected 'gamma' or 'permutation'");
  if (c.calibration == "permutation" && c.permutations == 0)
    throw UsageError("--permutations: must be positive");
  if (c.format != "json" && c.format != "csv")
    throw UsageError("--format: expected 'json' or 'csv'");
  if (c.power_bound != "printed" && c.power_bound != "chebyshev")
    throw UsageError("--power-bound: expected 'printed' or 'chebyshev'");
  if (c.workers == 0)
    throw UsageError("--workers: must be positive");
  if (c.command == "test") {
    if (c.input.empty())
      throw UsageError("--input: required for 'test'");
    if (!std::filesystem::exists(c.input))
      throw UsageError("--input: file not found: " + c.input);
  }
  if (c.scenario.rfind("discrete:", 0) == 0) {
    const auto path = c.scenario.substr(9);
    if (!std::filesystem::exists(path))
      throw UsageError("--scenario: file not found: " + path);
  }
  for (double h : c.h_grid)
    if (!(h > 0.0))
      throw UsageError("--h-grid: h must be positive");
}

//! Parses argv (argv[0] is the program name). Returns nullopt when CLI11
//! handled the request itself (--help, --version); `exit_code` then holds the
//! status to return.
inline std::optional<RunConfig>
parse_config(int argc, const char* const* argv, std::ostream& out, int& exit_code,
             bool& print_config)
{
  CLI::App app{ "Kernel quadratic dependence measure and independence test", "qdep" };
  // "-h" would collide with the bandwidth flag "--h".
  app.set_help_flag("--help", "Print this help message and exit");
  app.set_version_flag("--version", version);
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  RunConfig flags;
  std::string alt_q_text;
  print_config = false;
  app.add_option("--config", config_path, "JSON config file; flags override its values")
    ->check(CLI::ExistingFile);
  app.add_flag("--print-config", print_config, "Print the resolved config as JSON and exit");

  std::vector<CLI::Option*> opts;
  auto common = [&](CLI::App* s) {
    opts.push_back(s->add_option("--kernel", flags.kernel, "gaussian | cauchy2 | cauchy2dd"));
    opts.push_back(s->add_option("--h", flags.h, "Bandwidth"));
    opts.push_back(s->add_option("--sigma", flags.sigma, "Scale factors: sample | user"));
    opts.push_back(s->add_option("--sigma-values", flags.sigma_values, "User scale factors")
                     ->delimiter(','));
    opts.push_back(s->add_option("--alpha", flags.alpha, "Test level"));
    opts.push_back(s->add_option("--seed", flags.seed, "Random seed"));
    opts.push_back(s->add_option("--workers", flags.workers, "Worker threads (env QDEP_WORKERS)"));
    opts.push_back(s->add_option("--output", flags.output, "Output file (default stdout)"));
    opts.push_back(s->add_option("--format", flags.format, "json | csv"));
    opts.push_back(s->add_option("--scenario", flags.scenario, "Scenario spec"));
    opts.push_back(s->add_option("--n", flags.n, "Sample size"));
    opts.push_back(s->add_option("--replicates", flags.replicates, "Monte Carlo replicates"));
  };
  auto* test = app.add_subcommand("test", "Test mutual independence of the columns of a CSV");
  auto* sweep = app.add_subcommand("sweep", "Monte Carlo sweep over bandwidths and sample sizes");
  auto* nulllaw = app.add_subcommand("nulllaw", "Compare N q_hat with its gamma-chi-square law");
  auto* simulate = app.add_subcommand("simulate", "Write a synthetic sample as CSV");
  auto* oracle = app.add_subcommand("oracle-check", "Cross-check the estimator implementations");
  for (auto* s : { test, sweep, nulllaw, simulate, oracle })
    common(s);
  opts.push_back(test->add_option("--input", flags.input, "CSV with a header row"));
  opts.push_back(test->add_option("--calibration", flags.calibration, "gamma | permutation"));
  opts.push_back(test->add_option("--permutations", flags.permutations, "Permutations B"));
  auto* alt_opt = test->add_option("--alt-q", alt_q_text, "Alternative Q for the power bound");
  opts.push_back(test->add_option("--power-bound", flags.power_bound, "printed | chebyshev"));
  opts.push_back(sweep->add_option("--h-grid", flags.h_grid, "Bandwidths")->delimiter(','));
  opts.push_back(sweep->add_option("--n-grid", flags.n_grid, "Sample sizes")->delimiter(','));
  opts.push_back(nulllaw->add_option("--qq-output", flags.qq_output, "QQ pairs CSV"));
  opts.push_back(oracle->add_option("--instances", flags.instances, "Random instances"));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    exit_code = app.exit(e, out, out);
    return std::nullopt;
  } catch (const CLI::CallForVersion& e) {
    exit_code = app.exit(e, out, out);
    return std::nullopt;
  } catch (const CLI::ParseError& e) {
    throw UsageError(e.what());
  }

  RunConfig c;
  c.command = app.get_subcommands().front()->get_name();
  if (const char* env = std::getenv("QDEP_WORKERS")) {
    try {
      c.workers = std::stoul(env);
    } catch (const std::exception&) {
      throw UsageError("QDEP_WORKERS: not a positive integer");
    }
  }
  if (!config_path.empty()) {
    try {
      apply_config_file(c, nlohmann::json::parse(io::read_file(config_path)));
    } catch (const nlohmann::json::parse_error& e) {
      throw UsageError(std::string("--config: ") + e.what());
    }
  }
  for (auto* o : opts) {
    if (o->count() == 0)
      continue;
    const auto name = o->get_name();
    if (name == "--kernel") c.kernel = flags.kernel;
    else if (name == "--h") c.h = flags.h;
    else if (name == "--sigma") c.sigma = flags.sigma;
    else if (name == "--sigma-values") c.sigma_values = flags.sigma_values;
    else if (name == "--alpha") c.alpha = flags.alpha;
    else if (name == "--seed") c.seed = flags.seed;
    else if (name == "--workers") c.workers = flags.workers;
    else if (name == "--output") c.output = flags.output;
    else if (name == "--format") c.format = flags.format;
    else if (name == "--scenario") c.scenario = flags.scenario;
    else if (name == "--n") c.n = flags.n;
    else if (name == "--replicates") c.replicates = flags.replicates;
    else if (name == "--input") c.input = flags.input;
    else if (name == "--calibration") c.calibration = flags.calibration;
    else if (name == "--permutations") c.permutations = flags.permutations;
    else if (name == "--power-bound") c.power_bound = flags.power_bound;
    else if (name == "--h-grid") c.h_grid = flags.h_grid;
    else if (name == "--n-grid") c.n_grid = flags.n_grid;
    else if (name == "--qq-output") c.qq_output = flags.qq_output;
    else if (name == "--instances") c.instances = flags.instances;
  }
  if (alt_opt->count() > 0) {
    try {
      std::size_t used = 0;
      c.alt_q = std::stod(alt_q_text, &used);
      if (used != alt_q_text.size())
        throw std::invalid_argument("trailing characters");
    } catch (const std::exception&) {
      throw UsageError("--alt-q: not a number");
    }
  }
  validate(c);
  exit_code = 0;
  return c;
}

//! "gaussian:rho=0.5", "copy:noise=1", "product:normal,uniform",
//! "rotated:angle=0.785", "discrete:path/to/joint.json".
inline Scenario
parse_scenario(const std::string& spec)
{
  const auto colon = spec.find(':');
  const std::string kind = spec.substr(0, colon);
  const std::string rest = colon == std::string::npos ? "" : spec.substr(colon + 1);
  auto param = [&](const std::string& key, double fallback) {
    if (rest.empty())
      return fallback;
    const auto eq = rest.find('=');
    if (eq == std::string::npos || rest.substr(0, eq) != key)
      throw UsageError("--scenario: expected '" + kind + ":" + key + "=<value>'");
    try {
      std::size_t used = 0;
      const double v = std::stod(rest.substr(eq + 1), &used);
      if (used != rest.size() - eq - 1)
        throw std::invalid_argument("trailing characters");
      return v;
    } catch (const std::exception&) {
      throw UsageError("--scenario: '" + key + "' is not a number");
    }
  };
  try {
    if (kind == "gaussian")
      return Scenario(scenario::BivariateGaussian{ param("rho", 0.0) });
    if (kind == "copy")
      return Scenario(scenario::CopyPlusNoise{ param("noise", 1.0) });
    if (kind == "rotated")
      return Scenario(scenario::RotatedUniform{ param("angle", std::numbers::pi / 4.0) });
    if (kind == "product") {
      scenario::ProductOfMarginals p;
      std::stringstream ss(rest.empty() ? "normal,normal" : rest);
      std::string item;
      while (std::getline(ss, item, ',')) {
        if (item == "normal")
          p.marginals.push_back(scenario::Marginal::normal);
        else if (item == "uniform")
          p.marginals.push_back(scenario::Marginal::uniform);
        else if (item == "laplace")
          p.marginals.push_back(scenario::Marginal::laplace);
        else
          throw UsageError("--scenario: unknown marginal '" + item + "'");
      }
      return Scenario(std::move(p));
    }
    if (kind == "discrete")
      return Scenario(scenario::DiscreteJointSampler{ io::read_discrete_joint(rest) });
  } catch (const std::invalid_argument& e) {
    throw UsageError(std::string("--scenario: ") + e.what());
  }
  throw UsageError("--scenario: unknown scenario '" + kind +
                   "' (expected gaussian, copy, product, rotated or discrete)");
}

namespace detail {

inline nlohmann::json
metadata(const RunConfig& c)
{
  return { { "version", version }, { "seed", c.seed }, { "config_hash", config_hash(c) },
           { "command", c.command } };
}

inline void
emit(const RunConfig& c, const std::string& content, std::ostream& out)
{
  if (c.output.empty())
    out << content;
  else
    io::write_atomic(c.output, content);
}

inline nlohmann::json
null_json(const std::optional<NullApprox>& n)
{
  if (!n)
    return nullptr;
  return { { "e1", n->e1 }, { "v1", n->v1 }, { "gamma", n->gamma }, { "beta", n->beta } };
}

} // namespace detail

inline int
cmd_test(const RunConfig& c, std::ostream& out)
{
  const auto table = io::read_csv(c.input);
  const auto& sample = table.sample;
  const KernelSpec kernel(parse_kernel_family(c.kernel), c.h);
  ScaleFactors sigma;
  try {
    sigma = c.sigma == "user" ? scale_factors(sample, ScaleSource::user_supplied, c.sigma_values)
                              : sample_scale_factors(sample);
  } catch (const ZeroVariance& e) {
    throw Error("column '" + table.header[e.column()] + "' has zero variance");
  }
  const auto calibration = c.calibration == "permutation"
                             ? Calibration::permutation(c.permutations, c.seed)
                             : Calibration::gamma_chi_square();
  TestResult r;
  try {
    r = run_test(sample, kernel, sigma, c.alpha, calibration);
  } catch (const DegenerateNull& e) {
    throw Error(std::string(e.what()) + " (try --calibration permutation)");
  }
  if (c.alt_q) {
    const auto var = variance_expansion(sample, kernel, sigma);
    r.power_lower_bound = power_lower_bound(
      *c.alt_q, r.q_alpha, var.var_leading,
      c.power_bound == "chebyshev" ? PowerBoundForm::chebyshev : PowerBoundForm::as_printed);
  }

  nlohmann::json j = detail::metadata(c);
  j["n"] = sample.n();
  j["k"] = sample.k();
  j["columns"] = table.header;
  j["kernel"] = c.kernel;
  j["h"] = c.h;
  j["sigma"] = sigma.sigma;
  j["q_hat"] = r.q_hat;
  j["term1"] = r.estimate.term1;
  j["term2"] = r.estimate.term2;
  j["term3"] = r.estimate.term3;
  j["null"] = detail::null_json(r.null);
  j["calibration"] = c.calibration;
  j["alpha"] = r.alpha;
  j["q_alpha"] = std::isfinite(r.q_alpha) ? nlohmann::json(r.q_alpha) : nlohmann::json("inf");
  j["p_value"] = r.p_value;
  j["reject"] = r.reject;
  j["power_lower_bound"] =
    r.power_lower_bound ? nlohmann::json(*r.power_lower_bound) : nlohmann::json(nullptr);

  std::string content;
  if (c.format == "json") {
    content = j.dump(2) + "\n";
  } else {
    content = "key,value\n";
    for (const auto& [key, value] : j.items())
      if (value.is_primitive())
        content += key + "," + (value.is_string() ? value.get<std::string>() : value.dump()) + "\n";
  }
  detail::emit(c, content, out);
  if (!c.output.empty())
    out << "q_hat=" << io::format_double(r.q_hat) << " p_value=" << io::format_double(r.p_value)
        << " reject=" << (r.reject ? "true" : "false") << "\n";
  return static_cast<int>(r.reject ? ExitCode::rejected : ExitCode::not_rejected);
}

inline std::string
sweep_csv(const SweepResult& r)
{
  std::string s = "h,n,replicates,mean_q,var_q,se_mean_q,se_var_q,rejection_rate,"
                  "se_rejection_rate,mean_e1,mean_v1,mean_gamma,mean_beta,degenerate_nulls,"
                  "exact_q,seconds_per_replicate\n";
  auto f = io::format_double;
  for (const auto& c : r.cells) {
    s += f(c.h) + "," + std::to_string(c.n) + "," + std::to_string(c.replicates) + "," +
         f(c.mean_q) + "," + f(c.var_q) + "," + f(c.se_mean_q) + "," + f(c.se_var_q) + "," +
         f(c.rejection_rate) + "," + f(c.se_rejection_rate) + "," + f(c.mean_e1) + "," +
         f(c.mean_v1) + "," + f(c.mean_gamma) + "," + f(c.mean_beta) + "," +
         std::to_string(c.degenerate_nulls) + "," + (std::isnan(c.exact_q) ? "" : f(c.exact_q)) +
         "," + f(c.seconds_per_replicate) + "\n";
  }
  return s;
}

inline int
cmd_sweep(const RunConfig& c, std::ostream& out)
{
  SweepPlan plan;
  plan.scenario = parse_scenario(c.scenario);
  plan.kernel = parse_kernel_family(c.kernel);
  plan.h_grid = c.h_grid;
  plan.n_grid = c.n_grid;
  plan.replicates = c.replicates;
  plan.alpha = c.alpha;
  plan.seed = c.seed;
  if (c.sigma == "user")
    plan.sigma = c.sigma_values;
  try {
    plan.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  const auto r = run_sweep(plan, c.workers);
  if (c.format == "csv") {
    detail::emit(c, sweep_csv(r), out);
    return 0;
  }
  nlohmann::json j = detail::metadata(c);
  j["plan"] = to_json(c);
  j["independent_scenario"] = plan.scenario.independent();
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& cell : r.cells) {
    cells.push_back({ { "h", cell.h },
                      { "n", cell.n },
                      { "replicates", cell.replicates },
                      { "mean_q", cell.mean_q },
                      { "var_q", cell.var_q },
                      { "se_mean_q", cell.se_mean_q },
                      { "se_var_q", cell.se_var_q },
                      { "rejection_rate", cell.rejection_rate },
                      { "se_rejection_rate", cell.se_rejection_rate },
                      { "mean_e1", cell.mean_e1 },
                      { "mean_v1", cell.mean_v1 },
                      { "mean_gamma", cell.mean_gamma },
                      { "mean_beta", cell.mean_beta },
                      { "degenerate_nulls", cell.degenerate_nulls },
                      { "flagged", cell.flagged() },
                      { "exact_q", std::isnan(cell.exact_q) ? nlohmann::json(nullptr)
                                                            : nlohmann::json(cell.exact_q) },
                      { "seconds_per_replicate", cell.seconds_per_replicate } });
  }
  j["cells"] = cells;
  detail::emit(c, j.dump(2) + "\n", out);
  return 0;
}

inline int
cmd_nulllaw(const RunConfig& c, std::ostream& out)
{
  const auto scenario = parse_scenario(c.scenario);
  if (!scenario.independent())
    throw UsageError("--scenario: the null law needs an independent scenario");
  const KernelSpec kernel(parse_kernel_family(c.kernel), c.h);
  std::optional<std::vector<double>> sigma;
  if (c.sigma == "user")
    sigma = c.sigma_values;
  const auto s =
    estimate_null_law(scenario, kernel, c.n, c.replicates, c.seed, c.alpha, c.workers, sigma);
  if (!c.qq_output.empty()) {
    std::string qq = "empirical,model\n";
    for (const auto& [e, m] : s.qq)
      qq += io::format_double(e) + "," + io::format_double(m) + "\n";
    io::write_atomic(c.qq_output, qq);
  }
  nlohmann::json j = detail::metadata(c);
  j["n"] = s.n;
  j["replicates"] = s.replicates;
  j["gamma"] = s.gamma;
  j["beta"] = s.beta;
  j["ks"] = s.ks;
  j["alpha"] = s.alpha;
  j["size"] = s.size;
  j["se_size"] = s.se_size;
  j["degenerate_nulls"] = s.degenerate_nulls;
  if (c.format == "csv") {
    std::string content = "key,value\n";
    for (const auto& [key, value] : j.items())
      content += key + "," + (value.is_string() ? value.get<std::string>() : value.dump()) + "\n";
    detail::emit(c, content, out);
  } else {
    detail::emit(c, j.dump(2) + "\n", out);
  }
  return 0;
}

inline int
cmd_simulate(const RunConfig& c, std::ostream& out)
{
  const auto scenario = parse_scenario(c.scenario);
  if (c.n < 1)
    throw UsageError("--n: must be positive");
  const auto sample = generate(scenario, c.n, c.seed, 0);
  detail::emit(c, io::to_csv(sample, io::default_header(sample.k())), out);
  return 0;
}

//! Differential check on random K = 2 instances. Nonzero exit when any
//! tolerance is exceeded.
inline int
cmd_oracle_check(const RunConfig& c, std::ostream& out)
{
  constexpr double naive_tolerance = 1e-12;
  constexpr double cf_tolerance = 1e-5;
  std::string table = "instance,n,kernel,h,fast,naive,cf,abs_naive,abs_cf\n";
  double worst_naive = 0.0, worst_cf = 0.0;
  for (std::size_t i = 0; i < c.instances; ++i) {
    auto rng = replicate_engine(c.seed, i);
    std::uniform_int_distribution<std::size_t> size(2, 64);
    std::uniform_real_distribution<double> bandwidth(0.5, 2.0);
    std::normal_distribution<double> normal;
    const std::size_t n = size(rng);
    const auto family = all_kernel_families[i % all_kernel_families.size()];
    const KernelSpec kernel(family, bandwidth(rng));
    std::vector<double> data(2 * n);
    for (std::size_t r = 0; r < n; ++r) {
      data[r] = normal(rng);
      data[n + r] = 0.6 * data[r] + 0.8 * normal(rng);
    }
    const Sample sample(n, 2, std::move(data));
    const auto sigma = ScaleFactors::ones(2);
    const double fast = estimate_q(sample, kernel, sigma).q_hat;
    const double naive = naive_q(sample, kernel, sigma);
    const double cf = estimate_q_cf(sample, kernel, sigma, {});
    worst_naive = std::max(worst_naive, std::abs(fast - naive));
    worst_cf = std::max(worst_cf, std::abs(fast - cf));
    auto f = io::format_double;
    table += std::to_string(i) + "," + std::to_string(n) + "," + std::string(to_string(family)) +
             "," + f(kernel.bandwidth()) + "," + f(fast) + "," + f(naive) + "," + f(cf) + "," +
             f(std::abs(fast - naive)) + "," + f(std::abs(fast - cf)) + "\n";
  }
  const bool ok = worst_naive < naive_tolerance && worst_cf < cf_tolerance;
  if (c.format == "csv") {
    detail::emit(c, table, out);
  } else {
    nlohmann::json j = detail::metadata(c);
    j["instances"] = c.instances;
    j["max_abs_fast_minus_naive"] = worst_naive;
    j["max_abs_fast_minus_cf"] = worst_cf;
    j["naive_tolerance"] = naive_tolerance;
    j["cf_tolerance"] = cf_tolerance;
    j["passed"] = ok;
    detail::emit(c, j.dump(2) + "\n", out);
  }
  if (!c.output.empty())
    out << "max |fast - naive| = " << io::format_double(worst_naive)
        << ", max |fast - cf| = " << io::format_double(worst_cf) << (ok ? " (ok)" : " (FAILED)")
        << "\n";
  return ok ? 0 : static_cast<int>(ExitCode::error);
}

//! Entry point shared by the executable and the tests.
inline int
run(int argc, const char* const* argv, std::ostream& out, std::ostream& err)
{
  try {
    int code = 0;
    bool print = false;
    const auto config = parse_config(argc, argv, out, code, print);
    if (!config)
      return code;
    if (print) {
      out << to_json(*config).dump(2) << "\n";
      return 0;
    }
    const auto& c = *config;
    if (c.command == "test")
      return cmd_test(c, out);
    if (c.command == "sweep")
      return cmd_sweep(c, out);
    if (c.command == "nulllaw")
      return cmd_nulllaw(c, out);
    if (c.command == "simulate")
      return cmd_simulate(c, out);
    return cmd_oracle_check(c, out);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
  }
  return static_cast<int>(ExitCode::error);
}

} // namespace qdep::cli
