// Command-line front end: loads or synthesizes an experiment configuration,
// applies flag overrides, and dispatches to the library commands.

#include <exception>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "pcrhc/config.hpp"

namespace {

struct Options {
  std::string command;
  std::string config_path;
  std::string example;
  std::string out_dir;
  std::string mode;
  long long seed = -1;
  int threads = 1;
  int order = -1;
  int horizon = -1;
  bool schema = false;
};

pcrhc::ExperimentConfig resolve_config(const Options& opt) {
  if (!opt.config_path.empty() && !opt.example.empty())
    throw pcrhc::ConfigError("use either --config or --example, not both");
  pcrhc::ExperimentConfig config;
  if (!opt.config_path.empty()) {
    config = pcrhc::load_config(opt.config_path);
  } else if (!opt.example.empty()) {
    config = pcrhc::preset(opt.example);
  } else {
    throw pcrhc::ConfigError("no configuration: pass --config PATH or --example NAME");
  }
  if (!opt.out_dir.empty()) config.output.dir = opt.out_dir;
  if (opt.seed >= 0) config.run.seed = static_cast<std::uint64_t>(opt.seed);
  if (opt.order >= 0) config.order = opt.order;
  if (opt.horizon >= 0) config.cost.N = opt.horizon;
  if (!opt.mode.empty()) config.mode = pcrhc::parse_mode(opt.mode);
  pcrhc::validate_config(config);
  return config;
}

}  // namespace

int main(int argc, char** argv) {
  Options opt;
  CLI::App app{
      "Polynomial-chaos receding-horizon control: project uncertain linear systems "
      "onto a deterministic surrogate, solve constrained horizon problems, and "
      "validate surrogate moments against Monte-Carlo simulation."};
  app.fallthrough();

  app.add_flag("--schema", opt.schema, "print the configuration schema and exit");
  app.add_option("--config", opt.config_path, "path to a JSON experiment configuration");
  app.add_option("--example", opt.example,
                 "built-in preset name (paper, deterministic-smoke)");
  app.add_option("--out", opt.out_dir, "output directory (overrides the config)");
  app.add_option("--seed", opt.seed, "seed override (nonnegative integer)");
  app.add_option("--threads", opt.threads, "worker threads for ensemble simulation")
      ->check(CLI::PositiveNumber);
  app.add_option("--order", opt.order, "gPC order override (r >= 0)");
  app.add_option("--horizon", opt.horizon, "prediction horizon override (N >= 1)");
  app.add_option("--mode", opt.mode, "control mode: full, fixed-gain, variable-gain")
      ->check(CLI::IsMember({"full", "fixed-gain", "variable-gain"}));

  CLI::App* project = app.add_subcommand(
      "project", "build the surrogate and dump its matrices and tensors");
  CLI::App* solve =
      app.add_subcommand("solve", "solve a single horizon problem and dump the solution");
  CLI::App* run =
      app.add_subcommand("run", "run the closed loop; trace CSV and summary JSON");
  CLI::App* validate = app.add_subcommand(
      "validate", "compare surrogate moments against a Monte-Carlo ensemble");
  app.require_subcommand(0, 1);

  CLI11_PARSE(app, argc, argv);

  if (opt.schema) {
    std::cout << pcrhc::config_schema();
    return pcrhc::kExitOk;
  }
  if (project->parsed())
    opt.command = "project";
  else if (solve->parsed())
    opt.command = "solve";
  else if (run->parsed())
    opt.command = "run";
  else if (validate->parsed())
    opt.command = "validate";
  else {
    std::cerr << "error: no command given (project, solve, run, validate; or --schema)\n";
    return pcrhc::kExitConfig;
  }

  try {
    const pcrhc::ExperimentConfig config = resolve_config(opt);
    if (opt.command == "project") return pcrhc::cmd_project(config, std::cout);
    if (opt.command == "solve") return pcrhc::cmd_solve(config, std::cout);
    if (opt.command == "run") return pcrhc::cmd_run(config, std::cout);
    return pcrhc::cmd_validate(config, opt.threads, std::cout);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return pcrhc::exit_code_for(e);
  }
}
