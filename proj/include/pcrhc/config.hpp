#ifndef PCRHC_CONFIG_HPP_
#define PCRHC_CONFIG_HPP_

#include <Eigen/Core>

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "pcrhc/rhc_engine.hpp"
#include "pcrhc/transcription.hpp"

namespace pcrhc {

// ---------------------------------------------------------------------------
// Experiment configuration
// ---------------------------------------------------------------------------

struct SolverConfig {
  ConvexSettings convex;
  VariableGainSettings variable;  // variable.convex mirrors `convex`
};

struct RunConfig {
  int steps = 100;          // closed-loop steps for `run`
  Eigen::VectorXd x0;       // deterministic initial state
  std::uint64_t seed = 1;
  int samples = 100000;     // Monte-Carlo ensemble size for `validate`
  int validate_steps = 5;   // open-loop steps compared against the ensemble
  double decay_tolerance = 1e-4;
};

struct OutputConfig {
  std::string dir = "out";
};

/// One experiment: the uncertain system, the basis order, the control
/// problem, and the run/validation parameters. Parsed strictly — unknown
/// keys anywhere in the file are rejected by name.
struct ExperimentConfig {
  UncertainSystem system;
  int order = 4;
  CostSpec cost;
  std::vector<ConstraintSpec> constraints;
  ControlMode mode = ControlMode::mean_fixed_gain;
  SolverConfig solver;
  RunConfig run;
  OutputConfig output;
};

ExperimentConfig parse_config(const std::string& json_text);
ExperimentConfig load_config(const std::string& path);

/// Cross-field validation (dimensions, positivity, step counts). parse_config
/// runs this; presets and programmatic configs can call it directly.
void validate_config(const ExperimentConfig& config);

/// Built-in configurations: "paper" (the uncertain two-state benchmark) and
/// "deterministic-smoke" (zero uncertainty, fast).
ExperimentConfig preset(const std::string& name);
std::vector<std::string> preset_names();

std::string config_to_json(const ExperimentConfig& config);
std::string config_schema();

/// "full", "fixed-gain", "variable-gain".
std::string mode_token(ControlMode mode);
ControlMode parse_mode(const std::string& token);

// ---------------------------------------------------------------------------
// Matrix file format
// ---------------------------------------------------------------------------

/// Plain-text format: one header line "rows cols", then `rows` lines of
/// `cols` space-separated values at 17 significant digits (lossless for
/// IEEE-754 doubles).
void write_matrix(const Eigen::MatrixXd& M, std::ostream& os);
Eigen::MatrixXd read_matrix(std::istream& is);
void write_matrix_file(const Eigen::MatrixXd& M, const std::string& path);
Eigen::MatrixXd read_matrix_file(const std::string& path);

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

/// Exit codes: 0 success, 2 configuration error, 3 solver failure,
/// 4 verdict failure (checks ran but did not pass).
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitSolver = 3;
inline constexpr int kExitVerdict = 4;

int cmd_project(const ExperimentConfig& config, std::ostream& log);
int cmd_solve(const ExperimentConfig& config, std::ostream& log);
int cmd_run(const ExperimentConfig& config, std::ostream& log);
int cmd_validate(const ExperimentConfig& config, int threads, std::ostream& log);

/// Maps a thrown error onto the exit-code contract above.
int exit_code_for(const std::exception& e);

}  // namespace pcrhc

#endif  // PCRHC_CONFIG_HPP_
