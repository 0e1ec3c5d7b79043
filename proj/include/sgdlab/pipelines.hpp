#pragma once

// Experiment pipelines behind the command-line subcommands. Each command
// writes its outputs into RunContext::out and returns the files written
// together with any tolerance checks it evaluated.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "sgdlab/config.hpp"
#include "sgdlab/ou_theory.hpp"
#include "sgdlab/problem.hpp"
#include "sgdlab/spectral.hpp"

namespace sgdlab {

/// The quadratic problem a config describes, with its spectrum and the
/// top-k modes used for projections.
struct Problem {
  std::optional<RegressionDatasetd> data;
  QuadraticModeld model;
  NoiseModeld noise;
  Eigen::VectorXd spectrum;        // all eigenvalues of H, non-increasing
  EigenBasisd basis;               // top-k eigenpairs
  std::vector<ModeBlockd> modes;   // top-k blocks; noise = q_l^T Sigma q_l
  std::string basis_method;        // "dense" or "subspace"
  double trace_sigma = 0;          // tr(Sigma)
};

/// Dense eigensolver up to this dimension, subspace iteration above it.
inline constexpr Index kDenseBasisLimit = 256;

Problem build_problem(const ExperimentConfig& config);

/// mu, or mu shifted by run.start_offset along each of the top-k directions.
Eigen::VectorXd initial_theta(const ExperimentConfig& config, const Problem& problem);

/// run.burn_in, with the automatic choice resolved against the spectrum.
Index resolve_burn_in(const ExperimentConfig& config, const Problem& problem);

struct RunContext {
  std::filesystem::path out;
  unsigned workers = 1;
  std::string invocation;  // recorded in the manifest
};

struct Check {
  std::string name;
  double value = 0;
  double tolerance = 0;
  bool pass = true;
};

struct CommandResult {
  std::vector<std::filesystem::path> files;
  std::vector<Check> checks;

  bool passed() const;
  std::vector<std::string> failing() const;
};

CommandResult cmd_simulate(const ExperimentConfig& config, const RunContext& ctx);
CommandResult cmd_compare(const ExperimentConfig& config, const RunContext& ctx);
CommandResult cmd_sweep(const ExperimentConfig& config, const RunContext& ctx);
CommandResult cmd_decompose(const ExperimentConfig& config, const RunContext& ctx);
CommandResult cmd_theory(const ExperimentConfig& config, const RunContext& ctx);

struct FitRequest {
  std::filesystem::path input;
  std::string x = "step";
  std::string column = "Delta_sq";
  double window = 1.0 / 3.0;
};

CommandResult cmd_fit(const FitRequest& request, const RunContext& ctx);

struct SweepRow {
  double value = 0;
  double delta_sq_pred = 0;
  double delta_sq_measured = 0;
  double c_fit_analytic = 0;
  double c_fit_simulated = 0;
};

/// One row per grid value of sweep.param, evaluated concurrently.
std::vector<SweepRow> run_sweep(const ExperimentConfig& config, unsigned workers);

}  // namespace sgdlab
