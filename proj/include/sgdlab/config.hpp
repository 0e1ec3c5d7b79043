#pragma once

// Experiment configuration: a sectioned key = value file with a mandatory
// `spec_version = 1` entry at the top.
//
//   spec_version = 1
//   [problem]    kind, n, d, sigma_gen, seed, column_scale, spectrum, theta_bar, sigma_sq, noise
//   [optimizer]  eta, beta, lambda, batch_size
//   [run]        steps, burn_in, stride, replicas, seed, gradient, start, start_offset
//   [analysis]   k, fit_window, lag_unit, horizon, subspace_iters, subspace_tol, plane_i, plane_j, grid, probes
//   [sweep]      param, values
//   [compare]    betas, rmse_tolerance, variance_tolerance, frequency_bins, ratio_tolerance
//   [output]     dir, save_dataset
//
// Lines starting with ';' or '#' are comments. Value lists accept
// "a, b, c", "linspace:a:b[:n]" and "geomspace:a:b[:n]"; a single number
// is broadcast where a vector is expected.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "sgdlab/diffusion.hpp"
#include "sgdlab/problem.hpp"
#include "sgdlab/simulate.hpp"

namespace sgdlab {

inline constexpr int kSpecVersion = 1;
inline constexpr Index kDefaultGridPoints = 20;

enum class ProblemKind { Regression, Spectral };
enum class StartKind { Minimum, Displaced };

struct ProblemSpec {
  ProblemKind kind = ProblemKind::Regression;
  Index n = 1000;
  Index d = 0;
  double sigma_gen = 1.0;
  Seed seed = 0;
  std::string column_scale = "1";
  std::string spectrum = "geomspace:1:0.1";  // eigenvalues for the spectral kind
  std::string theta_bar = "1";               // generating parameter, or the minimizer for the spectral kind
  std::optional<double> sigma_sq;            // gradient-noise scale; sigma_gen^2 when unset
  CovarianceMode noise = CovarianceMode::ScaledHessian;

  double noise_scale() const { return sigma_sq ? *sigma_sq : sigma_gen * sigma_gen; }
};

struct RunSpec {
  Index steps = 0;
  Index burn_in = 0;  // kAutoBurnIn picks ten relaxation times of the slowest mode
  Index stride = 1;
  Index replicas = 1;
  Seed seed = 0;
  GradientMode gradient = GradientMode::Minibatch;
  StartKind start = StartKind::Minimum;
  double start_offset = 1.0;  // added to every top-k coordinate a_l when start = displaced

  static constexpr Index kAutoBurnIn = -1;
  static constexpr Index kBurnInCap = 10'000'000;
};

struct AnalysisSpec {
  Index k = 2;
  double fit_window = 1.0 / 3.0;
  LagUnit lag_unit = LagUnit::Continuous;
  Index horizon = 0;  // analytic displacement curve length in steps; 0 means run.steps
  Index subspace_iters = 10;
  double subspace_tol = 1e-10;
  Index plane_i = 1;  // 1-based mode indices of the decomposition plane; 0 means k
  Index plane_j = 0;
  Index grid = 21;
  Index probes = 100;
};

struct SweepSpec {
  std::string param = "eta";
  std::string values;
};

struct CompareSpec {
  std::string betas;  // empty: the optimizer beta only
  double rmse_tolerance = 0.15;
  double variance_tolerance = 0.25;
  double frequency_bins = 1.0;
  double ratio_tolerance = 0.05;
};

struct OutputSpec {
  std::string dir = "out";
  bool save_dataset = false;  // simulate also writes dataset.csv for regression problems
};

struct ExperimentConfig {
  int spec_version = kSpecVersion;
  ProblemSpec problem;
  OptimizerConfigd optimizer;
  RunSpec run;
  AnalysisSpec analysis;
  SweepSpec sweep;
  CompareSpec compare;
  OutputSpec output;
};

/// Parses config text. Throws ConfigError naming the key and line for syntax
/// errors, unknown or missing keys, and values that do not convert or fall
/// outside their domain.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Canonical text form. parse_config(to_ini(c)) reproduces c exactly; doubles
/// are written with 17 significant digits.
std::string to_ini(const ExperimentConfig& config);

/// FNV-1a of the canonical text, as 16 hex digits.
std::string config_hash(const ExperimentConfig& config);

/// Expands a value list. `count` fills in the length of a broadcast scalar
/// and of a range without an explicit n (0 leaves a scalar as one value).
std::vector<double> parse_value_list(const std::string& text, Index count = 0);

std::string format_double(double x);

std::string to_string(ProblemKind kind);
std::string to_string(StartKind kind);
std::string to_string(LagUnit unit);
std::string to_string(CovarianceMode mode);

}  // namespace sgdlab
