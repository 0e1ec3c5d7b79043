#include "sgdlab/pipelines.hpp"

#include <chrono>
#include <cmath>
#include <ctime>
#include <iomanip>
#include <sstream>
#include <tuple>

#include <nlohmann/json.hpp>

#include "sgdlab/decomposition.hpp"
#include "sgdlab/diffusion.hpp"
#include "sgdlab/io.hpp"
#include "sgdlab/parallel.hpp"
#include "sgdlab/simulate.hpp"

namespace sgdlab {

namespace {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

Eigen::VectorXd to_vector(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Index>(v.size()));
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

json mode_json(const ModeBlockd& m) {
  return {{"rho", m.rho},     {"omega", m.omega},          {"gamma", m.gamma}, {"zeta", m.zeta},
          {"alpha", m.alpha}, {"regime", to_string(m.regime)}, {"noise", m.noise}};
}

std::vector<ModeBlockd> modes_for(const Problem& p, const OptimizerConfigd& config) {
  std::vector<ModeBlockd> out;
  for (const auto& m : p.modes) out.push_back(mode_block(m.rho, config, m.noise));
  return out;
}

json derived_json(const OptimizerConfigd& config, const Problem& p) {
  json modes = json::array();
  for (const auto& m : modes_for(p, config)) modes.push_back(mode_json(m));
  double residual = 0;
  for (Index l = 0; l < p.basis.residuals.size(); ++l) residual = std::max(residual, p.basis.residuals(l));
  return {{"kappa", config.kappa()},
          {"gamma", config.gamma()},
          {"mass", config.mass()},
          {"trace_H", p.spectrum.sum()},
          {"trace_sigma", p.trace_sigma},
          {"basis_method", p.basis_method},
          {"basis_max_residual", residual},
          {"modes", modes}};
}

fs::path prepare(const RunContext& ctx) {
  fs::create_directories(ctx.out);
  return ctx.out;
}

fs::path write_json(const fs::path& path, const json& j) {
  write_text(path, j.dump(2) + "\n");
  return path;
}

fs::path write_manifest(const RunContext& ctx, const ExperimentConfig& c, const std::string& command,
                        const Problem* p, json extra, const std::vector<fs::path>& files) {
  json m;
  m["command"] = command;
  m["spec_version"] = c.spec_version;
  m["config_hash"] = config_hash(c);
  m["created"] = utc_timestamp();
  if (!ctx.invocation.empty()) m["invocation"] = ctx.invocation;
  m["seeds"] = {{"problem", c.problem.seed}, {"run", c.run.seed}};
  if (p) m["derived"] = derived_json(c.optimizer, *p);
  for (auto& [key, value] : extra.items()) m[key] = value;
  json names = json::array();
  for (const auto& f : files) names.push_back(f.filename().string());
  m["files"] = names;
  m["config"] = to_ini(c);
  return write_json(ctx.out / "manifest.json", m);
}

std::string numbered(const std::string& stem, Index i, Index total, const std::string& ext) {
  int width = 3;
  for (Index n = total - 1; n >= 1000; n /= 10) ++width;
  std::ostringstream s;
  s << stem << '_' << std::setw(width) << std::setfill('0') << i << ext;
  return s.str();
}

SimulationSetupd make_setup(const ExperimentConfig& c, const Problem& p, const OptimizerConfigd& config) {
  SimulationSetupd setup;
  setup.data = p.data ? &*p.data : nullptr;
  setup.model = &p.model;
  setup.noise = p.noise;
  setup.config = config;
  setup.mode = c.run.gradient;
  return setup;
}

// The closed forms need Sigma and H to share an eigenbasis.
void require_commuting(const Problem& p) {
  if (p.noise.mode == CovarianceMode::ScaledHessian) return;
  const Eigen::MatrixXd& H = p.model.H;
  const Eigen::MatrixXd sigma = p.noise.covariance(p.model);
  const double comm = (H * sigma - sigma * H).norm();
  if (comm > 1e-10 * std::max(H.norm() * sigma.norm(), std::numeric_limits<double>::min()))
    throw ModelError("the empirical noise covariance does not commute with H (|H Sigma - Sigma H| = " +
                     std::to_string(comm) + "); the analytic commands need a common eigenbasis");
}

// Variance of replicas shifted by the first one, so identical replicas give
// exactly zero.
double replica_variance(const std::vector<double>& x) {
  if (x.size() < 2) return 0.0;
  double s = 0, s2 = 0;
  for (double xi : x) {
    s += xi - x[0];
    s2 += (xi - x[0]) * (xi - x[0]);
  }
  const double n = double(x.size());
  return std::max(0.0, (s2 - s * s / n) / (n - 1));
}

double replica_mean(const std::vector<double>& x) {
  double s = 0;
  for (double xi : x) s += xi;
  return s / double(x.size());
}

std::vector<double> sweep_values(const ExperimentConfig& c) {
  if (c.sweep.values.empty())
    throw ConfigError("sweep.values: the sweep command needs a grid, e.g. linspace:a:b for 20 evenly spaced values",
                      "sweep.values");
  std::vector<double> values;
  try {
    values = parse_value_list(c.sweep.values);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("sweep.values: ") + e.what(), "sweep.values");
  }
  const std::string& param = c.sweep.param;
  for (double x : values) {
    bool ok = true;
    if (param == "eta") ok = x > 0;
    else if (param == "beta") ok = x >= 0 && x < 1;
    else if (param == "lambda") ok = x >= 0;
    else if (param == "batch_size")
      ok = x >= 1 && x == std::floor(x) &&
           (c.problem.kind != ProblemKind::Regression || x <= double(c.problem.n));
    else
      throw ConfigError("sweep.param: expected one of eta, beta, batch_size, lambda, got '" + param + "'",
                        "sweep.param");
    if (!ok) throw ConfigError("sweep.values: " + format_double(x) + " is not a valid " + param, "sweep.values");
  }
  return values;
}

void set_param(ExperimentConfig& c, const std::string& param, double x) {
  if (param == "eta") c.optimizer.eta = x;
  else if (param == "beta") c.optimizer.beta = x;
  else if (param == "lambda") c.optimizer.lambda = x;
  else c.optimizer.batch_size = static_cast<Index>(x);
}

json checks_json(const std::vector<Check>& checks) {
  json out = json::array();
  for (const auto& ch : checks)
    out.push_back({{"name", ch.name}, {"value", ch.value}, {"tolerance", ch.tolerance}, {"pass", ch.pass}});
  return out;
}

json summary_json(const std::string& command, const CommandResult& r) {
  return {{"command", command}, {"passed", r.passed()}, {"failing", r.failing()}, {"checks", checks_json(r.checks)}};
}

Check at_most(std::string name, double value, double tolerance) {
  return {std::move(name), value, tolerance, value <= tolerance};
}

}  // namespace

bool CommandResult::passed() const {
  for (const auto& ch : checks)
    if (!ch.pass) return false;
  return true;
}

std::vector<std::string> CommandResult::failing() const {
  std::vector<std::string> out;
  for (const auto& ch : checks)
    if (!ch.pass) out.push_back(ch.name);
  return out;
}

Problem build_problem(const ExperimentConfig& c) {
  c.optimizer.validate();
  Problem p;
  const Index d = c.problem.d;
  const Eigen::VectorXd theta_bar = to_vector(parse_value_list(c.problem.theta_bar, d));
  if (c.problem.kind == ProblemKind::Regression) {
    const Eigen::VectorXd scale = to_vector(parse_value_list(c.problem.column_scale, d));
    p.data = generate_regression<double>(c.problem.n, d, theta_bar, c.problem.sigma_gen, c.problem.seed, scale);
    p.model = build_quadratic(*p.data, c.optimizer.lambda);
  } else {
    const Eigen::VectorXd spectrum = to_vector(parse_value_list(c.problem.spectrum, d));
    p.model = make_spectral_quadratic<double>(spectrum, theta_bar, c.optimizer.lambda, c.problem.seed);
  }
  if (c.problem.noise == CovarianceMode::Empirical) {
    p.noise = empirical_noise(*p.data, p.model.mu);
  } else {
    p.noise.mode = CovarianceMode::ScaledHessian;
    p.noise.sigma_sq = c.problem.noise_scale();
  }

  const Index k = c.analysis.k;
  if (d <= kDenseBasisLimit) {
    const EigenBasisd full = dense_eigenbasis(p.model);
    p.spectrum = full.values;
    p.basis.vectors = full.vectors.leftCols(k);
    p.basis.values = full.values.head(k);
    p.basis.residuals = full.residuals.head(k);
    p.basis.converged = true;
    p.basis_method = "dense";
  } else {
    SubspaceOptions opts;
    opts.max_iters = c.analysis.subspace_iters;
    opts.tol = c.analysis.subspace_tol;
    opts.seed = c.problem.seed;
    p.basis = subspace_iteration(p.model, k, opts);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(p.model.H, Eigen::EigenvaluesOnly);
    p.spectrum = eig.eigenvalues().reverse();
    p.basis_method = "subspace";
  }
  p.spectrum = p.spectrum.cwiseMax(0.0);

  const Eigen::MatrixXd sigma = p.noise.covariance(p.model);
  p.trace_sigma = sigma.trace();
  for (Index l = 0; l < k; ++l) {
    const auto q = p.basis.vectors.col(l);
    const double s = q.dot(sigma * q);
    p.modes.push_back(mode_block(std::max(p.basis.values(l), 0.0), c.optimizer, std::max(s, 0.0)));
  }
  return p;
}

Eigen::VectorXd initial_theta(const ExperimentConfig& c, const Problem& p) {
  Eigen::VectorXd theta = p.model.mu;
  if (c.run.start == StartKind::Displaced) theta += c.run.start_offset * p.basis.vectors.rowwise().sum();
  return theta;
}

Index resolve_burn_in(const ExperimentConfig& c, const Problem& p) {
  if (c.run.burn_in != RunSpec::kAutoBurnIn) return c.run.burn_in;
  // Modes with no curvature never equilibrate and carry no noise.
  const double floor = 1e-12 * std::max(p.spectrum.maxCoeff(), 0.0);
  std::vector<double> positive;
  for (Index l = 0; l < p.spectrum.size(); ++l)
    if (p.spectrum(l) > floor) positive.push_back(p.spectrum(l));
  return default_burn_in<double>(to_vector(positive), c.optimizer, RunSpec::kBurnInCap);
}

CommandResult cmd_simulate(const ExperimentConfig& c, const RunContext& ctx) {
  const fs::path out = prepare(ctx);
  const Problem p = build_problem(c);
  const SimulationSetupd setup = make_setup(c, p, c.optimizer);
  const Eigen::VectorXd theta0 = initial_theta(c, p);
  RunOptions opts;
  opts.steps = c.run.steps;
  opts.stride = c.run.steps;  // keep only the endpoints as full states
  opts.burn_in = resolve_burn_in(c, p);

  const Index R = c.run.replicas;
  std::vector<fs::path> files(static_cast<std::size_t>(R));
  std::vector<json> info(static_cast<std::size_t>(R));
  parallel_for(R, ctx.workers, [&](Index r) {
    RunOptions o = opts;
    o.seed = replica_seed(c.run.seed, r);
    const TrajectoryRecordd rec = run(setup, theta0, o, &p.basis);
    const fs::path path = out / numbered("trajectory", r, R, ".csv");
    const Index rows = write_trajectory(path, rec, c.optimizer.eta, c.run.stride);
    files[static_cast<std::size_t>(r)] = path;
    info[static_cast<std::size_t>(r)] = {
        {"replica", r}, {"file", path.filename().string()}, {"seed", o.seed}, {"stream_seed", rec.seed}, {"rows", rows}};
  });

  CommandResult result;
  result.files = files;
  result.files.push_back(out / "basis.csv");
  write_basis(result.files.back(), p.basis);
  if (c.output.save_dataset && p.data) {
    result.files.push_back(out / "dataset.csv");
    write_dataset(result.files.back(), *p.data);
    result.files.push_back(out / "dataset.csv.json");
  }
  json extra = {{"burn_in", opts.burn_in}, {"replicas", info}};
  result.files.push_back(write_manifest(ctx, c, "simulate", &p, extra, result.files));
  return result;
}

CommandResult cmd_compare(const ExperimentConfig& c, const RunContext& ctx) {
  const fs::path out = prepare(ctx);
  const Problem p = build_problem(c);
  require_commuting(p);
  std::vector<double> betas{c.optimizer.beta};
  if (!c.compare.betas.empty()) betas = parse_value_list(c.compare.betas);

  const Index k = c.analysis.k, R = c.run.replicas, steps = c.run.steps;
  const Eigen::VectorXd theta0 = initial_theta(c, p);
  const Eigen::VectorXd a0 = p.basis.vectors.transpose() * (theta0 - p.model.mu);

  CommandResult result;
  json runs = json::array();
  std::vector<double> measured(betas.size(), std::nan("")), omega1(betas.size());
  for (std::size_t r = 0; r < betas.size(); ++r) {
    OptimizerConfigd cfg = c.optimizer;
    cfg.beta = betas[r];
    cfg.validate();
    const auto modes = modes_for(p, cfg);
    omega1[r] = modes[0].omega;
    ExperimentConfig cr = c;
    cr.optimizer = cfg;
    const Index burn = resolve_burn_in(cr, p);
    RunOptions opts;
    opts.steps = steps;
    opts.stride = steps;
    opts.burn_in = burn;
    // Replica streams are shared across the runs so that only beta differs.
    const auto recs = run_replicas(make_setup(c, p, cfg), theta0, opts, R, c.run.seed, ctx.workers, &p.basis);

    const std::string tag = "beta" + std::to_string(r);
    const fs::path path = out / numbered("compare", Index(r), Index(betas.size()), ".csv");
    CsvWriter csv(path, {"step", "t", "mode", "a_sim", "a_theory", "var_a_sim", "var_a_theory", "b_sim", "b_theory",
                         "var_b_sim", "var_b_theory"});
    std::vector<double> sq_err(k, 0.0), var_a_sim(k, 0.0), var_a_th(k, 0.0), var_b_sim(k, 0.0), var_b_th(k, 0.0);
    std::vector<double> max_mean_dev(k, 0.0), max_var_dev(k, 0.0);
    Index rows = 0;
    std::vector<double> xa(static_cast<std::size_t>(R)), xb(static_cast<std::size_t>(R));
    for (Index s = 0; s <= steps; s += c.run.stride) {
      const double t = cfg.eta * double(s);
      ++rows;
      for (Index l = 0; l < k; ++l) {
        const auto& m = modes[static_cast<std::size_t>(l)];
        Eigen::Vector2d mean = Eigen::Vector2d::Zero();
        Eigen::Matrix2d var = stationary_block(m, cfg);
        if (burn == 0) {
          mean = mode_mean(m, a0(l), 0.0, t);
          var = mode_variance(m, cfg, t);
        }
        for (Index i = 0; i < R; ++i) {
          xa[static_cast<std::size_t>(i)] = recs[static_cast<std::size_t>(i)].proj_a(l, s);
          xb[static_cast<std::size_t>(i)] = recs[static_cast<std::size_t>(i)].proj_b(l, s);
        }
        const double ma = replica_mean(xa), mb = replica_mean(xb);
        const double va = replica_variance(xa), vb = replica_variance(xb);
        csv.row({double(s), t, double(l + 1), ma, mean(0), va, var(0, 0), mb, mean(1), vb, var(1, 1)});
        const auto L = static_cast<std::size_t>(l);
        sq_err[L] += (ma - mean(0)) * (ma - mean(0));
        var_a_sim[L] += va;
        var_a_th[L] += var(0, 0);
        var_b_sim[L] += vb;
        var_b_th[L] += var(1, 1);
        max_mean_dev[L] = std::max({max_mean_dev[L], std::abs(ma - mean(0)), std::abs(mb - mean(1))});
        max_var_dev[L] = std::max({max_var_dev[L], std::abs(va - var(0, 0)), std::abs(vb - var(1, 1))});
      }
    }
    result.files.push_back(path);

    json mode_info = json::array();
    for (Index l = 0; l < k; ++l) {
      const auto L = static_cast<std::size_t>(l);
      const auto& m = modes[L];
      const double scale = std::max(std::abs(a0(l)), std::sqrt(stationary_block(m, cfg)(0, 0)));
      const double rmse = scale > 0 ? std::sqrt(sq_err[L] / double(rows)) / scale : std::sqrt(sq_err[L] / double(rows));
      const std::string name = tag + ".mode" + std::to_string(l + 1);
      result.checks.push_back(at_most(name + ".mean_rmse", rmse, c.compare.rmse_tolerance));
      if (R >= 2) {
        for (const auto& [what, sim, th] : {std::tuple{"var_a", var_a_sim[L], var_a_th[L]},
                                            std::tuple{"var_b", var_b_sim[L], var_b_th[L]}}) {
          if (th > 0)
            result.checks.push_back(
                at_most(name + "." + what, std::abs(sim / th - 1.0), c.compare.variance_tolerance));
          else
            result.checks.push_back(at_most(name + "." + what, sim, 0.0));
        }
      }
      mode_info.push_back({{"mode", l + 1},
                           {"block", mode_json(m)},
                           {"relative_rmse", rmse},
                           {"max_mean_deviation", max_mean_dev[L]},
                           {"max_variance_deviation", max_var_dev[L]}});
    }

    json run_info = {{"beta", cfg.beta}, {"burn_in", burn}, {"file", path.filename().string()}, {"modes", mode_info}};
    if (modes[0].regime == Regime::Underdamped) {
      std::vector<double> series(static_cast<std::size_t>(steps + 1));
      for (Index s = 0; s <= steps; ++s) series[static_cast<std::size_t>(s)] = recs[0].proj_a(0, s);
      const FrequencyEstimate f = dominant_frequency(series, cfg.eta);
      const double target = modes[0].omega / (2 * M_PI);
      measured[r] = f.frequency;
      result.checks.push_back(
          at_most(tag + ".frequency_bins", std::abs(f.frequency - target) / f.bin_width, c.compare.frequency_bins));
      run_info["frequency"] = {{"measured", f.frequency},
                               {"omega_over_2pi", target},
                               {"alpha_over_2pi", modes[0].alpha / (2 * M_PI)},
                               {"bin_width", f.bin_width}};
    }
    if (burn > 0 && c.run.start == StartKind::Minimum) {
      double delta = 0;
      for (const auto& rec : recs) delta += rec.delta_sq.tail(steps).mean();
      delta /= double(R);
      const double pred = expected_local_displacement(cfg, p.trace_sigma);
      result.checks.push_back(at_most(tag + ".delta_sq", std::abs(delta / pred - 1.0), c.compare.variance_tolerance));
      run_info["delta_sq"] = {{"measured", delta}, {"predicted", pred}};
    }
    runs.push_back(run_info);
  }

  for (std::size_t r = 1; r < betas.size(); ++r) {
    if (std::isnan(measured[r]) || std::isnan(measured[0])) continue;
    const double expected = omega1[r] / omega1[0];
    const double ratio = measured[r] / measured[0];
    result.checks.push_back(at_most("frequency_ratio.beta" + std::to_string(r) + "_over_beta0",
                                    std::abs(ratio / expected - 1.0), c.compare.ratio_tolerance));
  }

  json summary = summary_json("compare", result);
  summary["runs"] = runs;
  result.files.push_back(write_json(out / "summary.json", summary));
  result.files.push_back(write_manifest(ctx, c, "compare", &p, {{"betas", betas}}, result.files));
  return result;
}

std::vector<SweepRow> run_sweep(const ExperimentConfig& c, unsigned workers) {
  const std::vector<double> values = sweep_values(c);
  const std::string& param = c.sweep.param;
  const Problem base = build_problem(c);
  const Index T = c.analysis.horizon > 0 ? c.analysis.horizon : c.run.steps;
  std::vector<SweepRow> rows(values.size());
  parallel_for(Index(values.size()), workers, [&](Index g) {
    ExperimentConfig cg = c;
    set_param(cg, param, values[static_cast<std::size_t>(g)]);
    Problem local;
    if (param == "lambda") local = build_problem(cg);
    const Problem& p = param == "lambda" ? local : base;
    const OptimizerConfigd& cfg = cg.optimizer;

    SweepRow row;
    row.value = values[static_cast<std::size_t>(g)];
    row.delta_sq_pred = expected_local_displacement(cfg, p.trace_sigma);
    const auto curve =
        expected_global_displacement_curve<double>(p.spectrum, cfg, c.problem.noise_scale(), T, c.analysis.lag_unit);
    row.c_fit_analytic = fit_power_law(curve, c.analysis.fit_window).exponent;

    RunOptions opts;
    opts.steps = c.run.steps;
    opts.stride = c.run.steps;
    opts.burn_in = resolve_burn_in(cg, p);
    const auto setup = make_setup(c, p, cfg);
    const Eigen::VectorXd theta0 = initial_theta(cg, p);
    std::vector<double> msd(static_cast<std::size_t>(c.run.steps), 0.0);
    double delta = 0;
    for (Index r = 0; r < c.run.replicas; ++r) {
      RunOptions o = opts;
      o.seed = replica_seed(c.run.seed, r);
      const TrajectoryRecordd rec = run(setup, theta0, o);
      delta += rec.delta_sq.tail(c.run.steps).mean();
      for (Index s = 1; s <= c.run.steps; ++s) msd[static_cast<std::size_t>(s - 1)] += rec.Delta_sq(s);
    }
    row.delta_sq_measured = delta / double(c.run.replicas);
    for (double& m : msd) m /= double(c.run.replicas);
    row.c_fit_simulated = fit_power_law(msd, c.analysis.fit_window).exponent;
    rows[static_cast<std::size_t>(g)] = row;
  });
  return rows;
}

CommandResult cmd_sweep(const ExperimentConfig& c, const RunContext& ctx) {
  const fs::path out = prepare(ctx);
  const auto rows = run_sweep(c, ctx.workers);
  CommandResult result;
  result.files.push_back(out / "sweep.csv");
  CsvWriter csv(result.files.back(), {"param_name", "param_value", "delta_sq_pred", "delta_sq_measured",
                                      "c_fit_analytic", "c_fit_simulated"});
  for (const auto& r : rows)
    csv.row({c.sweep.param}, {r.value, r.delta_sq_pred, r.delta_sq_measured, r.c_fit_analytic, r.c_fit_simulated});
  const Problem p = build_problem(c);
  result.files.push_back(write_manifest(ctx, c, "sweep", &p, {{"param", c.sweep.param}}, result.files));
  return result;
}

CommandResult cmd_decompose(const ExperimentConfig& c, const RunContext& ctx) {
  const Index k = c.analysis.k;
  if (k < 2) throw ConfigError("analysis.k: decompose needs at least two modes", "analysis.k");
  const Index pi = (c.analysis.plane_i == 0 ? 1 : c.analysis.plane_i) - 1;
  const Index pj = (c.analysis.plane_j == 0 ? k : c.analysis.plane_j) - 1;
  if (pi == pj) throw ConfigError("analysis.plane_j: the plane needs two distinct modes", "analysis.plane_j");

  const fs::path out = prepare(ctx);
  const Problem p = build_problem(c);
  require_commuting(p);
  const OptimizerConfigd& cfg = c.optimizer;
  const Decompositiond closed = closed_form_qu(p.modes, cfg);
  const Decompositiond numeric = kwon_decompose(closed.A, closed.D);
  const StationarityCertificate cert = stationarity_certificate(numeric, c.analysis.probes, c.run.seed);
  const double kappa = cfg.kappa();

  CommandResult result;
  const auto& res = numeric.residuals;
  result.checks.push_back(at_most("lyapunov_residual", res.lyapunov, 1e-9));
  result.checks.push_back(at_most("reconstruction_residual", res.reconstruction, 1e-9));
  result.checks.push_back(at_most("skew_residual", res.skew, 1e-10));
  result.checks.push_back(at_most("divergence", cert.divergence, 1e-12));
  result.checks.push_back(at_most("orthogonality", cert.orthogonality, 1e-10));

  // Position plane through mu spanned by q_i and q_j, at zero velocity.
  const Index G = c.analysis.grid;
  auto axis = [G](double extent, Index u) { return -extent + 2.0 * extent * double(u) / double(G - 1); };
  auto std_a = [&](Index l) { return std::sqrt(closed.B(l, l) / kappa); };
  auto std_b = [&](Index l) { return std::sqrt(closed.B(k + l, k + l) / kappa); };
  const double extent = 3.0 * std::max(std_a(pi), std_a(pj));
  const double ci = p.modes[static_cast<std::size_t>(pi)].rho + cfg.lambda;
  const double cj = p.modes[static_cast<std::size_t>(pj)].rho + cfg.lambda;
  result.files.push_back(out / "plane.csv");
  {
    CsvWriter csv(result.files.back(), {"x", "y", "phi", "psi_theta"});
    for (Index u = 0; u < G; ++u)
      for (Index w = 0; w < G; ++w) {
        const double x = axis(extent, u), y = axis(extent, w);
        csv.row({x, y, 0.5 * (ci * x * x + cj * y * y),
                 0.5 * (closed.U(pi, pi) * x * x + closed.U(pj, pj) * y * y)});
      }
  }
  const double phi_ratio = ci / cj;
  const double psi_ratio = closed.U(pi, pi) / closed.U(pj, pj);

  // Phase planes (a_l, b_l) of the two modes with the current field.
  Index clockwise = 0, moving = 0;
  for (Index l : {pi, pj}) {
    result.files.push_back(out / ("phase_" + std::to_string(l + 1) + ".csv"));
    CsvWriter csv(result.files.back(), {"a", "b", "psi", "j_a", "j_b", "density", "J_a", "J_b"});
    const double sa = std_a(l), sb = std_b(l);
    for (Index u = 0; u < G; ++u)
      for (Index w = 0; w < G; ++w) {
        Eigen::VectorXd x = Eigen::VectorXd::Zero(2 * k);
        x(l) = axis(3 * sa, u);
        x(k + l) = axis(3 * sb, w);
        const Eigen::VectorXd j = probability_current(closed, x);
        const double psi = 0.5 * x.dot(closed.U * x);
        const double rho = std::exp(-0.5 * (x(l) * x(l) / (sa * sa) + x(k + l) * x(k + l) / (sb * sb))) /
                           (2 * M_PI * sa * sb);
        const double turn = x(l) * j(k + l) - x(k + l) * j(l);
        if (turn != 0) {
          ++moving;
          if (turn < 0) ++clockwise;
        }
        csv.row({x(l), x(k + l), psi, j(l), j(k + l), rho, rho * j(l), rho * j(k + l)});
      }
  }
  const double clockwise_fraction = moving > 0 ? double(clockwise) / double(moving) : 0.0;
  result.checks.push_back({"circulation_clockwise_fraction", clockwise_fraction, 1.0, clockwise_fraction == 1.0});

  double u_min = closed.U(0, 0), u_max = closed.U(0, 0);
  for (Index l = 0; l < k; ++l) {
    u_min = std::min(u_min, closed.U(l, l));
    u_max = std::max(u_max, closed.U(l, l));
  }
  const double spread = (u_max - u_min) / u_max;

  json certificate = {
      {"lyapunov_residual", res.lyapunov},
      {"reconstruction_residual", res.reconstruction},
      {"skew_residual", res.skew},
      {"orthogonality", cert.orthogonality},
      {"divergence", cert.divergence},
      {"divergence_abs", cert.divergence_abs},
      {"balance", to_string(cert.balance)},
      {"probes", cert.probes},
      {"closed_form",
       {{"lyapunov_residual", closed.residuals.lyapunov},
        {"reconstruction_residual", closed.residuals.reconstruction},
        {"skew_residual", closed.residuals.skew},
        {"U_agreement", (numeric.U - closed.U).norm() / closed.U.norm()}}},
      {"plane", {{"i", pi + 1}, {"j", pj + 1}, {"phi_anisotropy", phi_ratio}, {"psi_anisotropy", psi_ratio}}},
      {"position_block_spread", spread},
      {"circulation_clockwise_fraction", clockwise_fraction}};
  json summary = summary_json("decompose", result);
  for (auto& [key, value] : summary.items()) certificate[key] = value;
  result.files.push_back(write_json(out / "certificate.json", certificate));
  result.files.push_back(write_manifest(ctx, c, "decompose", &p, json::object(), result.files));
  return result;
}

CommandResult cmd_theory(const ExperimentConfig& c, const RunContext& ctx) {
  const fs::path out = prepare(ctx);
  const Problem p = build_problem(c);
  require_commuting(p);
  const OptimizerConfigd& cfg = c.optimizer;
  const Index k = c.analysis.k;
  const Eigen::VectorXd a0 = p.basis.vectors.transpose() * (initial_theta(c, p) - p.model.mu);

  CommandResult result;
  result.files.push_back(out / "theory.csv");
  {
    CsvWriter csv(result.files.back(), {"t", "mode", "a_mean", "b_mean", "var_aa", "var_ab", "var_bb"});
    for (Index s = 0; s <= c.run.steps; s += c.run.stride) {
      const double t = cfg.eta * double(s);
      for (Index l = 0; l < k; ++l) {
        const auto& m = p.modes[static_cast<std::size_t>(l)];
        const Eigen::Vector2d mean = mode_mean(m, a0(l), 0.0, t);
        const Eigen::Matrix2d V = mode_variance(m, cfg, t);
        csv.row({t, double(l + 1), mean(0), mean(1), V(0, 0), V(0, 1), V(1, 1)});
      }
    }
  }

  const Index T = c.analysis.horizon > 0 ? c.analysis.horizon : c.run.steps;
  const auto curve =
      expected_global_displacement_curve<double>(p.spectrum, cfg, c.problem.noise_scale(), T, c.analysis.lag_unit);
  result.files.push_back(out / "msd.csv");
  {
    CsvWriter csv(result.files.back(), {"step", "t", "msd"});
    for (Index s = c.run.stride; s <= T; s += c.run.stride)
      csv.row({double(s), cfg.eta * double(s), curve[static_cast<std::size_t>(s - 1)]});
  }

  json fit = nullptr;
  try {
    const PowerLawFit f = fit_power_law(curve, c.analysis.fit_window);
    fit = {{"exponent", f.exponent}, {"amplitude", f.amplitude}, {"points", f.points}, {"first_step", f.first + 1}};
  } catch (const FitError&) {
  }
  const DampingProfile damping = damping_profile<double>(p.spectrum, cfg);
  const EquipartitionReport eq = equipartition_report(p.model, p.noise, cfg);
  json theory = {{"delta_sq_pred", expected_local_displacement(cfg, p.trace_sigma)},
                 {"lag_unit", to_string(c.analysis.lag_unit)},
                 {"horizon", T},
                 {"fit", fit},
                 {"damping", {{"overdamped", damping.over}, {"critical", damping.critical},
                              {"underdamped", damping.under}, {"zeta", damping.zeta}}},
                 {"equipartition", {{"expected_loss", eq.expected_loss}, {"expected_kinetic", eq.expected_kinetic},
                                    {"offset", eq.offset}}},
                 {"derived", derived_json(cfg, p)}};
  result.files.push_back(write_json(out / "theory.json", theory));
  result.files.push_back(write_manifest(ctx, c, "theory", &p, json::object(), result.files));
  return result;
}

CommandResult cmd_fit(const FitRequest& request, const RunContext& ctx) {
  const CsvTable table = read_csv(request.input);
  const PowerLawFit f = fit_power_law(table.column(request.x), table.column(request.column), request.window);
  const fs::path out = prepare(ctx);
  CommandResult result;
  json j = {{"input", request.input.string()},
            {"x", request.x},
            {"column", request.column},
            {"window", request.window},
            {"exponent", f.exponent},
            {"amplitude", f.amplitude},
            {"points", f.points},
            {"first_row", f.first + 1}};
  result.files.push_back(write_json(out / "fit.json", j));
  return result;
}

}  // namespace sgdlab
