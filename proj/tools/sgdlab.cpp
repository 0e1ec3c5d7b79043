#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "sgdlab/config.hpp"
#include "sgdlab/errors.hpp"
#include "sgdlab/parallel.hpp"
#include "sgdlab/pipelines.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitConfig = 2;

void report(const sgdlab::CommandResult& result) {
  for (const auto& f : result.files) std::cout << "wrote " << f.string() << '\n';
  for (const auto& ch : result.checks)
    std::cout << (ch.pass ? "PASS " : "FAIL ") << ch.name << " value=" << sgdlab::format_double(ch.value)
              << " tolerance=" << sgdlab::format_double(ch.tolerance) << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sgdlab: phase-space dynamics of momentum SGD on quadratic losses"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  unsigned workers = 0;
  std::optional<std::uint64_t> seed;

  struct Command {
    const char* name;
    const char* help;
    sgdlab::CommandResult (*run)(const sgdlab::ExperimentConfig&, const sgdlab::RunContext&);
  };
  const Command commands[] = {
      {"simulate", "Run SGD replicas and write trajectory CSVs", sgdlab::cmd_simulate},
      {"compare", "Compare simulated trajectories with the analytic OU moments", sgdlab::cmd_compare},
      {"sweep", "Vary one hyperparameter and record step size and diffusion exponent", sgdlab::cmd_sweep},
      {"decompose", "Modified loss, probability current and stationarity certificate", sgdlab::cmd_decompose},
      {"theory", "Emit analytic curves only", sgdlab::cmd_theory},
  };
  std::vector<std::pair<CLI::App*, const Command*>> subs;
  for (const auto& cmd : commands) {
    CLI::App* sub = app.add_subcommand(cmd.name, cmd.help);
    sub->add_option("--config", config_path, "Experiment config file")->required();
    sub->add_option("--out", out_dir, "Output directory (default: output.dir from the config)");
    sub->add_option("--workers", workers, "Worker threads (default: SGDLAB_WORKERS or all cores)")
        ->check(CLI::PositiveNumber);
    sub->add_option("--seed", seed, "Run seed, overriding run.seed");
    subs.emplace_back(sub, &cmd);
  }

  sgdlab::FitRequest fit;
  std::optional<std::string> fit_config;
  CLI::App* fit_cmd = app.add_subcommand("fit", "Power-law fit of one CSV column against another");
  fit_cmd->add_option("--input", fit.input, "CSV file, e.g. a trajectory")->required();
  fit_cmd->add_option("--column", fit.column, "Column to fit")->capture_default_str();
  fit_cmd->add_option("--x", fit.x, "Abscissa column")->capture_default_str();
  fit_cmd->add_option("--window", fit.window, "Fraction of rows skipped before the fit window");
  fit_cmd->add_option("--config", fit_config, "Config supplying analysis.fit_window");
  fit_cmd->add_option("--out", out_dir, "Output directory for fit.json (default: .)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  std::string invocation;
  for (int i = 0; i < argc; ++i) invocation += (i ? " " : "") + std::string(argv[i]);

  try {
    sgdlab::RunContext ctx;
    ctx.workers = workers > 0 ? workers : sgdlab::default_workers();
    ctx.invocation = invocation;

    if (fit_cmd->parsed()) {
      if (fit_config && fit_cmd->count("--window") == 0) fit.window = sgdlab::load_config(*fit_config).analysis.fit_window;
      ctx.out = out_dir.empty() ? "." : out_dir;
      const auto result = sgdlab::cmd_fit(fit, ctx);
      std::ifstream in(result.files.front());
      std::cout << in.rdbuf();
      return kExitOk;
    }

    for (const auto& [sub, cmd] : subs) {
      if (!sub->parsed()) continue;
      sgdlab::ExperimentConfig config = sgdlab::load_config(config_path);
      if (seed) config.run.seed = *seed;
      ctx.out = out_dir.empty() ? config.output.dir : out_dir;
      const auto result = cmd->run(config, ctx);
      report(result);
      if (!result.passed()) {
        std::cerr << "sgdlab " << cmd->name << ": " << result.failing().size() << " check(s) outside tolerance\n";
        return kExitRuntime;
      }
      return kExitOk;
    }
  } catch (const sgdlab::ConfigError& e) {
    std::cerr << "config error: " << e.what();
    if (!e.key().empty()) std::cerr << " [key " << e.key() << "]";
    if (e.line() > 0) std::cerr << " [line " << e.line() << "]";
    std::cerr << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitRuntime;
}
