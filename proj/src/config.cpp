#include "sgdlab/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

namespace sgdlab {

namespace {

namespace pt = boost::property_tree;

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// Line of `key` inside `section` (empty section for top-level keys), or 0.
int locate(const std::string& text, const std::string& section, const std::string& key) {
  std::istringstream in(text);
  std::string line, current;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const std::string t = trim(line);
    if (t.empty() || t[0] == ';' || t[0] == '#') continue;
    if (t[0] == '[') {
      current = trim(t.substr(1, t.find(']') == std::string::npos ? std::string::npos : t.find(']') - 1));
      if (key.empty() && current == section) return number;
      continue;
    }
    const auto eq = t.find('=');
    if (eq != std::string::npos && current == section && trim(t.substr(0, eq)) == key) return number;
  }
  return 0;
}

double to_double(const std::string& s) {
  double x = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), x);
  if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(x))
    throw std::invalid_argument("expected a finite number, got '" + s + "'");
  return x;
}

long long to_integer(const std::string& s) {
  long long x = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), x);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw std::invalid_argument("expected an integer, got '" + s + "'");
  return x;
}

Seed to_seed(const std::string& s) {
  unsigned long long x = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), x);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw std::invalid_argument("expected an unsigned integer, got '" + s + "'");
  return static_cast<Seed>(x);
}

void require(bool ok, const std::string& message) {
  if (!ok) throw std::invalid_argument(message);
}

struct Field {
  std::string section;
  std::string key;
  bool required = false;
  std::function<void(ExperimentConfig&, const std::string&)> read;
  std::function<std::optional<std::string>(const ExperimentConfig&)> write;

  std::string name() const { return section.empty() ? key : section + "." + key; }
};

template <typename Get>
Field real(std::string section, std::string key, Get get, std::function<void(double)> check = {}) {
  return {std::move(section), std::move(key), false,
          [get, check](ExperimentConfig& c, const std::string& v) {
            const double x = to_double(v);
            if (check) check(x);
            get(c) = x;
          },
          [get](const ExperimentConfig& c) -> std::optional<std::string> {
            return format_double(get(const_cast<ExperimentConfig&>(c)));
          }};
}

template <typename Get>
Field integer(std::string section, std::string key, Get get, long long min_value) {
  return {std::move(section), std::move(key), false,
          [get, min_value](ExperimentConfig& c, const std::string& v) {
            const long long x = to_integer(v);
            require(x >= min_value, "must be at least " + std::to_string(min_value));
            get(c) = static_cast<Index>(x);
          },
          [get](const ExperimentConfig& c) -> std::optional<std::string> {
            return std::to_string(get(const_cast<ExperimentConfig&>(c)));
          }};
}

template <typename Get>
Field seed(std::string section, std::string key, Get get) {
  return {std::move(section), std::move(key), false,
          [get](ExperimentConfig& c, const std::string& v) { get(c) = to_seed(v); },
          [get](const ExperimentConfig& c) -> std::optional<std::string> {
            return std::to_string(get(const_cast<ExperimentConfig&>(c)));
          }};
}

template <typename Get>
Field text(std::string section, std::string key, Get get, std::function<void(const std::string&)> check = {}) {
  return {std::move(section), std::move(key), false,
          [get, check](ExperimentConfig& c, const std::string& v) {
            if (check) check(v);
            get(c) = v;
          },
          [get](const ExperimentConfig& c) -> std::optional<std::string> { return get(const_cast<ExperimentConfig&>(c)); }};
}

template <typename Enum, typename Get>
Field choice(std::string section, std::string key, Get get, std::vector<std::pair<std::string, Enum>> names) {
  return {std::move(section), std::move(key), false,
          [get, names](ExperimentConfig& c, const std::string& v) {
            std::string options;
            for (const auto& [name, value] : names) {
              if (name == v) {
                get(c) = value;
                return;
              }
              options += (options.empty() ? "" : ", ") + name;
            }
            throw std::invalid_argument("expected one of " + options + ", got '" + v + "'");
          },
          [get, names](const ExperimentConfig& c) -> std::optional<std::string> {
            const Enum e = get(const_cast<ExperimentConfig&>(c));
            for (const auto& [name, value] : names)
              if (value == e) return name;
            return names.front().first;
          }};
}

Field& required(Field&& f, std::vector<Field>& out) {
  f.required = true;
  out.push_back(std::move(f));
  return out.back();
}

void check_list(const std::string& v) {
  if (!trim(v).empty()) parse_value_list(v);
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    required({"", "spec_version", false,
              [](ExperimentConfig& c, const std::string& v) {
                const long long x = to_integer(v);
                require(x == kSpecVersion, "unsupported spec_version " + v + " (this build reads " +
                                               std::to_string(kSpecVersion) + ")");
                c.spec_version = static_cast<int>(x);
              },
              [](const ExperimentConfig& c) -> std::optional<std::string> { return std::to_string(c.spec_version); }},
             f);

    f.push_back(choice<ProblemKind>("problem", "kind", [](ExperimentConfig& c) -> ProblemKind& { return c.problem.kind; },
                                    {{"regression", ProblemKind::Regression}, {"spectral", ProblemKind::Spectral}}));
    f.push_back(integer("problem", "n", [](ExperimentConfig& c) -> Index& { return c.problem.n; }, 1));
    required(integer("problem", "d", [](ExperimentConfig& c) -> Index& { return c.problem.d; }, 1), f);
    f.push_back(real("problem", "sigma_gen", [](ExperimentConfig& c) -> double& { return c.problem.sigma_gen; },
                     [](double x) { require(x >= 0, "must be nonnegative"); }));
    f.push_back(seed("problem", "seed", [](ExperimentConfig& c) -> Seed& { return c.problem.seed; }));
    f.push_back(text("problem", "column_scale", [](ExperimentConfig& c) -> std::string& { return c.problem.column_scale; },
                     check_list));
    f.push_back(text("problem", "spectrum", [](ExperimentConfig& c) -> std::string& { return c.problem.spectrum; },
                     check_list));
    f.push_back(text("problem", "theta_bar", [](ExperimentConfig& c) -> std::string& { return c.problem.theta_bar; },
                     check_list));
    f.push_back({"problem", "sigma_sq", false,
                 [](ExperimentConfig& c, const std::string& v) {
                   const double x = to_double(v);
                   require(x >= 0, "must be nonnegative");
                   c.problem.sigma_sq = x;
                 },
                 [](const ExperimentConfig& c) -> std::optional<std::string> {
                   if (!c.problem.sigma_sq) return std::nullopt;
                   return format_double(*c.problem.sigma_sq);
                 }});
    f.push_back(choice<CovarianceMode>(
        "problem", "noise", [](ExperimentConfig& c) -> CovarianceMode& { return c.problem.noise; },
        {{"scaled_hessian", CovarianceMode::ScaledHessian}, {"empirical", CovarianceMode::Empirical}}));

    required(real("optimizer", "eta", [](ExperimentConfig& c) -> double& { return c.optimizer.eta; },
                  [](double x) { require(x > 0, "must be positive"); }),
             f);
    required(real("optimizer", "beta", [](ExperimentConfig& c) -> double& { return c.optimizer.beta; },
                  [](double x) { require(x >= 0 && x < 1, "must lie in [0, 1)"); }),
             f);
    f.push_back(real("optimizer", "lambda", [](ExperimentConfig& c) -> double& { return c.optimizer.lambda; },
                     [](double x) { require(x >= 0, "must be nonnegative"); }));
    required(integer("optimizer", "batch_size", [](ExperimentConfig& c) -> Index& { return c.optimizer.batch_size; }, 1),
             f);

    required(integer("run", "steps", [](ExperimentConfig& c) -> Index& { return c.run.steps; }, 1), f);
    f.push_back({"run", "burn_in", false,
                 [](ExperimentConfig& c, const std::string& v) {
                   if (v == "auto") {
                     c.run.burn_in = RunSpec::kAutoBurnIn;
                     return;
                   }
                   const long long x = to_integer(v);
                   require(x >= 0, "must be nonnegative or 'auto'");
                   c.run.burn_in = static_cast<Index>(x);
                 },
                 [](const ExperimentConfig& c) -> std::optional<std::string> {
                   return c.run.burn_in == RunSpec::kAutoBurnIn ? std::string("auto") : std::to_string(c.run.burn_in);
                 }});
    f.push_back(integer("run", "stride", [](ExperimentConfig& c) -> Index& { return c.run.stride; }, 1));
    f.push_back(integer("run", "replicas", [](ExperimentConfig& c) -> Index& { return c.run.replicas; }, 1));
    f.push_back(seed("run", "seed", [](ExperimentConfig& c) -> Seed& { return c.run.seed; }));
    f.push_back(choice<GradientMode>("run", "gradient", [](ExperimentConfig& c) -> GradientMode& { return c.run.gradient; },
                                     {{"minibatch", GradientMode::Minibatch},
                                      {"shuffled", GradientMode::Shuffled},
                                      {"idealized", GradientMode::Idealized},
                                      {"full", GradientMode::FullBatch}}));
    f.push_back(choice<StartKind>("run", "start", [](ExperimentConfig& c) -> StartKind& { return c.run.start; },
                                  {{"minimum", StartKind::Minimum}, {"displaced", StartKind::Displaced}}));
    f.push_back(real("run", "start_offset", [](ExperimentConfig& c) -> double& { return c.run.start_offset; }));

    f.push_back(integer("analysis", "k", [](ExperimentConfig& c) -> Index& { return c.analysis.k; }, 1));
    f.push_back(real("analysis", "fit_window", [](ExperimentConfig& c) -> double& { return c.analysis.fit_window; },
                     [](double x) { require(x >= 0 && x < 1, "must lie in [0, 1)"); }));
    f.push_back(choice<LagUnit>("analysis", "lag_unit", [](ExperimentConfig& c) -> LagUnit& { return c.analysis.lag_unit; },
                                {{"continuous", LagUnit::Continuous}, {"steps", LagUnit::Steps}}));
    f.push_back(integer("analysis", "horizon", [](ExperimentConfig& c) -> Index& { return c.analysis.horizon; }, 0));
    f.push_back(integer("analysis", "subspace_iters",
                        [](ExperimentConfig& c) -> Index& { return c.analysis.subspace_iters; }, 1));
    f.push_back(real("analysis", "subspace_tol", [](ExperimentConfig& c) -> double& { return c.analysis.subspace_tol; },
                     [](double x) { require(x > 0, "must be positive"); }));
    f.push_back(integer("analysis", "plane_i", [](ExperimentConfig& c) -> Index& { return c.analysis.plane_i; }, 0));
    f.push_back(integer("analysis", "plane_j", [](ExperimentConfig& c) -> Index& { return c.analysis.plane_j; }, 0));
    f.push_back(integer("analysis", "grid", [](ExperimentConfig& c) -> Index& { return c.analysis.grid; }, 2));
    f.push_back(integer("analysis", "probes", [](ExperimentConfig& c) -> Index& { return c.analysis.probes; }, 1));

    f.push_back(text("sweep", "param", [](ExperimentConfig& c) -> std::string& { return c.sweep.param; },
                     [](const std::string& v) {
                       require(v == "eta" || v == "beta" || v == "batch_size" || v == "lambda",
                               "expected one of eta, beta, batch_size, lambda, got '" + v + "'");
                     }));
    f.push_back(text("sweep", "values", [](ExperimentConfig& c) -> std::string& { return c.sweep.values; }, check_list));

    f.push_back(text("compare", "betas", [](ExperimentConfig& c) -> std::string& { return c.compare.betas; }, check_list));
    f.push_back(real("compare", "rmse_tolerance", [](ExperimentConfig& c) -> double& { return c.compare.rmse_tolerance; },
                     [](double x) { require(x > 0, "must be positive"); }));
    f.push_back(real("compare", "variance_tolerance",
                     [](ExperimentConfig& c) -> double& { return c.compare.variance_tolerance; },
                     [](double x) { require(x > 0, "must be positive"); }));
    f.push_back(real("compare", "frequency_bins", [](ExperimentConfig& c) -> double& { return c.compare.frequency_bins; },
                     [](double x) { require(x > 0, "must be positive"); }));
    f.push_back(real("compare", "ratio_tolerance", [](ExperimentConfig& c) -> double& { return c.compare.ratio_tolerance; },
                     [](double x) { require(x > 0, "must be positive"); }));

    f.push_back(text("output", "dir", [](ExperimentConfig& c) -> std::string& { return c.output.dir; },
                     [](const std::string& v) { require(!v.empty(), "must not be empty"); }));
    f.push_back({"output", "save_dataset", false,
                 [](ExperimentConfig& c, const std::string& v) {
                   require(v == "true" || v == "false", "expected true or false, got '" + v + "'");
                   c.output.save_dataset = v == "true";
                 },
                 [](const ExperimentConfig& c) -> std::optional<std::string> {
                   return std::string(c.output.save_dataset ? "true" : "false");
                 }});
    return f;
  }();
  return table;
}

// Checks that involve more than one key.
void cross_check(const ExperimentConfig& c, const std::string& text) {
  auto fail = [&](const std::string& section, const std::string& key, const std::string& message) {
    throw ConfigError(section + "." + key + ": " + message, section + "." + key, locate(text, section, key));
  };
  const Index d = c.problem.d;
  auto check_vector = [&](const std::string& key, const std::string& value) {
    try {
      parse_value_list(value, d);
    } catch (const std::exception& e) {
      fail("problem", key, e.what());
    }
    if (static_cast<Index>(parse_value_list(value, d).size()) != d)
      fail("problem", key, "needs " + std::to_string(d) + " values");
  };
  check_vector("theta_bar", c.problem.theta_bar);
  if (c.problem.kind == ProblemKind::Regression) {
    check_vector("column_scale", c.problem.column_scale);
    if (c.optimizer.batch_size > c.problem.n) fail("optimizer", "batch_size", "exceeds problem.n");
  } else {
    check_vector("spectrum", c.problem.spectrum);
    for (double x : parse_value_list(c.problem.spectrum, d))
      if (x < 0) fail("problem", "spectrum", "eigenvalues must be nonnegative");
    if (c.run.gradient == GradientMode::Minibatch || c.run.gradient == GradientMode::Shuffled)
      fail("run", "gradient", "spectral problems have no dataset; use idealized or full");
    if (c.problem.noise == CovarianceMode::Empirical)
      fail("problem", "noise", "the empirical covariance needs a regression dataset");
  }
  if (c.analysis.k > d) fail("analysis", "k", "exceeds problem.d");
  if (c.analysis.plane_i > c.analysis.k) fail("analysis", "plane_i", "exceeds analysis.k");
  if (c.analysis.plane_j > c.analysis.k) fail("analysis", "plane_j", "exceeds analysis.k");
  for (double b : c.compare.betas.empty() ? std::vector<double>{} : parse_value_list(c.compare.betas))
    if (!(b >= 0 && b < 1)) fail("compare", "betas", "every beta must lie in [0, 1)");
}

}  // namespace

std::string format_double(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

std::vector<double> parse_value_list(const std::string& raw, Index count) {
  const std::string text = trim(raw);
  if (text.empty()) throw std::invalid_argument("empty value list");
  for (const char* kind : {"linspace:", "geomspace:"}) {
    const std::string prefix(kind);
    if (text.rfind(prefix, 0) != 0) continue;
    std::vector<std::string> parts;
    std::stringstream rest(text.substr(prefix.size()));
    std::string part;
    while (std::getline(rest, part, ':')) parts.push_back(trim(part));
    if (parts.size() != 2 && parts.size() != 3)
      throw std::invalid_argument("expected " + prefix + "a:b or " + prefix + "a:b:n, got '" + text + "'");
    const double a = to_double(parts[0]), b = to_double(parts[1]);
    const long long n = parts.size() == 3 ? to_integer(parts[2]) : (count > 0 ? count : kDefaultGridPoints);
    if (n < 1) throw std::invalid_argument("range length must be positive");
    const bool geometric = prefix == "geomspace:";
    if (geometric && !(a > 0 && b > 0)) throw std::invalid_argument("geomspace endpoints must be positive");
    std::vector<double> out(static_cast<std::size_t>(n));
    for (long long i = 0; i < n; ++i) {
      const double f = n == 1 ? 0.0 : double(i) / double(n - 1);
      out[static_cast<std::size_t>(i)] = geometric ? a * std::pow(b / a, f) : a + (b - a) * f;
    }
    if (n > 1) out.back() = b;
    return out;
  }
  std::vector<double> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) out.push_back(to_double(trim(item)));
  if (out.size() == 1 && count > 1) out.assign(static_cast<std::size_t>(count), out.front());
  return out;
}

ExperimentConfig parse_config(const std::string& text) {
  pt::ptree tree;
  try {
    std::istringstream in(text);
    pt::ini_parser::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError("config syntax error: " + e.message(), {}, static_cast<int>(e.line()));
  }

  const auto& table = fields();
  auto known_section = [&](const std::string& s) {
    for (const auto& f : table)
      if (f.section == s) return true;
    return false;
  };
  auto known_key = [&](const std::string& s, const std::string& k) {
    for (const auto& f : table)
      if (f.section == s && f.key == k) return true;
    return false;
  };
  for (const auto& [name, node] : tree) {
    if (node.empty() && !known_section(name)) {
      if (!known_key("", name))
        throw ConfigError("unknown key '" + name + "'", name, locate(text, "", name));
      continue;
    }
    if (!known_section(name))
      throw ConfigError("unknown section [" + name + "]", name, locate(text, name, ""));
    for (const auto& [key, leaf] : node)
      if (!known_key(name, key))
        throw ConfigError("unknown key '" + name + "." + key + "'", name + "." + key, locate(text, name, key));
  }

  ExperimentConfig config;
  for (const auto& f : table) {
    const std::string path = f.section.empty() ? f.key : f.section + "." + f.key;
    const auto value = f.section.empty() ? tree.get_optional<std::string>(pt::ptree::path_type(f.key, '\0'))
                                         : tree.get_optional<std::string>(pt::ptree::path_type(path, '.'));
    if (!value) {
      if (f.required) throw ConfigError("missing required key '" + path + "'", path, 0);
      continue;
    }
    try {
      f.read(config, trim(*value));
    } catch (const std::exception& e) {
      throw ConfigError(path + ": " + e.what(), path, locate(text, f.section, f.key));
    }
  }
  cross_check(config, text);
  return config;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string(), {}, 0);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

std::string to_ini(const ExperimentConfig& config) {
  std::ostringstream out;
  std::string section = "\x01";
  for (const auto& f : fields()) {
    const auto value = f.write(config);
    if (!value) continue;
    if (f.section != section) {
      section = f.section;
      if (!section.empty()) out << "\n[" << section << "]\n";
    }
    out << f.key << " = " << *value << "\n";
  }
  return out.str();
}

std::string config_hash(const ExperimentConfig& config) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : to_ini(config)) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string to_string(ProblemKind kind) { return kind == ProblemKind::Regression ? "regression" : "spectral"; }
std::string to_string(StartKind kind) { return kind == StartKind::Minimum ? "minimum" : "displaced"; }
std::string to_string(LagUnit unit) { return unit == LagUnit::Continuous ? "continuous" : "steps"; }
std::string to_string(CovarianceMode mode) {
  return mode == CovarianceMode::ScaledHessian ? "scaled_hessian" : "empirical";
}

}  // namespace sgdlab
