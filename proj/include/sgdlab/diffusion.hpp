#pragma once

// Displacement statistics of stationary SGD: the local step size, the global
// mean squared displacement built from per-mode velocity autocorrelations,
// power-law fits of the latter, damping diagnostics, and equipartition.

#include <cmath>
#include <complex>
#include <functional>
#include <vector>

#include <unsupported/Eigen/FFT>

#include "sgdlab/errors.hpp"
#include "sgdlab/ou_theory.hpp"
#include "sgdlab/problem.hpp"
#include "sgdlab/simulate.hpp"
#include "sgdlab/types.hpp"

namespace sgdlab {

/// E|delta|^2 = eta^2 sigma^2 tr(H) / (S (1 - beta^2)).
template <typename Scalar>
Scalar expected_local_displacement(const OptimizerConfig<Scalar>& config, Scalar sigma_sq_tr_h) {
  if (!(sigma_sq_tr_h >= 0)) throw ArgumentError("expected_local_displacement: sigma^2 tr(H) must be nonnegative");
  return config.eta * config.eta * sigma_sq_tr_h / config.kappa();
}

/// Inverts expected_local_displacement for sigma^2 tr(H).
template <typename Scalar>
Scalar estimate_sigma_tr_h(Scalar measured_delta_sq, const OptimizerConfig<Scalar>& config) {
  if (!(measured_delta_sq > 0)) throw ArgumentError("estimate_sigma_tr_h: measured |delta|^2 must be positive");
  return measured_delta_sq * config.kappa() / (config.eta * config.eta);
}

/// Normalized stationary velocity autocorrelation of a mode at continuous lag tau.
template <typename Scalar>
Scalar velocity_autocorrelation(const ModeBlock<Scalar>& m, Scalar tau) {
  if (!(tau >= 0)) throw ArgumentError("velocity_autocorrelation: lag must be nonnegative");
  if (tau == Scalar(0)) return Scalar(1);
  const Scalar g = m.gamma;
  switch (m.regime) {
    case Regime::Critical:
      return std::exp(-g * tau) * (Scalar(1) - g * tau);
    case Regime::Overdamped: {
      const auto [c, so] = detail::damped_hyperbolic(g, m.alpha, tau);
      return c - g * so;
    }
    case Regime::Underdamped:
    default: {
      const Scalar e = std::exp(-g * tau);
      return e * (std::cos(m.alpha * tau) - g / m.alpha * std::sin(m.alpha * tau));
    }
  }
}

/// How a step lag k maps to the continuous lag of the autocorrelation.
enum class LagUnit {
  Continuous,  // tau = eta k
  Steps,       // tau = k
};

/// E|Delta_t|^2 for t = 1..T from tr(H) and the aggregate correlation
/// c(k) = sum_l rho_l C_l(k):
///   prefactor * (tr t + 2 sum_{k=1}^{t} (t - k) c(k)).
/// The inner sum obeys F(t+1) = F(t) + sum_{k<=t} c(k), giving O(T) total
/// work after the correlations are known.
inline std::vector<double> msd_from_correlation(double prefactor, double trace, Index T,
                                                const std::function<double(Index)>& corr) {
  if (T < 1) throw ArgumentError("msd_from_correlation: T must be at least 1");
  std::vector<double> out(static_cast<std::size_t>(T));
  double F = 0;        // sum_{k=1}^{t} (t - k) c(k)
  double partial = 0;  // sum_{k=1}^{t} c(k)
  for (Index t = 1; t <= T; ++t) {
    F += partial;
    partial += corr(t);
    out[static_cast<std::size_t>(t - 1)] = prefactor * (trace * double(t) + 2.0 * F);
  }
  return out;
}

template <typename Scalar>
std::vector<double> expected_global_displacement_curve(const VectorArg<Scalar>& spectrum,
                                                       const OptimizerConfig<Scalar>& config, Scalar sigma_sq, Index T,
                                                       LagUnit unit = LagUnit::Continuous) {
  config.validate();
  if ((spectrum.array() < 0).any()) throw ArgumentError("expected_global_displacement: spectrum must be nonnegative");
  const auto modes = mode_blocks(spectrum, config, sigma_sq);
  const Scalar lag_scale = unit == LagUnit::Continuous ? config.eta : Scalar(1);
  const double prefactor = double(config.eta * config.eta * sigma_sq / config.kappa());
  auto corr = [&](Index k) {
    double c = 0;
    for (const auto& m : modes) c += double(m.rho * velocity_autocorrelation(m, lag_scale * Scalar(k)));
    return c;
  };
  return msd_from_correlation(prefactor, double(spectrum.sum()), T, corr);
}

/// E|Delta_t|^2 at a single step count t >= 1.
template <typename Scalar>
Scalar expected_global_displacement(const VectorArg<Scalar>& spectrum, const OptimizerConfig<Scalar>& config,
                                    Scalar sigma_sq, Index t, LagUnit unit = LagUnit::Continuous) {
  if (t < 1) throw ArgumentError("expected_global_displacement: t must be at least 1");
  return Scalar(expected_global_displacement_curve(spectrum, config, sigma_sq, t, unit).back());
}

/// About n log-spaced integers in [1, T], strictly increasing.
inline std::vector<Index> geometric_grid(Index T, Index n) {
  std::vector<Index> out;
  if (T < 1 || n < 1) return out;
  const double step = n > 1 ? std::log(double(T)) / double(n - 1) : 0.0;
  for (Index i = 0; i < n; ++i) {
    const Index t = std::max<Index>(1, std::llround(std::exp(step * double(i))));
    if (out.empty() || t > out.back()) out.push_back(std::min(t, T));
  }
  if (out.back() != T) out.push_back(T);
  return out;
}

struct PowerLawFit {
  double exponent = 0;   // c
  double amplitude = 0;  // value ~ amplitude * t^c
  Index points = 0;
  Index first = 0;  // index of the first point used
};

/// Least-squares line through (log t, log value) over the points with index
/// >= floor(window_start_fraction * n). The default keeps the last 2/3.
inline PowerLawFit fit_power_law(const std::vector<double>& t, const std::vector<double>& value,
                                 double window_start_fraction = 1.0 / 3.0) {
  if (t.size() != value.size()) throw FitError("fit_power_law: t and value lengths differ");
  if (!(window_start_fraction >= 0 && window_start_fraction < 1))
    throw FitError("fit_power_law: window start fraction must lie in [0, 1)");
  const std::size_t n = t.size();
  const std::size_t first = static_cast<std::size_t>(std::floor(window_start_fraction * double(n)));
  if (n - first < 10) throw FitError("fit_power_law: fewer than 10 points in the fit window");
  const std::size_t m = n - first;
  Eigen::MatrixXd X(m, 2);
  Eigen::VectorXd y(m);
  for (std::size_t i = 0; i < m; ++i) {
    const double ti = t[first + i], vi = value[first + i];
    if (!(ti > 0) || !(vi > 0) || !std::isfinite(vi))
      throw FitError("fit_power_law: nonpositive value at t = " + std::to_string(ti));
    X(Index(i), 0) = 1.0;
    X(Index(i), 1) = std::log(ti);
    y(Index(i)) = std::log(vi);
  }
  const Eigen::Vector2d coef = X.colPivHouseholderQr().solve(y);
  return {coef(1), std::exp(coef(0)), Index(m), Index(first)};
}

/// Fits the curve indexed by t = 1..T.
inline PowerLawFit fit_power_law(const std::vector<double>& msd, double window_start_fraction = 1.0 / 3.0) {
  std::vector<double> t(msd.size());
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = double(i + 1);
  return fit_power_law(t, msd, window_start_fraction);
}

struct DampingProfile {
  std::vector<double> zeta;
  std::vector<Regime> regime;
  Index over = 0, critical = 0, under = 0;
};

template <typename Scalar>
DampingProfile damping_profile(const VectorArg<Scalar>& spectrum, const OptimizerConfig<Scalar>& config) {
  config.validate();
  if ((spectrum.array() < 0).any()) throw ArgumentError("damping_profile: spectrum must be nonnegative");
  DampingProfile p;
  for (Index l = 0; l < spectrum.size(); ++l) {
    const auto m = mode_block(spectrum(l), config);
    p.zeta.push_back(double(m.zeta));
    p.regime.push_back(m.regime);
    (m.regime == Regime::Overdamped ? p.over : m.regime == Regime::Critical ? p.critical : p.under) += 1;
  }
  return p;
}

struct EquipartitionReport {
  double expected_loss = 0;     // E[L_lambda]
  double expected_kinetic = 0;  // E[K] with K = m |v|^2 / 2
  double offset = 0;            // (lambda / 2) |mu|^2
};

/// L_lambda(theta) = 1/2 (theta - mu)^T H (theta - mu) + (lambda/2) |theta|^2.
template <typename Scalar>
Scalar regularized_loss(const QuadraticModel<Scalar>& model, const VectorArg<Scalar>& theta) {
  const Vector<Scalar> off = theta - model.mu;
  return Scalar(0.5) * off.dot(model.H * off) + Scalar(0.5) * model.lambda * theta.squaredNorm();
}

template <typename Scalar>
Scalar kinetic_energy(const OptimizerConfig<Scalar>& config, const VectorArg<Scalar>& v) {
  return Scalar(0.5) * config.mass() * v.squaredNorm();
}

/// Stationary expectations from the closed forms. The position covariance is
/// m (H + lambda I)^{-1} Sigma / kappa and the velocity covariance Sigma / kappa,
/// so any noise covariance commuting with H is accepted.
template <typename Scalar>
EquipartitionReport equipartition_report(const QuadraticModel<Scalar>& model, const NoiseModel<Scalar>& noise,
                                         const OptimizerConfig<Scalar>& config) {
  config.validate();
  const Matrix<Scalar> sigma = noise.covariance(model);
  Matrix<Scalar> K = model.H;
  K.diagonal().array() += model.lambda;
  Eigen::LDLT<Matrix<Scalar>> ldlt(K);
  if (ldlt.info() != Eigen::Success || !(ldlt.vectorD().array() > 0).all())
    throw ModelError("equipartition_report: H + lambda I must be positive definite");
  const Matrix<Scalar> position_cov = config.mass() / config.kappa() * ldlt.solve(sigma);
  EquipartitionReport r;
  r.offset = 0.5 * double(model.lambda) * double(model.mu.squaredNorm());
  r.expected_loss = 0.5 * double((K * position_cov).trace()) + r.offset;
  r.expected_kinetic = 0.5 * double(config.mass() * sigma.trace() / config.kappa());
  return r;
}

struct FrequencyEstimate {
  double frequency = 0;  // cycles per unit of the sample spacing dt
  double bin_width = 0;  // 1 / (n dt), the native resolution of the record
};

/// Dominant nonzero frequency of a real series sampled at spacing dt:
/// demeaned, zero-padded 8x, peak refined by a parabola through the log
/// magnitudes around the maximum.
inline FrequencyEstimate dominant_frequency(const std::vector<double>& series, double dt) {
  const std::size_t n = series.size();
  if (n < 4) throw ArgumentError("dominant_frequency: need at least 4 samples");
  if (!(dt > 0)) throw ArgumentError("dominant_frequency: dt must be positive");
  std::size_t nfft = 1;
  while (nfft < 8 * n) nfft <<= 1;
  double mean = 0;
  for (double x : series) mean += x;
  mean /= double(n);
  std::vector<double> padded(nfft, 0.0);
  for (std::size_t i = 0; i < n; ++i) padded[i] = series[i] - mean;
  Eigen::FFT<double> fft;
  std::vector<std::complex<double>> spec;
  fft.fwd(spec, padded);
  const std::size_t half = nfft / 2;
  std::size_t best = 1;
  for (std::size_t i = 1; i < half; ++i)
    if (std::abs(spec[i]) > std::abs(spec[best])) best = i;
  double offset = 0;
  if (best > 1 && best + 1 < half) {
    const double l = std::log(std::abs(spec[best - 1]) + 1e-300);
    const double c = std::log(std::abs(spec[best]) + 1e-300);
    const double r = std::log(std::abs(spec[best + 1]) + 1e-300);
    const double den = l - 2 * c + r;
    if (den < 0) offset = 0.5 * (l - r) / den;
  }
  return {(double(best) + offset) / (double(nfft) * dt), 1.0 / (double(n) * dt)};
}

}  // namespace sgdlab
