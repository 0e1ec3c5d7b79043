#pragma once

// The phase-space Ornstein-Uhlenbeck model of SGD on a quadratic loss,
//   d[theta; v] = -A ([theta; v] - [mu; 0]) dt + sqrt(2 kappa^{-1} D) dW,
// evaluated mode by mode in the Hessian eigenbasis, where each mode is a
// damped harmonic oscillator a'' + 2 gamma a' + omega^2 a = 0.

#include <cmath>
#include <random>
#include <tuple>
#include <vector>

#include "sgdlab/errors.hpp"
#include "sgdlab/problem.hpp"
#include "sgdlab/simulate.hpp"
#include "sgdlab/spectral.hpp"
#include "sgdlab/types.hpp"

namespace sgdlab {

enum class Regime { Overdamped, Critical, Underdamped };

inline const char* to_string(Regime r) {
  switch (r) {
    case Regime::Overdamped: return "overdamped";
    case Regime::Critical: return "critical";
    case Regime::Underdamped: return "underdamped";
  }
  return "?";
}

/// |gamma - omega| below this fraction of max(gamma, omega) counts as critical.
inline constexpr double kCriticalBand = 1e-7;

template <typename Scalar>
Regime classify(Scalar gamma, Scalar omega) {
  const Scalar scale = std::max(gamma, omega);
  if (std::abs(gamma - omega) < Scalar(kCriticalBand) * scale) return Regime::Critical;
  return gamma > omega ? Regime::Overdamped : Regime::Underdamped;
}

template <typename Scalar>
struct ModeBlock {
  Scalar rho = 0;
  Scalar gamma = 0;
  Scalar omega = 0;
  Scalar alpha = 0;  // sqrt|gamma^2 - omega^2|
  Scalar zeta = 0;   // gamma / omega
  Regime regime = Regime::Critical;
  // Gradient-noise variance along the mode, q^T Sigma q (sigma^2 rho when
  // Sigma = sigma^2 H).
  Scalar noise = 0;

  Scalar omega_sq() const { return omega * omega; }
};

/// Oscillator with prescribed damping and frequency; rho and noise unset.
template <typename Scalar>
ModeBlock<Scalar> oscillator_block(Scalar gamma, Scalar omega) {
  if (!(gamma > 0) || !(omega >= 0)) throw ArgumentError("oscillator_block: need gamma > 0 and omega >= 0");
  ModeBlock<Scalar> m;
  m.gamma = gamma;
  m.omega = omega;
  m.alpha = std::sqrt(std::abs((gamma - omega) * (gamma + omega)));
  m.zeta = omega > 0 ? gamma / omega : std::numeric_limits<Scalar>::infinity();
  m.regime = classify(gamma, omega);
  return m;
}

template <typename Scalar>
ModeBlock<Scalar> mode_block(Scalar rho, const OptimizerConfig<Scalar>& config, Scalar noise = 0) {
  const Scalar omega = std::sqrt(Scalar(2) * (rho + config.lambda) / (config.eta * (Scalar(1) + config.beta)));
  ModeBlock<Scalar> m = oscillator_block(config.gamma(), omega);
  m.rho = rho;
  m.noise = noise;
  // Written directly rather than as gamma / omega so that it does not
  // inherit rounding from either.
  m.zeta = (Scalar(1) - config.beta) / std::sqrt(Scalar(2) * config.eta * (Scalar(1) + config.beta) * (rho + config.lambda));
  return m;
}

template <typename Scalar>
std::vector<ModeBlock<Scalar>> mode_blocks(const VectorArg<Scalar>& spectrum, const OptimizerConfig<Scalar>& config,
                                           Scalar sigma_sq) {
  std::vector<ModeBlock<Scalar>> out;
  out.reserve(static_cast<std::size_t>(spectrum.size()));
  for (Index l = 0; l < spectrum.size(); ++l) out.push_back(mode_block(spectrum(l), config, sigma_sq * spectrum(l)));
  return out;
}

namespace detail {

// e^{-gamma t} cosh(alpha t) and e^{-gamma t} sinh(alpha t) / alpha, both
// formed from the two decaying exponentials so neither overflows.
template <typename Scalar>
std::pair<Scalar, Scalar> damped_hyperbolic(Scalar gamma, Scalar alpha, Scalar t) {
  const Scalar slow = std::exp(-(gamma - alpha) * t);
  const Scalar spread = -std::expm1(Scalar(-2) * alpha * t);  // 1 - e^{-2 alpha t}
  const Scalar c = slow * (Scalar(1) - Scalar(0.5) * spread);
  const Scalar s_over_alpha = alpha > 0 ? slow * Scalar(0.5) * spread / alpha : t * slow;
  return {c, s_over_alpha};
}

}  // namespace detail

/// exp(t [[0, 1], [-omega^2, -2 gamma]]) using the closed form of `regime`.
template <typename Scalar>
Matrix2<Scalar> block_exponential(const ModeBlock<Scalar>& m, Scalar t, Regime regime) {
  if (!(t >= 0)) throw ArgumentError("block_exponential: t must be nonnegative");
  const Scalar g = m.gamma;
  const Scalar w2 = m.omega_sq();
  Matrix2<Scalar> E;
  if (regime == Regime::Critical) {
    const Scalar e = std::exp(-g * t);
    E << e * (Scalar(1) + g * t), e * t, -w2 * e * t, e * (Scalar(1) - g * t);
    return E;
  }
  Scalar c, so;  // e^{-gt} cos|cosh(at), e^{-gt} sin|sinh(at) / a
  if (regime == Regime::Overdamped) {
    std::tie(c, so) = detail::damped_hyperbolic(g, m.alpha, t);
  } else {
    const Scalar e = std::exp(-g * t);
    c = e * std::cos(m.alpha * t);
    so = m.alpha > 0 ? e * std::sin(m.alpha * t) / m.alpha : e * t;
  }
  E << c + g * so, so, -w2 * so, c - g * so;
  return E;
}

template <typename Scalar>
Matrix2<Scalar> block_exponential(const ModeBlock<Scalar>& m, Scalar t) {
  return block_exponential(m, t, m.regime);
}

/// (a(t), b(t)) of the noise-free oscillator from (a0, b0).
template <typename Scalar>
Vector2<Scalar> mode_mean(const ModeBlock<Scalar>& m, Scalar a0, Scalar b0, Scalar t) {
  if (t == Scalar(0)) return Vector2<Scalar>(a0, b0);
  return block_exponential(m, t) * Vector2<Scalar>(a0, b0);
}

/// Stationary covariance of (a, b), including the 1/kappa temperature:
/// diag(eta s / (2 S (1-beta)(rho+lambda)), s / (S (1-beta^2))) for noise s.
template <typename Scalar>
Matrix2<Scalar> stationary_block(const ModeBlock<Scalar>& m, const OptimizerConfig<Scalar>& config) {
  const Scalar vv = m.noise / config.kappa();
  const Scalar w2 = m.omega_sq();
  Matrix2<Scalar> P = Matrix2<Scalar>::Zero();
  P(0, 0) = w2 > 0 ? vv / w2 : Scalar(0);
  P(1, 1) = vv;
  return P;
}

/// Covariance at time t of a mode started deterministically.
template <typename Scalar>
Matrix2<Scalar> mode_variance(const ModeBlock<Scalar>& m, const OptimizerConfig<Scalar>& config, Scalar t) {
  if (t == Scalar(0)) return Matrix2<Scalar>::Zero();
  const Matrix2<Scalar> P = stationary_block(m, config);
  const Matrix2<Scalar> E = block_exponential(m, t);
  Matrix2<Scalar> V = P - E * P * E.transpose();
  V(0, 1) = V(1, 0) = Scalar(0.5) * (V(0, 1) + V(1, 0));
  return V;
}

/// Cov(x_t, x_s) for t <= s: V(t) E(s - t)^T.
template <typename Scalar>
Matrix2<Scalar> mode_cross_covariance(const ModeBlock<Scalar>& m, const OptimizerConfig<Scalar>& config, Scalar t,
                                      Scalar s) {
  if (t > s) throw ArgumentError("cross_covariance: requires t <= s");
  return mode_variance(m, config, t) * block_exponential(m, s - t).transpose();
}

/// Stationary Cov(x_t, x_{t+tau}) = P E(tau)^T.
template <typename Scalar>
Matrix2<Scalar> stationary_cross_covariance(const ModeBlock<Scalar>& m, const OptimizerConfig<Scalar>& config,
                                            Scalar tau) {
  if (!(tau >= 0)) throw ArgumentError("stationary_cross_covariance: lag must be nonnegative");
  return stationary_block(m, config) * block_exponential(m, tau).transpose();
}

template <typename Scalar>
struct OUModel {
  OptimizerConfig<Scalar> config;
  Vector<Scalar> mu;
  EigenBasis<Scalar> basis;  // full basis, k = d
  std::vector<ModeBlock<Scalar>> modes;

  Index d() const { return mu.size(); }
  Scalar kappa() const { return config.kappa(); }

  Vector<Scalar> mu_phase() const {
    Vector<Scalar> x = Vector<Scalar>::Zero(2 * d());
    x.head(d()) = mu;
    return x;
  }

  Vector<Scalar> spectrum() const {
    Vector<Scalar> r(static_cast<Index>(modes.size()));
    for (std::size_t l = 0; l < modes.size(); ++l) r(static_cast<Index>(l)) = modes[l].rho;
    return r;
  }

  // Gradient-noise covariance Sigma rebuilt from the per-mode variances.
  Matrix<Scalar> noise_covariance() const {
    Vector<Scalar> s(static_cast<Index>(modes.size()));
    for (std::size_t l = 0; l < modes.size(); ++l) s(static_cast<Index>(l)) = modes[l].noise;
    return basis.vectors * s.asDiagonal() * basis.vectors.transpose();
  }

  Matrix<Scalar> hessian() const { return basis.vectors * spectrum().asDiagonal() * basis.vectors.transpose(); }

  /// [[0, -I], [2/(eta(1+beta)) (H + lambda I), 2(1-beta)/(eta(1+beta)) I]]
  Matrix<Scalar> drift() const {
    const Index n = d();
    const Scalar c = Scalar(2) / (config.eta * (Scalar(1) + config.beta));
    Matrix<Scalar> A = Matrix<Scalar>::Zero(2 * n, 2 * n);
    A.topRightCorner(n, n) = -Matrix<Scalar>::Identity(n, n);
    Matrix<Scalar> K = hessian();
    K.diagonal().array() += config.lambda;
    A.bottomLeftCorner(n, n) = c * K;
    A.bottomRightCorner(n, n).diagonal().setConstant(c * (Scalar(1) - config.beta));
    return A;
  }

  /// [[0, 0], [0, 2(1-beta)/(eta(1+beta)) Sigma]]
  Matrix<Scalar> diffusion() const {
    const Index n = d();
    Matrix<Scalar> D = Matrix<Scalar>::Zero(2 * n, 2 * n);
    D.bottomRightCorner(n, n) = Scalar(2) * config.gamma() * noise_covariance();
    return D;
  }
};

/// Builds the OU model. `basis` must be a full orthonormal eigenbasis of H.
/// The noise covariance must commute with H and be diagonal in `basis`.
template <typename Scalar>
OUModel<Scalar> build_ou(const QuadraticModel<Scalar>& model, const NoiseModel<Scalar>& noise,
                         const OptimizerConfig<Scalar>& config, const EigenBasis<Scalar>& basis) {
  config.validate();
  const Index d = model.d();
  if (basis.d() != d) throw DimensionError("build_ou: basis has wrong dimension");
  if (basis.k() != d) throw ArgumentError("build_ou: a full eigenbasis (k = d) is required");
  const Matrix<Scalar>& Qb = basis.vectors;
  const Scalar hnorm = std::max(model.H.norm(), std::numeric_limits<Scalar>::min());
  if ((Qb.transpose() * Qb - Matrix<Scalar>::Identity(d, d)).norm() > Scalar(1e-8))
    throw ArgumentError("build_ou: basis is not orthonormal");
  if ((model.H * Qb - Qb * basis.values.asDiagonal()).norm() > Scalar(1e-8) * hnorm)
    throw ArgumentError("build_ou: basis does not diagonalize H");

  const Matrix<Scalar> sigma = noise.covariance(model);
  const Scalar snorm = sigma.norm();
  const Scalar comm = (model.H * sigma - sigma * model.H).norm();
  if (comm > Scalar(1e-10) * hnorm * std::max(snorm, std::numeric_limits<Scalar>::min()))
    throw ModelError(
        "noise covariance does not commute with H (|H Sigma - Sigma H| = " + std::to_string(double(comm)) +
        "); the phase-space model needs H and Sigma sharing a common eigenbasis");
  const Matrix<Scalar> rotated = Qb.transpose() * sigma * Qb;
  const Matrix<Scalar> off = rotated - Matrix<Scalar>(rotated.diagonal().asDiagonal());
  if (off.norm() > Scalar(1e-8) * std::max(snorm, std::numeric_limits<Scalar>::min()))
    throw ModelError("noise covariance is not diagonal in the supplied eigenbasis");

  OUModel<Scalar> ou;
  ou.config = config;
  ou.mu = model.mu;
  ou.basis = basis;
  for (Index l = 0; l < d; ++l) {
    const Scalar rho = std::max(basis.values(l), Scalar(0));
    ou.modes.push_back(mode_block(rho, config, std::max(rotated(l, l), Scalar(0))));
  }
  return ou;
}

template <typename Scalar>
Vector<Scalar> mean(const OUModel<Scalar>& ou, const VectorArg<Scalar>& theta0, const VectorArg<Scalar>& v0, Scalar t) {
  if (!(t >= 0)) throw ArgumentError("mean: t must be nonnegative");
  const Index n = ou.d();
  if (theta0.size() != n || v0.size() != n) throw DimensionError("mean: state has wrong dimension");
  Vector<Scalar> x(2 * n);
  if (t == Scalar(0)) {
    x << theta0, v0;
    return x;
  }
  const Matrix<Scalar>& Qb = ou.basis.vectors;
  const Vector<Scalar> a0 = Qb.transpose() * (theta0 - ou.mu);
  const Vector<Scalar> b0 = Qb.transpose() * v0;
  Vector<Scalar> a(n), b(n);
  for (Index l = 0; l < n; ++l) {
    const Vector2<Scalar> ab = mode_mean(ou.modes[static_cast<std::size_t>(l)], a0(l), b0(l), t);
    a(l) = ab(0);
    b(l) = ab(1);
  }
  x.head(n) = ou.mu + Qb * a;
  x.tail(n) = Qb * b;
  return x;
}

template <typename Scalar>
using BlockList = std::vector<Matrix2<Scalar>, Eigen::aligned_allocator<Matrix2<Scalar>>>;

template <typename Scalar>
BlockList<Scalar> variance(const OUModel<Scalar>& ou, Scalar t) {
  if (!(t >= 0)) throw ArgumentError("variance: t must be nonnegative");
  BlockList<Scalar> out;
  for (const auto& m : ou.modes) out.push_back(mode_variance(m, ou.config, t));
  return out;
}

template <typename Scalar>
BlockList<Scalar> cross_covariance(const OUModel<Scalar>& ou, Scalar t, Scalar s) {
  if (t > s) throw ArgumentError("cross_covariance: requires t <= s");
  if (!(t >= 0)) throw ArgumentError("cross_covariance: t must be nonnegative");
  BlockList<Scalar> out;
  for (const auto& m : ou.modes) out.push_back(mode_cross_covariance(m, ou.config, t, s));
  return out;
}

template <typename Scalar>
BlockList<Scalar> stationary_covariance(const OUModel<Scalar>& ou) {
  BlockList<Scalar> out;
  for (const auto& m : ou.modes) out.push_back(stationary_block(m, ou.config));
  return out;
}

/// Expands per-mode 2x2 blocks into the 2d x 2d phase-space matrix
/// [[Q P_aa Q^T, Q P_ab Q^T], [Q P_ba Q^T, Q P_bb Q^T]].
template <typename Scalar>
Matrix<Scalar> assemble_phase(const OUModel<Scalar>& ou, const BlockList<Scalar>& blocks) {
  const Index n = ou.d();
  if (static_cast<Index>(blocks.size()) != n) throw DimensionError("assemble_phase: need one block per mode");
  const Matrix<Scalar>& Qb = ou.basis.vectors;
  Matrix<Scalar> out(2 * n, 2 * n);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) {
      Vector<Scalar> diag(n);
      for (Index l = 0; l < n; ++l) diag(l) = blocks[static_cast<std::size_t>(l)](i, j);
      out.block(i * n, j * n, n, n) = Qb * diag.asDiagonal() * Qb.transpose();
    }
  return out;
}

/// n independent draws of [theta_t; v_t] (columns) from the exact Gaussian
/// transition law started at (theta0, v0).
template <typename Scalar>
Matrix<Scalar> sample_exact(const OUModel<Scalar>& ou, const VectorArg<Scalar>& theta0, const VectorArg<Scalar>& v0,
                            Scalar t, Index n, Seed seed) {
  if (n < 0) throw ArgumentError("sample_exact: n must be nonnegative");
  const Index d = ou.d();
  const Vector<Scalar> m = mean(ou, theta0, v0, t);
  Matrix<Scalar> out = m.replicate(1, n);
  if (t == Scalar(0) || n == 0) return out;

  // Per-mode lower Cholesky factors of the 2x2 covariance.
  Matrix<Scalar> L(3, d);
  for (Index l = 0; l < d; ++l) {
    const Matrix2<Scalar> V = mode_variance(ou.modes[static_cast<std::size_t>(l)], ou.config, t);
    const Scalar l11 = std::sqrt(std::max(V(0, 0), Scalar(0)));
    const Scalar l21 = l11 > 0 ? V(1, 0) / l11 : Scalar(0);
    const Scalar l22 = std::sqrt(std::max(V(1, 1) - l21 * l21, Scalar(0)));
    L.col(l) << l11, l21, l22;
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<Scalar> normal(Scalar(0), Scalar(1));
  const Matrix<Scalar>& Qb = ou.basis.vectors;
  Vector<Scalar> a(d), b(d);
  for (Index j = 0; j < n; ++j) {
    for (Index l = 0; l < d; ++l) {
      const Scalar z1 = normal(rng);
      const Scalar z2 = normal(rng);
      a(l) = L(0, l) * z1;
      b(l) = L(1, l) * z1 + L(2, l) * z2;
    }
    out.col(j).head(d) += Qb * a;
    out.col(j).tail(d) += Qb * b;
  }
  return out;
}

using ModeBlockd = ModeBlock<double>;
using OUModeld = OUModel<double>;

}  // namespace sgdlab
