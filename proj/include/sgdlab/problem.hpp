#pragma once

// Least-squares problems: synthetic data under the linear generative model,
// the quadratic loss it induces, and the gradient-noise covariance.

#include <cmath>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "sgdlab/errors.hpp"
#include "sgdlab/types.hpp"

namespace sgdlab {

template <typename Scalar>
struct RegressionDataset {
  Matrix<Scalar> X;  // N x d inputs
  Vector<Scalar> Y;  // N labels
  std::optional<Vector<Scalar>> theta_bar;
  std::optional<Scalar> sigma_gen;
  std::optional<Seed> seed;

  Index n() const { return X.rows(); }
  Index d() const { return X.cols(); }
};

/// Quadratic loss L(theta) = 1/2 theta^T H theta - b^T theta + loss_offset.
/// When built from a dataset, `design` keeps the inputs so Hessian-vector
/// products can skip the dense H, and loss_offset = |Y|^2 / (2N).
template <typename Scalar>
struct QuadraticModel {
  Matrix<Scalar> H;
  Vector<Scalar> b;
  Vector<Scalar> mu;
  Scalar lambda = 0;
  Scalar loss_offset = 0;
  std::shared_ptr<const Matrix<Scalar>> design;

  Index d() const { return H.rows(); }
};

enum class CovarianceMode { ScaledHessian, Empirical };

template <typename Scalar>
struct NoiseModel {
  Scalar sigma_sq = 0;
  CovarianceMode mode = CovarianceMode::ScaledHessian;
  Matrix<Scalar> empirical;  // only meaningful in Empirical mode

  Matrix<Scalar> covariance(const QuadraticModel<Scalar>& model) const {
    if (mode == CovarianceMode::ScaledHessian) return sigma_sq * model.H;
    return empirical;
  }
};

template <typename Scalar>
NoiseModel<Scalar> scaled_hessian_noise(Scalar sigma_sq) {
  if (!(sigma_sq >= 0)) throw ArgumentError("sigma_sq must be nonnegative");
  return NoiseModel<Scalar>{sigma_sq, CovarianceMode::ScaledHessian, {}};
}

namespace detail {

template <typename Scalar>
void require_finite(const Matrix<Scalar>& m, const char* what) {
  if (!m.allFinite()) throw ArgumentError(std::string(what) + " has non-finite entries");
}

}  // namespace detail

/// Draws X with i.i.d. standard normal entries (column j scaled by
/// `column_scale[j]` when given) and Y = X theta_bar + sigma_gen * eps.
/// The result depends only on the arguments.
template <typename Scalar>
RegressionDataset<Scalar> generate_regression(Index n, Index d, const VectorArg<Scalar>& theta_bar,
                                              Scalar sigma_gen, Seed seed,
                                              const VectorArg<Scalar>& column_scale = {}) {
  if (n < 1 || d < 1) throw DimensionError("generate_regression: need n >= 1 and d >= 1");
  if (theta_bar.size() != d) throw DimensionError("generate_regression: theta_bar must have d entries");
  if (column_scale.size() != 0 && column_scale.size() != d)
    throw DimensionError("generate_regression: column_scale must have d entries");
  if (!(sigma_gen >= 0)) throw ArgumentError("generate_regression: sigma_gen must be nonnegative");

  std::mt19937_64 rng(seed);
  std::normal_distribution<Scalar> normal(Scalar(0), Scalar(1));

  RegressionDataset<Scalar> data;
  data.X.resize(n, d);
  // Row-major fill order so that a prefix of rows is stable in n.
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < d; ++j) data.X(i, j) = normal(rng);
  if (column_scale.size() == d) data.X = data.X * column_scale.asDiagonal();

  Vector<Scalar> eps(n);
  for (Index i = 0; i < n; ++i) eps(i) = normal(rng);
  data.Y = data.X * theta_bar + sigma_gen * eps;
  data.theta_bar = theta_bar;
  data.sigma_gen = sigma_gen;
  data.seed = seed;
  return data;
}

namespace detail {

// Solves (H + lambda I) mu = b, raising SingularityError with the null
// direction when the shifted Hessian is numerically singular.
template <typename Scalar>
Vector<Scalar> solve_ridge(const Matrix<Scalar>& H, const VectorArg<Scalar>& b, Scalar lambda) {
  const Index d = H.rows();
  Matrix<Scalar> shifted = H;
  shifted.diagonal().array() += lambda;
  const Scalar cutoff = Scalar(16 * d) * std::numeric_limits<Scalar>::epsilon();
  Eigen::LLT<Matrix<Scalar>> llt(shifted);
  if (llt.info() != Eigen::Success || !(llt.rcond() > cutoff)) {
    // Only the failure path pays for an eigendecomposition, to name the
    // offending direction.
    Eigen::SelfAdjointEigenSolver<Matrix<Scalar>> eig(shifted);
    std::vector<double> dir(static_cast<std::size_t>(d));
    for (Index i = 0; i < d; ++i) dir[static_cast<std::size_t>(i)] = static_cast<double>(eig.eigenvectors()(i, 0));
    throw SingularityError("H + lambda*I is singular (smallest eigenvalue " +
                               std::to_string(static_cast<double>(eig.eigenvalues()(0))) + ")",
                           std::move(dir));
  }
  Vector<Scalar> mu = llt.solve(b);
  // One step of iterative refinement keeps the residual at round-off level
  // for moderately conditioned problems.
  Vector<Scalar> r = b - shifted * mu;
  mu += llt.solve(r);
  return mu;
}

}  // namespace detail

/// H = X^T X / N, b = X^T Y / N, mu = (H + lambda I)^{-1} b.
template <typename Scalar>
QuadraticModel<Scalar> build_quadratic(const RegressionDataset<Scalar>& data, Scalar lambda) {
  if (!(lambda >= 0)) throw ArgumentError("build_quadratic: lambda must be nonnegative");
  if (data.X.rows() != data.Y.size()) throw DimensionError("build_quadratic: X and Y disagree on N");
  detail::require_finite<Scalar>(data.X, "X");
  detail::require_finite<Scalar>(data.Y, "Y");
  const Scalar inv_n = Scalar(1) / Scalar(data.n());

  QuadraticModel<Scalar> model;
  model.H = Matrix<Scalar>::Zero(data.d(), data.d());
  model.H.template selfadjointView<Eigen::Lower>().rankUpdate(data.X.transpose(), inv_n);
  model.H = model.H.template selfadjointView<Eigen::Lower>();
  model.b = inv_n * (data.X.transpose() * data.Y);
  model.lambda = lambda;
  model.loss_offset = Scalar(0.5) * inv_n * data.Y.squaredNorm();
  model.mu = detail::solve_ridge(model.H, model.b, lambda);
  model.design = std::make_shared<const Matrix<Scalar>>(data.X);
  return model;
}

/// Builds a model directly from a Hessian and linear term.
template <typename Scalar>
QuadraticModel<Scalar> make_quadratic(const Matrix<Scalar>& H, const VectorArg<Scalar>& b, Scalar lambda) {
  if (H.rows() != H.cols() || H.rows() != b.size()) throw DimensionError("make_quadratic: shape mismatch");
  if (!(lambda >= 0)) throw ArgumentError("make_quadratic: lambda must be nonnegative");
  QuadraticModel<Scalar> model;
  model.H = Scalar(0.5) * (H + H.transpose());
  model.b = b;
  model.lambda = lambda;
  model.mu = detail::solve_ridge(model.H, b, lambda);
  return model;
}

/// Quadratic with prescribed spectrum: H = R diag(spectrum) R^T for a seeded
/// random rotation R, and b chosen so that the ridge solution equals `mu`.
template <typename Scalar>
QuadraticModel<Scalar> make_spectral_quadratic(const VectorArg<Scalar>& spectrum, const VectorArg<Scalar>& mu,
                                               Scalar lambda, Seed seed) {
  const Index d = spectrum.size();
  if (d < 1 || mu.size() != d) throw DimensionError("make_spectral_quadratic: shape mismatch");
  if ((spectrum.array() < 0).any()) throw ArgumentError("make_spectral_quadratic: spectrum must be nonnegative");
  std::mt19937_64 rng(seed);
  std::normal_distribution<Scalar> normal(Scalar(0), Scalar(1));
  Matrix<Scalar> G(d, d);
  for (Index i = 0; i < d; ++i)
    for (Index j = 0; j < d; ++j) G(i, j) = normal(rng);
  Eigen::HouseholderQR<Matrix<Scalar>> qr(G);
  Matrix<Scalar> R = qr.householderQ() * Matrix<Scalar>::Identity(d, d);
  Matrix<Scalar> H = R * spectrum.asDiagonal() * R.transpose();
  H = Scalar(0.5) * (H + H.transpose());
  Vector<Scalar> b = H * mu + lambda * mu;
  QuadraticModel<Scalar> model;
  model.H = H;
  model.b = b;
  model.lambda = lambda;
  model.mu = mu;
  return model;
}

template <typename Scalar>
Scalar loss(const QuadraticModel<Scalar>& model, const VectorArg<Scalar>& theta) {
  return Scalar(0.5) * theta.dot(model.H * theta) - model.b.dot(theta) + model.loss_offset;
}

/// g(theta) = H theta - b. Weight decay is applied by the optimizer.
template <typename Scalar>
Vector<Scalar> full_gradient(const QuadraticModel<Scalar>& model, const VectorArg<Scalar>& theta) {
  if (theta.size() != model.d()) throw DimensionError("full_gradient: theta has wrong dimension");
  return model.H * theta - model.b;
}

/// Mean of per-sample gradients (x_i^T theta - y_i) x_i over `batch`.
template <typename Scalar>
Vector<Scalar> batch_gradient(const RegressionDataset<Scalar>& data, const VectorArg<Scalar>& theta,
                              std::span<const Index> batch) {
  if (batch.empty()) throw ArgumentError("batch_gradient: empty batch");
  if (theta.size() != data.d()) throw DimensionError("batch_gradient: theta has wrong dimension");
  Vector<Scalar> g = Vector<Scalar>::Zero(data.d());
  for (Index i : batch) {
    if (i < 0 || i >= data.n()) throw ArgumentError("batch_gradient: index out of range");
    const Scalar r = data.X.row(i).dot(theta) - data.Y(i);
    g.noalias() += r * data.X.row(i).transpose();
  }
  return g / Scalar(batch.size());
}

/// Biased (1/N) estimator (1/N) sum_i g_i g_i^T - g g^T.
template <typename Scalar>
Matrix<Scalar> noise_covariance_empirical(const RegressionDataset<Scalar>& data, const VectorArg<Scalar>& theta) {
  if (theta.size() != data.d()) throw DimensionError("noise_covariance_empirical: theta has wrong dimension");
  const Scalar inv_n = Scalar(1) / Scalar(data.n());
  const Vector<Scalar> r = data.X * theta - data.Y;
  const Matrix<Scalar> G = r.asDiagonal() * data.X;  // row i is g_i^T
  const Vector<Scalar> mean = inv_n * G.colwise().sum().transpose();
  Matrix<Scalar> sigma = Matrix<Scalar>::Zero(data.d(), data.d());
  sigma.template selfadjointView<Eigen::Lower>().rankUpdate(G.transpose(), inv_n);
  sigma.template selfadjointView<Eigen::Lower>().rankUpdate(mean, Scalar(-1));
  return sigma.template selfadjointView<Eigen::Lower>();
}

template <typename Scalar>
NoiseModel<Scalar> empirical_noise(const RegressionDataset<Scalar>& data, const VectorArg<Scalar>& theta) {
  NoiseModel<Scalar> noise;
  noise.mode = CovarianceMode::Empirical;
  noise.empirical = noise_covariance_empirical(data, theta);
  noise.sigma_sq = 0;
  return noise;
}

using RegressionDatasetd = RegressionDataset<double>;
using QuadraticModeld = QuadraticModel<double>;
using NoiseModeld = NoiseModel<double>;

}  // namespace sgdlab
