#pragma once

// Hessian-vector products, top-k eigenpairs by subspace iteration, and
// projections of phase-space states onto Hessian eigenplanes.

#include <algorithm>
#include <numeric>
#include <random>

#include "sgdlab/errors.hpp"
#include "sgdlab/problem.hpp"
#include "sgdlab/types.hpp"

namespace sgdlab {

/// Columns q_1..q_k with eigenvalues sorted non-increasing.
template <typename Scalar>
struct EigenBasis {
  Matrix<Scalar> vectors;
  Vector<Scalar> values;
  Vector<Scalar> residuals;  // |H q_i - rho_i q_i|
  Index iterations = 0;
  Seed seed = 0;
  bool converged = false;

  Index k() const { return vectors.cols(); }
  Index d() const { return vectors.rows(); }
};

/// H V, using X^T (X V) / N when the model keeps its design matrix and that
/// route is cheaper than the dense product.
template <typename Scalar, typename Derived>
Eigen::Matrix<Scalar, Derived::RowsAtCompileTime, Derived::ColsAtCompileTime> hvp(
    const QuadraticModel<Scalar>& model, const Eigen::MatrixBase<Derived>& v) {
  if (v.rows() != model.d()) throw DimensionError("hvp: vector has wrong dimension");
  if (model.design && 2 * model.design->rows() < model.d()) {
    const Matrix<Scalar>& X = *model.design;
    return (X.transpose() * (X * v)) / Scalar(X.rows());
  }
  return model.H * v;
}

namespace detail {

template <typename Scalar>
Matrix<Scalar> orthonormalize(const Matrix<Scalar>& Z) {
  Eigen::HouseholderQR<Matrix<Scalar>> qr(Z);
  return qr.householderQ() * Matrix<Scalar>::Identity(Z.rows(), Z.cols());
}

// Rayleigh-Ritz on span(Q) given HQ; reorders to non-increasing Ritz values.
template <typename Scalar>
void rayleigh_ritz(Matrix<Scalar>& Q, Matrix<Scalar>& HQ, Vector<Scalar>& ritz) {
  Matrix<Scalar> T = Q.transpose() * HQ;
  T = Scalar(0.5) * (T + T.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix<Scalar>> eig(T);
  const Matrix<Scalar> V = eig.eigenvectors().rowwise().reverse();
  ritz = eig.eigenvalues().reverse();
  Q = Q * V;
  HQ = HQ * V;
}

}  // namespace detail

struct SubspaceOptions {
  Index max_iters = 10;
  double tol = 1e-10;
  Seed seed = 0;
  // Extra columns carried beyond k; negative selects max(15, k/2).
  Index oversample = -1;
};

/// Block power iteration with QR re-orthonormalization and a Rayleigh-Ritz
/// step after every sweep. `apply` maps a d x p block V to H V.
/// Stops once every requested pair satisfies |H q - rho q| <= tol * rho_1, or
/// after max_iters sweeps; `converged` reports which happened.
template <typename Scalar, typename Apply>
EigenBasis<Scalar> subspace_iteration(Apply&& apply, Index d, Index k, const SubspaceOptions& opts = {}) {
  if (k < 1 || k > d) throw ArgumentError("subspace_iteration: need 1 <= k <= d");
  if (!(opts.tol > 0)) throw ArgumentError("subspace_iteration: tol must be positive");
  const Index extra = opts.oversample < 0 ? std::max<Index>(15, k / 2) : opts.oversample;
  const Index p = std::min(d, k + extra);

  std::mt19937_64 rng(opts.seed);
  std::normal_distribution<Scalar> normal(Scalar(0), Scalar(1));
  Matrix<Scalar> G(d, p);
  for (Index j = 0; j < p; ++j)
    for (Index i = 0; i < d; ++i) G(i, j) = normal(rng);

  Matrix<Scalar> Q = detail::orthonormalize(G);
  Matrix<Scalar> HQ = apply(Q);
  Vector<Scalar> ritz;
  detail::rayleigh_ritz(Q, HQ, ritz);

  auto residuals = [&]() {
    Vector<Scalar> r(k);
    for (Index i = 0; i < k; ++i) r(i) = (HQ.col(i) - ritz(i) * Q.col(i)).norm();
    return r;
  };

  EigenBasis<Scalar> out;
  out.seed = opts.seed;
  Vector<Scalar> res = residuals();
  Index it = 0;
  auto done = [&]() {
    const Scalar scale = std::max(std::abs(ritz(0)), std::numeric_limits<Scalar>::min());
    return res.maxCoeff() <= Scalar(opts.tol) * scale;
  };
  while (!done() && it < opts.max_iters) {
    Q = detail::orthonormalize<Scalar>(HQ);
    HQ = apply(Q);
    detail::rayleigh_ritz(Q, HQ, ritz);
    res = residuals();
    ++it;
  }
  out.converged = done();
  out.iterations = it;
  out.vectors = Q.leftCols(k);
  out.values = ritz.head(k);
  out.residuals = res;
  return out;
}

template <typename Scalar>
EigenBasis<Scalar> subspace_iteration(const QuadraticModel<Scalar>& model, Index k,
                                      const SubspaceOptions& opts = {}) {
  auto apply = [&model](const Matrix<Scalar>& V) { return hvp<Scalar>(model, V); };
  return subspace_iteration<Scalar>(apply, model.d(), k, opts);
}

/// Full eigenbasis from a dense symmetric eigensolver, sorted non-increasing.
template <typename Scalar>
EigenBasis<Scalar> dense_eigenbasis(const Matrix<Scalar>& H) {
  Eigen::SelfAdjointEigenSolver<Matrix<Scalar>> eig(H);
  if (eig.info() != Eigen::Success) throw Error("dense_eigenbasis: eigensolver failed");
  EigenBasis<Scalar> out;
  out.vectors = eig.eigenvectors().rowwise().reverse();
  out.values = eig.eigenvalues().reverse();
  out.residuals.resize(out.values.size());
  for (Index i = 0; i < out.values.size(); ++i)
    out.residuals(i) = (H * out.vectors.col(i) - out.values(i) * out.vectors.col(i)).norm();
  out.converged = true;
  return out;
}

template <typename Scalar>
EigenBasis<Scalar> dense_eigenbasis(const QuadraticModel<Scalar>& model) {
  return dense_eigenbasis<Scalar>(model.H);
}

template <typename Scalar>
struct PhaseProjection {
  Scalar a;  // q_i^T (theta - mu)
  Scalar b;  // q_i^T v
};

template <typename Scalar>
PhaseProjection<Scalar> project_phase(const EigenBasis<Scalar>& basis, const VectorArg<Scalar>& theta,
                                      const VectorArg<Scalar>& v, const VectorArg<Scalar>& mu, Index index) {
  if (index < 0 || index >= basis.k()) throw ArgumentError("project_phase: index out of range");
  if (theta.size() != basis.d() || v.size() != basis.d() || mu.size() != basis.d())
    throw DimensionError("project_phase: state has wrong dimension");
  const auto q = basis.vectors.col(index);
  return {q.dot(theta - mu), q.dot(v)};
}

/// All k projections at once: (a, b) as two k-vectors.
template <typename Scalar>
std::pair<Vector<Scalar>, Vector<Scalar>> project_phase_all(const EigenBasis<Scalar>& basis,
                                                           const VectorArg<Scalar>& theta,
                                                           const VectorArg<Scalar>& v,
                                                           const VectorArg<Scalar>& mu) {
  if (theta.size() != basis.d() || v.size() != basis.d() || mu.size() != basis.d())
    throw DimensionError("project_phase_all: state has wrong dimension");
  return {basis.vectors.transpose() * (theta - mu), basis.vectors.transpose() * v};
}

using EigenBasisd = EigenBasis<double>;

}  // namespace sgdlab
