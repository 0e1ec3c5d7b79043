#include <gtest/gtest.h>

#include <random>

#include "oracles/oracles.hpp"
#include "sgdlab/spectral.hpp"

using namespace sgdlab;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

QuadraticModeld diagonal_model(const VectorXd& diag) {
  return make_quadratic<double>(MatrixXd(diag.asDiagonal()), VectorXd::Ones(diag.size()), 0.1);
}

}  // namespace

TEST(Hvp, TrivialCases) {
  VectorXd diag(2);
  diag << 3, 1;
  const auto m = diagonal_model(diag);
  EXPECT_EQ(hvp(m, VectorXd::Zero(2)), VectorXd::Zero(2));
  const VectorXd out = hvp(m, VectorXd::Ones(2));
  EXPECT_DOUBLE_EQ(out(0), 3.0);
  EXPECT_DOUBLE_EQ(out(1), 1.0);
}

TEST(Hvp, MatchesDenseProductForDatasetModels) {
  const auto data = generate_regression<double>(200, 30, VectorXd::Ones(30), 0.1, 3);
  const auto m = build_quadratic(data, 0.0);
  std::mt19937_64 rng(5);
  std::normal_distribution<double> normal;
  VectorXd v(30);
  for (auto& x : v) x = normal(rng);
  const VectorXd dense = m.H * v;
  EXPECT_LT((hvp(m, v) - dense).norm() / dense.norm(), 1e-12);

  // Wide data takes the factored route.
  const auto wide = generate_regression<double>(10, 60, VectorXd::Ones(60), 0.1, 4);
  const auto mw = build_quadratic(wide, 1.0);
  VectorXd w(60);
  for (auto& x : w) x = normal(rng);
  const VectorXd ref = wide.X.transpose() * (wide.X * w) / 10.0;
  EXPECT_LT((hvp(mw, w) - ref).norm() / ref.norm(), 1e-12);
  EXPECT_LT((hvp(mw, w) - mw.H * w).norm() / ref.norm(), 1e-12);
}

TEST(SubspaceIteration, DiagonalTopTwo) {
  VectorXd diag(3);
  diag << 4, 2, 1;
  const auto basis = subspace_iteration(diagonal_model(diag), 2);
  ASSERT_EQ(basis.k(), 2);
  EXPECT_NEAR(basis.values(0), 4.0, 1e-12);
  EXPECT_NEAR(basis.values(1), 2.0, 1e-12);
  EXPECT_LT(basis.residuals.maxCoeff(), 1e-10);
}

TEST(SubspaceIteration, FullBasisMatchesDenseSolver) {
  const auto data = generate_regression<double>(100, 30, VectorXd::Ones(30), 0.1, 8);
  const auto m = build_quadratic(data, 0.0);
  const auto basis = subspace_iteration(m, 30);
  const auto dense = dense_eigenbasis(m);
  for (Index i = 0; i < 30; ++i) EXPECT_NEAR(basis.values(i) / dense.values(i), 1.0, 1e-8) << i;
}

TEST(SubspaceIteration, ThirtyPairsRequested) {
  const auto data = generate_regression<double>(200, 64, VectorXd::Ones(64), 0.1, 9);
  const auto m = build_quadratic(data, 0.0);
  const auto basis = subspace_iteration(m, 30);
  EXPECT_EQ(basis.k(), 30);
  EXPECT_EQ(basis.values.size(), 30);
  EXPECT_EQ(basis.residuals.size(), 30);
}

TEST(SubspaceIteration, RejectsBadArguments) {
  VectorXd diag(3);
  diag << 4, 2, 1;
  EXPECT_THROW(subspace_iteration(diagonal_model(diag), 4), ArgumentError);
  EXPECT_THROW(subspace_iteration(diagonal_model(diag), 0), ArgumentError);
  SubspaceOptions o;
  o.tol = 0;
  EXPECT_THROW(subspace_iteration(diagonal_model(diag), 2, o), ArgumentError);
}

TEST(SubspaceIteration, NonConvergenceIsReportedNotThrown) {
  // Clustered spectrum and no oversampling: one sweep cannot converge.
  VectorXd spec = VectorXd::LinSpaced(40, 1.0, 1.05).reverse();
  const auto m = make_spectral_quadratic<double>(spec, VectorXd::Zero(40), 0.0, 2);
  SubspaceOptions o;
  o.max_iters = 1;
  o.oversample = 0;
  o.tol = 1e-14;
  const auto basis = subspace_iteration(m, 5, o);
  EXPECT_FALSE(basis.converged);
  EXPECT_EQ(basis.iterations, 1);
  EXPECT_GT(basis.residuals.maxCoeff(), 0.0);
}

TEST(SubspaceIteration, OrthonormalSortedAndMonotone) {
  std::mt19937_64 rng(3);
  VectorXd spec(25);
  for (Index i = 0; i < 25; ++i) spec(i) = 10.0 * std::pow(0.8, double(i));
  const auto m = make_spectral_quadratic<double>(spec, VectorXd::Zero(25), 0.0, 6);
  std::vector<VectorXd> history;
  for (Index iters = 0; iters <= 6; ++iters) {
    SubspaceOptions o;
    o.max_iters = iters;
    o.tol = 1e-300;
    o.seed = 42;
    o.oversample = 0;
    const auto b = subspace_iteration(m, 5, o);
    EXPECT_LT((b.vectors.transpose() * b.vectors - MatrixXd::Identity(5, 5)).norm(), 1e-10);
    for (Index i = 0; i + 1 < 5; ++i) EXPECT_GE(b.values(i), b.values(i + 1));
    EXPECT_GE(b.values.minCoeff(), -1e-10 * b.values(0));
    history.push_back(b.values);
  }
  for (std::size_t s = 1; s < history.size(); ++s)
    for (Index i = 0; i < 5; ++i) EXPECT_GE(history[s](i), history[s - 1](i) - 1e-12) << "sweep " << s << " pos " << i;
}

TEST(SubspaceIteration, DegenerateEigenspaceSpanned) {
  VectorXd spec(6);
  spec << 5, 5, 5, 1, 0.5, 0.1;
  const auto m = make_spectral_quadratic<double>(spec, VectorXd::Zero(6), 0.0, 12);
  const auto basis = subspace_iteration(m, 3);
  const auto dense = dense_eigenbasis(m);
  EXPECT_LT(oracle::max_principal_angle(basis.vectors, dense.vectors.leftCols(3)), 1e-6);
}

TEST(ProjectPhase, TrivialProjections) {
  VectorXd diag(3);
  diag << 4, 2, 1;
  const auto basis = dense_eigenbasis(diagonal_model(diag));
  const VectorXd mu = VectorXd::LinSpaced(3, 1, 3);
  const auto z = project_phase(basis, mu, VectorXd::Zero(3), mu, 0);
  EXPECT_EQ(z.a, 0.0);
  EXPECT_EQ(z.b, 0.0);
  const VectorXd q1 = basis.vectors.col(0);
  const auto p = project_phase<double>(basis, mu + 2.0 * q1, -q1, mu, 0);
  EXPECT_NEAR(p.a, 2.0, 1e-15);
  EXPECT_NEAR(p.b, -1.0, 1e-15);
  EXPECT_THROW(project_phase(basis, mu, mu, mu, 3), ArgumentError);
}

TEST(ProjectPhase, ReconstructionErrorBoundedByDiscardedMass) {
  const auto data = generate_regression<double>(80, 12, VectorXd::Ones(12), 0.1, 14);
  const auto m = build_quadratic(data, 0.0);
  const auto full = dense_eigenbasis(m);
  EigenBasisd top;
  top.vectors = full.vectors.leftCols(5);
  top.values = full.values.head(5);
  std::mt19937_64 rng(2);
  std::normal_distribution<double> normal;
  VectorXd theta(12), v(12);
  for (auto& x : theta) x = normal(rng);
  for (auto& x : v) x = normal(rng);
  const auto [a, b] = project_phase_all(top, theta, v, m.mu);
  const VectorXd recon = top.vectors * a;
  const VectorXd off = theta - m.mu;
  const VectorXd discarded = full.vectors.rightCols(7).transpose() * off;
  EXPECT_NEAR((off - recon).norm(), discarded.norm(), 1e-10);
  // Isometry on the spanned subspace.
  const auto [af, bf] = project_phase_all(full, theta, v, m.mu);
  EXPECT_NEAR(af.squaredNorm(), off.squaredNorm(), 1e-10 * off.squaredNorm());
  EXPECT_NEAR(bf.squaredNorm(), v.squaredNorm(), 1e-10 * v.squaredNorm());
}
