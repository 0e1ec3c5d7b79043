#include <gtest/gtest.h>

#include <numeric>
#include <set>

#include "sgdlab/simulate.hpp"

using namespace sgdlab;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

OptimizerConfigd make_config(double eta, double beta, double lambda, Index S) {
  OptimizerConfigd c;
  c.eta = eta;
  c.beta = beta;
  c.lambda = lambda;
  c.batch_size = S;
  return c;
}

struct Problem {
  RegressionDatasetd data;
  QuadraticModeld model;
};

Problem random_problem(Index n, Index d, double sigma_gen, Seed seed, double lambda = 0.0) {
  Problem p;
  p.data = generate_regression<double>(n, d, VectorXd::LinSpaced(d, -1, 1), sigma_gen, seed);
  p.model = build_quadratic(p.data, lambda);
  return p;
}

}  // namespace

TEST(OptimizerConfig, DerivedConstants) {
  const auto c = make_config(0.01, 0.9, 0.0, 512);
  EXPECT_NEAR(c.kappa(), 97.28, 1e-10);
  EXPECT_NEAR(c.gamma(), 0.1 / (0.01 * 1.9), 1e-12);
  EXPECT_NEAR(c.mass(), 0.5 * 0.01 * 1.9, 1e-15);
  auto d = c;
  d.beta = 0.5;  // derived values follow the fields
  EXPECT_NEAR(d.kappa(), 512 * 0.75, 1e-10);
}

TEST(OptimizerConfig, Validation) {
  EXPECT_THROW(make_config(0.0, 0.5, 0.0, 1).validate(), ArgumentError);
  EXPECT_THROW(make_config(0.1, 1.0, 0.0, 1).validate(), ArgumentError);
  EXPECT_THROW(make_config(0.1, -0.1, 0.0, 1).validate(), ArgumentError);
  EXPECT_THROW(make_config(0.1, 0.5, -1.0, 1).validate(), ArgumentError);
  EXPECT_THROW(make_config(0.1, 0.5, 0.0, 0).validate(), ArgumentError);
  EXPECT_NO_THROW(make_config(0.1, 0.0, 0.0, 1).validate());
}

TEST(SgdStep, PlainGradientDescentWithoutMomentum) {
  const auto p = random_problem(30, 4, 0.3, 1);
  const auto cfg = make_config(0.05, 0.0, 0.0, 30);
  std::vector<Index> all(30);
  std::iota(all.begin(), all.end(), Index(0));
  PhaseStated s{VectorXd::Ones(4), VectorXd::Constant(4, 0.7), 3};
  const auto next = sgd_step(s, cfg, p.data, std::span<const Index>(all));
  const VectorXd expect = s.theta - 0.05 * full_gradient(p.model, s.theta);
  EXPECT_LT((next.theta - expect).norm(), 1e-14);
  EXPECT_EQ(next.step, 4);
}

TEST(SgdStep, FirstStepFromRest) {
  const auto p = random_problem(30, 4, 0.3, 2);
  const auto cfg = make_config(0.02, 0.9, 0.1, 30);
  std::vector<Index> all(30);
  std::iota(all.begin(), all.end(), Index(0));
  const VectorXd theta0 = VectorXd::LinSpaced(4, 0, 1);
  const auto next = sgd_step(PhaseStated::at_rest(theta0), cfg, p.data, std::span<const Index>(all));
  const VectorXd move = -0.02 * (full_gradient(p.model, theta0) + 0.1 * theta0);
  EXPECT_LT((next.theta - theta0 - move).norm(), 1e-15);
}

TEST(Run, FixedPointStaysPut) {
  RegressionDatasetd data;
  data.X = MatrixXd::Identity(2, 2);
  data.Y = VectorXd(2);
  data.Y << 2, 4;
  const auto model = build_quadratic(data, 0.0);
  for (auto mode : {GradientMode::FullBatch, GradientMode::Minibatch}) {
    SimulationSetupd setup{&data, &model, scaled_hessian_noise(0.0), make_config(0.1, 0.9, 0.0, 1), mode};
    RunOptions o;
    o.steps = 200;
    const auto rec = run(setup, model.mu, o);
    EXPECT_EQ(rec.delta_sq.maxCoeff(), 0.0);
    EXPECT_EQ(rec.Delta_sq.maxCoeff(), 0.0);
  }
}

TEST(Run, DivergenceReportsStepAndLastFiniteState) {
  const auto p = random_problem(50, 5, 0.1, 3);
  SimulationSetupd setup{&p.data, &p.model, {}, make_config(1e3, 0.0, 0.0, 5), GradientMode::Minibatch};
  RunOptions o;
  o.steps = 10000;
  try {
    run(setup, VectorXd::Ones(5), o);
    FAIL() << "expected divergence";
  } catch (const DivergenceError& e) {
    EXPECT_GT(e.step(), 0);
    EXPECT_LT(e.step(), 10000);
    ASSERT_EQ(e.last_theta().size(), 5u);
    for (double x : e.last_theta()) EXPECT_TRUE(std::isfinite(x));
  }
}

TEST(Run, RecordsDisplacementsExactly) {
  const auto p = random_problem(100, 6, 0.5, 4);
  SimulationSetupd setup{&p.data, &p.model, {}, make_config(0.01, 0.9, 0.01, 8), GradientMode::Minibatch};
  RunOptions o;
  o.steps = 300;
  o.seed = 9;
  const auto basis = dense_eigenbasis(p.model);
  const auto rec = run(setup, VectorXd::Zero(6), o, &basis);
  ASSERT_EQ(rec.delta_sq.size(), 301);
  ASSERT_EQ(rec.states.size(), 301u);
  EXPECT_EQ(rec.Delta_sq(0), 0.0);
  for (Index k = 0; k <= 300; ++k) {
    const auto& s = rec.states[static_cast<std::size_t>(k)];
    EXPECT_EQ(rec.delta_sq(k), (0.01 * s.v).squaredNorm());
    EXPECT_NEAR(rec.loss(k), loss(p.model, s.theta), 1e-14);
    EXPECT_NEAR(rec.proj_a(0, k), basis.vectors.col(0).dot(s.theta - p.model.mu), 1e-14);
  }
}

TEST(Run, StrideSubsamplesStates) {
  const auto p = random_problem(50, 3, 0.5, 5);
  SimulationSetupd setup{&p.data, &p.model, {}, make_config(0.01, 0.5, 0.0, 4), GradientMode::Minibatch};
  RunOptions o;
  o.steps = 100;
  o.stride = 10;
  const auto rec = run(setup, VectorXd::Zero(3), o);
  ASSERT_EQ(rec.states.size(), 11u);
  EXPECT_EQ(rec.states[3].step, 30);
  EXPECT_EQ(rec.delta_sq.size(), 101);
}

TEST(Run, DeterministicGivenSeed) {
  const auto p = random_problem(80, 5, 0.5, 6);
  for (auto mode : {GradientMode::Minibatch, GradientMode::Shuffled, GradientMode::Idealized}) {
    SimulationSetupd setup{&p.data, &p.model, scaled_hessian_noise(0.25), make_config(0.02, 0.9, 0.0, 8), mode};
    RunOptions o;
    o.steps = 200;
    o.seed = 77;
    o.burn_in = 50;
    const auto a = run(setup, VectorXd::Zero(5), o);
    const auto b = run(setup, VectorXd::Zero(5), o);
    EXPECT_EQ(a.delta_sq, b.delta_sq);
    EXPECT_EQ(a.states.back().theta, b.states.back().theta);
    o.seed = 78;
    const auto c = run(setup, VectorXd::Zero(5), o);
    EXPECT_NE(a.delta_sq, c.delta_sq);
  }
}

TEST(FiniteDifference, ResidualVanishesForValidRuns) {
  const auto p = random_problem(100, 6, 0.5, 7, 0.05);
  for (double beta : {0.0, 0.9, 0.99}) {
    for (auto mode : {GradientMode::Minibatch, GradientMode::Idealized}) {
      SimulationSetupd setup{&p.data, &p.model, scaled_hessian_noise(0.25), make_config(0.01, beta, 0.05, 8), mode};
      RunOptions o;
      o.steps = 500;
      o.seed = 3;
      o.burn_in = 100;
      const auto rec = run(setup, VectorXd::Ones(6), o);
      EXPECT_LT(finite_difference_residual(rec, setup), 1e-10) << beta;
    }
  }
}

TEST(FiniteDifference, DetectsCorruption) {
  const auto p = random_problem(100, 6, 0.5, 8);
  SimulationSetupd setup{&p.data, &p.model, {}, make_config(0.01, 0.9, 0.0, 8), GradientMode::Minibatch};
  RunOptions o;
  o.steps = 100;
  auto rec = run(setup, VectorXd::Ones(6), o);
  rec.states[50].theta(2) += 1e-3;
  EXPECT_GT(finite_difference_residual(rec, setup), 1e-5);

  o.stride = 2;
  const auto strided = run(setup, VectorXd::Ones(6), o);
  EXPECT_THROW(finite_difference_residual(strided, setup), ArgumentError);
}

TEST(GradientSources, ShuffledCoversEveryIndexPerEpoch) {
  const auto p = random_problem(12, 2, 0.1, 9);
  MinibatchGradient<double> src(p.data, 4, 5, true);
  for (int epoch = 0; epoch < 3; ++epoch) {
    std::multiset<Index> seen;
    for (int b = 0; b < 3; ++b) {
      const auto& batch = src.next_batch();
      seen.insert(batch.begin(), batch.end());
    }
    EXPECT_EQ(seen.size(), 12u);
    EXPECT_EQ(std::set<Index>(seen.begin(), seen.end()).size(), 12u);
  }
}

TEST(GradientSources, IdealizedNoiseHasScaledHessianCovariance) {
  const auto p = random_problem(200, 4, 0.5, 10);
  const double sigma_sq = 0.3;
  const Index S = 5;
  IdealizedGradient<double> src(p.model, scaled_hessian_noise(sigma_sq), S, 11);
  const VectorXd theta = VectorXd::Ones(4);
  const VectorXd g = full_gradient(p.model, theta);
  MatrixXd cov = MatrixXd::Zero(4, 4);
  VectorXd mean = VectorXd::Zero(4);
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const VectorXd e = src(theta) - g;
    mean += e;
    cov += e * e.transpose();
  }
  mean /= n;
  cov /= n;
  const MatrixXd target = sigma_sq / S * p.model.H;
  EXPECT_LT((cov - target).norm() / target.norm(), 0.02);
  EXPECT_LT(mean.norm(), 5.0 * std::sqrt(target.trace() / n));
}

TEST(GradientSources, ModeNamesRoundTrip) {
  for (auto m : {GradientMode::Minibatch, GradientMode::Shuffled, GradientMode::Idealized, GradientMode::FullBatch})
    EXPECT_EQ(gradient_mode_from_string(to_string(m)), m);
  EXPECT_THROW(gradient_mode_from_string("adam"), ArgumentError);
}

TEST(BurnIn, SlowestModeSetsLength) {
  const auto cfg = make_config(0.01, 0.9, 0.0, 8);
  VectorXd spec(2);
  spec << 10.0, 0.01;
  // gamma = 0.1/0.019; the small mode is overdamped and relaxes at
  // gamma - sqrt(gamma^2 - omega^2).
  const double g = cfg.gamma();
  const double w2 = 2 * 0.01 / (0.01 * 1.9);
  const double rate = g - std::sqrt(g * g - w2);
  const Index expect = static_cast<Index>(std::ceil(10.0 / (rate * 0.01)));
  EXPECT_NEAR(double(default_burn_in<double>(spec, cfg, 1000000000)), double(expect), 1.0);
  EXPECT_EQ(default_burn_in<double>(spec, cfg, 100), 100);
  VectorXd fast(1);
  fast << 10.0;  // underdamped: relaxes at gamma
  EXPECT_EQ(default_burn_in<double>(fast, cfg, 1000000000), static_cast<Index>(std::ceil(10.0 / (g * 0.01))));
}

TEST(Replicas, DistinctSeedsIndependentOfWorkerCount) {
  const auto p = random_problem(60, 4, 0.5, 12);
  SimulationSetupd setup{&p.data, &p.model, {}, make_config(0.01, 0.5, 0.0, 4), GradientMode::Minibatch};
  RunOptions o;
  o.steps = 50;
  const auto serial = run_replicas(setup, VectorXd::Zero(4), o, 6, 123, 1);
  const auto threaded = run_replicas(setup, VectorXd::Zero(4), o, 6, 123, 3);
  std::set<Seed> seeds;
  for (std::size_t r = 0; r < 6; ++r) {
    EXPECT_EQ(serial[r].delta_sq, threaded[r].delta_sq);
    seeds.insert(serial[r].seed);
  }
  EXPECT_EQ(seeds.size(), 6u);
}

TEST(Stationarity, WindowMeansSettleAfterBurnIn) {
  VectorXd spec = VectorXd::LinSpaced(50, 0.5, 2.0);
  const auto model = make_spectral_quadratic<double>(spec, VectorXd::Zero(50), 0.0, 3);
  SimulationSetupd setup{nullptr, &model, scaled_hessian_noise(1.0), make_config(0.01, 0.5, 0.0, 4),
                         GradientMode::Idealized};
  RunOptions o;
  o.steps = 10000;
  o.burn_in = 10000;
  o.seed = 5;
  const auto rec = run(setup, VectorXd::Ones(50), o);
  std::vector<double> means;
  for (Index w = 0; w < 10; ++w) means.push_back(rec.delta_sq.segment(1 + w * 1000, 1000).mean());
  for (std::size_t w = 1; w < means.size(); ++w) EXPECT_LT(std::abs(means[w] / means[w - 1] - 1.0), 0.05) << w;
}
