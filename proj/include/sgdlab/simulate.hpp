#pragma once

// Discrete SGD with momentum and weight decay on quadratic problems:
//   v_{k+1}     = beta v_k - g(theta_k) - lambda theta_k
//   theta_{k+1} = theta_k + eta v_{k+1}
// with minibatch, idealized-Gaussian, or full-batch gradients.

#include <cmath>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "sgdlab/errors.hpp"
#include "sgdlab/parallel.hpp"
#include "sgdlab/problem.hpp"
#include "sgdlab/spectral.hpp"
#include "sgdlab/types.hpp"

namespace sgdlab {

template <typename Scalar>
struct OptimizerConfig {
  Scalar eta = 0;
  Scalar beta = 0;
  Scalar lambda = 0;
  Index batch_size = 1;

  Scalar kappa() const { return Scalar(batch_size) * (Scalar(1) - beta * beta); }
  Scalar gamma() const { return (Scalar(1) - beta) / (eta * (Scalar(1) + beta)); }
  Scalar mass() const { return Scalar(0.5) * eta * (Scalar(1) + beta); }

  void validate() const {
    if (!(eta > 0) || !std::isfinite(eta)) throw ArgumentError("eta must be positive and finite");
    if (!(beta >= 0 && beta < 1)) throw ArgumentError("beta must lie in [0, 1)");
    if (!(lambda >= 0) || !std::isfinite(lambda)) throw ArgumentError("lambda must be nonnegative and finite");
    if (batch_size < 1) throw ArgumentError("batch_size must be at least 1");
  }
};

template <typename Scalar>
struct PhaseState {
  Vector<Scalar> theta;
  Vector<Scalar> v;
  Index step = 0;

  static PhaseState at_rest(const VectorArg<Scalar>& theta0) {
    return {theta0, Vector<Scalar>::Zero(theta0.size()), 0};
  }
};

/// Raised when an iterate stops being finite. Carries the step at which it
/// happened and the last finite state.
class DivergenceError : public Error {
 public:
  DivergenceError(Index step, std::vector<double> theta, std::vector<double> v)
      : Error("SGD diverged at step " + std::to_string(step)),
        step_(step),
        theta_(std::move(theta)),
        v_(std::move(v)) {}
  Index step() const { return step_; }
  const std::vector<double>& last_theta() const { return theta_; }
  const std::vector<double>& last_v() const { return v_; }

 private:
  Index step_;
  std::vector<double> theta_;
  std::vector<double> v_;
};

/// One update given the (stochastic) gradient evaluated at state.theta.
template <typename Scalar>
void sgd_step_inplace(PhaseState<Scalar>& state, const OptimizerConfig<Scalar>& config,
                      const VectorArg<Scalar>& gradient) {
  state.v = config.beta * state.v - gradient - config.lambda * state.theta;
  state.theta += config.eta * state.v;
  ++state.step;
}

template <typename Scalar>
PhaseState<Scalar> sgd_step(const PhaseState<Scalar>& state, const OptimizerConfig<Scalar>& config,
                            const RegressionDataset<Scalar>& data, std::span<const Index> batch) {
  PhaseState<Scalar> next = state;
  sgd_step_inplace(next, config, batch_gradient(data, state.theta, batch));
  return next;
}

enum class GradientMode {
  Minibatch,  // uniform with replacement, independent across steps
  Shuffled,   // epoch-wise random permutation, consecutive slices
  Idealized,  // full gradient plus exact N(0, Sigma / S) noise
  FullBatch,  // deterministic full gradient
};

inline Seed replica_seed(Seed base, Index replica) { return derive_seed(base, static_cast<std::uint64_t>(replica) + 2); }

inline std::string to_string(GradientMode mode) {
  switch (mode) {
    case GradientMode::Minibatch: return "minibatch";
    case GradientMode::Shuffled: return "shuffled";
    case GradientMode::Idealized: return "idealized";
    case GradientMode::FullBatch: return "full";
  }
  return "minibatch";
}

inline GradientMode gradient_mode_from_string(const std::string& name) {
  if (name == "minibatch") return GradientMode::Minibatch;
  if (name == "shuffled") return GradientMode::Shuffled;
  if (name == "idealized") return GradientMode::Idealized;
  if (name == "full") return GradientMode::FullBatch;
  throw ArgumentError("unknown gradient mode '" + name + "'");
}

/// Minibatch gradients from a dataset. The batch sequence depends only on the
/// seed, never on theta, so a run can be replayed exactly.
template <typename Scalar>
class MinibatchGradient {
 public:
  MinibatchGradient(const RegressionDataset<Scalar>& data, Index batch_size, Seed seed, bool shuffled = false)
      : data_(&data), batch_(static_cast<std::size_t>(batch_size)), rng_(seed), shuffled_(shuffled) {
    if (batch_size < 1) throw ArgumentError("MinibatchGradient: batch_size must be at least 1");
    if (shuffled_) {
      perm_.resize(static_cast<std::size_t>(data.n()));
      std::iota(perm_.begin(), perm_.end(), Index(0));
      cursor_ = perm_.size();
    }
  }

  const std::vector<Index>& next_batch() {
    if (!shuffled_) {
      std::uniform_int_distribution<Index> pick(0, data_->n() - 1);
      for (auto& i : batch_) i = pick(rng_);
      return batch_;
    }
    for (auto& i : batch_) {
      if (cursor_ == perm_.size()) {
        std::shuffle(perm_.begin(), perm_.end(), rng_);
        cursor_ = 0;
      }
      i = perm_[cursor_++];
    }
    return batch_;
  }

  Vector<Scalar> operator()(const VectorArg<Scalar>& theta) {
    const auto& b = next_batch();
    return batch_gradient(*data_, theta, std::span<const Index>(b));
  }

 private:
  const RegressionDataset<Scalar>* data_;
  std::vector<Index> batch_;
  std::mt19937_64 rng_;
  bool shuffled_;
  std::vector<Index> perm_;
  std::size_t cursor_ = 0;
};

/// H theta - b + L z with L L^T = Sigma / S and z standard normal.
template <typename Scalar>
class IdealizedGradient {
 public:
  IdealizedGradient(const QuadraticModel<Scalar>& model, const NoiseModel<Scalar>& noise, Index batch_size,
                    Seed seed)
      : model_(&model), rng_(seed) {
    if (batch_size < 1) throw ArgumentError("IdealizedGradient: batch_size must be at least 1");
    const Matrix<Scalar> cov = noise.covariance(model) / Scalar(batch_size);
    Eigen::SelfAdjointEigenSolver<Matrix<Scalar>> eig(cov);
    factor_ = eig.eigenvectors() * eig.eigenvalues().cwiseMax(Scalar(0)).cwiseSqrt().asDiagonal();
    z_.resize(model.d());
  }

  Vector<Scalar> operator()(const VectorArg<Scalar>& theta) {
    for (Index i = 0; i < z_.size(); ++i) z_(i) = normal_(rng_);
    return model_->H * theta - model_->b + factor_ * z_;
  }

 private:
  const QuadraticModel<Scalar>* model_;
  Matrix<Scalar> factor_;
  Vector<Scalar> z_;
  std::mt19937_64 rng_;
  std::normal_distribution<Scalar> normal_{Scalar(0), Scalar(1)};
};

template <typename Scalar>
class FullBatchGradient {
 public:
  explicit FullBatchGradient(const QuadraticModel<Scalar>& model) : model_(&model) {}
  Vector<Scalar> operator()(const VectorArg<Scalar>& theta) { return model_->H * theta - model_->b; }

 private:
  const QuadraticModel<Scalar>* model_;
};

/// Everything a run needs besides its initial state.
template <typename Scalar>
struct SimulationSetup {
  const RegressionDataset<Scalar>* data = nullptr;  // required for Minibatch / Shuffled
  const QuadraticModel<Scalar>* model = nullptr;
  NoiseModel<Scalar> noise{};                        // used by Idealized
  OptimizerConfig<Scalar> config{};
  GradientMode mode = GradientMode::Minibatch;
};

/// Calls fn(source) with a freshly seeded gradient source for `setup`.
template <typename Scalar, typename Fn>
decltype(auto) with_gradient_source(const SimulationSetup<Scalar>& setup, Seed seed, Fn&& fn) {
  if (!setup.model) throw ArgumentError("simulation requires a model");
  switch (setup.mode) {
    case GradientMode::Minibatch:
    case GradientMode::Shuffled: {
      if (!setup.data) throw ArgumentError("minibatch gradients require a dataset");
      MinibatchGradient<Scalar> src(*setup.data, setup.config.batch_size, seed,
                                    setup.mode == GradientMode::Shuffled);
      return fn(src);
    }
    case GradientMode::Idealized: {
      IdealizedGradient<Scalar> src(*setup.model, setup.noise, setup.config.batch_size, seed);
      return fn(src);
    }
    case GradientMode::FullBatch:
    default: {
      FullBatchGradient<Scalar> src(*setup.model);
      return fn(src);
    }
  }
}

namespace detail {

template <typename Scalar>
std::vector<double> to_std(const Vector<Scalar>& x) {
  std::vector<double> out(static_cast<std::size_t>(x.size()));
  for (Index i = 0; i < x.size(); ++i) out[static_cast<std::size_t>(i)] = static_cast<double>(x(i));
  return out;
}

}  // namespace detail

/// Advances `state` by `steps` updates, calling observer(state) after each.
/// Throws DivergenceError on the first non-finite iterate.
template <typename Scalar, typename Source, typename Observer>
void simulate(PhaseState<Scalar>& state, const OptimizerConfig<Scalar>& config, Source& gradient, Index steps,
              Observer&& observer) {
  for (Index k = 0; k < steps; ++k) {
    const Vector<Scalar> g = gradient(state.theta);
    Vector<Scalar> last_theta = state.theta;
    Vector<Scalar> last_v = state.v;
    sgd_step_inplace(state, config, g);
    if (!state.theta.allFinite() || !state.v.allFinite())
      throw DivergenceError(state.step, detail::to_std(last_theta), detail::to_std(last_v));
    observer(static_cast<const PhaseState<Scalar>&>(state));
  }
}

template <typename Scalar, typename Source>
void simulate(PhaseState<Scalar>& state, const OptimizerConfig<Scalar>& config, Source& gradient, Index steps) {
  simulate(state, config, gradient, steps, [](const PhaseState<Scalar>&) {});
}

template <typename Scalar>
struct TrajectoryRecord {
  std::vector<PhaseState<Scalar>> states;  // every `stride`-th step, starting at step 0
  Vector<Scalar> delta_sq;                 // |theta_k - theta_{k-1}|^2 = eta^2 |v_k|^2
  Vector<Scalar> Delta_sq;                 // |theta_k - theta_0|^2
  Vector<Scalar> loss;                     // training loss L(theta_k)
  Matrix<Scalar> proj_a;                   // k x (steps+1), empty without a basis
  Matrix<Scalar> proj_b;
  Index stride = 1;
  Seed seed = 0;                           // seeds the gradient source of the recorded phase
  GradientMode mode = GradientMode::Minibatch;

  Index steps() const { return delta_sq.size() - 1; }
};

struct RunOptions {
  Index steps = 1;
  Index stride = 1;
  Index burn_in = 0;
  Seed seed = 0;
};

/// Burn-in runs on its own stream derive_seed(seed, 1); the recorded phase
/// uses derive_seed(seed, 0), which is what TrajectoryRecord::seed holds.
template <typename Scalar>
TrajectoryRecord<Scalar> run(const SimulationSetup<Scalar>& setup, const VectorArg<Scalar>& theta0,
                             const RunOptions& opts, const EigenBasis<Scalar>* basis = nullptr) {
  setup.config.validate();
  if (opts.steps < 1) throw ArgumentError("run: steps must be at least 1");
  if (opts.stride < 1) throw ArgumentError("run: stride must be at least 1");
  if (opts.burn_in < 0) throw ArgumentError("run: burn_in must be nonnegative");
  const QuadraticModel<Scalar>& model = *setup.model;
  if (theta0.size() != model.d()) throw DimensionError("run: theta0 has wrong dimension");
  if (basis && basis->d() != model.d()) throw DimensionError("run: basis has wrong dimension");

  const Scalar eta = setup.config.eta;
  PhaseState<Scalar> state = PhaseState<Scalar>::at_rest(theta0);
  if (opts.burn_in > 0) {
    with_gradient_source(setup, derive_seed(opts.seed, 1),
                         [&](auto& src) { simulate(state, setup.config, src, opts.burn_in); });
    state.step = 0;
  }

  TrajectoryRecord<Scalar> rec;
  rec.stride = opts.stride;
  rec.seed = derive_seed(opts.seed, 0);
  rec.mode = setup.mode;
  const Index n = opts.steps + 1;
  rec.delta_sq.resize(n);
  rec.Delta_sq.resize(n);
  rec.loss.resize(n);
  if (basis) {
    rec.proj_a.resize(basis->k(), n);
    rec.proj_b.resize(basis->k(), n);
  }
  const Vector<Scalar> start = state.theta;
  auto record = [&](const PhaseState<Scalar>& s) {
    const Index k = s.step;
    rec.delta_sq(k) = (eta * s.v).squaredNorm();
    rec.Delta_sq(k) = (s.theta - start).squaredNorm();
    rec.loss(k) = loss(model, s.theta);
    if (basis) {
      rec.proj_a.col(k) = basis->vectors.transpose() * (s.theta - model.mu);
      rec.proj_b.col(k) = basis->vectors.transpose() * s.v;
    }
    if (k % opts.stride == 0) rec.states.push_back(s);
  };
  record(state);
  with_gradient_source(setup, rec.seed, [&](auto& src) { simulate(state, setup.config, src, opts.steps, record); });
  return rec;
}

/// Replays the gradient stream of a stride-1 record and returns
/// max_k |(theta_{k+1}-theta_k)/eta - beta (theta_k-theta_{k-1})/eta + lambda theta_k + g_B(theta_k)|_inf.
/// At k = 0 the backward difference is replaced by the recorded v_0.
template <typename Scalar>
Scalar finite_difference_residual(const TrajectoryRecord<Scalar>& rec, const SimulationSetup<Scalar>& setup) {
  if (rec.stride != 1) throw ArgumentError("finite_difference_residual: trajectory must be recorded with stride 1");
  if (rec.states.size() < 2) return Scalar(0);
  SimulationSetup<Scalar> replay = setup;
  replay.mode = rec.mode;
  const auto& cfg = setup.config;
  return with_gradient_source(replay, rec.seed, [&](auto& src) {
    Scalar worst = 0;
    for (std::size_t k = 0; k + 1 < rec.states.size(); ++k) {
      const VectorArg<Scalar>& th = rec.states[k].theta;
      const Vector<Scalar> back = k == 0 ? Vector<Scalar>(rec.states[0].v)
                                         : Vector<Scalar>((th - rec.states[k - 1].theta) / cfg.eta);
      const Vector<Scalar> fwd = (rec.states[k + 1].theta - th) / cfg.eta;
      const Vector<Scalar> r = fwd - cfg.beta * back + cfg.lambda * th + src(th);
      worst = std::max(worst, r.template lpNorm<Eigen::Infinity>());
    }
    return worst;
  });
}

/// Burn-in of ten relaxation times of the slowest mode, in steps, capped.
/// An overdamped mode relaxes at rate gamma - alpha, any other at gamma.
template <typename Scalar>
Index default_burn_in(const VectorArg<Scalar>& spectrum, const OptimizerConfig<Scalar>& config, Index cap) {
  const Scalar g = config.gamma();
  Scalar slowest = g;
  for (Index l = 0; l < spectrum.size(); ++l) {
    const Scalar w2 = Scalar(2) * (spectrum(l) + config.lambda) / (config.eta * (Scalar(1) + config.beta));
    if (g * g > w2) {
      // gamma - sqrt(gamma^2 - w^2) written without cancellation
      const Scalar rate = w2 / (g + std::sqrt(g * g - w2));
      slowest = std::min(slowest, rate);
    }
  }
  if (!(slowest > 0)) return cap;
  const Scalar steps = std::ceil(Scalar(10) / (slowest * config.eta));
  return steps >= Scalar(cap) ? cap : static_cast<Index>(steps);
}

/// Runs `replicas` independent trajectories with seeds derive_seed(base, r + 2)
/// on up to `workers` threads.
template <typename Scalar>
std::vector<TrajectoryRecord<Scalar>> run_replicas(const SimulationSetup<Scalar>& setup, const VectorArg<Scalar>& theta0,
                                                  RunOptions opts, Index replicas, Seed base, unsigned workers,
                                                  const EigenBasis<Scalar>* basis = nullptr) {
  std::vector<TrajectoryRecord<Scalar>> out(static_cast<std::size_t>(replicas));
  parallel_for(replicas, workers, [&](Index r) {
    RunOptions o = opts;
    o.seed = replica_seed(base, r);
    out[static_cast<std::size_t>(r)] = run(setup, theta0, o, basis);
  });
  return out;
}

using OptimizerConfigd = OptimizerConfig<double>;
using PhaseStated = PhaseState<double>;
using TrajectoryRecordd = TrajectoryRecord<double>;
using SimulationSetupd = SimulationSetup<double>;

}  // namespace sgdlab
