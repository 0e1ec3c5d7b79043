#pragma once

// A = (D + Q) U with Q skew-symmetric and U symmetric positive definite,
// the modified loss Psi(x) = (x - c)^T (U/2) (x - c), and the conservative
// current j = -Q U (x - c) that circulates along level sets of Psi.

#include <complex>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Eigenvalues>

#include "sgdlab/errors.hpp"
#include "sgdlab/ou_theory.hpp"
#include "sgdlab/types.hpp"

namespace sgdlab {

struct DecompositionResiduals {
  double lyapunov = 0;        // |A B + B A^T - 2 D|_F / |D|_F
  double reconstruction = 0;  // |A - (D + Q) U|_F / |A|_F
  double skew = 0;            // |Q + Q^T|_F / |Q|_F, zero when Q = 0
};

template <typename Scalar>
struct Decomposition {
  Matrix<Scalar> Q;
  Matrix<Scalar> U;
  Matrix<Scalar> B;  // U^{-1}; kappa^{-1} B is the stationary covariance
  Matrix<Scalar> A;
  Matrix<Scalar> D;
  Vector<Scalar> center;
  DecompositionResiduals residuals;

  Index dim() const { return A.rows(); }
};

template <typename Scalar>
DecompositionResiduals decomposition_residuals(const Matrix<Scalar>& A, const Matrix<Scalar>& D,
                                               const Matrix<Scalar>& Q, const Matrix<Scalar>& U,
                                               const Matrix<Scalar>& B) {
  auto rel = [](Scalar num, Scalar den) { return double(den > 0 ? num / den : num); };
  DecompositionResiduals r;
  r.lyapunov = rel((A * B + B * A.transpose() - Scalar(2) * D).norm(), D.norm());
  r.reconstruction = rel((A - (D + Q) * U).norm(), A.norm());
  const Scalar qn = Q.norm();
  r.skew = qn > 0 ? double((Q + Q.transpose()).norm() / qn) : 0.0;
  return r;
}

namespace detail {

template <typename Scalar>
Matrix<Scalar> invert_checked(const Matrix<Scalar>& M, const char* what) {
  Eigen::FullPivLU<Matrix<Scalar>> lu(M);
  if (!lu.isInvertible())
    throw DecompositionError(std::string(what) +
                             " is singular; the decomposition needs D + Q invertible, which fails when H has a "
                             "zero eigenvalue outside the restricted subspace");
  return lu.inverse();
}

}  // namespace detail

/// Decomposes a stable drift A (eigenvalues with positive real part) and a
/// symmetric PSD diffusion D. With A = V Lambda V^{-1} and
/// D~ = V^{-1} D V^{-T}, Q~_ij = (l_i - l_j)/(l_i + l_j) D~_ij, Q = V Q~ V^T
/// and U = (D + Q)^{-1} A. A need not be symmetric, only diagonalizable.
template <typename Scalar>
Decomposition<Scalar> kwon_decompose(const Matrix<Scalar>& A, const Matrix<Scalar>& D) {
  using Complex = std::complex<Scalar>;
  using CMatrix = Eigen::Matrix<Complex, Eigen::Dynamic, Eigen::Dynamic>;
  const Index n = A.rows();
  if (A.cols() != n || D.rows() != n || D.cols() != n) throw DimensionError("kwon_decompose: shape mismatch");

  Eigen::EigenSolver<Matrix<Scalar>> es(A);
  if (es.info() != Eigen::Success) throw DecompositionError("kwon_decompose: eigendecomposition of A failed");
  const CMatrix V = es.eigenvectors();
  const auto lam = es.eigenvalues();
  Eigen::PartialPivLU<CMatrix> vlu(V);
  const CMatrix Vinv = vlu.inverse();
  // Reciprocal condition estimate guards against defective A.
  if (!(vlu.rcond() > Scalar(1e3) * std::numeric_limits<Scalar>::epsilon()))
    throw DecompositionError("kwon_decompose: A is not numerically diagonalizable");

  const CMatrix Dt = Vinv * D.template cast<Complex>() * Vinv.transpose();
  CMatrix Qt(n, n);
  const Scalar scale = lam.cwiseAbs().maxCoeff();
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j) {
      const Complex sum = lam(i) + lam(j);
      if (std::abs(sum) <= Scalar(1e3) * std::numeric_limits<Scalar>::epsilon() * scale)
        throw DecompositionError("kwon_decompose: eigenvalue pair with l_i + l_j = 0");
      Qt(i, j) = (lam(i) - lam(j)) / sum * Dt(i, j);
    }

  Decomposition<Scalar> dec;
  dec.A = A;
  dec.D = D;
  dec.Q = (V * Qt * V.transpose()).real();
  dec.U = detail::invert_checked<Scalar>(D + dec.Q, "D + Q") * A;
  dec.B = detail::invert_checked<Scalar>(dec.U, "U");
  dec.center = Vector<Scalar>::Zero(n);
  dec.residuals = decomposition_residuals(A, D, dec.Q, dec.U, dec.B);
  return dec;
}

namespace detail {

// Q, U, B for one mode in (a, b) coordinates with noise s along the mode:
// Q = [[0, -s], [s, 0]], U = diag(2 (rho + lambda) / (eta (1+beta) s), 1 / s).
template <typename Scalar>
void mode_qub(const ModeBlock<Scalar>& m, Matrix2<Scalar>& Q, Matrix2<Scalar>& U, Matrix2<Scalar>& B) {
  const Scalar s = m.noise;
  const Scalar w2 = m.omega_sq();
  Q << Scalar(0), -s, s, Scalar(0);
  U << w2 / s, Scalar(0), Scalar(0), Scalar(1) / s;
  B << s / w2, Scalar(0), Scalar(0), s;
}

template <typename Scalar>
void require_invertible_modes(const OUModel<Scalar>& ou, Index k) {
  for (Index l = 0; l < k; ++l) {
    const auto& m = ou.modes[static_cast<std::size_t>(l)];
    if (!(m.noise > 0) || !(m.omega_sq() > 0)) {
      std::vector<double> dir(static_cast<std::size_t>(ou.d()));
      for (Index i = 0; i < ou.d(); ++i) dir[static_cast<std::size_t>(i)] = double(ou.basis.vectors(i, l));
      throw SingularityError("closed_form_qu: mode " + std::to_string(l) +
                                 " has zero noise or curvature; restrict to the image of H",
                             std::move(dir));
    }
  }
}

}  // namespace detail

/// Closed-form Q, U, B in the full 2d-dimensional phase space
/// Q = [[0, -Sigma], [Sigma, 0]], U = diag(2/(eta(1+beta)) Sigma^{-1}(H + lambda), Sigma^{-1}).
template <typename Scalar>
Decomposition<Scalar> closed_form_qu(const OUModel<Scalar>& ou) {
  const Index n = ou.d();
  detail::require_invertible_modes(ou, n);
  BlockList<Scalar> q, u, b;
  for (const auto& m : ou.modes) {
    Matrix2<Scalar> Q, U, B;
    detail::mode_qub(m, Q, U, B);
    q.push_back(Q);
    u.push_back(U);
    b.push_back(B);
  }
  Decomposition<Scalar> dec;
  dec.A = ou.drift();
  dec.D = ou.diffusion();
  dec.Q = assemble_phase(ou, q);
  dec.U = assemble_phase(ou, u);
  dec.B = assemble_phase(ou, b);
  dec.center = ou.mu_phase();
  dec.residuals = decomposition_residuals(dec.A, dec.D, dec.Q, dec.U, dec.B);
  return dec;
}

/// Closed form restricted to the listed modes, in coordinates
/// x = [a_1..a_k, b_1..b_k] with a_l = q_l^T (theta - mu), b_l = q_l^T v.
/// Every mode needs positive noise and curvature.
template <typename Scalar>
Decomposition<Scalar> closed_form_qu(const std::vector<ModeBlock<Scalar>>& modes, const OptimizerConfig<Scalar>& config) {
  const Index k = static_cast<Index>(modes.size());
  if (k < 1) throw ArgumentError("closed_form_qu: no modes");
  Decomposition<Scalar> dec;
  for (Matrix<Scalar>* M : {&dec.Q, &dec.U, &dec.B, &dec.A, &dec.D}) M->setZero(2 * k, 2 * k);
  const Scalar two_gamma = Scalar(2) * config.gamma();
  for (Index l = 0; l < k; ++l) {
    const auto& m = modes[static_cast<std::size_t>(l)];
    if (!(m.noise > 0) || !(m.omega_sq() > 0))
      throw DecompositionError("closed_form_qu: mode " + std::to_string(l) + " has zero noise or curvature");
    Matrix2<Scalar> Q, U, B;
    detail::mode_qub(m, Q, U, B);
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j) {
        dec.Q(i * k + l, j * k + l) = Q(i, j);
        dec.U(i * k + l, j * k + l) = U(i, j);
        dec.B(i * k + l, j * k + l) = B(i, j);
      }
    dec.A(l, k + l) = Scalar(-1);
    dec.A(k + l, l) = m.omega_sq();
    dec.A(k + l, k + l) = two_gamma;
    dec.D(k + l, k + l) = two_gamma * m.noise;
  }
  dec.center = Vector<Scalar>::Zero(2 * k);
  dec.residuals = decomposition_residuals(dec.A, dec.D, dec.Q, dec.U, dec.B);
  return dec;
}

/// Closed form restricted to the top-k modes of `ou`.
template <typename Scalar>
Decomposition<Scalar> closed_form_qu(const OUModel<Scalar>& ou, Index k) {
  if (k < 1 || k > ou.d()) throw ArgumentError("closed_form_qu: need 1 <= k <= d");
  detail::require_invertible_modes(ou, k);
  return closed_form_qu(std::vector<ModeBlock<Scalar>>(ou.modes.begin(), ou.modes.begin() + k), ou.config);
}

template <typename Scalar>
Decomposition<Scalar> closed_form_qu(const QuadraticModel<Scalar>& model, const NoiseModel<Scalar>& noise,
                                     const OptimizerConfig<Scalar>& config) {
  return closed_form_qu(build_ou(model, noise, config, dense_eigenbasis(model)));
}

template <typename Scalar>
struct ModifiedLoss {
  Vector<Scalar> center;
  Matrix<Scalar> curvature;      // U / 2
  Matrix<Scalar> position_part;  // theta-theta block of U / 2
  Matrix<Scalar> velocity_part;  // v-v block of U / 2
};

template <typename Scalar>
ModifiedLoss<Scalar> modified_loss(const Decomposition<Scalar>& dec) {
  const Index n = dec.dim() / 2;
  ModifiedLoss<Scalar> psi;
  psi.center = dec.center;
  psi.curvature = Scalar(0.5) * dec.U;
  psi.position_part = psi.curvature.topLeftCorner(n, n);
  psi.velocity_part = psi.curvature.bottomRightCorner(n, n);
  return psi;
}

/// Psi(theta, v) = (x - c)^T (U/2) (x - c) with x = [theta; v].
template <typename Scalar>
Scalar modified_loss(const Decomposition<Scalar>& dec, const VectorArg<Scalar>& theta, const VectorArg<Scalar>& v) {
  const Index n = dec.dim() / 2;
  if (theta.size() != n || v.size() != n) throw DimensionError("modified_loss: state has wrong dimension");
  Vector<Scalar> y(2 * n);
  y << theta, v;
  y -= dec.center;
  return Scalar(0.5) * y.dot(dec.U * y);
}

/// Position and velocity contributions, Psi = Psi_theta + Psi_v when U is
/// block diagonal.
template <typename Scalar>
std::pair<Scalar, Scalar> modified_loss_parts(const Decomposition<Scalar>& dec, const VectorArg<Scalar>& theta,
                                              const VectorArg<Scalar>& v) {
  const Index n = dec.dim() / 2;
  const Vector<Scalar> a = theta - dec.center.head(n);
  const Vector<Scalar> b = v - dec.center.tail(n);
  return {Scalar(0.5) * a.dot(dec.U.topLeftCorner(n, n) * a), Scalar(0.5) * b.dot(dec.U.bottomRightCorner(n, n) * b)};
}

/// Gradient of Psi, U (x - c).
template <typename Scalar>
Vector<Scalar> modified_loss_gradient(const Decomposition<Scalar>& dec, const VectorArg<Scalar>& x) {
  return dec.U * (x - dec.center);
}

/// j(x) = -Q U (x - c); the stationary current is j times the stationary
/// density.
template <typename Scalar>
Vector<Scalar> probability_current(const Decomposition<Scalar>& dec, const VectorArg<Scalar>& x) {
  if (x.size() != dec.dim()) throw DimensionError("probability_current: state has wrong dimension");
  return -(dec.Q * (dec.U * (x - dec.center)));
}

/// j(theta, v) = [v; -2/(eta(1+beta)) (H + lambda I)(theta - mu)].
template <typename Scalar>
Vector<Scalar> probability_current(const QuadraticModel<Scalar>& model, const OptimizerConfig<Scalar>& config,
                                   const VectorArg<Scalar>& theta, const VectorArg<Scalar>& v) {
  const Index n = model.d();
  if (theta.size() != n || v.size() != n) throw DimensionError("probability_current: state has wrong dimension");
  const Vector<Scalar> off = theta - model.mu;
  Vector<Scalar> j(2 * n);
  j.head(n) = v;
  j.tail(n) = -(Scalar(2) / (config.eta * (Scalar(1) + config.beta))) * (model.H * off + model.lambda * off);
  return j;
}

/// Gaussian density of N(c, kappa^{-1} B) at x, for weighting j into J_ss.
template <typename Scalar>
Scalar stationary_density(const Decomposition<Scalar>& dec, Scalar kappa, const VectorArg<Scalar>& x) {
  const Index n = dec.dim();
  Eigen::LLT<Matrix<Scalar>> llt(dec.B / kappa);
  if (llt.info() != Eigen::Success) throw DecompositionError("stationary_density: covariance is not positive definite");
  const Vector<Scalar> z = llt.matrixL().solve(x - dec.center);
  const Scalar logdet = Scalar(2) * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  const Scalar log2pi = std::log(Scalar(2) * Scalar(EIGEN_PI));
  return std::exp(Scalar(-0.5) * (z.squaredNorm() + logdet + Scalar(n) * log2pi));
}

enum class Balance { DetailedBalance, BrokenDetailedBalance };

inline const char* to_string(Balance b) {
  return b == Balance::DetailedBalance ? "detailed_balance" : "broken_detailed_balance";
}

struct StationarityCertificate {
  double orthogonality = 0;  // max |j . grad Psi| / (|j| |grad Psi|) over probes
  double divergence = 0;     // |tr(Q U)| / (|Q|_F |U|_F)
  double divergence_abs = 0;  // |tr(Q U)|
  Balance balance = Balance::DetailedBalance;
  Index probes = 0;
};

/// Checks j . grad Psi = 0 on `probes` Gaussian points drawn from the
/// stationary covariance shape, and div j = -tr(Q U) = 0.
template <typename Scalar>
StationarityCertificate stationarity_certificate(const Decomposition<Scalar>& dec, Index probes = 100,
                                                 Seed seed = 0) {
  StationarityCertificate cert;
  cert.probes = probes;
  const Index n = dec.dim();
  std::mt19937_64 rng(seed);
  std::normal_distribution<Scalar> normal(Scalar(0), Scalar(1));
  const Vector<Scalar> scale = dec.B.diagonal().cwiseAbs().cwiseSqrt();
  Vector<Scalar> x(n);
  double worst = 0;
  for (Index p = 0; p < probes; ++p) {
    for (Index i = 0; i < n; ++i) x(i) = dec.center(i) + scale(i) * normal(rng);
    const Vector<Scalar> j = probability_current(dec, x);
    const Vector<Scalar> g = modified_loss_gradient(dec, x);
    const Scalar den = j.norm() * g.norm();
    if (den > 0) worst = std::max(worst, double(std::abs(j.dot(g)) / den));
  }
  cert.orthogonality = worst;
  const Scalar tr = (dec.Q * dec.U).trace();
  const Scalar qu = dec.Q.norm() * dec.U.norm();
  cert.divergence_abs = double(std::abs(tr));
  cert.divergence = qu > 0 ? double(std::abs(tr) / qu) : 0.0;
  const Scalar ref = std::max({dec.A.norm(), dec.D.norm(), std::numeric_limits<Scalar>::min()});
  cert.balance = dec.Q.norm() > Scalar(1e-12) * ref ? Balance::BrokenDetailedBalance : Balance::DetailedBalance;
  return cert;
}

using Decompositiond = Decomposition<double>;

}  // namespace sgdlab
