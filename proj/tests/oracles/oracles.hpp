#pragma once

// Independent reference computations used only by tests. None of these share
// code paths with the library's closed forms.

#include <cmath>
#include <functional>
#include <random>

#include <Eigen/Dense>
#include <unsupported/Eigen/KroneckerProduct>
#include <unsupported/Eigen/MatrixFunctions>

namespace oracle {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Scaling-and-squaring Pade exponential from Eigen's MatrixFunctions module.
inline MatrixXd expm(const MatrixXd& M) { return M.exp(); }

// Solves A B + B A^T = 2 D through (I (x) A + A (x) I) vec(B) = vec(2 D).
inline MatrixXd lyapunov_kron(const MatrixXd& A, const MatrixXd& D) {
  const Eigen::Index n = A.rows();
  const MatrixXd I = MatrixXd::Identity(n, n);
  const MatrixXd K = Eigen::kroneckerProduct(I, A) + Eigen::kroneckerProduct(A, I);
  const MatrixXd rhs = 2.0 * D;
  const VectorXd b = Eigen::Map<const VectorXd>(rhs.data(), n * n);
  const VectorXd x = K.fullPivLu().solve(b);
  return Eigen::Map<const MatrixXd>(x.data(), n, n);
}

// Adaptive Simpson quadrature of a matrix-valued integrand, refined until the
// Richardson estimate of every entry is below tol.
namespace detail {
inline MatrixXd simpson_rec(const std::function<MatrixXd(double)>& f, double a, double b, const MatrixXd& fa,
                            const MatrixXd& fm, const MatrixXd& fb, const MatrixXd& whole, double tol, int depth) {
  const double m = 0.5 * (a + b);
  const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
  const MatrixXd flm = f(lm), frm = f(rm);
  const MatrixXd left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
  const MatrixXd right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
  const MatrixXd delta = left + right - whole;
  if (depth <= 0 || delta.cwiseAbs().maxCoeff() <= 15.0 * tol) return left + right + delta / 15.0;
  return simpson_rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) +
         simpson_rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1);
}
}  // namespace detail

inline MatrixXd integrate(const std::function<MatrixXd(double)>& f, double a, double b, double tol = 1e-12) {
  // Start from 16 panels so that oscillatory integrands are resolved before
  // the error estimate is trusted.
  const int panels = 16;
  const double h = (b - a) / panels;
  MatrixXd total;
  for (int p = 0; p < panels; ++p) {
    const double lo = a + p * h, hi = lo + h, mid = 0.5 * (lo + hi);
    const MatrixXd fa = f(lo), fm = f(mid), fb = f(hi);
    const MatrixXd whole = h / 6.0 * (fa + 4.0 * fm + fb);
    const MatrixXd part = detail::simpson_rec(f, lo, hi, fa, fm, fb, whole, tol / panels, 40);
    total = p == 0 ? part : MatrixXd(total + part);
  }
  return total;
}

// Dormand-Prince 5(4) with step-size control for x' = f(t, x).
inline VectorXd integrate_ode(const std::function<VectorXd(double, const VectorXd&)>& f, VectorXd x, double t0,
                              double t1, double rtol = 1e-12, double atol = 1e-14) {
  static const double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
  static const double a21 = 1.0 / 5;
  static const double a31 = 3.0 / 40, a32 = 9.0 / 40;
  static const double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
  static const double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561, a54 = -212.0 / 729;
  static const double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                      a65 = -5103.0 / 18656;
  static const double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192, b5 = -2187.0 / 6784, b6 = 11.0 / 84;
  static const double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920, e5 = -17253.0 / 339200,
                      e6 = 22.0 / 525, e7 = -1.0 / 40;
  double t = t0;
  double h = (t1 - t0) / 100.0;
  if (h == 0) return x;
  while (t < t1) {
    if (t + h > t1) h = t1 - t;
    const VectorXd k1 = f(t, x);
    const VectorXd k2 = f(t + c2 * h, x + h * a21 * k1);
    const VectorXd k3 = f(t + c3 * h, x + h * (a31 * k1 + a32 * k2));
    const VectorXd k4 = f(t + c4 * h, x + h * (a41 * k1 + a42 * k2 + a43 * k3));
    const VectorXd k5 = f(t + c5 * h, x + h * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4));
    const VectorXd k6 = f(t + h, x + h * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5));
    const VectorXd y = x + h * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
    const VectorXd k7 = f(t + h, y);
    const VectorXd err = h * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);
    double norm = 0;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      const double sc = atol + rtol * std::max(std::abs(x(i)), std::abs(y(i)));
      norm = std::max(norm, std::abs(err(i)) / sc);
    }
    if (norm <= 1.0) {
      t += h;
      x = y;
    }
    const double factor = norm == 0 ? 5.0 : std::min(5.0, std::max(0.2, 0.9 * std::pow(norm, -0.2)));
    h *= factor;
  }
  return x;
}

// Damped oscillator a'' + 2 gamma a' + omega^2 a = 0 integrated numerically.
inline Eigen::Vector2d oscillator(double gamma, double omega, double a0, double b0, double t) {
  auto f = [&](double, const VectorXd& x) {
    VectorXd dx(2);
    dx << x(1), -omega * omega * x(0) - 2.0 * gamma * x(1);
    return dx;
  };
  VectorXd x0(2);
  x0 << a0, b0;
  const VectorXd x = integrate_ode(f, x0, 0.0, t);
  return {x(0), x(1)};
}

// Gradient of the mean squared error written per sample.
inline VectorXd per_sample_gradient_mean(const MatrixXd& X, const VectorXd& Y, const VectorXd& theta) {
  VectorXd g = VectorXd::Zero(X.cols());
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    double r = -Y(i);
    for (Eigen::Index j = 0; j < X.cols(); ++j) r += X(i, j) * theta(j);
    for (Eigen::Index j = 0; j < X.cols(); ++j) g(j) += r * X(i, j);
  }
  return g / double(X.rows());
}

// Random orthogonal matrix from the QR factorization of a Gaussian matrix.
template <typename Rng>
MatrixXd random_rotation(Eigen::Index d, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  MatrixXd G(d, d);
  for (Eigen::Index i = 0; i < d; ++i)
    for (Eigen::Index j = 0; j < d; ++j) G(i, j) = normal(rng);
  Eigen::HouseholderQR<MatrixXd> qr(G);
  return qr.householderQ();
}

// Largest principal angle (radians) between the column spans of two
// orthonormal bases.
inline double max_principal_angle(const MatrixXd& Q1, const MatrixXd& Q2) {
  Eigen::JacobiSVD<MatrixXd> svd(Q1.transpose() * Q2);
  const double smin = std::min(1.0, svd.singularValues().minCoeff());
  return std::acos(smin);
}

}  // namespace oracle
