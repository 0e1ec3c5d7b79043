#pragma once

#include <cstdint>
#include <type_traits>

#include <Eigen/Dense>

namespace sgdlab {

using Index = Eigen::Index;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
using Vector2 = Eigen::Matrix<Scalar, 2, 1>;

template <typename Scalar>
using Matrix2 = Eigen::Matrix<Scalar, 2, 2>;

// Parameter spellings that keep Scalar out of template argument deduction, so
// Eigen expressions convert at the call site.
template <typename Scalar>
using VectorArg = std::type_identity_t<Vector<Scalar>>;

template <typename Scalar>
using MatrixArg = std::type_identity_t<Matrix<Scalar>>;

using Seed = std::uint64_t;

// SplitMix64 finalizer; used to derive independent stream seeds from a base
// seed and a stream index.
inline Seed derive_seed(Seed base, std::uint64_t stream) {
  std::uint64_t z = base + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace sgdlab
