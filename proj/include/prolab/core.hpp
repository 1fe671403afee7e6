#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace prolab {

template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

using Vector = VectorX<double>;
using Matrix = MatrixX<double>;

using ResponseId = int;
using RandomState = std::mt19937_64;

/// K unnormalized scores for one (prompt, response) pair.
using RewardVector = Vector;

inline constexpr double kSimplexTolerance = 1e-9;

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConfigError : Error {
  using Error::Error;
};
struct DataError : Error {
  using Error::Error;
};
struct ArityError : Error {
  using Error::Error;
};
struct ParameterError : Error {
  using Error::Error;
};
struct ParseError : Error {
  using Error::Error;
};
struct IoError : Error {
  using Error::Error;
};

/// Raised when a loss or objective turns non-finite during optimization.
struct NumericalError : Error {
  NumericalError(const std::string& what, std::size_t step)
      : Error(what + " (step " + std::to_string(step) + ")"), step(step) {}
  std::size_t step;
};

/// A point on the (K-1)-simplex.
class WeightVector {
 public:
  explicit WeightVector(Vector values, double tolerance = kSimplexTolerance);

  static WeightVector uniform(int objectives);
  static WeightVector one_hot(int objectives, int index);

  const Vector& values() const { return values_; }
  int size() const { return static_cast<int>(values_.size()); }
  double operator[](int k) const { return values_[k]; }

 private:
  Vector values_;
};

inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

/// log(sigmoid(z)) without overflow for large |z|.
inline double log_sigmoid(double z) {
  if (z >= 0.0) return -std::log1p(std::exp(-z));
  return z - std::log1p(std::exp(z));
}

inline double uniform01(RandomState& rng) {
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

inline int uniform_index(RandomState& rng, int n) {
  return std::uniform_int_distribution<int>(0, n - 1)(rng);
}

/// Draws an index from a categorical distribution given by `probs`.
template <typename Derived>
int sample_categorical(const Eigen::MatrixBase<Derived>& probs, RandomState& rng) {
  const double u = uniform01(rng);
  double acc = 0.0;
  for (Eigen::Index i = 0; i < probs.size(); ++i) {
    acc += probs[i];
    if (u < acc) return static_cast<int>(i);
  }
  // u landed in the rounding slack past the last cumulative sum
  for (Eigen::Index i = probs.size() - 1; i >= 0; --i)
    if (probs[i] > 0.0) return static_cast<int>(i);
  return static_cast<int>(probs.size() - 1);
}

}  // namespace prolab
