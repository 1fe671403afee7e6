#include "prolab/core.hpp"

#include <cmath>

namespace prolab {

WeightVector::WeightVector(Vector values, double tolerance) : values_(std::move(values)) {
  if (values_.size() < 1) throw DataError("weight vector is empty");
  for (Eigen::Index k = 0; k < values_.size(); ++k) {
    if (!std::isfinite(values_[k]) || values_[k] < 0.0)
      throw DataError("weight entry " + std::to_string(k) + " is negative or non-finite");
  }
  if (std::abs(values_.sum() - 1.0) > tolerance)
    throw DataError("weights sum to " + std::to_string(values_.sum()) + ", not 1");
}

WeightVector WeightVector::uniform(int objectives) {
  if (objectives < 1) throw ParameterError("need at least one objective");
  return WeightVector(Vector::Constant(objectives, 1.0 / objectives));
}

WeightVector WeightVector::one_hot(int objectives, int index) {
  if (index < 0 || index >= objectives) throw ParameterError("one-hot index out of range");
  return WeightVector(Vector::Unit(objectives, index));
}

}  // namespace prolab
