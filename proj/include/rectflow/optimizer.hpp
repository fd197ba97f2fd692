#pragma once

#include <vector>

#include "rectflow/parameters.hpp"

namespace rectflow {

/// Heavy-ball SGD: velocity = momentum * velocity + grad; params -= lr * velocity.
/// Optional global-norm clipping is applied to the raw gradient first.
class SgdMomentum {
 public:
  SgdMomentum(const ParameterStore& store, double learning_rate, double momentum, double clip_norm = 0.0);

  void step(ParameterStore& store, const std::vector<Matrix>& grads);

 private:
  double learning_rate_;
  double momentum_;
  double clip_norm_;
  std::vector<Matrix> velocity_;
};

}  // namespace rectflow
