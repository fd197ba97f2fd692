#include "rectflow/optimizer.hpp"

#include <cmath>

#include "rectflow/error.hpp"

namespace rectflow {

SgdMomentum::SgdMomentum(const ParameterStore& store, double learning_rate, double momentum, double clip_norm)
    : learning_rate_(learning_rate), momentum_(momentum), clip_norm_(clip_norm), velocity_(store.zeros_like()) {
  if (!(learning_rate > 0.0)) throw DomainError("learning rate must be positive");
  if (momentum < 0.0 || momentum >= 1.0) throw DomainError("momentum must lie in [0, 1)");
}

void SgdMomentum::step(ParameterStore& store, const std::vector<Matrix>& grads) {
  if (grads.size() != velocity_.size()) throw DimensionError("gradient list does not match the parameter store");
  double scale = 1.0;
  if (clip_norm_ > 0.0) {
    double sq = 0.0;
    for (const auto& g : grads) sq += g.squaredNorm();
    const double norm = std::sqrt(sq);
    if (norm > clip_norm_) scale = clip_norm_ / norm;
  }
  for (std::size_t i = 0; i < grads.size(); ++i) velocity_[i] = momentum_ * velocity_[i] + scale * grads[i];
  store.add_scaled(velocity_, -learning_rate_);
}

}  // namespace rectflow
