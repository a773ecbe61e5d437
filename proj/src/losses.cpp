#include "latref/losses.hpp"

#include <cmath>

namespace latref {

namespace {

Tensor reduce(const Tensor& per_element, bool batched) {
  if (!batched) return per_element.sum();
  return per_element.flatten(1).sum(1).mean();
}

}  // namespace

Tensor perceptual_loss(const Tensor& restored, const Tensor& original, bool batched) {
  require_same_shape(restored, original, "perceptual_loss");
  return reduce((restored - original).square(), batched);
}

Tensor classification_loss(const Tensor& probabilities, const Tensor& labels, bool batched) {
  require_same_shape(probabilities, labels, "classification_loss");
  const Tensor p = probabilities.clamp(kProbabilityClamp, 1.0 - kProbabilityClamp);
  return reduce(-(labels * p.log() + (1 - labels) * (1 - p).log()), batched);
}

Tensor classification_loss_from_logits(const Tensor& logits, const Tensor& labels, bool batched) {
  require_same_shape(logits, labels, "classification_loss");
  // log(p) = logsigmoid(z), log(1 - p) = logsigmoid(-z); clamp the logs at the
  // same bounds as the probability form.
  const double lo = std::log(kProbabilityClamp);
  const double hi = std::log1p(-kProbabilityClamp);
  const Tensor log_p = torch::log_sigmoid(logits).clamp(lo, hi);
  const Tensor log_q = torch::log_sigmoid(-logits).clamp(lo, hi);
  return reduce(-(labels * log_p + (1 - labels) * log_q), batched);
}

}  // namespace latref
