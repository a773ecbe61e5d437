#pragma once

#include "latref/common.hpp"

namespace latref {

/// Probability clamp applied before the logarithms of the classification loss.
inline constexpr double kProbabilityClamp = 1e-7;

/// Sum of squared elementwise differences between restored and original
/// features. With a leading batch dimension the per-sample sums are averaged.
Tensor perceptual_loss(const Tensor& restored, const Tensor& original, bool batched = false);

/// Binary cross-entropy summed over the n attribute slots:
///   -l^T log p - (1 - l)^T log(1 - p),  p clamped to [1e-7, 1 - 1e-7].
/// With a leading batch dimension the per-sample sums are averaged.
Tensor classification_loss(const Tensor& probabilities, const Tensor& labels, bool batched = false);

/// Same loss computed from logits (numerically stable log-sigmoid); the
/// clamp is applied to the implied probabilities so results agree with
/// classification_loss.
Tensor classification_loss_from_logits(const Tensor& logits, const Tensor& labels, bool batched = false);

}  // namespace latref
