#pragma once

#include "ctseg/gan/spec.hpp"
#include "ctseg/gan/tensor.hpp"

namespace ctseg::gan {

/// Probabilities are clamped to [eps, 1 - eps] before taking logs.
inline constexpr double kProbabilityEpsilon = 1e-7;

/// Mean binary cross-entropy between a patch probability map and a label
/// map of the same shape. If `grad` is non-null it receives d(loss)/d(patch),
/// which is zero where the clamp is active.
template <typename T>
double adversarial_loss(const Tensor<T>& patch, const Tensor<T>& labels, Tensor<T>* grad = nullptr);

/// Same, against a constant label (1 = real, 0 = fake).
template <typename T>
double adversarial_loss(const Tensor<T>& patch, double label, Tensor<T>* grad = nullptr);

/// Mean absolute error. `grad` receives d(loss)/d(generated) (sign / N).
template <typename T>
double l1_loss(const Tensor<T>& generated, const Tensor<T>& target, Tensor<T>* grad = nullptr);

inline double generator_loss(double adversarial, double l1, const LossWeights& weights) {
    return adversarial + weights.lambda_l1 * l1;
}

}  // namespace ctseg::gan
