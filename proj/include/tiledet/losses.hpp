#pragma once

#include <array>
#include <span>

#include "tiledet/model.hpp"

namespace tiledet {

// -log p[y], log argument clamped at 1e-12.
double loss_cls(const std::array<double, 2>& probs, int y_true);
// Mean soft-label BCE over all tokens, logs clamped at 1e-12.
double loss_tfl(std::span<const double> token_probs, std::span<const double> token_labels);
// Squared error of normalised QFs.
double loss_qfe(double q_pred, double q_true);
double loss_qfe_mean(std::span<const double> q_pred, std::span<const double> q_true);
// Weighted sum in the fixed order cls, tfl, qfe. Throws NonFiniteLoss.
double loss_all(const LossBreakdown& components, const LossWeights& weights);

// Logit-space forms used by the model: numerically stable and smooth, equal to
// the clamped forms away from saturation.
double softplus(double z) noexcept;
double bce_with_logit(double z, double y) noexcept;
double sigmoid(double z) noexcept;

}  // namespace tiledet
