#include "tiledet/losses.hpp"

#include <algorithm>
#include <cmath>

#include "tiledet/error.hpp"

namespace tiledet {

namespace {
constexpr double kLogFloor = 1e-12;
double safe_log(double p) { return std::log(std::max(p, kLogFloor)); }
}  // namespace

double loss_cls(const std::array<double, 2>& probs, int y_true) {
  if (y_true != 0 && y_true != 1) throw Error(Errc::InvalidArgument, "label must be 0 or 1");
  return -safe_log(probs[static_cast<std::size_t>(y_true)]);
}

double loss_tfl(std::span<const double> token_probs, std::span<const double> token_labels) {
  if (token_probs.size() != token_labels.size()) throw Error(Errc::ShapeMismatch, "token count mismatch");
  if (token_probs.empty()) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < token_probs.size(); ++i) {
    const double p = token_probs[i], y = token_labels[i];
    s += -(y * safe_log(p) + (1.0 - y) * safe_log(1.0 - p));
  }
  return s / static_cast<double>(token_probs.size());
}

double loss_qfe(double q_pred, double q_true) {
  const double d = q_pred - q_true;
  return d * d;
}

double loss_qfe_mean(std::span<const double> q_pred, std::span<const double> q_true) {
  if (q_pred.size() != q_true.size()) throw Error(Errc::ShapeMismatch, "QF count mismatch");
  if (q_pred.empty()) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < q_pred.size(); ++i) s += loss_qfe(q_pred[i], q_true[i]);
  return s / static_cast<double>(q_pred.size());
}

double loss_all(const LossBreakdown& c, const LossWeights& w) {
  if (!std::isfinite(c.cls) || !std::isfinite(c.tfl) || !std::isfinite(c.qfe))
    throw Error(Errc::NonFiniteLoss, "loss component is not finite");
  double total = w.cls * c.cls;
  total += w.tfl * c.tfl;
  total += w.qfe * c.qfe;
  if (!std::isfinite(total)) throw Error(Errc::NonFiniteLoss, "combined loss is not finite");
  return total;
}

double softplus(double z) noexcept { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

double bce_with_logit(double z, double y) noexcept { return softplus(z) - y * z; }

double sigmoid(double z) noexcept {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace tiledet
