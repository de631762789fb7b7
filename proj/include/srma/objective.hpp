#pragma once

#include <optional>
#include <stdexcept>

#include "srma/mla.hpp"
#include "srma/tensor.hpp"

namespace srma::objective {

inline constexpr double kDefaultLambdaPc = 10.0;
inline constexpr double kProbClamp = 1e-12;

class AllIgnored : public std::runtime_error {
 public:
  AllIgnored() : std::runtime_error("every pixel is ignore-labelled") {}
};

/// Per-pixel softmax over the channel axis.
Tensor3 softmax(const Tensor3& logits);

/// Maps d(loss)/d(probabilities) to d(loss)/d(logits) through the softmax Jacobian.
Tensor3 softmax_backward(const Tensor3& probabilities, const Tensor3& grad_probabilities);

/// Mean negative log-probability of the true class over non-ignore pixels.
/// If `grad_logits` is non-null, scale * d(loss)/d(logits) is added to it.
double task_loss(const Tensor3& probabilities, const LabelMap& labels,
                 Tensor3* grad_logits = nullptr, double scale = 1.0);

/// Pixel-averaged Jensen-Shannon divergence (nats) between two posteriors.
/// Optional gradients are with respect to the logits behind each posterior.
double js_consistency(const Tensor3& p_image, const Tensor3& p_rearranged,
                      Tensor3* grad_logits_image = nullptr,
                      Tensor3* grad_logits_rearranged = nullptr, double scale = 1.0);

struct LossBreakdown {
  double task_image = 0.0;
  std::optional<double> task_rearranged;
  double mla_total = 0.0;  // already lambda-weighted
  double pc = 0.0;
  double lambda_pc = kDefaultLambdaPc;
  double total = 0.0;
};

/// 1/2 (task_I + task_SR) + weighted alignment + lambda_pc * pc. Without a rearranged
/// branch the task term is task_I alone.
LossBreakdown total_loss(double task_image, std::optional<double> task_rearranged,
                         const mla::AlignmentBreakdown& mla, double pc,
                         double lambda_pc = kDefaultLambdaPc);

}  // namespace srma::objective
