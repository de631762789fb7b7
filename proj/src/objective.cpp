#include "srma/objective.hpp"

#include <algorithm>
#include <cmath>

namespace srma::objective {

namespace {

void ensure(Tensor3* t, const Tensor3& like) {
  if (t && t->empty()) *t = Tensor3(like.channels(), like.height(), like.width());
  if (t && !t->same_shape(like)) throw ShapeMismatch("gradient buffer shape");
}

double clamp_log(double p) { return std::log(std::max(p, kProbClamp)); }

}  // namespace

Tensor3 softmax(const Tensor3& logits) {
  Tensor3 p(logits.channels(), logits.height(), logits.width());
  const std::size_t plane = logits.plane_size();
  const std::size_t classes = logits.channels();
  for (std::size_t i = 0; i < plane; ++i) {
    double top = logits.plane(0)[i];
    for (std::size_t c = 1; c < classes; ++c) top = std::max(top, logits.plane(c)[i]);
    double sum = 0.0;
    for (std::size_t c = 0; c < classes; ++c) {
      const double e = std::exp(logits.plane(c)[i] - top);
      p.plane(c)[i] = e;
      sum += e;
    }
    for (std::size_t c = 0; c < classes; ++c) p.plane(c)[i] /= sum;
  }
  return p;
}

Tensor3 softmax_backward(const Tensor3& probabilities, const Tensor3& grad_probabilities) {
  Tensor3 g(probabilities.channels(), probabilities.height(), probabilities.width());
  const std::size_t plane = probabilities.plane_size();
  for (std::size_t i = 0; i < plane; ++i) {
    double dot = 0.0;
    for (std::size_t c = 0; c < probabilities.channels(); ++c) {
      dot += probabilities.plane(c)[i] * grad_probabilities.plane(c)[i];
    }
    for (std::size_t c = 0; c < probabilities.channels(); ++c) {
      g.plane(c)[i] = probabilities.plane(c)[i] * (grad_probabilities.plane(c)[i] - dot);
    }
  }
  return g;
}

double task_loss(const Tensor3& probabilities, const LabelMap& labels, Tensor3* grad_logits,
                 double scale) {
  if (probabilities.height() != labels.height() || probabilities.width() != labels.width()) {
    throw ShapeMismatch("task_loss: label map does not match predictions");
  }
  const std::size_t plane = probabilities.plane_size();
  std::size_t valid = 0;
  double sum = 0.0;
  for (std::size_t i = 0; i < plane; ++i) {
    const auto c = labels[i];
    if (c == kIgnoreLabel) continue;
    if (c >= probabilities.channels()) throw std::out_of_range("task_loss: label exceeds classes");
    ++valid;
    sum -= clamp_log(probabilities.plane(c)[i]);
  }
  if (valid == 0) throw AllIgnored();
  const double n = static_cast<double>(valid);

  if (grad_logits) {
    ensure(grad_logits, probabilities);
    // d/dz of -log p_y is p - onehot(y) unless the clamp is active, where it vanishes.
    for (std::size_t i = 0; i < plane; ++i) {
      const auto y = labels[i];
      if (y == kIgnoreLabel) continue;
      if (probabilities.plane(y)[i] < kProbClamp) continue;
      for (std::size_t c = 0; c < probabilities.channels(); ++c) {
        const double target = c == y ? 1.0 : 0.0;
        grad_logits->plane(c)[i] += scale * (probabilities.plane(c)[i] - target) / n;
      }
    }
  }
  return sum / n;
}

double js_consistency(const Tensor3& p_image, const Tensor3& p_rearranged,
                      Tensor3* grad_logits_image, Tensor3* grad_logits_rearranged, double scale) {
  if (!p_image.same_shape(p_rearranged)) throw ShapeMismatch("js_consistency: shape mismatch");
  const std::size_t plane = p_image.plane_size();
  const std::size_t classes = p_image.channels();
  const double n = static_cast<double>(plane);
  double sum = 0.0;
  for (std::size_t i = 0; i < plane; ++i) {
    double px = 0.0;
    for (std::size_t c = 0; c < classes; ++c) {
      const double p = p_image.plane(c)[i];
      const double q = p_rearranged.plane(c)[i];
      const double lm = clamp_log(0.5 * (p + q));
      const double tp = p > 0.0 ? p * (clamp_log(p) - lm) : 0.0;
      const double tq = q > 0.0 ? q * (clamp_log(q) - lm) : 0.0;
      px += tp + tq;
    }
    sum += 0.5 * px;
  }

  // d/dp_c of the pixel term is 1/2 log(p_c / m_c); the remaining pieces cancel.
  auto branch_grad = [&](const Tensor3& mine, const Tensor3& other, Tensor3* out) {
    if (!out) return;
    ensure(out, mine);
    Tensor3 gp(classes, mine.height(), mine.width());
    for (std::size_t c = 0; c < classes; ++c) {
      for (std::size_t i = 0; i < plane; ++i) {
        const double p = mine.plane(c)[i];
        const double m = 0.5 * (p + other.plane(c)[i]);
        gp.plane(c)[i] = scale * 0.5 * (clamp_log(p) - clamp_log(m)) / n;
      }
    }
    *out += softmax_backward(mine, gp);
  };
  branch_grad(p_image, p_rearranged, grad_logits_image);
  branch_grad(p_rearranged, p_image, grad_logits_rearranged);
  return sum / n;
}

LossBreakdown total_loss(double task_image, std::optional<double> task_rearranged,
                         const mla::AlignmentBreakdown& mla, double pc, double lambda_pc) {
  LossBreakdown lb;
  lb.task_image = task_image;
  lb.task_rearranged = task_rearranged;
  lb.mla_total = mla.total;
  lb.pc = pc;
  lb.lambda_pc = lambda_pc;
  const double task = task_rearranged ? 0.5 * (task_image + *task_rearranged) : task_image;
  lb.total = task + mla.total + lambda_pc * pc;
  return lb;
}

}  // namespace srma::objective
