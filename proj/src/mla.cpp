#include "srma/mla.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>

#include "srma/semantic_stats.hpp"

namespace srma::mla {

namespace {

void require_match(const Tensor3& a, const Tensor3& b) {
  if (!a.same_shape(b)) throw ShapeMismatch("alignment inputs differ in shape");
}

void ensure_grad(Tensor3* grad, const Tensor3& like) {
  if (grad && grad->empty()) *grad = Tensor3(like.channels(), like.height(), like.width());
  if (grad && !grad->same_shape(like)) throw ShapeMismatch("gradient buffer shape");
}

}  // namespace

Tensor3 standardize_channels(const Tensor3& x) {
  Tensor3 y(x.channels(), x.height(), x.width());
  const double n = static_cast<double>(x.plane_size());
  for (std::size_t c = 0; c < x.channels(); ++c) {
    auto in = x.plane(c);
    // A constant channel maps to exactly zero; the summed mean can be off by an ulp.
    if (std::adjacent_find(in.begin(), in.end(), std::not_equal_to<>()) == in.end()) continue;
    double mean = 0.0;
    for (double v : in) mean += v;
    mean /= n;
    double var = 0.0;
    for (double v : in) var += (v - mean) * (v - mean);
    const double sd = std::max(std::sqrt(var / n), kEpsStd);
    auto out = y.plane(c);
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = (in[i] - mean) / sd;
  }
  return y;
}

Tensor3 standardize_channels_backward(const Tensor3& input, const Tensor3& output,
                                      const Tensor3& grad_output) {
  Tensor3 grad(input.channels(), input.height(), input.width());
  const double n = static_cast<double>(input.plane_size());
  for (std::size_t c = 0; c < input.channels(); ++c) {
    auto x = input.plane(c);
    auto y = output.plane(c);
    auto dy = grad_output.plane(c);
    double mean = 0.0;
    for (double v : x) mean += v;
    mean /= n;
    double var = 0.0;
    for (double v : x) var += (v - mean) * (v - mean);
    const double raw_sd = std::sqrt(var / n);
    const bool floored = raw_sd < kEpsStd;
    const double sd = floored ? kEpsStd : raw_sd;

    double mean_dy = 0.0;
    double mean_dy_y = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      mean_dy += dy[i];
      mean_dy_y += dy[i] * y[i];
    }
    mean_dy /= n;
    mean_dy_y /= n;
    auto dx = grad.plane(c);
    for (std::size_t i = 0; i < x.size(); ++i) {
      dx[i] = floored ? (dy[i] - mean_dy) / sd : (dy[i] - mean_dy - y[i] * mean_dy_y) / sd;
    }
  }
  return grad;
}

FeatureMap style_eliminate(const FeatureMap& shallow) {
  if (shallow.layer != 0) throw std::invalid_argument("style elimination expects layer-0 features");
  return {standardize_channels(shallow.values), 0};
}

double global_term(const Tensor3& features, const Tensor3& neutral, Tensor3* grad, double scale) {
  require_match(features, neutral);
  ensure_grad(grad, features);
  const auto mu = stats::gap(features);
  const auto mu_n = stats::gap(neutral);
  const double dim = static_cast<double>(features.channels());
  double value = 0.0;
  for (std::size_t d = 0; d < mu.size(); ++d) {
    const double diff = mu[d] - mu_n[d];
    value += diff * diff;
    if (grad) {
      const double g = scale * 2.0 * diff / (dim * static_cast<double>(features.plane_size()));
      for (double& v : grad->plane(d)) v += g;
    }
  }
  return value / dim;
}

double regional_term(const Tensor3& features, const Tensor3& neutral, const LabelMap& labels,
                     Tensor3* grad, double scale) {
  require_match(features, neutral);
  stats::require_same_spatial(features, labels);
  ensure_grad(grad, features);
  const std::size_t dim = features.channels();
  const std::size_t plane = features.plane_size();
  const auto counts = stats::category_counts(labels);
  const std::size_t ncat = counts.size();

  // Region sums for both maps in one pass.
  std::vector<double> sum_f(ncat * dim, 0.0);
  std::vector<double> sum_n(ncat * dim, 0.0);
  for (std::size_t d = 0; d < dim; ++d) {
    auto f = features.plane(d);
    auto n = neutral.plane(d);
    for (std::size_t p = 0; p < plane; ++p) {
      const auto c = labels[p];
      if (c == kIgnoreLabel) continue;
      sum_f[c * dim + d] += f[p];
      sum_n[c * dim + d] += n[p];
    }
  }

  double value = 0.0;
  std::vector<double> diffs(ncat * dim, 0.0);
  for (std::size_t c = 0; c < ncat; ++c) {
    if (counts[c] == 0) continue;
    const double cnt = static_cast<double>(counts[c]);
    const double omega = cnt / static_cast<double>(plane);
    double sq = 0.0;
    for (std::size_t d = 0; d < dim; ++d) {
      const double diff = (sum_f[c * dim + d] - sum_n[c * dim + d]) / cnt;
      diffs[c * dim + d] = diff;
      sq += diff * diff;
    }
    value += omega * sq / static_cast<double>(dim);
  }

  if (grad) {
    // omega_c / n_c = 1 / plane, so every labelled pixel gets 2 * diff_c / (D * plane).
    const double k = scale * 2.0 / (static_cast<double>(dim) * static_cast<double>(plane));
    for (std::size_t d = 0; d < dim; ++d) {
      auto g = grad->plane(d);
      for (std::size_t p = 0; p < plane; ++p) {
        const auto c = labels[p];
        if (c == kIgnoreLabel) continue;
        g[p] += k * diffs[c * dim + d];
      }
    }
  }
  return value;
}

double local_term(const Tensor3& features, const Tensor3& neutral, Tensor3* grad, double scale) {
  require_match(features, neutral);
  ensure_grad(grad, features);
  const double norm =
      static_cast<double>(features.channels()) * static_cast<double>(features.plane_size());
  const auto& f = features.values();
  const auto& n = neutral.values();
  double value = 0.0;
  for (std::size_t i = 0; i < f.size(); ++i) {
    const double diff = f[i] - n[i];
    value += diff * diff;
  }
  if (grad) {
    auto& g = grad->values();
    const double k = scale * 2.0 / norm;
    for (std::size_t i = 0; i < f.size(); ++i) g[i] += k * (f[i] - n[i]);
  }
  return value / norm;
}

double global_alignment(const Tensor3& f_image, const Tensor3& f_rearranged, const Tensor3& f_neutral) {
  return global_term(f_image, f_neutral) + global_term(f_rearranged, f_neutral);
}

double regional_alignment(const Tensor3& f_image, const Tensor3& f_rearranged,
                          const Tensor3& f_neutral, const LabelMap& labels) {
  return regional_term(f_image, f_neutral, labels) + regional_term(f_rearranged, f_neutral, labels);
}

double local_alignment(const Tensor3& f_image, const Tensor3& f_rearranged, const Tensor3& f_neutral) {
  return local_term(f_image, f_neutral) + local_term(f_rearranged, f_neutral);
}

AlignmentBreakdown mla_loss(std::span<const LayerInputs> layers, std::span<const double> lambda,
                            LevelMask mask, std::vector<LayerGrads>* grads) {
  if (layers.size() != lambda.size()) {
    throw std::invalid_argument("mla_loss: one lambda per layer required");
  }
  AlignmentBreakdown out;
  out.lambda.assign(lambda.begin(), lambda.end());
  out.layers.resize(layers.size());
  if (grads) {
    grads->clear();
    grads->resize(layers.size());
  }

  for (std::size_t l = 0; l < layers.size(); ++l) {
    const LayerInputs& in = layers[l];
    if (!in.image || !in.neutral) throw std::invalid_argument("mla_loss: missing features");
    LayerAlignment& a = out.layers[l];
    const double w = lambda[l];

    const Tensor3* branches[2] = {in.image, in.rearranged};
    for (int k = 0; k < 2; ++k) {
      const Tensor3* f = branches[k];
      if (!f) continue;
      Tensor3* g = nullptr;
      if (grads && w != 0.0) g = k == 0 ? &(*grads)[l].image : &(*grads)[l].rearranged;
      if (mask.global) a.global += global_term(*f, *in.neutral, g, w);
      if (mask.regional) {
        if (!in.labels) throw std::invalid_argument("mla_loss: regional level needs labels");
        a.regional += regional_term(*f, *in.neutral, *in.labels, g, w);
      }
      if (mask.local) a.local += local_term(*f, *in.neutral, g, w);
      if (g && g->empty()) *g = Tensor3(f->channels(), f->height(), f->width());
    }
    out.total += w * a.sum();
  }
  return out;
}

}  // namespace srma::mla
