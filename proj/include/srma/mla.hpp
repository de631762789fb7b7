#pragma once

// Multi-level alignment of deep features against frozen domain-neutral features:
// global (GAP centers), regional (SAP centers weighted by region ratio) and local
// (per-pixel) squared distances, each divided by the channel count.

#include <array>
#include <span>
#include <vector>

#include "srma/tensor.hpp"

namespace srma::mla {

inline constexpr std::array<double, 4> kDefaultLambda{0.4, 0.6, 0.8, 1.0};

/// Which alignment levels contribute; disabled levels report 0.
struct LevelMask {
  bool global = true;
  bool regional = true;
  bool local = true;
};

struct LayerAlignment {
  double global = 0.0;
  double regional = 0.0;
  double local = 0.0;
  double sum() const noexcept { return global + regional + local; }
};

struct AlignmentBreakdown {
  std::vector<LayerAlignment> layers;
  std::vector<double> lambda;
  double total = 0.0;
};

/// Parameter-free instance normalisation of shallow features: per channel
/// (x - mean) / max(std, kEpsStd) over all positions.
FeatureMap style_eliminate(const FeatureMap& shallow);

Tensor3 standardize_channels(const Tensor3& x);

/// Backward of standardize_channels given its input, output and the output gradient.
Tensor3 standardize_channels_backward(const Tensor3& input, const Tensor3& output,
                                      const Tensor3& grad_output);

// Single-branch terms. When `grad` is non-null, scale * d(term)/d(features) is added to it.
double global_term(const Tensor3& features, const Tensor3& neutral, Tensor3* grad = nullptr,
                   double scale = 1.0);
double regional_term(const Tensor3& features, const Tensor3& neutral, const LabelMap& labels,
                     Tensor3* grad = nullptr, double scale = 1.0);
double local_term(const Tensor3& features, const Tensor3& neutral, Tensor3* grad = nullptr,
                  double scale = 1.0);

// Two-branch forms summing over the original and rearranged features.
double global_alignment(const Tensor3& f_image, const Tensor3& f_rearranged, const Tensor3& f_neutral);
double regional_alignment(const Tensor3& f_image, const Tensor3& f_rearranged,
                          const Tensor3& f_neutral, const LabelMap& labels);
double local_alignment(const Tensor3& f_image, const Tensor3& f_rearranged, const Tensor3& f_neutral);

/// One deep layer's inputs. `rearranged` may be null when the rearranged branch is disabled.
struct LayerInputs {
  const Tensor3* image = nullptr;
  const Tensor3* rearranged = nullptr;
  const Tensor3* neutral = nullptr;
  const LabelMap* labels = nullptr;  // resized to the layer's spatial size
};

/// Gradients of the weighted total with respect to each branch.
struct LayerGrads {
  Tensor3 image;
  Tensor3 rearranged;
};

/// Weighted multi-layer alignment. `lambda` must have one entry per layer.
AlignmentBreakdown mla_loss(std::span<const LayerInputs> layers, std::span<const double> lambda,
                            LevelMask mask = {}, std::vector<LayerGrads>* grads = nullptr);

}  // namespace srma::mla
