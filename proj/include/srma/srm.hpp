#pragma once

// Semantic rearrangement of shallow features: every region's channel moments are
// replaced by a Dirichlet mixture of the moments of the regions present in the sample.

#include <span>
#include <vector>

#include "srma/random.hpp"
#include "srma/semantic_stats.hpp"
#include "srma/tensor.hpp"

namespace srma::srm {

inline constexpr double kDefaultAlpha = 1.0 / 64.0;

/// One simplex weight vector per target category, indexed over `categories`.
struct MixWeights {
  std::vector<int> categories;
  std::vector<std::vector<double>> weights;
  double alpha = kDefaultAlpha;
};

/// Symmetric Dirichlet(k, alpha) draw. Sampled in log space so tiny alpha cannot underflow.
std::vector<double> sample_dirichlet(Rng& rng, std::size_t k, double alpha);

MixWeights sample_mix_weights(Rng& rng, std::span<const int> present_categories, double alpha);

/// Convex combination of means and of stds (stds are mixed directly, not variances).
stats::RegionStats synthesize_distribution(std::span<const stats::RegionStats> stats,
                                           std::span<const double> weights);

/// Per-channel moment transfer: dst.std * (x - src.mean) / src.std + dst.mean.
stats::PixelSet adain_transfer(const stats::PixelSet& region, const stats::RegionStats& src,
                               const stats::RegionStats& dst);

struct RegionTrace {
  stats::RegionStats original;
  std::vector<double> weights;
  stats::RegionStats synthesized;
};

/// Rearranges region styles of a layer-0 feature map. Ignore-labelled positions are copied
/// unchanged. When `trace` is non-null it receives one entry per present category.
FeatureMap rearrange(const FeatureMap& shallow, const LabelMap& labels, Rng& rng, double alpha,
                     std::vector<RegionTrace>* trace = nullptr);

}  // namespace srma::srm
