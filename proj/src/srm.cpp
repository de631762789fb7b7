#include "srma/srm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace srma::srm {

std::vector<double> sample_dirichlet(Rng& rng, std::size_t k, double alpha) {
  if (k == 0) throw std::invalid_argument("Dirichlet dimension must be >= 1");
  if (!(alpha > 0.0)) throw std::invalid_argument("Dirichlet concentration must be > 0");
  if (k == 1) return {1.0};

  // Gamma(alpha) = Gamma(alpha + 1) * U^(1/alpha); keep the logarithm.
  std::gamma_distribution<double> boosted(alpha + 1.0, 1.0);
  std::uniform_real_distribution<double> unit(std::numeric_limits<double>::min(), 1.0);
  std::vector<double> log_g(k);
  for (auto& lg : log_g) {
    const double g = boosted(rng);
    const double u = unit(rng);
    lg = std::log(std::max(g, std::numeric_limits<double>::min())) + std::log(u) / alpha;
  }
  const double top = *std::max_element(log_g.begin(), log_g.end());
  std::vector<double> w(k);
  double sum = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    w[i] = std::exp(log_g[i] - top);
    sum += w[i];
  }
  for (auto& v : w) v /= sum;
  return w;
}

MixWeights sample_mix_weights(Rng& rng, std::span<const int> present_categories, double alpha) {
  if (present_categories.empty()) throw std::invalid_argument("no categories to mix");
  MixWeights mw;
  mw.alpha = alpha;
  mw.categories.assign(present_categories.begin(), present_categories.end());
  mw.weights.reserve(mw.categories.size());
  for (std::size_t i = 0; i < mw.categories.size(); ++i) {
    mw.weights.push_back(sample_dirichlet(rng, mw.categories.size(), alpha));
  }
  return mw;
}

stats::RegionStats synthesize_distribution(std::span<const stats::RegionStats> stats,
                                           std::span<const double> weights) {
  if (stats.size() != weights.size() || stats.empty()) {
    throw std::invalid_argument("synthesize_distribution: stats/weights size mismatch");
  }
  const std::size_t dim = stats.front().mean.size();
  stats::RegionStats out;
  out.mean.assign(dim, 0.0);
  out.std.assign(dim, 0.0);
  for (std::size_t i = 0; i < stats.size(); ++i) {
    if (stats[i].mean.size() != dim || stats[i].std.size() != dim) {
      throw std::invalid_argument("synthesize_distribution: channel count mismatch");
    }
    for (std::size_t d = 0; d < dim; ++d) {
      out.mean[d] += weights[i] * stats[i].mean[d];
      out.std[d] += weights[i] * stats[i].std[d];
    }
  }
  return out;
}

stats::PixelSet adain_transfer(const stats::PixelSet& region, const stats::RegionStats& src,
                               const stats::RegionStats& dst) {
  stats::PixelSet out = region;
  for (std::size_t i = 0; i < out.count(); ++i) {
    auto r = out.row(i);
    for (std::size_t d = 0; d < out.dim; ++d) {
      r[d] = dst.std[d] * (r[d] - src.mean[d]) / src.std[d] + dst.mean[d];
    }
  }
  return out;
}

FeatureMap rearrange(const FeatureMap& shallow, const LabelMap& labels, Rng& rng, double alpha,
                     std::vector<RegionTrace>* trace) {
  if (shallow.layer != 0) throw std::invalid_argument("rearrange expects layer-0 features");
  const Tensor3& f = shallow.values;
  stats::require_same_spatial(f, labels);

  const auto present = stats::present_categories(labels);
  FeatureMap out = shallow;
  if (present.empty()) return out;

  std::vector<stats::RegionStats> original;
  original.reserve(present.size());
  for (int c : present) original.push_back(stats::region_moments(f, labels, c));

  const MixWeights mix = sample_mix_weights(rng, present, alpha);
  if (trace) trace->clear();

  const std::size_t plane = f.plane_size();
  for (std::size_t i = 0; i < present.size(); ++i) {
    const stats::RegionStats& src = original[i];
    stats::RegionStats dst = synthesize_distribution(original, mix.weights[i]);
    dst.category = present[i];
    dst.pixel_count = src.pixel_count;
    // Per-channel affine map x -> scale * x + shift.
    for (std::size_t d = 0; d < f.channels(); ++d) {
      const double scale = dst.std[d] / src.std[d];
      const double shift = dst.mean[d] - scale * src.mean[d];
      auto in = f.plane(d);
      auto o = out.values.plane(d);
      for (std::size_t p = 0; p < plane; ++p) {
        if (static_cast<int>(labels[p]) == present[i]) o[p] = scale * in[p] + shift;
      }
    }
    if (trace) trace->push_back({src, mix.weights[i], std::move(dst)});
  }
  return out;
}

}  // namespace srma::srm
