#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "srma/tensor.hpp"

namespace srma::stats {

/// Feature vectors gathered from a set of pixels, stored pixel-major (count x dim).
struct PixelSet {
  std::size_t dim = 0;
  std::vector<double> values;

  std::size_t count() const noexcept { return dim == 0 ? 0 : values.size() / dim; }
  bool empty() const noexcept { return values.empty(); }
  std::span<const double> row(std::size_t i) const { return {values.data() + i * dim, dim}; }
  std::span<double> row(std::size_t i) { return {values.data() + i * dim, dim}; }
};

/// Channel-wise style of one semantic region.
struct RegionStats {
  int category = -1;
  std::vector<double> mean;
  std::vector<double> std;
  std::size_t pixel_count = 0;
};

/// Nearest-neighbour resize with center sampling: src = floor((dst + 0.5) * src_size / dst_size).
LabelMap resize_labels(const LabelMap& labels, std::size_t target_h, std::size_t target_w);

/// Categories with at least one pixel, ascending.
std::vector<int> present_categories(const LabelMap& labels);

/// Pixel counts per category (index = category id); ignore pixels are not counted.
std::vector<std::size_t> category_counts(const LabelMap& labels);

/// Feature vectors at positions labelled `category`, in raster order.
PixelSet split_by_semantic(const Tensor3& features, const LabelMap& labels, int category);

/// Mean and population std (floored at kEpsStd) of a pixel set. Throws if the set is empty.
RegionStats moments(const PixelSet& pixels, int category = -1);

/// Moments of the region labelled `category`. Throws AbsentCategory if the region is empty.
RegionStats region_moments(const Tensor3& features, const LabelMap& labels, int category);

/// Global average pooling: per-channel mean over all positions.
std::vector<double> gap(const Tensor3& features);

/// Semantic average pooling: per-channel mean over the region. Throws AbsentCategory.
std::vector<double> sap(const Tensor3& features, const LabelMap& labels, int category);

/// Fraction of all H*W positions labelled `category`; ignore pixels count in the denominator.
double region_ratio(const LabelMap& labels, int category);

void require_same_spatial(const Tensor3& features, const LabelMap& labels);

}  // namespace srma::stats
