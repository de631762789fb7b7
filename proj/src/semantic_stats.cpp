#include "srma/semantic_stats.hpp"

#include <algorithm>
#include <cmath>

namespace srma::stats {

void require_same_spatial(const Tensor3& features, const LabelMap& labels) {
  if (features.height() != labels.height() || features.width() != labels.width()) {
    throw ShapeMismatch("label map " + std::to_string(labels.height()) + "x" +
                        std::to_string(labels.width()) + " does not match features " +
                        std::to_string(features.height()) + "x" + std::to_string(features.width()));
  }
}

LabelMap resize_labels(const LabelMap& labels, std::size_t target_h, std::size_t target_w) {
  if (target_h == 0 || target_w == 0) throw std::invalid_argument("resize target must be >= 1");
  LabelMap out(target_h, target_w, labels.num_categories());
  const double sy = static_cast<double>(labels.height()) / static_cast<double>(target_h);
  const double sx = static_cast<double>(labels.width()) / static_cast<double>(target_w);
  for (std::size_t y = 0; y < target_h; ++y) {
    auto src_y = static_cast<std::size_t>(std::floor((static_cast<double>(y) + 0.5) * sy));
    src_y = std::min(src_y, labels.height() - 1);
    for (std::size_t x = 0; x < target_w; ++x) {
      auto src_x = static_cast<std::size_t>(std::floor((static_cast<double>(x) + 0.5) * sx));
      src_x = std::min(src_x, labels.width() - 1);
      out.at(y, x) = labels.at(src_y, src_x);
    }
  }
  return out;
}

std::vector<std::size_t> category_counts(const LabelMap& labels) {
  std::vector<std::size_t> counts(static_cast<std::size_t>(std::max(labels.num_categories(), 0)), 0);
  for (auto v : labels.values()) {
    if (v == kIgnoreLabel) continue;
    if (v >= counts.size()) counts.resize(v + 1u, 0);
    ++counts[v];
  }
  return counts;
}

std::vector<int> present_categories(const LabelMap& labels) {
  std::vector<int> present;
  const auto counts = category_counts(labels);
  for (std::size_t c = 0; c < counts.size(); ++c) {
    if (counts[c] > 0) present.push_back(static_cast<int>(c));
  }
  return present;
}

PixelSet split_by_semantic(const Tensor3& features, const LabelMap& labels, int category) {
  require_same_spatial(features, labels);
  PixelSet out;
  out.dim = features.channels();
  const std::size_t n = features.plane_size();
  for (std::size_t i = 0; i < n; ++i) {
    if (static_cast<int>(labels[i]) != category || labels[i] == kIgnoreLabel) continue;
    for (std::size_t d = 0; d < out.dim; ++d) out.values.push_back(features.plane(d)[i]);
  }
  return out;
}

RegionStats moments(const PixelSet& pixels, int category) {
  const std::size_t n = pixels.count();
  if (n == 0) throw AbsentCategory(category);
  RegionStats s;
  s.category = category;
  s.pixel_count = n;
  s.mean.assign(pixels.dim, 0.0);
  s.std.assign(pixels.dim, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    auto r = pixels.row(i);
    for (std::size_t d = 0; d < pixels.dim; ++d) s.mean[d] += r[d];
  }
  for (auto& m : s.mean) m /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto r = pixels.row(i);
    for (std::size_t d = 0; d < pixels.dim; ++d) {
      const double dv = r[d] - s.mean[d];
      s.std[d] += dv * dv;
    }
  }
  for (auto& v : s.std) v = std::max(std::sqrt(v / static_cast<double>(n)), kEpsStd);
  return s;
}

RegionStats region_moments(const Tensor3& features, const LabelMap& labels, int category) {
  return moments(split_by_semantic(features, labels, category), category);
}

std::vector<double> gap(const Tensor3& features) {
  std::vector<double> out(features.channels(), 0.0);
  const double inv = 1.0 / static_cast<double>(features.plane_size());
  for (std::size_t d = 0; d < features.channels(); ++d) {
    double sum = 0.0;
    for (double v : features.plane(d)) sum += v;
    out[d] = sum * inv;
  }
  return out;
}

std::vector<double> sap(const Tensor3& features, const LabelMap& labels, int category) {
  require_same_spatial(features, labels);
  std::vector<double> out(features.channels(), 0.0);
  std::size_t n = 0;
  const std::size_t plane = features.plane_size();
  for (std::size_t i = 0; i < plane; ++i) {
    if (labels[i] == kIgnoreLabel || static_cast<int>(labels[i]) != category) continue;
    ++n;
    for (std::size_t d = 0; d < out.size(); ++d) out[d] += features.plane(d)[i];
  }
  if (n == 0) throw AbsentCategory(category);
  for (auto& v : out) v /= static_cast<double>(n);
  return out;
}

double region_ratio(const LabelMap& labels, int category) {
  if (labels.size() == 0) return 0.0;
  std::size_t n = 0;
  for (auto v : labels.values()) {
    if (v != kIgnoreLabel && static_cast<int>(v) == category) ++n;
  }
  return static_cast<double>(n) / static_cast<double>(labels.size());
}

}  // namespace srma::stats
