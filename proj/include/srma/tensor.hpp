#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace srma {

/// Label value excluded from every region, loss and confusion-matrix cell.
inline constexpr std::uint8_t kIgnoreLabel = 255;

/// Floor applied to every standard deviation (region moments, style elimination).
inline constexpr double kEpsStd = 1e-5;

class ShapeMismatch : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class AbsentCategory : public std::runtime_error {
 public:
  explicit AbsentCategory(int category)
      : std::runtime_error("category " + std::to_string(category) + " has no pixels"),
        category_(category) {}
  int category() const noexcept { return category_; }

 private:
  int category_;
};

/// Dense channels x height x width array stored plane by plane.
class Tensor3 {
 public:
  Tensor3() = default;
  Tensor3(std::size_t channels, std::size_t height, std::size_t width, double fill = 0.0)
      : channels_(channels), height_(height), width_(width),
        data_(channels * height * width, fill) {}

  std::size_t channels() const noexcept { return channels_; }
  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t plane_size() const noexcept { return height_ * width_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& at(std::size_t c, std::size_t h, std::size_t w) {
    return data_[(c * height_ + h) * width_ + w];
  }
  double at(std::size_t c, std::size_t h, std::size_t w) const {
    return data_[(c * height_ + h) * width_ + w];
  }

  std::span<double> plane(std::size_t c) {
    return {data_.data() + c * plane_size(), plane_size()};
  }
  std::span<const double> plane(std::size_t c) const {
    return {data_.data() + c * plane_size(), plane_size()};
  }

  std::vector<double>& values() noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }
  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }

  bool same_shape(const Tensor3& other) const noexcept {
    return channels_ == other.channels_ && height_ == other.height_ && width_ == other.width_;
  }

  Tensor3& operator+=(const Tensor3& other);
  bool operator==(const Tensor3& other) const = default;

 private:
  std::size_t channels_ = 0;
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<double> data_;
};

/// Activations at one backbone layer; layer 0 is the shallow (style-heavy) output.
struct FeatureMap {
  Tensor3 values;
  int layer = 0;

  std::size_t channels() const noexcept { return values.channels(); }
  std::size_t height() const noexcept { return values.height(); }
  std::size_t width() const noexcept { return values.width(); }
};

/// Per-pixel category ids in [0, num_categories) or kIgnoreLabel.
class LabelMap {
 public:
  LabelMap() = default;
  LabelMap(std::size_t height, std::size_t width, int num_categories,
           std::uint8_t fill = kIgnoreLabel)
      : height_(height), width_(width), num_categories_(num_categories),
        labels_(height * width, fill) {}

  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t size() const noexcept { return labels_.size(); }
  int num_categories() const noexcept { return num_categories_; }

  std::uint8_t& at(std::size_t h, std::size_t w) { return labels_[h * width_ + w]; }
  std::uint8_t at(std::size_t h, std::size_t w) const { return labels_[h * width_ + w]; }
  std::uint8_t operator[](std::size_t i) const { return labels_[i]; }
  std::uint8_t& operator[](std::size_t i) { return labels_[i]; }

  const std::vector<std::uint8_t>& values() const noexcept { return labels_; }
  std::vector<std::uint8_t>& values() noexcept { return labels_; }

  /// Throws std::out_of_range if a non-ignore label is >= num_categories.
  void validate() const;

  bool operator==(const LabelMap& other) const = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  int num_categories_ = 0;
  std::vector<std::uint8_t> labels_;
};

}  // namespace srma
