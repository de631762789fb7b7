#include "srma/tensor.hpp"

#include <stdexcept>

namespace srma {

Tensor3& Tensor3::operator+=(const Tensor3& other) {
  if (!same_shape(other)) throw ShapeMismatch("Tensor3 += with different shapes");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

void LabelMap::validate() const {
  for (auto v : labels_) {
    if (v != kIgnoreLabel && static_cast<int>(v) >= num_categories_) {
      throw std::out_of_range("label " + std::to_string(v) + " outside [0, " +
                              std::to_string(num_categories_) + ")");
    }
  }
}

}  // namespace srma
