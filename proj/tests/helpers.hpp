#pragma once

#include <initializer_list>
#include <random>
#include <vector>

#include "srma/random.hpp"
#include "srma/tensor.hpp"

namespace testing {

inline srma::Tensor3 tensor(std::size_t c, std::size_t h, std::size_t w, std::initializer_list<double> v) {
  srma::Tensor3 t(c, h, w);
  std::size_t i = 0;
  for (double x : v) t.values()[i++] = x;
  return t;
}

inline srma::LabelMap labels(std::size_t h, std::size_t w, int cats, std::initializer_list<int> v) {
  srma::LabelMap l(h, w, cats);
  std::size_t i = 0;
  for (int x : v) l[i++] = static_cast<std::uint8_t>(x);
  return l;
}

inline srma::Tensor3 random_tensor(std::size_t c, std::size_t h, std::size_t w, srma::Rng& rng,
                                   double mean = 0.0, double sd = 1.0) {
  std::normal_distribution<double> n(mean, sd);
  srma::Tensor3 t(c, h, w);
  for (double& x : t.values()) x = n(rng);
  return t;
}

inline srma::LabelMap random_labels(std::size_t h, std::size_t w, int cats, srma::Rng& rng,
                                    double ignore_rate = 0.0) {
  std::uniform_int_distribution<int> u(0, cats - 1);
  std::bernoulli_distribution ig(ignore_rate);
  srma::LabelMap l(h, w, cats);
  for (std::size_t i = 0; i < l.size(); ++i) {
    l[i] = ig(rng) ? srma::kIgnoreLabel : static_cast<std::uint8_t>(u(rng));
  }
  return l;
}

}  // namespace testing
