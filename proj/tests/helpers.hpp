#pragma once

#include <vector>

#include "clst/labels.hpp"
#include "clst/rng.hpp"
#include "clst/tensor.hpp"

namespace clst::testing {

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -2.0, double hi = 2.0,
                            bool requires_grad = false) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

/// Random per-pixel distributions over the last axis.
inline Tensor random_probs(std::size_t h, std::size_t w, std::size_t c, Rng& rng) {
  std::vector<double> v(h * w * c);
  for (std::size_t i = 0; i < h * w; ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < c; ++k) s += v[i * c + k] = rng.uniform(0.01, 1.0);
    for (std::size_t k = 0; k < c; ++k) v[i * c + k] /= s;
  }
  return Tensor::from({h, w, c}, std::move(v));
}

inline LabelMap random_labels(std::size_t h, std::size_t w, std::size_t c, Rng& rng,
                              double ignore_rate = 0.0) {
  LabelMap m(h, w);
  for (auto& l : m.labels)
    l = rng.bernoulli(ignore_rate) ? kIgnore : static_cast<std::uint8_t>(rng.index(c));
  return m;
}

}  // namespace clst::testing
