#pragma once

#include <algorithm>
#include <cmath>
#include <random>

#include "dcnet/boxes.hpp"
#include "dcnet/tensor.hpp"

namespace dcnet::testing {

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> d(0.0, scale);
  std::vector<double> v(static_cast<std::size_t>(shape_numel(shape)));
  for (double& x : v) x = d(rng);
  return Tensor(std::move(shape), std::move(v));
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return INFINITY;
  double m = 0.0;
  for (std::size_t i = 0; i < a.data().size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

inline RoIBox box(double x1, double y1, double x2, double y2, std::optional<int> cls = std::nullopt,
                  std::optional<double> score = std::nullopt) {
  RoIBox b;
  b.x1 = x1;
  b.y1 = y1;
  b.x2 = x2;
  b.y2 = y2;
  b.class_id = cls;
  b.score = score;
  return b;
}

}  // namespace dcnet::testing
