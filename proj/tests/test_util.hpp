#pragma once

#include <gtest/gtest.h>

#include <random>
#include <span>
#include <vector>

#include "csn/tensor.hpp"

namespace csn::testing {

inline Tensor uniform(Shape shape, std::mt19937_64& rng, double lo = -2.0, double hi = 2.0, bool grad = false) {
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = d(rng);
  return Tensor(std::move(shape), std::move(v), grad);
}

inline void expect_all_near(const Tensor& t, std::span<const double> expected, double tol = 1e-12) {
  ASSERT_EQ(t.numel(), expected.size());
  for (std::size_t i = 0; i < expected.size(); ++i) EXPECT_NEAR(t.data()[i], expected[i], tol) << "at " << i;
}

inline void expect_all_near(const Tensor& t, const std::vector<double>& expected, double tol = 1e-12) {
  expect_all_near(t, std::span<const double>(expected), tol);
}

}  // namespace csn::testing
