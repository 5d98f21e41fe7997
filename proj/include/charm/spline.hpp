#pragma once

#include <vector>

#include "charm/types.hpp"

namespace charm {

// Natural cubic spline interpolant through (x_i, y_i) with strictly
// increasing x. Evaluation outside [x_0, x_{n-1}] extends the boundary
// cubic segment (used for one-step extrapolation during generation).
class CubicSpline {
 public:
  CubicSpline(std::vector<double> xs, std::vector<double> ys);

  double operator()(double x) const;

 private:
  std::vector<double> x_, y_, m_;  // m_: second derivatives at the knots
};

// Resamples a card to `target` points via per-attribute natural cubic
// splines over the cumulative arc-length parameter; endpoints preserved
// exactly. Duplicate consecutive positions are collapsed beforehand.
HairCard resample_card(const HairCard& card, std::size_t target);

}  // namespace charm
