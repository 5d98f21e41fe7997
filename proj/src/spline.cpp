#include "charm/spline.hpp"

#include <algorithm>
#include <cmath>

namespace charm {

CubicSpline::CubicSpline(std::vector<double> xs, std::vector<double> ys)
    : x_(std::move(xs)), y_(std::move(ys)) {
  const std::size_t n = x_.size();
  if (n < 2 || y_.size() != n) throw ValueError("CubicSpline: need >= 2 matching knots");
  for (std::size_t i = 0; i + 1 < n; ++i)
    if (x_[i + 1] <= x_[i]) throw ValueError("CubicSpline: x not strictly increasing");

  m_.assign(n, 0.0);
  if (n == 2) return;  // linear

  // tridiagonal solve for natural boundary conditions (m_0 = m_{n-1} = 0)
  std::vector<double> diag(n, 0.0), rhs(n, 0.0), upper(n, 0.0);
  for (std::size_t i = 1; i + 1 < n; ++i) {
    const double h0 = x_[i] - x_[i - 1];
    const double h1 = x_[i + 1] - x_[i];
    diag[i] = 2.0 * (h0 + h1);
    upper[i] = h1;
    rhs[i] = 6.0 * ((y_[i + 1] - y_[i]) / h1 - (y_[i] - y_[i - 1]) / h0);
  }
  for (std::size_t i = 2; i + 1 < n; ++i) {
    const double h0 = x_[i] - x_[i - 1];
    const double w = h0 / diag[i - 1];
    diag[i] -= w * upper[i - 1];
    rhs[i] -= w * rhs[i - 1];
  }
  for (std::size_t i = n - 2; i >= 1; --i) {
    m_[i] = (rhs[i] - upper[i] * m_[i + 1]) / diag[i];
    if (i == 1) break;
  }
}

double CubicSpline::operator()(double x) const {
  const std::size_t n = x_.size();
  std::size_t k = 0;
  if (x >= x_[n - 2]) {
    k = n - 2;
  } else if (x > x_[0]) {
    k = static_cast<std::size_t>(std::upper_bound(x_.begin(), x_.end(), x) - x_.begin()) - 1;
  }
  const double h = x_[k + 1] - x_[k];
  const double a = (x_[k + 1] - x) / h;
  const double b = (x - x_[k]) / h;
  return a * y_[k] + b * y_[k + 1] +
         ((a * a * a - a) * m_[k] + (b * b * b - b) * m_[k + 1]) * h * h / 6.0;
}

HairCard resample_card(const HairCard& card, std::size_t target) {
  if (target < 2) throw ValueError("resample_card: target must be >= 2");

  // collapse duplicate consecutive positions so arc length is strict
  HairCard clean;
  for (const auto& p : card.points) {
    if (clean.points.empty() ||
        (clean.points.back().position - p.position).norm() > 1e-12)
      clean.points.push_back(p);
  }
  if (clean.size() < 2) throw GeometryError("resample_card: degenerate card");
  if (clean.size() == target) return clean;

  const std::size_t n = clean.size();
  std::vector<double> s(n, 0.0);
  for (std::size_t i = 1; i < n; ++i)
    s[i] = s[i - 1] + (clean.points[i].position - clean.points[i - 1].position).norm();

  std::array<std::vector<double>, 5> attr;
  for (auto& a : attr) a.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    attr[0][i] = clean.points[i].position.x();
    attr[1][i] = clean.points[i].position.y();
    attr[2][i] = clean.points[i].position.z();
    attr[3][i] = clean.points[i].width;
    attr[4][i] = clean.points[i].thickness;
  }
  std::array<CubicSpline, 5> splines = {
      CubicSpline(s, attr[0]), CubicSpline(s, attr[1]), CubicSpline(s, attr[2]),
      CubicSpline(s, attr[3]), CubicSpline(s, attr[4])};

  HairCard out;
  out.points.reserve(target);
  for (std::size_t i = 0; i < target; ++i) {
    const double si = s.back() * static_cast<double>(i) / static_cast<double>(target - 1);
    ControlPoint cp;
    if (i == 0) {
      cp = clean.points.front();
    } else if (i + 1 == target) {
      cp = clean.points.back();
    } else {
      cp.position = Vec3(splines[0](si), splines[1](si), splines[2](si));
      cp.width = std::max(0.0, splines[3](si));
      cp.thickness = std::max(0.0, splines[4](si));
    }
    out.points.push_back(cp);
  }
  return out;
}

}  // namespace charm
