#pragma once

#include <cmath>
#include <map>
#include <random>
#include <utility>

#include "charm/frames.hpp"
#include "charm/types.hpp"

namespace charm::testutil {

inline HairCard straight_card(int n, const Vec3& start, const Vec3& step, double w = 0.04,
                              double t = 0.02) {
  HairCard card;
  for (int i = 0; i < n; ++i) card.points.push_back({start + i * step, w, t});
  return card;
}

inline HairCard helix_card(int n = 40, double radius = 0.1, double pitch = 0.05,
                           double turns = 2.0) {
  HairCard card;
  for (int i = 0; i < n; ++i) {
    const double s = static_cast<double>(i) / (n - 1);
    const double a = turns * 2.0 * M_PI * s;
    card.points.push_back(
        {Vec3(radius * std::cos(a), pitch * turns * s, radius * std::sin(a)), 0.03, 0.015});
  }
  return card;
}

// Smooth random card: cubic polynomial space curve with random
// coefficients, widths/thicknesses in (0, 0.1].
inline HairCard random_card(std::mt19937_64& rng, int n) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::uniform_real_distribution<double> uw(0.005, 0.1);
  Vec3 c0(0.3 * u(rng), 0.3 * u(rng), 0.3 * u(rng));
  Vec3 c1(0.4 * u(rng), 0.4 * u(rng), 0.4 * u(rng));
  Vec3 c2(0.2 * u(rng), 0.2 * u(rng), 0.2 * u(rng));
  Vec3 c3(0.1 * u(rng), 0.1 * u(rng), 0.1 * u(rng));
  if (c1.norm() < 0.05) c1 = Vec3(0.1, 0.05, 0.0);  // avoid near-degenerate curves
  const double w0 = uw(rng), t0 = uw(rng);
  HairCard card;
  for (int i = 0; i < n; ++i) {
    const double s = static_cast<double>(i) / (n - 1);
    ControlPoint cp;
    cp.position = c0 + s * c1 + s * s * c2 + s * s * s * c3;
    cp.width = w0 * (1.0 - 0.7 * s);
    cp.thickness = t0 * (1.0 - 0.7 * s);
    card.points.push_back(cp);
  }
  return card;
}

// Random card rescaled to fit the normalized model box, so quantization
// never clamps.
inline HairCard boxed_random_card(std::mt19937_64& rng, int n) {
  HairCard card = random_card(rng, n);
  Vec3 lo = card.points.front().position, hi = lo;
  for (const auto& p : card.points) {
    lo = lo.cwiseMin(p.position);
    hi = hi.cwiseMax(p.position);
  }
  const double extent = std::max((hi - lo).maxCoeff(), 1e-9);
  const double scale = std::min(1.0, 0.9 / extent);
  const Vec3 center = 0.5 * (lo + hi);
  for (auto& p : card.points) p.position = scale * (p.position - center);
  return card;
}

// Projected gradient descent on the normal-field objective with the
// anchor fixed; the independent oracle for the linear solver.
inline std::vector<Vec3> pgd_normal_field(const HairCard& card, const SolverConfig& cfg,
                                          int steps = 10000) {
  const auto d = build_data_matrices(card);
  const double lam = effective_smoothness_weight(card, cfg);
  const Vec3 anchor = pca_initial_normal(card, std::min<int>(cfg.pca_window, (int)card.size()));
  const std::size_t n = card.size();
  std::vector<Vec3> nf(n, anchor);
  double lip = 8.0 * lam;
  for (const auto& m : d) lip = std::max(lip, 2.0 * m.operatorNorm() + 8.0 * lam);
  const double eta = 1.0 / lip;
  for (int s = 0; s < steps; ++s) {
    std::vector<Vec3> g(n, Vec3::Zero());
    for (std::size_t i = 0; i < n; ++i) {
      g[i] += 2.0 * d[i] * nf[i];
      if (i > 0) g[i] += 2.0 * lam * (nf[i] - nf[i - 1]);
      if (i + 1 < n) g[i] += 2.0 * lam * (nf[i] - nf[i + 1]);
    }
    for (std::size_t i = 1; i < n; ++i) {
      nf[i] -= eta * g[i];
      const double nn = nf[i].norm();
      if (nn > 1e-12) nf[i] /= nn;
    }
  }
  return nf;
}

// Edge-incidence watertightness oracle: every undirected edge bordered
// by exactly two faces.
inline bool edges_all_twice(const HairMesh& mesh) {
  std::map<std::pair<std::uint32_t, std::uint32_t>, int> count;
  for (const auto& f : mesh.faces) {
    for (int k = 0; k < 3; ++k) {
      std::uint32_t a = f.v[k], b = f.v[(k + 1) % 3];
      if (a > b) std::swap(a, b);
      ++count[{a, b}];
    }
  }
  for (const auto& [e, c] : count)
    if (c != 2) return false;
  return !count.empty();
}

// Signed volume (divergence theorem); positive for consistently
// outward-oriented closed meshes.
inline double signed_volume(const HairMesh& mesh) {
  double vol = 0.0;
  for (const auto& f : mesh.faces) {
    const Vec3& a = mesh.vertices[f.v[0]];
    const Vec3& b = mesh.vertices[f.v[1]];
    const Vec3& c = mesh.vertices[f.v[2]];
    vol += a.dot(b.cross(c)) / 6.0;
  }
  return vol;
}

}  // namespace charm::testutil
