#include "charm/card_mesh.hpp"

#include <cmath>

namespace charm {
namespace {

constexpr double kDiagonalTol = 1e-4;  // max diagonal-midpoint mismatch

inline std::uint32_t u32(std::size_t v) { return static_cast<std::uint32_t>(v); }

}  // namespace

std::vector<Triangle> canonical_card_faces(std::size_t n) {
  std::vector<Triangle> faces;
  faces.reserve(8 * (n - 1) + 4);
  // Diamond perimeter in cyclic order: +w, +t, -w, -t (slots 0, 2, 1, 3).
  static const int ring[4] = {0, 2, 1, 3};
  for (std::size_t i = 0; i + 1 < n; ++i) {
    const std::uint32_t a = u32(4 * i), b = u32(4 * (i + 1));
    for (int e = 0; e < 4; ++e) {
      const std::uint32_t su = ring[e], sv = ring[(e + 1) % 4];
      // quad (u, v) -> (u', v'), wound outward
      faces.push_back({a + su, b + sv, a + sv});
      faces.push_back({a + su, b + su, b + sv});
    }
  }
  // Caps split along the width diagonal (slots 0-1).
  const std::uint32_t t = u32(4 * (n - 1));
  faces.push_back({0, 2, 1});
  faces.push_back({0, 1, 3});
  faces.push_back({t + 0, t + 1, t + 2});
  faces.push_back({t + 0, t + 3, t + 1});
  return faces;
}

HairMesh card_to_mesh(const HairCard& card, const FrameField& frames) {
  const std::size_t n = card.size();
  if (n < 2) throw GeometryError("card_to_mesh: card needs >= 2 points");
  if (frames.width_dirs.size() != n || frames.thickness_dirs.size() != n)
    throw GeometryError("card_to_mesh: frame size mismatch");

  HairMesh mesh;
  mesh.vertices.reserve(4 * n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& cp = card.points[i];
    const Vec3& nrm = frames.width_dirs[i];
    const Vec3& psi = frames.thickness_dirs[i];
    mesh.vertices.push_back(cp.position + 0.5 * cp.width * nrm);
    mesh.vertices.push_back(cp.position - 0.5 * cp.width * nrm);
    mesh.vertices.push_back(cp.position + 0.5 * cp.thickness * psi);
    mesh.vertices.push_back(cp.position - 0.5 * cp.thickness * psi);
  }
  mesh.faces = canonical_card_faces(n);
  mesh.card_sizes = {n};
  return mesh;
}

HairMesh card_to_mesh(const HairCard& card, const SolverConfig& cfg) {
  return card_to_mesh(card, compute_frames(card, cfg));
}

HairMesh style_to_mesh(const Hairstyle& style, const SolverConfig& cfg) {
  HairMesh out;
  for (const auto& card : style.cards) {
    HairMesh m = card_to_mesh(card, cfg);
    const std::uint32_t base = u32(out.vertices.size());
    out.vertices.insert(out.vertices.end(), m.vertices.begin(), m.vertices.end());
    for (auto f : m.faces) out.faces.push_back({f.v[0] + base, f.v[1] + base, f.v[2] + base});
    out.card_sizes.push_back(card.size());
  }
  return out;
}

HairCard mesh_to_card(const HairMesh& mesh) {
  const std::size_t nv = mesh.vertices.size();
  if (nv < 8 || nv % 4 != 0)
    throw GeometryError("mesh_to_card: malformed unit (cross-section corner count != 4)");
  const std::size_t n = nv / 4;

  HairCard card;
  card.points.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3& v0 = mesh.vertices[4 * i + 0];
    const Vec3& v1 = mesh.vertices[4 * i + 1];
    const Vec3& v2 = mesh.vertices[4 * i + 2];
    const Vec3& v3 = mesh.vertices[4 * i + 3];
    const Vec3 mid_w = 0.5 * (v0 + v1);
    const Vec3 mid_t = 0.5 * (v2 + v3);
    if ((mid_w - mid_t).norm() > kDiagonalTol)
      throw GeometryError("mesh_to_card: malformed unit (diagonals do not intersect)");
    ControlPoint cp;
    cp.position = 0.25 * (v0 + v1 + v2 + v3);
    cp.width = (v0 - v1).norm();
    cp.thickness = (v2 - v3).norm();
    card.points.push_back(cp);
  }
  return card;
}

double token_compression_ratio(const Hairstyle& style) {
  if (style.cards.empty()) throw ValueError("token_compression_ratio: empty hairstyle");
  double param_scalars = 0.0, mesh_scalars = 0.0;
  for (const auto& card : style.cards) {
    const double n = static_cast<double>(card.size());
    param_scalars += 5.0 * n;
    mesh_scalars += 3.0 * (4.0 * n) + 3.0 * (8.0 * (n - 1.0) + 4.0);
  }
  return param_scalars / mesh_scalars;
}

}  // namespace charm
