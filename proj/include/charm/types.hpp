#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace charm {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

// Error taxonomy. Exit codes in the CLI map GeometryError -> 2,
// BudgetError -> 3, everything parse/format related -> 1.
struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct GeometryError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct BudgetError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ValueError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// One hair-language "word": cross-section position plus the two
// diamond diagonal lengths.
struct ControlPoint {
  Vec3 position{0.0, 0.0, 0.0};
  double width = 0.0;      // full diagonal along the normal direction
  double thickness = 0.0;  // full diagonal along normal x tangent

  bool operator==(const ControlPoint&) const = default;
};

// Ordered control points, index 0 = root.
struct HairCard {
  std::vector<ControlPoint> points;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
};

struct Hairstyle {
  std::vector<HairCard> cards;

  std::size_t total_points() const {
    std::size_t n = 0;
    for (const auto& c : cards) n += c.size();
    return n;
  }
};

// Per-point orthonormal frame for one card.
struct FrameField {
  std::vector<Vec3> tangents;        // tau_i, root->tip
  std::vector<Vec3> width_dirs;      // n_i (solved normal field)
  std::vector<Vec3> thickness_dirs;  // psi_i = normalize(n_i x tau_i)
};

struct Triangle {
  std::uint32_t v[3];
};

struct HairMesh {
  std::vector<Vec3> vertices;
  std::vector<Triangle> faces;
  // Control points per card, in order; empty when unknown (e.g. loaded OBJ).
  std::vector<std::size_t> card_sizes;
};

struct SolverConfig {
  double smoothness_weight = 1.0;  // lambda
  int pca_window = 5;              // clamped to card length
};

}  // namespace charm
