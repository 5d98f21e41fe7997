#include "charm/frames.hpp"

#include <algorithm>
#include <cmath>

namespace charm {
namespace {

constexpr double kTiny = 1e-12;

std::size_t clamp_index(long i, std::size_t n) {
  if (i < 0) return 0;
  if (i >= static_cast<long>(n)) return n - 1;
  return static_cast<std::size_t>(i);
}

// Deterministic unit vector orthogonal to `dominant`: project out the
// dominant direction from the basis axes in priority order y, x, z.
Vec3 orthogonal_fallback(const Vec3& dominant) {
  static const Vec3 axes[3] = {Vec3::UnitY(), Vec3::UnitX(), Vec3::UnitZ()};
  for (const Vec3& a : axes) {
    Vec3 c = a - a.dot(dominant) * dominant;
    if (c.norm() > 1e-6) return c.normalized();
  }
  return Vec3::UnitY();  // dominant is zero; any direction works
}

Vec3 sign_fix(Vec3 v) {
  int best = 1;  // axis priority y > x > z
  double mx = std::abs(v.y());
  if (std::abs(v.x()) > mx + kTiny) {
    best = 0;
    mx = std::abs(v.x());
  }
  if (std::abs(v.z()) > mx + kTiny) best = 2;
  if (v[best] < 0.0) v = -v;
  return v;
}

}  // namespace

std::vector<Vec3> estimate_tangents(const HairCard& card) {
  const auto& p = card.points;
  const std::size_t n = p.size();
  if (n < 2) throw GeometryError("estimate_tangents: card needs >= 2 points");

  std::vector<Vec3> tangents(n);
  bool any_valid = false;
  for (std::size_t i = 0; i < n; ++i) {
    Vec3 raw;
    if (n >= 5) {
      static const double coef[5] = {-1.0 / 12.0, 2.0 / 3.0, 0.0, -2.0 / 3.0, 1.0 / 12.0};
      raw = Vec3::Zero();
      for (int k = -2; k <= 2; ++k)
        raw += coef[k + 2] * p[clamp_index(static_cast<long>(i) + k, n)].position;
      raw = -raw;  // root->tip sign convention
    } else {
      raw = p[clamp_index(static_cast<long>(i) + 1, n)].position -
            p[clamp_index(static_cast<long>(i) - 1, n)].position;
    }
    if (raw.norm() < kTiny) {
      // stencil cancellation; fall back to the local difference
      raw = p[clamp_index(static_cast<long>(i) + 1, n)].position -
            p[clamp_index(static_cast<long>(i) - 1, n)].position;
    }
    if (raw.norm() < kTiny) {
      tangents[i] = Vec3::Zero();  // resolved below from a neighbor
    } else {
      tangents[i] = raw.normalized();
      any_valid = true;
    }
  }
  if (!any_valid) throw GeometryError("estimate_tangents: degenerate card (all points coincident)");
  for (std::size_t i = 0; i < n; ++i) {
    if (tangents[i].norm() < 0.5) {
      // inherit the nearest valid tangent
      for (std::size_t off = 1; off < n; ++off) {
        if (i >= off && tangents[i - off].norm() > 0.5) {
          tangents[i] = tangents[i - off];
          break;
        }
        if (i + off < n && tangents[i + off].norm() > 0.5) {
          tangents[i] = tangents[i + off];
          break;
        }
      }
    }
  }
  return tangents;
}

std::vector<Mat3> build_data_matrices(const HairCard& card) {
  const auto& p = card.points;
  const std::size_t n = p.size();
  if (n < 2) throw GeometryError("build_data_matrices: card needs >= 2 points");
  std::vector<Mat3> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    Mat3 d = Mat3::Zero();
    if (i > 0) {
      Vec3 dp = p[i].position - p[i - 1].position;
      d += dp * dp.transpose();
    }
    if (i + 1 < n) {
      Vec3 dn = p[i].position - p[i + 1].position;
      d += dn * dn.transpose();
    }
    out[i] = d;
  }
  return out;
}

Vec3 pca_initial_normal(const HairCard& card, int window) {
  if (window < 2) throw ValueError("pca_initial_normal: window must be >= 2");
  const std::size_t n = card.size();
  const std::size_t w = std::min<std::size_t>(static_cast<std::size_t>(window), n);
  if (w < 2) throw GeometryError("pca_initial_normal: card too short");

  Vec3 mean = Vec3::Zero();
  for (std::size_t i = 0; i < w; ++i) mean += card.points[i].position;
  mean /= static_cast<double>(w);
  Mat3 cov = Mat3::Zero();
  for (std::size_t i = 0; i < w; ++i) {
    Vec3 q = card.points[i].position - mean;
    cov += q * q.transpose();
  }
  cov /= static_cast<double>(w);

  Eigen::SelfAdjointEigenSolver<Mat3> eig(cov);
  const Vec3 evals = eig.eigenvalues();  // ascending
  const double scale = std::max(evals[2], kTiny);
  if (evals[1] - evals[0] < 1e-9 * scale || evals[2] < kTiny) {
    // ambiguous smallest eigenspace (collinear or coincident points)
    Vec3 dominant = evals[2] > kTiny ? Vec3(eig.eigenvectors().col(2)) : Vec3::Zero();
    if (dominant.norm() > 0.5) dominant.normalize();
    return sign_fix(orthogonal_fallback(dominant));
  }
  return sign_fix(eig.eigenvectors().col(0));
}

double effective_smoothness_weight(const HairCard& card, const SolverConfig& cfg) {
  const auto& p = card.points;
  double acc = 0.0;
  for (std::size_t i = 0; i + 1 < p.size(); ++i)
    acc += (p[i + 1].position - p[i].position).squaredNorm();
  double mean = acc / static_cast<double>(p.size() - 1);
  if (mean < kTiny) mean = 1.0;  // degenerate spacing; weight is irrelevant
  return cfg.smoothness_weight * mean;
}

double normal_field_objective(const HairCard& card, const std::vector<Vec3>& normals,
                              const SolverConfig& cfg) {
  const auto d = build_data_matrices(card);
  const double lam = effective_smoothness_weight(card, cfg);
  double j = 0.0;
  for (std::size_t i = 0; i < normals.size(); ++i) j += normals[i].dot(d[i] * normals[i]);
  for (std::size_t i = 0; i + 1 < normals.size(); ++i)
    j += lam * (normals[i] - normals[i + 1]).squaredNorm();
  return j;
}

std::vector<Vec3> solve_normal_field(const HairCard& card, const SolverConfig& cfg) {
  const std::size_t n = card.size();
  if (n < 3) throw GeometryError("solve_normal_field: card needs >= 3 points");
  if (cfg.smoothness_weight <= 0.0) throw ValueError("solve_normal_field: lambda must be > 0");

  const auto d = build_data_matrices(card);
  const double lam = effective_smoothness_weight(card, cfg);
  const Vec3 anchor = pca_initial_normal(card, std::min<int>(cfg.pca_window, static_cast<int>(n)));

  // Stationarity system of the quadratic objective with n_0 fixed:
  //   (D_i + c*lam*I) n_i - lam (n_{i-1} + n_{i+1}) = 0,
  // c = number of smoothness edges at i. Anchor coupling moves to the rhs.
  const std::size_t m = 3 * (n - 1);
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(m, m);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(m);
  for (std::size_t i = 1; i < n; ++i) {
    const std::size_t k = 3 * (i - 1);
    const double c = (i + 1 < n) ? 2.0 : 1.0;
    a.block<3, 3>(k, k) = d[i] + c * lam * Mat3::Identity();
    if (i + 1 < n) {
      a.block<3, 3>(k, k + 3) = -lam * Mat3::Identity();
      a.block<3, 3>(k + 3, k) = -lam * Mat3::Identity();
    }
    if (i == 1) b.segment<3>(0) = lam * anchor;
  }

  Eigen::LDLT<Eigen::MatrixXd> ldlt(a);
  if (ldlt.info() != Eigen::Success)
    throw std::logic_error("solve_normal_field: singular anchored system");
  Eigen::VectorXd x = ldlt.solve(b);

  std::vector<Vec3> normals(n);
  normals[0] = anchor;
  for (std::size_t i = 1; i < n; ++i) {
    Vec3 v = x.segment<3>(3 * (i - 1));
    normals[i] = v.norm() < 1e-10 ? normals[i - 1] : Vec3(v.normalized());
  }
  return normals;
}

FrameField compute_frames(const HairCard& card, const SolverConfig& cfg) {
  const std::size_t n = card.size();
  if (n < 2) throw GeometryError("compute_frames: card needs >= 2 points");

  FrameField f;
  f.tangents = estimate_tangents(card);
  if (n == 2) {
    // Two points define only a direction; take the PCA tie-break normal
    // of the perpendicular space at both points.
    Vec3 nrm = pca_initial_normal(card, 2);
    f.width_dirs = {nrm, nrm};
  } else {
    f.width_dirs = solve_normal_field(card, cfg);
  }

  f.thickness_dirs.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3& tau = f.tangents[i];
    Vec3 nrm = f.width_dirs[i] - f.width_dirs[i].dot(tau) * tau;
    if (nrm.norm() < 1e-9) throw GeometryError("compute_frames: normal parallel to tangent");
    nrm.normalize();
    f.width_dirs[i] = nrm;
    Vec3 psi = nrm.cross(tau);
    if (psi.norm() < 1e-9) throw GeometryError("compute_frames: degenerate frame");
    f.thickness_dirs[i] = psi.normalized();
  }
  return f;
}

}  // namespace charm
