#pragma once

#include <vector>

#include "charm/types.hpp"

namespace charm {

// Unit tangents via the five-point stencil [-1/12, 2/3, 0, -2/3, 1/12]
// (raw output negated so tangents point root->tip). Indices are clamped
// at the boundary; cards of 2-4 points fall back to neighbor differences.
std::vector<Vec3> estimate_tangents(const HairCard& card);

// D_i = d_prev d_prev^T + d_next d_next^T (endpoints use the single
// existing difference).
std::vector<Mat3> build_data_matrices(const HairCard& card);

// Smallest-eigenvalue direction of the covariance of the first `window`
// positions, sign-fixed so the largest-magnitude component is positive
// (ties by axis priority y > x > z). Rank-deficient neighborhoods fall
// back to a deterministic vector orthogonal to the dominant direction.
Vec3 pca_initial_normal(const HairCard& card, int window);

// Anchored linear least-squares solve of the projection+smoothness
// objective, then per-vector unit normalization. The smoothness weight
// is cfg.smoothness_weight * mean squared segment length, which makes
// the solved direction field invariant under uniform scaling.
std::vector<Vec3> solve_normal_field(const HairCard& card, const SolverConfig& cfg);

// The objective the solver minimizes, evaluated on an arbitrary field.
// Used by tests to compare against gradient-descent and PCA baselines.
double normal_field_objective(const HairCard& card, const std::vector<Vec3>& normals,
                              const SolverConfig& cfg);

// Effective smoothness weight for a card (lambda * mean |d_seg|^2).
double effective_smoothness_weight(const HairCard& card, const SolverConfig& cfg);

// Tangents + solved normals (re-orthogonalized against the tangent) +
// psi = normalize(n x tau).
FrameField compute_frames(const HairCard& card, const SolverConfig& cfg);

}  // namespace charm
