#pragma once

#include "charm/frames.hpp"
#include "charm/types.hpp"

namespace charm {

// Canonical per-section vertex ordering used throughout the codec:
// section i occupies vertex indices 4i..4i+3 as
//   [p + (w/2) n,  p - (w/2) n,  p + (t/2) psi,  p - (t/2) psi].
// Consecutive sections are joined by 8 triangles; root and tip diamonds
// are capped with 2 triangles each, split along the width diagonal.
HairMesh card_to_mesh(const HairCard& card, const FrameField& frames);

// Face triples of the canonical single-card topology for n sections.
std::vector<Triangle> canonical_card_faces(std::size_t n);

// Convenience: frames computed internally.
HairMesh card_to_mesh(const HairCard& card, const SolverConfig& cfg = {});

// All cards of a style concatenated into one mesh (card_sizes records
// the per-card point counts).
HairMesh style_to_mesh(const Hairstyle& style, const SolverConfig& cfg = {});

// Exact inverse of card_to_mesh for meshes in canonical vertex order:
// centroid of each 4-corner section plus the two diagonal lengths.
HairCard mesh_to_card(const HairMesh& mesh);

// (5 * control points) / (3 * vertices + 3 * face index triples) of the
// reconstructed mesh representation.
double token_compression_ratio(const Hairstyle& style);

}  // namespace charm
