#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "charm/types.hpp"

namespace charm {

struct PreprocessConfig {
  double vertex_merge_eps = 1e-6;
  double recall_threshold = 0.98;
  double max_width_thickness = 0.10;
  std::size_t max_total_points = 6000;
};

struct SynthConfig {
  int min_cards = 25, max_cards = 130;
  int min_points = 20, max_points = 60;
  double scalp_radius = 0.22;
  double scalp_center_y = 0.02;
  double min_length = 0.15, max_length = 0.45;
  double curl = 0.35;  // strength of the random curvature terms, relative to length
  double max_root_width = 0.08;
  std::size_t max_total_points = 6000;
  std::uint64_t seed = 0;
};

// Vertices within eps collapsed to their cluster centroid; faces
// reindexed, degenerate faces dropped. Cluster order follows the
// smallest original index, so untouched meshes come back unchanged.
HairMesh merge_close_vertices(const HairMesh& mesh, double eps);

// Connected components by shared vertices. Watertight components
// (every edge bordering exactly two faces) are returned with vertex
// order preserved; the rest are counted in `dropped` and discarded.
std::vector<HairMesh> split_watertight_components(const HairMesh& mesh,
                                                  std::size_t* dropped = nullptr);

struct CardPatternResult {
  std::optional<HairCard> card;
  std::string reason;  // empty on acceptance

  bool ok() const { return card.has_value(); }
};

// Checks that a watertight component is a chain of 4-vertex diamond
// cross-sections between two caps and extracts the control points.
// The cap containing the smallest vertex index becomes the root.
CardPatternResult verify_card_pattern(const HairMesh& component);

// Converts a component built from 3-vertex isosceles cross-sections
// (consecutive vertex triples: base, base, apex) into the canonical
// diamond form by reflecting each apex across its base edge.
// Components already in diamond form pass through unchanged.
HairMesh standardize_triangle_units(const HairMesh& component);

struct FilterResult {
  bool accepted = true;
  std::string reason;
};

FilterResult filter_style(const Hairstyle& style, const PreprocessConfig& cfg);

// Fraction of original vertices with a match in `accepted` within eps.
double recall(const std::vector<Vec3>& accepted, const std::vector<Vec3>& original, double eps);

struct PreprocessReport {
  Hairstyle style;
  bool accepted = false;
  std::vector<std::string> reasons;
  double recall = 0.0;
  std::size_t components = 0;
  std::size_t dropped_components = 0;
  std::size_t rejected_cards = 0;
};

// Full ingestion pipeline: merge close vertices, split watertight
// components, verify or triangle-standardize each into a card, then
// apply the style-level filters including the vertex recall check.
PreprocessReport preprocess_mesh(const HairMesh& raw, const PreprocessConfig& cfg = {});

// Procedural hairstyle generator: roots on the upper hemisphere of a
// scalp sphere, smooth seeded cubic curves with a downward bias,
// tapered widths. Deterministic per cfg.seed.
Hairstyle generate_synthetic(const SynthConfig& cfg);

// Dataset directory layout: style_<k>.json plus manifest.jsonl with one
// {"path", "cards", "points"} record per style.
void save_dataset(const std::vector<Hairstyle>& styles, const std::string& dir);
std::vector<Hairstyle> load_dataset(const std::string& dir);

}  // namespace charm
