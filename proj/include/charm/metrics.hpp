#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "charm/types.hpp"

namespace charm {

struct PointCloud {
  std::vector<Vec3> points;
  std::vector<Vec3> normals;  // optional, per-point when present

  std::size_t size() const { return points.size(); }
};

// Nearest-neighbor index over a fixed point set.
class KdTree {
 public:
  explicit KdTree(const std::vector<Vec3>& points);

  // Returns (index, distance) of the closest stored point.
  std::pair<std::size_t, double> nearest(const Vec3& query) const;

 private:
  struct Node {
    std::int32_t left = -1, right = -1;
    std::uint32_t begin = 0, end = 0;  // leaf range into order_
    std::uint8_t axis = 0;
    double split = 0.0;
  };

  std::int32_t build(std::uint32_t begin, std::uint32_t end);
  void search(std::int32_t node, const Vec3& q, std::size_t& best, double& best_sq) const;

  std::vector<Vec3> pts_;
  std::vector<std::uint32_t> order_;
  std::vector<Node> nodes_;
  std::int32_t root_ = -1;
};

PointCloud sample_surface(const HairMesh& mesh, std::size_t n, std::uint64_t seed);

double chamfer(const PointCloud& a, const PointCloud& b);
double hausdorff(const PointCloud& a, const PointCloud& b);

// Mean matched distance of an exact minimum-cost 1-to-1 assignment over
// m seeded subsamples from each cloud.
double emd_approx(const PointCloud& a, const PointCloud& b, std::size_t m = 1024,
                  std::uint64_t seed = 0);

// Occupancy IoU over the fixed box [-0.5, 0.5]^3 at res^3 cells.
double voxel_iou(const PointCloud& a, const PointCloud& b, int res = 16);

struct CardPairMetrics {
  std::size_t pred_index = 0, gt_index = 0;
  double cd = 0.0, emd = 0.0, hausdorff = 0.0, voxel_iou = 0.0;
};

struct MetricReport {
  double cd = 0.0, emd = 0.0, hausdorff = 0.0, voxel_iou = 0.0;
  std::vector<CardPairMetrics> pairs;

  nlohmann::json to_json() const;
  // Aligned table with columns CD, EMD, Hausdorff, Voxel-IoU.
  std::string to_table() const;
};

// Matches each predicted card to its nearest ground-truth card by Chamfer
// distance and vice versa; metrics averaged over the union of matched
// pairs (duplicates allowed).
MetricReport card_level_report(const Hairstyle& pred, const Hairstyle& gt,
                               std::size_t samples_per_card = 2048, std::uint64_t seed = 0);

}  // namespace charm
