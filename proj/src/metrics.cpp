#include "charm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "charm/card_mesh.hpp"

namespace charm {

namespace {

constexpr std::uint32_t kLeafSize = 8;

double unit_uniform(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

std::vector<std::uint32_t> sample_indices(std::size_t n, std::size_t m, std::mt19937_64& rng) {
  std::vector<std::uint32_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0u);
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(unit_uniform(rng) * (n - i));
    std::swap(idx[i], idx[std::min(j, n - 1)]);
  }
  idx.resize(m);
  return idx;
}

// Jonker-Volgenant shortest augmenting path solver for the dense square
// linear assignment problem; returns the optimal row -> column map.
std::vector<int> solve_assignment(const std::vector<double>& cost, int n) {
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> v(n, 0.0);
  std::vector<int> rowsol(n, -1), colsol(n, -1);

  for (int row = 0; row < n; ++row) {
    std::vector<double> dist(n);
    std::vector<int> pred(n, row);
    std::vector<char> done(n, 0);
    for (int j = 0; j < n; ++j) dist[j] = cost[row * n + j] - v[j];

    int last_col = -1;
    double min_dist = 0.0;
    for (;;) {
      int jmin = -1;
      double d = inf;
      for (int j = 0; j < n; ++j)
        if (!done[j] && dist[j] < d) {
          d = dist[j];
          jmin = j;
        }
      done[jmin] = 1;
      min_dist = d;
      if (colsol[jmin] < 0) {
        last_col = jmin;
        break;
      }
      const int i = colsol[jmin];
      const double h = cost[i * n + jmin] - v[jmin] - min_dist;
      for (int j = 0; j < n; ++j) {
        if (done[j]) continue;
        const double nd = cost[i * n + j] - v[j] - h;
        if (nd < dist[j]) {
          dist[j] = nd;
          pred[j] = i;
        }
      }
    }

    for (int j = 0; j < n; ++j)
      if (done[j] && j != last_col) v[j] += dist[j] - min_dist;

    // trace the augmenting path back to the free row
    int j = last_col;
    for (;;) {
      const int i = pred[j];
      colsol[j] = i;
      std::swap(rowsol[i], j);
      if (i == row) break;
    }
  }
  return rowsol;
}

std::uint32_t voxel_cell(double c, int res) {
  const double t = (c + 0.5) * res;
  const long k = static_cast<long>(std::floor(t));
  return static_cast<std::uint32_t>(std::clamp<long>(k, 0, res - 1));
}

}  // namespace

KdTree::KdTree(const std::vector<Vec3>& points) : pts_(points) {
  if (pts_.empty()) throw ValueError("KdTree: empty point set");
  order_.resize(pts_.size());
  std::iota(order_.begin(), order_.end(), 0u);
  root_ = build(0, static_cast<std::uint32_t>(order_.size()));
}

std::int32_t KdTree::build(std::uint32_t begin, std::uint32_t end) {
  Node node;
  node.begin = begin;
  node.end = end;
  if (end - begin > kLeafSize) {
    Vec3 lo = pts_[order_[begin]], hi = lo;
    for (std::uint32_t k = begin; k < end; ++k) {
      lo = lo.cwiseMin(pts_[order_[k]]);
      hi = hi.cwiseMax(pts_[order_[k]]);
    }
    int axis = 0;
    (hi - lo).maxCoeff(&axis);
    const std::uint32_t mid = (begin + end) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                     [&](std::uint32_t a, std::uint32_t b) {
                       return pts_[a][axis] < pts_[b][axis];
                     });
    node.axis = static_cast<std::uint8_t>(axis);
    node.split = pts_[order_[mid]][axis];
    const auto id = static_cast<std::int32_t>(nodes_.size());
    nodes_.push_back(node);
    const auto left = build(begin, mid);
    const auto right = build(mid, end);
    nodes_[id].left = left;
    nodes_[id].right = right;
    return id;
  }
  nodes_.push_back(node);
  return static_cast<std::int32_t>(nodes_.size() - 1);
}

void KdTree::search(std::int32_t id, const Vec3& q, std::size_t& best, double& best_sq) const {
  const Node& node = nodes_[id];
  if (node.left < 0) {
    for (std::uint32_t k = node.begin; k < node.end; ++k) {
      const double d = (pts_[order_[k]] - q).squaredNorm();
      if (d < best_sq) {
        best_sq = d;
        best = order_[k];
      }
    }
    return;
  }
  const double delta = q[node.axis] - node.split;
  const std::int32_t first = delta < 0 ? node.left : node.right;
  const std::int32_t second = delta < 0 ? node.right : node.left;
  search(first, q, best, best_sq);
  if (delta * delta < best_sq) search(second, q, best, best_sq);
}

std::pair<std::size_t, double> KdTree::nearest(const Vec3& query) const {
  std::size_t best = 0;
  double best_sq = std::numeric_limits<double>::infinity();
  search(root_, query, best, best_sq);
  return {best, std::sqrt(best_sq)};
}

PointCloud sample_surface(const HairMesh& mesh, std::size_t n, std::uint64_t seed) {
  if (mesh.faces.empty()) throw GeometryError("sample_surface: empty mesh");
  std::vector<double> cdf(mesh.faces.size());
  std::vector<Vec3> face_normals(mesh.faces.size());
  double total = 0.0;
  for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
    const Vec3& a = mesh.vertices[mesh.faces[f].v[0]];
    const Vec3& b = mesh.vertices[mesh.faces[f].v[1]];
    const Vec3& c = mesh.vertices[mesh.faces[f].v[2]];
    const Vec3 cr = (b - a).cross(c - a);
    const double area2 = cr.norm();
    total += 0.5 * area2;
    cdf[f] = total;
    face_normals[f] = area2 > 1e-300 ? Vec3(cr / area2) : Vec3::Zero();
  }
  if (total <= 0.0) throw GeometryError("sample_surface: zero-area mesh");

  std::mt19937_64 rng(seed);
  PointCloud cloud;
  cloud.points.reserve(n);
  cloud.normals.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double pick = unit_uniform(rng) * total;
    const std::size_t f =
        std::min<std::size_t>(std::upper_bound(cdf.begin(), cdf.end(), pick) - cdf.begin(),
                              cdf.size() - 1);
    const Vec3& a = mesh.vertices[mesh.faces[f].v[0]];
    const Vec3& b = mesh.vertices[mesh.faces[f].v[1]];
    const Vec3& c = mesh.vertices[mesh.faces[f].v[2]];
    const double r1 = std::sqrt(unit_uniform(rng));
    const double r2 = unit_uniform(rng);
    cloud.points.push_back((1.0 - r1) * a + r1 * (1.0 - r2) * b + r1 * r2 * c);
    cloud.normals.push_back(face_normals[f]);
  }
  return cloud;
}

namespace {

double directed_mean(const PointCloud& from, const KdTree& to) {
  double sum = 0.0;
  for (const auto& p : from.points) sum += to.nearest(p).second;
  return sum / static_cast<double>(from.size());
}

double directed_max(const PointCloud& from, const KdTree& to) {
  double mx = 0.0;
  for (const auto& p : from.points) mx = std::max(mx, to.nearest(p).second);
  return mx;
}

}  // namespace

double chamfer(const PointCloud& a, const PointCloud& b) {
  if (a.points.empty() || b.points.empty()) throw ValueError("chamfer: empty cloud");
  KdTree ta(a.points), tb(b.points);
  return 0.5 * (directed_mean(a, tb) + directed_mean(b, ta));
}

double hausdorff(const PointCloud& a, const PointCloud& b) {
  if (a.points.empty() || b.points.empty()) throw ValueError("hausdorff: empty cloud");
  KdTree ta(a.points), tb(b.points);
  return std::max(directed_max(a, tb), directed_max(b, ta));
}

double emd_approx(const PointCloud& a, const PointCloud& b, std::size_t m, std::uint64_t seed) {
  if (a.size() < m || b.size() < m) throw ValueError("emd_approx: subsample exceeds cloud size");
  if (m == 0) throw ValueError("emd_approx: empty subsample");

  std::mt19937_64 rng(seed);
  const auto ia = sample_indices(a.size(), m, rng);
  std::mt19937_64 rng_b(seed);  // same stream so equal-size clouds subsample identically
  const auto ib = sample_indices(b.size(), m, rng_b);

  const int n = static_cast<int>(m);
  std::vector<double> cost(m * m);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      cost[i * n + j] = (a.points[ia[i]] - b.points[ib[j]]).norm();

  const auto rowsol = solve_assignment(cost, n);
  double sum = 0.0;
  for (int i = 0; i < n; ++i) sum += cost[i * n + rowsol[i]];
  return sum / static_cast<double>(n);
}

double voxel_iou(const PointCloud& a, const PointCloud& b, int res) {
  if (a.points.empty() || b.points.empty()) throw ValueError("voxel_iou: empty cloud");
  if (res <= 0) throw ValueError("voxel_iou: non-positive resolution");
  const std::size_t cells = static_cast<std::size_t>(res) * res * res;
  std::vector<char> occ_a(cells, 0), occ_b(cells, 0);
  auto mark = [&](const PointCloud& cloud, std::vector<char>& occ) {
    for (const auto& p : cloud.points) {
      const std::uint32_t ix = voxel_cell(p.x(), res);
      const std::uint32_t iy = voxel_cell(p.y(), res);
      const std::uint32_t iz = voxel_cell(p.z(), res);
      occ[(ix * res + iy) * res + iz] = 1;
    }
  };
  mark(a, occ_a);
  mark(b, occ_b);
  std::size_t inter = 0, uni = 0;
  for (std::size_t c = 0; c < cells; ++c) {
    inter += occ_a[c] & occ_b[c];
    uni += occ_a[c] | occ_b[c];
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

MetricReport card_level_report(const Hairstyle& pred, const Hairstyle& gt,
                               std::size_t samples_per_card, std::uint64_t seed) {
  if (pred.cards.empty() || gt.cards.empty())
    throw ValueError("card_level_report: empty hairstyle");

  // one shared sampling seed: identical cards get identical clouds no
  // matter where they sit in either style
  auto sample_cards = [&](const Hairstyle& style) {
    std::vector<PointCloud> clouds;
    clouds.reserve(style.cards.size());
    for (const auto& card : style.cards)
      clouds.push_back(sample_surface(card_to_mesh(card), samples_per_card, seed));
    return clouds;
  };
  const auto pc = sample_cards(pred);
  const auto gc = sample_cards(gt);

  const std::size_t np = pc.size(), ng = gc.size();
  std::vector<double> cd(np * ng);
  for (std::size_t i = 0; i < np; ++i)
    for (std::size_t j = 0; j < ng; ++j) cd[i * ng + j] = chamfer(pc[i], gc[j]);

  std::set<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i < np; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < ng; ++j)
      if (cd[i * ng + j] < cd[i * ng + best]) best = j;
    pairs.insert({i, best});
  }
  for (std::size_t j = 0; j < ng; ++j) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < np; ++i)
      if (cd[i * ng + j] < cd[best * ng + j]) best = i;
    pairs.insert({best, j});
  }

  // smaller subsample than the style-level default: the report solves one
  // assignment per matched pair
  const std::size_t m = std::min<std::size_t>(256, samples_per_card);
  MetricReport report;
  for (const auto& [i, j] : pairs) {
    CardPairMetrics pm;
    pm.pred_index = i;
    pm.gt_index = j;
    pm.cd = cd[i * ng + j];
    pm.emd = emd_approx(pc[i], gc[j], m, seed);
    pm.hausdorff = hausdorff(pc[i], gc[j]);
    pm.voxel_iou = voxel_iou(pc[i], gc[j]);
    report.pairs.push_back(pm);
    report.cd += pm.cd;
    report.emd += pm.emd;
    report.hausdorff += pm.hausdorff;
    report.voxel_iou += pm.voxel_iou;
  }
  const double k = static_cast<double>(report.pairs.size());
  report.cd /= k;
  report.emd /= k;
  report.hausdorff /= k;
  report.voxel_iou /= k;
  return report;
}

nlohmann::json MetricReport::to_json() const {
  nlohmann::json j{{"cd", cd}, {"emd", emd}, {"hausdorff", hausdorff}, {"voxel_iou", voxel_iou}};
  if (!pairs.empty()) {
    auto arr = nlohmann::json::array();
    for (const auto& p : pairs)
      arr.push_back({{"pred", p.pred_index},
                     {"gt", p.gt_index},
                     {"cd", p.cd},
                     {"emd", p.emd},
                     {"hausdorff", p.hausdorff},
                     {"voxel_iou", p.voxel_iou}});
    j["pairs"] = arr;
  }
  return j;
}

std::string MetricReport::to_table() const {
  std::ostringstream os;
  os << std::fixed << std::setprecision(6);
  os << std::setw(10) << "CD" << std::setw(12) << "EMD" << std::setw(12) << "Hausdorff"
     << std::setw(12) << "Voxel-IoU" << "\n";
  os << std::setw(10) << cd << std::setw(12) << emd << std::setw(12) << hausdorff
     << std::setw(12) << voxel_iou << "\n";
  return os.str();
}

}  // namespace charm
