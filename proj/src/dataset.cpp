#include "charm/dataset.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <iomanip>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "charm/card_mesh.hpp"
#include "charm/io.hpp"
#include "charm/metrics.hpp"

namespace charm {

namespace {

struct DisjointSet {
  std::vector<std::uint32_t> parent;

  explicit DisjointSet(std::size_t n) : parent(n) {
    std::iota(parent.begin(), parent.end(), 0u);
  }
  std::uint32_t find(std::uint32_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  }
  void unite(std::uint32_t a, std::uint32_t b) {
    a = find(a);
    b = find(b);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  }
};

struct CellKey {
  long long x, y, z;
  bool operator==(const CellKey&) const = default;
};

struct CellHash {
  std::size_t operator()(const CellKey& k) const {
    std::size_t h = std::hash<long long>()(k.x);
    h = h * 1000003u ^ std::hash<long long>()(k.y);
    h = h * 1000003u ^ std::hash<long long>()(k.z);
    return h;
  }
};

CellKey cell_of(const Vec3& p, double eps) {
  return {static_cast<long long>(std::floor(p.x() / eps)),
          static_cast<long long>(std::floor(p.y() / eps)),
          static_cast<long long>(std::floor(p.z() / eps))};
}

double unit_uniform(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

double uniform_in(std::mt19937_64& rng, double lo, double hi) {
  return lo + (hi - lo) * unit_uniform(rng);
}

int uniform_int(std::mt19937_64& rng, int lo, int hi) {
  return lo + static_cast<int>(unit_uniform(rng) * (hi - lo + 1)) % (hi - lo + 1);
}

// sorted adjacency lists over undirected face edges
std::vector<std::vector<std::uint32_t>> build_adjacency(const HairMesh& mesh) {
  std::vector<std::vector<std::uint32_t>> adj(mesh.vertices.size());
  for (const auto& f : mesh.faces)
    for (int k = 0; k < 3; ++k) {
      const std::uint32_t a = f.v[k], b = f.v[(k + 1) % 3];
      adj[a].push_back(b);
      adj[b].push_back(a);
    }
  for (auto& list : adj) {
    std::sort(list.begin(), list.end());
    list.erase(std::unique(list.begin(), list.end()), list.end());
  }
  return adj;
}

bool adjacent(const std::vector<std::vector<std::uint32_t>>& adj, std::uint32_t a,
              std::uint32_t b) {
  return std::binary_search(adj[a].begin(), adj[a].end(), b);
}

}  // namespace

HairMesh merge_close_vertices(const HairMesh& mesh, double eps) {
  if (eps <= 0.0) throw ValueError("merge_close_vertices: eps must be positive");
  const std::size_t n = mesh.vertices.size();
  DisjointSet ds(n);
  std::unordered_map<CellKey, std::vector<std::uint32_t>, CellHash> grid;
  for (std::uint32_t i = 0; i < n; ++i) {
    const CellKey c = cell_of(mesh.vertices[i], eps);
    for (long long dx = -1; dx <= 1; ++dx)
      for (long long dy = -1; dy <= 1; ++dy)
        for (long long dz = -1; dz <= 1; ++dz) {
          const auto it = grid.find({c.x + dx, c.y + dy, c.z + dz});
          if (it == grid.end()) continue;
          for (std::uint32_t j : it->second)
            if ((mesh.vertices[i] - mesh.vertices[j]).norm() <= eps) ds.unite(i, j);
        }
    grid[c].push_back(i);
  }

  // clusters indexed by their smallest member, in original order
  std::vector<std::uint32_t> remap(n);
  std::vector<Vec3> centroid;
  std::vector<std::uint32_t> count;
  std::vector<std::int64_t> cluster_id(n, -1);
  for (std::uint32_t i = 0; i < n; ++i) {
    const std::uint32_t root = ds.find(i);
    if (cluster_id[root] < 0) {
      cluster_id[root] = static_cast<std::int64_t>(centroid.size());
      centroid.push_back(Vec3::Zero());
      count.push_back(0);
    }
    remap[i] = static_cast<std::uint32_t>(cluster_id[root]);
    centroid[remap[i]] += mesh.vertices[i];
    ++count[remap[i]];
  }
  for (std::size_t c = 0; c < centroid.size(); ++c) centroid[c] /= count[c];

  HairMesh out;
  out.vertices = std::move(centroid);
  for (const auto& f : mesh.faces) {
    Triangle t{{remap[f.v[0]], remap[f.v[1]], remap[f.v[2]]}};
    if (t.v[0] == t.v[1] || t.v[1] == t.v[2] || t.v[0] == t.v[2]) continue;
    out.faces.push_back(t);
  }
  if (out.vertices.size() == n) out.card_sizes = mesh.card_sizes;
  return out;
}

std::vector<HairMesh> split_watertight_components(const HairMesh& mesh, std::size_t* dropped) {
  if (dropped) *dropped = 0;
  std::vector<HairMesh> components;
  if (mesh.faces.empty()) return components;

  DisjointSet ds(mesh.vertices.size());
  for (const auto& f : mesh.faces) {
    ds.unite(f.v[0], f.v[1]);
    ds.unite(f.v[1], f.v[2]);
  }
  std::map<std::uint32_t, std::vector<const Triangle*>> groups;
  for (const auto& f : mesh.faces) groups[ds.find(f.v[0])].push_back(&f);

  for (const auto& [root, faces] : groups) {
    std::vector<std::uint32_t> verts;
    for (const auto* f : faces)
      for (int k = 0; k < 3; ++k) verts.push_back(f->v[k]);
    std::sort(verts.begin(), verts.end());
    verts.erase(std::unique(verts.begin(), verts.end()), verts.end());
    std::unordered_map<std::uint32_t, std::uint32_t> local;
    for (std::uint32_t i = 0; i < verts.size(); ++i) local[verts[i]] = i;

    HairMesh comp;
    comp.vertices.reserve(verts.size());
    for (std::uint32_t v : verts) comp.vertices.push_back(mesh.vertices[v]);
    std::map<std::pair<std::uint32_t, std::uint32_t>, int> edge_count;
    for (const auto* f : faces) {
      comp.faces.push_back({local[f->v[0]], local[f->v[1]], local[f->v[2]]});
      for (int k = 0; k < 3; ++k) {
        std::uint32_t a = comp.faces.back().v[k], b = comp.faces.back().v[(k + 1) % 3];
        if (a > b) std::swap(a, b);
        ++edge_count[{a, b}];
      }
    }
    const bool watertight = std::all_of(edge_count.begin(), edge_count.end(),
                                        [](const auto& e) { return e.second == 2; });
    if (watertight) {
      components.push_back(std::move(comp));
    } else if (dropped) {
      ++*dropped;
    }
  }
  return components;
}

CardPatternResult verify_card_pattern(const HairMesh& component) {
  const std::size_t nv = component.vertices.size();
  if (nv < 8 || nv % 4 != 0)
    return {std::nullopt, "vertex count is not a positive multiple of 4 sections"};
  const std::size_t n = nv / 4;

  const auto adj = build_adjacency(component);
  std::vector<std::uint32_t> deg5, deg4;
  for (std::uint32_t v = 0; v < nv; ++v) {
    const std::size_t d = adj[v].size();
    if (d == 5)
      deg5.push_back(v);
    else if (d == 4)
      deg4.push_back(v);
    else if (d != 6)
      return {std::nullopt, "cap signature absent (unexpected vertex degree)"};
  }
  if (deg5.size() != 4 || deg4.size() != 4)
    return {std::nullopt, "cap signature absent (no two diamond end caps)"};
  if (component.faces.size() != 8 * (n - 1) + 4)
    return {std::nullopt, "face count does not match the repeating-unit chain"};

  // candidate pairings of the four degree-5 vertices into two width diagonals
  const std::array<std::array<int, 4>, 3> pairings = {
      {{0, 1, 2, 3}, {0, 2, 1, 3}, {0, 3, 1, 2}}};
  // ring cycle (slot order 0, 2, 1, 3): predecessor of each slot
  const int pred[4] = {3, 2, 0, 1};

  // the chain topology has an automorphism swapping the two diagonals on
  // alternating sections, so several labelings can pass every
  // combinatorial check; the true one is the geometrically coherent one,
  // with diagonal directions varying smoothly between sections
  auto coherence = [](const HairMesh& canonical) {
    const std::size_t sections = canonical.vertices.size() / 4;
    double score = 0.0;
    for (std::size_t i = 0; i + 1 < sections; ++i) {
      for (int d = 0; d < 2; ++d) {
        const Vec3 a = canonical.vertices[4 * i + 2 * d] - canonical.vertices[4 * i + 2 * d + 1];
        const Vec3 b =
            canonical.vertices[4 * (i + 1) + 2 * d] - canonical.vertices[4 * (i + 1) + 2 * d + 1];
        const double na = a.norm(), nb = b.norm();
        if (na > 1e-12 && nb > 1e-12) score += std::abs(a.dot(b)) / (na * nb);
      }
    }
    return score;
  };

  std::optional<HairCard> best_card;
  double best_score = -1.0;
  std::string last_reason = "repeating-unit walk failed";
  std::string geometric_reason;  // takes precedence when nothing is accepted
  for (const auto& pick : pairings) {
    const std::uint32_t w0a = deg5[pick[0]], w0b = deg5[pick[1]];
    const std::uint32_t w1a = deg5[pick[2]], w1b = deg5[pick[3]];
    if (!adjacent(adj, w0a, w0b) || !adjacent(adj, w1a, w1b)) continue;

    auto thickness_pair = [&](std::uint32_t a, std::uint32_t b,
                              std::array<std::uint32_t, 2>& out) {
      std::size_t found = 0;
      for (std::uint32_t v : deg4)
        if (adjacent(adj, a, v) && adjacent(adj, b, v)) {
          if (found < 2) out[found] = v;
          ++found;
        }
      return found == 2;
    };
    std::array<std::uint32_t, 2> t0, t1;
    if (!thickness_pair(w0a, w0b, t0) || !thickness_pair(w1a, w1b, t1)) continue;
    if (t0[0] == t1[0] || t0[0] == t1[1] || t0[1] == t1[0] || t0[1] == t1[1]) continue;

    std::array<std::uint32_t, 4> cap0 = {w0a, w0b, t0[0], t0[1]};
    std::array<std::uint32_t, 4> cap1 = {w1a, w1b, t1[0], t1[1]};
    if (*std::min_element(cap1.begin(), cap1.end()) <
        *std::min_element(cap0.begin(), cap0.end()))
      std::swap(cap0, cap1);

    // both thickness-slot assignments: they differ in ring orientation,
    // and only the one matching the actual side-quad diagonals survives
    // the face-set comparison below
    for (int variant = 0; variant < 2; ++variant) {
      std::array<std::uint32_t, 4> cur = {
          std::min(cap0[0], cap0[1]), std::max(cap0[0], cap0[1]),
          variant == 0 ? cap0[2] : cap0[3], variant == 0 ? cap0[3] : cap0[2]};
      std::vector<char> visited(nv, 0);
      std::vector<std::uint32_t> order;
      order.reserve(nv);
      for (std::uint32_t v : cur) {
        visited[v] = 1;
        order.push_back(v);
      }

      bool ok = true;
      while (ok && order.size() < nv) {
        std::array<std::uint32_t, 4> next{};
        for (int k = 0; k < 4 && ok; ++k) {
          int found = 0;
          for (std::uint32_t cand : adj[cur[k]])
            if (!visited[cand] && adjacent(adj, cand, cur[pred[k]])) {
              next[k] = cand;
              ++found;
            }
          if (found != 1) ok = false;
        }
        if (!ok) break;
        for (int k = 0; k < 4; ++k) {
          if (visited[next[k]]) {
            ok = false;
            break;
          }
          visited[next[k]] = 1;
        }
        if (!ok) break;
        for (std::uint32_t v : next) order.push_back(v);
        cur = next;
      }
      if (!ok) {
        last_reason = "repeating-unit walk failed (sections not sequentially connected)";
        continue;
      }

      auto sorted_triples = [](const std::vector<Triangle>& faces) {
        std::vector<std::array<std::uint32_t, 3>> out;
        out.reserve(faces.size());
        for (const auto& f : faces) {
          std::array<std::uint32_t, 3> t = {f.v[0], f.v[1], f.v[2]};
          std::sort(t.begin(), t.end());
          out.push_back(t);
        }
        std::sort(out.begin(), out.end());
        return out;
      };
      std::vector<Triangle> expected = canonical_card_faces(n);
      for (auto& f : expected)
        for (int k = 0; k < 3; ++k) f.v[k] = order[f.v[k]];
      if (sorted_triples(expected) != sorted_triples(component.faces)) {
        last_reason = "face pattern does not match the repeating-unit chain";
        continue;
      }

      HairMesh canonical;
      canonical.vertices.reserve(nv);
      for (std::uint32_t v : order) canonical.vertices.push_back(component.vertices[v]);
      try {
        HairCard card = mesh_to_card(canonical);
        const double score = coherence(canonical);
        if (score > best_score) {
          best_score = score;
          best_card = std::move(card);
        }
      } catch (const GeometryError& e) {
        geometric_reason = e.what();
      }
    }
  }
  if (best_card) return {std::move(best_card), ""};
  return {std::nullopt, geometric_reason.empty() ? last_reason : geometric_reason};
}

HairMesh standardize_triangle_units(const HairMesh& component) {
  if (component.vertices.size() % 4 == 0 && verify_card_pattern(component).ok())
    return component;
  const std::size_t nv = component.vertices.size();
  if (nv < 6 || nv % 3 != 0)
    throw GeometryError("standardize_triangle_units: not built from 3-vertex cross-sections");
  const std::size_t n = nv / 3;

  HairMesh out;
  out.vertices.reserve(4 * n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::array<Vec3, 3> v = {component.vertices[3 * i + 0],
                                   component.vertices[3 * i + 1],
                                   component.vertices[3 * i + 2]};
    // apex = the vertex with two equal incident sides
    int apex = -1;
    double best = 1e300;
    for (int k = 0; k < 3; ++k) {
      const double la = (v[(k + 1) % 3] - v[k]).norm();
      const double lb = (v[(k + 2) % 3] - v[k]).norm();
      const double mismatch = std::abs(la - lb);
      if (mismatch < best) {
        best = mismatch;
        apex = k;
      }
    }
    const Vec3& a = v[apex];
    const Vec3& b1 = v[(apex + 1) % 3];
    const Vec3& b2 = v[(apex + 2) % 3];
    const double leg = (a - b1).norm();
    if (best > 1e-6 * std::max(1.0, leg))
      throw GeometryError("standardize_triangle_units: non-isosceles cross-section");
    const Vec3 u = (b2 - b1).normalized();
    const Vec3 foot = b1 + (a - b1).dot(u) * u;
    const Vec3 reflected = 2.0 * foot - a;
    out.vertices.push_back(b1);
    out.vertices.push_back(b2);
    out.vertices.push_back(a);
    out.vertices.push_back(reflected);
  }
  out.faces = canonical_card_faces(n);
  out.card_sizes = {n};
  return out;
}

FilterResult filter_style(const Hairstyle& style, const PreprocessConfig& cfg) {
  std::size_t total = 0;
  for (const auto& card : style.cards) {
    if (card.size() < 2) return {false, "card-too-short"};
    total += card.size();
    for (const auto& p : card.points) {
      if (p.width > cfg.max_width_thickness) return {false, "outlier-width"};
      if (p.thickness > cfg.max_width_thickness) return {false, "outlier-thickness"};
      if (p.width <= 0.0 || p.thickness <= 0.0) return {false, "non-positive-extent"};
    }
  }
  if (total > cfg.max_total_points) return {false, "too-many-points"};
  return {true, ""};
}

double recall(const std::vector<Vec3>& accepted, const std::vector<Vec3>& original, double eps) {
  if (original.empty()) throw ValueError("recall: empty original vertex set");
  if (accepted.empty()) return 0.0;
  KdTree tree(accepted);
  std::size_t hit = 0;
  for (const auto& p : original) hit += tree.nearest(p).second <= eps;
  return static_cast<double>(hit) / static_cast<double>(original.size());
}

PreprocessReport preprocess_mesh(const HairMesh& raw, const PreprocessConfig& cfg) {
  PreprocessReport report;
  const HairMesh merged = merge_close_vertices(raw, cfg.vertex_merge_eps);
  const auto components = split_watertight_components(merged, &report.dropped_components);
  report.components = components.size() + report.dropped_components;
  if (report.dropped_components > 0)
    report.reasons.push_back("non-watertight-components: " +
                             std::to_string(report.dropped_components));

  std::vector<Vec3> accepted_vertices;
  for (const auto& comp : components) {
    auto result = verify_card_pattern(comp);
    if (!result.ok()) {
      try {
        result = verify_card_pattern(standardize_triangle_units(comp));
      } catch (const GeometryError&) {
      }
    }
    if (result.ok()) {
      report.style.cards.push_back(std::move(*result.card));
      accepted_vertices.insert(accepted_vertices.end(), comp.vertices.begin(),
                               comp.vertices.end());
    } else {
      ++report.rejected_cards;
      report.reasons.push_back("rejected-card: " + result.reason);
    }
  }

  if (report.style.cards.empty()) {
    report.reasons.push_back("no-valid-cards");
    return report;
  }
  report.recall = recall(accepted_vertices, raw.vertices, cfg.vertex_merge_eps);
  if (report.recall < cfg.recall_threshold) {
    report.reasons.push_back("low-recall");
    return report;
  }
  const auto filter = filter_style(report.style, cfg);
  if (!filter.accepted) {
    report.reasons.push_back(filter.reason);
    return report;
  }
  report.accepted = true;
  return report;
}

Hairstyle generate_synthetic(const SynthConfig& cfg) {
  if (cfg.min_cards < 1 || cfg.max_cards < cfg.min_cards || cfg.min_points < 2 ||
      cfg.max_points < cfg.min_points)
    throw ValueError("generate_synthetic: empty card or point range");

  std::mt19937_64 rng(cfg.seed);
  const int cards = uniform_int(rng, cfg.min_cards, cfg.max_cards);
  std::vector<int> counts(cards);
  std::size_t total = 0;
  for (auto& c : counts) {
    c = uniform_int(rng, cfg.min_points, cfg.max_points);
    total += c;
  }
  for (std::size_t i = 0; total > cfg.max_total_points; i = (i + 1) % counts.size()) {
    if (counts[i] > cfg.min_points) {
      --counts[i];
      --total;
    }
  }

  auto random_unit = [&rng]() {
    for (;;) {
      Vec3 v(uniform_in(rng, -1, 1), uniform_in(rng, -1, 1), uniform_in(rng, -1, 1));
      const double len = v.norm();
      if (len > 0.1 && len <= 1.0) return Vec3(v / len);
    }
  };

  Hairstyle style;
  for (int c = 0; c < cards; ++c) {
    const double y = uniform_in(rng, 0.15, 1.0);
    const double theta = uniform_in(rng, 0.0, 2.0 * M_PI);
    const double rxz = std::sqrt(std::max(0.0, 1.0 - y * y));
    const Vec3 dir(rxz * std::cos(theta), y, rxz * std::sin(theta));
    const Vec3 root = Vec3(0, cfg.scalp_center_y, 0) + cfg.scalp_radius * dir;

    const Vec3 d0 = (Vec3(0.6 * dir.x(), -0.9, 0.6 * dir.z()) + 0.25 * random_unit()).normalized();
    const double length = uniform_in(rng, cfg.min_length, cfg.max_length);
    const Vec3 c2 = cfg.curl * length * uniform_in(rng, 0.0, 1.0) * random_unit();
    const Vec3 c3 = 0.5 * cfg.curl * length * uniform_in(rng, 0.0, 1.0) * random_unit();

    const int n = counts[c];
    std::vector<Vec3> pos(n);
    double clip = 1.0;
    for (int i = 0; i < n; ++i) {
      const double s = static_cast<double>(i) / (n - 1);
      pos[i] = root + s * length * d0 + s * s * c2 + s * s * s * c3;
      for (int ax = 0; ax < 3; ++ax) {
        const double q = pos[i][ax] - root[ax];
        if (root[ax] + q > 0.45 && q > 0) clip = std::min(clip, (0.45 - root[ax]) / q);
        if (root[ax] + q < -0.45 && q < 0) clip = std::min(clip, (-0.45 - root[ax]) / q);
      }
    }

    const double w0 = uniform_in(rng, 0.02, cfg.max_root_width);
    const double t0 = w0 * uniform_in(rng, 0.3, 0.6);
    HairCard card;
    for (int i = 0; i < n; ++i) {
      const double s = static_cast<double>(i) / (n - 1);
      ControlPoint cp;
      cp.position = root + clip * (pos[i] - root);
      cp.width = w0 * (1.0 - 0.9 * s);
      cp.thickness = t0 * (1.0 - 0.9 * s);
      card.points.push_back(cp);
    }
    style.cards.push_back(std::move(card));
  }
  return style;
}

void save_dataset(const std::vector<Hairstyle>& styles, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::ostringstream manifest;
  for (std::size_t i = 0; i < styles.size(); ++i) {
    std::ostringstream name;
    name << "style_" << std::setfill('0') << std::setw(4) << i << ".json";
    save_hairstyle(styles[i], (fs::path(dir) / name.str()).string());
    nlohmann::json line{{"path", name.str()},
                        {"cards", styles[i].cards.size()},
                        {"points", styles[i].total_points()}};
    manifest << line.dump() << "\n";
  }
  write_file((fs::path(dir) / "manifest.jsonl").string(), manifest.str());
}

std::vector<Hairstyle> load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  std::istringstream manifest(read_file((fs::path(dir) / "manifest.jsonl").string()));
  std::vector<Hairstyle> styles;
  std::string line;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    styles.push_back(load_hairstyle((fs::path(dir) / j.at("path").get<std::string>()).string()));
  }
  return styles;
}

}  // namespace charm
