#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <numeric>
#include <random>

#include "charm/card_mesh.hpp"
#include "charm/dataset.hpp"
#include "charm/sequence.hpp"
#include "test_util.hpp"

using namespace charm;
using namespace charm::testutil;

namespace {

// every face corner gets its own jittered vertex copy
HairMesh unweld(const HairMesh& mesh, double jitter, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-jitter, jitter);
  HairMesh out;
  for (const auto& f : mesh.faces) {
    Triangle t;
    for (int k = 0; k < 3; ++k) {
      t.v[k] = static_cast<std::uint32_t>(out.vertices.size());
      out.vertices.push_back(mesh.vertices[f.v[k]] + Vec3(u(rng), u(rng), u(rng)));
    }
    out.faces.push_back(t);
  }
  return out;
}

HairMesh torus_mesh(int nu = 8, int nv = 8, double R = 0.3, double r = 0.1) {
  HairMesh mesh;
  for (int i = 0; i < nu; ++i)
    for (int j = 0; j < nv; ++j) {
      const double a = 2.0 * M_PI * i / nu, b = 2.0 * M_PI * j / nv;
      mesh.vertices.emplace_back((R + r * std::cos(b)) * std::cos(a),
                                 (R + r * std::cos(b)) * std::sin(a), r * std::sin(b));
    }
  auto id = [&](int i, int j) {
    return static_cast<std::uint32_t>(((i + nu) % nu) * nv + (j + nv) % nv);
  };
  for (int i = 0; i < nu; ++i)
    for (int j = 0; j < nv; ++j) {
      mesh.faces.push_back({id(i, j), id(i + 1, j), id(i + 1, j + 1)});
      mesh.faces.push_back({id(i, j), id(i + 1, j + 1), id(i, j + 1)});
    }
  return mesh;
}

bool cards_close(const HairCard& a, const HairCard& b, double tol) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if ((a.points[i].position - b.points[i].position).cwiseAbs().maxCoeff() > tol) return false;
    if (std::abs(a.points[i].width - b.points[i].width) > tol) return false;
    if (std::abs(a.points[i].thickness - b.points[i].thickness) > tol) return false;
  }
  return true;
}

HairCard reversed(HairCard card) {
  std::reverse(card.points.begin(), card.points.end());
  return card;
}

}  // namespace

TEST_CASE("merge_close_vertices: pair at eps/2 collapses to the midpoint") {
  HairMesh mesh;
  mesh.vertices = {Vec3(0, 0, 0), Vec3(0.5e-6, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0)};
  mesh.faces.push_back({0, 2, 3});
  mesh.faces.push_back({1, 2, 3});
  auto out = merge_close_vertices(mesh, 1e-6);
  REQUIRE(out.vertices.size() == 3);
  CHECK((out.vertices[0] - Vec3(0.25e-6, 0, 0)).norm() < 1e-15);
  REQUIRE(out.faces.size() == 2);  // both faces survive, now coincident
  CHECK(out.faces[0].v[0] == out.faces[1].v[0]);
}

TEST_CASE("merge_close_vertices: no close pairs leaves the mesh unchanged") {
  auto mesh = card_to_mesh(helix_card(20));
  auto out = merge_close_vertices(mesh, 1e-6);
  CHECK(out.vertices == mesh.vertices);
  REQUIRE(out.faces.size() == mesh.faces.size());
  for (std::size_t i = 0; i < out.faces.size(); ++i)
    for (int k = 0; k < 3; ++k) CHECK(out.faces[i].v[k] == mesh.faces[i].v[k]);
}

TEST_CASE("merge_close_vertices: re-welds an unwelded mesh and is idempotent") {
  std::mt19937_64 rng(91);
  for (int trial = 0; trial < 20; ++trial) {
    auto card = boxed_random_card(rng, 4 + trial % 10);
    auto mesh = card_to_mesh(card);
    auto shattered = unweld(mesh, 2.4e-7, rng);
    auto merged = merge_close_vertices(shattered, 1e-6);
    CHECK(merged.vertices.size() == mesh.vertices.size());
    CHECK(merged.faces.size() == mesh.faces.size());

    auto twice = merge_close_vertices(merged, 1e-6);
    CHECK(twice.vertices == merged.vertices);
    REQUIRE(twice.faces.size() == merged.faces.size());
    for (std::size_t i = 0; i < twice.faces.size(); ++i)
      for (int k = 0; k < 3; ++k) CHECK(twice.faces[i].v[k] == merged.faces[i].v[k]);
  }
}

TEST_CASE("merge_close_vertices: degenerate faces dropped, bad eps rejected") {
  HairMesh mesh;
  mesh.vertices = {Vec3(0, 0, 0), Vec3(0.5e-7, 0, 0), Vec3(1, 0, 0)};
  mesh.faces.push_back({0, 1, 2});
  auto out = merge_close_vertices(mesh, 1e-6);
  CHECK(out.faces.empty());
  CHECK_THROWS_AS(merge_close_vertices(mesh, 0.0), ValueError);
}

TEST_CASE("split_watertight_components: two cards, a holed card, empty input") {
  std::mt19937_64 rng(97);
  Hairstyle style;
  style.cards.push_back(boxed_random_card(rng, 6));
  style.cards.push_back(boxed_random_card(rng, 9));
  auto mesh = style_to_mesh(style);
  std::size_t dropped = 0;
  auto parts = split_watertight_components(mesh, &dropped);
  CHECK(parts.size() == 2);
  CHECK(dropped == 0);
  CHECK(parts[0].vertices.size() == 24);
  CHECK(parts[1].vertices.size() == 36);
  for (const auto& p : parts) CHECK(edges_all_twice(p));

  auto holed = card_to_mesh(style.cards[0]);
  holed.faces.pop_back();  // open the tip cap
  auto none = split_watertight_components(holed, &dropped);
  CHECK(none.empty());
  CHECK(dropped == 1);

  CHECK(split_watertight_components(HairMesh{}).empty());
}

TEST_CASE("verify_card_pattern: accepts codec output exactly") {
  std::mt19937_64 rng(101);
  for (int trial = 0; trial < 60; ++trial) {
    auto card = boxed_random_card(rng, 2 + trial % 12);
    auto result = verify_card_pattern(card_to_mesh(card));
    REQUIRE(result.ok());
    CHECK(cards_close(*result.card, card, 1e-12));
  }
}

TEST_CASE("verify_card_pattern: invariant to vertex relabeling") {
  std::mt19937_64 rng(103);
  for (int trial = 0; trial < 30; ++trial) {
    auto card = boxed_random_card(rng, 3 + trial % 8);
    auto mesh = card_to_mesh(card);
    std::vector<std::uint32_t> perm(mesh.vertices.size());
    std::iota(perm.begin(), perm.end(), 0u);
    std::shuffle(perm.begin(), perm.end(), rng);
    HairMesh shuffled;
    shuffled.vertices.resize(mesh.vertices.size());
    for (std::size_t i = 0; i < perm.size(); ++i) shuffled.vertices[perm[i]] = mesh.vertices[i];
    for (const auto& f : mesh.faces)
      shuffled.faces.push_back({perm[f.v[0]], perm[f.v[1]], perm[f.v[2]]});
    auto result = verify_card_pattern(shuffled);
    REQUIRE(result.ok());
    // relabeling may flip which cap holds the smallest index
    CHECK((cards_close(*result.card, card, 1e-12) ||
           cards_close(*result.card, reversed(card), 1e-12)));
  }
}

TEST_CASE("verify_card_pattern: rejects non-card meshes with reasons") {
  auto torus = verify_card_pattern(torus_mesh());
  CHECK(!torus.ok());
  CHECK(torus.reason.find("cap") != std::string::npos);

  auto mesh = card_to_mesh(helix_card(12));
  mesh.vertices[4 * 5 + 2] += Vec3(0.01, 0.01, 0);  // break a diagonal intersection
  auto bent = verify_card_pattern(mesh);
  CHECK(!bent.ok());
  CHECK(bent.reason.find("diagonal") != std::string::npos);

  HairMesh tiny;
  tiny.vertices.resize(5);
  CHECK(!verify_card_pattern(tiny).ok());
}

TEST_CASE("standardize_triangle_units: reflection arithmetic") {
  // two identical isosceles sections stacked along y
  HairMesh tri;
  for (double y : {0.0, 0.1}) {
    tri.vertices.emplace_back(-0.02, y, 0);
    tri.vertices.emplace_back(0.02, y, 0);
    tri.vertices.emplace_back(0, y, 0.01);
  }
  auto out = standardize_triangle_units(tri);
  REQUIRE(out.vertices.size() == 8);
  CHECK((out.vertices[3] - Vec3(0, 0, -0.01)).norm() < 1e-12);

  auto result = verify_card_pattern(out);
  REQUIRE(result.ok());
  CHECK(result.card->points[0].width == doctest::Approx(0.04).epsilon(1e-12));
  CHECK(result.card->points[0].thickness == doctest::Approx(0.02).epsilon(1e-12));
}

TEST_CASE("standardize_triangle_units: diamonds unchanged, composition with verify") {
  std::mt19937_64 rng(107);
  auto card = boxed_random_card(rng, 7);
  auto diamond = card_to_mesh(card);
  auto same = standardize_triangle_units(diamond);
  CHECK(same.vertices == diamond.vertices);

  // triangle half-sections of the same card
  HairMesh tri;
  for (std::size_t i = 0; i < card.size(); ++i) {
    tri.vertices.push_back(diamond.vertices[4 * i + 0]);
    tri.vertices.push_back(diamond.vertices[4 * i + 1]);
    tri.vertices.push_back(diamond.vertices[4 * i + 2]);
  }
  auto rebuilt = verify_card_pattern(standardize_triangle_units(tri));
  REQUIRE(rebuilt.ok());
  CHECK(cards_close(*rebuilt.card, card, 1e-10));

  HairMesh scalene;
  scalene.vertices = {Vec3(0, 0, 0), Vec3(0.05, 0, 0), Vec3(0.01, 0.02, 0),
                      Vec3(0, 0.1, 0), Vec3(0.05, 0.1, 0), Vec3(0.01, 0.12, 0)};
  CHECK_THROWS_AS(standardize_triangle_units(scalene), GeometryError);
}

TEST_CASE("filter_style and recall") {
  std::mt19937_64 rng(109);
  PreprocessConfig cfg;
  Hairstyle ok_style;
  ok_style.cards.push_back(boxed_random_card(rng, 10));
  CHECK(filter_style(ok_style, cfg).accepted);

  Hairstyle wide = ok_style;
  wide.cards[0].points[3].width = 0.12;
  auto rej = filter_style(wide, cfg);
  CHECK(!rej.accepted);
  CHECK(rej.reason == "outlier-width");

  Hairstyle big;
  for (int i = 0; i < 130; ++i) big.cards.push_back(straight_card(50, Vec3(0, 0, 0), Vec3(0, 0.001, 0)));
  CHECK(filter_style(big, cfg).reason == "too-many-points");

  std::vector<Vec3> original = {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(2, 0, 0), Vec3(3, 0, 0)};
  CHECK(recall(original, original, 1e-6) == 1.0);
  CHECK(recall({original[0], original[1]}, original, 1e-6) == 0.5);
  CHECK(recall({}, original, 1e-6) == 0.0);
}

TEST_CASE("preprocess pipeline recovers perturbed style meshes") {
  std::mt19937_64 rng(113);
  std::uniform_real_distribution<double> u(-4e-7, 4e-7);
  for (int trial = 0; trial < 25; ++trial) {
    Hairstyle style;
    const int cards = 2 + trial % 4;
    for (int c = 0; c < cards; ++c) style.cards.push_back(boxed_random_card(rng, 3 + trial % 9));
    auto mesh = style_to_mesh(style);
    for (auto& v : mesh.vertices) v += Vec3(u(rng), u(rng), u(rng));

    auto report = preprocess_mesh(mesh);
    REQUIRE(report.accepted);
    REQUIRE(report.style.cards.size() == style.cards.size());
    CHECK(report.recall == 1.0);
    for (std::size_t c = 0; c < style.cards.size(); ++c)
      CHECK(cards_close(report.style.cards[c], style.cards[c], 1e-5));
  }
}

TEST_CASE("preprocess reports rejections") {
  auto report = preprocess_mesh(torus_mesh());
  CHECK(!report.accepted);
  CHECK(report.rejected_cards == 1);
  REQUIRE(!report.reasons.empty());
}

TEST_CASE("generate_synthetic: deterministic, in-range, filter-clean") {
  SynthConfig cfg;
  cfg.seed = 5;
  auto a = generate_synthetic(cfg);
  auto b = generate_synthetic(cfg);
  REQUIRE(a.cards.size() == b.cards.size());
  for (std::size_t c = 0; c < a.cards.size(); ++c) CHECK(a.cards[c].points == b.cards[c].points);

  auto scheme = PiecewiseScheme::standard();
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    SynthConfig sc;
    sc.seed = seed;
    auto style = generate_synthetic(sc);
    CHECK(style.cards.size() >= 25);
    CHECK(style.cards.size() <= 130);
    for (const auto& card : style.cards) {
      CHECK(card.size() >= 20);
      CHECK(card.size() <= 60);
      for (const auto& p : card.points) {
        CHECK(p.position.cwiseAbs().maxCoeff() <= 0.45 + 1e-12);
        CHECK(p.width > 0.0);
        CHECK(p.width <= 0.1);
        CHECK(p.thickness > 0.0);
        CHECK(p.thickness <= 0.1);
      }
    }
    CHECK(filter_style(style, PreprocessConfig{}).accepted);
    // token budget: points + separators + SOS/EOS
    CHECK(style.total_points() + style.cards.size() + 1 <= kMaxSequenceTokens);
  }
}

TEST_CASE("dataset directory roundtrip") {
  std::mt19937_64 rng(127);
  std::vector<Hairstyle> styles;
  for (int i = 0; i < 3; ++i) {
    Hairstyle s;
    for (int c = 0; c < 4; ++c) s.cards.push_back(boxed_random_card(rng, 5));
    styles.push_back(s);
  }
  const auto dir = std::filesystem::temp_directory_path() / "charm_dataset_test";
  std::filesystem::remove_all(dir);
  save_dataset(styles, dir.string());
  auto back = load_dataset(dir.string());
  REQUIRE(back.size() == styles.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    REQUIRE(back[i].cards.size() == styles[i].cards.size());
    for (std::size_t c = 0; c < back[i].cards.size(); ++c)
      CHECK(cards_close(back[i].cards[c], styles[i].cards[c], 1e-12));
  }
  std::filesystem::remove_all(dir);
}
