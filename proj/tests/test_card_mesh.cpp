#include <doctest.h>

#include <random>

#include "charm/card_mesh.hpp"
#include "test_util.hpp"

using namespace charm;
using namespace charm::testutil;

TEST_CASE("card_to_mesh: vertex and face counts") {
  std::mt19937_64 rng(1);
  for (int n : {2, 3, 7, 40}) {
    auto card = random_card(rng, n);
    auto mesh = card_to_mesh(card);
    CHECK(mesh.vertices.size() == 4u * n);
    CHECK(mesh.faces.size() == 8u * (n - 1) + 4u);
  }
}

TEST_CASE("card_to_mesh: cross-section corners from the corner formula") {
  HairCard card;
  card.points = {{Vec3(0, 0, 0), 0.04, 0.02}, {Vec3(0.1, 0, 0), 0.04, 0.02}};
  FrameField f;
  f.tangents = {Vec3(1, 0, 0), Vec3(1, 0, 0)};
  f.width_dirs = {Vec3(0, 1, 0), Vec3(0, 1, 0)};
  f.thickness_dirs = {Vec3(0, 0, 1), Vec3(0, 0, 1)};
  auto mesh = card_to_mesh(card, f);
  CHECK((mesh.vertices[0] - Vec3(0, 0.02, 0)).norm() < 1e-15);
  CHECK((mesh.vertices[1] - Vec3(0, -0.02, 0)).norm() < 1e-15);
  CHECK((mesh.vertices[2] - Vec3(0, 0, 0.01)).norm() < 1e-15);
  CHECK((mesh.vertices[3] - Vec3(0, 0, -0.01)).norm() < 1e-15);
}

TEST_CASE("card_to_mesh: watertight with outward orientation") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 10; ++trial) {
    auto card = random_card(rng, 5 + (trial * 7) % 40);
    auto mesh = card_to_mesh(card);
    CHECK(edges_all_twice(mesh));
    CHECK(signed_volume(mesh) > 0.0);
  }
}

TEST_CASE("mesh_to_card: single diamond") {
  HairMesh mesh;
  mesh.vertices = {Vec3(0.02, 0, 0), Vec3(-0.02, 0, 0), Vec3(0, 0, 0.01), Vec3(0, 0, -0.01),
                   Vec3(0.12, 0, 0), Vec3(0.08, 0, 0),  Vec3(0.1, 0, 0.01), Vec3(0.1, 0, -0.01)};
  auto card = mesh_to_card(mesh);
  CHECK((card.points[0].position - Vec3(0, 0, 0)).norm() < 1e-15);
  CHECK(card.points[0].width == doctest::Approx(0.04).epsilon(1e-12));
  CHECK(card.points[0].thickness == doctest::Approx(0.02).epsilon(1e-12));
}

TEST_CASE("mesh_to_card: malformed cross-section count rejected") {
  HairMesh mesh;
  mesh.vertices = {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0)};
  CHECK_THROWS_AS(mesh_to_card(mesh), GeometryError);
}

TEST_CASE("mesh_to_card: non-intersecting diagonals rejected") {
  std::mt19937_64 rng(3);
  auto card = random_card(rng, 6);
  auto mesh = card_to_mesh(card);
  mesh.vertices[9] += Vec3(0.01, 0.0, 0.0);  // displace one corner of section 2
  CHECK_THROWS_AS(mesh_to_card(mesh), GeometryError);
}

TEST_CASE("roundtrip: 1000 random synthetic cards within 1e-5") {
  std::mt19937_64 rng(42);
  std::uniform_int_distribution<int> nn(5, 80);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    auto card = random_card(rng, nn(rng));
    auto back = mesh_to_card(card_to_mesh(card));
    REQUIRE(back.size() == card.size());
    for (std::size_t i = 0; i < card.size(); ++i) {
      worst = std::max(worst, (back.points[i].position - card.points[i].position).cwiseAbs().maxCoeff());
      worst = std::max(worst, std::abs(back.points[i].width - card.points[i].width));
      worst = std::max(worst, std::abs(back.points[i].thickness - card.points[i].thickness));
    }
  }
  CHECK(worst < 1e-5);
}

TEST_CASE("scale equivariance: mesh vertices scale exactly") {
  std::mt19937_64 rng(8);
  auto card = random_card(rng, 25);
  auto mesh1 = card_to_mesh(card);
  const double s = 3.0;
  HairCard scaled = card;
  for (auto& p : scaled.points) {
    p.position *= s;
    p.width *= s;
    p.thickness *= s;
  }
  auto mesh2 = card_to_mesh(scaled);
  for (std::size_t i = 0; i < mesh1.vertices.size(); ++i)
    CHECK((mesh2.vertices[i] - s * mesh1.vertices[i]).norm() < 1e-6 * s);
}

TEST_CASE("compression ratio: closed-form counts") {
  Hairstyle style;
  std::mt19937_64 rng(4);
  style.cards = {random_card(rng, 40)};
  CHECK(token_compression_ratio(style) == doctest::Approx(200.0 / 1428.0).epsilon(1e-12));
  style.cards = {random_card(rng, 2)};
  CHECK(token_compression_ratio(style) == doctest::Approx(10.0 / 60.0).epsilon(1e-12));

  double prev = 1.0;
  for (int n : {2, 5, 10, 40, 200}) {
    Hairstyle s1;
    s1.cards = {random_card(rng, n)};
    const double r = token_compression_ratio(s1);
    CHECK(r < prev);
    prev = r;
  }
  CHECK(prev > 5.0 / 36.0);  // asymptotic limit from below is never crossed
}
