#include <gtest/gtest.h>

#include <numeric>
#include <random>

#include "fixtures.hpp"
#include "semprint/error.hpp"
#include "semprint/io.hpp"

namespace semprint {
namespace {

TEST(BoxMesh, ValidAndFillsTheBox) {
  const auto mesh = generate_box_mesh(3, 2, 4, Vec3(1.5, 1.0, 2.0));
  EXPECT_EQ(mesh.vertex_count(), 4 * 3 * 5);
  EXPECT_EQ(mesh.element_count(), 6 * 3 * 2 * 4);
  EXPECT_TRUE(validate_mesh(mesh).empty());
  EXPECT_NEAR(total_volume(mesh), 3.0, 1e-12);
  for (int e = 0; e < mesh.element_count(); ++e) EXPECT_GT(element_volume(mesh, e), 0.0);
}

TEST(ShaftMesh, VolumeIsThePolygonPrism) {
  const int n = 12;
  const auto mesh = generate_shaft_mesh(1.0, 10.0, n, 5);
  EXPECT_TRUE(validate_mesh(mesh).empty());
  const double polygon = 0.5 * n * std::sin(2.0 * std::numbers::pi / n);
  EXPECT_NEAR(total_volume(mesh), polygon * 10.0, 1e-10);
}

TEST(Generators, RejectBadArguments) {
  EXPECT_THROW(generate_box_mesh(0, 1, 1, Vec3(1, 1, 1)), Error);
  EXPECT_THROW(generate_box_mesh(1, 1, 1, Vec3(1, -1, 1)), Error);
  EXPECT_THROW(generate_shaft_mesh(-1.0, 1.0, 8, 1), Error);
}

TEST(Validation, ReportsInvertedAndDegenerateTets) {
  auto mesh = generate_box_mesh(1, 1, 1, Vec3(1, 1, 1));
  std::swap(mesh.tets[2][0], mesh.tets[2][1]);
  auto report = validate_mesh(mesh);
  ASSERT_FALSE(report.empty());
  EXPECT_EQ(report.front().kind, ViolationKind::non_positive_volume);
  EXPECT_EQ(report.front().id, 2);

  mesh = generate_box_mesh(1, 1, 1, Vec3(1, 1, 1));
  mesh.tets[0][3] = mesh.tets[0][0];
  report = validate_mesh(mesh);
  ASSERT_FALSE(report.empty());
  EXPECT_EQ(report.front().kind, ViolationKind::repeated_vertex);
}

TEST(Validation, ReportsOpenBoundaryAndUnreferencedVertex) {
  auto mesh = generate_box_mesh(1, 1, 1, Vec3(1, 1, 1));
  mesh.vertices.push_back(Vec3(5, 5, 5));
  bool unreferenced = false;
  for (const auto& v : validate_mesh(mesh)) unreferenced |= v.kind == ViolationKind::unreferenced_vertex;
  EXPECT_TRUE(unreferenced);

  mesh = generate_box_mesh(2, 1, 1, Vec3(2, 1, 1));
  mesh.tets.pop_back();
  bool open = false;
  for (const auto& v : validate_mesh(mesh)) open |= v.kind == ViolationKind::open_boundary;
  EXPECT_TRUE(open);
}

TEST(Boundary, BoxSurfaceArea) {
  const auto mesh = generate_box_mesh(2, 3, 2, Vec3(2, 3, 1));
  double area = 0.0;
  for (const Face& f : boundary_faces(mesh)) {
    area += 0.5 * (mesh.vertices[f[1]] - mesh.vertices[f[0]]).cross(mesh.vertices[f[2]] - mesh.vertices[f[0]]).norm();
  }
  EXPECT_NEAR(area, 2 * (2 * 3 + 2 * 1 + 3 * 1), 1e-12);
  EXPECT_EQ(static_cast<int>(boundary_vertices(mesh).size()), 3 * 4 * 3 - 2);
}

TEST(Layers, PartitionByCentroidHeight) {
  const auto mesh = generate_box_mesh(2, 2, 4, Vec3(1, 1, 2));
  const auto part = layer_partition(mesh, 1.0);
  ASSERT_EQ(part.layer_count(), 2);
  EXPECT_EQ(part.layers[0].size(), part.layers[1].size());
  for (int e = 0; e < mesh.element_count(); ++e) {
    EXPECT_EQ(part.element_layer[e], centroid(mesh, e).z() < 1.0 ? 0 : 1);
  }
  EXPECT_THROW(layer_partition(mesh, 0.0), Error);
}

TEST(MeshIo, RoundTripIsExact) {
  const auto mesh = generate_shaft_mesh(1.3, 7.1, 9, 3);
  const auto again = parse_mesh(serialize_mesh(mesh));
  EXPECT_EQ(again, mesh);
  EXPECT_EQ(serialize_mesh(again), serialize_mesh(mesh));
}

TEST(MeshIo, RejectsMalformedInput) {
  EXPECT_THROW(parse_mesh("{"), Error);
  EXPECT_THROW(parse_mesh(R"({"vertices": [[0,0,0]], "tets": [[0,0,0,7]]})"), Error);
}

TEST(Relabel, PreservesGeometry) {
  const auto mesh = generate_box_mesh(2, 2, 2, Vec3(1, 1, 1));
  std::vector<int> perm(mesh.vertex_count());
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 rng(7);
  std::shuffle(perm.begin(), perm.end(), rng);
  const auto r = relabel_vertices(mesh, perm);
  EXPECT_TRUE(validate_mesh(r).empty());
  for (int v = 0; v < mesh.vertex_count(); ++v) EXPECT_EQ(r.vertices[perm[v]], mesh.vertices[v]);
  for (int e = 0; e < mesh.element_count(); ++e) EXPECT_DOUBLE_EQ(element_volume(r, e), element_volume(mesh, e));
}

}  // namespace
}  // namespace semprint
