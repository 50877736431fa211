#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace semprint {

using Vec3 = Eigen::Vector3d;
using Tet = std::array<int, 4>;
using TetCoords = std::array<Vec3, 4>;
/// Triangle given by three vertex ids; orientation depends on context.
using Face = std::array<int, 3>;

/// Tetrahedral volume mesh. Lengths are in mm.
///
/// Vertex ids are the dense indices 0..n-1 into `vertices`; each tet stores four
/// vertex ids ordered so that its signed volume is positive.
struct VolumetricMesh {
  std::vector<Vec3> vertices;
  std::vector<Tet> tets;

  int vertex_count() const { return static_cast<int>(vertices.size()); }
  int element_count() const { return static_cast<int>(tets.size()); }
  TetCoords tet_coords(int element) const;

  bool operator==(const VolumetricMesh& other) const;
};

struct BoundingBox {
  Vec3 lo;
  Vec3 hi;
  double diagonal() const { return (hi - lo).norm(); }
};

double signed_volume(const TetCoords& x);
double element_volume(const VolumetricMesh& mesh, int element);
std::vector<double> element_volumes(const VolumetricMesh& mesh);
double total_volume(const VolumetricMesh& mesh);
Vec3 centroid(const VolumetricMesh& mesh, int element);
BoundingBox bounding_box(const VolumetricMesh& mesh);
BoundingBox bounding_box(const TetCoords& x);

/// Volume below which a tet counts as degenerate: 1e-12 * diagonal^3.
double volume_epsilon(const BoundingBox& box);

/// Structured nx*ny*nz grid on [0,dims], each hexahedral cell split into six
/// tets around its main diagonal (Kuhn split), so neighbouring cells conform.
VolumetricMesh generate_box_mesh(int nx, int ny, int nz, const Vec3& dims);

/// Cylinder of the given radius along +z, base at z=0 and top at z=height.
/// The cross-section is an inscribed regular n_radial-gon fanned from the axis;
/// each wedge prism per axial slab is split into three tets.
VolumetricMesh generate_shaft_mesh(double radius, double height, int n_radial, int n_axial);

enum class ViolationKind {
  vertex_out_of_range,
  repeated_vertex,
  non_positive_volume,
  degenerate_volume,
  unreferenced_vertex,
  non_manifold_face,
  open_boundary,
};

std::string to_string(ViolationKind kind);

struct Violation {
  ViolationKind kind;
  int id;  ///< element id, or vertex id for unreferenced_vertex / open_boundary
  std::string message;
};

using ValidationReport = std::vector<Violation>;

/// Checks all mesh invariants. An empty report means the mesh is valid.
ValidationReport validate_mesh(const VolumetricMesh& mesh);

struct LayerPartition {
  double layer_height = 0.0;
  double z_origin = 0.0;
  std::vector<std::vector<int>> layers;  ///< element ids, ascending z
  std::vector<int> element_layer;        ///< inverse map

  int layer_count() const { return static_cast<int>(layers.size()); }
};

/// Bins elements by centroid height relative to the lowest vertex.
LayerPartition layer_partition(const VolumetricMesh& mesh, double layer_height);

/// Boundary triangles, each ordered so its right-hand normal points outward.
std::vector<Face> boundary_faces(const VolumetricMesh& mesh);
std::vector<int> boundary_vertices(const VolumetricMesh& mesh);

/// Pairs (e, f), e < f, of elements sharing a triangular face.
std::vector<std::pair<int, int>> face_adjacent_pairs(const VolumetricMesh& mesh);

/// Vertices whose coordinate along `axis` is within `tol` of `value`.
std::vector<int> vertices_on_plane(const VolumetricMesh& mesh, int axis, double value,
                                   double tol = 1e-9);

/// Renumbers vertices: vertex v becomes new_id[v]. Tet vertex order is kept.
VolumetricMesh relabel_vertices(const VolumetricMesh& mesh, const std::vector<int>& new_id);

}  // namespace semprint
