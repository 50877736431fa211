#include "semprint/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <set>

#include "semprint/error.hpp"

namespace semprint {

namespace {

Face sorted_face(int a, int b, int c) {
  Face f{a, b, c};
  std::sort(f.begin(), f.end());
  return f;
}

// Outward-oriented faces of a positively oriented tet (a, b, c, d).
std::array<Face, 4> oriented_faces(const Tet& t) {
  return {Face{t[0], t[2], t[1]}, Face{t[0], t[1], t[3]}, Face{t[0], t[3], t[2]},
          Face{t[1], t[2], t[3]}};
}

void orient_positive(const std::vector<Vec3>& vertices, Tet& t) {
  const TetCoords x{vertices[t[0]], vertices[t[1]], vertices[t[2]], vertices[t[3]]};
  if (signed_volume(x) < 0.0) std::swap(t[2], t[3]);
}

}  // namespace

TetCoords VolumetricMesh::tet_coords(int element) const {
  const Tet& t = tets.at(element);
  return {vertices.at(t[0]), vertices.at(t[1]), vertices.at(t[2]), vertices.at(t[3])};
}

bool VolumetricMesh::operator==(const VolumetricMesh& other) const {
  if (tets != other.tets || vertices.size() != other.vertices.size()) return false;
  for (std::size_t i = 0; i < vertices.size(); ++i) {
    if (vertices[i] != other.vertices[i]) return false;
  }
  return true;
}

double signed_volume(const TetCoords& x) {
  return (x[1] - x[0]).cross(x[2] - x[0]).dot(x[3] - x[0]) / 6.0;
}

double element_volume(const VolumetricMesh& mesh, int element) {
  return signed_volume(mesh.tet_coords(element));
}

std::vector<double> element_volumes(const VolumetricMesh& mesh) {
  std::vector<double> v(mesh.tets.size());
  for (int e = 0; e < mesh.element_count(); ++e) v[e] = element_volume(mesh, e);
  return v;
}

double total_volume(const VolumetricMesh& mesh) {
  double sum = 0.0;
  for (int e = 0; e < mesh.element_count(); ++e) sum += element_volume(mesh, e);
  return sum;
}

Vec3 centroid(const VolumetricMesh& mesh, int element) {
  const TetCoords x = mesh.tet_coords(element);
  return 0.25 * (x[0] + x[1] + x[2] + x[3]);
}

BoundingBox bounding_box(const VolumetricMesh& mesh) {
  if (mesh.vertices.empty()) return {Vec3::Zero(), Vec3::Zero()};
  BoundingBox box{mesh.vertices.front(), mesh.vertices.front()};
  for (const Vec3& p : mesh.vertices) {
    box.lo = box.lo.cwiseMin(p);
    box.hi = box.hi.cwiseMax(p);
  }
  return box;
}

BoundingBox bounding_box(const TetCoords& x) {
  BoundingBox box{x[0], x[0]};
  for (const Vec3& p : x) {
    box.lo = box.lo.cwiseMin(p);
    box.hi = box.hi.cwiseMax(p);
  }
  return box;
}

double volume_epsilon(const BoundingBox& box) {
  const double d = box.diagonal();
  return 1e-12 * d * d * d;
}

VolumetricMesh generate_box_mesh(int nx, int ny, int nz, const Vec3& dims) {
  if (nx < 1 || ny < 1 || nz < 1) {
    throw Error(ErrorCode::invalid_argument, "box mesh subdivisions must be >= 1");
  }
  if (!(dims.x() > 0.0 && dims.y() > 0.0 && dims.z() > 0.0) || !dims.allFinite()) {
    throw Error(ErrorCode::invalid_argument, "box mesh dimensions must be strictly positive");
  }

  VolumetricMesh mesh;
  mesh.vertices.reserve(static_cast<std::size_t>(nx + 1) * (ny + 1) * (nz + 1));
  for (int k = 0; k <= nz; ++k) {
    for (int j = 0; j <= ny; ++j) {
      for (int i = 0; i <= nx; ++i) {
        mesh.vertices.emplace_back(dims.x() * i / nx, dims.y() * j / ny, dims.z() * k / nz);
      }
    }
  }
  auto vid = [&](int i, int j, int k) { return i + (nx + 1) * (j + (ny + 1) * k); };

  // Kuhn split: one tet per monotone path from the low corner to the high corner.
  static constexpr std::array<std::array<int, 3>, 6> kPaths{{
      {0, 1, 2}, {0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0}}};

  mesh.tets.reserve(static_cast<std::size_t>(6) * nx * ny * nz);
  for (int k = 0; k < nz; ++k) {
    for (int j = 0; j < ny; ++j) {
      for (int i = 0; i < nx; ++i) {
        for (const auto& path : kPaths) {
          std::array<int, 3> c{i, j, k};
          Tet t{};
          t[0] = vid(c[0], c[1], c[2]);
          for (int s = 0; s < 3; ++s) {
            ++c[path[s]];
            t[s + 1] = vid(c[0], c[1], c[2]);
          }
          orient_positive(mesh.vertices, t);
          mesh.tets.push_back(t);
        }
      }
    }
  }
  return mesh;
}

VolumetricMesh generate_shaft_mesh(double radius, double height, int n_radial, int n_axial) {
  if (!(radius > 0.0) || !std::isfinite(radius)) {
    throw Error(ErrorCode::invalid_argument, "shaft radius must be > 0");
  }
  if (!(height > 0.0) || !std::isfinite(height)) {
    throw Error(ErrorCode::invalid_argument, "shaft height must be > 0");
  }
  if (n_radial < 3) throw Error(ErrorCode::invalid_argument, "shaft n_radial must be >= 3");
  if (n_axial < 1) throw Error(ErrorCode::invalid_argument, "shaft n_axial must be >= 1");

  const int per_layer = n_radial + 1;
  VolumetricMesh mesh;
  mesh.vertices.reserve(static_cast<std::size_t>(per_layer) * (n_axial + 1));
  for (int k = 0; k <= n_axial; ++k) {
    const double z = height * k / n_axial;
    mesh.vertices.emplace_back(0.0, 0.0, z);
    for (int i = 0; i < n_radial; ++i) {
      const double theta = 2.0 * std::numbers::pi * i / n_radial;
      mesh.vertices.emplace_back(radius * std::cos(theta), radius * std::sin(theta), z);
    }
  }

  // Prism split driven by ascending vertex id: every quad side face gets the
  // diagonal from its lower-id bottom vertex to its higher-id top vertex, which
  // is the same choice from both neighbouring prisms.
  mesh.tets.reserve(static_cast<std::size_t>(3) * n_radial * n_axial);
  for (int k = 0; k < n_axial; ++k) {
    for (int i = 0; i < n_radial; ++i) {
      std::array<int, 3> local{0, 1 + i, 1 + (i + 1) % n_radial};
      std::sort(local.begin(), local.end());
      const int a = k * per_layer + local[0];
      const int b = k * per_layer + local[1];
      const int c = k * per_layer + local[2];
      const int a2 = a + per_layer, b2 = b + per_layer, c2 = c + per_layer;
      for (Tet t : {Tet{a, b, c, c2}, Tet{a, b, b2, c2}, Tet{a, a2, b2, c2}}) {
        orient_positive(mesh.vertices, t);
        mesh.tets.push_back(t);
      }
    }
  }
  return mesh;
}

std::string to_string(ViolationKind kind) {
  switch (kind) {
    case ViolationKind::vertex_out_of_range: return "vertex_out_of_range";
    case ViolationKind::repeated_vertex: return "repeated_vertex";
    case ViolationKind::non_positive_volume: return "non_positive_volume";
    case ViolationKind::degenerate_volume: return "degenerate_volume";
    case ViolationKind::unreferenced_vertex: return "unreferenced_vertex";
    case ViolationKind::non_manifold_face: return "non_manifold_face";
    case ViolationKind::open_boundary: return "open_boundary";
  }
  return "unknown";
}

ValidationReport validate_mesh(const VolumetricMesh& mesh) {
  ValidationReport report;
  const int nv = mesh.vertex_count();
  const double eps = volume_epsilon(bounding_box(mesh));

  std::vector<bool> referenced(nv, false);
  std::map<Face, std::vector<int>> face_owners;

  for (int e = 0; e < mesh.element_count(); ++e) {
    const Tet& t = mesh.tets[e];
    bool in_range = true;
    for (int v : t) {
      if (v < 0 || v >= nv) in_range = false;
    }
    if (!in_range) {
      report.push_back({ViolationKind::vertex_out_of_range, e,
                        "element " + std::to_string(e) + " references a vertex id outside 0.." +
                            std::to_string(nv - 1)});
      continue;
    }
    for (int v : t) referenced[v] = true;

    Tet s = t;
    std::sort(s.begin(), s.end());
    if (std::adjacent_find(s.begin(), s.end()) != s.end()) {
      report.push_back({ViolationKind::repeated_vertex, e,
                        "element " + std::to_string(e) + " repeats a vertex"});
      continue;
    }

    const double vol = element_volume(mesh, e);
    if (vol <= 0.0) {
      report.push_back({ViolationKind::non_positive_volume, e,
                        "element " + std::to_string(e) + " has signed volume " +
                            std::to_string(vol)});
    } else if (vol <= eps) {
      report.push_back({ViolationKind::degenerate_volume, e,
                        "element " + std::to_string(e) + " is degenerate (volume " +
                            std::to_string(vol) + ")"});
    }

    for (const Face& f : oriented_faces(t)) face_owners[sorted_face(f[0], f[1], f[2])].push_back(e);
  }

  std::map<std::pair<int, int>, int> boundary_edge_uses;
  for (const auto& [face, owners] : face_owners) {
    if (owners.size() > 2) {
      report.push_back({ViolationKind::non_manifold_face, owners[2],
                        "face shared by " + std::to_string(owners.size()) + " elements"});
    } else if (owners.size() == 1) {
      for (int i = 0; i < 3; ++i) {
        const int a = face[i], b = face[(i + 1) % 3];
        ++boundary_edge_uses[{std::min(a, b), std::max(a, b)}];
      }
    }
  }
  std::set<int> open_vertices;
  for (const auto& [edge, uses] : boundary_edge_uses) {
    if (uses != 2) open_vertices.insert(edge.first);
  }
  for (int v : open_vertices) {
    report.push_back({ViolationKind::open_boundary, v,
                      "boundary surface is not a closed manifold at vertex " + std::to_string(v)});
  }

  for (int v = 0; v < nv; ++v) {
    if (!referenced[v]) {
      report.push_back({ViolationKind::unreferenced_vertex, v,
                        "vertex " + std::to_string(v) + " is not used by any element"});
    }
  }
  return report;
}

LayerPartition layer_partition(const VolumetricMesh& mesh, double layer_height) {
  if (!(layer_height > 0.0) || !std::isfinite(layer_height)) {
    throw Error(ErrorCode::invalid_argument, "layer height must be > 0");
  }
  const BoundingBox box = bounding_box(mesh);
  const double extent = box.hi.z() - box.lo.z();
  const int count = std::max(1, static_cast<int>(std::ceil(extent / layer_height - 1e-9)));

  LayerPartition partition;
  partition.layer_height = layer_height;
  partition.z_origin = box.lo.z();
  partition.layers.assign(count, {});
  partition.element_layer.assign(mesh.tets.size(), 0);
  for (int e = 0; e < mesh.element_count(); ++e) {
    const double z = centroid(mesh, e).z() - box.lo.z();
    const int k = std::clamp(static_cast<int>(std::floor(z / layer_height)), 0, count - 1);
    partition.layers[k].push_back(e);
    partition.element_layer[e] = k;
  }
  return partition;
}

std::vector<Face> boundary_faces(const VolumetricMesh& mesh) {
  std::map<Face, std::pair<int, Face>> seen;  // sorted key -> (count, oriented face)
  for (const Tet& t : mesh.tets) {
    for (const Face& f : oriented_faces(t)) {
      auto [it, inserted] = seen.try_emplace(sorted_face(f[0], f[1], f[2]), 0, f);
      ++it->second.first;
    }
  }
  std::vector<Face> out;
  for (const auto& [key, entry] : seen) {
    if (entry.first == 1) out.push_back(entry.second);
  }
  return out;
}

std::vector<int> boundary_vertices(const VolumetricMesh& mesh) {
  std::set<int> ids;
  for (const Face& f : boundary_faces(mesh)) ids.insert(f.begin(), f.end());
  return {ids.begin(), ids.end()};
}

std::vector<std::pair<int, int>> face_adjacent_pairs(const VolumetricMesh& mesh) {
  std::map<Face, std::vector<int>> owners;
  for (int e = 0; e < mesh.element_count(); ++e) {
    for (const Face& f : oriented_faces(mesh.tets[e])) owners[sorted_face(f[0], f[1], f[2])].push_back(e);
  }
  std::vector<std::pair<int, int>> pairs;
  for (const auto& [face, list] : owners) {
    if (list.size() == 2) pairs.emplace_back(std::min(list[0], list[1]), std::max(list[0], list[1]));
  }
  std::sort(pairs.begin(), pairs.end());
  return pairs;
}

std::vector<int> vertices_on_plane(const VolumetricMesh& mesh, int axis, double value, double tol) {
  if (axis < 0 || axis > 2) throw Error(ErrorCode::invalid_argument, "axis must be 0, 1 or 2");
  std::vector<int> ids;
  for (int v = 0; v < mesh.vertex_count(); ++v) {
    if (std::abs(mesh.vertices[v][axis] - value) <= tol) ids.push_back(v);
  }
  return ids;
}

VolumetricMesh relabel_vertices(const VolumetricMesh& mesh, const std::vector<int>& new_id) {
  if (static_cast<int>(new_id.size()) != mesh.vertex_count()) {
    throw Error(ErrorCode::invalid_argument, "relabeling must cover every vertex");
  }
  VolumetricMesh out;
  out.vertices.resize(mesh.vertices.size());
  std::vector<bool> hit(mesh.vertices.size(), false);
  for (int v = 0; v < mesh.vertex_count(); ++v) {
    const int to = new_id[v];
    if (to < 0 || to >= mesh.vertex_count() || hit[to]) {
      throw Error(ErrorCode::invalid_argument, "relabeling is not a permutation");
    }
    hit[to] = true;
    out.vertices[to] = mesh.vertices[v];
  }
  out.tets = mesh.tets;
  for (Tet& t : out.tets) {
    for (int& v : t) v = new_id[v];
  }
  return out;
}

}  // namespace semprint
