#include "semprint/fem.hpp"

#include <cmath>
#include <functional>
#include <map>

#include <Eigen/Dense>
#include <json.hpp>

#include "semprint/error.hpp"

namespace semprint {

std::string_view to_string(Physics physics) {
  return physics == Physics::elasticity ? "elasticity" : "conduction";
}

namespace {

void require_nondegenerate(const TetCoords& x) {
  const double vol = std::abs(signed_volume(x));
  if (!(vol > volume_epsilon(bounding_box(x)))) {
    throw Error(ErrorCode::degenerate_element,
                "degenerate tetrahedron (volume " + std::to_string(vol) + ")");
  }
}

}  // namespace

ShapeGradients shape_gradients(const TetCoords& x) {
  require_nondegenerate(x);
  Eigen::Matrix3d J;
  J.col(0) = x[1] - x[0];
  J.col(1) = x[2] - x[0];
  J.col(2) = x[3] - x[0];
  const Eigen::Matrix3d Jinv = J.inverse();
  ShapeGradients g;
  g.bottomRows<3>() = Jinv;  // grad of barycentric coordinate k is row k of J^-1
  g.row(0) = -Jinv.colwise().sum();
  return g;
}

Mat6 isotropic_elasticity(double young, double poisson) {
  if (!(young > 0.0) || !std::isfinite(young)) {
    throw Error(ErrorCode::invalid_argument, "Young's modulus must be > 0");
  }
  if (!(poisson > -1.0 && poisson < 0.5)) {
    throw Error(ErrorCode::invalid_argument, "Poisson ratio must lie in (-1, 0.5)");
  }
  const double lambda = young * poisson / ((1.0 + poisson) * (1.0 - 2.0 * poisson));
  const double mu = young / (2.0 * (1.0 + poisson));
  Mat6 C = Mat6::Zero();
  C.topLeftCorner<3, 3>().setConstant(lambda);
  C.topLeftCorner<3, 3>().diagonal().array() += 2.0 * mu;
  C.bottomRightCorner<3, 3>().diagonal().setConstant(mu);
  return C;
}

Mat12 element_stiffness(const TetCoords& x, double young, double poisson) {
  const Mat6 C = isotropic_elasticity(young, poisson);
  const ShapeGradients g = shape_gradients(x);
  Eigen::Matrix<double, 6, 12> B = Eigen::Matrix<double, 6, 12>::Zero();
  for (int i = 0; i < 4; ++i) {
    const double bx = g(i, 0), by = g(i, 1), bz = g(i, 2);
    const int c = 3 * i;
    B(0, c) = bx;
    B(1, c + 1) = by;
    B(2, c + 2) = bz;
    B(3, c) = by;
    B(3, c + 1) = bx;
    B(4, c + 1) = bz;
    B(4, c + 2) = by;
    B(5, c) = bz;
    B(5, c + 2) = bx;
  }
  const double vol = std::abs(signed_volume(x));
  Mat12 k = vol * B.transpose() * C * B;
  return 0.5 * (k + k.transpose());
}

Eigen::Matrix4d element_conductance(const TetCoords& x, double conductivity) {
  if (!(conductivity > 0.0) || !std::isfinite(conductivity)) {
    throw Error(ErrorCode::invalid_argument, "conductivity must be > 0");
  }
  const ShapeGradients g = shape_gradients(x);
  const double vol = std::abs(signed_volume(x));
  Eigen::Matrix4d k = (vol * conductivity) * g * g.transpose();
  return 0.5 * (k + k.transpose());
}

int dofs_per_vertex(Physics physics) { return physics == Physics::elasticity ? 3 : 1; }

std::vector<int> element_dofs(const Tet& tet, Physics physics) {
  const int n = dofs_per_vertex(physics);
  std::vector<int> dofs;
  dofs.reserve(4 * n);
  for (int v : tet) {
    for (int a = 0; a < n; ++a) dofs.push_back(n * v + a);
  }
  return dofs;
}

ElementMatrix element_matrix(const VolumetricMesh& mesh, const MaterialField& field,
                             Physics physics, int element) {
  const MaterialParams& m = field.values.at(element);
  ElementMatrix em;
  em.element = element;
  em.dofs = element_dofs(mesh.tets[element], physics);
  const TetCoords x = mesh.tet_coords(element);
  if (physics == Physics::elasticity) {
    em.values = element_stiffness(x, m.young, m.poisson);
  } else {
    em.values = element_conductance(x, m.conductivity);
  }
  return em;
}

std::vector<Eigen::MatrixXd> unit_element_matrices(const VolumetricMesh& mesh,
                                                   const MaterialField& field, Physics physics) {
  if (field.size() != mesh.element_count()) {
    throw Error(ErrorCode::invalid_argument, "material field does not cover every element");
  }
  std::vector<Eigen::MatrixXd> unit(mesh.tets.size());
  for (int e = 0; e < mesh.element_count(); ++e) {
    const TetCoords x = mesh.tet_coords(e);
    if (physics == Physics::elasticity) {
      unit[e] = element_stiffness(x, 1.0, field.values[e].poisson);
    } else {
      unit[e] = element_conductance(x, 1.0);
    }
  }
  return unit;
}

namespace {

void fill_boundary_data(const BoundSpecification& spec, FemSystem& sys) {
  const int n = dofs_per_vertex(sys.physics);
  const int ndof = n * sys.vertex_count;
  sys.external = Eigen::VectorXd::Zero(ndof);
  sys.prescribed_values = Eigen::VectorXd::Zero(ndof);
  std::vector<bool> prescribed(ndof, false);

  for (int v = 0; v < sys.vertex_count; ++v) {
    const ResolvedVertex& rv = spec.vertices[v];
    if (sys.physics == Physics::elasticity) {
      if (rv.displacement.kind == DisplacementKind::fixed) {
        for (int a = 0; a < 3; ++a) {
          prescribed[3 * v + a] = true;
          sys.prescribed_values[3 * v + a] = rv.displacement.value[a];
        }
      }
      if (rv.force_kind == ForceKind::given) sys.external.segment<3>(3 * v) = rv.load();
    } else {
      if (rv.temperature.kind == TemperatureKind::fixed) {
        prescribed[v] = true;
        sys.prescribed_values[v] = rv.temperature.value;
      }
      sys.external[v] = rv.heat;
    }
  }

  sys.free_index.assign(ndof, -1);
  for (int d = 0; d < ndof; ++d) {
    if (prescribed[d]) {
      sys.prescribed_dofs.push_back(d);
    } else {
      sys.free_index[d] = static_cast<int>(sys.free_dofs.size());
      sys.free_dofs.push_back(d);
    }
  }
  if (sys.prescribed_dofs.empty()) {
    throw Error(ErrorCode::ill_posed, std::string("no prescribed ") +
                                          (sys.physics == Physics::elasticity
                                               ? "displacements"
                                               : "temperatures") +
                                          ": the " + std::string(to_string(sys.physics)) +
                                          " problem is singular");
  }
}

void reduce(FemSystem& sys) {
  const int nf = static_cast<int>(sys.free_dofs.size());
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(sys.stiffness.nonZeros());
  sys.reduced_rhs = Eigen::VectorXd::Zero(nf);
  for (int f = 0; f < nf; ++f) sys.reduced_rhs[f] = sys.external[sys.free_dofs[f]];
  for (int col = 0; col < sys.stiffness.outerSize(); ++col) {
    for (Eigen::SparseMatrix<double>::InnerIterator it(sys.stiffness, col); it; ++it) {
      const int fr = sys.free_index[it.row()];
      const int fc = sys.free_index[it.col()];
      if (fr < 0) continue;
      if (fc >= 0) {
        trips.emplace_back(fr, fc, it.value());
      } else {
        sys.reduced_rhs[fr] -= it.value() * sys.prescribed_values[it.col()];
      }
    }
  }
  sys.reduced.resize(nf, nf);
  sys.reduced.setFromTriplets(trips.begin(), trips.end());
}

FemSystem assemble_impl(const BoundSpecification& spec, Physics physics,
                        const std::function<Eigen::MatrixXd(int)>& element) {
  if (physics == Physics::elasticity && !spec.elasticity) {
    throw Error(ErrorCode::ill_posed, "annotations do not pose an elasticity problem");
  }
  if (physics == Physics::conduction && !spec.conduction) {
    throw Error(ErrorCode::ill_posed, "annotations do not pose a conduction problem");
  }
  FemSystem sys;
  sys.physics = physics;
  sys.vertex_count = spec.mesh.vertex_count();
  fill_boundary_data(spec, sys);

  const int ndof = sys.dof_count();
  std::vector<Eigen::Triplet<double>> trips;
  const int block = 4 * dofs_per_vertex(physics);
  trips.reserve(static_cast<std::size_t>(block) * block * spec.mesh.tets.size());
  // Ascending element order keeps the summation order, and thus the bits, fixed.
  for (int e = 0; e < spec.mesh.element_count(); ++e) {
    const Eigen::MatrixXd k = element(e);
    const std::vector<int> dofs = element_dofs(spec.mesh.tets[e], physics);
    for (int i = 0; i < block; ++i) {
      for (int j = 0; j < block; ++j) trips.emplace_back(dofs[i], dofs[j], k(i, j));
    }
  }
  sys.stiffness.resize(ndof, ndof);
  sys.stiffness.setFromTriplets(trips.begin(), trips.end());
  reduce(sys);
  return sys;
}

}  // namespace

FemSystem assemble(const BoundSpecification& spec, const MaterialField& field, Physics physics) {
  if (field.size() != spec.mesh.element_count()) {
    throw Error(ErrorCode::invalid_argument, "material field does not cover every element");
  }
  return assemble_impl(spec, physics, [&](int e) {
    return element_matrix(spec.mesh, field, physics, e).values;
  });
}

FemSystem assemble_scaled(const BoundSpecification& spec, Physics physics,
                          const std::vector<Eigen::MatrixXd>& unit,
                          const std::vector<double>& scale) {
  if (static_cast<int>(unit.size()) != spec.mesh.element_count() || unit.size() != scale.size()) {
    throw Error(ErrorCode::invalid_argument, "element matrices do not cover every element");
  }
  return assemble_impl(spec, physics, [&](int e) -> Eigen::MatrixXd {
    if (!(scale[e] > 0.0)) {
      throw Error(ErrorCode::invalid_argument,
                  "element " + std::to_string(e) + " has a non-positive material parameter");
    }
    return scale[e] * unit[e];
  });
}

int FieldSolution::vertex_count() const {
  return static_cast<int>(values.size()) / dofs_per_vertex(physics);
}

Vec3 FieldSolution::displacement(int vertex) const {
  if (physics != Physics::elasticity) {
    throw Error(ErrorCode::invalid_argument, "not an elasticity solution");
  }
  return values.segment<3>(3 * vertex);
}

double FieldSolution::temperature(int vertex) const {
  if (physics != Physics::conduction) {
    throw Error(ErrorCode::invalid_argument, "not a conduction solution");
  }
  return values[vertex];
}

Eigen::VectorXd solve_free_block(const FemSystem& system, const Eigen::VectorXd& rhs,
                                 const SolveOptions& options) {
  return solve_spd(system.reduced, rhs, options.tol, options.max_iter);
}

FieldSolution solve(const FemSystem& system, const SolveOptions& options) {
  FieldSolution sol;
  sol.physics = system.physics;
  const Eigen::VectorXd free_values =
      solve_spd(system.reduced, system.reduced_rhs, options.tol, options.max_iter,
                &sol.diagnostics);

  sol.values = system.prescribed_values;
  for (std::size_t f = 0; f < system.free_dofs.size(); ++f) {
    sol.values[system.free_dofs[f]] = free_values[static_cast<Eigen::Index>(f)];
  }
  const Eigen::VectorXd internal = system.stiffness * sol.values;
  sol.reaction_dofs = system.prescribed_dofs;
  sol.reactions.resize(static_cast<Eigen::Index>(system.prescribed_dofs.size()));
  for (std::size_t i = 0; i < system.prescribed_dofs.size(); ++i) {
    const int d = system.prescribed_dofs[i];
    sol.reactions[static_cast<Eigen::Index>(i)] = internal[d] - system.external[d];
  }
  return sol;
}

std::vector<NodalVerdict> verify_nodal_bounds(const FieldSolution& solution,
                                              const BoundSpecification& spec) {
  std::vector<NodalVerdict> out;
  for (int v = 0; v < spec.mesh.vertex_count(); ++v) {
    const ResolvedVertex& rv = spec.vertices[v];
    if (solution.physics == Physics::elasticity) {
      if (rv.displacement.kind == DisplacementKind::unconstrained) continue;
      const Vec3 u = solution.displacement(v);
      bool inside = true;
      if (rv.displacement.kind == DisplacementKind::bounded) {
        inside = rv.displacement.box.contains(u);
      } else {
        inside = (u - rv.displacement.value).lpNorm<Eigen::Infinity>() <= 1e-12 * (1.0 + rv.displacement.value.norm());
      }
      out.push_back({v, inside, u});
    } else {
      if (rv.temperature.kind == TemperatureKind::unconstrained) continue;
      const double t = solution.temperature(v);
      const bool inside = rv.temperature.kind == TemperatureKind::bounded
                              ? rv.temperature.range.contains(t)
                              : std::abs(t - rv.temperature.value) <=
                                    1e-12 * (1.0 + std::abs(rv.temperature.value));
      out.push_back({v, inside, Vec3(t, 0.0, 0.0)});
    }
  }
  return out;
}

std::string serialize_solution(const FieldSolution& solution) {
  nlohmann::ordered_json doc;
  const int nv = solution.vertex_count();
  const int n = dofs_per_vertex(solution.physics);
  doc["physics"] = std::string(to_string(solution.physics));
  nlohmann::ordered_json values = nlohmann::ordered_json::array();
  for (int v = 0; v < nv; ++v) {
    if (solution.physics == Physics::elasticity) {
      const Vec3 u = solution.displacement(v);
      values.push_back({u.x(), u.y(), u.z()});
    } else {
      values.push_back(solution.temperature(v));
    }
  }
  doc[solution.physics == Physics::elasticity ? "displacements" : "temperatures"] = values;

  std::map<int, std::vector<double>> by_vertex;
  for (std::size_t i = 0; i < solution.reaction_dofs.size(); ++i) {
    const int d = solution.reaction_dofs[i];
    auto& r = by_vertex[d / n];
    r.resize(n, 0.0);
    r[d % n] = solution.reactions[static_cast<Eigen::Index>(i)];
  }
  nlohmann::ordered_json reactions = nlohmann::ordered_json::object();
  for (const auto& [v, r] : by_vertex) {
    reactions[std::to_string(v)] = n == 1 ? nlohmann::ordered_json(r[0]) : nlohmann::ordered_json(r);
  }
  doc["reactions"] = reactions;
  doc["diagnostics"] = {{"method", solution.diagnostics.method},
                        {"iterations", solution.diagnostics.iterations},
                        {"residual", solution.diagnostics.residual}};
  return doc.dump(1) + "\n";
}

}  // namespace semprint
