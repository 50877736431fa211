#pragma once

#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include "semprint/mesh.hpp"
#include "semprint/semantics.hpp"
#include "semprint/solver.hpp"

namespace semprint {

enum class Physics { elasticity, conduction };
std::string_view to_string(Physics physics);

using Mat12 = Eigen::Matrix<double, 12, 12>;
using Mat6 = Eigen::Matrix<double, 6, 6>;
/// Row i holds the gradient of the linear shape function of vertex i.
using ShapeGradients = Eigen::Matrix<double, 4, 3>;

ShapeGradients shape_gradients(const TetCoords& x);

/// Isotropic constitutive matrix in Voigt order xx, yy, zz, xy, yz, zx with
/// engineering shear strains.
Mat6 isotropic_elasticity(double young, double poisson);

/// Constant-strain tetrahedron stiffness V * B^T C B. Dof order is
/// (u0x, u0y, u0z, u1x, ...). Throws on a degenerate tet or an invalid material.
Mat12 element_stiffness(const TetCoords& x, double young, double poisson);

/// Linear tetrahedron conductance V * D * grad(phi_i) . grad(phi_j).
Eigen::Matrix4d element_conductance(const TetCoords& x, double conductivity);

struct ElementMatrix {
  int element = 0;
  Eigen::MatrixXd values;
  std::vector<int> dofs;  ///< global dof index of each row/column
};

int dofs_per_vertex(Physics physics);
std::vector<int> element_dofs(const Tet& tet, Physics physics);
ElementMatrix element_matrix(const VolumetricMesh& mesh, const MaterialField& field,
                             Physics physics, int element);

/// Global system K U = F with dofs split into prescribed and free sets.
struct FemSystem {
  Physics physics = Physics::elasticity;
  int vertex_count = 0;
  Eigen::SparseMatrix<double> stiffness;  ///< full K, before reduction
  Eigen::VectorXd external;               ///< nodal loads / heat inputs
  Eigen::VectorXd prescribed_values;      ///< full length; meaningful on prescribed dofs
  std::vector<int> prescribed_dofs;
  std::vector<int> free_dofs;
  std::vector<int> free_index;            ///< dof -> position in free_dofs, or -1
  Eigen::SparseMatrix<double> reduced;    ///< K_ff
  Eigen::VectorXd reduced_rhs;            ///< F_f - K_fp u_p

  int dof_count() const { return static_cast<int>(external.size()); }
};

FemSystem assemble(const BoundSpecification& spec, const MaterialField& field, Physics physics);

/// Assembles K = sum_e scale[e] * unit[e] over precomputed element matrices.
FemSystem assemble_scaled(const BoundSpecification& spec, Physics physics,
                          const std::vector<Eigen::MatrixXd>& unit,
                          const std::vector<double>& scale);

/// Element matrices of `physics` with the parameter that scales them set to one
/// (E for elasticity, at the field's Poisson ratio; D for conduction).
std::vector<Eigen::MatrixXd> unit_element_matrices(const VolumetricMesh& mesh,
                                                   const MaterialField& field, Physics physics);

struct FieldSolution {
  Physics physics = Physics::elasticity;
  Eigen::VectorXd values;          ///< full dof vector: displacements (mm) or temperatures (K)
  std::vector<int> reaction_dofs;  ///< prescribed dofs
  Eigen::VectorXd reactions;       ///< (K U - F_ext) on reaction_dofs: N or W
  SolverDiagnostics diagnostics;

  int vertex_count() const;
  Vec3 displacement(int vertex) const;
  double temperature(int vertex) const;
};

FieldSolution solve(const FemSystem& system, const SolveOptions& options = {});

/// Solves K_ff x = rhs on the free block (adjoint solves).
Eigen::VectorXd solve_free_block(const FemSystem& system, const Eigen::VectorXd& rhs,
                                 const SolveOptions& options = {});

struct NodalVerdict {
  int vertex = 0;
  bool inside = true;
  Vec3 value = Vec3::Zero();  ///< displacement, or (T, 0, 0) for conduction
};

/// Marks each vertex carrying a displacement (or temperature) set as inside or
/// outside it. Linear elements interpolate nodal values, so a displacement
/// anywhere in an element lies in the convex hull of its four nodal sets;
/// checking the nodes is therefore sufficient.
std::vector<NodalVerdict> verify_nodal_bounds(const FieldSolution& solution,
                                              const BoundSpecification& spec);

std::string serialize_solution(const FieldSolution& solution);

}  // namespace semprint
