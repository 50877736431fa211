#pragma once

#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/SparseCore>

namespace semprint {

struct SolverDiagnostics {
  std::string method;  ///< "dense-cholesky" or "pcg-jacobi"
  int iterations = 0;
  double residual = 0.0;  ///< ||A x - b|| / ||b||
  std::vector<double> residual_history;
};

/// Systems with fewer unknowns than this are factored densely.
inline constexpr int kDenseSolveLimit = 300;

/// Solves A x = b for symmetric positive definite A.
///
/// Small systems use a dense Cholesky factorization; larger ones use conjugate
/// gradients with a Jacobi preconditioner. Throws Error{ill_posed} when A is
/// detected not to be positive definite and SolverFailure when CG does not reach
/// `tol` within `max_iter` iterations.
Eigen::VectorXd solve_spd(const Eigen::SparseMatrix<double>& A, const Eigen::VectorXd& b,
                          double tol, int max_iter, SolverDiagnostics* diagnostics = nullptr);

Eigen::VectorXd pcg_jacobi(const Eigen::SparseMatrix<double>& A, const Eigen::VectorXd& b,
                           double tol, int max_iter, SolverDiagnostics* diagnostics = nullptr);

}  // namespace semprint
