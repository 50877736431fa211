#include "semprint/solver.hpp"

#include <cmath>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "semprint/error.hpp"

namespace semprint {

Eigen::VectorXd pcg_jacobi(const Eigen::SparseMatrix<double>& A, const Eigen::VectorXd& b,
                           double tol, int max_iter, SolverDiagnostics* diagnostics) {
  const Eigen::Index n = b.size();
  SolverDiagnostics diag;
  diag.method = "pcg-jacobi";
  Eigen::VectorXd x = Eigen::VectorXd::Zero(n);

  const double bnorm = b.norm();
  if (bnorm == 0.0) {
    if (diagnostics) *diagnostics = diag;
    return x;
  }

  Eigen::VectorXd inv_diag(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double d = A.coeff(i, i);
    if (!(d > 0.0)) {
      throw Error(ErrorCode::ill_posed,
                  "matrix has a non-positive diagonal entry at row " + std::to_string(i));
    }
    inv_diag[i] = 1.0 / d;
  }

  Eigen::VectorXd r = b;
  Eigen::VectorXd z = inv_diag.cwiseProduct(r);
  Eigen::VectorXd p = z;
  double rz = r.dot(z);
  double rel = 1.0;
  diag.residual_history.push_back(rel);

  for (int it = 0; it < max_iter; ++it) {
    const Eigen::VectorXd Ap = A * p;
    const double pAp = p.dot(Ap);
    if (!(pAp > 0.0)) {
      throw Error(ErrorCode::ill_posed, "matrix is not positive definite (CG curvature " +
                                            std::to_string(pAp) + ")");
    }
    const double alpha = rz / pAp;
    x += alpha * p;
    r -= alpha * Ap;
    rel = r.norm() / bnorm;
    diag.residual_history.push_back(rel);
    diag.iterations = it + 1;
    if (rel <= tol) break;
    z = inv_diag.cwiseProduct(r);
    const double rz_next = r.dot(z);
    p = z + (rz_next / rz) * p;
    rz = rz_next;
  }

  // Recompute the true residual; the recurrence drifts on long runs.
  rel = (A * x - b).norm() / bnorm;
  diag.residual = rel;
  if (!(rel <= tol)) {
    throw SolverFailure("CG did not converge in " + std::to_string(max_iter) +
                            " iterations (relative residual " + std::to_string(rel) + ")",
                        std::move(diag.residual_history));
  }
  if (diagnostics) *diagnostics = std::move(diag);
  return x;
}

Eigen::VectorXd solve_spd(const Eigen::SparseMatrix<double>& A, const Eigen::VectorXd& b,
                          double tol, int max_iter, SolverDiagnostics* diagnostics) {
  const Eigen::Index n = b.size();
  if (n >= kDenseSolveLimit) return pcg_jacobi(A, b, tol, max_iter, diagnostics);

  SolverDiagnostics diag;
  diag.method = "dense-cholesky";
  Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
  if (n == 0 || b.norm() == 0.0) {
    if (diagnostics) *diagnostics = diag;
    return x;
  }
  const Eigen::MatrixXd dense(A);
  const Eigen::LLT<Eigen::MatrixXd> llt(dense);
  if (llt.info() != Eigen::Success) {
    throw Error(ErrorCode::ill_posed, "matrix is not positive definite (Cholesky failed)");
  }
  x = llt.solve(b);
  diag.residual_history = {1.0};
  diag.residual = (A * x - b).norm() / b.norm();
  diag.residual_history.push_back(diag.residual);
  diag.iterations = 1;
  // A few steps of iterative refinement for ill-conditioned blocks.
  while (diag.residual > tol && diag.iterations < 4) {
    x += llt.solve(b - A * x);
    diag.residual = (A * x - b).norm() / b.norm();
    diag.residual_history.push_back(diag.residual);
    ++diag.iterations;
  }
  if (!(diag.residual <= std::max(tol, 1e-12))) {
    throw SolverFailure("dense solve residual " + std::to_string(diag.residual) +
                            " above tolerance",
                        std::move(diag.residual_history));
  }
  if (diagnostics) *diagnostics = std::move(diag);
  return x;
}

}  // namespace semprint
