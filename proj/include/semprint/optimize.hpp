#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "semprint/fem.hpp"
#include "semprint/semantics.hpp"

namespace semprint {

enum class ObjectiveKind {
  compliance,           ///< F^T U, decision parameter E
  average_temperature,  ///< volume-weighted mean temperature, decision parameter D
  mass,                 ///< sum rho_e V_e, decision parameter rho
  plan_deviation,       ///< 0.5 sum V_e ((p_e - r_e) / r_e)^2 against a reference plan
};

std::string_view to_string(ObjectiveKind kind);
ObjectiveKind objective_from_string(std::string_view name);
/// Decision parameter optimized for an objective (plan_deviation defaults to E).
Parameter default_parameter(ObjectiveKind kind);

/// Choose the decision parameter of not-yet-frozen elements so that the stiffness
/// (or conduction) equation's solution meets the constraint properties.
///
/// Frozen elements keep the values in `base`. Free elements are partitioned into
/// groups that share one value; by default every free element is its own group.
struct InversionProblem {
  std::shared_ptr<const BoundSpecification> spec;
  ObjectiveKind objective = ObjectiveKind::compliance;
  Parameter parameter = Parameter::young;
  MaterialField base;
  std::vector<int> free_elements;         ///< ascending
  std::vector<std::vector<int>> groups;   ///< partition of free_elements
  std::vector<PropertySpec> constraints;  ///< material-dependent properties to satisfy
  std::optional<FieldRegularity> regularity;
  std::vector<double> reference;          ///< per-element target of plan_deviation
  /// Constraints are enforced against bounds tightened by this relative margin so
  /// that the penalty-free check against the real bounds passes.
  double constraint_margin = 1e-3;

  std::vector<int> frozen_elements() const;
  int group_count() const { return static_cast<int>(groups.size()); }
  /// Box of each group: intersection of its members' annotated ranges.
  std::vector<Interval> group_boxes() const;
};

/// Builds a problem with every non-frozen element free (one group each), all
/// material-dependent properties as constraints, the annotated regularity when it
/// applies to the decision parameter, and `base` as the plan_deviation reference.
InversionProblem make_inversion_problem(std::shared_ptr<const BoundSpecification> spec,
                                        ObjectiveKind objective, const MaterialField& base,
                                        const std::vector<int>& frozen = {});

/// Replaces the singleton groups with one group per layer (restricted to free elements).
void group_by_layer(InversionProblem& problem, const LayerPartition& partition);

/// Group values from per-element values (first member of each group).
Eigen::VectorXd group_values(const InversionProblem& problem, const std::vector<double>& values);
/// The field with each group's value written into its members.
MaterialField compose_field(const InversionProblem& problem, const Eigen::VectorXd& free_values);

struct ObjectiveValue {
  double value = 0.0;
  Eigen::VectorXd gradient;  ///< d value / d group value
  int fem_solves = 0;
};

/// Objective and its adjoint gradient over the free groups.
ObjectiveValue evaluate_objective(const InversionProblem& problem, const Eigen::VectorXd& free_values,
                                  const SolveOptions& solve_options = {});

struct TraceRecord {
  int iter = 0;
  double objective = 0.0;
  double merit = 0.0;
  double max_violation = 0.0;
  double step_norm = 0.0;
  int phase = 0;  ///< penalty phase; the merit is nonincreasing within a phase
};

std::string trace_to_jsonl(const std::vector<TraceRecord>& trace);

enum class Strategy { full, warm_start };
std::string_view to_string(Strategy s);
Strategy strategy_from_string(std::string_view name);

struct ElementCurvature;

struct OptimizationResult {
  Eigen::VectorXd free_values;  ///< one value per group
  std::vector<double> values;   ///< decision parameter of every element
  double objective = 0.0;
  std::vector<PropertyVerdict> verdicts;  ///< penalty-free constraint checks
  std::vector<TraceRecord> trace;
  bool feasible = false;
  std::vector<std::string> violated;  ///< infeasibility certificate
  int fem_solves = 0;
  int model_fem_solves = 0;  ///< solves spent building curvature models
  std::string strategy_used = "full";  ///< full | warm_start | full_fallback | unchanged

  // Penalty state of the final merit function, reused by warm starts.
  std::vector<double> multipliers;
  double penalty_weight = 0.0;
  double objective_scale = 1.0;
  std::shared_ptr<const ElementCurvature> curvature;
};

struct InversionOptions {
  double tol = 1e-8;  ///< projected-gradient norm in box-normalized variables
  int max_iter = 2000;
  double feasibility_tol = 1e-6;
  double initial_penalty = 10.0;
  int max_escalations = 6;
  SolveOptions solve;
};

/// Projected-gradient minimization with the constraints folded in through an
/// augmented-Lagrangian penalty whose weight grows tenfold when the violation
/// stalls. Infeasibility is reported in the result, not thrown.
OptimizationResult inversion_solve(const InversionProblem& problem, const InversionOptions& options = {},
                                   const OptimizationResult* seed = nullptr);

// ---------------------------------------------------------------------------
// Second-order warm start.

struct ValueGradient {
  double value = 0.0;
  Eigen::VectorXd gradient;
};
using SmoothFunction = std::function<ValueGradient(const Eigen::VectorXd&)>;

/// Second-order expansion at a minimizer x0 = (y0, z0) split into a frozen part
/// y and a free part z.
struct QuadraticModel {
  Eigen::VectorXd y0, z0;
  Eigen::VectorXd grad_y, grad_z;
  Eigen::MatrixXd hess_yy, hess_zz;
  Eigen::MatrixXd hess_zy;  ///< |z| x |y|
  int fem_solves = 0;
};

/// Hessian blocks by central differences of the gradient. Throws
/// Error{precondition} if the z-gradient norm exceeds `grad_tol` and
/// Error{model_invalid} if hess_zz is not positive definite.
QuadraticModel build_quadratic_model(const SmoothFunction& f, const Eigen::VectorXd& y0,
                                     const Eigen::VectorXd& z0, const Eigen::VectorXd& step_y,
                                     const Eigen::VectorXd& step_z, double grad_tol);

/// Model of the problem's final merit function at `base`, with y the frozen
/// elements and z the free groups. Difference steps are 1e-3 of each box width.
QuadraticModel build_quadratic_model(const InversionProblem& problem, const OptimizationResult& base,
                                     const InversionOptions& options = {});

/// delta_z = -hess_zz^{-1} hess_zy delta_y: the stationary point of the expansion
/// once the frozen part has moved by delta_y.
Eigen::VectorXd warm_start_update(const QuadraticModel& model, const Eigen::VectorXd& delta_y);

/// Curvature of a result's merit function over every element's decision
/// parameter, so models for later frozen/free splits are sub-blocks.
struct ElementCurvature {
  std::vector<double> values;
  Eigen::VectorXd gradient;
  Eigen::MatrixXd hessian;
  /// Constraints active at the base point, linearized over elements.
  Eigen::VectorXd active_values;
  Eigen::MatrixXd active_jacobian;
  int fem_solves = 0;
};

ElementCurvature element_curvature(const InversionProblem& problem, const OptimizationResult& base,
                                   const InversionOptions& options = {});

/// Computes and attaches the element curvature to `result` (used once at planning).
void attach_curvature(const InversionProblem& problem, OptimizationResult& result,
                      const InversionOptions& options = {});

/// Re-plans the free groups after the frozen elements moved by `delta_y`
/// (ordered as problem.frozen_elements()) relative to `previous`.
///
/// warm_start applies the quadratic update, projects into the boxes and verifies
/// the constraints without penalties, falling back to a full solve when the
/// check fails or no valid model exists. Constraints active at the previous
/// optimum are held at their linearization during the update; with none active
/// the update is exactly warm_start_update. full re-runs inversion_solve seeded at
/// the previous values.
OptimizationResult reoptimize_after_drift(const InversionProblem& problem,
                                          const OptimizationResult& previous,
                                          const Eigen::VectorXd& delta_y, Strategy strategy,
                                          const InversionOptions& options = {});

// ---------------------------------------------------------------------------

struct BoxMinimizeResult {
  Eigen::VectorXd x;
  double value = 0.0;
  int iterations = 0;
  int evaluations = 0;
  bool converged = false;
  bool stalled = false;  ///< no representable decrease along the projected gradient
};

/// Monotone projected gradient with Barzilai-Borwein steps and Armijo
/// backtracking. `on_step` sees every accepted iterate.
BoxMinimizeResult minimize_in_box(
    const SmoothFunction& f, const Eigen::VectorXd& x0, const Eigen::VectorXd& lower,
    const Eigen::VectorXd& upper, double tol, int max_iter,
    const std::function<void(const Eigen::VectorXd&, double, double)>& on_step = {});

double projected_gradient_norm(const Eigen::VectorXd& x, const Eigen::VectorXd& g,
                               const Eigen::VectorXd& lower, const Eigen::VectorXd& upper);

}  // namespace semprint
