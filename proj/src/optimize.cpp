#include "semprint/optimize.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <sstream>

#include <Eigen/Dense>
#include <json.hpp>

#include "semprint/error.hpp"

namespace semprint {

std::string_view to_string(ObjectiveKind kind) {
  switch (kind) {
    case ObjectiveKind::compliance: return "compliance";
    case ObjectiveKind::average_temperature: return "average_temperature";
    case ObjectiveKind::mass: return "mass";
    case ObjectiveKind::plan_deviation: return "plan_deviation";
  }
  return "unknown";
}

ObjectiveKind objective_from_string(std::string_view name) {
  for (ObjectiveKind k : {ObjectiveKind::compliance, ObjectiveKind::average_temperature,
                          ObjectiveKind::mass, ObjectiveKind::plan_deviation}) {
    if (to_string(k) == name) return k;
  }
  throw Error(ErrorCode::invalid_argument, "unknown objective '" + std::string(name) + "'");
}

Parameter default_parameter(ObjectiveKind kind) {
  switch (kind) {
    case ObjectiveKind::average_temperature: return Parameter::conductivity;
    case ObjectiveKind::mass: return Parameter::density;
    default: return Parameter::young;
  }
}

std::string_view to_string(Strategy s) { return s == Strategy::full ? "full" : "warm_start"; }

Strategy strategy_from_string(std::string_view name) {
  if (name == "full") return Strategy::full;
  if (name == "warm_start" || name == "warm") return Strategy::warm_start;
  throw Error(ErrorCode::invalid_argument, "unknown strategy '" + std::string(name) + "'");
}

std::vector<int> InversionProblem::frozen_elements() const {
  const int n = base.size();
  std::vector<bool> is_free(n, false);
  for (int e : free_elements) is_free[e] = true;
  std::vector<int> out;
  for (int e = 0; e < n; ++e) {
    if (!is_free[e]) out.push_back(e);
  }
  return out;
}

std::vector<Interval> InversionProblem::group_boxes() const {
  std::vector<Interval> boxes;
  boxes.reserve(groups.size());
  for (const auto& g : groups) {
    Interval box{-kInf, kInf};
    for (int e : g) {
      const Interval& r = spec->element_ranges[e].get(parameter);
      box.min = std::max(box.min, r.min);
      box.max = std::min(box.max, r.max);
    }
    boxes.push_back(box);
  }
  return boxes;
}

InversionProblem make_inversion_problem(std::shared_ptr<const BoundSpecification> spec,
                                        ObjectiveKind objective, const MaterialField& base,
                                        const std::vector<int>& frozen) {
  if (!spec) throw Error(ErrorCode::invalid_argument, "inversion problem without a specification");
  InversionProblem p;
  p.objective = objective;
  p.parameter = default_parameter(objective);
  p.base = base;
  const int n = spec->mesh.element_count();
  std::vector<bool> is_frozen(n, false);
  for (int e : frozen) {
    if (e < 0 || e >= n) {
      throw Error(ErrorCode::invalid_argument, "frozen element " + std::to_string(e) + " out of range");
    }
    is_frozen[e] = true;
  }
  for (int e = 0; e < n; ++e) {
    if (!is_frozen[e]) {
      p.free_elements.push_back(e);
      p.groups.push_back({e});
    }
  }
  for (const ResolvedProperty& rp : spec->properties) {
    if (rp.spec.category == PropertyCategory::material_dependent) p.constraints.push_back(rp.spec);
  }
  if (spec->layer.field_regularity && spec->layer.field_regularity->parameter == p.parameter) {
    p.regularity = spec->layer.field_regularity;
  }
  p.reference.resize(base.values.size());
  for (int e = 0; e < base.size(); ++e) p.reference[e] = base.values[e].get(p.parameter);
  p.spec = std::move(spec);
  return p;
}

void group_by_layer(InversionProblem& problem, const LayerPartition& partition) {
  std::vector<bool> is_free(problem.base.size(), false);
  for (int e : problem.free_elements) is_free[e] = true;
  problem.groups.clear();
  for (const auto& layer : partition.layers) {
    std::vector<int> g;
    for (int e : layer) {
      if (is_free[e]) g.push_back(e);
    }
    if (!g.empty()) problem.groups.push_back(std::move(g));
  }
}

Eigen::VectorXd group_values(const InversionProblem& problem, const std::vector<double>& values) {
  Eigen::VectorXd q(problem.group_count());
  for (int j = 0; j < problem.group_count(); ++j) q[j] = values.at(problem.groups[j].front());
  return q;
}

MaterialField compose_field(const InversionProblem& problem, const Eigen::VectorXd& free_values) {
  if (free_values.size() != problem.group_count()) {
    throw Error(ErrorCode::invalid_argument, "expected " + std::to_string(problem.group_count()) +
                                                 " free values, got " +
                                                 std::to_string(free_values.size()));
  }
  MaterialField field = problem.base;
  for (int j = 0; j < problem.group_count(); ++j) {
    for (int e : problem.groups[j]) {
      field.values[e].set(problem.parameter, free_values[j]);
      field.provenance[e] = Provenance::commanded;
    }
  }
  return field;
}

namespace {

void validate(const InversionProblem& p) {
  if (!p.spec) throw Error(ErrorCode::invalid_argument, "inversion problem without a specification");
  const int n = p.spec->mesh.element_count();
  if (p.base.size() != n || static_cast<int>(p.base.provenance.size()) != n) {
    throw Error(ErrorCode::invalid_argument, "base field does not cover every element");
  }
  if (p.parameter == Parameter::poisson) {
    throw Error(ErrorCode::invalid_argument, "the Poisson ratio cannot be a decision parameter");
  }
  std::vector<int> seen;
  for (const auto& g : p.groups) {
    if (g.empty()) throw Error(ErrorCode::invalid_argument, "empty variable group");
    seen.insert(seen.end(), g.begin(), g.end());
  }
  std::sort(seen.begin(), seen.end());
  if (seen != p.free_elements) {
    throw Error(ErrorCode::invalid_argument, "variable groups must partition the free elements");
  }
  const auto boxes = p.group_boxes();
  for (std::size_t j = 0; j < boxes.size(); ++j) {
    if (!(boxes[j].min <= boxes[j].max)) {
      throw Error(ErrorCode::invalid_argument,
                  "variable group " + std::to_string(j) + " has an empty " +
                      std::string(to_string(p.parameter)) + " box");
    }
  }
  if (p.objective == ObjectiveKind::plan_deviation) {
    if (static_cast<int>(p.reference.size()) != n) {
      throw Error(ErrorCode::invalid_argument, "plan_deviation needs a reference value per element");
    }
    for (double r : p.reference) {
      if (!(r > 0.0)) throw Error(ErrorCode::invalid_argument, "plan reference values must be > 0");
    }
  }
  if (p.regularity && !(p.regularity->gamma >= 0.0)) {
    throw Error(ErrorCode::invalid_argument, "regularity gamma must be >= 0");
  }
}

Parameter scaling_parameter(Physics physics) {
  return physics == Physics::elasticity ? Parameter::young : Parameter::conductivity;
}

// One scalar row of the flattened constraint set.
struct Row {
  int property = -1;  // index into problem.constraints, -1 for a regularity pair
  int vertex = -1;
  int pair = -1;
};

struct Pair {
  int a = 0, b = 0;
  double distance = 0.0;
};

struct Evaluation {
  double objective = 0.0;
  double merit = 0.0;
  Eigen::VectorXd constraint;      // internal normalized rows, g <= 0 is feasible
  std::vector<double> measured;    // per problem.constraints entry
  double regularity_excess = -kInf;  // max(|dp| - gamma d) over pairs
  Eigen::VectorXd element_gradient;  // d merit / d p_e, physical units
};

// Evaluates the objective, the constraints and the merit function over a
// per-element vector of the decision parameter.
class Evaluator {
 public:
  Evaluator(const InversionProblem& problem, const SolveOptions& solve)
      : p_(problem), spec_(*problem.spec), solve_(solve) {
    const int n = spec_.mesh.element_count();
    total_volume_ = std::accumulate(spec_.volumes.begin(), spec_.volumes.end(), 0.0);
    need_[0] = p_.objective == ObjectiveKind::compliance;
    need_[1] = p_.objective == ObjectiveKind::average_temperature;
    for (std::size_t k = 0; k < p_.constraints.size(); ++k) {
      const PropertySpec& c = p_.constraints[k];
      if (c.kind == PredicateKind::volume) continue;
      if (c.kind == PredicateKind::max_displacement) need_[0] = true;
      if (c.kind == PredicateKind::max_temperature || c.kind == PredicateKind::average_temperature) {
        need_[1] = true;
      }
      if (c.kind == PredicateKind::max_displacement || c.kind == PredicateKind::max_temperature) {
        for (int v : resolved_vertices(c)) rows_.push_back({static_cast<int>(k), v, -1});
      } else {
        rows_.push_back({static_cast<int>(k), -1, -1});
      }
    }
    if (p_.regularity) {
      std::vector<bool> is_free(n, false);
      for (int e : p_.free_elements) is_free[e] = true;
      for (auto [a, b] : face_adjacent_pairs(spec_.mesh)) {
        if (!is_free[a] && !is_free[b]) continue;
        const double d = (centroid(spec_.mesh, a) - centroid(spec_.mesh, b)).norm();
        rows_.push_back({-1, -1, static_cast<int>(pairs_.size())});
        pairs_.push_back({a, b, d});
      }
      double s = 0.0;
      for (int e = 0; e < n; ++e) s += std::abs(spec_.element_ranges[e].get(p_.parameter).midpoint());
      regularity_scale_ = std::max(s / n, 1e-300);
    }
    for (int k = 0; k < 2; ++k) {
      if (!need_[k]) continue;
      const Physics ph = k == 0 ? Physics::elasticity : Physics::conduction;
      unit_[k] = unit_element_matrices(spec_.mesh, p_.base, ph);
    }
    if (need_[1]) {
      weights_ = Eigen::VectorXd::Zero(spec_.mesh.vertex_count());
      for (int e = 0; e < n; ++e) {
        for (int v : spec_.mesh.tets[e]) weights_[v] += 0.25 * spec_.volumes[e] / total_volume_;
      }
    }
  }

  int row_count() const { return static_cast<int>(rows_.size()); }
  int solves() const { return solves_; }
  double total_volume() const { return total_volume_; }

  Evaluation evaluate(const std::vector<double>& values, const std::vector<double>& lambda,
                      double rho, double objective_scale, bool gradient) {
    Forward fw = forward(values);
    Evaluation& ev = fw.ev;
    ev.merit = ev.objective / objective_scale;
    std::vector<double> weights(row_count(), 0.0);
    if (rho > 0.0) {
      for (int i = 0; i < row_count(); ++i) {
        const double lam = lambda.empty() ? 0.0 : lambda[i];
        const double c = std::max(0.0, lam + rho * ev.constraint[i]);
        ev.merit += (c * c - lam * lam) / (2.0 * rho);
        weights[i] = c;
      }
    }
    if (gradient) ev.element_gradient = backward(fw, values, 1.0 / objective_scale, weights);
    return std::move(fw.ev);
  }

  /// Element gradient of constraint row i alone.
  Eigen::VectorXd row_gradient(const std::vector<double>& values, int i) {
    Forward fw = forward(values);
    std::vector<double> weights(row_count(), 0.0);
    weights[i] = 1.0;
    return backward(fw, values, 0.0, weights);
  }

  std::vector<PropertyVerdict> verdicts(const Evaluation& ev) const {
    std::vector<PropertyVerdict> out;
    for (std::size_t k = 0; k < p_.constraints.size(); ++k) {
      const PropertySpec& c = p_.constraints[k];
      PropertyVerdict v;
      v.name = c.name;
      v.measured = ev.measured[k];
      v.margin = c.op == Comparison::at_most ? c.bound - v.measured : v.measured - c.bound;
      v.pass = v.margin >= 0.0;
      v.bound = c.bound;
      out.push_back(v);
    }
    if (p_.regularity && !pairs_.empty()) {
      PropertyVerdict v;
      v.name = "regularity(" + std::string(to_string(p_.parameter)) + ")";
      v.measured = ev.regularity_excess;
      v.margin = -ev.regularity_excess;
      v.pass = ev.regularity_excess <= 1e-9 * regularity_scale_;
      out.push_back(v);
    }
    return out;
  }

 private:
  struct Forward {
    Evaluation ev;
    std::optional<FemSystem> sys[2];
    std::optional<FieldSolution> sol[2];
  };

  Forward forward(const std::vector<double>& values) {
    const int n = spec_.mesh.element_count();
    Forward fw;
    Evaluation& ev = fw.ev;
    ev.constraint = Eigen::VectorXd::Zero(row_count());
    ev.measured.assign(p_.constraints.size(), 0.0);
    ev.element_gradient = Eigen::VectorXd::Zero(n);
    auto& sys = fw.sys;
    auto& sol = fw.sol;
    for (int k = 0; k < 2; ++k) {
      if (!need_[k]) continue;
      const Physics ph = k == 0 ? Physics::elasticity : Physics::conduction;
      std::vector<double> scale(n);
      const Parameter sp = scaling_parameter(ph);
      for (int e = 0; e < n; ++e) {
        scale[e] = p_.parameter == sp ? values[e] : p_.base.values[e].get(sp);
      }
      sys[k] = assemble_scaled(spec_, ph, unit_[k], scale);
      sol[k] = solve(*sys[k], solve_);
      ++solves_;
    }

    switch (p_.objective) {
      case ObjectiveKind::compliance:
        ev.objective = sys[0]->external.dot(sol[0]->values);
        break;
      case ObjectiveKind::average_temperature:
        ev.objective = weights_.dot(sol[1]->values);
        break;
      case ObjectiveKind::mass:
        for (int e = 0; e < n; ++e) ev.objective += density(values, e) * spec_.volumes[e];
        break;
      case ObjectiveKind::plan_deviation:
        for (int e = 0; e < n; ++e) {
          const double d = (values[e] - p_.reference[e]) / p_.reference[e];
          ev.objective += 0.5 * spec_.volumes[e] * d * d;
        }
        break;
    }

    for (std::size_t k = 0; k < p_.constraints.size(); ++k) {
      const PropertySpec& c = p_.constraints[k];
      double m = 0.0;
      switch (c.kind) {
        case PredicateKind::volume: m = total_volume_; break;
        case PredicateKind::mass:
          for (int e = 0; e < n; ++e) m += density(values, e) * spec_.volumes[e];
          break;
        case PredicateKind::max_displacement:
          for (int v : resolved_vertices(c)) m = std::max(m, sol[0]->displacement(v).norm());
          break;
        case PredicateKind::max_temperature:
          m = -kInf;
          for (int v : resolved_vertices(c)) m = std::max(m, sol[1]->temperature(v));
          break;
        case PredicateKind::average_temperature: m = weights_.dot(sol[1]->values); break;
      }
      ev.measured[k] = m;
    }

    for (int i = 0; i < row_count(); ++i) {
      const Row& row = rows_[i];
      if (row.pair >= 0) {
        const Pair& pr = pairs_[row.pair];
        const double excess = std::abs(values[pr.a] - values[pr.b]) - p_.regularity->gamma * pr.distance;
        ev.regularity_excess = std::max(ev.regularity_excess, excess);
        ev.constraint[i] = excess / regularity_scale_;
      } else {
        ev.constraint[i] = row_value(p_.constraints[row.property], row, ev.measured[row.property], sol);
      }
    }
    return fw;
  }

  // Gradient of objective_weight * J + sum_i weights[i] * g_i over elements,
  // with one adjoint solve per physics whose parameter is the decision variable.
  Eigen::VectorXd backward(const Forward& fw, const std::vector<double>& values,
                           double objective_weight, const std::vector<double>& weights) {
    const int n = spec_.mesh.element_count();
    const auto& sys = fw.sys;
    const auto& sol = fw.sol;
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(n);
    Eigen::VectorXd dU[2];
    for (int k = 0; k < 2; ++k) {
      if (need_[k]) dU[k] = Eigen::VectorXd::Zero(sys[k]->dof_count());
    }
    if (objective_weight != 0.0) {
      switch (p_.objective) {
        case ObjectiveKind::compliance: dU[0] += objective_weight * sys[0]->external; break;
        case ObjectiveKind::average_temperature: dU[1] += objective_weight * weights_; break;
        case ObjectiveKind::mass:
          if (p_.parameter == Parameter::density) {
            for (int e = 0; e < n; ++e) grad[e] += objective_weight * spec_.volumes[e];
          }
          break;
        case ObjectiveKind::plan_deviation:
          for (int e = 0; e < n; ++e) {
            const double r = p_.reference[e];
            grad[e] += objective_weight * spec_.volumes[e] * (values[e] - r) / (r * r);
          }
          break;
      }
    }
    // Compliance with homogeneous supports is self-adjoint: lambda = w u.
    bool self_adjoint = p_.objective == ObjectiveKind::compliance && objective_weight != 0.0 && need_[0];
    if (self_adjoint) {
      for (int d : sys[0]->prescribed_dofs) self_adjoint = self_adjoint && sys[0]->prescribed_values[d] == 0.0;
    }
    const Eigen::VectorXd objective_rhs = self_adjoint ? dU[0] : Eigen::VectorXd();
    for (int i = 0; i < row_count(); ++i) {
      const double c = weights[i];
      if (c == 0.0) continue;
      const Row& row = rows_[i];
      if (row.pair >= 0) {
        const Pair& pr = pairs_[row.pair];
        const double diff = values[pr.a] - values[pr.b];
        const double sgn = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
        grad[pr.a] += c * sgn / regularity_scale_;
        grad[pr.b] -= c * sgn / regularity_scale_;
      } else {
        add_row_gradient(p_.constraints[row.property], row, c, sol, dU, grad);
      }
    }
    for (int k = 0; k < 2; ++k) {
      if (!need_[k]) continue;
      const Physics ph = k == 0 ? Physics::elasticity : Physics::conduction;
      if (p_.parameter != scaling_parameter(ph)) continue;
      const FemSystem& s = *sys[k];
      Eigen::VectorXd rhs(static_cast<Eigen::Index>(s.free_dofs.size()));
      for (std::size_t f = 0; f < s.free_dofs.size(); ++f) rhs[f] = dU[k][s.free_dofs[f]];
      if (rhs.size() == 0 || rhs.lpNorm<Eigen::Infinity>() == 0.0) continue;
      Eigen::VectorXd adj = Eigen::VectorXd::Zero(s.dof_count());
      if (k == 0 && self_adjoint && dU[0] == objective_rhs) {
        for (int d : s.free_dofs) adj[d] = objective_weight * sol[0]->values[d];
      } else {
        const Eigen::VectorXd adj_free = solve_free_block(s, rhs, solve_);
        ++solves_;
        for (std::size_t f = 0; f < s.free_dofs.size(); ++f) adj[s.free_dofs[f]] = adj_free[f];
      }
      for (int e = 0; e < n; ++e) {
        const std::vector<int> dofs = element_dofs(spec_.mesh.tets[e], ph);
        Eigen::VectorXd ue(dofs.size()), le(dofs.size());
        for (std::size_t i = 0; i < dofs.size(); ++i) {
          ue[i] = sol[k]->values[dofs[i]];
          le[i] = adj[dofs[i]];
        }
        grad[e] -= le.dot(unit_[k][e] * ue);
      }
    }
    return grad;
  }

  double density(const std::vector<double>& values, int e) const {
    return p_.parameter == Parameter::density ? values[e] : p_.base.values[e].density;
  }

  std::vector<int> resolved_vertices(const PropertySpec& c) const {
    for (const auto& rp : spec_.properties) {
      if (rp.spec == c) return rp.vertices;
    }
    if (c.vertex_set) return resolve_vertex_set(spec_.layer, spec_.mesh, *c.vertex_set);
    if (c.vertex_ids) return *c.vertex_ids;
    return {};
  }

  double tightened(const PropertySpec& c) const {
    const double m = p_.constraint_margin * std::abs(c.bound);
    return c.op == Comparison::at_most ? c.bound - m : c.bound + m;
  }

  double row_value(const PropertySpec& c, const Row& row, double measured,
                   const std::optional<FieldSolution>* sol) const {
    const double b = c.bound;
    const double bt = tightened(c);
    switch (c.kind) {
      case PredicateKind::max_displacement: {
        const double u2 = sol[0]->displacement(row.vertex).squaredNorm();
        return (u2 - bt * bt) / (b * b);
      }
      case PredicateKind::max_temperature:
        return (sol[1]->temperature(row.vertex) - bt) / std::abs(b);
      default:
        return c.op == Comparison::at_most ? (measured - bt) / std::abs(b) : (bt - measured) / std::abs(b);
    }
  }

  void add_row_gradient(const PropertySpec& c, const Row& row, double weight,
                        const std::optional<FieldSolution>* sol, Eigen::VectorXd* dU,
                        Eigen::VectorXd& element_gradient) const {
    const double b = c.bound;
    const double sign = c.op == Comparison::at_most ? 1.0 : -1.0;
    switch (c.kind) {
      case PredicateKind::max_displacement:
        dU[0].segment<3>(3 * row.vertex) += weight * 2.0 * sol[0]->displacement(row.vertex) / (b * b);
        break;
      case PredicateKind::max_temperature:
        dU[1][row.vertex] += weight / std::abs(b);
        break;
      case PredicateKind::average_temperature:
        dU[1] += sign * weight * weights_ / std::abs(b);
        break;
      case PredicateKind::mass:
        if (p_.parameter == Parameter::density) {
          for (int e = 0; e < spec_.mesh.element_count(); ++e) {
            element_gradient[e] += sign * weight * spec_.volumes[e] / std::abs(b);
          }
        }
        break;
      case PredicateKind::volume: break;
    }
  }

  const InversionProblem& p_;
  const BoundSpecification& spec_;
  SolveOptions solve_;
  bool need_[2] = {false, false};
  std::vector<Eigen::MatrixXd> unit_[2];
  Eigen::VectorXd weights_;
  std::vector<Row> rows_;
  std::vector<Pair> pairs_;
  double regularity_scale_ = 1.0;
  double total_volume_ = 0.0;
  int solves_ = 0;
};

std::vector<double> base_values(const InversionProblem& p) {
  std::vector<double> values(p.base.size());
  for (int e = 0; e < p.base.size(); ++e) values[e] = p.base.values[e].get(p.parameter);
  return values;
}

std::vector<double> element_values(const InversionProblem& p, const Eigen::VectorXd& q) {
  std::vector<double> values = base_values(p);
  for (int j = 0; j < p.group_count(); ++j) {
    for (int e : p.groups[j]) values[e] = q[j];
  }
  return values;
}

Eigen::VectorXd group_gradient(const InversionProblem& p, const Eigen::VectorXd& element_gradient) {
  Eigen::VectorXd g = Eigen::VectorXd::Zero(p.group_count());
  for (int j = 0; j < p.group_count(); ++j) {
    for (int e : p.groups[j]) g[j] += element_gradient[e];
  }
  return g;
}

double objective_scale_for(const InversionProblem& p, double j0, double total_volume) {
  const double floor = p.objective == ObjectiveKind::plan_deviation ? 1e-4 * total_volume : 1e-300;
  return std::max(std::abs(j0), floor);
}

void finish_result(const InversionProblem& problem, Evaluator& ev, const Eigen::VectorXd& q,
                   OptimizationResult& r, const InversionOptions& options) {
  (void)options;
  r.free_values = q;
  r.values = element_values(problem, q);
  const Evaluation fin = ev.evaluate(r.values, {}, 0.0, 1.0, false);
  r.objective = fin.objective;
  r.verdicts = ev.verdicts(fin);
  r.violated.clear();
  for (const auto& v : r.verdicts) {
    if (!v.pass) r.violated.push_back(v.name);
  }
  r.feasible = r.violated.empty();
}

}  // namespace

ObjectiveValue evaluate_objective(const InversionProblem& problem, const Eigen::VectorXd& free_values,
                                  const SolveOptions& solve_options) {
  validate(problem);
  if (free_values.size() != problem.group_count()) {
    throw Error(ErrorCode::invalid_argument, "expected " + std::to_string(problem.group_count()) +
                                                 " free values, got " +
                                                 std::to_string(free_values.size()));
  }
  InversionProblem bare = problem;
  bare.constraints.clear();
  bare.regularity.reset();
  Evaluator ev(bare, solve_options);
  const Evaluation e = ev.evaluate(element_values(bare, free_values), {}, 0.0, 1.0, true);
  ObjectiveValue out;
  out.value = e.objective;
  out.gradient = group_gradient(bare, e.element_gradient);
  out.fem_solves = ev.solves();
  return out;
}

std::string trace_to_jsonl(const std::vector<TraceRecord>& trace) {
  std::ostringstream os;
  for (const TraceRecord& t : trace) {
    nlohmann::ordered_json j;
    j["iter"] = t.iter;
    j["objective"] = t.objective;
    j["merit"] = t.merit;
    j["max_violation"] = t.max_violation;
    j["step_norm"] = t.step_norm;
    j["phase"] = t.phase;
    os << j.dump() << "\n";
  }
  return os.str();
}

double projected_gradient_norm(const Eigen::VectorXd& x, const Eigen::VectorXd& g,
                               const Eigen::VectorXd& lower, const Eigen::VectorXd& upper) {
  const Eigen::VectorXd p = (x - g).cwiseMax(lower).cwiseMin(upper);
  return x.size() == 0 ? 0.0 : (p - x).lpNorm<Eigen::Infinity>();
}

BoxMinimizeResult minimize_in_box(
    const SmoothFunction& f, const Eigen::VectorXd& x0, const Eigen::VectorXd& lower,
    const Eigen::VectorXd& upper, double tol, int max_iter,
    const std::function<void(const Eigen::VectorXd&, double, double)>& on_step) {
  BoxMinimizeResult r;
  r.x = x0.cwiseMax(lower).cwiseMin(upper);
  ValueGradient cur = f(r.x);
  ++r.evaluations;
  r.value = cur.value;
  if (r.x.size() == 0) {
    r.converged = true;
    return r;
  }
  double alpha = 1.0 / std::max(cur.gradient.lpNorm<Eigen::Infinity>(), 1e-12);
  alpha = std::min(alpha, 1.0);
  const Eigen::VectorXd width = upper - lower;
  if (width.allFinite() && width.maxCoeff() > 0.0) {
    alpha = std::min(alpha, 0.1 * width.maxCoeff() /
                                std::max(cur.gradient.lpNorm<Eigen::Infinity>(), 1e-300));
  }
  while (r.iterations < max_iter) {
    if (projected_gradient_norm(r.x, cur.gradient, lower, upper) <= tol) {
      r.converged = true;
      break;
    }
    bool accepted = false;
    Eigen::VectorXd x_new;
    ValueGradient next;
    double a = alpha;
    for (int back = 0; back < 30; ++back) {
      x_new = (r.x - a * cur.gradient).cwiseMax(lower).cwiseMin(upper);
      const Eigen::VectorXd step = x_new - r.x;
      if (step.lpNorm<Eigen::Infinity>() == 0.0) break;
      next = f(x_new);
      ++r.evaluations;
      if (next.value <= cur.value + 1e-4 * cur.gradient.dot(step)) {
        accepted = true;
        break;
      }
      a *= 0.5;
    }
    if (!accepted) {
      r.stalled = true;
      break;
    }
    const Eigen::VectorXd s = x_new - r.x;
    const Eigen::VectorXd y = next.gradient - cur.gradient;
    const double sy = s.dot(y);
    alpha = sy > 0.0 ? std::clamp(s.squaredNorm() / sy, 1e-20, 1e20) : std::min(a * 4.0, 1e20);
    ++r.iterations;
    r.x = x_new;
    cur = std::move(next);
    r.value = cur.value;
    if (on_step) on_step(r.x, cur.value, s.lpNorm<Eigen::Infinity>());
  }
  if (!r.converged) {
    r.converged = projected_gradient_norm(r.x, cur.gradient, lower, upper) <= tol;
  }
  return r;
}

OptimizationResult inversion_solve(const InversionProblem& problem, const InversionOptions& options,
                                   const OptimizationResult* seed) {
  validate(problem);
  Evaluator ev(problem, options.solve);
  const auto boxes = problem.group_boxes();
  const int m = problem.group_count();
  Eigen::VectorXd lo(m), width(m);
  for (int j = 0; j < m; ++j) {
    lo[j] = boxes[j].min;
    width[j] = boxes[j].width();
  }
  auto to_q = [&](const Eigen::VectorXd& t) -> Eigen::VectorXd { return lo + width.cwiseProduct(t); };

  Eigen::VectorXd q0 = seed && seed->values.size() == problem.base.values.size()
                           ? group_values(problem, seed->values)
                           : group_values(problem, base_values(problem));
  Eigen::VectorXd t(m);
  for (int j = 0; j < m; ++j) {
    t[j] = width[j] > 0.0 ? std::clamp((q0[j] - lo[j]) / width[j], 0.0, 1.0) : 0.0;
  }

  OptimizationResult r;
  const int rows = ev.row_count();
  std::vector<double> lambda(rows, 0.0);
  double rho = rows > 0 ? options.initial_penalty : 0.0;
  double scale = 1.0;
  if (seed && static_cast<int>(seed->multipliers.size()) == rows && seed->penalty_weight > 0.0) {
    lambda = seed->multipliers;
    rho = seed->penalty_weight;
    scale = seed->objective_scale;
  } else {
    const Evaluation e0 = ev.evaluate(element_values(problem, to_q(t)), {}, 0.0, 1.0, false);
    scale = objective_scale_for(problem, e0.objective, ev.total_volume());
  }

  Evaluation last;
  auto merit = [&](const Eigen::VectorXd& tt) {
    last = ev.evaluate(element_values(problem, to_q(tt)), lambda, rho, scale, true);
    ValueGradient vg;
    vg.value = last.merit;
    vg.gradient = group_gradient(problem, last.element_gradient).cwiseProduct(width);
    return vg;
  };

  int iterations = 0;
  int escalations = 0;
  int phase = 0;
  double previous_violation = kInf;
  for (int outer = 0; outer < 60; ++outer) {
    const int budget = std::max(options.max_iter - iterations, 0);
    auto on_step = [&](const Eigen::VectorXd&, double value, double step) {
      TraceRecord rec;
      rec.iter = static_cast<int>(r.trace.size()) + 1;
      rec.objective = last.objective;
      rec.merit = value;
      rec.max_violation = rows > 0 ? std::max(0.0, last.constraint.maxCoeff()) : 0.0;
      rec.step_norm = step;
      rec.phase = phase;
      r.trace.push_back(rec);
    };
    const BoxMinimizeResult inner =
        minimize_in_box(merit, t, Eigen::VectorXd::Zero(m), Eigen::VectorXd::Ones(m), options.tol,
                        budget, on_step);
    iterations += inner.iterations;
    t = inner.x;
    if (rows == 0) break;

    const Evaluation at = ev.evaluate(element_values(problem, to_q(t)), lambda, rho, scale, false);
    const double violation = std::max(0.0, at.constraint.maxCoeff());
    double change = 0.0, lam_max = 0.0;
    for (int i = 0; i < rows; ++i) {
      const double updated = std::max(0.0, lambda[i] + rho * at.constraint[i]);
      change = std::max(change, std::abs(updated - lambda[i]));
      lam_max = std::max(lam_max, lambda[i]);
      lambda[i] = updated;
    }
    const bool settled = change <= 1e-4 * (1.0 + lam_max) || inner.iterations == 0;
    if (violation <= options.feasibility_tol && settled) break;
    if (iterations >= options.max_iter) break;
    ++phase;
    if (violation > options.feasibility_tol && violation > 0.25 * previous_violation &&
        escalations < options.max_escalations) {
      rho *= 10.0;
      ++escalations;
    }
    previous_violation = violation;
  }

  r.multipliers = lambda;
  r.penalty_weight = rho;
  r.objective_scale = scale;
  finish_result(problem, ev, to_q(t), r, options);
  r.fem_solves = ev.solves();
  r.strategy_used = "full";
  return r;
}

// ---------------------------------------------------------------------------

QuadraticModel build_quadratic_model(const SmoothFunction& f, const Eigen::VectorXd& y0,
                                     const Eigen::VectorXd& z0, const Eigen::VectorXd& step_y,
                                     const Eigen::VectorXd& step_z, double grad_tol) {
  const Eigen::Index ny = y0.size(), nz = z0.size();
  if (step_y.size() != ny || step_z.size() != nz) {
    throw Error(ErrorCode::invalid_argument, "difference steps do not match the variables");
  }
  Eigen::VectorXd x0(ny + nz);
  x0 << y0, z0;
  Eigen::VectorXd steps(ny + nz);
  steps << step_y, step_z;
  const ValueGradient g0 = f(x0);
  QuadraticModel model;
  model.y0 = y0;
  model.z0 = z0;
  model.grad_y = g0.gradient.head(ny);
  model.grad_z = g0.gradient.tail(nz);
  if (model.grad_z.size() > 0 && model.grad_z.lpNorm<Eigen::Infinity>() > grad_tol) {
    throw Error(ErrorCode::precondition,
                "base point is not stationary in z (gradient " +
                    std::to_string(model.grad_z.lpNorm<Eigen::Infinity>()) + ")");
  }
  Eigen::MatrixXd H(ny + nz, ny + nz);
  for (Eigen::Index i = 0; i < ny + nz; ++i) {
    if (!(steps[i] > 0.0)) throw Error(ErrorCode::invalid_argument, "difference steps must be > 0");
    Eigen::VectorXd xp = x0, xm = x0;
    xp[i] += steps[i];
    xm[i] -= steps[i];
    H.col(i) = (f(xp).gradient - f(xm).gradient) / (2.0 * steps[i]);
  }
  H = 0.5 * (H + H.transpose()).eval();
  model.hess_yy = H.topLeftCorner(ny, ny);
  model.hess_zz = H.bottomRightCorner(nz, nz);
  model.hess_zy = H.bottomLeftCorner(nz, ny);
  if (nz > 0) {
    Eigen::LLT<Eigen::MatrixXd> llt(model.hess_zz);
    if (llt.info() != Eigen::Success) {
      throw Error(ErrorCode::model_invalid, "free-block Hessian is not positive definite");
    }
  }
  return model;
}

Eigen::VectorXd warm_start_update(const QuadraticModel& model, const Eigen::VectorXd& delta_y) {
  if (delta_y.size() != model.y0.size()) {
    throw Error(ErrorCode::invalid_argument, "delta_y has " + std::to_string(delta_y.size()) +
                                                 " entries, the model has " +
                                                 std::to_string(model.y0.size()));
  }
  if (model.z0.size() == 0) return Eigen::VectorXd();
  Eigen::LLT<Eigen::MatrixXd> llt(model.hess_zz);
  if (llt.info() != Eigen::Success) {
    throw Error(ErrorCode::model_invalid, "free-block Hessian is not positive definite");
  }
  return -llt.solve(model.hess_zy * delta_y);
}

namespace {

double element_step(const InversionProblem& p, int e, double value) {
  const double w = p.spec->element_ranges[e].get(p.parameter).width();
  return w > 0.0 ? 1e-3 * w : 1e-3 * std::max(std::abs(value), 1e-12);
}

struct SplitModel {
  QuadraticModel model;
  std::vector<int> frozen;
  Eigen::VectorXd active_values;  // linearized active constraints at the split point
  Eigen::MatrixXd jac_y, jac_z;
};

// Sub-blocks of an element-level curvature for the problem's frozen/free split,
// with free elements aggregated into their groups.
SplitModel split_curvature(const InversionProblem& p, const ElementCurvature& c,
                           const std::vector<double>& at) {
  const int n = p.base.size();
  SplitModel s;
  s.frozen = p.frozen_elements();
  const int ny = static_cast<int>(s.frozen.size());
  const int nz = p.group_count();
  Eigen::VectorXd shift(n);
  for (int e = 0; e < n; ++e) shift[e] = at[e] - c.values[e];
  const Eigen::VectorXd grad = c.gradient + c.hessian * shift;
  Eigen::MatrixXd G = Eigen::MatrixXd::Zero(n, nz);
  for (int j = 0; j < nz; ++j) {
    for (int e : p.groups[j]) G(e, j) = 1.0;
  }
  Eigen::MatrixXd Y = Eigen::MatrixXd::Zero(n, ny);
  for (int i = 0; i < ny; ++i) Y(s.frozen[i], i) = 1.0;
  QuadraticModel& m = s.model;
  m.y0.resize(ny);
  for (int i = 0; i < ny; ++i) m.y0[i] = at[s.frozen[i]];
  m.z0 = group_values(p, at);
  m.grad_y = Y.transpose() * grad;
  m.grad_z = G.transpose() * grad;
  m.hess_yy = Y.transpose() * c.hessian * Y;
  m.hess_zz = G.transpose() * c.hessian * G;
  m.hess_zy = G.transpose() * c.hessian * Y;
  s.active_values = c.active_values + c.active_jacobian * shift;
  s.jac_y = c.active_jacobian * Y;
  s.jac_z = c.active_jacobian * G;
  return s;
}

}  // namespace

ElementCurvature element_curvature(const InversionProblem& problem, const OptimizationResult& base,
                                   const InversionOptions& options) {
  validate(problem);
  const int n = problem.base.size();
  if (static_cast<int>(base.values.size()) != n) {
    throw Error(ErrorCode::invalid_argument, "base result does not cover every element");
  }
  Evaluator ev(problem, options.solve);
  std::vector<double> lambda = base.multipliers;
  if (static_cast<int>(lambda.size()) != ev.row_count()) lambda.assign(ev.row_count(), 0.0);
  const double rho = ev.row_count() > 0 ? std::max(base.penalty_weight, options.initial_penalty) : 0.0;
  const double scale = base.objective_scale;

  ElementCurvature c;
  c.values = base.values;
  c.gradient = ev.evaluate(c.values, lambda, rho, scale, true).element_gradient;
  c.hessian.resize(n, n);
  for (int e = 0; e < n; ++e) {
    const double h = element_step(problem, e, c.values[e]);
    std::vector<double> plus = c.values, minus = c.values;
    plus[e] += h;
    minus[e] -= h;
    const Eigen::VectorXd gp = ev.evaluate(plus, lambda, rho, scale, true).element_gradient;
    const Eigen::VectorXd gm = ev.evaluate(minus, lambda, rho, scale, true).element_gradient;
    c.hessian.col(e) = (gp - gm) / (2.0 * h);
  }
  c.hessian = 0.5 * (c.hessian + c.hessian.transpose()).eval();

  const Evaluation at = ev.evaluate(c.values, lambda, rho, scale, false);
  std::vector<int> active;
  for (int i = 0; i < ev.row_count(); ++i) {
    if (rho > 0.0 && lambda[i] + rho * at.constraint[i] > 0.0) active.push_back(i);
  }
  c.active_values.resize(static_cast<Eigen::Index>(active.size()));
  c.active_jacobian.resize(static_cast<Eigen::Index>(active.size()), n);
  for (std::size_t a = 0; a < active.size(); ++a) {
    c.active_values[a] = at.constraint[active[a]];
    c.active_jacobian.row(a) = ev.row_gradient(c.values, active[a]).transpose();
  }
  c.fem_solves = ev.solves();
  return c;
}

void attach_curvature(const InversionProblem& problem, OptimizationResult& result,
                      const InversionOptions& options) {
  auto c = std::make_shared<ElementCurvature>(element_curvature(problem, result, options));
  result.model_fem_solves += c->fem_solves;
  result.fem_solves += c->fem_solves;
  result.curvature = std::move(c);
}

QuadraticModel build_quadratic_model(const InversionProblem& problem, const OptimizationResult& base,
                                     const InversionOptions& options) {
  const ElementCurvature c = element_curvature(problem, base, options);
  SplitModel s = split_curvature(problem, c, base.values);
  s.model.fem_solves = c.fem_solves;
  // Stationarity is judged in box-normalized units, the optimizer's own scale.
  const auto boxes = problem.group_boxes();
  Eigen::VectorXd t(problem.group_count()), g(problem.group_count());
  for (int j = 0; j < problem.group_count(); ++j) {
    const double w = boxes[j].width();
    t[j] = w > 0.0 ? (s.model.z0[j] - boxes[j].min) / w : 0.0;
    g[j] = s.model.grad_z[j] * w;
  }
  const double pg = projected_gradient_norm(t, g, Eigen::VectorXd::Zero(t.size()),
                                            Eigen::VectorXd::Ones(t.size()));
  if (pg > std::max(1e3 * options.tol, 1e-6)) {
    throw Error(ErrorCode::precondition,
                "base point is not a minimizer (projected gradient " + std::to_string(pg) + ")");
  }
  if (s.model.z0.size() > 0) {
    Eigen::LLT<Eigen::MatrixXd> llt(s.model.hess_zz);
    if (llt.info() != Eigen::Success) {
      throw Error(ErrorCode::model_invalid, "free-block Hessian is not positive definite");
    }
  }
  return s.model;
}

OptimizationResult reoptimize_after_drift(const InversionProblem& problem,
                                          const OptimizationResult& previous,
                                          const Eigen::VectorXd& delta_y, Strategy strategy,
                                          const InversionOptions& options) {
  validate(problem);
  const int n = problem.base.size();
  if (static_cast<int>(previous.values.size()) != n) {
    throw Error(ErrorCode::invalid_argument, "previous result does not cover every element");
  }
  const std::vector<int> frozen = problem.frozen_elements();
  if (delta_y.size() != static_cast<Eigen::Index>(frozen.size())) {
    throw Error(ErrorCode::invalid_argument,
                "delta_y has " + std::to_string(delta_y.size()) + " entries for " +
                    std::to_string(frozen.size()) + " frozen elements");
  }

  // Frozen values become the previous plan plus delta_y.
  InversionProblem shifted = problem;
  double y_norm = 0.0;
  for (std::size_t i = 0; i < frozen.size(); ++i) {
    const int e = frozen[i];
    double dy = delta_y[static_cast<Eigen::Index>(i)];
    if (std::abs(dy) <= 1e-12 * std::max(std::abs(previous.values[e]), 1e-300)) dy = 0.0;
    shifted.base.values[e].set(problem.parameter, previous.values[e] + dy);
    y_norm = std::max(y_norm, std::abs(dy));
  }

  auto full = [&](int spent_solves, int spent_model) {
    OptimizationResult r = inversion_solve(shifted, options, &previous);
    r.fem_solves += spent_solves;
    r.model_fem_solves = spent_model;
    r.curvature = previous.curvature;
    if (strategy == Strategy::warm_start) {
      r.strategy_used = "full_fallback";
      // Later warm starts expand around this optimum, not the stale one.
      if (r.feasible) {
        try {
          attach_curvature(shifted, r, options);
        } catch (const Error&) {
          r.curvature = previous.curvature;
        }
      }
    }
    return r;
  };

  if (y_norm == 0.0) {
    OptimizationResult r = previous;
    r.free_values = group_values(shifted, previous.values);
    r.fem_solves = 0;
    r.model_fem_solves = 0;
    r.trace.clear();
    r.strategy_used = "unchanged";
    return r;
  }
  if (strategy == Strategy::full) return full(0, 0);

  int spent = 0, spent_model = 0;
  std::shared_ptr<const ElementCurvature> curvature = previous.curvature;
  if (!curvature) {
    try {
      auto c = std::make_shared<ElementCurvature>(element_curvature(problem, previous, options));
      spent += c->fem_solves;
      spent_model += c->fem_solves;
      curvature = std::move(c);
    } catch (const Error&) {
      return full(spent, spent_model);
    }
  }
  SplitModel s = split_curvature(shifted, *curvature, previous.values);
  const QuadraticModel& m = s.model;
  const auto boxes = shifted.group_boxes();
  std::vector<int> inactive;
  for (int j = 0; j < shifted.group_count(); ++j) {
    const double w = boxes[j].width();
    const double z = m.z0[j];
    const bool at_lo = z <= boxes[j].min + 1e-9 * w && m.grad_z[j] > 0.0;
    const bool at_hi = z >= boxes[j].max - 1e-9 * w && m.grad_z[j] < 0.0;
    if (w > 0.0 && !at_lo && !at_hi) inactive.push_back(j);
  }
  Eigen::VectorXd z_new = m.z0;
  if (!inactive.empty()) {
    const int k = static_cast<int>(inactive.size());
    Eigen::MatrixXd Hii(k, k), Hiy(k, m.y0.size());
    for (int a = 0; a < k; ++a) {
      for (int b = 0; b < k; ++b) Hii(a, b) = m.hess_zz(inactive[a], inactive[b]);
      Hiy.row(a) = m.hess_zy.row(inactive[a]);
    }
    Eigen::LLT<Eigen::MatrixXd> llt(Hii);
    if (llt.info() != Eigen::Success) return full(spent, spent_model);
    Eigen::VectorXd gi(k);
    for (int a = 0; a < k; ++a) gi[a] = m.grad_z[inactive[a]];
    Eigen::VectorXd dz;
    const Eigen::Index na = s.active_values.size();
    if (na == 0) {
      dz = -llt.solve(Hiy * delta_y + gi);
    } else {
      // Stationary point of the model on the linearized active constraints.
      Eigen::MatrixXd Ai(na, k);
      for (int a = 0; a < k; ++a) Ai.col(a) = s.jac_z.col(inactive[a]);
      Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(k + na, k + na);
      kkt.topLeftCorner(k, k) = Hii;
      kkt.topRightCorner(k, na) = Ai.transpose();
      kkt.bottomLeftCorner(na, k) = Ai;
      Eigen::VectorXd rhs(k + na);
      rhs.head(k) = -(Hiy * delta_y + gi);
      rhs.tail(na) = -(s.active_values + s.jac_y * delta_y);
      dz = kkt.completeOrthogonalDecomposition().solve(rhs).head(k);
    }
    for (int a = 0; a < k; ++a) {
      const int j = inactive[a];
      z_new[j] = std::clamp(m.z0[j] + dz[a], boxes[j].min, boxes[j].max);
    }
  }

  Evaluator ev(shifted, options.solve);
  OptimizationResult r;
  finish_result(shifted, ev, z_new, r, options);
  spent += ev.solves();
  if (!r.feasible) return full(spent, spent_model);
  r.fem_solves = spent;
  r.model_fem_solves = spent_model;
  r.multipliers = previous.multipliers;
  r.penalty_weight = previous.penalty_weight;
  r.objective_scale = previous.objective_scale;
  r.curvature = curvature;
  r.strategy_used = "warm_start";
  return r;
}

}  // namespace semprint
