#include "semprint/printsim.hpp"

#include <cmath>

#include "semprint/error.hpp"
#include "semprint/rng.hpp"

namespace semprint {

namespace {

// Stream domains of the run's counter-based generator.
constexpr std::uint64_t kActuatorDomain = 1;
constexpr std::uint64_t kSensorDomain = 2;

}  // namespace

double actuate(const ActuatorModel& actuator, double commanded, int layer, int element) {
  const double bias = actuator.gain * (1.0 + actuator.drift_rate * layer);
  if (actuator.noise_sd == 0.0) return commanded * bias;
  const CounterRng rng(actuator.seed);
  const double eps = actuator.noise_sd * rng.normal(kActuatorDomain, static_cast<std::uint64_t>(element),
                                                    static_cast<std::uint64_t>(layer));
  return commanded * bias * std::exp(eps);
}

EstimatorState EstimatorState::from_commanded(const std::vector<double>& commanded, double prior_sd) {
  if (!(prior_sd > 0.0)) throw Error(ErrorCode::invalid_argument, "prior sd must be > 0");
  EstimatorState s;
  s.prior_sd = prior_sd;
  s.mean.reserve(commanded.size());
  for (double c : commanded) {
    if (!(c > 0.0)) throw Error(ErrorCode::invalid_argument, "commanded values must be > 0");
    s.mean.push_back(std::log(c));
  }
  s.variance.assign(commanded.size(), prior_sd * prior_sd);
  s.measurements.assign(commanded.size(), 0);
  return s;
}

void EstimatorState::update(int element, double y, double sd) {
  double& m = mean.at(element);
  double& v = variance.at(element);
  ++measurements[element];
  if (v == 0.0) return;
  if (sd == 0.0) {
    m = y;
    v = 0.0;
    return;
  }
  const double r = sd * sd;
  const double post = 1.0 / (1.0 / v + 1.0 / r);
  m = post * (m / v + y / r);
  v = post;
}

void EstimatorState::reset(int element, double commanded) {
  mean.at(element) = std::log(commanded);
  variance[element] = prior_sd * prior_sd;
  measurements[element] = 0;
}

PrintState initial_print_state(const LayerPartition& partition, Parameter parameter,
                               const MaterialField& commanded) {
  if (static_cast<int>(partition.element_layer.size()) != commanded.size()) {
    throw Error(ErrorCode::invalid_argument, "layer partition and field sizes differ");
  }
  PrintState s;
  s.partition = partition;
  s.parameter = parameter;
  s.commanded = commanded;
  s.commanded.provenance.assign(commanded.values.size(), Provenance::commanded);
  s.achieved = MaterialField(commanded.size(), MaterialParams{}, Provenance::commanded);
  s.estimated = s.commanded;
  return s;
}

PrintState print_layer(const PrintState& state, const ActuatorModel& actuator) {
  if (state.frontier >= state.layer_count()) {
    throw Error(ErrorCode::print_complete, "every layer is already printed");
  }
  if (!(actuator.gain > 0.0) || !(actuator.noise_sd >= 0.0)) {
    throw Error(ErrorCode::invalid_argument, "actuator gain must be > 0 and noise sd >= 0");
  }
  PrintState next = state;
  const int layer = state.frontier;
  for (int e : state.partition.layers[layer]) {
    MaterialParams m = state.commanded.values[e];
    m.set(state.parameter, actuate(actuator, m.get(state.parameter), layer, e));
    next.achieved.values[e] = m;
    next.achieved.provenance[e] = Provenance::achieved;
  }
  next.frontier = layer + 1;
  return next;
}

EstimatorState observe_and_update(PrintState& state, const SensorModel& sensor,
                                  const EstimatorState& estimator) {
  if (state.frontier < 1) throw Error(ErrorCode::precondition, "nothing has been printed yet");
  if (!(sensor.noise_sd >= 0.0)) throw Error(ErrorCode::invalid_argument, "sensor noise sd must be >= 0");
  EstimatorState est = estimator;
  const CounterRng rng(sensor.seed);
  const int first = sensor.coverage == SensorCoverage::newest_layer ? state.frontier - 1 : 0;
  for (int layer = first; layer < state.frontier; ++layer) {
    for (int e : state.partition.layers[layer]) {
      const double truth = std::log(state.achieved.values[e].get(state.parameter));
      double y = truth;
      if (sensor.noise_sd > 0.0) {
        y += sensor.noise_sd * rng.normal(kSensorDomain, static_cast<std::uint64_t>(e),
                                          static_cast<std::uint64_t>(est.measurements[e]));
      }
      est.update(e, y, sensor.noise_sd);
      state.log.push_back({state.frontier - 1, e, y});
      state.estimated.values[e].set(state.parameter, std::exp(est.mean[e]));
      state.estimated.provenance[e] = Provenance::estimated;
    }
  }
  return est;
}

ControllerView controller_view(const PrintState& state) {
  return {state.partition, state.parameter, state.frontier, state.commanded, state.estimated};
}

std::string_view to_string(Granularity g) { return g == Granularity::element ? "element" : "layer"; }

Granularity granularity_from_string(std::string_view name) {
  if (name == "element") return Granularity::element;
  if (name == "layer") return Granularity::layer;
  throw Error(ErrorCode::invalid_argument, "unknown granularity '" + std::string(name) + "'");
}

std::string_view to_string(Outcome o) {
  switch (o) {
    case Outcome::success: return "success";
    case Outcome::aborted: return "aborted";
    case Outcome::rejected: return "rejected";
  }
  return "unknown";
}

InversionProblem build_problem(const ProblemTemplate& tmpl, const LayerPartition& partition,
                               int frontier, const MaterialField& base) {
  std::vector<int> frozen;
  for (int k = 0; k < frontier; ++k) {
    frozen.insert(frozen.end(), partition.layers[k].begin(), partition.layers[k].end());
  }
  InversionProblem p = make_inversion_problem(tmpl.spec, tmpl.objective, base, frozen);
  if (!tmpl.reference.empty()) {
    p.reference = tmpl.reference;
  } else {
    const MaterialField nominal = nominal_field(*tmpl.spec);
    for (int e = 0; e < nominal.size(); ++e) p.reference[e] = nominal.values[e].get(p.parameter);
  }
  if (tmpl.granularity == Granularity::layer) group_by_layer(p, partition);
  return p;
}

OptimizationResult plan_print(const ProblemTemplate& tmpl, const LayerPartition& partition,
                              const ControlPolicy& policy) {
  const InversionProblem p = build_problem(tmpl, partition, 0, nominal_field(*tmpl.spec));
  OptimizationResult plan = inversion_solve(p, tmpl.options);
  if (plan.feasible && policy.control_enabled && policy.strategy == Strategy::warm_start) {
    attach_curvature(p, plan, tmpl.options);
  }
  return plan;
}

namespace {

double max_violation(const std::vector<PropertyVerdict>& verdicts) {
  double worst = 0.0;
  for (const auto& v : verdicts) worst = std::max(worst, relative_violation(v));
  return worst;
}

double mean_command(const MaterialField& commanded, const std::vector<int>& layer, Parameter p) {
  if (layer.empty()) return 0.0;
  double s = 0.0;
  for (int e : layer) s += commanded.values[e].get(p);
  return s / static_cast<double>(layer.size());
}

}  // namespace

ControlDecision control_step(const ControllerView& view, const ProblemTemplate& tmpl,
                             const OptimizationResult& previous_plan, const ControlPolicy& policy) {
  const int n = view.estimated.size();
  MaterialField base = view.estimated;
  for (int e = 0; e < n; ++e) {
    if (view.partition.element_layer[e] >= view.frontier) {
      base.values[e].set(view.parameter, previous_plan.values.at(e));
    }
  }
  const InversionProblem problem = build_problem(tmpl, view.partition, view.frontier, base);
  const std::vector<int> frozen = problem.frozen_elements();
  Eigen::VectorXd delta_y(static_cast<Eigen::Index>(frozen.size()));
  for (std::size_t i = 0; i < frozen.size(); ++i) {
    const int e = frozen[i];
    delta_y[static_cast<Eigen::Index>(i)] =
        view.estimated.values[e].get(view.parameter) - previous_plan.values.at(e);
  }

  ControlDecision d;
  d.plan = reoptimize_after_drift(problem, previous_plan, delta_y, policy.strategy, tmpl.options);
  d.commanded = view.commanded;
  d.record.layer = view.frontier;
  d.record.objective = d.plan.objective;
  d.record.max_violation = max_violation(d.plan.verdicts);
  d.record.fem_solves = d.plan.fem_solves;
  d.record.strategy = d.plan.strategy_used;
  d.record.feasible = d.plan.feasible;

  if (!d.plan.feasible) {
    d.abort = AbortDecision{view.frontier, d.plan.violated, d.plan.values};
  } else if (d.plan.strategy_used != "unchanged") {
    std::optional<ActuatorModel> law;
    if (policy.compensate_actuator) {
      std::vector<TestPrintRecord> records;
      for (int e : frozen) {
        records.push_back({view.commanded.values[e].get(view.parameter),
                           view.estimated.values[e].get(view.parameter), view.partition.element_layer[e]});
      }
      try {
        law = calibrate_actuator(records);
      } catch (const Error&) {
        law.reset();
      }
    }
    for (int e : problem.free_elements) {
      const int layer = view.partition.element_layer[e];
      double cmd = d.plan.values[e];
      if (law) {
        const double factor = law->gain * (1.0 + law->drift_rate * layer);
        if (factor > 0.0) cmd /= factor;
      }
      d.commanded.values[e].set(view.parameter, cmd);
      d.commanded.provenance[e] = Provenance::commanded;
    }
  }
  if (view.frontier < static_cast<int>(view.partition.layers.size())) {
    d.record.next_layer_command =
        mean_command(d.commanded, view.partition.layers[view.frontier], view.parameter);
  }
  return d;
}

namespace {

int verification_solves(const BoundSpecification& spec) {
  bool elastic = false, thermal = false;
  for (const auto& rp : spec.properties) {
    if (rp.spec.kind == PredicateKind::max_displacement) elastic = true;
    if (rp.spec.kind == PredicateKind::max_temperature ||
        rp.spec.kind == PredicateKind::average_temperature) {
      thermal = true;
    }
  }
  return (elastic ? 1 : 0) + (thermal ? 1 : 0);
}

}  // namespace

PrintReport run_print(const ProblemTemplate& tmpl, const LayerPartition& partition,
                      const OptimizationResult& initial_plan, ActuatorModel actuator,
                      SensorModel sensor, const ControlPolicy& policy, std::uint64_t seed) {
  const BoundSpecification& spec = *tmpl.spec;
  const Parameter param = default_parameter(tmpl.objective);
  if (static_cast<int>(initial_plan.values.size()) != spec.mesh.element_count()) {
    throw Error(ErrorCode::invalid_argument, "initial plan does not cover every element");
  }
  actuator.seed = seed;
  sensor.seed = seed;

  MaterialField commanded = nominal_field(spec);
  for (int e = 0; e < commanded.size(); ++e) commanded.values[e].set(param, initial_plan.values[e]);
  PrintState state = initial_print_state(partition, param, commanded);
  std::vector<double> initial(commanded.size());
  for (int e = 0; e < commanded.size(); ++e) initial[e] = commanded.values[e].get(param);
  EstimatorState est = EstimatorState::from_commanded(initial, 0.2);

  PrintReport report;
  report.plan_fem_solves = initial_plan.fem_solves;
  OptimizationResult plan = initial_plan;
  while (state.frontier < state.layer_count()) {
    state = print_layer(state, actuator);
    est = observe_and_update(state, sensor, est);
    if (!policy.control_enabled || state.frontier >= state.layer_count()) continue;

    ControlDecision d = control_step(controller_view(state), tmpl, plan, policy);
    state.history.push_back(d.record);
    report.fem_solves += d.record.fem_solves;
    if (d.abort) {
      report.outcome = Outcome::aborted;
      report.abort = d.abort;
      break;
    }
    for (int e = 0; e < state.commanded.size(); ++e) {
      if (state.printed(e)) continue;
      const double cmd = d.commanded.values[e].get(param);
      if (cmd != state.commanded.values[e].get(param)) est.reset(e, cmd);
      state.commanded.values[e] = d.commanded.values[e];
      state.estimated.values[e] = d.commanded.values[e];
    }
    plan = std::move(d.plan);
  }

  report.layers_printed = state.frontier;
  report.history = state.history;
  report.commanded = state.commanded;
  report.achieved = state.achieved;
  report.estimated = state.estimated;
  if (report.outcome != Outcome::aborted) {
    report.verdicts = check_all_properties(spec, state.achieved, tmpl.options.solve);
    report.fem_solves += verification_solves(spec);
    for (const auto& v : report.verdicts) {
      if (!v.pass) report.outcome = Outcome::rejected;
    }
  }
  return report;
}

}  // namespace semprint
