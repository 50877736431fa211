#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "semprint/optimize.hpp"
#include "semprint/semantics.hpp"

namespace semprint {

/// Simulated plant: achieved = commanded * gain * (1 + drift_rate * layer) * exp(eps),
/// eps ~ N(0, noise_sd^2), applied to the controlled parameter only.
struct ActuatorModel {
  double gain = 1.0;
  double drift_rate = 0.0;  ///< relative bias per layer
  double noise_sd = 0.0;    ///< sd of the log-normal factor
  std::uint64_t seed = 0;
};

/// Achieved value for `element` printed in `layer`. Deterministic in
/// (seed, element, layer, commanded).
double actuate(const ActuatorModel& actuator, double commanded, int layer, int element);

enum class SensorCoverage { newest_layer, all_printed };

/// Measures log(achieved) with additive Gaussian noise of sd noise_sd.
struct SensorModel {
  double noise_sd = 0.0;
  SensorCoverage coverage = SensorCoverage::newest_layer;
  std::uint64_t seed = 0;
};

/// Per-element Gaussian belief on the log of the controlled parameter.
struct EstimatorState {
  std::vector<double> mean;
  std::vector<double> variance;
  std::vector<int> measurements;
  double prior_sd = 0.2;

  /// Prior centred on the commanded values.
  static EstimatorState from_commanded(const std::vector<double>& commanded, double prior_sd);
  /// Conjugate update with a measurement y of sd `sd` (sd = 0 is exact).
  void update(int element, double y, double sd);
  /// Restarts an element's belief at the prior around `commanded`.
  void reset(int element, double commanded);
};

struct Measurement {
  int layer = 0;
  int element = 0;
  double value = 0.0;  ///< measured log-parameter
};

struct ControlRecord {
  int layer = 0;  ///< frontier after which the step ran
  double objective = 0.0;
  double max_violation = 0.0;  ///< worst relative bound excess, 0 when feasible
  int fem_solves = 0;
  std::string strategy;
  bool feasible = true;
  double next_layer_command = 0.0;  ///< mean commanded value of the next layer
};

/// Simulator state. `achieved` is ground truth and never reaches the controller.
struct PrintState {
  LayerPartition partition;
  Parameter parameter = Parameter::young;
  int frontier = 0;  ///< number of printed layers
  MaterialField commanded;
  MaterialField achieved;  ///< zero and tagged commanded above the frontier
  MaterialField estimated;
  std::vector<ControlRecord> history;
  std::vector<Measurement> log;

  int layer_count() const { return static_cast<int>(partition.layers.size()); }
  bool printed(int element) const { return partition.element_layer[element] < frontier; }
};

PrintState initial_print_state(const LayerPartition& partition, Parameter parameter,
                               const MaterialField& commanded);

/// Prints the next layer. Throws Error{print_complete} when every layer is printed.
PrintState print_layer(const PrintState& state, const ActuatorModel& actuator);

/// Measures the covered printed elements and updates the estimator and the
/// estimated field. Requires frontier >= 1.
EstimatorState observe_and_update(PrintState& state, const SensorModel& sensor,
                                  const EstimatorState& estimator);

/// What the controller may see: no achieved values.
struct ControllerView {
  const LayerPartition& partition;
  Parameter parameter;
  int frontier;
  const MaterialField& commanded;
  const MaterialField& estimated;
};

ControllerView controller_view(const PrintState& state);

enum class Granularity { element, layer };
std::string_view to_string(Granularity g);
Granularity granularity_from_string(std::string_view name);

struct ProblemTemplate {
  std::shared_ptr<const BoundSpecification> spec;
  ObjectiveKind objective = ObjectiveKind::plan_deviation;
  Granularity granularity = Granularity::layer;
  std::vector<double> reference;  ///< plan_deviation targets; empty means nominal midpoints
  InversionOptions options;
};

struct ControlPolicy {
  Strategy strategy = Strategy::warm_start;
  bool control_enabled = true;
  bool compensate_actuator = true;  ///< refit the actuator law from estimates and invert it
};

/// Inversion problem over the layers at or above `frontier`; printed elements
/// keep their values from `base`.
InversionProblem build_problem(const ProblemTemplate& tmpl, const LayerPartition& partition,
                               int frontier, const MaterialField& base);

/// Initial plan: every element free. The warm-start curvature is attached when
/// the policy asks for warm starts.
OptimizationResult plan_print(const ProblemTemplate& tmpl, const LayerPartition& partition,
                              const ControlPolicy& policy);

struct AbortDecision {
  int layer = 0;
  std::vector<std::string> certificate;
  std::vector<double> best_iterate;
};

struct ControlDecision {
  std::optional<AbortDecision> abort;
  MaterialField commanded;  ///< new commands (unchanged for printed elements)
  OptimizationResult plan;  ///< desired values behind the commands
  ControlRecord record;
};

/// Re-plans the unprinted layers from estimated values only.
ControlDecision control_step(const ControllerView& view, const ProblemTemplate& tmpl,
                             const OptimizationResult& previous_plan, const ControlPolicy& policy);

enum class Outcome { success, aborted, rejected };
std::string_view to_string(Outcome o);

struct PrintReport {
  Outcome outcome = Outcome::success;
  std::vector<PropertyVerdict> verdicts;  ///< final check under the achieved field
  std::vector<ControlRecord> history;
  std::optional<AbortDecision> abort;
  MaterialField commanded, achieved, estimated;
  int fem_solves = 0;       ///< control loop and final verification
  int plan_fem_solves = 0;  ///< initial plan
  int layers_printed = 0;
};

PrintReport run_print(const ProblemTemplate& tmpl, const LayerPartition& partition,
                      const OptimizationResult& initial_plan, ActuatorModel actuator,
                      SensorModel sensor, const ControlPolicy& policy, std::uint64_t seed);

struct TestPrintRecord {
  double commanded = 0.0;
  double measured = 0.0;
  int layer = 0;
};

/// Least-squares fit of log(measured / commanded) = log(gain) + log(1 + drift * layer).
/// noise_sd is the residual standard deviation. Needs at least two records.
ActuatorModel calibrate_actuator(const std::vector<TestPrintRecord>& records);

}  // namespace semprint
