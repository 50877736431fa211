#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>

#include "semprint/printsim.hpp"

namespace semprint {

/// A seeded print simulation. Mesh and annotation paths are relative to the
/// scenario file's directory.
struct Scenario {
  std::string mesh;
  std::string annotation;
  ActuatorModel actuator;
  SensorModel sensor;
  ControlPolicy policy;
  std::uint64_t seed = 0;
  double layer_height = 1.0;
  ObjectiveKind objective = ObjectiveKind::plan_deviation;
  Granularity granularity = Granularity::layer;
  bool operator==(const Scenario& other) const;
};

Scenario parse_scenario(std::string_view text);
std::string serialize_scenario(const Scenario& scenario);

struct LoadedScenario {
  Scenario scenario;
  std::shared_ptr<const BoundSpecification> spec;
  LayerPartition partition;
};

LoadedScenario load_scenario(const std::filesystem::path& path);

ProblemTemplate problem_template(const LoadedScenario& loaded, const InversionOptions& options);

/// Plans and runs the print described by the scenario, with `seed` overriding
/// the scenario's seed.
PrintReport simulate(const LoadedScenario& loaded, const InversionOptions& options,
                     std::uint64_t seed);

std::string report_to_json(const PrintReport& report, Parameter parameter, std::uint64_t seed);
/// Columns: layer, objective, max_violation, fem_solves, strategy, next_layer_command.
std::string history_csv(const PrintReport& report);

}  // namespace semprint
