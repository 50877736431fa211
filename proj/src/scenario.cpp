#include "semprint/scenario.hpp"

#include <cstdio>
#include <set>
#include <sstream>

#include <json.hpp>

#include "semprint/error.hpp"
#include "semprint/io.hpp"

namespace semprint {

using nlohmann::ordered_json;

bool Scenario::operator==(const Scenario& o) const {
  return mesh == o.mesh && annotation == o.annotation && actuator.gain == o.actuator.gain &&
         actuator.drift_rate == o.actuator.drift_rate && actuator.noise_sd == o.actuator.noise_sd &&
         sensor.noise_sd == o.sensor.noise_sd && sensor.coverage == o.sensor.coverage &&
         policy.strategy == o.policy.strategy && policy.control_enabled == o.policy.control_enabled &&
         policy.compensate_actuator == o.policy.compensate_actuator && seed == o.seed &&
         layer_height == o.layer_height && objective == o.objective && granularity == o.granularity;
}

namespace {

[[noreturn]] void fail(const std::string& path, const std::string& message) {
  throw Error(ErrorCode::parse_error, "scenario: " + path + ": " + message);
}

void only_keys(const ordered_json& j, const std::string& path, std::set<std::string> allowed) {
  if (!j.is_object()) fail(path, "expected an object");
  for (const auto& [key, value] : j.items()) {
    if (!allowed.count(key)) fail(path.empty() ? key : path + "." + key, "unknown key");
  }
}

const ordered_json& required(const ordered_json& j, const std::string& key, const std::string& path) {
  if (!j.contains(key)) fail(path.empty() ? key : path + "." + key, "missing");
  return j.at(key);
}

double number(const ordered_json& j, const std::string& path) {
  if (!j.is_number()) fail(path, "expected a number");
  return j.get<double>();
}

std::string text(const ordered_json& j, const std::string& path) {
  if (!j.is_string()) fail(path, "expected a string");
  return j.get<std::string>();
}

bool flag(const ordered_json& j, const std::string& path) {
  if (!j.is_boolean()) fail(path, "expected true or false");
  return j.get<bool>();
}

std::string_view to_string(SensorCoverage c) {
  return c == SensorCoverage::newest_layer ? "newest_layer" : "all_printed";
}

template <typename F>
auto convert(const std::string& path, F&& f) {
  try {
    return f();
  } catch (const Error& e) {
    fail(path, e.what());
  }
}

}  // namespace

Scenario parse_scenario(std::string_view input) {
  const ordered_json j = parse_json(input, "scenario");
  only_keys(j, "", {"mesh", "annotation", "actuator", "sensor", "policy", "seed", "layer_height",
                    "objective", "granularity"});
  Scenario s;
  s.mesh = text(required(j, "mesh", ""), "mesh");
  s.annotation = text(required(j, "annotation", ""), "annotation");

  const ordered_json& a = required(j, "actuator", "");
  only_keys(a, "actuator", {"gain", "drift_rate", "noise_sd"});
  s.actuator.gain = number(required(a, "gain", "actuator"), "actuator.gain");
  if (a.contains("drift_rate")) s.actuator.drift_rate = number(a["drift_rate"], "actuator.drift_rate");
  if (a.contains("noise_sd")) s.actuator.noise_sd = number(a["noise_sd"], "actuator.noise_sd");
  if (!(s.actuator.gain > 0.0)) fail("actuator.gain", "must be > 0");
  if (!(s.actuator.noise_sd >= 0.0)) fail("actuator.noise_sd", "must be >= 0");

  if (j.contains("sensor")) {
    const ordered_json& sn = j["sensor"];
    only_keys(sn, "sensor", {"noise_sd", "coverage"});
    if (sn.contains("noise_sd")) s.sensor.noise_sd = number(sn["noise_sd"], "sensor.noise_sd");
    if (!(s.sensor.noise_sd >= 0.0)) fail("sensor.noise_sd", "must be >= 0");
    if (sn.contains("coverage")) {
      const std::string c = text(sn["coverage"], "sensor.coverage");
      if (c == "newest_layer") {
        s.sensor.coverage = SensorCoverage::newest_layer;
      } else if (c == "all_printed") {
        s.sensor.coverage = SensorCoverage::all_printed;
      } else {
        fail("sensor.coverage", "expected \"newest_layer\" or \"all_printed\"");
      }
    }
  }

  if (j.contains("policy")) {
    const ordered_json& p = j["policy"];
    only_keys(p, "policy", {"strategy", "control_enabled", "compensate_actuator"});
    if (p.contains("strategy")) {
      const std::string name = text(p["strategy"], "policy.strategy");
      s.policy.strategy = convert("policy.strategy", [&] { return strategy_from_string(name); });
    }
    if (p.contains("control_enabled")) s.policy.control_enabled = flag(p["control_enabled"], "policy.control_enabled");
    if (p.contains("compensate_actuator")) {
      s.policy.compensate_actuator = flag(p["compensate_actuator"], "policy.compensate_actuator");
    }
  }

  const ordered_json& seed = required(j, "seed", "");
  if (!seed.is_number_unsigned() && !(seed.is_number_integer() && seed.get<long long>() >= 0)) {
    fail("seed", "expected a non-negative integer");
  }
  s.seed = seed.get<std::uint64_t>();
  s.layer_height = number(required(j, "layer_height", ""), "layer_height");
  if (!(s.layer_height > 0.0)) fail("layer_height", "must be > 0");
  if (j.contains("objective")) {
    const std::string name = text(j["objective"], "objective");
    s.objective = convert("objective", [&] { return objective_from_string(name); });
  }
  if (j.contains("granularity")) {
    const std::string name = text(j["granularity"], "granularity");
    s.granularity = convert("granularity", [&] { return granularity_from_string(name); });
  }
  return s;
}

std::string serialize_scenario(const Scenario& s) {
  ordered_json j;
  j["mesh"] = s.mesh;
  j["annotation"] = s.annotation;
  j["actuator"] = {{"gain", s.actuator.gain},
                   {"drift_rate", s.actuator.drift_rate},
                   {"noise_sd", s.actuator.noise_sd}};
  j["sensor"] = {{"noise_sd", s.sensor.noise_sd}, {"coverage", std::string(to_string(s.sensor.coverage))}};
  j["policy"] = {{"strategy", std::string(to_string(s.policy.strategy))},
                 {"control_enabled", s.policy.control_enabled},
                 {"compensate_actuator", s.policy.compensate_actuator}};
  j["seed"] = s.seed;
  j["layer_height"] = s.layer_height;
  j["objective"] = std::string(to_string(s.objective));
  j["granularity"] = std::string(to_string(s.granularity));
  return j.dump(1) + "\n";
}

LoadedScenario load_scenario(const std::filesystem::path& path) {
  LoadedScenario out;
  out.scenario = parse_scenario(read_text_file(path));
  const std::filesystem::path dir = path.parent_path();
  const VolumetricMesh mesh = parse_mesh(read_text_file(dir / out.scenario.mesh));
  const SemanticLayer layer = parse_semantic_layer(read_text_file(dir / out.scenario.annotation));
  out.spec = std::make_shared<const BoundSpecification>(bind_to_mesh(layer, mesh));
  out.partition = layer_partition(out.spec->mesh, out.scenario.layer_height);
  return out;
}

ProblemTemplate problem_template(const LoadedScenario& loaded, const InversionOptions& options) {
  ProblemTemplate t;
  t.spec = loaded.spec;
  t.objective = loaded.scenario.objective;
  t.granularity = loaded.scenario.granularity;
  t.options = options;
  return t;
}

PrintReport simulate(const LoadedScenario& loaded, const InversionOptions& options, std::uint64_t seed) {
  const ProblemTemplate tmpl = problem_template(loaded, options);
  const OptimizationResult plan = plan_print(tmpl, loaded.partition, loaded.scenario.policy);
  if (!plan.feasible) {
    PrintReport r;
    r.outcome = Outcome::aborted;
    r.abort = AbortDecision{0, plan.violated, plan.values};
    r.plan_fem_solves = plan.fem_solves;
    return r;
  }
  return run_print(tmpl, loaded.partition, plan, loaded.scenario.actuator, loaded.scenario.sensor,
                   loaded.scenario.policy, seed);
}

namespace {

ordered_json field_values(const MaterialField& f, Parameter p) {
  ordered_json a = ordered_json::array();
  for (const auto& m : f.values) a.push_back(m.get(p));
  return a;
}

std::string format_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

}  // namespace

std::string report_to_json(const PrintReport& r, Parameter parameter, std::uint64_t seed) {
  ordered_json j;
  j["seed"] = seed;
  j["outcome"] = std::string(to_string(r.outcome));
  j["layers_printed"] = r.layers_printed;
  j["fem_solves"] = r.fem_solves;
  j["plan_fem_solves"] = r.plan_fem_solves;
  ordered_json verdicts = ordered_json::array();
  for (const auto& v : r.verdicts) {
    verdicts.push_back({{"name", v.name}, {"pass", v.pass}, {"measured", v.measured},
                        {"bound", v.bound}, {"margin", v.margin}});
  }
  j["verdicts"] = verdicts;
  if (r.abort) {
    j["abort"] = {{"layer", r.abort->layer}, {"certificate", r.abort->certificate},
                  {"best_iterate", r.abort->best_iterate}};
  } else {
    j["abort"] = nullptr;
  }
  ordered_json history = ordered_json::array();
  for (const auto& h : r.history) {
    history.push_back({{"layer", h.layer}, {"objective", h.objective},
                       {"max_violation", h.max_violation}, {"fem_solves", h.fem_solves},
                       {"strategy", h.strategy}, {"feasible", h.feasible},
                       {"next_layer_command", h.next_layer_command}});
  }
  j["history"] = history;
  j["fields"] = {{"parameter", std::string(to_string(parameter))},
                 {"commanded", field_values(r.commanded, parameter)},
                 {"achieved", field_values(r.achieved, parameter)},
                 {"estimated", field_values(r.estimated, parameter)}};
  return j.dump(1) + "\n";
}

std::string history_csv(const PrintReport& r) {
  std::ostringstream os;
  os << "layer,objective,max_violation,fem_solves,strategy,next_layer_command\n";
  for (const auto& h : r.history) {
    os << h.layer << ',' << format_double(h.objective) << ',' << format_double(h.max_violation) << ','
       << h.fem_solves << ',' << h.strategy << ',' << format_double(h.next_layer_command) << '\n';
  }
  return os.str();
}

}  // namespace semprint
