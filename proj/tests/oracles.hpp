#pragma once

// Analytical reference problems shared by the unit tests and the acceptance run.

#include <filesystem>
#include <random>

#include <Eigen/Eigenvalues>

#include "fixtures.hpp"
#include "semprint/fem.hpp"
#include "semprint/io.hpp"
#include "semprint/scenario.hpp"

namespace semprint::testing {

struct SpectrumCheck {
  double asymmetry = 0.0;      ///< max |K - K^T| / max |K|
  double min_eigenvalue = 0.0; ///< relative to the largest
  int near_zero = 0;           ///< eigenvalues <= 1e-8 * lambda_max
};

template <typename Matrix>
SpectrumCheck spectrum(const Matrix& k) {
  SpectrumCheck s;
  s.asymmetry = (k - k.transpose()).cwiseAbs().maxCoeff() / k.cwiseAbs().maxCoeff();
  const Eigen::MatrixXd sym = 0.5 * (k + k.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sym);
  const auto& ev = eig.eigenvalues();
  const double lmax = ev.maxCoeff();
  s.min_eigenvalue = ev.minCoeff() / lmax;
  for (int i = 0; i < ev.size(); ++i) s.near_zero += std::abs(ev[i]) <= 1e-8 * lmax;
  return s;
}

/// Prescribes u = b + A x on the boundary of an n^3 box and returns the worst
/// interior nodal error relative to the largest displacement.
inline double patch_test_error(int n) {
  const auto mesh = generate_box_mesh(n, n, n, Vec3(1.0, 1.3, 0.8));
  Eigen::Matrix3d a;
  a << 1e-3, 2e-4, -3e-4, 5e-4, -7e-4, 1e-4, -2e-4, 3e-4, 9e-4;
  const Vec3 b(1e-4, -2e-4, 3e-4);
  auto exact = [&](const Vec3& x) -> Vec3 { return b + a * x; };

  ordered_json j;
  ordered_json va = ordered_json::object();
  const auto boundary = boundary_vertices(mesh);
  for (int v : boundary) {
    const Vec3 u = exact(mesh.vertices[v]);
    va[std::to_string(v)] = {{"displacement", {{"fixed", {u.x(), u.y(), u.z()}}}}};
  }
  j["vertex_annotations"] = va;
  j["element_annotations"] = {{"default", ranges(2e5, 2e5, 0.3)}};
  const auto spec = bind_spec(mesh, j.dump());
  const auto sol = solve(assemble(*spec, nominal_field(*spec), Physics::elasticity));

  std::vector<bool> on_boundary(mesh.vertex_count(), false);
  for (int v : boundary) on_boundary[v] = true;
  double err = 0.0, scale = 0.0;
  for (int v = 0; v < mesh.vertex_count(); ++v) {
    const Vec3 u = exact(mesh.vertices[v]);
    scale = std::max(scale, u.norm());
    if (!on_boundary[v]) err = std::max(err, (sol.displacement(v) - u).norm());
  }
  return err / scale;
}

struct ShaftResult {
  double mean_top_uz = 0.0;
  double oracle = 0.0;  ///< P L / (E A) with A = pi r^2
  double reaction_z = 0.0;
  double load = 0.0;
};

inline ShaftResult shaft_axial(int n_radial, int n_axial, const std::string& split = "area") {
  const double r = 1.0, length = 10.0, e = 110000.0, p = 100.0;
  const auto mesh = generate_shaft_mesh(r, length, n_radial, n_axial);
  auto j = ordered_json::parse(column_annotation(length, e, e, p, 1.0));
  j["vertex_annotations"]["top"]["force"]["split"] = split;
  const auto spec = bind_spec(mesh, j.dump());
  const auto sol = solve(assemble(*spec, nominal_field(*spec), Physics::elasticity));

  ShaftResult out;
  out.load = p;
  out.oracle = p * length / (e * std::numbers::pi * r * r);
  const auto top = vertices_on_plane(mesh, 2, length);
  for (int v : top) out.mean_top_uz += sol.displacement(v).z();
  out.mean_top_uz /= static_cast<double>(top.size());
  for (std::size_t i = 0; i < sol.reaction_dofs.size(); ++i) {
    if (sol.reaction_dofs[i] % 3 == 2) out.reaction_z += sol.reactions[i];
  }
  return out;
}

/// Uniform bar between fixed end temperatures: worst nodal deviation from the
/// linear profile, relative to the largest temperature.
inline double thermal_linear_error() {
  const double height = 3.0, t0 = 300.0, t1 = 350.0;
  const auto mesh = generate_box_mesh(2, 2, 6, Vec3(1.0, 1.0, height));
  const auto spec = bind_spec(mesh, thermal_annotation(height, t0, t1, 0.7));
  const auto sol = solve(assemble(*spec, nominal_field(*spec), Physics::conduction));
  double err = 0.0;
  for (int v = 0; v < mesh.vertex_count(); ++v) {
    const double exact = t0 + (t1 - t0) * mesh.vertices[v].z() / height;
    err = std::max(err, std::abs(sol.temperature(v) - exact));
  }
  return err / t1;
}

/// Two conductivities in series, each over half the bar: worst relative error of
/// the interface temperatures against the series-conductance value.
inline double thermal_series_error() {
  const double height = 2.0, t0 = 300.0, t1 = 400.0, k1 = 1.0, k2 = 3.0;
  const auto mesh = generate_box_mesh(1, 1, 4, Vec3(1.0, 1.0, height));
  auto j = ordered_json::parse(thermal_annotation(height, t0, t1, k1));
  for (int e = 0; e < mesh.element_count(); ++e) {
    if (centroid(mesh, e).z() > 1.0) j["element_annotations"][std::to_string(e)] = {{"conductivity", {k2, k2}}};
  }
  const auto spec = bind_spec(mesh, j.dump());
  const auto sol = solve(assemble(*spec, nominal_field(*spec), Physics::conduction));
  const double interface = (k1 * t0 + k2 * t1) / (k1 + k2);
  double err = 0.0;
  for (int v : vertices_on_plane(mesh, 2, 1.0)) err = std::max(err, std::abs(sol.temperature(v) - interface));
  return err / interface;
}

/// Two-layer column under a tip bound, bottom layer frozen at 0.8e5 MPa: the
/// stiffness the top layer needs is known in closed form.
struct SeriesBar {
  std::shared_ptr<const BoundSpecification> spec;
  LayerPartition partition;
  InversionProblem problem;
  double load = 100.0, bound = 2.1e-3, bottom = 0.8e5;

  /// Top-layer modulus at which the tip displacement equals the bound.
  double required_top(double bottom_modulus) const { return load / (bound - load / bottom_modulus); }
};

inline SeriesBar series_bar() {
  SeriesBar s;
  const auto mesh = generate_box_mesh(1, 1, 4, Vec3(1, 1, 2));
  s.spec = bind_spec(mesh, column_annotation(2.0, 1e4, 1e6, s.load, s.bound));
  s.partition = layer_partition(mesh, 1.0);
  MaterialField base(mesh.element_count(), {1e5, 0.0, 1.0, 1e-6}, Provenance::commanded);
  for (int e : s.partition.layers[0]) base.values[e].young = s.bottom;
  s.problem = make_inversion_problem(s.spec, ObjectiveKind::plan_deviation, base, s.partition.layers[0]);
  for (auto& r : s.problem.reference) r = 1e5;
  group_by_layer(s.problem, s.partition);
  return s;
}

struct BruteForce {
  double inversion = 0.0;  ///< objective found by inversion_solve
  bool inversion_feasible = false;
  double grid_best = 0.0;  ///< best feasible grid point
  int grid_feasible = 0;
};

/// Four 1 mm segments of a column, one modulus each, pulled toward uneven
/// targets under a tip bound that the targets violate. Every point of a
/// 5-per-segment grid is checked with the full FEM pipeline.
inline BruteForce brute_force_bar() {
  const auto mesh = generate_box_mesh(1, 1, 4, Vec3(1, 1, 4));
  const auto spec = bind_spec(mesh, column_annotation(4.0, 5e4, 2e5, 100.0, 3.5e-3));
  const auto partition = layer_partition(mesh, 1.0);
  auto problem = make_inversion_problem(spec, ObjectiveKind::plan_deviation, nominal_field(*spec));
  const double targets[4] = {1.8e5, 0.6e5, 1.0e5, 0.7e5};
  for (int e = 0; e < mesh.element_count(); ++e) problem.reference[e] = targets[partition.element_layer[e]];
  group_by_layer(problem, partition);

  BruteForce out;
  const auto result = inversion_solve(problem);
  out.inversion = result.objective;
  out.inversion_feasible = result.feasible;

  out.grid_best = std::numeric_limits<double>::infinity();
  Eigen::VectorXd z(4);
  const double grid[5] = {5e4, 8.75e4, 1.25e5, 1.625e5, 2e5};
  for (int i = 0; i < 625; ++i) {
    for (int k = 0, c = i; k < 4; ++k, c /= 5) z[k] = grid[c % 5];
    const MaterialField f = compose_field(problem, z);
    const auto verdicts = check_all_properties(*spec, f);
    if (!verdicts.front().pass) continue;
    ++out.grid_feasible;
    out.grid_best = std::min(out.grid_best, evaluate_objective(problem, z).value);
  }
  return out;
}


/// Prints the loop column layer by layer with every printed element re-measured
/// after each layer, and returns the fraction of (run, element) pairs whose
/// posterior mean of log E lies within three posterior standard deviations of
/// the achieved value.
inline double estimator_coverage(int runs, double actuator_sd = 0.05, double sensor_sd = 0.05) {
  const auto mesh = loop_mesh();
  const auto partition = layer_partition(mesh, 1.0);
  const MaterialField commanded(mesh.element_count(), {1.75e5, 0.0, 1.0, 1e-6}, Provenance::commanded);
  int inside = 0, total = 0;
  for (int run = 0; run < runs; ++run) {
    const ActuatorModel actuator{0.85, 0.0, actuator_sd, static_cast<std::uint64_t>(run)};
    const SensorModel sensor{sensor_sd, SensorCoverage::all_printed, static_cast<std::uint64_t>(run)};
    PrintState state = initial_print_state(partition, Parameter::young, commanded);
    std::vector<double> cmd;
    for (const auto& m : commanded.values) cmd.push_back(m.young);
    EstimatorState est = EstimatorState::from_commanded(cmd, 0.2);
    while (state.frontier < state.layer_count()) {
      state = print_layer(state, actuator);
      est = observe_and_update(state, sensor, est);
    }
    for (int e = 0; e < mesh.element_count(); ++e) {
      const double truth = std::log(state.achieved.values[e].young);
      inside += std::abs(est.mean[e] - truth) <= 3.0 * std::sqrt(est.variance[e]);
      ++total;
    }
  }
  return static_cast<double>(inside) / total;
}

/// Noise-free test prints of a drifting actuator over ten layers.
inline std::vector<TestPrintRecord> calibration_records(const ActuatorModel& truth) {
  std::vector<TestPrintRecord> records;
  for (int layer = 0; layer < 10; ++layer) {
    for (int e = 0; e < 3; ++e) {
      const double c = 1e5 + 2e4 * e;
      records.push_back({c, actuate(truth, c, layer, e), layer});
    }
  }
  return records;
}

/// Writes the closed-loop scenario (mesh, annotation, scenario) into `dir` and
/// returns the scenario path.
inline std::filesystem::path write_loop_scenario(const std::filesystem::path& dir, bool control_enabled,
                                                 std::uint64_t seed = 42) {
  std::filesystem::create_directories(dir);
  write_text_file(dir / "column.mesh.json", serialize_mesh(loop_mesh()));
  write_text_file(dir / "column.annotation.json", loop_annotation());
  Scenario s;
  s.mesh = "column.mesh.json";
  s.annotation = "column.annotation.json";
  s.actuator = {0.85, 0.0, 0.02, 0};
  s.sensor = {0.01, SensorCoverage::newest_layer, 0};
  s.policy.control_enabled = control_enabled;
  s.seed = seed;
  s.layer_height = 1.0;
  const auto path = dir / (control_enabled ? "closed_loop.json" : "open_loop.json");
  write_text_file(path, serialize_scenario(s));
  return path;
}

/// Random convex quadratic over (y, z), |y| = 3, |z| = 4: distance between the
/// warm-start update and the exact re-minimizer after a frozen-part move.
inline double warm_start_quadratic_error(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::MatrixXd b(7, 7);
  for (int i = 0; i < 49; ++i) b.data()[i] = n(rng);
  const Eigen::MatrixXd h = b * b.transpose() + Eigen::MatrixXd::Identity(7, 7);
  Eigen::VectorXd c(7), y0(3), dy(3);
  for (auto& v : c) v = n(rng);
  for (auto& v : y0) v = n(rng);
  for (auto& v : dy) v = 0.1 * n(rng);
  const SmoothFunction f = [&](const Eigen::VectorXd& x) {
    return ValueGradient{0.5 * x.dot(h * x) + c.dot(x), h * x + c};
  };
  auto argmin_z = [&](const Eigen::VectorXd& y) -> Eigen::VectorXd {
    return h.bottomRightCorner(4, 4).llt().solve(-(h.bottomLeftCorner(4, 3) * y + c.tail(4)));
  };
  const Eigen::VectorXd z0 = argmin_z(y0);
  const auto model = build_quadratic_model(f, y0, z0, Eigen::VectorXd::Constant(3, 1e-3),
                                           Eigen::VectorXd::Constant(4, 1e-3), 1e-9);
  const Eigen::VectorXd warm = z0 + warm_start_update(model, dy);
  return (warm - argmin_z(y0 + dy)).norm() / std::max(1.0, argmin_z(y0 + dy).norm());
}

/// f = 0.5 (z - sin y)^2 + 0.25 z^4 + 0.1 y^2 around y0 = 0.5, where the exact
/// re-minimizer solves z + z^3 = sin y. Returns the warm-start error for each move.
inline std::vector<double> warm_start_smooth_errors(const std::vector<double>& moves) {
  const SmoothFunction f = [](const Eigen::VectorXd& x) {
    const double y = x[0], z = x[1], r = z - std::sin(y);
    return ValueGradient{0.5 * r * r + 0.25 * z * z * z * z + 0.1 * y * y,
                         Eigen::Vector2d(-r * std::cos(y) + 0.2 * y, r + z * z * z)};
  };
  auto zstar = [](double y) {
    double z = std::sin(y);
    for (int i = 0; i < 100; ++i) z -= (z + z * z * z - std::sin(y)) / (1 + 3 * z * z);
    return z;
  };
  const double y0 = 0.5;
  const auto m = build_quadratic_model(f, Eigen::VectorXd::Constant(1, y0), Eigen::VectorXd::Constant(1, zstar(y0)),
                                       Eigen::VectorXd::Constant(1, 1e-4), Eigen::VectorXd::Constant(1, 1e-4), 1e-12);
  std::vector<double> errors;
  for (double dy : moves) {
    const double warm = zstar(y0) + warm_start_update(m, Eigen::VectorXd::Constant(1, dy))[0];
    errors.push_back(std::abs(warm - zstar(y0 + dy)));
  }
  return errors;
}

}  // namespace semprint::testing
