// Acceptance run: one [PASS]/[FAIL] line per criterion, nonzero exit if any fails.

#include <unistd.h>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>

#include "cli.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"
#include "semprint/io.hpp"
#include "semprint/scenario.hpp"

namespace fs = std::filesystem;
using namespace semprint;
using namespace semprint::testing;

namespace {

struct Check {
  bool pass = true;
  std::string detail;
  void require(bool ok, const std::string& what) {
    if (!ok) pass = false;
    if (!detail.empty()) detail += "; ";
    detail += what + (ok ? "" : " [violated]");
  }
};

std::string num(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", x);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

int cli(const std::vector<std::string>& args) {
  std::vector<const char*> argv{"semprint"};
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  return run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
}

// 1 ---------------------------------------------------------------------------
Check element_correctness() {
  Check o;
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(2024);
  double asym = 0.0, min_ev = 1.0;
  int bad_e = 0, bad_c = 0;
  for (int i = 0; i < 100; ++i) {
    const auto x = random_tet(rng);
    const auto se = spectrum(element_stiffness(x, 1e5, 0.3));
    const auto sc = spectrum(element_conductance(x, 1.7));
    asym = std::max({asym, se.asymmetry, sc.asymmetry});
    min_ev = std::min({min_ev, se.min_eigenvalue, sc.min_eigenvalue});
    bad_e += se.near_zero != 6;
    bad_c += sc.near_zero != 1;
  }
  const double t = seconds_since(t0);
  o.require(asym <= 1e-12, "asymmetry " + num(asym));
  o.require(min_ev >= -1e-12, "min eigenvalue/max " + num(min_ev));
  o.require(bad_e == 0, std::to_string(100 - bad_e) + "/100 elasticity with 6 zero modes");
  o.require(bad_c == 0, std::to_string(100 - bad_c) + "/100 conduction with 1 zero mode");
  o.require(t < 1.0, "time " + num(t) + " s");
  return o;
}

// 2 ---------------------------------------------------------------------------
Check patch_test() {
  Check o;
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0;
  for (int n = 1; n <= 5; ++n) worst = std::max(worst, patch_test_error(n));
  const double t = seconds_since(t0);
  o.require(worst <= 1e-8, "worst interior error " + num(worst) + " (n=1..5)");
  o.require(t < 10.0, "time " + num(t) + " s");
  return o;
}

// 3 ---------------------------------------------------------------------------
Check shaft_oracle() {
  Check o;
  const auto t0 = std::chrono::steady_clock::now();
  const auto r = shaft_axial(32, 10);
  const double t = seconds_since(t0);
  const double err = rel_diff(r.mean_top_uz, r.oracle);
  const double reaction = std::abs(r.reaction_z + r.load) / r.load;
  o.require(err <= 0.05, "mean tip " + num(r.mean_top_uz) + " vs PL/EA " + num(r.oracle) + ", error " + num(err));
  o.require(reaction <= 1e-8, "reaction sum error " + num(reaction));
  o.require(t < 30.0, "time " + num(t) + " s");
  return o;
}

// 4 ---------------------------------------------------------------------------
Check thermal_exactness() {
  Check o;
  const double lin = thermal_linear_error(), ser = thermal_series_error();
  o.require(lin <= 1e-10, "linear profile error " + num(lin));
  o.require(ser <= 1e-8, "series interface error " + num(ser));
  return o;
}

// 5 ---------------------------------------------------------------------------
Check gradient_check() {
  Check o;
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst = 0.0;
  int elements = 0;
  for (int trial = 0; trial < 10; ++trial) {
    const int nz = 1 + trial % 5;
    const Vec3 dims(0.5 + u(rng), 0.5 + u(rng), nz * (0.5 + u(rng)));
    const auto mesh = generate_box_mesh(1, 1, nz, dims);
    elements = std::max(elements, mesh.element_count());
    auto j = ordered_json::parse(column_annotation(dims.z(), 5e4, 2e5, 100.0, 1.0));
    j["vertex_annotations"]["top"]["force"]["total"] = {100 * (u(rng) - 0.5), 100 * (u(rng) - 0.5), 100 * u(rng) + 10};
    j["element_annotations"]["default"]["poisson"] = {0.35 * u(rng), 0.35 * u(rng)};
    j["element_annotations"]["default"]["poisson"][1] = j["element_annotations"]["default"]["poisson"][0];
    const auto spec = bind_spec(mesh, j.dump());
    const auto problem = make_inversion_problem(spec, ObjectiveKind::compliance, nominal_field(*spec));
    Eigen::VectorXd z(problem.group_count());
    for (auto& v : z) v = 5e4 + 1.5e5 * u(rng);
    const auto adj = evaluate_objective(problem, z);
    Eigen::VectorXd fd(z.size());
    for (int i = 0; i < z.size(); ++i) {
      const double h = 1e-5 * z[i];
      Eigen::VectorXd zp = z, zm = z;
      zp[i] += h;
      zm[i] -= h;
      fd[i] = (evaluate_objective(problem, zp).value - evaluate_objective(problem, zm).value) / (2 * h);
    }
    worst = std::max(worst, (adj.gradient - fd).norm() / fd.norm());
  }
  const double t = seconds_since(t0);
  o.require(worst <= 1e-4, "worst relative gradient error " + num(worst) + " over 10 problems of <= " +
                               std::to_string(elements) + " elements");
  o.require(t < 60.0, "time " + num(t) + " s");
  return o;
}

// 6 ---------------------------------------------------------------------------
Check warm_start() {
  Check o;
  double quad = 0.0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) quad = std::max(quad, warm_start_quadratic_error(seed));
  o.require(quad <= 1e-10, "quadratic warm vs exact " + num(quad));

  const auto err = warm_start_smooth_errors({0.2, 0.1, 0.05});
  const double r1 = err[0] / err[1], r2 = err[1] / err[2];
  o.require(r1 >= 3.0 && r2 >= 3.0, "error ratios on halving " + num(r1) + ", " + num(r2));

  auto bar = series_bar();
  auto base = inversion_solve(bar.problem);
  attach_curvature(bar.problem, base);
  const Eigen::VectorXd dy = Eigen::VectorXd::Constant(bar.partition.layers[0].size(), -0.01 * bar.bottom);
  const auto warm = reoptimize_after_drift(bar.problem, base, dy, Strategy::warm_start);
  const auto full = reoptimize_after_drift(bar.problem, base, dy, Strategy::full);
  o.require(warm.strategy_used == "warm_start" && warm.feasible, "series bar warm path " + warm.strategy_used);
  o.require(warm.fem_solves < full.fem_solves, "FEM solves warm " + std::to_string(warm.fem_solves) + " < full " +
                                                   std::to_string(full.fem_solves));
  return o;
}

// 7 ---------------------------------------------------------------------------
Check brute_force() {
  Check o;
  const auto bf = brute_force_bar();
  o.require(bf.inversion_feasible, "inversion feasible");
  o.require(bf.grid_feasible > 0, std::to_string(bf.grid_feasible) + "/625 grid points feasible");
  o.require(bf.inversion <= bf.grid_best + 1e-6,
            "inversion " + num(bf.inversion) + " vs grid optimum " + num(bf.grid_best));
  return o;
}

// 8 ---------------------------------------------------------------------------
Check closed_loop(const fs::path& work) {
  Check o;
  const auto open = write_loop_scenario(work / "loop", false);
  const auto closed = write_loop_scenario(work / "loop", true);
  const int open_code = cli({"simulate", open.string(), "-o", (work / "open1").string()});
  const int closed_code = cli({"simulate", closed.string(), "-o", (work / "closed1").string()});
  cli({"simulate", open.string(), "-o", (work / "open2").string()});
  cli({"simulate", closed.string(), "-o", (work / "closed2").string()});
  o.require(open_code == 1, "control disabled exits " + std::to_string(open_code));
  o.require(closed_code == 0, "control enabled exits " + std::to_string(closed_code));

  const auto loaded = load_scenario(closed);
  const auto plan = plan_print(problem_template(loaded, {}), loaded.partition, loaded.scenario.policy);
  double planned = 0.0, commanded = 0.0;
  for (double v : plan.values) planned = std::max(planned, v);
  std::istringstream csv(read_text_file(work / "closed1" / "history.csv"));
  std::string line;
  std::getline(csv, line);
  while (std::getline(csv, line)) commanded = std::max(commanded, std::stod(line.substr(line.rfind(',') + 1)));
  o.require(commanded > 1.1 * planned, "peak next-layer command " + num(commanded) + " vs plan " + num(planned));

  bool identical = true;
  for (const char* f : {"report.json", "history.csv"}) {
    identical &= read_text_file(work / "closed1" / f) == read_text_file(work / "closed2" / f);
    identical &= read_text_file(work / "open1" / f) == read_text_file(work / "open2" / f);
  }
  o.require(identical, "repeated runs byte-identical");
  return o;
}

// 9 ---------------------------------------------------------------------------
Check estimator_consistency() {
  Check o;
  const double coverage = estimator_coverage(1000);
  o.require(coverage >= 0.99, "within 3 sd: " + num(100 * coverage) + "%");
  const ActuatorModel truth{0.85, 0.012, 0.0, 5};
  const auto fit = calibrate_actuator(calibration_records(truth));
  const double eg = std::abs(fit.gain - truth.gain), ed = std::abs(fit.drift_rate - truth.drift_rate);
  o.require(eg <= 1e-9 && ed <= 1e-9, "calibration error gain " + num(eg) + ", drift " + num(ed));
  return o;
}

// 10 --------------------------------------------------------------------------
Check round_trips() {
  Check o;
  const auto mesh = generate_shaft_mesh(1.0, 10.0, 11, 4);
  const auto m1 = parse_mesh(serialize_mesh(mesh));
  o.require(m1 == mesh && parse_mesh(serialize_mesh(m1)) == m1, "mesh");

  auto j = ordered_json::parse(column_annotation(10.0, 1e5, 1.2e5, 100.0, 1e-2));
  j["vertex_sets"]["probe"] = {{"ids", {3, 40, 57}}};
  j["vertex_annotations"]["probe"] = {{"temperature", {{"fixed", 300.0}}}};
  j["vertex_annotations"]["5"] = {{"heat", 0.25}};
  j["element_annotations"]["default"]["conductivity"] = {0.5, 1.5};
  j["element_annotations"]["12"] = {{"young", {1.1e5, 1.15e5}}};
  j["global_properties"].push_back({{"name", "mass"}, {"kind", "mass"}, {"bound", 1.0}});
  j["global_properties"].push_back({{"name", "hot"}, {"kind", "max_temperature"}, {"bound", 400.0},
                                    {"vertices", {3, 40, 5}}});
  j["global_properties"].push_back({{"name", "avg"}, {"kind", "average_temperature"}, {"bound", 350.0}});
  j["field_regularity"] = {{"gamma", 1e4}, {"parameter", "young"}};
  const SemanticLayer layer = parse_semantic_layer(j.dump());
  const SemanticLayer l1 = parse_semantic_layer(serialize_semantic_layer(layer));
  o.require(l1 == layer && parse_semantic_layer(serialize_semantic_layer(l1)) == l1, "annotation");

  Scenario s;
  s.mesh = "m.json";
  s.annotation = "a.json";
  s.actuator = {0.9, 0.003, 0.01, 0};
  s.sensor = {0.02, SensorCoverage::all_printed, 0};
  s.policy = {Strategy::full, true, false};
  s.seed = 123456789012345ULL;
  s.layer_height = 0.25;
  s.objective = ObjectiveKind::compliance;
  s.granularity = Granularity::element;
  const Scenario s1 = parse_scenario(serialize_scenario(s));
  o.require(s1 == s && parse_scenario(serialize_scenario(s1)) == s1, "scenario");

  const auto spec = bind_to_mesh(layer, mesh);
  const auto base = check_all_properties(spec, nominal_field(spec));
  std::vector<int> perm(mesh.vertex_count());
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 rng(99);
  bool invariant = true;
  double worst = 0.0;
  for (int trial = 0; trial < 5; ++trial) {
    std::shuffle(perm.begin(), perm.end(), rng);
    const auto spec2 = bind_to_mesh(relabel_vertices(layer, perm), relabel_vertices(mesh, perm));
    const auto other = check_all_properties(spec2, nominal_field(spec2));
    invariant &= other.size() == base.size();
    for (std::size_t i = 0; invariant && i < base.size(); ++i) {
      invariant &= other[i].name == base[i].name && other[i].pass == base[i].pass;
      worst = std::max(worst, std::abs(other[i].measured - base[i].measured) / std::max(1e-300, std::abs(base[i].measured)));
    }
  }
  o.require(invariant && worst <= 1e-9, "verdicts under 5 relabelings, worst measured change " + num(worst));
  return o;
}

}  // namespace

int main() {
  const fs::path work = fs::temp_directory_path() / ("semprint_acceptance_" + std::to_string(::getpid()));
  fs::create_directories(work);
  const std::vector<std::pair<std::string, std::function<Check()>>> criteria{
      {"element correctness", element_correctness},
      {"patch test", patch_test},
      {"shaft axial oracle", shaft_oracle},
      {"thermal exactness", thermal_exactness},
      {"adjoint gradient check", gradient_check},
      {"warm-start exactness and order", warm_start},
      {"brute-force inversion oracle", brute_force},
      {"closed-loop scenario", [&] { return closed_loop(work); }},
      {"estimator consistency and calibration", estimator_consistency},
      {"format round-trips and relabeling invariance", round_trips},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Check o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    failed += !o.pass;
    std::printf("[%s] %zu. %s: %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  fs::remove_all(work);
  std::printf("%zu/%zu criteria passed\n", criteria.size() - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
