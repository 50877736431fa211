#include "cli.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/sinks/ostream_sink.h>
#include <spdlog/spdlog.h>

#include "semprint/error.hpp"
#include "semprint/fem.hpp"
#include "semprint/io.hpp"
#include "semprint/mesh.hpp"
#include "semprint/optimize.hpp"
#include "semprint/scenario.hpp"
#include "semprint/semantics.hpp"

namespace semprint {

namespace {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

struct Globals {
  double tol = 1e-8;
  int max_iter = 2000;
  std::string log_level = "warn";
};

struct Context {
  std::ostream& out;
  std::ostream& err;
  std::shared_ptr<spdlog::logger> log;
  InversionOptions options() const {
    InversionOptions o;
    o.tol = globals.tol;
    o.max_iter = globals.max_iter;
    return o;
  }
  Globals globals;
};

std::string fmt_num(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", x);
  return buf;
}

// ---------------------------------------------------------------- gen-mesh

struct GenMeshArgs {
  std::string shape;
  double radius = 1.0, height = 10.0;
  int n_radial = 16, n_axial = 10;
  int nx = 2, ny = 2, nz = 2;
  std::vector<double> size{1.0, 1.0, 1.0};
  std::string output;
  std::string annotation_template;
};

std::string annotation_template(double top_z) {
  ordered_json j;
  j["units"] = {{"length", "mm"}, {"force", "N"}, {"stress", "MPa"}};
  j["vertex_sets"] = {{"base", {{"plane", {{"axis", "z"}, {"value", 0.0}}}}},
                      {"top", {{"plane", {{"axis", "z"}, {"value", top_z}}}}}};
  j["vertex_annotations"] = {
      {"base", {{"displacement", "fixed"}, {"force", "free"}}},
      {"top", {{"force", {{"total", {0.0, 0.0, -100.0}}, {"split", "equal"}}}}}};
  j["element_annotations"] = {{"default",
                               {{"young", {100000.0, 120000.0}},
                                {"poisson", {0.3, 0.3}},
                                {"conductivity", {0.02, 0.02}},
                                {"density", {4.4e-6, 4.4e-6}}}}};
  j["global_properties"] = ordered_json::array(
      {{{"name", "tip_displacement"}, {"kind", "max_displacement"}, {"bound", 1e-2}, {"vertices", "top"}}});
  return j.dump(1) + "\n";
}

int cmd_gen_mesh(const GenMeshArgs& a, Context& ctx) {
  auto positive = [](double v, const char* flag) {
    if (!(v > 0.0)) throw Error(ErrorCode::invalid_argument, std::string(flag) + " must be > 0");
  };
  VolumetricMesh mesh;
  double top = 0.0;
  if (a.shape == "shaft") {
    positive(a.radius, "--radius");
    positive(a.height, "--height");
    if (a.n_radial < 3) throw Error(ErrorCode::invalid_argument, "--n-radial must be >= 3");
    if (a.n_axial < 1) throw Error(ErrorCode::invalid_argument, "--n-axial must be >= 1");
    mesh = generate_shaft_mesh(a.radius, a.height, a.n_radial, a.n_axial);
    top = a.height;
  } else {
    if (a.nx < 1) throw Error(ErrorCode::invalid_argument, "--nx must be >= 1");
    if (a.ny < 1) throw Error(ErrorCode::invalid_argument, "--ny must be >= 1");
    if (a.nz < 1) throw Error(ErrorCode::invalid_argument, "--nz must be >= 1");
    if (a.size.size() != 3) throw Error(ErrorCode::invalid_argument, "--size takes three lengths");
    for (double s : a.size) positive(s, "--size");
    mesh = generate_box_mesh(a.nx, a.ny, a.nz, Vec3(a.size[0], a.size[1], a.size[2]));
    top = a.size[2];
  }
  const ValidationReport report = validate_mesh(mesh);
  if (!report.empty()) {
    throw Error(ErrorCode::model_invalid, "generated mesh is invalid: " + report.front().message);
  }
  write_text_file(a.output, serialize_mesh(mesh));
  ctx.log->info("wrote {} vertices, {} tets to {}", mesh.vertex_count(), mesh.element_count(), a.output);
  if (!a.annotation_template.empty()) write_text_file(a.annotation_template, annotation_template(top));
  ctx.out << "mesh: " << mesh.vertex_count() << " vertices, " << mesh.element_count()
          << " tetrahedra -> " << a.output << "\n";
  return kExitPass;
}

// ------------------------------------------------------------------ verify

struct SpecArgs {
  std::string mesh, annotation;
};

std::shared_ptr<const BoundSpecification> load_spec(const SpecArgs& a) {
  const VolumetricMesh mesh = parse_mesh(read_text_file(a.mesh));
  const SemanticLayer layer = parse_semantic_layer(read_text_file(a.annotation));
  return std::make_shared<const BoundSpecification>(bind_to_mesh(layer, mesh));
}

void print_verdicts(std::ostream& out, const BoundSpecification& spec,
                    const std::vector<PropertyVerdict>& verdicts) {
  std::size_t width = 8;
  for (const auto& v : verdicts) width = std::max(width, v.name.size());
  auto pad = [](std::string s, std::size_t w) {
    s.resize(std::max(s.size(), w), ' ');
    return s;
  };
  out << pad("property", width) << "  " << pad("category", 18) << "  " << pad("measured", 13) << "  "
      << pad("bound", 13) << "  " << pad("margin", 13) << "  verdict\n";
  for (const auto& v : verdicts) {
    std::string category = "material_dependent";
    for (const auto& rp : spec.properties) {
      if (rp.spec.name == v.name && rp.spec.category == PropertyCategory::direct) category = "direct";
    }
    out << pad(v.name, width) << "  " << pad(category, 18) << "  " << pad(fmt_num(v.measured), 13) << "  "
        << pad(fmt_num(v.bound), 13) << "  " << pad(fmt_num(v.margin), 13) << "  "
        << (v.pass ? "PASS" : "FAIL") << "\n";
  }
}

int cmd_verify(const SpecArgs& a, const std::string& field_path, bool nominal, Context& ctx) {
  const auto spec = load_spec(a);
  MaterialField field;
  if (!field_path.empty()) {
    field = parse_material_field(read_text_file(field_path));
  } else {
    (void)nominal;
    field = nominal_field(*spec);
  }
  const auto violations = range_violations(*spec, field);
  for (const auto& v : violations) {
    ctx.log->warn("element {} {} = {} outside [{}, {}]", v.element, to_string(v.parameter), v.value,
                  v.range.min, v.range.max);
  }
  SolveOptions solve;
  const auto verdicts = check_all_properties(*spec, field, solve);
  print_verdicts(ctx.out, *spec, verdicts);
  const bool pass = std::all_of(verdicts.begin(), verdicts.end(), [](const auto& v) { return v.pass; });
  ctx.out << (pass ? "all properties pass" : "specification FAILED") << "\n";
  return pass ? kExitPass : kExitSpecFail;
}

// ---------------------------------------------------------------- optimize

struct OptimizeArgs {
  std::string objective = "compliance";
  std::string field;  // frozen values come from here
  int frozen_layers = 0;
  double layer_height = 1.0;
  std::string granularity = "element";
  std::string output;
  std::string trace;
};

int cmd_optimize(const SpecArgs& s, const OptimizeArgs& a, Context& ctx) {
  const auto spec = load_spec(s);
  ProblemTemplate tmpl;
  tmpl.spec = spec;
  tmpl.objective = objective_from_string(a.objective);
  tmpl.granularity = granularity_from_string(a.granularity);
  tmpl.options = ctx.options();
  if (!(a.layer_height > 0.0)) throw Error(ErrorCode::invalid_argument, "--layer-height must be > 0");
  const LayerPartition partition = layer_partition(spec->mesh, a.layer_height);
  if (a.frozen_layers < 0 || a.frozen_layers > partition.layer_count()) {
    throw Error(ErrorCode::invalid_argument, "--frozen-layers must lie in [0, " +
                                                 std::to_string(partition.layer_count()) + "]");
  }
  const MaterialField base = a.field.empty() ? nominal_field(*spec) : parse_material_field(read_text_file(a.field));
  const InversionProblem problem = build_problem(tmpl, partition, a.frozen_layers, base);
  const OptimizationResult r = inversion_solve(problem, tmpl.options);

  if (!a.trace.empty()) write_text_file(a.trace, trace_to_jsonl(r.trace));
  MaterialField out = base;
  for (int e = 0; e < out.size(); ++e) out.values[e].set(problem.parameter, r.values[e]);
  if (!a.output.empty()) write_text_file(a.output, serialize_material_field(out));

  ctx.out << "objective " << to_string(tmpl.objective) << " = " << fmt_num(r.objective) << " after "
          << r.trace.size() << " iterations, " << r.fem_solves << " FEM solves\n";
  print_verdicts(ctx.out, *spec, r.verdicts);
  if (!r.feasible) {
    ctx.out << "infeasible; violated:";
    for (const auto& name : r.violated) ctx.out << " " << name;
    ctx.out << "\n";
    return kExitSpecFail;
  }
  return kExitPass;
}

// ---------------------------------------------------------------- simulate

std::pair<std::uint64_t, std::uint64_t> parse_seed_range(const std::string& text) {
  const auto dots = text.find("..");
  try {
    if (dots == std::string::npos) {
      const std::uint64_t s = std::stoull(text);
      return {s, s};
    }
    const std::uint64_t a = std::stoull(text.substr(0, dots));
    const std::uint64_t b = std::stoull(text.substr(dots + 2));
    if (b < a) throw Error(ErrorCode::invalid_argument, "--seeds range is empty: " + text);
    return {a, b};
  } catch (const std::logic_error&) {
    throw Error(ErrorCode::invalid_argument, "--seeds expects N or A..B, got '" + text + "'");
  }
}

int cmd_simulate(const std::string& scenario_path, const std::string& out_dir, const std::string& seeds,
                 Context& ctx) {
  const LoadedScenario loaded = load_scenario(scenario_path);
  std::uint64_t first = loaded.scenario.seed, last = loaded.scenario.seed;
  if (!seeds.empty()) std::tie(first, last) = parse_seed_range(seeds);
  fs::create_directories(out_dir);
  const Parameter param = default_parameter(loaded.scenario.objective);
  const bool many = first != last;
  bool all_ok = true;
  std::ostringstream summary;
  summary << "seed,outcome,layers_printed,fem_solves\n";
  for (std::uint64_t seed = first;; ++seed) {
    const PrintReport r = simulate(loaded, ctx.options(), seed);
    const std::string suffix = many ? "_seed" + std::to_string(seed) : "";
    write_text_file(fs::path(out_dir) / ("report" + suffix + ".json"), report_to_json(r, param, seed));
    write_text_file(fs::path(out_dir) / ("history" + suffix + ".csv"), history_csv(r));
    summary << seed << ',' << to_string(r.outcome) << ',' << r.layers_printed << ',' << r.fem_solves << '\n';
    ctx.out << "seed " << seed << ": " << to_string(r.outcome) << " (" << r.layers_printed << " layers, "
            << r.fem_solves << " FEM solves)\n";
    if (r.abort) {
      ctx.out << "  aborted after layer " << r.abort->layer << "; violated:";
      for (const auto& name : r.abort->certificate) ctx.out << " " << name;
      ctx.out << "\n";
    }
    for (const auto& v : r.verdicts) {
      if (!v.pass) ctx.out << "  final check failed: " << v.name << " = " << fmt_num(v.measured) << "\n";
    }
    all_ok = all_ok && r.outcome == Outcome::success;
    if (seed == last) break;
  }
  if (many) write_text_file(fs::path(out_dir) / "summary.csv", summary.str());
  return all_ok ? kExitPass : kExitSpecFail;
}

// ------------------------------------------------------------------ report

std::string svg_plot(const std::vector<double>& ys, const std::string& title, const std::string& ylabel) {
  const double w = 480, h = 320, m = 50;
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << w / 2 << "\" y=\"20\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">"
     << title << "</text>\n";
  os << "<text x=\"12\" y=\"" << h / 2 << "\" font-family=\"sans-serif\" font-size=\"11\" transform=\"rotate(-90 12 "
     << h / 2 << ")\" text-anchor=\"middle\">" << ylabel << "</text>\n";
  os << "<line x1=\"" << m << "\" y1=\"" << h - m << "\" x2=\"" << w - 10 << "\" y2=\"" << h - m
     << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << m << "\" y1=\"" << 30 << "\" x2=\"" << m << "\" y2=\"" << h - m << "\" stroke=\"black\"/>\n";
  if (!ys.empty()) {
    const auto [lo_it, hi_it] = std::minmax_element(ys.begin(), ys.end());
    double lo = *lo_it, hi = *hi_it;
    if (hi == lo) {
      hi += 0.5 * (std::abs(hi) + 1.0);
      lo -= 0.5 * (std::abs(lo) + 1.0);
    }
    const double span = ys.size() > 1 ? static_cast<double>(ys.size() - 1) : 1.0;
    os << "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < ys.size(); ++i) {
      const double x = m + (w - 10 - m) * static_cast<double>(i) / span;
      const double y = (h - m) - (h - m - 30) * (ys[i] - lo) / (hi - lo);
      os << fmt_num(x) << "," << fmt_num(y) << (i + 1 < ys.size() ? " " : "");
    }
    os << "\"/>\n";
    os << "<text x=\"" << m - 4 << "\" y=\"" << h - m << "\" text-anchor=\"end\" font-family=\"sans-serif\" "
          "font-size=\"10\">" << fmt_num(lo) << "</text>\n";
    os << "<text x=\"" << m - 4 << "\" y=\"36\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">"
       << fmt_num(hi) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

int cmd_report(const std::string& input, const std::string& svg, Context& ctx) {
  const std::string text = read_text_file(input);
  std::vector<double> series;
  std::string title, ylabel;
  const auto first = text.find_first_not_of(" \t\r\n");
  bool is_report = false;
  if (first != std::string::npos && text[first] == '{') {
    const auto nl = text.find('\n', first);
    const std::string head = text.substr(first, nl == std::string::npos ? std::string::npos : nl - first);
    // A trace has one complete object per line; a report spans many lines.
    is_report = head.find('}') == std::string::npos;
  }
  if (is_report) {
    const ordered_json r = parse_json(text, "report");
    if (!r.contains("outcome") || !r.contains("history")) {
      throw Error(ErrorCode::parse_error, "report: not a print report (missing \"outcome\")");
    }
    ctx.out << "outcome: " << r["outcome"].get<std::string>() << "  layers printed: " << r.value("layers_printed", 0)
            << "  FEM solves: " << r.value("fem_solves", 0) << " (+" << r.value("plan_fem_solves", 0)
            << " planning)\n\n";
    ctx.out << "layer  objective      max_violation  fem_solves  strategy       next_layer_command\n";
    for (const auto& h : r["history"]) {
      char line[160];
      std::snprintf(line, sizeof line, "%5d  %-13s  %-13s  %10d  %-13s  %s\n", h["layer"].get<int>(),
                    fmt_num(h["objective"].get<double>()).c_str(),
                    fmt_num(h["max_violation"].get<double>()).c_str(), h["fem_solves"].get<int>(),
                    h["strategy"].get<std::string>().c_str(),
                    fmt_num(h["next_layer_command"].get<double>()).c_str());
      ctx.out << line;
      series.push_back(h["objective"].get<double>());
    }
    if (!r["verdicts"].empty()) {
      ctx.out << "\nfinal verification (achieved field):\n";
      for (const auto& v : r["verdicts"]) {
        ctx.out << "  " << v["name"].get<std::string>() << ": measured " << fmt_num(v["measured"].get<double>())
                << ", bound " << fmt_num(v["bound"].get<double>()) << " -> "
                << (v["pass"].get<bool>() ? "PASS" : "FAIL") << "\n";
      }
    }
    if (!r["abort"].is_null()) {
      ctx.out << "\naborted after layer " << r["abort"]["layer"].get<int>() << "; violated:";
      for (const auto& c : r["abort"]["certificate"]) ctx.out << " " << c.get<std::string>();
      ctx.out << "\n";
    }
    title = "objective per control step";
    ylabel = "objective";
  } else {
    ctx.out << " iter  objective      merit          max_violation  step_norm\n";
    std::istringstream lines(text);
    std::string line;
    int lineno = 0;
    while (std::getline(lines, line)) {
      ++lineno;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      const ordered_json t = parse_json(line, "trace line " + std::to_string(lineno));
      char buf[160];
      std::snprintf(buf, sizeof buf, "%5d  %-13s  %-13s  %-13s  %s\n", t.value("iter", 0),
                    fmt_num(t.value("objective", 0.0)).c_str(), fmt_num(t.value("merit", 0.0)).c_str(),
                    fmt_num(t.value("max_violation", 0.0)).c_str(), fmt_num(t.value("step_norm", 0.0)).c_str());
      ctx.out << buf;
      series.push_back(t.value("objective", 0.0));
    }
    title = "convergence";
    ylabel = "objective";
  }
  if (!svg.empty()) write_text_file(svg, svg_plot(series, title, ylabel));
  return kExitPass;
}

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::solver_failure:
    case ErrorCode::model_invalid:
      return kExitNumerical;
    default:
      return kExitUsage;
  }
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  Context ctx{out, err, nullptr, {}};
  auto sink = std::make_shared<spdlog::sinks::ostream_sink_mt>(err);
  sink->set_pattern("semprint: [%l] %v");
  ctx.log = std::make_shared<spdlog::logger>("semprint", sink);

  CLI::App app{"Semantic 3D-printing verification, inversion and closed-loop print simulation"};
  app.set_config("--config", "", "TOML/INI file whose keys mirror the command-line flags");
  app.option_defaults()->always_capture_default();
  app.add_option("--tol", ctx.globals.tol, "Projected-gradient tolerance of the optimizer")
      ->check(CLI::PositiveNumber);
  app.add_option("--max-iter", ctx.globals.max_iter, "Iteration limit of the optimizer")
      ->check(CLI::PositiveNumber);
  app.add_option("--log-level", ctx.globals.log_level, "trace|debug|info|warn|error|off")
      ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "off"}));
  app.require_subcommand(1);

  GenMeshArgs gm;
  auto* gen = app.add_subcommand("gen-mesh", "Generate a box or shaft tetrahedral mesh");
  gen->add_option("shape", gm.shape, "box | shaft")->required()->check(CLI::IsMember({"box", "shaft"}));
  gen->add_option("--radius", gm.radius, "Shaft radius, mm");
  gen->add_option("--height", gm.height, "Shaft height, mm");
  gen->add_option("--n-radial", gm.n_radial, "Shaft polygon sides");
  gen->add_option("--n-axial", gm.n_axial, "Shaft axial slabs");
  gen->add_option("--nx", gm.nx, "Box cells along x");
  gen->add_option("--ny", gm.ny, "Box cells along y");
  gen->add_option("--nz", gm.nz, "Box cells along z");
  gen->add_option("--size", gm.size, "Box lengths x y z, mm")->expected(3)->delimiter(',');
  gen->add_option("-o,--output", gm.output, "Mesh file to write")->required();
  gen->add_option("--annotation-template", gm.annotation_template,
                  "Also write a starter annotation (base fixed, load on top)");

  SpecArgs vs;
  std::string field_path;
  bool nominal = false;
  auto* verify = app.add_subcommand("verify", "Check every property of an annotated mesh");
  verify->add_option("--mesh", vs.mesh, "Mesh file")->required();
  verify->add_option("--annotation", vs.annotation, "Annotation file")->required();
  auto* field_opt = verify->add_option("--field", field_path, "Material field file");
  verify->add_flag("--nominal", nominal, "Use the midpoints of the annotated ranges")->excludes(field_opt);

  SpecArgs os;
  OptimizeArgs oa;
  auto* optimize = app.add_subcommand("optimize", "Solve the inversion problem for the material field");
  optimize->add_option("--mesh", os.mesh, "Mesh file")->required();
  optimize->add_option("--annotation", os.annotation, "Annotation file")->required();
  optimize->add_option("--objective", oa.objective, "compliance|average_temperature|mass|plan_deviation")
      ->check(CLI::IsMember({"compliance", "average_temperature", "mass", "plan_deviation"}));
  optimize->add_option("--field", oa.field, "Field supplying frozen values (default: nominal)");
  optimize->add_option("--frozen-layers", oa.frozen_layers, "Number of bottom layers held fixed");
  optimize->add_option("--layer-height", oa.layer_height, "Layer height, mm");
  optimize->add_option("--granularity", oa.granularity, "element | layer")
      ->check(CLI::IsMember({"element", "layer"}));
  optimize->add_option("-o,--output", oa.output, "Optimized field file");
  optimize->add_option("--trace", oa.trace, "Iteration trace (JSON lines)");

  std::string scenario, out_dir = ".", seeds;
  auto* sim = app.add_subcommand("simulate", "Run a seeded closed-loop print simulation");
  sim->add_option("scenario", scenario, "Scenario file")->required();
  sim->add_option("-o,--output-dir", out_dir, "Directory for report and history files");
  sim->add_option("--seeds", seeds, "Seed N or inclusive range A..B (overrides the scenario seed)");

  std::string report_in, svg;
  auto* report = app.add_subcommand("report", "Summarize a print report or optimizer trace");
  report->add_option("input", report_in, "report.json or trace.jsonl")->required();
  report->add_option("--svg", svg, "Write a convergence plot");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    if (code == 0) return kExitPass;
    err << "semprint: error: code=usage: " << e.what() << "\n";
    return kExitUsage;
  }
  ctx.log->set_level(spdlog::level::from_str(ctx.globals.log_level));

  try {
    if (gen->parsed()) return cmd_gen_mesh(gm, ctx);
    if (verify->parsed()) return cmd_verify(vs, field_path, nominal, ctx);
    if (optimize->parsed()) return cmd_optimize(os, oa, ctx);
    if (sim->parsed()) return cmd_simulate(scenario, out_dir, seeds, ctx);
    if (report->parsed()) return cmd_report(report_in, svg, ctx);
  } catch (const Error& e) {
    err << "semprint: error: code=" << to_string(e.code()) << ": " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const fs::filesystem_error& e) {
    err << "semprint: error: code=io_error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "semprint: error: code=internal: " << e.what() << "\n";
    return kExitNumerical;
  }
  return kExitUsage;
}

}  // namespace semprint
