#pragma once

#include <cmath>
#include <memory>
#include <random>
#include <string>

#include <json.hpp>

#include "semprint/mesh.hpp"
#include "semprint/optimize.hpp"
#include "semprint/printsim.hpp"
#include "semprint/semantics.hpp"

namespace semprint::testing {

using nlohmann::ordered_json;

inline std::shared_ptr<const BoundSpecification> bind_spec(const VolumetricMesh& mesh, const std::string& annotation) {
  return std::make_shared<const BoundSpecification>(bind_to_mesh(parse_semantic_layer(annotation), mesh));
}

inline ordered_json plane(const char* axis, double value) {
  return {{"plane", {{"axis", axis}, {"value", value}}}};
}

inline ordered_json ranges(double e_lo, double e_hi, double nu, double k_lo = 1.0, double k_hi = 1.0) {
  return {{"young", {e_lo, e_hi}}, {"poisson", {nu, nu}}, {"conductivity", {k_lo, k_hi}},
          {"density", {1e-6, 1e-6}}};
}

/// Column on z in [0, height], base fixed, axial load on top split by area.
inline std::string column_annotation(double height, double e_lo, double e_hi, double load,
                                     double tip_bound) {
  ordered_json j;
  j["vertex_sets"] = {{"base", plane("z", 0.0)}, {"top", plane("z", height)}};
  j["vertex_annotations"] = {
      {"base", {{"displacement", "fixed"}, {"force", "free"}}},
      {"top", {{"force", {{"total", {0.0, 0.0, load}}, {"split", "area"}}}}}};
  j["element_annotations"] = {{"default", ranges(e_lo, e_hi, 0.0)}};
  j["global_properties"] = ordered_json::array(
      {{{"name", "tip"}, {"kind", "max_displacement"}, {"bound", tip_bound}, {"vertices", "top"}}});
  return j.dump();
}

/// Bar along z with both end faces held at fixed temperatures.
inline std::string thermal_annotation(double height, double t_base, double t_top, double k) {
  ordered_json j;
  j["vertex_sets"] = {{"base", plane("z", 0.0)}, {"top", plane("z", height)}};
  j["vertex_annotations"] = {{"base", {{"temperature", {{"fixed", t_base}}}}},
                             {"top", {{"temperature", {{"fixed", t_top}}}}}};
  j["element_annotations"] = {{"default", ranges(1e5, 1e5, 0.3, k, k)}};
  j["global_properties"] = ordered_json::array(
      {{{"name", "hot"}, {"kind", "max_temperature"}, {"bound", std::max(t_base, t_top) + 1.0},
        {"vertices", "top"}}});
  return j.dump();
}

/// The closed-loop column: 1 x 1 x 4 mm in four 1 mm layers, E in [5e4, 3e5] MPa,
/// tip bound between the nominal (2.29e-3) and 0.85-degraded (2.69e-3) response.
inline VolumetricMesh loop_mesh() { return generate_box_mesh(1, 1, 4, Vec3(1, 1, 4)); }
inline std::string loop_annotation() { return column_annotation(4.0, 5e4, 3e5, 100.0, 2.35e-3); }

/// Non-degenerate random tetrahedron with positive orientation.
inline TetCoords random_tet(std::mt19937_64& rng, double min_volume = 0.01) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (;;) {
    TetCoords x;
    for (auto& p : x) p = Vec3(u(rng), u(rng), u(rng));
    double v = signed_volume(x);
    if (std::abs(v) < min_volume) continue;
    if (v < 0) std::swap(x[0], x[1]);
    return x;
  }
}

inline double rel_diff(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

}  // namespace semprint::testing
