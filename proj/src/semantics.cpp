#include "semprint/semantics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <optional>
#include <set>

#include "semprint/error.hpp"
#include "semprint/fem.hpp"

namespace semprint {

bool Box3::contains(const Vec3& p) const {
  return (p.array() >= min.array()).all() && (p.array() <= max.array()).all();
}

Vec3 Box3::midpoint() const { return 0.5 * (min + max); }

bool Box3::operator==(const Box3& other) const { return min == other.min && max == other.max; }

bool DisplacementSet::operator==(const DisplacementSet& other) const {
  if (kind != other.kind) return false;
  if (kind == DisplacementKind::fixed) return value == other.value;
  if (kind == DisplacementKind::bounded) return box == other.box;
  return true;
}

bool ForceSet::operator==(const ForceSet& other) const {
  if (kind != other.kind) return false;
  if (kind == ForceKind::given) return box == other.box;
  if (kind == ForceKind::distributed) return total == other.total && split == other.split;
  return true;
}

std::string_view to_string(Parameter p) {
  switch (p) {
    case Parameter::young: return "young";
    case Parameter::poisson: return "poisson";
    case Parameter::conductivity: return "conductivity";
    case Parameter::density: return "density";
  }
  return "unknown";
}

Parameter parameter_from_string(std::string_view name) {
  for (Parameter p : {Parameter::young, Parameter::poisson, Parameter::conductivity,
                      Parameter::density}) {
    if (to_string(p) == name) return p;
  }
  throw Error(ErrorCode::invalid_argument, "unknown material parameter '" + std::string(name) + "'");
}

std::string_view to_string(PredicateKind kind) {
  switch (kind) {
    case PredicateKind::volume: return "volume";
    case PredicateKind::mass: return "mass";
    case PredicateKind::max_displacement: return "max_displacement";
    case PredicateKind::max_temperature: return "max_temperature";
    case PredicateKind::average_temperature: return "average_temperature";
  }
  return "unknown";
}

std::string_view to_string(Provenance p) {
  switch (p) {
    case Provenance::commanded: return "commanded";
    case Provenance::achieved: return "achieved";
    case Provenance::estimated: return "estimated";
  }
  return "unknown";
}

const Interval& ElementRanges::get(Parameter p) const {
  switch (p) {
    case Parameter::young: return young;
    case Parameter::poisson: return poisson;
    case Parameter::conductivity: return conductivity;
    case Parameter::density: return density;
  }
  return young;
}

Interval& ElementRanges::get(Parameter p) {
  return const_cast<Interval&>(static_cast<const ElementRanges&>(*this).get(p));
}

double MaterialParams::get(Parameter p) const {
  switch (p) {
    case Parameter::young: return young;
    case Parameter::poisson: return poisson;
    case Parameter::conductivity: return conductivity;
    case Parameter::density: return density;
  }
  return 0.0;
}

void MaterialParams::set(Parameter p, double value) {
  switch (p) {
    case Parameter::young: young = value; break;
    case Parameter::poisson: poisson = value; break;
    case Parameter::conductivity: conductivity = value; break;
    case Parameter::density: density = value; break;
  }
}

MaterialField::MaterialField(int elements, const MaterialParams& uniform, Provenance tag)
    : values(static_cast<std::size_t>(elements), uniform),
      provenance(static_cast<std::size_t>(elements), tag) {}

Vec3 ResolvedVertex::load() const {
  return force_kind == ForceKind::given ? force_box.midpoint() : Vec3::Zero();
}

const ResolvedProperty& BoundSpecification::property(std::string_view name) const {
  for (const auto& p : properties) {
    if (p.spec.name == name) return p;
  }
  throw Error(ErrorCode::unknown_property, "no property named '" + std::string(name) + "'");
}

namespace {

bool is_vertex_id(const std::string& target) {
  return !target.empty() &&
         std::all_of(target.begin(), target.end(), [](unsigned char c) { return std::isdigit(c); });
}

const VertexSet* find_set(const SemanticLayer& layer, std::string_view name) {
  for (const auto& s : layer.vertex_sets) {
    if (s.name == name) return &s;
  }
  return nullptr;
}

[[noreturn]] void dangling(const std::string& what) {
  throw Error(ErrorCode::dangling_reference, what);
}

int checked_vertex(long long id, int nv, const std::string& context) {
  if (id < 0 || id >= nv) {
    dangling(context + " references vertex " + std::to_string(id) + " but the mesh has " +
             std::to_string(nv) + " vertices");
  }
  return static_cast<int>(id);
}

void check_ranges(const ElementRanges& r, const std::string& where) {
  auto order = [&](const Interval& i, std::string_view name) {
    if (!(i.min <= i.max)) {
      throw Error(ErrorCode::range_order, where + ": " + std::string(name) + " range has min > max");
    }
  };
  order(r.young, "young");
  order(r.poisson, "poisson");
  order(r.conductivity, "conductivity");
  order(r.density, "density");
  auto positive = [&](const Interval& i, std::string_view name) {
    if (!(i.min > 0.0) || !std::isfinite(i.max)) {
      throw Error(ErrorCode::invalid_argument,
                  where + ": " + std::string(name) + " range must be finite and strictly positive");
    }
  };
  positive(r.young, "young");
  positive(r.conductivity, "conductivity");
  positive(r.density, "density");
  if (!(r.poisson.min > -1.0 && r.poisson.max < 0.5)) {
    throw Error(ErrorCode::invalid_argument, where + ": poisson range must lie inside (-1, 0.5)");
  }
}

ElementRanges merge(const ElementRanges& base, const ParameterRanges& over) {
  ElementRanges r = base;
  if (over.young) r.young = *over.young;
  if (over.poisson) r.poisson = *over.poisson;
  if (over.conductivity) r.conductivity = *over.conductivity;
  if (over.density) r.density = *over.density;
  return r;
}

bool well_spread(const std::vector<Vec3>& pts, double scale) {
  if (pts.size() < 3) return false;
  const double tol = 1e-9 * scale;
  const Vec3& p0 = pts[0];
  std::optional<Vec3> dir;
  for (const Vec3& p : pts) {
    const Vec3 d = p - p0;
    if (!dir) {
      if (d.norm() > tol) dir = d.normalized();
      continue;
    }
    if (d.cross(*dir).norm() > tol) return true;
  }
  return false;
}

}  // namespace

std::vector<int> resolve_vertex_set(const SemanticLayer& layer, const VolumetricMesh& mesh,
                                    std::string_view name) {
  const VertexSet* set = find_set(layer, name);
  if (!set) dangling("unknown vertex set '" + std::string(name) + "'");
  std::vector<int> ids;
  if (set->ids) {
    for (long long id : *set->ids) {
      ids.push_back(checked_vertex(id, mesh.vertex_count(), "vertex set '" + set->name + "'"));
    }
  } else if (set->plane) {
    ids = vertices_on_plane(mesh, set->plane->axis, set->plane->value, set->plane->tol);
  }
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  if (ids.empty()) dangling("vertex set '" + set->name + "' selects no vertex");
  return ids;
}

std::vector<Vec3> distribute_load(const VolumetricMesh& mesh, const std::vector<int>& vertices,
                                  const Vec3& total, LoadSplit split) {
  if (vertices.empty()) throw Error(ErrorCode::invalid_argument, "load over an empty vertex set");
  std::vector<Vec3> loads(vertices.size(), Vec3::Zero());
  if (split == LoadSplit::equal) {
    const Vec3 share = total / static_cast<double>(vertices.size());
    std::fill(loads.begin(), loads.end(), share);
    return loads;
  }
  std::map<int, std::size_t> position;
  for (std::size_t i = 0; i < vertices.size(); ++i) position[vertices[i]] = i;
  std::vector<double> weight(vertices.size(), 0.0);
  double area_sum = 0.0;
  for (const Face& f : boundary_faces(mesh)) {
    if (!position.count(f[0]) || !position.count(f[1]) || !position.count(f[2])) continue;
    const Vec3& a = mesh.vertices[f[0]];
    const double area = 0.5 * (mesh.vertices[f[1]] - a).cross(mesh.vertices[f[2]] - a).norm();
    for (int v : f) weight[position[v]] += area / 3.0;
    area_sum += area;
  }
  if (!(area_sum > 0.0)) {
    throw Error(ErrorCode::invalid_argument,
                "area-weighted load needs boundary faces spanned by the vertex set");
  }
  for (std::size_t i = 0; i < vertices.size(); ++i) loads[i] = total * (weight[i] / area_sum);
  return loads;
}

BoundSpecification bind_to_mesh(const SemanticLayer& layer, const VolumetricMesh& mesh) {
  const int nv = mesh.vertex_count();
  const int ne = mesh.element_count();

  BoundSpecification spec;
  spec.mesh = mesh;
  spec.layer = layer;
  spec.vertices.assign(static_cast<std::size_t>(nv), ResolvedVertex{});
  spec.volumes = element_volumes(mesh);

  bool touches_elasticity = false;
  bool touches_conduction = false;

  struct Seen {
    bool displacement = false, force = false, temperature = false, heat = false;
  };
  std::vector<Seen> seen(static_cast<std::size_t>(nv));

  for (const auto& entry : layer.vertex_annotations) {
    std::vector<int> targets;
    if (is_vertex_id(entry.target)) {
      targets.push_back(checked_vertex(std::stoll(entry.target), nv, "vertex annotation"));
    } else {
      targets = resolve_vertex_set(layer, mesh, entry.target);
    }
    const VertexAnnotation& a = entry.annotation;

    std::vector<Vec3> distributed;
    if (a.force && a.force->kind == ForceKind::distributed) {
      distributed = distribute_load(mesh, targets, a.force->total, a.force->split);
    }

    for (std::size_t i = 0; i < targets.size(); ++i) {
      const int v = targets[i];
      auto conflict = [&](bool& flag, std::string_view field) {
        if (flag) {
          throw Error(ErrorCode::conflicting_annotation,
                      "vertex " + std::to_string(v) + " has more than one " + std::string(field) +
                          " annotation");
        }
        flag = true;
      };
      ResolvedVertex& rv = spec.vertices[v];
      if (a.displacement) {
        conflict(seen[v].displacement, "displacement");
        rv.displacement = *a.displacement;
        touches_elasticity = true;
      }
      if (a.force) {
        conflict(seen[v].force, "force");
        touches_elasticity = true;
        if (a.force->kind == ForceKind::free) {
          rv.force_kind = ForceKind::free;
        } else if (a.force->kind == ForceKind::given) {
          rv.force_kind = ForceKind::given;
          rv.force_box = a.force->box;
        } else {
          rv.force_kind = ForceKind::given;
          rv.force_box = Box3::point(distributed[i]);
        }
      }
      if (a.temperature) {
        conflict(seen[v].temperature, "temperature");
        rv.temperature = *a.temperature;
        touches_conduction = true;
      }
      if (a.heat) {
        conflict(seen[v].heat, "heat");
        rv.heat = *a.heat;
        touches_conduction = true;
      }
    }
  }

  check_ranges(layer.element_annotations.defaults, "element default");
  spec.element_ranges.assign(static_cast<std::size_t>(ne), layer.element_annotations.defaults);
  for (const auto& [id, over] : layer.element_annotations.overrides) {
    if (id < 0 || id >= ne) {
      dangling("element annotation references element " + std::to_string(id) +
               " but the mesh has " + std::to_string(ne) + " elements");
    }
    spec.element_ranges[id] = merge(layer.element_annotations.defaults, over);
    check_ranges(spec.element_ranges[id], "element " + std::to_string(id));
  }

  for (const PropertySpec& p : layer.global_properties) {
    ResolvedProperty rp{p, {}};
    if (p.vertex_set) {
      rp.vertices = resolve_vertex_set(layer, mesh, *p.vertex_set);
    } else if (p.vertex_ids) {
      for (long long id : *p.vertex_ids) {
        rp.vertices.push_back(checked_vertex(id, nv, "property '" + p.name + "'"));
      }
    }
    if (p.kind == PredicateKind::max_displacement) touches_elasticity = true;
    if (p.kind == PredicateKind::max_temperature || p.kind == PredicateKind::average_temperature) {
      touches_conduction = true;
    }
    spec.properties.push_back(std::move(rp));
  }

  if (touches_elasticity) {
    std::vector<Vec3> fixed_points;
    for (int v = 0; v < nv; ++v) {
      const ResolvedVertex& rv = spec.vertices[v];
      const bool fixed = rv.displacement.kind == DisplacementKind::fixed;
      if (fixed) fixed_points.push_back(mesh.vertices[v]);
      if (!fixed && rv.force_kind == ForceKind::free) {
        throw Error(ErrorCode::under_constrained,
                    "vertex " + std::to_string(v) +
                        " has neither a prescribed displacement nor a known force");
      }
    }
    if (!well_spread(fixed_points, bounding_box(mesh).diagonal())) {
      throw Error(ErrorCode::under_constrained,
                  "elasticity problem is under-constrained: fewer than three non-collinear "
                  "fixed vertices, rigid-body motion is possible");
    }
    spec.elasticity = true;
  }
  if (touches_conduction) {
    const bool any_fixed = std::any_of(spec.vertices.begin(), spec.vertices.end(), [](const auto& rv) {
      return rv.temperature.kind == TemperatureKind::fixed;
    });
    if (!any_fixed) {
      throw Error(ErrorCode::under_constrained,
                  "conduction problem is under-constrained: no vertex has a fixed temperature");
    }
    spec.conduction = true;
  }
  return spec;
}

namespace {

PropertyVerdict verdict(const PropertySpec& prop, double measured) {
  PropertyVerdict v;
  v.name = prop.name;
  v.measured = measured;
  v.margin = prop.op == Comparison::at_most ? prop.bound - measured : measured - prop.bound;
  v.pass = v.margin >= 0.0;
  v.bound = prop.bound;
  return v;
}

struct SolutionCache {
  const BoundSpecification& spec;
  const MaterialField& field;
  const SolveOptions& options;
  std::optional<FieldSolution> elastic;
  std::optional<FieldSolution> thermal;

  const FieldSolution& get(Physics physics) {
    auto& slot = physics == Physics::elasticity ? elastic : thermal;
    if (!slot) slot = solve(assemble(spec, field, physics), options);
    return *slot;
  }
};

double measure(const BoundSpecification& spec, const ResolvedProperty& rp,
               const MaterialField& field, SolutionCache& cache) {
  switch (rp.spec.kind) {
    case PredicateKind::volume:
      return total_volume(spec.mesh);
    case PredicateKind::mass: {
      double m = 0.0;
      for (int e = 0; e < spec.mesh.element_count(); ++e) m += field.values[e].density * spec.volumes[e];
      return m;
    }
    case PredicateKind::max_displacement: {
      const FieldSolution& s = cache.get(Physics::elasticity);
      double worst = 0.0;
      for (int v : rp.vertices) worst = std::max(worst, s.displacement(v).norm());
      return worst;
    }
    case PredicateKind::max_temperature: {
      const FieldSolution& s = cache.get(Physics::conduction);
      double worst = -kInf;
      for (int v : rp.vertices) worst = std::max(worst, s.temperature(v));
      return worst;
    }
    case PredicateKind::average_temperature: {
      const FieldSolution& s = cache.get(Physics::conduction);
      double weighted = 0.0, vol = 0.0;
      for (int e = 0; e < spec.mesh.element_count(); ++e) {
        double mean = 0.0;
        for (int v : spec.mesh.tets[e]) mean += 0.25 * s.temperature(v);
        weighted += spec.volumes[e] * mean;
        vol += spec.volumes[e];
      }
      return weighted / vol;
    }
  }
  return 0.0;
}

ResolvedProperty resolve_for(const BoundSpecification& spec, const PropertySpec& prop) {
  for (const auto& rp : spec.properties) {
    if (rp.spec == prop) return rp;
  }
  ResolvedProperty rp{prop, {}};
  if (prop.vertex_set) {
    rp.vertices = resolve_vertex_set(spec.layer, spec.mesh, *prop.vertex_set);
  } else if (prop.vertex_ids) {
    for (long long id : *prop.vertex_ids) {
      rp.vertices.push_back(checked_vertex(id, spec.mesh.vertex_count(), "property '" + prop.name + "'"));
    }
  }
  return rp;
}

}  // namespace

double relative_violation(const PropertyVerdict& v) {
  if (v.pass || !(v.margin < 0.0)) return 0.0;
  return -v.margin / (v.bound != 0.0 ? std::abs(v.bound) : 1.0);
}

PropertyVerdict check_direct_property(const BoundSpecification& spec, const PropertySpec& prop) {
  if (prop.category != PropertyCategory::direct) {
    throw Error(ErrorCode::category_mismatch,
                "property '" + prop.name + "' is material-dependent, not direct");
  }
  const MaterialField none;
  const SolveOptions options;
  SolutionCache cache{spec, none, options, {}, {}};
  return verdict(prop, measure(spec, resolve_for(spec, prop), none, cache));
}

PropertyVerdict check_material_property(const BoundSpecification& spec, const PropertySpec& prop,
                                        const MaterialField& field, const SolveOptions& options) {
  if (prop.category != PropertyCategory::material_dependent) {
    throw Error(ErrorCode::category_mismatch,
                "property '" + prop.name + "' is direct, not material-dependent");
  }
  if (field.size() != spec.mesh.element_count()) {
    throw Error(ErrorCode::invalid_argument, "material field does not cover every element");
  }
  SolutionCache cache{spec, field, options, {}, {}};
  return verdict(prop, measure(spec, resolve_for(spec, prop), field, cache));
}

std::vector<PropertyVerdict> check_all_properties(const BoundSpecification& spec,
                                                  const MaterialField& field,
                                                  const SolveOptions& options) {
  if (field.size() != spec.mesh.element_count()) {
    throw Error(ErrorCode::invalid_argument, "material field does not cover every element");
  }
  SolutionCache cache{spec, field, options, {}, {}};
  std::vector<PropertyVerdict> out;
  for (const ResolvedProperty& rp : spec.properties) {
    out.push_back(verdict(rp.spec, measure(spec, rp, field, cache)));
  }
  return out;
}

MaterialField nominal_field(const BoundSpecification& spec) {
  MaterialField field;
  field.values.reserve(spec.element_ranges.size());
  for (const ElementRanges& r : spec.element_ranges) {
    field.values.push_back({r.young.midpoint(), r.poisson.midpoint(), r.conductivity.midpoint(),
                            r.density.midpoint()});
  }
  field.provenance.assign(field.values.size(), Provenance::commanded);
  return field;
}

std::vector<RangeViolation> range_violations(const BoundSpecification& spec,
                                             const MaterialField& field) {
  if (field.size() != spec.mesh.element_count()) {
    throw Error(ErrorCode::invalid_argument, "material field does not cover every element");
  }
  std::vector<RangeViolation> out;
  for (int e = 0; e < field.size(); ++e) {
    for (Parameter p : {Parameter::young, Parameter::poisson, Parameter::conductivity,
                        Parameter::density}) {
      const double value = field.values[e].get(p);
      const Interval& range = spec.element_ranges[e].get(p);
      if (!range.contains(value)) out.push_back({e, p, value, range});
    }
  }
  return out;
}

bool is_admissible(const BoundSpecification& spec, const MaterialField& field) {
  return range_violations(spec, field).empty();
}

SemanticLayer relabel_vertices(const SemanticLayer& layer, const std::vector<int>& new_id) {
  auto map_id = [&](long long id) -> int {
    if (id < 0 || id >= static_cast<long long>(new_id.size())) {
      dangling("relabeling does not cover vertex " + std::to_string(id));
    }
    return new_id[static_cast<std::size_t>(id)];
  };
  SemanticLayer out = layer;
  for (auto& set : out.vertex_sets) {
    if (set.ids) {
      for (int& id : *set.ids) id = map_id(id);
    }
  }
  for (auto& entry : out.vertex_annotations) {
    if (is_vertex_id(entry.target)) entry.target = std::to_string(map_id(std::stoll(entry.target)));
  }
  for (auto& p : out.global_properties) {
    if (p.vertex_ids) {
      for (int& id : *p.vertex_ids) id = map_id(id);
    }
  }
  return out;
}

}  // namespace semprint
