#pragma once

#include <limits>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "semprint/mesh.hpp"

namespace semprint {

// Units are fixed: mm, N, MPa, W/(mm*K), kg/mm^3, K, W.

inline constexpr double kInf = std::numeric_limits<double>::infinity();

struct Interval {
  double min = 0.0;
  double max = 0.0;

  bool contains(double x) const { return x >= min && x <= max; }
  double midpoint() const { return 0.5 * (min + max); }
  double width() const { return max - min; }
  bool operator==(const Interval&) const = default;
};

/// Axis-aligned box; infinite bounds are allowed.
struct Box3 {
  Vec3 min = Vec3::Constant(-kInf);
  Vec3 max = Vec3::Constant(kInf);

  static Box3 everything() { return {}; }
  static Box3 point(const Vec3& p) { return {p, p}; }
  bool contains(const Vec3& p) const;
  Vec3 midpoint() const;
  bool operator==(const Box3& other) const;
};

enum class DisplacementKind { unconstrained, fixed, bounded };

/// U_i: the displacement either prescribed (fixed, the given condition) or
/// required to stay inside a box (the goal).
struct DisplacementSet {
  DisplacementKind kind = DisplacementKind::unconstrained;
  Vec3 value = Vec3::Zero();  ///< prescribed displacement when fixed
  Box3 box;                   ///< admissible displacements when bounded

  bool operator==(const DisplacementSet& other) const;
};

enum class ForceKind { given, free, distributed };
enum class LoadSplit { equal, area };

/// F_i: an external force box, a free reaction, or (on a vertex set only) a
/// total force split among the set's vertices when binding.
struct ForceSet {
  ForceKind kind = ForceKind::given;
  Box3 box = Box3::point(Vec3::Zero());
  Vec3 total = Vec3::Zero();
  LoadSplit split = LoadSplit::equal;

  bool operator==(const ForceSet& other) const;
};

enum class TemperatureKind { unconstrained, fixed, bounded };

struct TemperatureSet {
  TemperatureKind kind = TemperatureKind::unconstrained;
  double value = 0.0;
  Interval range{-kInf, kInf};
  bool operator==(const TemperatureSet&) const = default;
};

struct VertexAnnotation {
  std::optional<DisplacementSet> displacement;
  std::optional<ForceSet> force;
  std::optional<TemperatureSet> temperature;
  std::optional<double> heat;  ///< nodal heat input, W
  bool operator==(const VertexAnnotation&) const = default;
};

/// Annotation target: a decimal vertex id or the name of a vertex set.
struct VertexAnnotationEntry {
  std::string target;
  VertexAnnotation annotation;
  bool operator==(const VertexAnnotationEntry&) const = default;
};

struct PlaneSelector {
  int axis = 2;
  double value = 0.0;
  double tol = 1e-9;
  bool operator==(const PlaneSelector&) const = default;
};

/// Named vertex group, given either as explicit ids or as a coordinate plane.
struct VertexSet {
  std::string name;
  std::optional<std::vector<int>> ids;
  std::optional<PlaneSelector> plane;
  bool operator==(const VertexSet&) const = default;
};

enum class Parameter { young, poisson, conductivity, density };
std::string_view to_string(Parameter p);
Parameter parameter_from_string(std::string_view name);

struct ParameterRanges {
  std::optional<Interval> young;         ///< MPa
  std::optional<Interval> poisson;       ///< dimensionless
  std::optional<Interval> conductivity;  ///< W/(mm*K)
  std::optional<Interval> density;       ///< kg/mm^3
  bool operator==(const ParameterRanges&) const = default;
};

struct ElementRanges {
  Interval young;
  Interval poisson;
  Interval conductivity;
  Interval density;

  const Interval& get(Parameter p) const;
  Interval& get(Parameter p);
  bool operator==(const ElementRanges&) const = default;
};

struct ElementAnnotations {
  ElementRanges defaults;
  std::map<int, ParameterRanges> overrides;
  bool operator==(const ElementAnnotations&) const = default;
};

enum class PropertyCategory { direct, material_dependent };
enum class PropertyScope { global, local };
enum class PredicateKind { volume, mass, max_displacement, max_temperature, average_temperature };
enum class Comparison { at_most, at_least };

std::string_view to_string(PredicateKind kind);

struct PropertySpec {
  std::string name;
  PropertyCategory category = PropertyCategory::direct;
  PropertyScope scope = PropertyScope::global;
  PredicateKind kind = PredicateKind::volume;
  Comparison op = Comparison::at_most;
  double bound = 0.0;
  /// Local properties: vertex set name or explicit ids (exactly one is used).
  std::optional<std::string> vertex_set;
  std::optional<std::vector<int>> vertex_ids;
  bool operator==(const PropertySpec&) const = default;
};

/// Lipschitz regularity of one parameter field: |p_e - p_f| <= gamma * |c_e - c_f|.
struct FieldRegularity {
  double gamma = 0.0;  ///< parameter units per mm
  Parameter parameter = Parameter::conductivity;
  bool operator==(const FieldRegularity&) const = default;
};

/// The annotation layer f of a tuple (M, f), before it is bound to a mesh.
struct SemanticLayer {
  std::vector<VertexSet> vertex_sets;
  std::vector<VertexAnnotationEntry> vertex_annotations;
  ElementAnnotations element_annotations;
  std::vector<PropertySpec> global_properties;
  std::optional<FieldRegularity> field_regularity;
  bool operator==(const SemanticLayer&) const = default;
};

SemanticLayer parse_semantic_layer(std::string_view text);
std::string serialize_semantic_layer(const SemanticLayer& layer);

/// Rewrites every vertex id reference (keys, id sets, property tags).
SemanticLayer relabel_vertices(const SemanticLayer& layer, const std::vector<int>& new_id);

struct MaterialParams {
  double young = 0.0;
  double poisson = 0.0;
  double conductivity = 0.0;
  double density = 0.0;

  double get(Parameter p) const;
  void set(Parameter p, double value);
  bool operator==(const MaterialParams&) const = default;
};

enum class Provenance { commanded, achieved, estimated };
std::string_view to_string(Provenance p);

/// Per-element material assignment. Admissibility against the annotated ranges
/// is a query, not a construction requirement.
struct MaterialField {
  std::vector<MaterialParams> values;
  std::vector<Provenance> provenance;

  MaterialField() = default;
  MaterialField(int elements, const MaterialParams& uniform, Provenance tag);
  int size() const { return static_cast<int>(values.size()); }
  bool operator==(const MaterialField&) const = default;
};

std::string serialize_material_field(const MaterialField& field);
MaterialField parse_material_field(std::string_view text);

struct ResolvedVertex {
  DisplacementSet displacement;
  ForceKind force_kind = ForceKind::given;  ///< given or free after binding
  Box3 force_box = Box3::point(Vec3::Zero());
  TemperatureSet temperature;
  double heat = 0.0;

  /// Nominal applied force: midpoint of the force box.
  Vec3 load() const;
};

struct ResolvedProperty {
  PropertySpec spec;
  std::vector<int> vertices;  ///< resolved tag set (local properties)
};

/// The tuple (M, f) with every reference resolved against the mesh.
struct BoundSpecification {
  VolumetricMesh mesh;
  SemanticLayer layer;
  std::vector<ResolvedVertex> vertices;
  std::vector<ElementRanges> element_ranges;
  std::vector<ResolvedProperty> properties;
  std::vector<double> volumes;
  bool elasticity = false;  ///< annotations pose a (well-posed) elasticity problem
  bool conduction = false;  ///< annotations pose a (well-posed) conduction problem

  const ResolvedProperty& property(std::string_view name) const;
};

BoundSpecification bind_to_mesh(const SemanticLayer& layer, const VolumetricMesh& mesh);

/// Vertex ids of a named set, resolved against the mesh.
std::vector<int> resolve_vertex_set(const SemanticLayer& layer, const VolumetricMesh& mesh,
                                    std::string_view name);

struct PropertyVerdict {
  std::string name;
  bool pass = false;
  double measured = 0.0;
  double margin = 0.0;  ///< signed slack; negative when failing
  double bound = 0.0;
};

/// Bound excess relative to |bound| (absolute when the bound is 0); 0 when passing.
double relative_violation(const PropertyVerdict& v);

PropertyVerdict check_direct_property(const BoundSpecification& spec, const PropertySpec& prop);

struct SolveOptions {
  double tol = 1e-10;
  int max_iter = 20000;
};

PropertyVerdict check_material_property(const BoundSpecification& spec, const PropertySpec& prop,
                                        const MaterialField& field,
                                        const SolveOptions& options = {});

/// Checks every property of the specification, solving each physics at most once.
std::vector<PropertyVerdict> check_all_properties(const BoundSpecification& spec,
                                                  const MaterialField& field,
                                                  const SolveOptions& options = {});

/// Box midpoints of every annotated range, tagged as commanded.
MaterialField nominal_field(const BoundSpecification& spec);

struct RangeViolation {
  int element;
  Parameter parameter;
  double value;
  Interval range;
};

std::vector<RangeViolation> range_violations(const BoundSpecification& spec,
                                             const MaterialField& field);
bool is_admissible(const BoundSpecification& spec, const MaterialField& field);

/// Splits a total force over a vertex set: equally, or weighted by the area of
/// the boundary triangles whose corners all belong to the set.
std::vector<Vec3> distribute_load(const VolumetricMesh& mesh, const std::vector<int>& vertices,
                                  const Vec3& total, LoadSplit split);

}  // namespace semprint
