#include <cctype>
#include <cmath>
#include <set>

#include "semprint/error.hpp"
#include "semprint/io.hpp"
#include "semprint/semantics.hpp"

namespace semprint {

using nlohmann::ordered_json;

namespace {

[[noreturn]] void fail(const std::string& path, const std::string& message) {
  throw Error(ErrorCode::parse_error, "annotation: " + path + ": " + message);
}

const ordered_json& field_of(const ordered_json& obj, const std::string& key, const std::string& path) {
  if (!obj.contains(key)) fail(path, "missing field \"" + key + "\"");
  return obj[key];
}

double number(const ordered_json& j, const std::string& path) {
  if (!j.is_number()) fail(path, "expected a number");
  const double x = j.get<double>();
  if (!std::isfinite(x)) fail(path, "expected a finite number");
  return x;
}

// null encodes an unbounded side.
double bound_or_inf(const ordered_json& j, double inf, const std::string& path) {
  if (j.is_null()) return inf;
  return number(j, path);
}

Vec3 vec3(const ordered_json& j, const std::string& path) {
  if (!j.is_array() || j.size() != 3) fail(path, "expected [x, y, z]");
  return {number(j[0], path + "[0]"), number(j[1], path + "[1]"), number(j[2], path + "[2]")};
}

Box3 box3(const ordered_json& j, const std::string& path, bool allow_unbounded) {
  Box3 b;
  for (const char* side : {"min", "max"}) {
    const auto& arr = field_of(j, side, path);
    const std::string p = path + "." + side;
    if (!arr.is_array() || arr.size() != 3) fail(p, "expected [x, y, z]");
    const double inf = std::string(side) == "min" ? -kInf : kInf;
    Vec3 v;
    for (int a = 0; a < 3; ++a) {
      const std::string pa = p + "[" + std::to_string(a) + "]";
      if (arr[a].is_null() && !allow_unbounded) fail(pa, "bound must be finite");
      v[a] = bound_or_inf(arr[a], inf, pa);
    }
    (std::string(side) == "min" ? b.min : b.max) = v;
  }
  for (int a = 0; a < 3; ++a) {
    if (!(b.min[a] <= b.max[a])) {
      throw Error(ErrorCode::range_order, "annotation: " + path + ": box has min > max on axis " +
                                              std::to_string(a));
    }
  }
  return b;
}

ordered_json bound_json(double x) { return std::isfinite(x) ? ordered_json(x) : ordered_json(nullptr); }

ordered_json box_json(const Box3& b) {
  ordered_json j;
  j["min"] = {bound_json(b.min.x()), bound_json(b.min.y()), bound_json(b.min.z())};
  j["max"] = {bound_json(b.max.x()), bound_json(b.max.y()), bound_json(b.max.z())};
  return j;
}

ordered_json vec_json(const Vec3& v) { return {v.x(), v.y(), v.z()}; }

Interval interval(const ordered_json& j, const std::string& path) {
  if (!j.is_array() || j.size() != 2) fail(path, "expected [min, max]");
  Interval i{number(j[0], path + "[0]"), number(j[1], path + "[1]")};
  if (!(i.min <= i.max)) {
    throw Error(ErrorCode::range_order, "annotation: " + path + ": range has min > max");
  }
  return i;
}

int axis_from(const ordered_json& j, const std::string& path) {
  if (j.is_string()) {
    const std::string s = j.get<std::string>();
    if (s == "x") return 0;
    if (s == "y") return 1;
    if (s == "z") return 2;
  }
  fail(path, "axis must be \"x\", \"y\" or \"z\"");
}

bool is_id(const std::string& s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isdigit(c); });
}

int parse_id(const std::string& key, const std::string& path) {
  if (!is_id(key) || key.size() > 9) fail(path, "expected a non-negative integer id, got \"" + key + "\"");
  return std::stoi(key);
}

std::vector<int> id_list(const ordered_json& j, const std::string& path) {
  if (!j.is_array()) fail(path, "expected an array of vertex ids");
  std::vector<int> ids;
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number_integer() || j[i].get<long long>() < 0 ||
        j[i].get<long long>() > 1'000'000'000) {
      fail(path + "[" + std::to_string(i) + "]", "expected a non-negative integer id");
    }
    ids.push_back(static_cast<int>(j[i].get<long long>()));
  }
  return ids;
}

DisplacementSet parse_displacement(const ordered_json& j, const std::string& path) {
  DisplacementSet d;
  if (j.is_string()) {
    const std::string s = j.get<std::string>();
    if (s == "fixed") {
      d.kind = DisplacementKind::fixed;
      return d;
    }
    if (s == "unconstrained") return d;
    fail(path, "expected \"fixed\", \"unconstrained\", {\"fixed\": [..]} or {\"min\", \"max\"}");
  }
  if (!j.is_object()) fail(path, "expected a displacement set");
  if (j.contains("fixed")) {
    d.kind = DisplacementKind::fixed;
    d.value = vec3(j["fixed"], path + ".fixed");
    return d;
  }
  d.kind = DisplacementKind::bounded;
  d.box = box3(j, path, true);
  return d;
}

ForceSet parse_force(const ordered_json& j, const std::string& path, bool target_is_set) {
  ForceSet f;
  if (j.is_string()) {
    if (j.get<std::string>() == "free") {
      f.kind = ForceKind::free;
      return f;
    }
    fail(path, "expected \"free\", [fx, fy, fz], {\"min\", \"max\"} or {\"total\", \"split\"}");
  }
  if (j.is_array()) {
    f.box = Box3::point(vec3(j, path));
    return f;
  }
  if (!j.is_object()) fail(path, "expected a force set");
  if (j.contains("total")) {
    if (!target_is_set) fail(path, "a distributed total force needs a vertex set target");
    f.kind = ForceKind::distributed;
    f.total = vec3(j["total"], path + ".total");
    const std::string split = j.contains("split") ? j["split"].get<std::string>() : "equal";
    if (split == "equal") {
      f.split = LoadSplit::equal;
    } else if (split == "area") {
      f.split = LoadSplit::area;
    } else {
      fail(path + ".split", "expected \"equal\" or \"area\"");
    }
    return f;
  }
  f.box = box3(j, path, false);
  return f;
}

TemperatureSet parse_temperature(const ordered_json& j, const std::string& path) {
  TemperatureSet t;
  if (j.is_string() && j.get<std::string>() == "unconstrained") return t;
  if (!j.is_object()) fail(path, "expected {\"fixed\": T}, {\"min\": a, \"max\": b} or \"unconstrained\"");
  if (j.contains("fixed")) {
    t.kind = TemperatureKind::fixed;
    t.value = number(j["fixed"], path + ".fixed");
    return t;
  }
  t.kind = TemperatureKind::bounded;
  t.range.min = bound_or_inf(field_of(j, "min", path), -kInf, path + ".min");
  t.range.max = bound_or_inf(field_of(j, "max", path), kInf, path + ".max");
  if (!(t.range.min <= t.range.max)) {
    throw Error(ErrorCode::range_order, "annotation: " + path + ": range has min > max");
  }
  return t;
}

ParameterRanges parse_ranges(const ordered_json& j, const std::string& path) {
  if (!j.is_object()) fail(path, "expected an object of parameter ranges");
  ParameterRanges r;
  for (const auto& [key, value] : j.items()) {
    const std::string p = path + "." + key;
    if (key == "young") {
      r.young = interval(value, p);
    } else if (key == "poisson") {
      r.poisson = interval(value, p);
    } else if (key == "conductivity") {
      r.conductivity = interval(value, p);
    } else if (key == "density") {
      r.density = interval(value, p);
    } else {
      fail(p, "unknown material parameter");
    }
  }
  for (const auto* i : {&r.young, &r.conductivity, &r.density}) {
    if (*i && !((*i)->min > 0.0)) fail(path, "young, conductivity and density ranges must be strictly positive");
  }
  if (r.poisson && !(r.poisson->min > -1.0 && r.poisson->max < 0.5)) {
    fail(path + ".poisson", "range must lie inside (-1, 0.5)");
  }
  return r;
}

ordered_json ranges_json(const ParameterRanges& r) {
  ordered_json j = ordered_json::object();
  auto put = [&](const char* key, const std::optional<Interval>& i) {
    if (i) j[key] = {i->min, i->max};
  };
  put("young", r.young);
  put("poisson", r.poisson);
  put("conductivity", r.conductivity);
  put("density", r.density);
  return j;
}

PredicateKind predicate_from(const std::string& s, const std::string& path) {
  for (PredicateKind k : {PredicateKind::volume, PredicateKind::mass, PredicateKind::max_displacement,
                          PredicateKind::max_temperature, PredicateKind::average_temperature}) {
    if (to_string(k) == s) return k;
  }
  throw Error(ErrorCode::unknown_property, "annotation: " + path + ": unknown property kind \"" + s + "\"");
}

PropertySpec parse_property(const ordered_json& j, const std::string& path,
                            const std::set<std::string>& set_names) {
  if (!j.is_object()) fail(path, "expected a property object");
  PropertySpec p;
  const auto& name = field_of(j, "name", path);
  if (!name.is_string() || name.get<std::string>().empty()) fail(path + ".name", "expected a non-empty string");
  p.name = name.get<std::string>();
  const auto& kind = field_of(j, "kind", path);
  if (!kind.is_string()) fail(path + ".kind", "expected a string");
  p.kind = predicate_from(kind.get<std::string>(), path + ".kind");

  const bool direct = p.kind == PredicateKind::volume;
  const bool local = p.kind == PredicateKind::max_displacement || p.kind == PredicateKind::max_temperature;
  p.category = direct ? PropertyCategory::direct : PropertyCategory::material_dependent;
  p.scope = local ? PropertyScope::local : PropertyScope::global;

  if (j.contains("category")) {
    const std::string c = j["category"].is_string() ? j["category"].get<std::string>() : "";
    if (c != "direct" && c != "material_dependent") fail(path + ".category", "expected \"direct\" or \"material_dependent\"");
    if ((c == "direct") != direct) {
      throw Error(ErrorCode::category_mismatch, "annotation: " + path + ": property kind \"" +
                                                    kind.get<std::string>() + "\" is not " + c);
    }
  }
  if (j.contains("scope")) {
    const std::string s = j["scope"].is_string() ? j["scope"].get<std::string>() : "";
    if (s != "global" && s != "local") fail(path + ".scope", "expected \"global\" or \"local\"");
    if ((s == "local") != local) fail(path + ".scope", "property kind \"" + kind.get<std::string>() + "\" is not " + s);
  }

  const std::string op = j.contains("op") && j["op"].is_string() ? j["op"].get<std::string>() : "<=";
  if (op == "<=") {
    p.op = Comparison::at_most;
  } else if (op == ">=") {
    p.op = Comparison::at_least;
  } else {
    fail(path + ".op", "expected \"<=\" or \">=\"");
  }
  if (p.op == Comparison::at_least && p.kind != PredicateKind::volume && p.kind != PredicateKind::mass) {
    fail(path + ".op", "only volume and mass properties accept \">=\"");
  }
  p.bound = number(field_of(j, "bound", path), path + ".bound");
  if (!(p.bound > 0.0)) fail(path + ".bound", "bound must be > 0");

  if (j.contains("vertices")) {
    if (!local) fail(path + ".vertices", "global properties carry no vertex tags");
    const auto& v = j["vertices"];
    if (v.is_string()) {
      if (!set_names.count(v.get<std::string>())) fail(path + ".vertices", "unknown vertex set \"" + v.get<std::string>() + "\"");
      p.vertex_set = v.get<std::string>();
    } else {
      p.vertex_ids = id_list(v, path + ".vertices");
      if (p.vertex_ids->empty()) fail(path + ".vertices", "local property needs a non-empty tag set");
    }
  } else if (local) {
    fail(path, "local property needs a \"vertices\" tag set");
  }
  return p;
}

void check_units(const ordered_json& units) {
  static const std::pair<const char*, const char*> kUnits[] = {
      {"length", "mm"},           {"force", "N"},   {"stress", "MPa"},
      {"conductivity", "W/(mm*K)"}, {"density", "kg/mm^3"}, {"temperature", "K"},
      {"heat", "W"}};
  if (!units.is_object()) fail("units", "expected an object");
  for (const auto& [key, value] : units.items()) {
    bool known = false;
    for (const auto& [k, v] : kUnits) {
      if (key == k) {
        known = true;
        if (value != v) fail("units." + key, std::string("must be \"") + v + "\"");
      }
    }
    if (!known) fail("units." + key, "unknown unit field");
  }
}

}  // namespace

SemanticLayer parse_semantic_layer(std::string_view text) {
  const ordered_json doc = parse_json(text, "annotation");
  if (!doc.is_object()) fail("$", "document must be an object");
  for (const auto& [key, value] : doc.items()) {
    static const std::set<std::string> kSections{"units", "vertex_sets", "vertex_annotations",
                                                  "element_annotations", "global_properties",
                                                  "field_regularity"};
    if (!kSections.count(key)) fail(key, "unknown section");
  }
  if (doc.contains("units")) check_units(doc["units"]);

  SemanticLayer layer;
  std::set<std::string> set_names;
  if (doc.contains("vertex_sets")) {
    const auto& sets = doc["vertex_sets"];
    if (!sets.is_object()) fail("vertex_sets", "expected an object");
    for (const auto& [name, def] : sets.items()) {
      const std::string path = "vertex_sets." + name;
      if (is_id(name) || name.empty()) fail(path, "set names must not be numeric");
      VertexSet s;
      s.name = name;
      if (def.contains("ids") == def.contains("plane")) fail(path, "expected exactly one of \"ids\" or \"plane\"");
      if (def.contains("ids")) {
        s.ids = id_list(def["ids"], path + ".ids");
        if (s.ids->empty()) fail(path + ".ids", "set is empty");
      } else {
        const auto& pl = def["plane"];
        PlaneSelector sel;
        sel.axis = axis_from(field_of(pl, "axis", path + ".plane"), path + ".plane.axis");
        sel.value = number(field_of(pl, "value", path + ".plane"), path + ".plane.value");
        if (pl.contains("tol")) sel.tol = number(pl["tol"], path + ".plane.tol");
        if (!(sel.tol >= 0.0)) fail(path + ".plane.tol", "must be >= 0");
        s.plane = sel;
      }
      set_names.insert(name);
      layer.vertex_sets.push_back(std::move(s));
    }
  }

  if (doc.contains("vertex_annotations")) {
    const auto& va = doc["vertex_annotations"];
    if (!va.is_object()) fail("vertex_annotations", "expected an object");
    for (const auto& [target, body] : va.items()) {
      const std::string path = "vertex_annotations." + target;
      const bool is_set = !is_id(target);
      if (is_set && !set_names.count(target)) fail(path, "unknown vertex set \"" + target + "\"");
      if (!is_set) parse_id(target, path);
      if (!body.is_object()) fail(path, "expected an object");
      VertexAnnotationEntry entry;
      entry.target = is_set ? target : std::to_string(parse_id(target, path));
      for (const auto& [key, value] : body.items()) {
        const std::string p = path + "." + key;
        if (key == "displacement") {
          entry.annotation.displacement = parse_displacement(value, p);
        } else if (key == "force") {
          entry.annotation.force = parse_force(value, p, is_set);
        } else if (key == "temperature") {
          entry.annotation.temperature = parse_temperature(value, p);
        } else if (key == "heat") {
          entry.annotation.heat = number(value, p);
        } else {
          fail(p, "unknown vertex annotation field");
        }
      }
      layer.vertex_annotations.push_back(std::move(entry));
    }
  }

  const auto& ea = field_of(doc, "element_annotations", "$");
  if (!ea.is_object()) fail("element_annotations", "expected an object");
  const ParameterRanges def = parse_ranges(field_of(ea, "default", "element_annotations"),
                                           "element_annotations.default");
  if (!def.young || !def.poisson || !def.conductivity || !def.density) {
    fail("element_annotations.default", "must give young, poisson, conductivity and density ranges");
  }
  layer.element_annotations.defaults = {*def.young, *def.poisson, *def.conductivity, *def.density};
  for (const auto& [key, value] : ea.items()) {
    if (key == "default") continue;
    const std::string path = "element_annotations." + key;
    const int id = parse_id(key, path);
    ParameterRanges r = parse_ranges(value, path);
    if (layer.element_annotations.overrides.count(id)) fail(path, "duplicate element id");
    layer.element_annotations.overrides[id] = r;
  }

  std::set<std::string> property_names;
  if (doc.contains("global_properties")) {
    const auto& props = doc["global_properties"];
    if (!props.is_array()) fail("global_properties", "expected an array");
    for (std::size_t i = 0; i < props.size(); ++i) {
      const std::string path = "global_properties[" + std::to_string(i) + "]";
      PropertySpec p = parse_property(props[i], path, set_names);
      if (!property_names.insert(p.name).second) fail(path + ".name", "duplicate property name \"" + p.name + "\"");
      layer.global_properties.push_back(std::move(p));
    }
  }

  if (doc.contains("field_regularity")) {
    const auto& fr = doc["field_regularity"];
    FieldRegularity reg;
    reg.gamma = number(field_of(fr, "gamma", "field_regularity"), "field_regularity.gamma");
    if (!(reg.gamma >= 0.0)) fail("field_regularity.gamma", "must be >= 0");
    const auto& param = field_of(fr, "parameter", "field_regularity");
    if (!param.is_string()) fail("field_regularity.parameter", "expected a parameter name");
    try {
      reg.parameter = parameter_from_string(param.get<std::string>());
    } catch (const Error&) {
      fail("field_regularity.parameter", "unknown material parameter");
    }
    layer.field_regularity = reg;
  }
  return layer;
}

std::string serialize_semantic_layer(const SemanticLayer& layer) {
  ordered_json doc;
  doc["units"] = {{"length", "mm"},          {"force", "N"},           {"stress", "MPa"},
                  {"conductivity", "W/(mm*K)"}, {"density", "kg/mm^3"}, {"temperature", "K"},
                  {"heat", "W"}};
  ordered_json sets = ordered_json::object();
  for (const VertexSet& s : layer.vertex_sets) {
    if (s.ids) {
      sets[s.name] = {{"ids", *s.ids}};
    } else if (s.plane) {
      const char* axes[] = {"x", "y", "z"};
      sets[s.name] = {{"plane", {{"axis", axes[s.plane->axis]}, {"value", s.plane->value}, {"tol", s.plane->tol}}}};
    }
  }
  doc["vertex_sets"] = sets;

  ordered_json va = ordered_json::object();
  for (const auto& entry : layer.vertex_annotations) {
    ordered_json body = ordered_json::object();
    const VertexAnnotation& a = entry.annotation;
    if (a.displacement) {
      switch (a.displacement->kind) {
        case DisplacementKind::unconstrained: body["displacement"] = "unconstrained"; break;
        case DisplacementKind::fixed:
          body["displacement"] = a.displacement->value.isZero(0.0)
                                     ? ordered_json("fixed")
                                     : ordered_json{{"fixed", vec_json(a.displacement->value)}};
          break;
        case DisplacementKind::bounded: body["displacement"] = box_json(a.displacement->box); break;
      }
    }
    if (a.force) {
      switch (a.force->kind) {
        case ForceKind::free: body["force"] = "free"; break;
        case ForceKind::given:
          body["force"] = a.force->box.min == a.force->box.max ? vec_json(a.force->box.min)
                                                               : box_json(a.force->box);
          break;
        case ForceKind::distributed:
          body["force"] = {{"total", vec_json(a.force->total)},
                           {"split", a.force->split == LoadSplit::equal ? "equal" : "area"}};
          break;
      }
    }
    if (a.temperature) {
      switch (a.temperature->kind) {
        case TemperatureKind::unconstrained: body["temperature"] = "unconstrained"; break;
        case TemperatureKind::fixed: body["temperature"] = {{"fixed", a.temperature->value}}; break;
        case TemperatureKind::bounded:
          body["temperature"] = {{"min", bound_json(a.temperature->range.min)},
                                 {"max", bound_json(a.temperature->range.max)}};
          break;
      }
    }
    if (a.heat) body["heat"] = *a.heat;
    va[entry.target] = body;
  }
  doc["vertex_annotations"] = va;

  ordered_json ea = ordered_json::object();
  const ElementRanges& d = layer.element_annotations.defaults;
  ea["default"] = ranges_json({d.young, d.poisson, d.conductivity, d.density});
  for (const auto& [id, r] : layer.element_annotations.overrides) ea[std::to_string(id)] = ranges_json(r);
  doc["element_annotations"] = ea;

  ordered_json props = ordered_json::array();
  for (const PropertySpec& p : layer.global_properties) {
    ordered_json j;
    j["name"] = p.name;
    j["category"] = p.category == PropertyCategory::direct ? "direct" : "material_dependent";
    j["scope"] = p.scope == PropertyScope::global ? "global" : "local";
    j["kind"] = std::string(to_string(p.kind));
    j["op"] = p.op == Comparison::at_most ? "<=" : ">=";
    j["bound"] = p.bound;
    if (p.vertex_set) j["vertices"] = *p.vertex_set;
    if (p.vertex_ids) j["vertices"] = *p.vertex_ids;
    props.push_back(j);
  }
  doc["global_properties"] = props;

  if (layer.field_regularity) {
    doc["field_regularity"] = {{"gamma", layer.field_regularity->gamma},
                               {"parameter", std::string(to_string(layer.field_regularity->parameter))}};
  }
  return doc.dump(2) + "\n";
}

std::string serialize_material_field(const MaterialField& field) {
  ordered_json elements = ordered_json::array();
  for (int e = 0; e < field.size(); ++e) {
    const MaterialParams& m = field.values[e];
    ordered_json j;
    j["young"] = m.young;
    j["poisson"] = m.poisson;
    j["conductivity"] = m.conductivity;
    j["density"] = m.density;
    j["provenance"] = std::string(to_string(
        e < static_cast<int>(field.provenance.size()) ? field.provenance[e] : Provenance::commanded));
    elements.push_back(j);
  }
  ordered_json doc;
  doc["elements"] = elements;
  return doc.dump(1) + "\n";
}

MaterialField parse_material_field(std::string_view text) {
  const ordered_json doc = parse_json(text, "material field");
  auto bad = [](const std::string& m) { throw Error(ErrorCode::parse_error, "material field: " + m); };
  if (!doc.is_object() || !doc.contains("elements") || !doc["elements"].is_array()) bad("missing \"elements\" array");
  MaterialField field;
  for (std::size_t e = 0; e < doc["elements"].size(); ++e) {
    const auto& j = doc["elements"][e];
    const std::string path = "elements[" + std::to_string(e) + "]";
    MaterialParams m;
    for (Parameter p : {Parameter::young, Parameter::poisson, Parameter::conductivity, Parameter::density}) {
      const std::string key(to_string(p));
      if (!j.contains(key) || !j[key].is_number()) bad(path + "." + key + ": expected a number");
      m.set(p, j[key].get<double>());
    }
    Provenance prov = Provenance::commanded;
    if (j.contains("provenance")) {
      const std::string s = j["provenance"].is_string() ? j["provenance"].get<std::string>() : "";
      if (s == "commanded") prov = Provenance::commanded;
      else if (s == "achieved") prov = Provenance::achieved;
      else if (s == "estimated") prov = Provenance::estimated;
      else bad(path + ".provenance: unknown tag");
    }
    field.values.push_back(m);
    field.provenance.push_back(prov);
  }
  return field;
}

}  // namespace semprint
