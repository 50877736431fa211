#include <gtest/gtest.h>

#include <numeric>
#include <random>

#include "fixtures.hpp"
#include "semprint/error.hpp"

namespace semprint {
namespace {

using testing::ordered_json;

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::io_error;
}

ordered_json column_json() { return ordered_json::parse(testing::column_annotation(2.0, 1e5, 2e5, 100.0, 1e-2)); }

TEST(Annotation, RoundTripIsExact) {
  auto j = column_json();
  j["field_regularity"] = {{"gamma", 5e3}, {"parameter", "young"}};
  j["global_properties"].push_back({{"name", "light"}, {"kind", "mass"}, {"bound", 1.0}});
  j["global_properties"].push_back({{"name", "big"}, {"kind", "volume"}, {"op", ">="}, {"bound", 0.5}});
  j["element_annotations"]["3"] = {{"young", {1.2e5, 1.3e5}}};
  const SemanticLayer layer = parse_semantic_layer(j.dump());
  const SemanticLayer again = parse_semantic_layer(serialize_semantic_layer(layer));
  EXPECT_EQ(again, layer);
  EXPECT_EQ(serialize_semantic_layer(again), serialize_semantic_layer(layer));
}

TEST(Annotation, ErrorsCarryCodes) {
  auto j = column_json();
  j["element_annotations"]["default"]["young"] = {2e5, 1e5};
  EXPECT_EQ(code_of([&] { parse_semantic_layer(j.dump()); }), ErrorCode::range_order);

  j = column_json();
  j["global_properties"][0]["kind"] = "stress";
  EXPECT_EQ(code_of([&] { parse_semantic_layer(j.dump()); }), ErrorCode::unknown_property);

  j = column_json();
  j["global_properties"][0]["category"] = "direct";
  EXPECT_EQ(code_of([&] { parse_semantic_layer(j.dump()); }), ErrorCode::category_mismatch);

  EXPECT_EQ(code_of([&] { parse_semantic_layer("{not json"); }), ErrorCode::parse_error);
}

TEST(Binding, DanglingAndConflictingReferences) {
  const auto mesh = generate_box_mesh(1, 1, 2, Vec3(1, 1, 2));
  auto j = column_json();
  j["vertex_annotations"]["999"] = {{"force", {{"min", {0, 0, 0}}, {"max", {0, 0, 1}}}}};
  EXPECT_EQ(code_of([&] { testing::bind_spec(mesh, j.dump()); }), ErrorCode::dangling_reference);

  j = column_json();
  j["vertex_annotations"]["0"] = {{"displacement", "fixed"}};
  EXPECT_EQ(code_of([&] { testing::bind_spec(mesh, j.dump()); }), ErrorCode::conflicting_annotation);
}

TEST(Binding, UnderConstrainedElasticity) {
  const auto mesh = generate_box_mesh(1, 1, 2, Vec3(1, 1, 2));
  auto j = column_json();
  j["vertex_annotations"].erase("base");
  EXPECT_EQ(code_of([&] { testing::bind_spec(mesh, j.dump()); }), ErrorCode::under_constrained);
}

TEST(Binding, DistributedLoadSumsToTotal) {
  const auto mesh = generate_shaft_mesh(1.0, 2.0, 10, 2);
  const auto spec = testing::bind_spec(mesh, testing::column_annotation(2.0, 1e5, 1e5, 100.0, 1.0));
  Vec3 total = Vec3::Zero();
  for (const auto& v : spec->vertices) total += v.load();
  EXPECT_NEAR(total.z(), 100.0, 1e-10);
  EXPECT_NEAR(total.head<2>().norm(), 0.0, 1e-12);
}

TEST(Properties, DirectPropertiesNeedNoField) {
  const auto mesh = generate_box_mesh(1, 1, 2, Vec3(1, 1, 2));
  auto j = column_json();
  j["global_properties"] = ordered_json::array({{{"name", "vol"}, {"kind", "volume"}, {"bound", 1.5}}});
  const auto spec = testing::bind_spec(mesh, j.dump());
  const auto v = check_direct_property(*spec, spec->property("vol").spec);
  EXPECT_FALSE(v.pass);
  EXPECT_NEAR(v.measured, 2.0, 1e-12);
  EXPECT_NEAR(v.margin, -0.5, 1e-12);
}

TEST(Properties, NominalFieldAndAdmissibility) {
  const auto mesh = generate_box_mesh(1, 1, 2, Vec3(1, 1, 2));
  const auto spec = testing::bind_spec(mesh, column_json().dump());
  MaterialField f = nominal_field(*spec);
  EXPECT_DOUBLE_EQ(f.values[0].young, 1.5e5);
  EXPECT_TRUE(is_admissible(*spec, f));
  f.values[4].young = 3e5;
  const auto bad = range_violations(*spec, f);
  ASSERT_EQ(bad.size(), 1u);
  EXPECT_EQ(bad[0].element, 4);
  EXPECT_EQ(bad[0].parameter, Parameter::young);
}

TEST(Properties, VerdictsInvariantUnderRelabeling) {
  const auto mesh = generate_box_mesh(2, 2, 3, Vec3(1, 1, 3));
  auto j = ordered_json::parse(testing::column_annotation(3.0, 1e5, 2e5, 100.0, 1e-3));
  j["vertex_sets"]["probe"] = {{"ids", {5, 17, 30}}};
  j["global_properties"].push_back(
      {{"name", "probe"}, {"kind", "max_displacement"}, {"bound", 1e-3}, {"vertices", "probe"}});
  const SemanticLayer layer = parse_semantic_layer(j.dump());
  const auto spec = bind_to_mesh(layer, mesh);
  const auto base = check_all_properties(spec, nominal_field(spec));

  std::mt19937_64 rng(11);
  std::vector<int> perm(mesh.vertex_count());
  std::iota(perm.begin(), perm.end(), 0);
  for (int trial = 0; trial < 3; ++trial) {
    std::shuffle(perm.begin(), perm.end(), rng);
    const auto spec2 = bind_to_mesh(relabel_vertices(layer, perm), relabel_vertices(mesh, perm));
    const auto other = check_all_properties(spec2, nominal_field(spec2));
    ASSERT_EQ(other.size(), base.size());
    for (std::size_t i = 0; i < base.size(); ++i) {
      EXPECT_EQ(other[i].pass, base[i].pass);
      EXPECT_NEAR(other[i].measured, base[i].measured, 1e-9 * std::abs(base[i].measured));
    }
  }
}

TEST(MaterialFieldIo, RoundTrip) {
  MaterialField f(3, {1e5, 0.3, 1.0, 4e-6}, Provenance::commanded);
  f.values[1].young = 1.234567890123e5;
  f.provenance[2] = Provenance::estimated;
  EXPECT_EQ(parse_material_field(serialize_material_field(f)), f);
}

}  // namespace
}  // namespace semprint
