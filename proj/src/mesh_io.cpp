#include <fstream>
#include <sstream>

#include "semprint/error.hpp"
#include "semprint/io.hpp"

namespace semprint {

using nlohmann::ordered_json;

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io_error, "cannot open " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::io_error, "cannot write " + path.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw Error(ErrorCode::io_error, "write failed for " + path.string());
}

ordered_json parse_json(std::string_view text, std::string_view what) {
  try {
    return ordered_json::parse(text.begin(), text.end());
  } catch (const nlohmann::json::parse_error& e) {
    // Recover line/column from the byte offset nlohmann reports.
    std::size_t line = 1, column = 1;
    for (std::size_t i = 0; i + 1 < e.byte && i < text.size(); ++i) {
      if (text[i] == '\n') {
        ++line;
        column = 1;
      } else {
        ++column;
      }
    }
    throw Error(ErrorCode::parse_error, std::string(what) + ": syntax error at line " +
                                            std::to_string(line) + ", column " +
                                            std::to_string(column));
  }
}

ordered_json mesh_to_json(const VolumetricMesh& mesh) {
  ordered_json doc;
  doc["units"] = {{"length", "mm"}};
  ordered_json vertices = ordered_json::array();
  for (const Vec3& p : mesh.vertices) vertices.push_back({p.x(), p.y(), p.z()});
  ordered_json tets = ordered_json::array();
  for (const Tet& t : mesh.tets) tets.push_back({t[0], t[1], t[2], t[3]});
  doc["vertices"] = std::move(vertices);
  doc["tets"] = std::move(tets);
  return doc;
}

VolumetricMesh mesh_from_json(const ordered_json& doc) {
  auto fail = [](const std::string& msg) { throw Error(ErrorCode::parse_error, "mesh: " + msg); };
  if (!doc.is_object()) fail("document must be an object");
  if (doc.contains("units")) {
    const auto& units = doc["units"];
    if (!units.is_object()) fail("\"units\" must be an object");
    if (units.contains("length") && units["length"] != "mm") fail("length unit must be \"mm\"");
  }
  if (!doc.contains("vertices") || !doc["vertices"].is_array()) fail("missing \"vertices\" array");
  if (!doc.contains("tets") || !doc["tets"].is_array()) fail("missing \"tets\" array");

  VolumetricMesh mesh;
  const auto& vertices = doc["vertices"];
  mesh.vertices.reserve(vertices.size());
  for (std::size_t i = 0; i < vertices.size(); ++i) {
    const auto& v = vertices[i];
    if (!v.is_array() || v.size() != 3) fail("vertex " + std::to_string(i) + " must be [x,y,z]");
    Vec3 p;
    for (int a = 0; a < 3; ++a) {
      if (!v[a].is_number()) fail("vertex " + std::to_string(i) + " has a non-numeric coordinate");
      p[a] = v[a].get<double>();
    }
    mesh.vertices.push_back(p);
  }
  const auto& tets = doc["tets"];
  mesh.tets.reserve(tets.size());
  for (std::size_t e = 0; e < tets.size(); ++e) {
    const auto& t = tets[e];
    if (!t.is_array() || t.size() != 4) fail("tet " + std::to_string(e) + " must list 4 vertex ids");
    Tet tet{};
    for (int a = 0; a < 4; ++a) {
      if (!t[a].is_number_integer()) fail("tet " + std::to_string(e) + " has a non-integer vertex id");
      const auto id = t[a].get<long long>();
      if (id < 0 || id >= static_cast<long long>(mesh.vertices.size())) {
        fail("tet " + std::to_string(e) + " references out-of-range vertex " + std::to_string(id));
      }
      tet[a] = static_cast<int>(id);
    }
    mesh.tets.push_back(tet);
  }
  return mesh;
}

std::string serialize_mesh(const VolumetricMesh& mesh) { return mesh_to_json(mesh).dump(1) + "\n"; }

VolumetricMesh parse_mesh(std::string_view text) { return mesh_from_json(parse_json(text, "mesh")); }

}  // namespace semprint
