#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include <json.hpp>

#include "semprint/mesh.hpp"

namespace semprint {

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view text);

/// Parses a JSON document, turning syntax errors into Error{parse_error} that
/// name the line and column.
nlohmann::ordered_json parse_json(std::string_view text, std::string_view what);

// Mesh file: {"units": {"length": "mm"}, "vertices": [[x,y,z],...], "tets": [[i,j,k,l],...]}
nlohmann::ordered_json mesh_to_json(const VolumetricMesh& mesh);
VolumetricMesh mesh_from_json(const nlohmann::ordered_json& doc);
std::string serialize_mesh(const VolumetricMesh& mesh);
VolumetricMesh parse_mesh(std::string_view text);

}  // namespace semprint
