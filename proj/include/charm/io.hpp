#pragma once

#include <string>

#include "charm/types.hpp"

namespace charm {

// Shared hairstyle JSON document:
//   { "cards": [ { "points": [ [x, y, z, w, t], ... ] }, ... ] }
std::string hairstyle_to_json(const Hairstyle& style);
Hairstyle hairstyle_from_json(const std::string& text);

Hairstyle load_hairstyle(const std::string& path);
void save_hairstyle(const Hairstyle& style, const std::string& path);

// ASCII OBJ, triangles only, 1-based indices. One object per card named
// "card_<index>" when card_sizes is known.
std::string mesh_to_obj(const HairMesh& mesh);
HairMesh mesh_from_obj(const std::string& text);

HairMesh load_obj(const std::string& path);
void save_obj(const HairMesh& mesh, const std::string& path);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& content);

}  // namespace charm
